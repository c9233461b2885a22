#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <json.hpp>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "robarch/attacks.hpp"
#include "robarch/data.hpp"
#include "robarch/interp.hpp"
#include "robarch/ladder.hpp"
#include "robarch/losses.hpp"
#include "robarch/patch.hpp"
#include "robarch/sweep.hpp"
#include "robarch/train.hpp"
#include "test_util.hpp"

using namespace robarch;
using robarch::testing::cyclic_labels;
using robarch::testing::linear_model;
using robarch::testing::toy_batch;
using robarch::testing::toy_config;
using robarch::testing::uniform_tensor;
namespace fs = std::filesystem;

namespace {

// Collects failures for one criterion.
class Checks {
 public:
  void expect(bool ok, const std::string& what) {
    ++total_;
    if (!ok && failures_.size() < 5) failures_.push_back(what);
    failed_ += !ok;
  }
  bool ok() const { return failed_ == 0; }
  std::string summary() const {
    std::ostringstream s;
    s << total_ - failed_ << "/" << total_ << " checks";
    for (const auto& f : failures_) s << "; " << f;
    return s.str();
  }
  void note(const std::string& n) { notes_.push_back(n); }
  const std::vector<std::string>& notes() const { return notes_; }

 private:
  std::size_t total_ = 0, failed_ = 0;
  std::vector<std::string> failures_;
  std::vector<std::string> notes_;
};

std::string fmt(const char* f, double a, double b = 0.0) {
  char buf[160];
  std::snprintf(buf, sizeof buf, f, a, b);
  return buf;
}

double max_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

double off_mask_change(const Tensor& x, const Tensor& adv, std::size_t i, const Tensor& mask) {
  const std::size_t rs = x.row_size(), plane = x.dim(2) * x.dim(3);
  double m = 0.0;
  for (std::size_t q = 0; q < rs; ++q) {
    if (mask[q % plane] == 0.0) m = std::max(m, std::abs(adv[i * rs + q] - x[i * rs + q]));
  }
  return m;
}

Model random_linear(InputSize in, std::size_t k, std::uint64_t seed) {
  const std::size_t d = in.channels * in.height * in.width;
  return linear_model(in, k, uniform_tensor({k * d}, seed, -1, 1).storage(),
                      uniform_tensor({k}, seed + 1, -0.1, 0.1).storage());
}

// ------------------------------------------------------------------ 1
void geometry(Checks& c) {
  for (Alignment a : {Alignment::aligned, Alignment::non_aligned}) {
    const PatchGrid grid{224, 224, 16, a};
    const auto places = enumerate_placements(grid);
    const std::size_t expected = a == Alignment::aligned ? 196 : 169;
    c.expect(places.size() == expected, std::string(alignment_name(a)) + " placement count " + std::to_string(places.size()));
    std::vector<int> cover(224 * 224, 0);
    for (const auto& p : places) {
      for (std::size_t r = p.top; r < p.top + 16; ++r)
        for (std::size_t col = p.left; col < p.left + 16; ++col) ++cover[r * 224 + col];
      if (a == Alignment::non_aligned) {
        // Overlap with each token cell.
        std::vector<std::size_t> overlaps;
        for (std::size_t tr = 0; tr < 14; ++tr) {
          for (std::size_t tc = 0; tc < 14; ++tc) {
            const std::size_t h = std::max<long>(0, std::min<long>(long(p.top + 16), long(tr * 16 + 16)) -
                                                        std::max<long>(long(p.top), long(tr * 16)));
            const std::size_t w = std::max<long>(0, std::min<long>(long(p.left + 16), long(tc * 16 + 16)) -
                                                        std::max<long>(long(p.left), long(tc * 16)));
            if (h * w > 0) overlaps.push_back(h * 100 + w);
          }
        }
        c.expect(overlaps == std::vector<std::size_t>(4, 808), "non-aligned placement does not quarter four tokens");
      }
    }
    if (a == Alignment::aligned) {
      c.expect(std::all_of(cover.begin(), cover.end(), [](int v) { return v == 1; }), "aligned placements do not tile");
    }
  }
}

// ------------------------------------------------------------------ 2
std::vector<double> l1_unboxed(std::vector<double> v, double eps) {
  // Sort-based simplex projection of |v|, signs restored.
  double total = 0.0;
  for (double x : v) total += std::abs(x);
  if (total <= eps) return v;
  std::vector<double> u;
  for (double x : v) u.push_back(std::abs(x));
  std::sort(u.rbegin(), u.rend());
  double cum = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    const double t = (cum - eps) / static_cast<double>(j + 1);
    if (u[j] - t > 0) theta = t;
  }
  for (double& x : v) x = std::copysign(std::max(std::abs(x) - theta, 0.0), x);
  return v;
}

void projections(Checks& c) {
  std::ifstream in(fs::path(ROBARCH_TEST_DATA_DIR) / "oracles" / "projection_oracles.json");
  c.expect(in.good(), "oracle file missing");
  if (!in.good()) return;
  const auto inst = nlohmann::json::parse(in).at("instances");
  std::size_t l1 = 0;
  double worst = 0.0;
  for (const auto& it : inst) {
    auto point = it.at("point").get<std::vector<double>>();
    const auto center = it.at("center").get<std::vector<double>>();
    const auto expected = it.at("projection").get<std::vector<double>>();
    const double eps = it.at("epsilon").get<double>();
    const bool box = it.at("box").get<bool>();
    if (it.at("p").get<int>() == 1) {
      project_l1(point, center, eps, box);
      l1 += point.size() >= 5 && point.size() <= 20;
    } else {
      project_l2(point, center, eps, box);
    }
    worst = std::max(worst, max_diff(point, expected));
  }
  c.expect(l1 >= 100, "fewer than 100 l1 instances of dimension 5-20");
  c.expect(worst < 1e-6, fmt("oracle max deviation %.3g", worst));
  c.note(fmt("%.0f oracle instances, max deviation %.2g", double(inst.size()), worst));

  for (std::uint64_t s = 0; s < 50; ++s) {
    const std::size_t d = 5 + s % 16;
    const Tensor ct = uniform_tensor({d}, s);
    const Tensor xt = uniform_tensor({d}, s + 100, -0.5, 1.5);
    const std::vector<double> center = ct.storage(), x0 = xt.storage();
    const double eps = 0.05 + 0.01 * static_cast<double>(s);
    // linf: coordinate-wise clip to the ball, then to the box.
    std::vector<double> x = x0, closed(d);
    project_linf(x, center, eps);
    for (std::size_t i = 0; i < d; ++i) closed[i] = std::clamp(std::clamp(x0[i], center[i] - eps, center[i] + eps), 0.0, 1.0);
    c.expect(max_diff(x, closed) < 1e-12, "linf closed form");
    // l2 without the box: radial scaling.
    x = x0;
    project_l2(x, center, eps, false);
    double n = 0.0;
    for (std::size_t i = 0; i < d; ++i) n += (x0[i] - center[i]) * (x0[i] - center[i]);
    n = std::sqrt(n);
    for (std::size_t i = 0; i < d; ++i) closed[i] = center[i] + (x0[i] - center[i]) * std::min(1.0, eps / n);
    c.expect(max_diff(x, closed) < 1e-12, "l2 closed form");
    // l1 without the box against the sort-based simplex rule.
    x = x0;
    project_l1(x, center, 3 * eps, false);
    std::vector<double> v(d);
    for (std::size_t i = 0; i < d; ++i) v[i] = x0[i] - center[i];
    v = l1_unboxed(v, 3 * eps);
    for (std::size_t i = 0; i < d; ++i) closed[i] = center[i] + v[i];
    c.expect(max_diff(x, closed) < 1e-10, "l1 unboxed closed form");
    // Idempotence for every kind.
    for (ThreatKind k : {ThreatKind::linf, ThreatKind::l2, ThreatKind::l1}) {
      const ThreatModel t{k, k == ThreatKind::l1 ? 3 * eps : eps};
      std::vector<double> once = x0;
      project(once, center, t);
      std::vector<double> twice = once;
      project(twice, center, t);
      c.expect(max_diff(once, twice) < 1e-12, std::string("idempotence ") + threat_name(k));
    }
  }
  const Tensor delta = uniform_tensor({3, 6, 6}, 5, -1, 1);
  const Tensor once = project_l0_pixel(delta, 7);
  c.expect(project_l0_pixel(once, 7) == once, "idempotence l0");
}

// ------------------------------------------------------------------ 3
void apgd_contract(Checks& c) {
  std::size_t instances = 0;
  for (std::uint64_t s = 0; s < 8; ++s) {
    const Model m = build_model(toy_config(s % 2 ? "mlp" : "resnet_ladder"), 100 + s);
    const Tensor x = uniform_tensor({3, 3, 16, 16}, 200 + s);
    const auto y = cyclic_labels(3, 3);
    for (ThreatKind k : {ThreatKind::linf, ThreatKind::l2, ThreatKind::l1}) {
      APGDConfig cfg;
      cfg.iterations = 25;
      cfg.record_trace = true;
      cfg.loss = s % 3 == 0 ? LossKind::margin : LossKind::cross_entropy;
      cfg.seed = s;
      const ThreatModel t{k, k == ThreatKind::linf ? 4.0 / 255 : (k == ThreatKind::l2 ? 0.3 : 2.0)};
      const AttackOutcome o = apgd(m, x, y, t, cfg);
      for (std::size_t i = 0; i < o.size(); ++i) {
        ++instances;
        bool mono = o.loss_trace[i].size() == 25;
        for (std::size_t j = 1; j < o.loss_trace[i].size(); ++j) mono = mono && o.loss_trace[i][j] >= o.loss_trace[i][j - 1];
        c.expect(mono, "best-loss trace decreased");
      }
    }
  }
  c.expect(instances >= 20, "too few instances");
  for (std::uint64_t s = 0; s < 10; ++s) {
    const InputSize in{3, 4, 4};
    const Model m = random_linear(in, 4, 300 + s);
    const Tensor x = uniform_tensor({5, 3, 4, 4}, 400 + s);
    const auto y = cyclic_labels(5, 4);
    APGDConfig cfg;
    cfg.iterations = 1;
    cfg.momentum = 0.0;
    cfg.initial_step_fraction = 0.5;
    const double eps = 8.0 / 255.0;
    c.expect(apgd(m, x, y, ThreatModel{ThreatKind::linf, eps}, cfg).adversarial == fgsm_batch(m, x, y, eps, FgsmOptions{}),
             "1-iteration APGD differs from FGSM");
  }
  for (std::uint64_t s = 0; s < 10; ++s) {
    const InputSize in{1, 3, 3};
    const Model m = random_linear(in, 2, 500 + s);
    const auto& w = m.parameters()[0]->value;
    const auto& b = m.parameters()[1]->value;
    Tensor x = uniform_tensor({1, 1, 3, 3}, 600 + s, 0.3, 0.7);
    x[0] = 0.01;
    const std::vector<int> y{0};
    const double eps = 0.1;
    double opt = b[1] - b[0];
    for (std::size_t q = 0; q < 9; ++q) {
      const double dw = w[9 + q] - w[q];
      opt += dw * std::clamp(x[q] + (dw > 0 ? eps : -eps), 0.0, 1.0);
    }
    APGDConfig cfg;
    cfg.loss = LossKind::margin;
    const AttackOutcome o = apgd(m, x, y, ThreatModel{ThreatKind::linf, eps}, cfg);
    c.expect(std::abs(o.best_loss[0] - opt) < 1e-6, fmt("sign-corner gap %.3g", std::abs(o.best_loss[0] - opt)));
  }
}

// ------------------------------------------------------------------ 4
double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, da = 0.0, db = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    da += a[i] * a[i];
    db += b[i] * b[i];
  }
  return std::sqrt(num) / std::max({std::sqrt(da), std::sqrt(db), 1e-12});
}

void gradients(Checks& c) {
  for (const char* fam : {"resnet_ladder", "patchify_stem", "gelu", "vit", "xcit", "convnext"}) {
    Model m = build_model(toy_config(fam), 11);
    Rng jitter = make_rng(12, 5);
    for (auto* p : m.parameters()) {
      for (auto& v : p->value.storage()) v += 0.05 * standard_normal(jitter);
    }
    const Tensor x = toy_batch(fam, 2, 13);
    const auto y = cyclic_labels(2, 3);
    double worst = 0.0;
    for (LossKind kind : {LossKind::cross_entropy, LossKind::margin}) {
      const Tensor g = gradient_wrt_input(m, x, y, kind);
      Rng rng = make_rng(14, 0);
      std::vector<double> analytic, numeric;
      const double h = 1e-5;
      for (int t = 0; t < 48; ++t) {
        const std::size_t q = uniform_index(rng, x.size());
        Tensor up = x, dn = x;
        up[q] += h;
        dn[q] -= h;
        double su = 0.0, sd = 0.0;
        for (double v : loss_value(predict_logits(m, up), y, kind)) su += v;
        for (double v : loss_value(predict_logits(m, dn), y, kind)) sd += v;
        numeric.push_back((su - sd) / (2 * h));
        analytic.push_back(g[q]);
      }
      worst = std::max(worst, relative_error(analytic, numeric));
    }
    c.expect(worst < 1e-4, std::string(fam) + fmt(" relative error %.3g", worst));
    c.note(std::string(fam) + fmt(" %.2g", worst));
  }
}

// ------------------------------------------------------------------ 5
void ladder(Checks& c) {
  const auto rows = list_ladder({3, 32, 32}, 3, 8);
  c.expect(rows.size() == 16, "ladder rows " + std::to_string(rows.size()));
  if (rows.size() != 16) return;
  c.expect(rows.front().name == "ResNet-50" && rows.back().name == "ConvNeXt-T", "ladder endpoints");
  const Model m = build_model(rows.back().config, 0);
  auto layers = [&](const Model& model, const std::string& label) {
    for (const auto& b : describe_blocks(model)) {
      if (b.label == label) return b.layers;
    }
    return std::vector<std::string>{};
  };
  std::size_t blocks = 0, downs = 0;
  for (const auto& b : describe_blocks(m)) {
    blocks += b.label == "convnext_block";
    downs += b.label == "downsample";
  }
  c.expect(m.config().stage_blocks == std::array<std::size_t, 4>{3, 3, 9, 3}, "stage depths");
  c.expect(blocks == 18 && downs == 3, "block counts");
  c.expect(layers(m, "stem") == std::vector<std::string>{"conv4x4/patchify", "norm"}, "stem");
  c.expect(layers(m, "convnext_block") ==
               std::vector<std::string>{"dwconv7x7", "norm", "pw_expand", "gelu", "pw_contract", "layer_scale", "add"},
           "block layers");
  c.expect(layers(m, "downsample") == std::vector<std::string>{"norm", "conv2x2/patchify"}, "downsample");
  c.expect(layers(m, "head") == std::vector<std::string>{"avgpool", "norm", "linear"}, "head");
  const double base = static_cast<double>(build_model(rows[0].config, 0).parameter_count());
  const double dw = static_cast<double>(build_model(rows[3].config, 0).parameter_count());
  c.expect(std::abs(dw / base - 1.0) <= 0.2, fmt("depthwise_width parameter ratio %.3f", dw / base));
  c.note(fmt("depthwise_width/baseline parameters %.3f", dw / base));
}

// ------------------------------------------------------------------ 6
void masks(Checks& c) {
  c.expect(mask_pixel_count(frame_mask(224, 224, 2)) == 1776, "frame mask pixel count");
  for (const char* fam : {"resnet_ladder", "vit"}) {
    const Model m = build_model(toy_config(fam), 41);
    const Tensor x = uniform_tensor({3, 3, 16, 16}, 42);
    const auto y = cyclic_labels(3, 3);
    GreedyPatchConfig gc;
    gc.phase1_iterations = 3;
    gc.phase2_iterations = 6;
    double worst = 0.0;
    for (Alignment a : {Alignment::aligned, Alignment::non_aligned}) {
      const PatchGrid grid{16, 16, 4, a};
      const GreedyPatchResult r = greedy_patch_attack(m, x, y, grid, gc);
      for (std::size_t i = 0; i < 3; ++i) {
        worst = std::max(worst, off_mask_change(x, r.outcome.adversarial, i,
                                                placement_mask(r.placements[r.best_placement[i]], 16, 16)));
      }
    }
    FrameAttackConfig fc;
    fc.iterations = 8;
    fc.restarts = 2;
    const AttackOutcome f = frame_attack(m, x, y, fc);
    for (std::size_t i = 0; i < 3; ++i) worst = std::max(worst, off_mask_change(x, f.adversarial, i, frame_mask(16, 16, 2)));
    c.expect(worst == 0.0, std::string(fam) + fmt(" off-mask change %.3g", worst));
  }
}

// ------------------------------------------------------------------ 7
void end_to_end(Checks& c) {
  const DatasetSpec spec;  // synthetic shapes, 3x32x32, 3 classes
  const Splits splits = load_splits(spec);
  ModelConfig base = resnet_baseline_config({3, 32, 32}, 3, 8);
  base.stage_blocks = {1, 1, 1, 1};
  const ModelConfig variant =
      apply_ladder_step(apply_ladder_step(base, LadderStep::patchify_stem), LadderStep::gelu);
  const fs::path dir = fs::temp_directory_path() / "robarch_acceptance_e2e";
  fs::remove_all(dir);

  std::vector<std::string> names;
  std::vector<Model> models;
  for (const auto& [arch, cfg] : {std::pair{std::string("baseline"), base}, std::pair{std::string("patchify+gelu"), variant}}) {
    for (bool at : {false, true}) {
      TrainConfig tc = train_preset(at ? "ladder-short" : "plain-short");
      tc.epochs = 10;
      tc.seed = 1;
      const std::string name = arch + (at ? " FGSM-AT" : " plain");
      try {
        const auto progress = [&](const EpochRecord& e) {
          std::printf("    %s epoch %zu: loss %.3f, holdout clean %.1f fgsm %.1f pgd2 %.1f\n", name.c_str(), e.epoch,
                      e.train_loss, e.holdout_clean, e.holdout_fgsm, e.holdout_pgd2);
          std::fflush(stdout);
        };
        TrainResult r = adversarial_train(cfg, splits, tc, {}, progress, 3);
        r.model.load_state(r.states[r.selected]);
        c.note(name + fmt(": selected epoch %.0f, holdout clean %.1f", double(r.selected + 1),
                          r.history[r.selected].holdout_clean));
        models.push_back(std::move(r.model));
        names.push_back(name);
      } catch (const CatastrophicOverfitting& e) {
        c.expect(false, name + ": " + e.what());
        return;
      }
    }
  }
  const Dataset eval = splits.test.subset(evaluation_indices(splits.test.size(), 100, 0));
  const InputSize in{3, 32, 32};
  std::vector<ThreatSpec> threats{desk_threat(ThreatKind::linf, in), desk_threat(ThreatKind::l2, in),
                                  desk_threat(ThreatKind::patch, in), desk_threat(ThreatKind::frame, in)};
  // Reduced two-phase patch budget so the run fits a single CPU core.
  threats[2].budget.phase1_iterations = 2;
  threats[2].budget.keep_fraction = 0.05;
  threats[2].budget.phase2_iterations = 20;
  std::vector<NamedModel> named;
  for (std::size_t k = 0; k < models.size(); ++k) named.push_back({names[k], &models[k], model_content_hash(models[k])});
  const SweepOptions opt{threats, {"linf", "l2", "patch", "frame"}, 0, dir / "cells"};
  std::printf("    sweeping %zu models on %zu points\n", named.size(), eval.size());
  std::fflush(stdout);
  const RobustnessReport rep = run_sweep(named, eval, opt);
  const std::string table = format_report(rep, ReportFormat::table);
  std::istringstream lines(table);
  for (std::string line; std::getline(lines, line);) c.note(line);

  std::vector<double> linf(rep.models.size());
  for (std::size_t k = 0; k < rep.models.size(); ++k) {
    const ModelReport& m = rep.models[k];
    double lowest = m.clean_accuracy;
    for (const auto& cell : m.cells) {
      c.expect(cell.robust_accuracy <= m.clean_accuracy, m.name + " " + cell.threat + " robust above clean");
      lowest = std::min(lowest, cell.robust_accuracy);
      if (cell.threat == "linf") linf[k] = cell.robust_accuracy;
    }
    c.expect(m.worst_case.has_value() && *m.worst_case <= lowest, m.name + " worst-case above the minimum");
  }
  // Order: baseline plain, baseline AT, variant plain, variant AT.
  for (std::size_t a = 0; a < 2; ++a) {
    const double gain = linf[2 * a + 1] - linf[2 * a];
    c.expect(gain >= 20.0, names[2 * a + 1] + fmt(" linf gain %.1f points", gain));
  }
  fs::remove_all(dir);
}

// ------------------------------------------------------------------ 8
void report_fidelity(Checks& c) {
  RobustnessReport r;
  r.threats = desk_threats({3, 224, 224});
  r.threats[4].name = "patches";
  r.threats[5].name = "frames";
  r.points = 1000;
  const std::vector<std::pair<std::string, std::vector<double>>> rows = {
      {"ResNet-50", {68.9, 36.7, 19.2, 3.9, 6.6, 16.3, 24.3}},
      {"ResNet-50 modified", {69.9, 44.0, 34.3, 11.2, 14.5, 17.1, 20.8}},
      {"ConvNeXt-T", {70.7, 46.2, 30.6, 9.2, 16.4, 21.9, 18.7}}};
  for (const auto& [name, v] : rows) {
    ModelReport m;
    m.name = name;
    m.clean_accuracy = v[0];
    for (std::size_t t = 0; t < 6; ++t) {
      CellResult cell;
      cell.threat = r.threats[t].name;
      cell.robust_accuracy = v[t + 1];
      m.cells.push_back(cell);
    }
    r.models.push_back(m);
  }
  const std::string table = format_report(r, ReportFormat::table);
  const std::string row = "70.7 | 46.2 | 30.6 | 9.2 | 16.4 | 21.9 | 18.7";
  c.expect(table.find("ConvNeXt-T         | " + row + "\n") != std::string::npos, "ConvNeXt-T row not found");
}

// ------------------------------------------------------------------ 9
void interpretability(Checks& c) {
  double worst_row = 0.0;
  for (const char* fam : {"vit", "xcit"}) {
    const Model m = build_model(toy_config(fam), 3);
    const Tensor x = uniform_tensor({2, 3, 16, 16}, 4);
    nn::Captures cap;
    const Tensor with = m.forward(x, &cap);
    c.expect(with == m.forward(x), std::string(fam) + " capture changed the logits");
    const std::size_t cols = cap.attention.dim(3), rows = cap.attention.size() / cols;
    for (std::size_t r = 0; r < rows; ++r) {
      double s = 0.0;
      for (std::size_t q = 0; q < cols; ++q) s += cap.attention[r * cols + q];
      worst_row = std::max(worst_row, std::abs(s - 1.0));
    }
  }
  c.expect(worst_row < 1e-5, fmt("attention row sum error %.3g", worst_row));
  for (const char* fam : {"resnet_ladder", "convnext", "mlp"}) {
    const Model m = build_model(toy_config(fam), 6);
    const Tensor x = toy_batch(fam, 2, 7);
    nn::Captures cap;
    c.expect(m.forward(x, &cap) == m.forward(x), std::string(fam) + " capture changed the logits");
  }
  const Tensor keys = uniform_tensor({1, 2, 17, 3}, 9, -1, 1);
  const auto base = feature_norm_maps(keys, 0, 4, 4, 1);
  for (double s : {0.5, 3.0}) {
    const auto scaled = feature_norm_maps(keys * s, 0, 4, 4, 1);
    double worst = 0.0;
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < 16; ++i) worst = std::max(worst, std::abs(scaled[h][i] - s * base[h][i]));
    c.expect(worst < 1e-12, fmt("norm map homogeneity error %.3g", worst));
  }
  const Tensor a = uniform_tensor({3, 8, 8}, 10), b = uniform_tensor({3, 8, 8}, 11);
  const PerturbationHeatmap ab = perturbation_heatmap(a, b), ba = perturbation_heatmap(b, a);
  bool anti = ab.scale == ba.scale;
  for (std::size_t i = 0; i < 64; ++i) {
    anti = anti && ab.map[i] == -ba.map[i];
    anti = anti && std::abs(ab.image[i] - ba.image[128 + i]) < 1e-12 && std::abs(ab.image[64 + i] - ba.image[64 + i]) < 1e-12;
  }
  c.expect(anti, "perturbation heatmap is not antisymmetric");
}

// ------------------------------------------------------------------ 10
void sparse_oracle(Checks& c) {
  std::size_t hits = 0;
  const std::size_t seeds = 40;
  for (std::uint64_t s = 0; s < seeds; ++s) {
    const InputSize in{3, 4, 4};
    const Model m = linear_model(in, 3, uniform_tensor({3 * 48}, 10 + s, -1, 1).storage(), {0.5, 0.0, 0.0});
    const Tensor x = uniform_tensor({1, 3, 4, 4}, 70 + s);
    const std::vector<int> y{0};
    double best = -1e300;
    for (std::size_t p = 0; p < 16; ++p) {
      for (unsigned color = 0; color < 8; ++color) {
        Tensor z = x;
        for (std::size_t ch = 0; ch < 3; ++ch) z[ch * 16 + p] = (color >> ch) & 1u ? 1.0 : 0.0;
        best = std::max(best, loss_value(predict_logits(m, z), y, LossKind::margin)[0]);
      }
    }
    SparseSearchConfig cfg;
    cfg.query_budget = 2000;
    cfg.seed = s;
    cfg.stop_on_success = false;
    const AttackOutcome o = sparse_random_search(m, x, y, 1, cfg);
    hits += std::abs(o.best_loss[0] - best) < 1e-9 && o.queries[0] <= 2000;
  }
  c.expect(static_cast<double>(hits) >= 0.95 * static_cast<double>(seeds), fmt("%.0f of 40 seeds", double(hits)));
  c.note(fmt("%.0f of 40 seeds reach the exhaustive optimum", double(hits)));
}

struct Criterion {
  int id;
  const char* title;
  double limit_seconds;
  std::function<void(Checks&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  const std::vector<Criterion> criteria = {
      {1, "patch geometry", 1, geometry},
      {2, "projection oracles", 60, projections},
      {3, "APGD contract", 60, apgd_contract},
      {4, "input gradient checks", 300, gradients},
      {5, "ladder integrity", 60, ladder},
      {6, "mask contracts", 60, masks},
      {7, "desk-scale end-to-end", 7200, end_to_end},
      {8, "sweep report fidelity", 1, report_fidelity},
      {9, "interpretability contracts", 60, interpretability},
      {10, "black-box l0 oracle", 300, sparse_oracle},
  };
  std::set<int> only;
  for (int i = 1; i < argc; ++i) only.insert(std::atoi(argv[i]));
  bool all_ok = true;
  for (const auto& cr : criteria) {
    if (!only.empty() && !only.count(cr.id)) continue;
    Checks checks;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      cr.run(checks);
    } catch (const std::exception& e) {
      checks.expect(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    checks.expect(secs < cr.limit_seconds, fmt("runtime %.1f s over the %.0f s limit", secs, cr.limit_seconds));
    for (const auto& n : checks.notes()) std::cout << "    " << n << "\n";
    std::printf("%s criterion %d: %s (%.2f s, %s)\n", checks.ok() ? "PASS" : "FAIL", cr.id, cr.title, secs,
                checks.summary().c_str());
    std::fflush(stdout);
    all_ok = all_ok && checks.ok();
  }
  return all_ok ? 0 : 1;
}
