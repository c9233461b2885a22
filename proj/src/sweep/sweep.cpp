#include <algorithm>
#include <cmath>
#include <numeric>

#include "json_util.hpp"
#include "robarch/checkpoint.hpp"
#include "robarch/manifest.hpp"
#include "robarch/outcome_io.hpp"
#include "robarch/random.hpp"
#include "robarch/sweep.hpp"
#include "robarch/tensor_io.hpp"

namespace robarch {

namespace fs = std::filesystem;

namespace {

constexpr double kRefDim = 3.0 * 224.0 * 224.0;
constexpr double kRefPixels = 224.0 * 224.0;
constexpr double kRefSide = 224.0;

constexpr std::pair<const char*, PatchAlignmentMode> kAlignModes[] = {{"aligned", PatchAlignmentMode::aligned},
                                                                       {"non_aligned", PatchAlignmentMode::non_aligned},
                                                                       {"both", PatchAlignmentMode::both}};

int kind_rank(ThreatKind k) { return static_cast<int>(k); }

// Copies the rows of `sub` (computed on `idx`) into `full`.
void scatter_outcome(AttackOutcome& full, const AttackOutcome& sub, const std::vector<std::size_t>& idx) {
  const std::size_t rs = full.adversarial.row_size();
  for (std::size_t a = 0; a < idx.size(); ++a) {
    const std::size_t i = idx[a];
    std::copy_n(sub.adversarial.data() + a * rs, rs, full.adversarial.data() + i * rs);
    full.success[i] = sub.success[a];
    full.best_loss[i] = sub.best_loss[a];
    full.iterations[i] += sub.iterations[a];
    full.queries[i] += sub.queries[a];
  }
}

AttackOutcome empty_outcome(const Tensor& batch, std::size_t n) {
  AttackOutcome o;
  o.adversarial = batch;
  o.success.assign(n, false);
  o.best_loss.assign(n, 0.0);
  o.iterations.assign(n, 0);
  o.queries.assign(n, 0);
  return o;
}

// Runs `second` on the examples `first` did not break and merges the results.
template <class Second>
AttackOutcome cascade(const Tensor& batch, std::span<const int> labels, AttackOutcome first, Second&& second) {
  std::vector<std::size_t> rest;
  for (std::size_t i = 0; i < first.size(); ++i) {
    if (!first.success[i]) rest.push_back(i);
  }
  if (rest.empty()) return first;
  std::vector<int> y;
  for (std::size_t i : rest) y.push_back(labels[i]);
  const AttackOutcome s = second(batch.gather(rest), y);
  const std::size_t rs = batch.row_size();
  for (std::size_t a = 0; a < rest.size(); ++a) {
    const std::size_t i = rest[a];
    first.iterations[i] += s.iterations[a];
    first.queries[i] += s.queries[a];
    first.best_loss[i] = std::max(first.best_loss[i], s.best_loss[a]);
    if (s.success[a]) {
      first.success[i] = true;
      std::copy_n(s.adversarial.data() + a * rs, rs, first.adversarial.data() + i * rs);
    }
  }
  return first;
}

std::size_t nearest_divisor(std::size_t target, std::size_t h, std::size_t w) {
  std::size_t best = 1;
  for (std::size_t p = 1; p <= std::min(h, w); ++p) {
    if (h % p || w % p) continue;
    const auto dist = [&](std::size_t q) { return q > target ? q - target : target - q; };
    if (dist(p) < dist(best) || (dist(p) == dist(best) && p % 2 == 0)) best = p;
  }
  return best;
}

}  // namespace

ThreatSpec desk_threat(ThreatKind kind, const InputSize& in) {
  const double d = static_cast<double>(in.channels * in.height * in.width);
  const double pixels = static_cast<double>(in.height * in.width);
  ThreatSpec t;
  t.name = threat_name(kind);
  t.threat.kind = kind;
  switch (kind) {
    case ThreatKind::linf:
      t.threat.epsilon = 4.0 / 255.0;
      t.seen = true;
      break;
    case ThreatKind::l2:
      t.threat.epsilon = 2.0 * std::sqrt(d / kRefDim);
      break;
    case ThreatKind::l1:
      t.threat.epsilon = 75.0 * d / kRefDim;
      break;
    case ThreatKind::l0_pixel:
      t.threat.epsilon = std::max(1.0, std::round(100.0 * pixels / kRefPixels));
      break;
    case ThreatKind::patch: {
      const double side = 16.0 * static_cast<double>(std::min(in.height, in.width)) / kRefSide;
      const auto target = std::max<std::size_t>(2, static_cast<std::size_t>(std::lround(side)));
      t.threat.epsilon = static_cast<double>(nearest_divisor(target, in.height, in.width));
      break;
    }
    case ThreatKind::frame:
      t.threat.epsilon = 2.0;
      t.budget.restarts = 5;
      break;
  }
  return t;
}

std::vector<ThreatSpec> desk_threats(const InputSize& in) {
  std::vector<ThreatSpec> v;
  for (ThreatKind k : {ThreatKind::linf, ThreatKind::l2, ThreatKind::l1, ThreatKind::l0_pixel, ThreatKind::patch,
                       ThreatKind::frame}) {
    v.push_back(desk_threat(k, in));
  }
  return v;
}

nlohmann::json to_json(const ThreatSpec& t) {
  const auto& b = t.budget;
  nlohmann::json j = {{"name", t.name},
                      {"kind", threat_name(t.threat.kind)},
                      {"epsilon", t.threat.epsilon},
                      {"seen", t.seen},
                      {"iterations", b.iterations},
                      {"restarts", b.restarts}};
  if (t.threat.kind == ThreatKind::l0_pixel) j["query_budget"] = b.query_budget;
  if (t.threat.kind == ThreatKind::patch) {
    j.erase("epsilon");
    j.erase("iterations");
    j.erase("restarts");
    j["grid"] = {{"token_size", static_cast<std::size_t>(t.threat.epsilon)},
                 {"alignment", detail::enum_name(b.alignment, kAlignModes)}};
    j["phase1_iterations"] = b.phase1_iterations;
    j["phase2_iterations"] = b.phase2_iterations;
    j["keep_fraction"] = b.keep_fraction;
    j["step"] = b.patch_step;
  }
  return j;
}

ThreatSpec threat_spec_from_json(const nlohmann::json& j, const InputSize& in, const std::string& scope) {
  if (!j.is_object()) throw ConfigError(scope + ": expected an object");
  if (!j.contains("kind")) throw ConfigError(scope + ".kind: required; supported kinds: linf, l2, l1, l0, patch, frame");
  const std::string kind = detail::read_field(j, scope, "kind", std::string(), "a threat kind");
  ThreatSpec t = desk_threat(threat_from_name(kind), in);
  auto& b = t.budget;
  const std::string pos = "a positive integer";
  if (t.threat.kind == ThreatKind::patch) {
    detail::reject_unknown_keys(j, scope,
                                {"name", "kind", "seen", "grid", "phase1_iterations", "phase2_iterations",
                                 "keep_fraction", "step"});
    if (!j.contains("grid")) {
      throw ConfigError(scope + ".grid: threat 'patch' requires grid parameters {token_size, alignment}");
    }
    const auto& g = j.at("grid");
    const std::string gs = scope + ".grid";
    detail::reject_unknown_keys(g, gs, {"token_size", "alignment"});
    if (!g.contains("token_size") || !g.contains("alignment")) {
      throw ConfigError(gs + ": requires both token_size and alignment");
    }
    t.threat.epsilon = static_cast<double>(detail::read_field(g, gs, "token_size", std::size_t{0}, pos));
    b.alignment = detail::read_enum(g, gs, "alignment", b.alignment, kAlignModes);
    b.phase1_iterations = detail::read_field(j, scope, "phase1_iterations", b.phase1_iterations, "an integer");
    b.phase2_iterations = detail::read_field(j, scope, "phase2_iterations", b.phase2_iterations, "an integer");
    b.keep_fraction = detail::read_field(j, scope, "keep_fraction", b.keep_fraction, "a number in (0, 1]");
    b.patch_step = detail::read_field(j, scope, "step", b.patch_step, "a positive number");
    if (!(b.keep_fraction > 0.0 && b.keep_fraction <= 1.0)) {
      detail::field_error(scope, "keep_fraction", "a number in (0, 1]", j.at("keep_fraction"));
    }
  } else {
    detail::reject_unknown_keys(j, scope, {"name", "kind", "epsilon", "seen", "iterations", "restarts", "query_budget"});
    t.threat.epsilon = detail::read_field(j, scope, "epsilon", t.threat.epsilon, "a positive number");
    b.iterations = detail::read_field(j, scope, "iterations", b.iterations, "an integer");
    b.restarts = detail::read_field(j, scope, "restarts", b.restarts, pos);
    b.query_budget = detail::read_field(j, scope, "query_budget", b.query_budget, pos);
    if (b.restarts == 0) detail::field_error(scope, "restarts", pos, j.at("restarts"));
  }
  t.name = detail::read_field(j, scope, "name", t.name, "a string");
  t.seen = detail::read_field(j, scope, "seen", t.seen, "a boolean");
  try {
    validate(t.threat, in.height, in.width);
    if (t.threat.kind == ThreatKind::patch) {
      validate(PatchGrid{in.height, in.width, static_cast<std::size_t>(t.threat.epsilon), Alignment::aligned});
    }
  } catch (const ConfigError& e) {
    throw ConfigError(scope + ": " + e.what());
  }
  return t;
}

std::vector<ThreatSpec> ordered_threats(std::vector<ThreatSpec> threats) {
  std::stable_sort(threats.begin(), threats.end(), [](const ThreatSpec& a, const ThreatSpec& b) {
    if (a.seen != b.seen) return a.seen;
    if (a.seen) return false;
    return kind_rank(a.threat.kind) < kind_rank(b.threat.kind);
  });
  return threats;
}

LossKind second_lp_loss(std::size_t num_classes) { return num_classes >= 4 ? LossKind::dlr : LossKind::margin; }

AttackOutcome run_threat(const Model& model, const Tensor& batch, std::span<const int> labels,
                         const std::vector<bool>& clean_correct, const ThreatSpec& spec, std::uint64_t seed) {
  const std::size_t n = labels.size();
  if (batch.rank() != 4 || batch.dim(0) != n || clean_correct.size() != n) {
    throw ShapeError("run_threat: batch, labels and clean mask disagree");
  }
  validate(spec.threat, batch.dim(2), batch.dim(3));
  AttackOutcome full = empty_outcome(batch, n);
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) {
    if (clean_correct[i]) {
      idx.push_back(i);
    } else {
      full.success[i] = true;
    }
  }
  if (idx.empty()) return full;
  const Tensor x = batch.gather(idx);
  std::vector<int> y;
  for (std::size_t i : idx) y.push_back(labels[i]);
  const auto& b = spec.budget;
  const std::size_t k_classes = model.config().num_classes;
  AttackOutcome sub;
  switch (spec.threat.kind) {
    case ThreatKind::linf:
    case ThreatKind::l2:
    case ThreatKind::l1: {
      APGDConfig c;
      c.iterations = b.iterations;
      c.restarts = b.restarts;
      c.seed = seed;
      c.loss = LossKind::cross_entropy;
      c.stop_on_success = true;
      AttackOutcome first = apgd(model, x, y, spec.threat, c);
      c.loss = second_lp_loss(k_classes);
      sub = cascade(x, y, std::move(first), [&](const Tensor& xs, std::span<const int> ys) {
        return apgd(model, xs, ys, spec.threat, c);
      });
      break;
    }
    case ThreatKind::l0_pixel: {
      const auto k = static_cast<long long>(spec.threat.epsilon);
      Pgd0Config pc;
      pc.iterations = b.iterations;
      AttackOutcome first = pgd0(model, x, y, k, pc);
      SparseSearchConfig sc;
      sc.query_budget = b.query_budget;
      sc.seed = seed;
      sub = cascade(x, y, std::move(first), [&](const Tensor& xs, std::span<const int> ys) {
        return sparse_random_search(model, xs, ys, k, sc);
      });
      break;
    }
    case ThreatKind::patch: {
      GreedyPatchConfig gc;
      gc.phase1_iterations = b.phase1_iterations;
      gc.phase2_iterations = b.phase2_iterations;
      gc.keep_fraction = b.keep_fraction;
      gc.step = b.patch_step;
      gc.seed = seed;
      const auto p = static_cast<std::size_t>(spec.threat.epsilon);
      auto run = [&](Alignment a) {
        return greedy_patch_attack(model, x, y, PatchGrid{x.dim(2), x.dim(3), p, a}, gc).outcome;
      };
      if (b.alignment == PatchAlignmentMode::aligned) {
        sub = run(Alignment::aligned);
      } else if (b.alignment == PatchAlignmentMode::non_aligned) {
        sub = run(Alignment::non_aligned);
      } else {
        sub = combine_outcomes(run(Alignment::aligned), run(Alignment::non_aligned));
      }
      break;
    }
    case ThreatKind::frame: {
      FrameAttackConfig fc;
      fc.width = static_cast<std::size_t>(spec.threat.epsilon);
      fc.iterations = b.iterations;
      fc.restarts = b.restarts;
      fc.seed = seed;
      sub = frame_attack(model, x, y, fc);
      break;
    }
  }
  scatter_outcome(full, sub, idx);
  return full;
}

double robust_accuracy(const std::vector<bool>& clean_correct, const std::vector<bool>& success) {
  if (clean_correct.empty()) throw ConfigError("robust_accuracy: empty evaluation set");
  if (clean_correct.size() != success.size()) throw ShapeError("robust_accuracy: column sizes differ");
  std::size_t r = 0;
  for (std::size_t i = 0; i < success.size(); ++i) r += clean_correct[i] && !success[i];
  return 100.0 * static_cast<double>(r) / static_cast<double>(success.size());
}

double worst_case(const std::vector<bool>& clean_correct, const std::vector<const std::vector<bool>*>& successes) {
  if (successes.empty()) throw ConfigError("worst_case: empty threat subset");
  std::vector<bool> any(clean_correct.size(), false);
  for (const auto* s : successes) {
    if (s->size() != any.size()) throw ShapeError("worst_case: column sizes differ");
    for (std::size_t i = 0; i < any.size(); ++i) any[i] = any[i] || (*s)[i];
  }
  return robust_accuracy(clean_correct, any);
}

std::string model_content_hash(const Model& model) {
  std::string acc = to_json(model.config()).dump();
  for (const auto& [name, t] : model.state()) acc += name + ":" + sha256_tensor(t) + ";";
  return sha256_hex(acc);
}

RobustnessReport run_sweep(std::span<const NamedModel> models, const Dataset& eval, const SweepOptions& opt) {
  if (eval.size() == 0) throw ConfigError("sweep: empty evaluation set");
  RobustnessReport rep;
  rep.threats = ordered_threats(opt.threats);
  rep.worst_case_subset = opt.worst_case_subset;
  rep.points = eval.size();
  for (const auto& name : rep.worst_case_subset) {
    const bool known = std::any_of(rep.threats.begin(), rep.threats.end(), [&](const auto& t) { return t.name == name; });
    if (!known) throw ConfigError("sweep.worst_case: '" + name + "' is not a configured threat");
  }
  std::string eval_hash = sha256_tensor(eval.images);
  for (int y : eval.labels) eval_hash += std::to_string(y) + ",";
  eval_hash = sha256_hex(eval_hash);

  for (const auto& nm : models) {
    ModelReport mr;
    mr.name = nm.name;
    const Model& model = *nm.model;
    const auto wrong = misclassified(predict_logits(model, eval.images), eval.labels);
    for (bool w : wrong) mr.clean_correct.push_back(!w);
    mr.clean_accuracy = robust_accuracy(mr.clean_correct, std::vector<bool>(eval.size(), false));
    const std::string mhash = nm.hash.empty() ? model_content_hash(model) : nm.hash;
    for (const auto& spec : rep.threats) {
      CellResult cell;
      cell.threat = spec.name;
      const nlohmann::json key_src = {{"model", mhash}, {"eval", eval_hash}, {"threat", to_json(spec)}, {"seed", opt.seed}};
      const std::string key = sha256_hex(key_src.dump()).substr(0, 32);
      const fs::path dir = opt.cache_dir.empty() ? fs::path() : opt.cache_dir / key;
      if (!dir.empty() && fs::exists(dir / "records.json") && fs::exists(dir / "adversarial.rbt")) {
        const auto rec = nlohmann::json::parse(read_text_file(dir / "records.json"));
        for (const auto& r : rec.at("records")) cell.success.push_back(r.at("success").get<bool>());
        cell.mean_best_loss = rec.value("mean_best_loss", 0.0);
        cell.cached = true;
      } else {
        const AttackOutcome o = run_threat(model, eval.images, eval.labels, mr.clean_correct, spec, opt.seed);
        cell.success = o.success;
        double sum = 0.0;
        std::size_t cnt = 0;
        for (std::size_t i = 0; i < o.size(); ++i) {
          if (mr.clean_correct[i]) {
            sum += o.best_loss[i];
            ++cnt;
          }
        }
        cell.mean_best_loss = cnt ? sum / static_cast<double>(cnt) : 0.0;
        if (!dir.empty()) {
          nlohmann::json rec = outcome_records(o, eval.images, eval.labels, mr.clean_correct, spec.threat);
          rec["mean_best_loss"] = cell.mean_best_loss;
          rec["threat_spec"] = to_json(spec);
          rec["model"] = nm.name;
          save_outcome(dir, o, rec);
        }
      }
      if (cell.success.size() != eval.size()) throw IoError("sweep: cached cell " + key + " has the wrong size");
      cell.robust_accuracy = robust_accuracy(mr.clean_correct, cell.success);
      cell.artifact = dir.string();
      mr.cells.push_back(std::move(cell));
    }
    if (!rep.worst_case_subset.empty()) {
      std::vector<const std::vector<bool>*> cols;
      for (std::size_t t = 0; t < rep.threats.size(); ++t) {
        if (std::find(rep.worst_case_subset.begin(), rep.worst_case_subset.end(), rep.threats[t].name) !=
            rep.worst_case_subset.end()) {
          cols.push_back(&mr.cells[t].success);
        }
      }
      mr.worst_case = worst_case(mr.clean_correct, cols);
    }
    rep.models.push_back(std::move(mr));
  }
  return rep;
}

void validate(const SweepConfig& c) {
  if (c.points == 0) throw ConfigError("sweep.points: expected a positive integer");
  if (c.models.empty()) throw ConfigError("sweep.models: expected at least one model");
  validate(c.dataset);
  std::vector<std::string> names;
  for (const auto& t : c.threats) {
    if (std::find(names.begin(), names.end(), t.name) != names.end()) {
      throw ConfigError("sweep.threats: duplicate threat name '" + t.name + "'");
    }
    names.push_back(t.name);
  }
}

RobustnessReport run_sweep(const SweepConfig& config, const fs::path& cache_dir) {
  validate(config);
  const Splits splits = load_splits(config.dataset);
  const Dataset eval =
      splits.test.subset(evaluation_indices(splits.test.size(), config.points, config.seed));
  if (eval.size() == 0) throw ConfigError("sweep: the test split is empty");
  SweepOptions opt{config.threats, config.worst_case_subset, config.seed, cache_dir};
  const InputSize in{config.dataset.channels, config.dataset.height, config.dataset.width};

  std::vector<Model> loaded;
  std::vector<std::pair<std::size_t, std::string>> errors;  // model index -> message
  std::vector<std::size_t> which;
  std::vector<std::string> hashes;
  loaded.reserve(config.models.size());
  for (std::size_t m = 0; m < config.models.size(); ++m) {
    try {
      Model model = load_checkpoint(config.models[m].checkpoint);
      if (!(model.config().input_size == in)) throw CheckpointError("input size does not match the dataset");
      if (model.config().num_classes != config.dataset.num_classes) {
        throw CheckpointError("class count does not match the dataset");
      }
      hashes.push_back(sha256_file(config.models[m].checkpoint));
      loaded.push_back(std::move(model));
      which.push_back(m);
    } catch (const std::exception& e) {
      errors.emplace_back(m, e.what());
    }
  }
  std::vector<NamedModel> named;
  for (std::size_t k = 0; k < loaded.size(); ++k) named.push_back({config.models[which[k]].name, &loaded[k], hashes[k]});
  RobustnessReport partial = run_sweep(named, eval, opt);

  RobustnessReport rep;
  rep.threats = partial.threats;
  rep.worst_case_subset = partial.worst_case_subset;
  rep.points = partial.points;
  std::size_t next = 0;
  for (std::size_t m = 0; m < config.models.size(); ++m) {
    auto err = std::find_if(errors.begin(), errors.end(), [&](const auto& e) { return e.first == m; });
    if (err != errors.end()) {
      ModelReport mr;
      mr.name = config.models[m].name;
      mr.error = err->second;
      rep.models.push_back(std::move(mr));
    } else {
      rep.models.push_back(std::move(partial.models[next++]));
    }
  }
  return rep;
}

}  // namespace robarch
