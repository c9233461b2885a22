#include "commands.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <iostream>

#include "robarch/checkpoint.hpp"
#include "robarch/config_io.hpp"
#include "robarch/image_io.hpp"
#include "robarch/interp.hpp"
#include "robarch/ladder.hpp"
#include "robarch/manifest.hpp"
#include "robarch/outcome_io.hpp"
#include "robarch/patch.hpp"
#include "robarch/sweep.hpp"
#include "robarch/tensor_io.hpp"
#include "robarch/train.hpp"

namespace robarch::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json config_file(const GlobalOptions& g) { return g.config ? load_json_file(*g.config) : json::object(); }

// Hashes every file under `dir` (except the manifest) and writes manifest.json.
void finish_run(const fs::path& dir, const std::string& command, const json& config, std::uint64_t seed) {
  RunManifest m;
  m.command = command;
  m.config = config;
  m.seed = seed;
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().filename() != "manifest.json") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  for (const auto& f : files) m.add(dir, f);
  write_manifest(dir, m);
  std::cout << "run directory: " << dir.string() << "\n";
}

void write_json(const fs::path& path, const json& j) { write_text_file(path, j.dump(2) + "\n"); }

Dataset evaluation_set(const DatasetSpec& spec, std::size_t points, std::uint64_t seed) {
  const Splits s = load_splits(spec);
  if (s.test.size() == 0) throw ConfigError("dataset.splits.test: the test split is empty");
  return s.test.subset(evaluation_indices(s.test.size(), points, seed));
}

void check_compatible(const ModelConfig& m, const DatasetSpec& d) {
  if (m.input_size != InputSize{d.channels, d.height, d.width}) {
    throw ConfigError("checkpoint: model input " + std::to_string(m.input_size.channels) + "x" +
                      std::to_string(m.input_size.height) + "x" + std::to_string(m.input_size.width) +
                      " does not match the dataset geometry");
  }
  if (m.num_classes != d.num_classes) {
    throw ConfigError("checkpoint: model has " + std::to_string(m.num_classes) + " classes, dataset has " +
                      std::to_string(d.num_classes));
  }
}

std::string format_epoch(const EpochRecord& r) {
  char buf[200];
  std::snprintf(buf, sizeof buf, "epoch %3zu  lr %.5f  loss %.4f  train %.1f  clean %.1f  fgsm %.1f  pgd2 %.1f",
                r.epoch, r.learning_rate, r.train_loss, r.train_accuracy, r.holdout_clean, r.holdout_fgsm,
                r.holdout_pgd2);
  return buf;
}

struct TrainOutput {
  TrainHistory history;
  std::size_t selected = 0;
};

TrainOutput train_into(const TrainRun& run, const fs::path& dir) {
  const Splits splits = load_splits(run.dataset);
  auto on_epoch = [](const EpochRecord& r) { std::cout << format_epoch(r) << "\n" << std::flush; };
  try {
    TrainResult res = adversarial_train(run.model, splits, run.train, dir, on_epoch, run.model_seed);
    res.model.load_state(res.states[res.selected]);
    save_checkpoint(dir / "model.ckpt", res.model, {{"epoch", res.selected + 1}});
    write_json(dir / "history.json", {{"history", to_json(res.history)}, {"selected_epoch", res.selected + 1}});
    return {res.history, res.selected};
  } catch (const CatastrophicOverfitting& e) {
    write_json(dir / "history.json", {{"history", to_json(e.history)}, {"aborted_epoch", e.epoch}});
    throw;
  }
}

}  // namespace

int cmd_train(const GlobalOptions& g, const TrainOptions& o) {
  const json file = config_file(g);
  TrainRun run = train_run_from_json(file, g.preset);
  if (g.seed) run.train.seed = *g.seed;
  if (o.epochs) run.train.epochs = *o.epochs;
  if (o.init_from) run.train.init_from = *o.init_from;
  validate(run.train);
  const json resolved = to_json(run);
  const fs::path dir = create_run_directory(g.out, resolved);
  write_json(dir / "config.json", resolved);
  std::cout << "training " << family_name(run.model.family) << " (" << build_model(run.model, run.model_seed).parameter_count()
            << " parameters) for " << run.train.epochs << " epochs\n";
  try {
    const TrainOutput out = train_into(run, dir);
    std::cout << "selected epoch " << out.selected + 1 << "\n";
  } catch (const CatastrophicOverfitting&) {
    finish_run(dir, "train", resolved, run.train.seed);
    throw;
  }
  finish_run(dir, "train", resolved, run.train.seed);
  return kOk;
}

int cmd_attack(const GlobalOptions& g, const AttackOptions& o) {
  json j = config_file(g);
  if (o.checkpoint) j["checkpoint"] = o.checkpoint->string();
  if (o.threat && (!j.contains("threat") || j["threat"].value("kind", "") != *o.threat)) {
    j["threat"] = {{"kind", *o.threat}};
  }
  if (!j.contains("threat")) throw ConfigError("threat: required (use --threat or a threat object in --config)");
  json& t = j["threat"];
  if (o.epsilon) t["epsilon"] = *o.epsilon;
  if (o.iterations) t["iterations"] = *o.iterations;
  if (o.restarts) t["restarts"] = *o.restarts;
  if (o.token_size || o.alignment) {
    json grid = t.value("grid", json::object());
    if (o.token_size) grid["token_size"] = *o.token_size;
    if (o.alignment) grid["alignment"] = *o.alignment;
    if (!grid.contains("alignment")) grid["alignment"] = "both";
    t["grid"] = grid;
  }
  if (g.points) j["points"] = *g.points;
  if (g.seed) j["seed"] = *g.seed;
  if (!j.contains("checkpoint")) throw ConfigError("checkpoint: required (use --checkpoint)");
  const AttackRun run = attack_run_from_json(j);
  const Model model = load_checkpoint(run.checkpoint);
  check_compatible(model.config(), run.dataset);
  const Dataset eval = evaluation_set(run.dataset, run.points, run.seed);

  const json resolved = to_json(run);
  const fs::path dir = create_run_directory(g.out, resolved);
  write_json(dir / "config.json", resolved);
  const auto wrong = misclassified(predict_logits(model, eval.images), eval.labels);
  std::vector<bool> clean(wrong.size());
  for (std::size_t i = 0; i < wrong.size(); ++i) clean[i] = !wrong[i];
  const AttackOutcome out = run_threat(model, eval.images, eval.labels, clean, run.threat, run.seed);
  Tensor mask;
  const Tensor* mp = nullptr;
  if (run.threat.threat.kind == ThreatKind::frame) {
    mask = frame_mask(eval.images.dim(2), eval.images.dim(3), static_cast<std::size_t>(run.threat.threat.epsilon));
    mp = &mask;
  }
  json records = outcome_records(out, eval.images, eval.labels, clean, run.threat.threat, mp);
  records["threat_spec"] = to_json(run.threat);
  save_outcome(dir, out, records);
  json summary = records.at("summary");
  summary["threat"] = to_json(run.threat);
  summary["checkpoint_sha256"] = sha256_file(run.checkpoint);
  summary["adversarial_sha256"] = sha256_tensor(out.adversarial);
  write_json(dir / "summary.json", summary);
  std::printf("%s: clean %.1f  robust %.1f  (n = %zu)\n", run.threat.name.c_str(),
              summary.at("clean_accuracy").get<double>(), summary.at("robust_accuracy").get<double>(), eval.size());
  finish_run(dir, "attack", resolved, run.seed);
  return kOk;
}

int cmd_sweep(const GlobalOptions& g, const SweepOptionsCli& o) {
  if (!g.config) throw ConfigError("sweep: --config is required");
  json j = config_file(g);
  if (g.points) j["points"] = *g.points;
  if (g.seed) j["seed"] = *g.seed;
  const SweepConfig config = sweep_config_from_json(j);
  const ReportFormat format = report_format_from_name(o.format);
  const fs::path cache = o.cache ? *o.cache : g.out / "cells";
  const RobustnessReport rep = run_sweep(config, cache);

  const json resolved = to_json(config);
  const fs::path dir = create_run_directory(g.out, resolved);
  write_json(dir / "config.json", resolved);
  write_text_file(dir / "report.txt", format_report(rep, ReportFormat::table));
  write_text_file(dir / "report.csv", format_report(rep, ReportFormat::csv));
  write_text_file(dir / "report.json", format_report(rep, ReportFormat::records));
  std::size_t cached = 0, cells = 0;
  for (const auto& m : rep.models) {
    for (const auto& c : m.cells) {
      cached += c.cached;
      ++cells;
    }
  }
  std::cout << format_report(rep, format);
  std::cout << "cells: " << cells << " (" << cached << " reused from " << cache.string() << ")\n";
  finish_run(dir, "sweep", resolved, config.seed);
  for (const auto& m : rep.models) {
    if (!m.error.empty()) return kRuntime;
  }
  return kOk;
}

int cmd_visualize(const GlobalOptions& g, const VisualizeOptions& o) {
  const std::vector<std::string> kinds{"attention", "keynorm", "querynorm", "lossmap", "perturbation"};
  if (std::find(kinds.begin(), kinds.end(), o.kind) == kinds.end()) {
    throw ConfigError("--kind: expected one of attention|keynorm|querynorm|lossmap|perturbation, got '" + o.kind + "'");
  }
  const Model model = load_checkpoint(o.checkpoint);
  const ModelConfig& mc = model.config();
  if ((o.kind == "attention" && mc.family != Family::vit) ||
      ((o.kind == "keynorm" || o.kind == "querynorm") && mc.family != Family::xcit)) {
    throw ConfigError("--kind " + o.kind + " is not available for family " + family_name(mc.family) +
                      (o.kind == "attention" ? " (needs vit)" : " (needs xcit)"));
  }
  if (o.image.has_value() == o.index.has_value()) throw ConfigError("visualize: give exactly one of --image or --index");

  Tensor image;
  int label = -1;
  json source;
  if (o.image) {
    Tensor rgb = resize_and_crop(read_png(*o.image), mc.input_size.height, mc.input_size.width);
    if (mc.input_size.channels == 1) {
      Tensor gray(Shape{1, rgb.dim(1), rgb.dim(2)});
      const std::size_t plane = rgb.dim(1) * rgb.dim(2);
      for (std::size_t p = 0; p < plane; ++p) gray[p] = (rgb[p] + rgb[plane + p] + rgb[2 * plane + p]) / 3.0;
      rgb = gray;
    }
    image = rgb;
    if (o.label) label = *o.label;
    source = {{"image", o.image->string()}};
  } else {
    const json file = config_file(g);
    const DatasetSpec spec = dataset_spec_from_json(file.value("dataset", json::object()));
    check_compatible(mc, spec);
    const Splits s = load_splits(spec);
    if (*o.index >= s.test.size()) throw ConfigError("--index: out of range for the test split");
    image = s.test.images.slice(*o.index, *o.index + 1).reshaped(Shape{mc.input_size.channels, mc.input_size.height,
                                                                       mc.input_size.width});
    label = s.test.labels[*o.index];
    source = {{"dataset", to_json(spec)}, {"index", *o.index}};
  }
  const bool needs_label = o.kind == "lossmap" || o.kind == "perturbation";
  if (needs_label && (label < 0 || static_cast<std::size_t>(label) >= mc.num_classes)) {
    throw ConfigError("--label: required in [0, " + std::to_string(mc.num_classes) + ") for kind " + o.kind);
  }
  const std::uint64_t seed = g.seed.value_or(0);
  json resolved = {{"checkpoint", o.checkpoint.string()}, {"kind", o.kind}, {"source", source},
                   {"label", label},                      {"iterations", o.iterations}, {"seed", seed}};
  if (o.kind == "lossmap") resolved["patch"] = o.patch.value_or(desk_threat(ThreatKind::patch, mc.input_size).threat.epsilon);
  if (o.kind == "perturbation") resolved["threat"] = o.threat;
  const fs::path dir = create_run_directory(g.out, resolved);
  write_json(dir / "config.json", resolved);
  Archive numeric;
  numeric.meta = resolved;

  if (o.kind == "attention" || o.kind == "keynorm" || o.kind == "querynorm") {
    const HeadMapSet maps = o.kind == "attention" ? cls_attention_maps(model, image)
                                                   : xca_feature_norm_maps(model, image, o.kind == "keynorm");
    for (std::size_t h = 0; h < maps.maps.size(); ++h) {
      numeric.add("head_" + std::to_string(h), maps.maps[h]);
      write_png(dir / ("head_" + std::to_string(h) + ".png"),
                render_map(maps.maps[h], mc.input_size.height, mc.input_size.width));
    }
    write_png(dir / "strip.png", render_head_strip(image, maps));
    std::cout << o.kind << ": " << maps.maps.size() << " head maps from block " << maps.block_index << "\n";
  } else if (o.kind == "lossmap") {
    const auto p = resolved["patch"].get<std::size_t>();
    const LossMap a = patch_loss_map(model, image, label, PatchGrid{mc.input_size.height, mc.input_size.width, p,
                                                                    Alignment::aligned}, o.iterations);
    const LossMap b = patch_loss_map(model, image, label, PatchGrid{mc.input_size.height, mc.input_size.width, p,
                                                                    Alignment::non_aligned}, o.iterations);
    const auto [ra, rb] = render_loss_map_pair(a, b);
    numeric.add("aligned", a.values);
    numeric.add("non_aligned", b.values);
    write_png(dir / "lossmap_aligned.png", ra);
    write_png(dir / "lossmap_non_aligned.png", rb);
    Tensor shown = image.dim(0) == 1 ? gray_to_rgb(image.reshaped(Shape{image.dim(1), image.dim(2)})) : image;
    write_png(dir / "lossmap_pair.png", hstack_images({shown, gray_to_rgb(ra), gray_to_rgb(rb)}));
    std::cout << "lossmap: " << a.values.size() << " aligned and " << b.values.size()
              << " non-aligned placements\n";
  } else {
    ThreatSpec spec = desk_threat(threat_from_name(o.threat), mc.input_size);
    spec.budget.iterations = o.iterations;
    const Tensor batch = image.reshaped(Shape{1, image.dim(0), image.dim(1), image.dim(2)});
    const std::vector<int> y{label};
    const AttackOutcome out = run_threat(model, batch, y, {true}, spec, seed);
    const Tensor orig = batch.reshaped(Shape{image.dim(0), image.dim(1), image.dim(2)});
    const Tensor adv = out.adversarial.reshaped(orig.shape());
    const PerturbationHeatmap hm = perturbation_heatmap(orig, adv);
    numeric.add("perturbation", adv - orig);
    numeric.add("heatmap", hm.map);
    write_png(dir / "perturbation.png", hm.image);
    write_png(dir / "adversarial.png", adv);
    const GridDiscontinuity gd = grid_discontinuity(adv - orig, mc.token_size);
    write_json(dir / "perturbation.json", {{"success", static_cast<bool>(out.success[0])},
                                           {"scale", hm.scale},
                                           {"boundary_mean", gd.boundary_mean},
                                           {"interior_mean", gd.interior_mean}});
    std::cout << "perturbation: success " << (out.success[0] ? "yes" : "no") << ", scale " << hm.scale << "\n";
  }
  write_archive(dir / "maps.rbt", numeric);
  finish_run(dir, "visualize", resolved, seed);
  return kOk;
}

int cmd_ladder(const GlobalOptions& g, const LadderOptions& o) {
  const json file = config_file(g);
  const DatasetSpec spec = dataset_spec_from_json(file.value("dataset", json::object()));
  const InputSize in{spec.channels, spec.height, spec.width};
  const auto entries = list_ladder(in, spec.num_classes, o.width);
  json rows = json::array();
  std::size_t base = 0;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const std::size_t params = build_model(entries[i].config, 0).parameter_count();
    if (i == 0) base = params;
    rows.push_back({{"index", i}, {"name", entries[i].name}, {"parameters", params}, {"config", to_json(entries[i].config)}});
    std::printf("%2zu  %-28s %9zu  (%+.1f%%)\n", i, entries[i].name.c_str(), params,
                100.0 * (static_cast<double>(params) / static_cast<double>(base) - 1.0));
  }
  json resolved = {{"dataset", to_json(spec)}, {"width", o.width}, {"train", o.train}};
  TrainConfig tc;
  if (o.train) {
    tc = train_preset(g.preset.value_or("ladder-short"));
    if (file.contains("train")) tc = train_config_from_json(file.at("train"), tc);
    if (g.seed) tc.seed = *g.seed;
    resolved["train_config"] = to_json(tc);
  }
  const fs::path dir = create_run_directory(g.out, resolved);
  write_json(dir / "config.json", resolved);
  if (o.train) {
    for (std::size_t i = 0; i < entries.size(); ++i) {
      char name[16];
      std::snprintf(name, sizeof name, "%02zu_", i);
      std::string slug = name;
      for (char ch : entries[i].name) {
        const bool keep = std::isalnum(static_cast<unsigned char>(ch)) != 0;
        if (keep) slug += ch;
        else if (slug.back() != '_') slug += '_';
      }
      const fs::path sub = dir / slug;
      std::cout << "== " << entries[i].name << "\n";
      TrainRun run{spec, entries[i].config, tc, g.preset, 0};
      try {
        const TrainOutput out = train_into(run, sub);
        rows[i]["selected_epoch"] = out.selected + 1;
        rows[i]["holdout"] = {{"clean", out.history[out.selected].holdout_clean},
                             {"fgsm", out.history[out.selected].holdout_fgsm},
                             {"pgd2", out.history[out.selected].holdout_pgd2}};
      } catch (const CatastrophicOverfitting& e) {
        rows[i]["aborted"] = e.what();
      }
    }
  }
  write_json(dir / "ladder.json", rows);
  finish_run(dir, "ladder", resolved, o.train ? tc.seed : 0);
  return kOk;
}

int cmd_gen_data(const GlobalOptions& g, const GenDataOptions& o) {
  const json file = config_file(g);
  json dj = file.value("dataset", json::object());
  dj["source"] = "synthetic_shapes";
  if (o.num_classes) dj["num_classes"] = *o.num_classes;
  if (o.samples_per_class) dj["samples_per_class"] = *o.samples_per_class;
  if (o.image_size) dj["image_size"] = *o.image_size;
  if (g.seed) dj["seed"] = *g.seed;
  const DatasetSpec spec = dataset_spec_from_json(dj);
  const Dataset data = generate_synthetic_shapes(spec);
  const json resolved = to_json(spec);
  const fs::path dir = create_run_directory(g.out, resolved);
  write_json(dir / "config.json", resolved);
  Archive a;
  a.meta = {{"kind", "dataset"}, {"class_names", data.class_names}};
  a.add("images", data.images);
  Tensor labels(Shape{data.size()});
  for (std::size_t i = 0; i < data.size(); ++i) labels[i] = data.labels[i];
  a.add("labels", labels);
  write_archive(dir / "dataset.rbt", a);
  std::vector<Tensor> samples;
  for (std::size_t k = 0; k < data.num_classes; ++k) {
    for (std::size_t i = 0; i < data.size(); ++i) {
      if (static_cast<std::size_t>(data.labels[i]) != k) continue;
      Tensor img = data.images.slice(i, i + 1).reshaped(Shape{spec.channels, spec.height, spec.width});
      samples.push_back(spec.channels == 1 ? gray_to_rgb(img.reshaped(Shape{spec.height, spec.width})) : img);
      break;
    }
  }
  write_png(dir / "samples.png", hstack_images(samples));
  const auto hist = class_histogram(data);
  write_json(dir / "summary.json", {{"size", data.size()}, {"class_names", data.class_names}, {"histogram", hist},
                                    {"sha256", sha256_tensor(data.images)}});
  std::cout << "generated " << data.size() << " images over " << data.num_classes << " classes\n";
  finish_run(dir, "gen-data", resolved, spec.seed);
  return kOk;
}

}  // namespace robarch::cli
