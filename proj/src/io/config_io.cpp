#include <fstream>
#include <sstream>

#include "json_util.hpp"
#include "robarch/config_io.hpp"
#include "robarch/tensor_io.hpp"

namespace robarch {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr std::pair<const char*, DatasetSource> kSources[] = {{"image_folder", DatasetSource::image_folder},
                                                              {"synthetic_shapes", DatasetSource::synthetic_shapes}};

const json& required(const json& j, const std::string& scope, const std::string& key) {
  if (!j.contains(key)) throw ConfigError(detail::field_path(scope, key) + ": required");
  return j.at(key);
}

}  // namespace

json load_json_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  try {
    return json::parse(buf.str());
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": invalid JSON: " + e.what());
  }
}

json to_json(const DatasetSpec& s) {
  json j = {{"source", dataset_source_name(s.source)},
            {"splits", {{"train", s.splits.train}, {"holdout", s.splits.holdout}, {"test", s.splits.test}}},
            {"channels", s.channels},
            {"image_size", {s.height, s.width}},
            {"num_classes", s.num_classes},
            {"seed", s.seed}};
  if (s.source == DatasetSource::image_folder) j["path"] = s.path.string();
  if (s.source == DatasetSource::synthetic_shapes) j["samples_per_class"] = s.samples_per_class;
  return j;
}

DatasetSpec dataset_spec_from_json(const json& j, const std::string& scope) {
  detail::reject_unknown_keys(j, scope,
                              {"source", "path", "splits", "channels", "image_size", "num_classes",
                               "samples_per_class", "seed"});
  DatasetSpec s;
  s.source = detail::read_enum(j, scope, "source", s.source, kSources);
  s.path = detail::read_field(j, scope, "path", std::string(), "a directory path");
  if (j.contains("splits")) {
    const std::string ss = detail::field_path(scope, "splits");
    const json& sp = j.at("splits");
    detail::reject_unknown_keys(sp, ss, {"train", "holdout", "test"});
    s.splits.train = detail::read_field(sp, ss, "train", s.splits.train, "a fraction");
    s.splits.holdout = detail::read_field(sp, ss, "holdout", s.splits.holdout, "a fraction");
    s.splits.test = detail::read_field(sp, ss, "test", s.splits.test, "a fraction");
  }
  s.channels = detail::read_field(j, scope, "channels", s.channels, "1 or 3");
  if (j.contains("image_size")) {
    const json& v = j.at("image_size");
    const std::string expected = "a positive integer or [height, width]";
    if (v.is_number_integer() && v.get<long long>() > 0) {
      s.height = s.width = v.get<std::size_t>();
    } else if (v.is_array() && v.size() == 2 && v[0].is_number_integer() && v[1].is_number_integer() &&
               v[0].get<long long>() > 0 && v[1].get<long long>() > 0) {
      s.height = v[0].get<std::size_t>();
      s.width = v[1].get<std::size_t>();
    } else {
      detail::field_error(scope, "image_size", expected, v);
    }
  }
  s.num_classes = detail::read_field(j, scope, "num_classes", s.num_classes, "an integer >= 2");
  s.samples_per_class = detail::read_field(j, scope, "samples_per_class", s.samples_per_class, "a positive integer");
  s.seed = detail::read_field(j, scope, "seed", s.seed, "a non-negative integer");
  validate(s);
  return s;
}

ModelConfig model_config_for_dataset(const json& j, const DatasetSpec& d, const std::string& scope) {
  if (!j.is_object()) throw ConfigError(scope + ": expected an object");
  json filled = j;
  if (!filled.contains("input_size")) filled["input_size"] = {d.channels, d.height, d.width};
  if (!filled.contains("num_classes")) filled["num_classes"] = d.num_classes;
  ModelConfig c = model_config_from_json(filled, scope);
  if (c.input_size != InputSize{d.channels, d.height, d.width}) {
    throw ConfigError(scope + ".input_size: does not match the dataset geometry");
  }
  if (c.num_classes != d.num_classes) throw ConfigError(scope + ".num_classes: does not match dataset.num_classes");
  return c;
}

TrainRun train_run_from_json(const json& j, const std::optional<std::string>& preset) {
  detail::reject_unknown_keys(j, "", {"dataset", "model", "preset", "train", "model_seed"});
  TrainRun run;
  run.dataset = dataset_spec_from_json(j.value("dataset", json::object()));
  run.preset = preset;
  if (!run.preset && j.contains("preset")) run.preset = detail::read_field(j, "", "preset", std::string(), "a preset name");
  TrainConfig base;
  if (run.preset) base = train_preset(*run.preset);
  run.train = j.contains("train") ? train_config_from_json(j.at("train"), base) : base;
  validate(run.train);
  run.model = model_config_for_dataset(j.value("model", json::object()), run.dataset);
  run.model_seed = detail::read_field(j, "", "model_seed", run.model_seed, "a non-negative integer");
  return run;
}

json to_json(const TrainRun& r) {
  json j = {{"dataset", to_json(r.dataset)},
            {"model", to_json(r.model)},
            {"train", to_json(r.train)},
            {"model_seed", r.model_seed}};
  if (r.preset) j["preset"] = *r.preset;
  return j;
}

AttackRun attack_run_from_json(const json& j) {
  detail::reject_unknown_keys(j, "", {"checkpoint", "dataset", "threat", "points", "seed"});
  AttackRun run;
  run.dataset = dataset_spec_from_json(j.value("dataset", json::object()));
  run.checkpoint = detail::read_field(j, "", "checkpoint", std::string(), "a checkpoint path");
  const InputSize in{run.dataset.channels, run.dataset.height, run.dataset.width};
  run.threat = threat_spec_from_json(required(j, "", "threat"), in, "threat");
  run.points = detail::read_field(j, "", "points", run.points, "a positive integer");
  run.seed = detail::read_field(j, "", "seed", run.seed, "a non-negative integer");
  if (run.points == 0) detail::field_error("", "points", "a positive integer", j.at("points"));
  return run;
}

json to_json(const AttackRun& r) {
  return {{"checkpoint", r.checkpoint.string()},
          {"dataset", to_json(r.dataset)},
          {"threat", to_json(r.threat)},
          {"points", r.points},
          {"seed", r.seed}};
}

SweepConfig sweep_config_from_json(const json& j) {
  detail::reject_unknown_keys(j, "", {"models", "dataset", "threats", "worst_case", "points", "seed"});
  SweepConfig c;
  c.dataset = dataset_spec_from_json(j.value("dataset", json::object()));
  const InputSize in{c.dataset.channels, c.dataset.height, c.dataset.width};
  const json& models = required(j, "", "models");
  if (!models.is_array()) detail::field_error("", "models", "an array of {name, checkpoint}", models);
  for (std::size_t m = 0; m < models.size(); ++m) {
    const std::string scope = "models[" + std::to_string(m) + "]";
    detail::reject_unknown_keys(models[m], scope, {"name", "checkpoint"});
    ModelRef ref;
    required(models[m], scope, "checkpoint");
    ref.checkpoint = detail::read_field(models[m], scope, "checkpoint", std::string(), "a path");
    ref.name = detail::read_field(models[m], scope, "name", ref.checkpoint.stem().string(), "a string");
    c.models.push_back(std::move(ref));
  }
  if (j.contains("threats")) {
    const json& ts = j.at("threats");
    if (!ts.is_array()) detail::field_error("", "threats", "an array of threat objects", ts);
    for (std::size_t t = 0; t < ts.size(); ++t) {
      c.threats.push_back(threat_spec_from_json(ts[t], in, "threats[" + std::to_string(t) + "]"));
    }
  } else {
    c.threats = desk_threats(in);
  }
  if (j.contains("worst_case")) {
    const json& w = j.at("worst_case");
    if (!w.is_array()) detail::field_error("", "worst_case", "an array of threat names", w);
    for (const auto& n : w) {
      if (!n.is_string()) detail::field_error("", "worst_case", "an array of threat names", w);
      c.worst_case_subset.push_back(n.get<std::string>());
    }
  }
  c.points = detail::read_field(j, "", "points", c.points, "a positive integer");
  c.seed = detail::read_field(j, "", "seed", c.seed, "a non-negative integer");
  validate(c);
  for (const auto& n : c.worst_case_subset) {
    bool found = false;
    for (const auto& t : c.threats) found = found || t.name == n;
    if (!found) throw ConfigError("worst_case: '" + n + "' is not a configured threat");
  }
  return c;
}

json to_json(const SweepConfig& c) {
  json models = json::array();
  for (const auto& m : c.models) models.push_back({{"name", m.name}, {"checkpoint", m.checkpoint.string()}});
  json threats = json::array();
  for (const auto& t : c.threats) threats.push_back(to_json(t));
  return {{"models", models},     {"dataset", to_json(c.dataset)}, {"threats", threats},
          {"worst_case", c.worst_case_subset}, {"points", c.points},        {"seed", c.seed}};
}

}  // namespace robarch
