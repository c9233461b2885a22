#include "robarch/checkpoint.hpp"
#include "robarch/tensor_io.hpp"

namespace robarch {

namespace {

Archive open_checkpoint(const std::filesystem::path& path) {
  Archive a;
  try {
    a = read_archive(path);
  } catch (const IoError& e) {
    throw CheckpointError(e.what());
  }
  if (a.meta.value("kind", "") != "checkpoint" || !a.meta.contains("config")) {
    throw CheckpointError(path.string() + ": archive is not a model checkpoint");
  }
  return a;
}

ModelConfig config_of(const Archive& a, const std::filesystem::path& path) {
  try {
    return model_config_from_json(a.meta.at("config"), "checkpoint.config");
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
}

Model restore(const Archive& a, const ModelConfig& config, const std::filesystem::path& path) {
  Model m = build_model(config, 0);
  StateDict state;
  for (const auto& [name, t] : a.tensors) state.emplace(name, t);
  try {
    m.load_state(state);
  } catch (const ConfigError& e) {
    throw CheckpointError(path.string() + ": " + e.what());
  }
  return m;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Model& model, const nlohmann::json& extra) {
  Archive a;
  a.meta["kind"] = "checkpoint";
  a.meta["config"] = to_json(model.config());
  a.meta["extra"] = extra;
  for (auto& [name, t] : model.state()) a.add(name, t);
  write_archive(path, a);
}

ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  return config_of(open_checkpoint(path), path);
}

nlohmann::json read_checkpoint_extra(const std::filesystem::path& path) {
  return open_checkpoint(path).meta.value("extra", nlohmann::json::object());
}

Model load_checkpoint(const std::filesystem::path& path) {
  const Archive a = open_checkpoint(path);
  return restore(a, config_of(a, path), path);
}

Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected) {
  const Archive a = open_checkpoint(path);
  const ModelConfig stored = config_of(a, path);
  if (!(stored == expected)) {
    throw CheckpointError(path.string() + ": checkpoint config " + to_json(stored).dump() +
                          " does not match expected config " + to_json(expected).dump());
  }
  return restore(a, stored, path);
}

}  // namespace robarch
