#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <string>

#include "robarch/data.hpp"
#include "robarch/model.hpp"
#include "robarch/sweep.hpp"
#include "robarch/train.hpp"

namespace robarch {

// Parses a JSON run file. Throws IoError when unreadable, ConfigError on syntax errors.
nlohmann::json load_json_file(const std::filesystem::path& path);

nlohmann::json to_json(const DatasetSpec& spec);
DatasetSpec dataset_spec_from_json(const nlohmann::json& j, const std::string& scope = "dataset");

// Model fields not present in the file default to the dataset geometry.
ModelConfig model_config_for_dataset(const nlohmann::json& j, const DatasetSpec& dataset,
                                     const std::string& scope = "model");

struct TrainRun {
  DatasetSpec dataset;
  ModelConfig model;
  TrainConfig train;
  std::optional<std::string> preset;
  std::uint64_t model_seed = 0;
};

// Keys: dataset, model, preset, train, model_seed (all optional). Train fields start from
// `preset` (argument beats the file's "preset" key), then the file's "train" object.
TrainRun train_run_from_json(const nlohmann::json& j, const std::optional<std::string>& preset = {});
nlohmann::json to_json(const TrainRun& run);

struct AttackRun {
  std::filesystem::path checkpoint;
  DatasetSpec dataset;
  ThreatSpec threat;
  std::size_t points = 1000;
  std::uint64_t seed = 0;
};

// Keys: checkpoint, dataset, threat, points, seed.
AttackRun attack_run_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AttackRun& run);

// Keys: models [{name, checkpoint}], dataset, threats (default: the desk list),
// worst_case, points, seed.
SweepConfig sweep_config_from_json(const nlohmann::json& j);

}  // namespace robarch
