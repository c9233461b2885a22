#pragma once

#include <filesystem>
#include <json.hpp>
#include <stdexcept>

#include "robarch/model.hpp"

namespace robarch {

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Archive with the model config and every parameter and buffer. `extra` is
// stored alongside (e.g. epoch number).
void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& extra = nlohmann::json::object());

ModelConfig read_checkpoint_config(const std::filesystem::path& path);
nlohmann::json read_checkpoint_extra(const std::filesystem::path& path);

Model load_checkpoint(const std::filesystem::path& path);
// Throws CheckpointError when the stored config differs from `expected`.
Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace robarch
