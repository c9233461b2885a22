#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <span>
#include <string>
#include <vector>

#include "robarch/tensor.hpp"

namespace robarch {

std::string sha256_hex(std::span<const unsigned char> bytes);
std::string sha256_hex(const std::string& text);
std::string sha256_file(const std::filesystem::path& path);
std::string sha256_tensor(const Tensor& t);

struct ArtifactEntry {
  std::string path;  // relative to the run directory
  std::string sha256;
};

struct RunManifest {
  std::string command;
  nlohmann::json config;
  std::uint64_t seed = 0;
  std::vector<ArtifactEntry> artifacts;

  // Hashes `file` (absolute or relative to `root`) and records it relative to root.
  void add(const std::filesystem::path& root, const std::filesystem::path& file);
};

nlohmann::json to_json(const RunManifest& m);
RunManifest manifest_from_json(const nlohmann::json& j);

// manifest.json inside dir.
void write_manifest(const std::filesystem::path& dir, const RunManifest& m);
RunManifest read_manifest(const std::filesystem::path& dir);
// Paths whose current hash differs from the recorded one (missing files included).
std::vector<std::string> verify_manifest(const std::filesystem::path& dir);

// Fresh directory under `parent` named <UTC timestamp>_<first 12 hex of the config hash>;
// a numeric suffix keeps earlier runs untouched.
std::filesystem::path create_run_directory(const std::filesystem::path& parent, const nlohmann::json& config);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace robarch
