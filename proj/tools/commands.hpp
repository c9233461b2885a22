#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

namespace robarch::cli {

enum ExitCode : int { kOk = 0, kValidation = 1, kRuntime = 2, kOverfitting = 3 };

struct GlobalOptions {
  std::optional<std::filesystem::path> config;
  std::optional<std::uint64_t> seed;
  std::filesystem::path out = "runs";
  std::optional<std::size_t> points;
  std::optional<std::string> preset;
};

struct TrainOptions {
  std::optional<std::size_t> epochs;
  std::optional<std::filesystem::path> init_from;
};

struct AttackOptions {
  std::optional<std::filesystem::path> checkpoint;
  std::optional<std::string> threat;
  std::optional<double> epsilon;
  std::optional<std::size_t> token_size;
  std::optional<std::string> alignment;
  std::optional<std::size_t> iterations;
  std::optional<std::size_t> restarts;
};

struct SweepOptionsCli {
  std::optional<std::filesystem::path> cache;
  std::string format = "table";
};

struct VisualizeOptions {
  std::filesystem::path checkpoint;
  std::string kind;
  std::optional<std::filesystem::path> image;
  std::optional<std::size_t> index;
  std::optional<int> label;
  std::optional<std::size_t> patch;
  std::size_t iterations = 100;
  std::string threat = "linf";
};

struct LadderOptions {
  std::size_t width = 8;
  bool train = false;
};

struct GenDataOptions {
  std::optional<std::size_t> num_classes;
  std::optional<std::size_t> samples_per_class;
  std::optional<std::size_t> image_size;
};

int cmd_train(const GlobalOptions& g, const TrainOptions& o);
int cmd_attack(const GlobalOptions& g, const AttackOptions& o);
int cmd_sweep(const GlobalOptions& g, const SweepOptionsCli& o);
int cmd_visualize(const GlobalOptions& g, const VisualizeOptions& o);
int cmd_ladder(const GlobalOptions& g, const LadderOptions& o);
int cmd_gen_data(const GlobalOptions& g, const GenDataOptions& o);

}  // namespace robarch::cli
