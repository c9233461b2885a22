#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "robarch/data.hpp"
#include "robarch/model.hpp"

namespace robarch {

enum class ScheduleKind { cyclic, cosine_with_warmup };

const char* schedule_name(ScheduleKind k);
ScheduleKind schedule_from_name(const std::string& name);

struct TrainConfig {
  std::size_t epochs = 10;
  std::size_t batch_size = 128;
  ScheduleKind schedule = ScheduleKind::cyclic;
  double peak_lr = 0.004;
  double min_lr = 0.0;
  double weight_decay = 0.05;
  // cyclic: epoch of the peak. cosine_with_warmup: linear warm-up length.
  double warmup_epochs = 2.0;
  // Held at min_lr at the end of the run.
  double cooldown_epochs = 0.0;
  std::size_t at_inner_steps = 0;
  double at_epsilon = 4.0 / 255.0;
  bool at_random_init = false;
  std::optional<std::filesystem::path> init_from;
  std::uint64_t seed = 0;
  // Augmentation: random flip and crop from a zero-padded copy.
  bool augment = true;
  std::size_t crop_padding = 2;
  // Holdout examples used for the per-epoch robustness record (0 = all).
  std::size_t holdout_points = 0;
  // Abort when the catastrophic-overfitting detector fires (AT runs only).
  bool abort_on_overfitting = true;
  std::size_t overfitting_window = 3;
};

void validate(const TrainConfig& config);
nlohmann::json to_json(const TrainConfig& config);
TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base = {});

// Built-in recipes: "ladder-short", "plain-short", "full-at".
TrainConfig train_preset(const std::string& name);
std::vector<std::string> train_preset_names();

// Learning rate at fractional epoch t in [0, epochs].
double learning_rate(const TrainConfig& config, double t);

// Decoupled weight decay Adam.
class AdamW {
 public:
  AdamW(std::vector<nn::Parameter*> params, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);
  void step(const nn::ParamGrads& grads, double lr, double weight_decay);
  std::size_t steps() const { return t_; }

 private:
  std::vector<nn::Parameter*> params_;
  std::vector<Tensor> m_, v_;
  double b1_, b2_, eps_;
  std::size_t t_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double learning_rate = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double holdout_clean = 0.0;
  double holdout_fgsm = 0.0;
  double holdout_pgd2 = 0.0;
  std::string checkpoint;
};

using TrainHistory = std::vector<EpochRecord>;

nlohmann::json to_json(const TrainHistory& history);
TrainHistory history_from_json(const nlohmann::json& j);

struct DivergenceError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CatastrophicOverfitting : std::runtime_error {
  CatastrophicOverfitting(const std::string& what, std::size_t epoch, TrainHistory history)
      : std::runtime_error(what), epoch(epoch), history(std::move(history)) {}
  std::size_t epoch;
  TrainHistory history;
};

// steps >= 1; delegates to fgsm_batch. Output is linf-feasible at epsilon.
Tensor inner_maximization(const Model& model, const Tensor& batch, std::span<const int> labels, std::size_t steps,
                          double epsilon, bool random_init, std::uint64_t seed = 0,
                          nn::Mode mode = nn::Mode::train);

struct OverfittingSignal {
  bool triggered = false;
  std::size_t epoch = 0;  // 1-based epoch of the first trigger
};

// Fires at epoch e when, over the trailing window ending at e, FGSM accuracy
// stays within 10 points of its window max while PGD-2 accuracy falls below
// half its window max by more than `min_drop` points.
OverfittingSignal detect_catastrophic_overfitting(const TrainHistory& history, std::size_t window = 3,
                                                  double min_drop = 10.0);

struct HoldoutScores {
  double clean = 0.0;
  double fgsm = 0.0;
  double pgd2 = 0.0;
};

HoldoutScores evaluate_holdout(const Model& model, const Dataset& holdout, double epsilon);

// Index of the highest score; ties go to the later entry.
std::size_t select_by_score(std::span<const double> scores);
// FGSM robust accuracy of each model on the holdout, then select_by_score.
std::size_t select_checkpoint(std::span<const Model> checkpoints, const Dataset& holdout, double epsilon);

struct TrainResult {
  Model model;
  TrainHistory history;
  std::vector<std::filesystem::path> checkpoints;
  std::vector<StateDict> states;
  std::size_t selected = 0;  // 0-based epoch index chosen by select_checkpoint
};

using EpochCallback = std::function<void(const EpochRecord&)>;

// Checkpoints are written to out_dir/epoch_XXX.ckpt when out_dir is non-empty.
TrainResult adversarial_train(const ModelConfig& model_config, const Splits& data, const TrainConfig& config,
                              const std::filesystem::path& out_dir = {}, const EpochCallback& on_epoch = {},
                              std::uint64_t model_seed = 0);

}  // namespace robarch
