#include <algorithm>
#include <cmath>

#include "json_util.hpp"
#include "robarch/train.hpp"

namespace robarch {

namespace {

constexpr std::pair<const char*, ScheduleKind> kSchedules[] = {
    {"cyclic", ScheduleKind::cyclic}, {"cosine_with_warmup", ScheduleKind::cosine_with_warmup}};

constexpr double kPi = 3.14159265358979323846;

}  // namespace

const char* schedule_name(ScheduleKind k) { return detail::enum_name(k, kSchedules); }

ScheduleKind schedule_from_name(const std::string& name) {
  for (const auto& [n, v] : kSchedules) {
    if (name == n) return v;
  }
  throw ConfigError("train.schedule: expected one of cyclic|cosine_with_warmup, got \"" + name + "\"");
}

void validate(const TrainConfig& c) {
  if (c.epochs == 0) throw ConfigError("train.epochs: expected a positive integer");
  if (c.batch_size == 0) throw ConfigError("train.batch_size: expected a positive integer");
  if (!(c.peak_lr > 0.0)) throw ConfigError("train.peak_lr: expected a positive number");
  if (!(c.min_lr >= 0.0 && c.min_lr <= c.peak_lr)) throw ConfigError("train.min_lr: expected a number in [0, peak_lr]");
  if (!(c.weight_decay >= 0.0)) throw ConfigError("train.weight_decay: expected a non-negative number");
  if (!(c.warmup_epochs >= 0.0) || !(c.cooldown_epochs >= 0.0)) {
    throw ConfigError("train.warmup_epochs/cooldown_epochs: expected non-negative numbers");
  }
  if (c.warmup_epochs + c.cooldown_epochs > static_cast<double>(c.epochs)) {
    throw ConfigError("train.warmup_epochs: warmup + cooldown must not exceed epochs");
  }
  if (c.at_inner_steps > 0 && !(c.at_epsilon > 0.0)) {
    throw ConfigError("train.at_epsilon: expected a positive number when at_inner_steps > 0");
  }
  if (c.overfitting_window == 0) throw ConfigError("train.overfitting_window: expected a positive integer");
}

nlohmann::json to_json(const TrainConfig& c) {
  nlohmann::json j = {{"epochs", c.epochs},
                      {"batch_size", c.batch_size},
                      {"schedule", schedule_name(c.schedule)},
                      {"peak_lr", c.peak_lr},
                      {"min_lr", c.min_lr},
                      {"weight_decay", c.weight_decay},
                      {"warmup_epochs", c.warmup_epochs},
                      {"cooldown_epochs", c.cooldown_epochs},
                      {"at_inner_steps", c.at_inner_steps},
                      {"at_epsilon", c.at_epsilon},
                      {"at_random_init", c.at_random_init},
                      {"init_from", c.init_from ? nlohmann::json(c.init_from->string()) : nlohmann::json(nullptr)},
                      {"seed", c.seed},
                      {"augment", c.augment},
                      {"crop_padding", c.crop_padding},
                      {"holdout_points", c.holdout_points},
                      {"abort_on_overfitting", c.abort_on_overfitting},
                      {"overfitting_window", c.overfitting_window}};
  return j;
}

TrainConfig train_config_from_json(const nlohmann::json& j, const TrainConfig& base) {
  const std::string s = "train";
  detail::reject_unknown_keys(j, s,
                              {"epochs", "batch_size", "schedule", "peak_lr", "min_lr", "weight_decay",
                               "warmup_epochs", "cooldown_epochs", "at_inner_steps", "at_epsilon", "at_random_init",
                               "init_from", "seed", "augment", "crop_padding", "holdout_points",
                               "abort_on_overfitting", "overfitting_window"});
  TrainConfig c = base;
  const std::string pos = "a positive integer", num = "a number", nn = "a non-negative integer";
  c.epochs = detail::read_field(j, s, "epochs", c.epochs, pos);
  c.batch_size = detail::read_field(j, s, "batch_size", c.batch_size, pos);
  c.schedule = detail::read_enum(j, s, "schedule", c.schedule, kSchedules);
  c.peak_lr = detail::read_field(j, s, "peak_lr", c.peak_lr, num);
  c.min_lr = detail::read_field(j, s, "min_lr", c.min_lr, num);
  c.weight_decay = detail::read_field(j, s, "weight_decay", c.weight_decay, num);
  c.warmup_epochs = detail::read_field(j, s, "warmup_epochs", c.warmup_epochs, num);
  c.cooldown_epochs = detail::read_field(j, s, "cooldown_epochs", c.cooldown_epochs, num);
  c.at_inner_steps = detail::read_field(j, s, "at_inner_steps", c.at_inner_steps, nn);
  c.at_epsilon = detail::read_field(j, s, "at_epsilon", c.at_epsilon, num);
  c.at_random_init = detail::read_field(j, s, "at_random_init", c.at_random_init, "a boolean");
  if (j.contains("init_from")) {
    const auto& v = j.at("init_from");
    if (v.is_null()) {
      c.init_from.reset();
    } else {
      c.init_from = detail::read_field(j, s, "init_from", std::string(), "a checkpoint path or null");
    }
  }
  c.seed = detail::read_field(j, s, "seed", c.seed, nn);
  c.augment = detail::read_field(j, s, "augment", c.augment, "a boolean");
  c.crop_padding = detail::read_field(j, s, "crop_padding", c.crop_padding, nn);
  c.holdout_points = detail::read_field(j, s, "holdout_points", c.holdout_points, nn);
  c.abort_on_overfitting = detail::read_field(j, s, "abort_on_overfitting", c.abort_on_overfitting, "a boolean");
  c.overfitting_window = detail::read_field(j, s, "overfitting_window", c.overfitting_window, pos);
  validate(c);
  return c;
}

TrainConfig train_preset(const std::string& name) {
  TrainConfig c;
  c.batch_size = 128;
  c.weight_decay = 0.05;
  if (name == "ladder-short" || name == "plain-short") {
    c.epochs = 16;
    c.schedule = ScheduleKind::cyclic;
    c.peak_lr = 0.004;
    c.warmup_epochs = 2.0;
    c.at_inner_steps = name == "ladder-short" ? 1 : 0;
    c.at_epsilon = 4.0 / 255.0;
    c.at_random_init = false;
    return c;
  }
  if (name == "full-at") {
    c.epochs = 20;
    c.schedule = ScheduleKind::cosine_with_warmup;
    c.peak_lr = 0.001;
    c.min_lr = 1e-5;
    c.warmup_epochs = 2.0;
    c.cooldown_epochs = 1.0;
    c.at_inner_steps = 1;
    c.at_epsilon = 4.0 / 255.0;
    c.at_random_init = false;
    return c;
  }
  std::string known;
  for (const auto& n : train_preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("preset: unknown name '" + name + "'; available: " + known);
}

std::vector<std::string> train_preset_names() { return {"ladder-short", "plain-short", "full-at"}; }

double learning_rate(const TrainConfig& c, double t) {
  const double total = static_cast<double>(c.epochs);
  const double end = total - c.cooldown_epochs;
  const double w = c.warmup_epochs;
  t = std::clamp(t, 0.0, total);
  if (t >= end) return c.min_lr;
  if (t < w) return c.peak_lr * t / w;
  const double span = end - w;
  const double frac = span > 0.0 ? (t - w) / span : 1.0;
  if (c.schedule == ScheduleKind::cyclic) return c.peak_lr + (c.min_lr - c.peak_lr) * frac;
  return c.min_lr + 0.5 * (c.peak_lr - c.min_lr) * (1.0 + std::cos(kPi * frac));
}

}  // namespace robarch
