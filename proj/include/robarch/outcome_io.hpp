#pragma once

#include <filesystem>
#include <json.hpp>
#include <span>

#include "robarch/attacks.hpp"

namespace robarch {

// Per-example records: index, label, clean_correct, success, best_loss,
// constraint_residual, queries, iterations; plus a summary block.
nlohmann::json outcome_records(const AttackOutcome& outcome, const Tensor& original, std::span<const int> labels,
                               const std::vector<bool>& clean_correct, const ThreatModel& threat,
                               const Tensor* mask = nullptr);

// Recomputes robust accuracy (percent) from stored records.
double robust_accuracy_from_records(const nlohmann::json& records);

// Writes records.json and adversarial.rbt into `dir`.
void save_outcome(const std::filesystem::path& dir, const AttackOutcome& outcome, const nlohmann::json& records);
Tensor load_adversarial(const std::filesystem::path& dir);

}  // namespace robarch
