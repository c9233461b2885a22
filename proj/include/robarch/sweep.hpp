#pragma once

#include <cstdint>
#include <filesystem>
#include <json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "robarch/attacks.hpp"
#include "robarch/data.hpp"
#include "robarch/patch.hpp"

namespace robarch {

enum class PatchAlignmentMode { aligned, non_aligned, both };

struct AttackBudget {
  // APGD, PGD0 and frame iterations.
  std::size_t iterations = 100;
  std::size_t restarts = 1;
  // Black-box stage of the l0 attack.
  std::size_t query_budget = 1000;
  // Patch attack.
  std::size_t phase1_iterations = 20;
  std::size_t phase2_iterations = 480;
  double keep_fraction = 0.2;
  double patch_step = 0.5;
  PatchAlignmentMode alignment = PatchAlignmentMode::both;
};

struct ThreatSpec {
  std::string name;  // report column
  ThreatModel threat;
  bool seen = false;  // training threat
  AttackBudget budget;
};

// Budgets scaled from the 3x224x224 reference geometry to `input`.
ThreatSpec desk_threat(ThreatKind kind, const InputSize& input);
// linf (seen), l2, l1, l0, patch, frame.
std::vector<ThreatSpec> desk_threats(const InputSize& input);

nlohmann::json to_json(const ThreatSpec& t);
// Missing epsilon falls back to the desk budget for `input`; patch threats
// require a "grid" object.
ThreatSpec threat_spec_from_json(const nlohmann::json& j, const InputSize& input, const std::string& scope = "threat");

// Seen threats first (config order), then unseen by kind: linf, l2, l1, l0, patch, frame.
std::vector<ThreatSpec> ordered_threats(std::vector<ThreatSpec> threats);

// Examples that are not clean-correct are not attacked and count as
// successes. For lp threats APGD with cross-entropy runs first, then the
// second loss (DLR, or margin with fewer than 4 classes) on survivors.
AttackOutcome run_threat(const Model& model, const Tensor& batch, std::span<const int> labels,
                         const std::vector<bool>& clean_correct, const ThreatSpec& spec, std::uint64_t seed);

// Second lp loss used by the sweep for a K-class model.
LossKind second_lp_loss(std::size_t num_classes);

// 100 * #(clean_correct and not success) / N. Throws ConfigError when empty.
double robust_accuracy(const std::vector<bool>& clean_correct, const std::vector<bool>& success);
// Per-example OR over the given success columns, then robust_accuracy.
double worst_case(const std::vector<bool>& clean_correct, const std::vector<const std::vector<bool>*>& successes);

struct CellResult {
  std::string threat;
  double robust_accuracy = 0.0;
  double mean_best_loss = 0.0;
  std::vector<bool> success;
  bool cached = false;
  std::string artifact;  // directory holding records.json and adversarial.rbt
};

struct ModelReport {
  std::string name;
  double clean_accuracy = 0.0;
  std::vector<bool> clean_correct;
  std::vector<CellResult> cells;  // aligned with RobustnessReport::threats
  std::optional<double> worst_case;
  std::string error;  // non-empty when the model could not be evaluated
};

struct RobustnessReport {
  std::vector<ThreatSpec> threats;
  std::vector<std::string> worst_case_subset;  // empty: no worst-case column
  std::vector<ModelReport> models;
  std::size_t points = 0;
};

struct NamedModel {
  std::string name;
  const Model* model = nullptr;
  std::string hash;  // content hash used for cell caching
};

struct SweepOptions {
  std::vector<ThreatSpec> threats;
  std::vector<std::string> worst_case_subset;
  std::uint64_t seed = 0;
  // Cells are stored under cache_dir/<key>/ and reused when present.
  std::filesystem::path cache_dir;
};

RobustnessReport run_sweep(std::span<const NamedModel> models, const Dataset& eval, const SweepOptions& options);

struct ModelRef {
  std::string name;
  std::filesystem::path checkpoint;
};

struct SweepConfig {
  std::vector<ModelRef> models;
  DatasetSpec dataset;
  std::vector<ThreatSpec> threats;
  std::vector<std::string> worst_case_subset;
  std::size_t points = 1000;
  std::uint64_t seed = 0;
};

void validate(const SweepConfig& config);
nlohmann::json to_json(const SweepConfig& config);

// Evaluation set: first `points` of a seeded shuffle of the test split.
// Models that fail to load get an error entry; the sweep continues.
RobustnessReport run_sweep(const SweepConfig& config, const std::filesystem::path& cache_dir = {});

std::string model_content_hash(const Model& model);

enum class ReportFormat { table, csv, records };
ReportFormat report_format_from_name(const std::string& name);

// " | "-joined values with one decimal.
std::string format_values(std::span<const double> values);
std::string format_report(const RobustnessReport& report, ReportFormat format);

}  // namespace robarch
