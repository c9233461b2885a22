#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "robarch/losses.hpp"
#include "robarch/model.hpp"

namespace robarch {

enum class ThreatKind { linf, l2, l1, l0_pixel, patch, frame };

struct ThreatModel {
  ThreatKind kind = ThreatKind::linf;
  // lp radius in [0,1] image units; pixel count for l0_pixel; side length for
  // patch; width for frame.
  double epsilon = 4.0 / 255.0;
};

const char* threat_name(ThreatKind kind);
// Throws ConfigError listing the supported kinds.
ThreatKind threat_from_name(const std::string& name);
void validate(const ThreatModel& threat, std::size_t height, std::size_t width);

// ---------------------------------------------------------------- projections

// Euclidean projection of `point` onto {z : |z - center|_p <= eps} ∩ [0,1]^d,
// in place. With box = false the [0,1] constraint is dropped.
void project_linf(std::span<double> point, std::span<const double> center, double eps, bool box = true);
void project_l2(std::span<double> point, std::span<const double> center, double eps, bool box = true);
void project_l1(std::span<double> point, std::span<const double> center, double eps, bool box = true);
void project(std::span<double> point, std::span<const double> center, const ThreatModel& threat,
             bool box = true);
// Row-wise over axis 0.
Tensor project(const Tensor& point, const Tensor& center, const ThreatModel& threat, bool box = true);

// delta is (C, H, W); keeps the k pixels with the largest l2 norm across
// channels, ties broken by row-major position. k must be positive.
void project_l0_pixel(std::span<double> delta, std::size_t channels, std::size_t height,
                      std::size_t width, long long k);
Tensor project_l0_pixel(const Tensor& delta, long long k);

std::size_t perturbed_pixel_count(std::span<const double> orig, std::span<const double> adv,
                                  std::size_t channels, std::size_t height, std::size_t width);

// ---------------------------------------------------------------- outcomes

struct AttackOutcome {
  Tensor adversarial;
  std::vector<bool> success;
  std::vector<double> best_loss;
  std::vector<std::size_t> iterations;
  std::vector<std::size_t> queries;
  // Best loss after every iteration (only filled when requested).
  std::vector<std::vector<double>> loss_trace;

  std::size_t size() const { return success.size(); }
};

// Largest constraint violation per example (0 when feasible): lp excess over
// epsilon, box violation, and off-mask change.
std::vector<double> constraint_residual(const Tensor& original, const Tensor& adversarial,
                                        const ThreatModel& threat, const Tensor* mask = nullptr);

// Success read back from a fresh eval-mode forward.
std::vector<bool> evaluate_success(const Model& model, const Tensor& batch, std::span<const int> labels);

// ---------------------------------------------------------------- APGD

struct APGDConfig {
  std::size_t iterations = 100;
  // Initial step = fraction * 2 * epsilon for lp threats.
  double initial_step_fraction = 1.0;
  // Overrides the lp rule; used by masked patch and frame attacks.
  std::optional<double> absolute_step;
  std::size_t restarts = 1;
  // Weight of the previous displacement in the update.
  double momentum = 0.25;
  // Explicit halving checkpoints (1-based iteration counts). Empty: default schedule.
  std::vector<std::size_t> checkpoints;
  double rho = 0.75;
  bool random_init = false;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::cross_entropy;
  // Stop an example once it is misclassified.
  bool stop_on_success = false;
  bool record_trace = false;
};

// Default halving schedule: first checkpoint at 22% of the iterations, each
// following interval 3% shorter, never below 6%.
std::vector<std::size_t> apgd_checkpoints(std::size_t iterations);

// mask: optional (H, W) or (N, H, W) support; values outside the mask keep
// their original value exactly. threat.kind must be linf, l2 or l1.
// start: optional first iterate for restart 0 (projected onto the feasible set).
AttackOutcome apgd(const Model& model, const Tensor& batch, std::span<const int> labels,
                   const ThreatModel& threat, const APGDConfig& config, const Tensor* mask = nullptr,
                   const Tensor* start = nullptr);

// ---------------------------------------------------------------- FGSM / PGD-linf

struct FgsmOptions {
  bool random_init = false;
  std::size_t steps = 1;
  std::uint64_t seed = 0;
  nn::Mode mode = nn::Mode::eval;
};

// steps = 1: x + eps * sign(grad CE); steps > 1: projected steps of 2 eps / steps.
Tensor fgsm_batch(const Model& model, const Tensor& batch, std::span<const int> labels, double epsilon,
                  const FgsmOptions& options);
AttackOutcome fgsm(const Model& model, const Tensor& batch, std::span<const int> labels, double epsilon,
                   bool random_init, std::size_t steps, std::uint64_t seed = 0);

// ---------------------------------------------------------------- l0 attacks

struct Pgd0Config {
  std::size_t iterations = 100;
  double step = 0.5;
  LossKind loss = LossKind::cross_entropy;
  bool stop_on_success = true;
};

AttackOutcome pgd0(const Model& model, const Tensor& batch, std::span<const int> labels, long long k,
                   const Pgd0Config& config = {});

struct SparseSearchConfig {
  std::size_t query_budget = 1000;
  std::uint64_t seed = 0;
  double initial_fraction = 0.3;
  bool stop_on_success = true;
};

// Black-box: forward passes only. Support of k pixels set to corners of the
// color cube; a shrinking fraction is resampled per query and accepted when
// the margin loss does not decrease.
AttackOutcome sparse_random_search(const Model& model, const Tensor& batch, std::span<const int> labels,
                                   long long k, const SparseSearchConfig& config);

// Accepted-candidate losses per example, in order (for testing).
struct SparseSearchTrace {
  std::vector<std::vector<double>> accepted;
};
AttackOutcome sparse_random_search(const Model& model, const Tensor& batch, std::span<const int> labels,
                                   long long k, const SparseSearchConfig& config, SparseSearchTrace* trace);

}  // namespace robarch
