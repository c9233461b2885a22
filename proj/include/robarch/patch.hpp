#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "robarch/attacks.hpp"

namespace robarch {

enum class Alignment { aligned, non_aligned };

const char* alignment_name(Alignment a);
Alignment alignment_from_name(const std::string& name);

struct PatchGrid {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t token_size = 0;
  Alignment alignment = Alignment::aligned;
};

struct Placement {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t size = 0;

  bool operator==(const Placement&) const = default;
};

// Throws ConfigError unless H and W are positive multiples of p.
void validate(const PatchGrid& grid);
// (rows, cols) of the placement lattice.
std::pair<std::size_t, std::size_t> placement_grid_shape(const PatchGrid& grid);
std::size_t placement_count(const PatchGrid& grid);
// Row-major; non-aligned placements start at (p/2, p/2).
std::vector<Placement> enumerate_placements(const PatchGrid& grid);

// (H, W) binary masks.
Tensor placement_mask(const Placement& placement, std::size_t height, std::size_t width);
Tensor frame_mask(std::size_t height, std::size_t width, std::size_t frame_width);
std::size_t mask_pixel_count(const Tensor& mask);

struct LossMap {
  PatchGrid grid;
  // (rows, cols) best margin loss per placement.
  Tensor values;
  std::size_t iterations = 0;
};

// image: (C, H, W) or (1, C, H, W).
LossMap patch_loss_map(const Model& model, const Tensor& image, int label, const PatchGrid& grid,
                       std::size_t iterations);

// Both maps share one min-max normalization and are upsampled by nearest
// neighbour to the image size. Returns two (H, W) gray images in [0, 1];
// a constant pair renders as 0.5 everywhere.
std::pair<Tensor, Tensor> render_loss_map_pair(const LossMap& aligned, const LossMap& non_aligned);

struct GreedyPatchConfig {
  std::size_t phase1_iterations = 20;
  double keep_fraction = 0.2;
  std::size_t phase2_iterations = 480;
  double step = 0.5;
  std::uint64_t seed = 0;
  // Replaces the enumerated placements when set.
  std::optional<std::vector<Placement>> placements;
};

struct GreedyPatchResult {
  AttackOutcome outcome;
  std::vector<Placement> placements;
  // (N, count) phase-1 best margin loss per placement.
  Tensor phase1_loss;
  // Per example: indices of the kept placements, best first.
  std::vector<std::vector<std::size_t>> kept;
  // Per example: phase-2 best loss for each kept placement (same order).
  std::vector<std::vector<double>> phase2_loss;
  // Per example: index of the placement that produced the returned input.
  std::vector<std::size_t> best_placement;
};

std::size_t kept_placement_count(std::size_t count, double keep_fraction);

GreedyPatchResult greedy_patch_attack(const Model& model, const Tensor& batch, std::span<const int> labels,
                                      const PatchGrid& grid, const GreedyPatchConfig& config = {});

// Masked margin APGD at one placement; stops an example once it is misclassified.
AttackOutcome fixed_position_patch_attack(const Model& model, const Tensor& batch, std::span<const int> labels,
                                          const Placement& placement, std::size_t iterations,
                                          std::size_t restarts, double step = 0.5, std::uint64_t seed = 0);

struct FrameAttackConfig {
  std::size_t width = 2;
  std::size_t iterations = 100;
  std::size_t restarts = 5;
  double step = 0.5;
  std::uint64_t seed = 0;
};

AttackOutcome frame_attack(const Model& model, const Tensor& batch, std::span<const int> labels,
                           const FrameAttackConfig& config = {});

// Per-example union of two outcomes on the same batch: success if either
// succeeds; the adversarial input comes from the stronger one.
AttackOutcome combine_outcomes(const AttackOutcome& a, const AttackOutcome& b);

}  // namespace robarch
