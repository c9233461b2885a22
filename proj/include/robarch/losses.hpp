#pragma once

#include <span>
#include <string>
#include <vector>

#include "robarch/model.hpp"

namespace robarch {

enum class LossKind { cross_entropy, margin, dlr };

const char* loss_name(LossKind kind);
LossKind loss_from_name(const std::string& name);

using Labels = std::vector<int>;

struct LossResult {
  std::vector<double> values;    // per example
  Tensor grad;                   // d values[i] / d logits[i], shape (N, K)
  std::vector<bool> degenerate;  // dlr with a zero denominator
};

// margin = max_{i != y} z_i - z_y; dlr = -(z_y - max_{i != y} z_i) / (z_pi1 - z_pi3).
LossResult loss_with_grad(const Tensor& logits, std::span<const int> labels, LossKind kind);
std::vector<double> loss_value(const Tensor& logits, std::span<const int> labels, LossKind kind);

// True where the margin is positive, i.e. the example is misclassified.
std::vector<bool> misclassified(const Tensor& logits, std::span<const int> labels);
std::vector<int> predictions(const Tensor& logits);

struct InputGradient {
  Tensor logits;
  std::vector<double> loss;
  Tensor grad;  // d sum(loss) / d input
};

// One forward and backward pass. Train mode uses batch statistics without
// updating the running estimates.
InputGradient loss_and_input_gradient(const Model& model, const Tensor& batch,
                                      std::span<const int> labels, LossKind kind,
                                      nn::Mode mode = nn::Mode::eval);

Tensor gradient_wrt_input(const Model& model, const Tensor& batch, std::span<const int> labels,
                          LossKind kind);

// Logits in eval mode, in chunks of at most `chunk` examples.
Tensor predict_logits(const Model& model, const Tensor& batch, std::size_t chunk = 256);

}  // namespace robarch
