#include <algorithm>
#include <cmath>
#include <numeric>

#include "robarch/losses.hpp"

namespace robarch {

namespace {

void check_labels(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("loss: logits must be (N, K), got " + shape_string(logits.shape()));
  if (labels.size() != logits.dim(0)) {
    throw ShapeError("loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(logits.dim(0)) + " examples");
  }
  if (logits.dim(1) < 2) throw ShapeError("loss: need at least 2 classes");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.dim(1)) {
      throw ShapeError("loss: label " + std::to_string(y) + " out of range");
    }
  }
}

std::size_t best_other(const double* z, std::size_t k, std::size_t y) {
  std::size_t best = y == 0 ? 1 : 0;
  for (std::size_t i = 0; i < k; ++i) {
    if (i != y && z[i] > z[best]) best = i;
  }
  return best;
}

}  // namespace

const char* loss_name(LossKind kind) {
  switch (kind) {
    case LossKind::cross_entropy:
      return "cross_entropy";
    case LossKind::margin:
      return "margin";
    case LossKind::dlr:
      return "dlr";
  }
  return "?";
}

LossKind loss_from_name(const std::string& name) {
  if (name == "cross_entropy" || name == "ce") return LossKind::cross_entropy;
  if (name == "margin") return LossKind::margin;
  if (name == "dlr") return LossKind::dlr;
  throw ConfigError("loss: expected one of cross_entropy|margin|dlr, got '" + name + "'");
}

LossResult loss_with_grad(const Tensor& logits, std::span<const int> labels, LossKind kind) {
  check_labels(logits, labels);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (kind == LossKind::dlr && k < 4) {
    throw ShapeError("loss: dlr needs at least 4 classes, got " + std::to_string(k));
  }
  LossResult r{std::vector<double>(n), Tensor(logits.shape()), std::vector<bool>(n, false)};
  std::vector<std::size_t> order(k);
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data() + i * k;
    double* g = r.grad.data() + i * k;
    const std::size_t y = static_cast<std::size_t>(labels[i]);
    switch (kind) {
      case LossKind::cross_entropy: {
        const double mx = *std::max_element(z, z + k);
        double s = 0.0;
        for (std::size_t c = 0; c < k; ++c) s += std::exp(z[c] - mx);
        r.values[i] = mx + std::log(s) - z[y];
        for (std::size_t c = 0; c < k; ++c) g[c] = std::exp(z[c] - mx) / s;
        g[y] -= 1.0;
        break;
      }
      case LossKind::margin: {
        const std::size_t m = best_other(z, k, y);
        r.values[i] = z[m] - z[y];
        g[m] = 1.0;
        g[y] = -1.0;
        break;
      }
      case LossKind::dlr: {
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return z[a] > z[b]; });
        const double denom = z[order[0]] - z[order[2]];
        const std::size_t m = best_other(z, k, y);
        const double u = z[m] - z[y];
        if (denom == 0.0) {
          r.values[i] = 0.0;
          r.degenerate[i] = true;
          break;
        }
        r.values[i] = u / denom;
        g[m] += 1.0 / denom;
        g[y] -= 1.0 / denom;
        g[order[0]] -= u / (denom * denom);
        g[order[2]] += u / (denom * denom);
        break;
      }
    }
  }
  return r;
}

std::vector<double> loss_value(const Tensor& logits, std::span<const int> labels, LossKind kind) {
  return loss_with_grad(logits, labels, kind).values;
}

std::vector<bool> misclassified(const Tensor& logits, std::span<const int> labels) {
  const auto m = loss_value(logits, labels, LossKind::margin);
  std::vector<bool> out(m.size());
  for (std::size_t i = 0; i < m.size(); ++i) out[i] = m[i] > 0.0;
  return out;
}

std::vector<int> predictions(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double* z = logits.data() + i * k;
    out[i] = static_cast<int>(std::max_element(z, z + k) - z);
  }
  return out;
}

InputGradient loss_and_input_gradient(const Model& model, const Tensor& batch,
                                      std::span<const int> labels, LossKind kind, nn::Mode mode) {
  if (batch.rank() == 0 || labels.size() != batch.dim(0)) {
    throw ShapeError("gradient_wrt_input: " + std::to_string(labels.size()) +
                     " labels for batch " + shape_string(batch.shape()));
  }
  nn::Node node;
  nn::PassState state;
  state.mode = mode;
  state.update_running_stats = false;
  InputGradient out;
  out.logits = model.forward(batch, node, state);
  LossResult lr = loss_with_grad(out.logits, labels, kind);
  out.loss = std::move(lr.values);
  out.grad = model.backward(lr.grad, node, state);
  return out;
}

Tensor gradient_wrt_input(const Model& model, const Tensor& batch, std::span<const int> labels,
                          LossKind kind) {
  return loss_and_input_gradient(model, batch, labels, kind).grad;
}

Tensor predict_logits(const Model& model, const Tensor& batch, std::size_t chunk) {
  const std::size_t n = batch.dim(0);
  if (n <= chunk) {
    nn::Node node;
    nn::PassState state;
    return model.forward(batch, node, state);
  }
  Tensor out;
  for (std::size_t b = 0; b < n; b += chunk) {
    nn::Node node;
    nn::PassState state;
    Tensor part = model.forward(batch.slice(b, std::min(n, b + chunk)), node, state);
    if (out.empty()) out = Tensor(Shape{n, part.dim(1)});
    std::copy_n(part.data(), part.size(), out.data() + b * part.dim(1));
  }
  return out;
}

}  // namespace robarch
