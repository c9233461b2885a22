#include <algorithm>

#include "robarch/attacks.hpp"
#include "robarch/random.hpp"

namespace robarch {

std::vector<bool> evaluate_success(const Model& model, const Tensor& batch, std::span<const int> labels) {
  return misclassified(predict_logits(model, batch), labels);
}

Tensor fgsm_batch(const Model& model, const Tensor& batch, std::span<const int> labels, double epsilon,
                  const FgsmOptions& options) {
  if (options.steps == 0) throw ConfigError("fgsm: steps must be >= 1");
  if (!(epsilon > 0.0)) throw ConfigError("fgsm: epsilon must be positive");
  const std::size_t n = batch.dim(0), rs = batch.row_size();
  Tensor x = batch;
  if (options.random_init) {
    for (std::size_t i = 0; i < n; ++i) {
      Rng rng = make_rng(options.seed, i);
      double* xi = x.data() + i * rs;
      for (std::size_t q = 0; q < rs; ++q) xi[q] += epsilon * uniform(rng, -1.0, 1.0);
      project_linf(std::span<double>(xi, rs), std::span<const double>(batch.data() + i * rs, rs), epsilon);
    }
  }
  const double step = options.steps == 1 ? epsilon : 2.0 * epsilon / static_cast<double>(options.steps);
  for (std::size_t s = 0; s < options.steps; ++s) {
    const Tensor g = loss_and_input_gradient(model, x, labels, LossKind::cross_entropy, options.mode).grad;
    for (std::size_t q = 0; q < x.size(); ++q) {
      x[q] += step * (g[q] > 0.0 ? 1.0 : (g[q] < 0.0 ? -1.0 : 0.0));
    }
    for (std::size_t i = 0; i < n; ++i) {
      project_linf(std::span<double>(x.data() + i * rs, rs), std::span<const double>(batch.data() + i * rs, rs),
                   epsilon);
    }
  }
  return x;
}

AttackOutcome fgsm(const Model& model, const Tensor& batch, std::span<const int> labels, double epsilon,
                   bool random_init, std::size_t steps, std::uint64_t seed) {
  FgsmOptions opt;
  opt.random_init = random_init;
  opt.steps = steps;
  opt.seed = seed;
  AttackOutcome out;
  out.adversarial = fgsm_batch(model, batch, labels, epsilon, opt);
  const Tensor logits = predict_logits(model, out.adversarial);
  out.best_loss = loss_value(logits, labels, LossKind::cross_entropy);
  out.success = misclassified(logits, labels);
  out.iterations.assign(batch.dim(0), steps);
  out.queries.assign(batch.dim(0), steps + 1);
  return out;
}

}  // namespace robarch
