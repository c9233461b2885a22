#include <cmath>

#include "robarch/train.hpp"

namespace robarch {

AdamW::AdamW(std::vector<nn::Parameter*> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), b1_(beta1), b2_(beta2), eps_(eps) {
  for (const auto* p : params_) {
    m_.emplace_back(p->value.shape());
    v_.emplace_back(p->value.shape());
  }
}

void AdamW::step(const nn::ParamGrads& grads, double lr, double weight_decay) {
  if (grads.size() != params_.size()) throw ShapeError("AdamW: gradient count does not match parameters");
  ++t_;
  const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& w = params_[k]->value;
    const Tensor& g = grads[k];
    require_same_shape(w, g, "AdamW");
    const double decay = params_[k]->decay ? 1.0 - lr * weight_decay : 1.0;
    double* m = m_[k].data();
    double* v = v_[k].data();
    for (std::size_t q = 0; q < w.size(); ++q) {
      m[q] = b1_ * m[q] + (1.0 - b1_) * g[q];
      v[q] = b2_ * v[q] + (1.0 - b2_) * g[q] * g[q];
      w[q] = w[q] * decay - lr * (m[q] / c1) / (std::sqrt(v[q] / c2) + eps_);
    }
  }
}

}  // namespace robarch
