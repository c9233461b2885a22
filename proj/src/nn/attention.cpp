#include <algorithm>
#include <cmath>

#include "robarch/nn.hpp"

namespace robarch::nn {

namespace {

constexpr double kNormEps = 1e-12;

void softmax_rows(double* s, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = s + r * cols;
    const double mx = *std::max_element(row, row + cols);
    double z = 0.0;
    for (std::size_t c = 0; c < cols; ++c) {
      row[c] = std::exp(row[c] - mx);
      z += row[c];
    }
    for (std::size_t c = 0; c < cols; ++c) row[c] /= z;
  }
}

// dS = P * (dP - rowsum(P * dP)), in place over dp.
void softmax_backward_rows(const double* p, double* dp, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    const double* pr = p + r * cols;
    double* dr = dp + r * cols;
    double dot = 0.0;
    for (std::size_t c = 0; c < cols; ++c) dot += pr[c] * dr[c];
    for (std::size_t c = 0; c < cols; ++c) dr[c] = pr[c] * (dr[c] - dot);
  }
}

void capture_qk(const Tensor& qkv, std::size_t n, std::size_t t, std::size_t dim,
                std::size_t heads, Captures& cap) {
  const std::size_t hd = dim / heads;
  cap.queries = Tensor(Shape{n, heads, t, hd});
  cap.keys = Tensor(Shape{n, heads, t, hd});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t q = 0; q < t; ++q)
        for (std::size_t d = 0; d < hd; ++d) {
          const std::size_t src = (i * t + q) * 3 * dim + h * hd + d;
          const std::size_t dst = ((i * heads + h) * t + q) * hd + d;
          cap.queries[dst] = qkv[src];
          cap.keys[dst] = qkv[src + dim];
        }
}

}  // namespace

// ---------------------------------------------------------------- self attention

SelfAttention::SelfAttention(std::size_t dim, std::size_t heads, bool capture)
    : dim_(dim), heads_(heads), capture_(capture), qkv_(dim, 3 * dim), proj_(dim, dim) {
  if (heads == 0 || dim % heads != 0) throw ConfigError("attention: dim must be divisible by heads");
}

Tensor SelfAttention::forward(const Tensor& x, Node& node, const PassState& state) const {
  if (x.rank() != 3 || x.dim(2) != dim_) throw ShapeError("SelfAttention: expected (N, T, D)");
  const std::size_t n = x.dim(0), t = x.dim(1), hd = dim_ / heads_, ld = 3 * dim_;
  Tensor qkv = qkv_.forward(x, node.child(0), state);
  Tensor probs(Shape{n, heads_, t, t});
  Tensor out(Shape{n, t, dim_});
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
#pragma omp parallel for collapse(2) schedule(static) if (n * heads_ > 1)
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < heads_; ++h) {
      const double* base = qkv.data() + i * t * ld + h * hd;
      double* p = probs.data() + (i * heads_ + h) * t * t;
      for (std::size_t a = 0; a < t; ++a) {
        for (std::size_t b = 0; b < t; ++b) {
          double s = 0.0;
          for (std::size_t d = 0; d < hd; ++d) s += base[a * ld + d] * base[b * ld + dim_ + d];
          p[a * t + b] = s * scale;
        }
      }
      softmax_rows(p, t, t);
      for (std::size_t a = 0; a < t; ++a) {
        double* o = out.data() + (i * t + a) * dim_ + h * hd;
        for (std::size_t b = 0; b < t; ++b) {
          const double w = p[a * t + b];
          const double* v = base + b * ld + 2 * dim_;
          for (std::size_t d = 0; d < hd; ++d) o[d] += w * v[d];
        }
      }
    }
  }
  if (capture_ && state.captures) {
    state.captures->attention = probs;
    capture_qk(qkv, n, t, dim_, heads_, *state.captures);
  }
  Tensor y = proj_.forward(out, node.child(1), state);
  node.saved = {std::move(qkv), std::move(probs)};
  return y;
}

Tensor SelfAttention::backward(const Tensor& grad, Node& node, const PassState& state) const {
  const Tensor& qkv = node.saved.at(0);
  const Tensor& probs = node.saved.at(1);
  const std::size_t n = qkv.dim(0), t = qkv.dim(1), hd = dim_ / heads_, ld = 3 * dim_;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  Tensor gout = proj_.backward(grad, node.child(1), state);
  Tensor dqkv(qkv.shape());
#pragma omp parallel for collapse(2) schedule(static) if (n * heads_ > 1)
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < heads_; ++h) {
      const double* base = qkv.data() + i * t * ld + h * hd;
      double* dbase = dqkv.data() + i * t * ld + h * hd;
      const double* p = probs.data() + (i * heads_ + h) * t * t;
      std::vector<double> dp(t * t);
      for (std::size_t a = 0; a < t; ++a) {
        const double* go = gout.data() + (i * t + a) * dim_ + h * hd;
        for (std::size_t b = 0; b < t; ++b) {
          const double* v = base + b * ld + 2 * dim_;
          double* dv = dbase + b * ld + 2 * dim_;
          double s = 0.0;
          const double w = p[a * t + b];
          for (std::size_t d = 0; d < hd; ++d) {
            s += go[d] * v[d];
            dv[d] += w * go[d];
          }
          dp[a * t + b] = s;
        }
      }
      softmax_backward_rows(p, dp.data(), t, t);
      for (std::size_t a = 0; a < t; ++a) {
        for (std::size_t b = 0; b < t; ++b) {
          const double ds = dp[a * t + b] * scale;
          const double* q = base + a * ld;
          const double* k = base + b * ld + dim_;
          double* dq = dbase + a * ld;
          double* dk = dbase + b * ld + dim_;
          for (std::size_t d = 0; d < hd; ++d) {
            dq[d] += ds * k[d];
            dk[d] += ds * q[d];
          }
        }
      }
    }
  }
  return qkv_.backward(dqkv, node.child(0), state);
}

void SelfAttention::collect(const std::string& prefix, std::vector<Parameter*>& params,
                            std::vector<Buffer>& buffers) {
  qkv_.collect(prefix + ".qkv", params, buffers);
  proj_.collect(prefix + ".proj", params, buffers);
}

// ---------------------------------------------------------------- cross-covariance attention

CrossCovarianceAttention::CrossCovarianceAttention(std::size_t dim, std::size_t heads, bool capture)
    : dim_(dim), heads_(heads), capture_(capture), qkv_(dim, 3 * dim), proj_(dim, dim) {
  if (heads == 0 || dim % heads != 0) throw ConfigError("xca: dim must be divisible by heads");
  temperature_.value = Tensor(Shape{heads}, 1.0);
  temperature_.init = Init::ones;
  temperature_.decay = false;
}

// Saved: qkv, normalised q, normalised k, q norms, k norms, softmax P, raw logits C.
Tensor CrossCovarianceAttention::forward(const Tensor& x, Node& node,
                                         const PassState& state) const {
  if (x.rank() < 3 || x.shape().back() != dim_) {
    throw ShapeError("CrossCovarianceAttention: expected (N, ..., D), got " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), t = x.size() / (n * dim_), hd = dim_ / heads_, ld = 3 * dim_;
  Tensor qkv = qkv_.forward(x, node.child(0), state);
  Tensor qn(Shape{n, heads_, t, hd}), kn(Shape{n, heads_, t, hd});
  Tensor qnorm(Shape{n, heads_, hd}), knorm(Shape{n, heads_, hd});
  Tensor probs(Shape{n, heads_, hd, hd}), logits(Shape{n, heads_, hd, hd});
  Shape out_shape = x.shape();
  Tensor out(out_shape);
#pragma omp parallel for collapse(2) schedule(static) if (n * heads_ > 1)
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < heads_; ++h) {
      const std::size_t nh = i * heads_ + h;
      const double* base = qkv.data() + i * t * ld + h * hd;
      double* qh = qn.data() + nh * t * hd;
      double* kh = kn.data() + nh * t * hd;
      for (std::size_t d = 0; d < hd; ++d) {
        double sq = 0.0, sk = 0.0;
        for (std::size_t q = 0; q < t; ++q) {
          const double a = base[q * ld + d], b = base[q * ld + dim_ + d];
          sq += a * a;
          sk += b * b;
        }
        const double nq = std::max(std::sqrt(sq), kNormEps), nk = std::max(std::sqrt(sk), kNormEps);
        qnorm[nh * hd + d] = nq;
        knorm[nh * hd + d] = nk;
        for (std::size_t q = 0; q < t; ++q) {
          qh[q * hd + d] = base[q * ld + d] / nq;
          kh[q * hd + d] = base[q * ld + dim_ + d] / nk;
        }
      }
      double* c = logits.data() + nh * hd * hd;
      double* p = probs.data() + nh * hd * hd;
      for (std::size_t q = 0; q < t; ++q)
        for (std::size_t a = 0; a < hd; ++a)
          for (std::size_t b = 0; b < hd; ++b) c[a * hd + b] += qh[q * hd + a] * kh[q * hd + b];
      const double tau = temperature_.value[h];
      for (std::size_t e = 0; e < hd * hd; ++e) p[e] = tau * c[e];
      softmax_rows(p, hd, hd);
      for (std::size_t q = 0; q < t; ++q) {
        const double* v = base + q * ld + 2 * dim_;
        double* o = out.data() + (i * t + q) * dim_ + h * hd;
        for (std::size_t a = 0; a < hd; ++a) {
          double s = 0.0;
          for (std::size_t b = 0; b < hd; ++b) s += p[a * hd + b] * v[b];
          o[a] = s;
        }
      }
    }
  }
  if (capture_ && state.captures) {
    state.captures->attention = probs;
    capture_qk(qkv, n, t, dim_, heads_, *state.captures);
    state.captures->has_cls_token = false;
    if (x.rank() == 4) {
      state.captures->grid_h = x.dim(1);
      state.captures->grid_w = x.dim(2);
    }
  }
  Tensor y = proj_.forward(out, node.child(1), state);
  node.saved = {std::move(qkv), std::move(qn), std::move(kn), std::move(qnorm),
                std::move(knorm), std::move(probs), std::move(logits)};
  return y;
}

Tensor CrossCovarianceAttention::backward(const Tensor& grad, Node& node,
                                          const PassState& state) const {
  const Tensor& qkv = node.saved.at(0);
  const Tensor& qn = node.saved.at(1);
  const Tensor& kn = node.saved.at(2);
  const Tensor& qnorm = node.saved.at(3);
  const Tensor& knorm = node.saved.at(4);
  const Tensor& probs = node.saved.at(5);
  const Tensor& logits = node.saved.at(6);
  const std::size_t n = qkv.dim(0), t = qkv.size() / (n * 3 * dim_), hd = dim_ / heads_, ld = 3 * dim_;
  Tensor gout = proj_.backward(grad, node.child(1), state);
  Tensor dqkv(qkv.shape());
  Tensor dtau(Shape{n, heads_});
#pragma omp parallel for collapse(2) schedule(static) if (n * heads_ > 1)
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t h = 0; h < heads_; ++h) {
      const std::size_t nh = i * heads_ + h;
      const double* base = qkv.data() + i * t * ld + h * hd;
      double* dbase = dqkv.data() + i * t * ld + h * hd;
      const double* p = probs.data() + nh * hd * hd;
      const double* c = logits.data() + nh * hd * hd;
      const double* qh = qn.data() + nh * t * hd;
      const double* kh = kn.data() + nh * t * hd;
      std::vector<double> dp(hd * hd, 0.0);
      for (std::size_t q = 0; q < t; ++q) {
        const double* go = gout.data() + (i * t + q) * dim_ + h * hd;
        const double* v = base + q * ld + 2 * dim_;
        double* dv = dbase + q * ld + 2 * dim_;
        for (std::size_t a = 0; a < hd; ++a) {
          for (std::size_t b = 0; b < hd; ++b) {
            dp[a * hd + b] += go[a] * v[b];
            dv[b] += go[a] * p[a * hd + b];
          }
        }
      }
      softmax_backward_rows(p, dp.data(), hd, hd);
      const double tau = temperature_.value[h];
      double gt = 0.0;
      for (std::size_t e = 0; e < hd * hd; ++e) {
        gt += dp[e] * c[e];
        dp[e] *= tau;
      }
      dtau[nh] = gt;
      std::vector<double> dqh(t * hd, 0.0), dkh(t * hd, 0.0);
      for (std::size_t q = 0; q < t; ++q) {
        for (std::size_t a = 0; a < hd; ++a) {
          for (std::size_t b = 0; b < hd; ++b) {
            const double g = dp[a * hd + b];
            dqh[q * hd + a] += g * kh[q * hd + b];
            dkh[q * hd + b] += g * qh[q * hd + a];
          }
        }
      }
      for (std::size_t d = 0; d < hd; ++d) {
        const double nq = qnorm[nh * hd + d], nk = knorm[nh * hd + d];
        double sq = 0.0, sk = 0.0;
        for (std::size_t q = 0; q < t; ++q) {
          sq += qh[q * hd + d] * dqh[q * hd + d];
          sk += kh[q * hd + d] * dkh[q * hd + d];
        }
        const bool q_clamped = nq <= kNormEps, k_clamped = nk <= kNormEps;
        for (std::size_t q = 0; q < t; ++q) {
          dbase[q * ld + d] = (dqh[q * hd + d] - (q_clamped ? 0.0 : qh[q * hd + d] * sq)) / nq;
          dbase[q * ld + dim_ + d] = (dkh[q * hd + d] - (k_clamped ? 0.0 : kh[q * hd + d] * sk)) / nk;
        }
      }
    }
  }
  if (state.grads) {
    Tensor gtemp(Shape{heads_});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t h = 0; h < heads_; ++h) gtemp[h] += dtau[i * heads_ + h];
    accumulate_grad(state, temperature_, gtemp);
  }
  return qkv_.backward(dqkv, node.child(0), state);
}

void CrossCovarianceAttention::collect(const std::string& prefix, std::vector<Parameter*>& params,
                                       std::vector<Buffer>& buffers) {
  qkv_.collect(prefix + ".qkv", params, buffers);
  proj_.collect(prefix + ".proj", params, buffers);
  temperature_.name = prefix + ".temperature";
  temperature_.index = params.size();
  params.push_back(&temperature_);
}

}  // namespace robarch::nn
