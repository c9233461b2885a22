#include <algorithm>
#include <cmath>
#include <limits>

#include "robarch/kernels.hpp"
#include "robarch/nn.hpp"

namespace robarch::nn {

namespace {

Tensor& grad_slot(const PassState& state, const Parameter& p) {
  Tensor& g = (*state.grads)[p.index];
  if (g.shape() != p.value.shape()) g = Tensor(p.value.shape());
  return g;
}

void push_param(const std::string& prefix, const std::string& name, Parameter& p,
                std::vector<Parameter*>& params) {
  p.name = prefix.empty() ? name : prefix + "." + name;
  p.index = params.size();
  params.push_back(&p);
}

void require_rank(const Tensor& x, std::size_t rank, const char* who) {
  if (x.rank() != rank) {
    throw ShapeError(std::string(who) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_string(x.shape()));
  }
}

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace

double activation_value(Activation kind, double x) {
  if (kind == Activation::relu) return x > 0.0 ? x : 0.0;
  return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
}

double activation_derivative(Activation kind, double x) {
  if (kind == Activation::relu) return x > 0.0 ? 1.0 : 0.0;
  const double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
  return cdf + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

void Layer::collect(const std::string&, std::vector<Parameter*>&, std::vector<Buffer>&) {}

void accumulate_grad(const PassState& state, const Parameter& p, const Tensor& g) {
  if (!state.grads) return;
  grad_slot(state, p) += g;
}

// ---------------------------------------------------------------- containers

Tensor Sequential::forward(const Tensor& x, Node& node, const PassState& state) const {
  node.children.resize(layers_.size());
  Tensor h = x;
  for (std::size_t i = 0; i < layers_.size(); ++i) h = layers_[i]->forward(h, node.children[i], state);
  return h;
}

Tensor Sequential::backward(const Tensor& grad, Node& node, const PassState& state) const {
  Tensor g = grad;
  for (std::size_t i = layers_.size(); i-- > 0;) g = layers_[i]->backward(g, node.children[i], state);
  return g;
}

void Sequential::collect(const std::string& prefix, std::vector<Parameter*>& params,
                         std::vector<Buffer>& buffers) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    layers_[i]->collect(prefix.empty() ? std::to_string(i) : prefix + "." + std::to_string(i),
                        params, buffers);
  }
}

void Sequential::describe(std::vector<std::string>& out) const {
  for (const auto& l : layers_) l->describe(out);
}

void Block::describe(std::vector<std::string>& out) const {
  out.push_back("block:" + label_);
  body_->describe(out);
  out.push_back("end");
}

Tensor Residual::forward(const Tensor& x, Node& node, const PassState& state) const {
  Tensor z = branch_->forward(x, node.child(0), state);
  if (shortcut_) {
    z += shortcut_->forward(x, node.child(1), state);
  } else {
    z += x;
  }
  if (post_) return post_->forward(z, node.child(2), state);
  return z;
}

Tensor Residual::backward(const Tensor& grad, Node& node, const PassState& state) const {
  Tensor gz = post_ ? post_->backward(grad, node.child(2), state) : grad;
  Tensor gx = branch_->backward(gz, node.child(0), state);
  if (shortcut_) {
    gx += shortcut_->backward(gz, node.child(1), state);
  } else {
    gx += gz;
  }
  return gx;
}

void Residual::collect(const std::string& prefix, std::vector<Parameter*>& params,
                       std::vector<Buffer>& buffers) {
  branch_->collect(prefix + ".branch", params, buffers);
  if (shortcut_) shortcut_->collect(prefix + ".shortcut", params, buffers);
  if (post_) post_->collect(prefix + ".post", params, buffers);
}

void Residual::describe(std::vector<std::string>& out) const {
  branch_->describe(out);
  if (shortcut_) {
    out.push_back("shortcut:");
    shortcut_->describe(out);
  }
  out.push_back("add");
  if (post_) post_->describe(out);
}

// ---------------------------------------------------------------- conv

Conv2d::Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride,
               std::size_t pad, bool depthwise, bool bias)
    : in_(in), out_(out), kernel_(kernel), stride_(stride), pad_(pad), depthwise_(depthwise),
      has_bias_(bias) {
  if (depthwise && in != out) throw ShapeError("Conv2d: depthwise requires in == out");
  weight_.value = Tensor(depthwise ? Shape{out, 1, kernel, kernel} : Shape{out, in, kernel, kernel});
  weight_.init = Init::fan_out_normal;
  weight_.init_value = static_cast<double>(kernel * kernel * (depthwise ? 1 : out));
  if (bias) {
    bias_.value = Tensor(Shape{out});
    bias_.decay = false;
  }
}

Tensor Conv2d::forward(const Tensor& x, Node& node, const PassState&) const {
  require_rank(x, 4, "Conv2d");
  if (x.dim(1) != in_) throw ShapeError("Conv2d: expected " + std::to_string(in_) + " channels, got " + shape_string(x.shape()));
  kernels::ConvGeometry g{x.dim(0), in_, x.dim(2), x.dim(3), out_, kernel_, stride_, pad_, depthwise_};
  Tensor y(Shape{g.batch, out_, g.out_h(), g.out_w()});
  kernels::conv2d_forward(g, x.data(), weight_.value.data(), has_bias_ ? bias_.value.data() : nullptr,
                          y.data());
  node.saved.assign(1, x);
  return y;
}

Tensor Conv2d::backward(const Tensor& grad, Node& node, const PassState& state) const {
  const Tensor& x = node.saved.at(0);
  kernels::ConvGeometry g{x.dim(0), in_, x.dim(2), x.dim(3), out_, kernel_, stride_, pad_, depthwise_};
  Tensor dx(x.shape());
  kernels::conv2d_backward_input(g, grad.data(), weight_.value.data(), dx.data());
  if (state.grads) {
    double* db = has_bias_ ? grad_slot(state, bias_).data() : nullptr;
    kernels::conv2d_backward_weight(g, x.data(), grad.data(), grad_slot(state, weight_).data(), db);
  }
  return dx;
}

void Conv2d::collect(const std::string& prefix, std::vector<Parameter*>& params,
                     std::vector<Buffer>&) {
  push_param(prefix, "weight", weight_, params);
  if (has_bias_) push_param(prefix, "bias", bias_, params);
}

void Conv2d::describe(std::vector<std::string>& out) const {
  if (depthwise_) {
    out.push_back("dwconv" + std::to_string(kernel_) + "x" + std::to_string(kernel_));
  } else if (kernel_ == 1) {
    out.push_back(out_ > in_ ? "pw_expand" : out_ < in_ ? "pw_contract" : "pwconv");
  } else {
    out.push_back("conv" + std::to_string(kernel_) + "x" + std::to_string(kernel_) +
                  (stride_ == kernel_ ? "/patchify" : ""));
  }
}

// ---------------------------------------------------------------- batch norm

BatchNorm2d::BatchNorm2d(std::size_t channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps),
      running_mean_(Shape{channels}, 0.0), running_var_(Shape{channels}, 1.0) {
  gamma_.value = Tensor(Shape{channels}, 1.0);
  gamma_.init = Init::ones;
  gamma_.decay = false;
  beta_.value = Tensor(Shape{channels});
  beta_.decay = false;
}

Tensor BatchNorm2d::forward(const Tensor& x, Node& node, const PassState& state) const {
  require_rank(x, 4, "BatchNorm2d");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (c != channels_) throw ShapeError("BatchNorm2d: channel mismatch");
  const bool batch_stats = state.mode == Mode::train;
  Tensor inv_std(Shape{c});
  Tensor mean(Shape{c});
  if (batch_stats) {
    const double m = static_cast<double>(n * plane);
    for (std::size_t ch = 0; ch < c; ++ch) {
      double s = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * c + ch) * plane;
        for (std::size_t q = 0; q < plane; ++q) s += p[q];
      }
      const double mu = s / m;
      double v = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double* p = x.data() + (i * c + ch) * plane;
        for (std::size_t q = 0; q < plane; ++q) v += (p[q] - mu) * (p[q] - mu);
      }
      v /= m;
      mean[ch] = mu;
      inv_std[ch] = 1.0 / std::sqrt(v + eps_);
      if (state.update_running_stats) {
        running_mean_[ch] = (1.0 - momentum_) * running_mean_[ch] + momentum_ * mu;
        const double unbiased = m > 1.0 ? v * m / (m - 1.0) : v;
        running_var_[ch] = (1.0 - momentum_) * running_var_[ch] + momentum_ * unbiased;
      }
    }
  } else {
    for (std::size_t ch = 0; ch < c; ++ch) {
      mean[ch] = running_mean_[ch];
      inv_std[ch] = 1.0 / std::sqrt(running_var_[ch] + eps_);
    }
  }
  Tensor xhat(x.shape());
  Tensor y(x.shape());
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      const std::size_t off = (i * c + ch) * plane;
      const double mu = mean[ch], is = inv_std[ch], gm = gamma_.value[ch], bt = beta_.value[ch];
      for (std::size_t q = 0; q < plane; ++q) {
        const double h = (x[off + q] - mu) * is;
        xhat[off + q] = h;
        y[off + q] = gm * h + bt;
      }
    }
  }
  node.saved = {std::move(xhat), std::move(inv_std), Tensor(Shape{1}, batch_stats ? 1.0 : 0.0)};
  return y;
}

Tensor BatchNorm2d::backward(const Tensor& grad, Node& node, const PassState& state) const {
  const Tensor& xhat = node.saved.at(0);
  const Tensor& inv_std = node.saved.at(1);
  const bool batch_stats = node.saved.at(2)[0] != 0.0;
  const std::size_t n = xhat.dim(0), c = xhat.dim(1), plane = xhat.dim(2) * xhat.dim(3);
  const double m = static_cast<double>(n * plane);
  Tensor dx(xhat.shape());
  Tensor dgamma(Shape{c}), dbeta(Shape{c});
  for (std::size_t ch = 0; ch < c; ++ch) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * plane;
      for (std::size_t q = 0; q < plane; ++q) {
        sum_dy += grad[off + q];
        sum_dy_xhat += grad[off + q] * xhat[off + q];
      }
    }
    dgamma[ch] = sum_dy_xhat;
    dbeta[ch] = sum_dy;
    const double gm = gamma_.value[ch], is = inv_std[ch];
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t off = (i * c + ch) * plane;
      for (std::size_t q = 0; q < plane; ++q) {
        if (batch_stats) {
          dx[off + q] = gm * is / m * (m * grad[off + q] - sum_dy - xhat[off + q] * sum_dy_xhat);
        } else {
          dx[off + q] = gm * is * grad[off + q];
        }
      }
    }
  }
  accumulate_grad(state, gamma_, dgamma);
  accumulate_grad(state, beta_, dbeta);
  return dx;
}

void BatchNorm2d::collect(const std::string& prefix, std::vector<Parameter*>& params,
                          std::vector<Buffer>& buffers) {
  push_param(prefix, "weight", gamma_, params);
  push_param(prefix, "bias", beta_, params);
  buffers.push_back({prefix + ".running_mean", &running_mean_});
  buffers.push_back({prefix + ".running_var", &running_var_});
}

// ---------------------------------------------------------------- layer norm

LayerNorm::LayerNorm(std::size_t channels, bool channels_first, double eps)
    : channels_(channels), channels_first_(channels_first), eps_(eps) {
  gamma_.value = Tensor(Shape{channels}, 1.0);
  gamma_.init = Init::ones;
  gamma_.decay = false;
  beta_.value = Tensor(Shape{channels});
  beta_.decay = false;
}

namespace {

struct NormLayout {
  std::size_t outer, channels, inner;
};

NormLayout norm_layout(const Tensor& x, bool channels_first, std::size_t expected) {
  NormLayout l{};
  if (channels_first) {
    if (x.rank() < 2) throw ShapeError("LayerNorm: rank too small");
    l.outer = x.dim(0);
    l.channels = x.dim(1);
    l.inner = x.size() / std::max<std::size_t>(1, l.outer * l.channels);
  } else {
    l.channels = x.shape().back();
    l.outer = x.size() / std::max<std::size_t>(1, l.channels);
    l.inner = 1;
  }
  if (l.channels != expected) throw ShapeError("LayerNorm: channel mismatch in " + shape_string(x.shape()));
  return l;
}

}  // namespace

Tensor LayerNorm::forward(const Tensor& x, Node& node, const PassState&) const {
  const NormLayout l = norm_layout(x, channels_first_, channels_);
  Tensor xhat(x.shape()), y(x.shape()), inv_std(Shape{l.outer * l.inner});
  const double cn = static_cast<double>(l.channels);
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.channels * l.inner + in;
      double s = 0.0;
      for (std::size_t c = 0; c < l.channels; ++c) s += x[base + c * l.inner];
      const double mu = s / cn;
      double v = 0.0;
      for (std::size_t c = 0; c < l.channels; ++c) {
        const double d = x[base + c * l.inner] - mu;
        v += d * d;
      }
      const double is = 1.0 / std::sqrt(v / cn + eps_);
      inv_std[o * l.inner + in] = is;
      for (std::size_t c = 0; c < l.channels; ++c) {
        const std::size_t idx = base + c * l.inner;
        const double h = (x[idx] - mu) * is;
        xhat[idx] = h;
        y[idx] = gamma_.value[c] * h + beta_.value[c];
      }
    }
  }
  node.saved = {std::move(xhat), std::move(inv_std)};
  return y;
}

Tensor LayerNorm::backward(const Tensor& grad, Node& node, const PassState& state) const {
  const Tensor& xhat = node.saved.at(0);
  const Tensor& inv_std = node.saved.at(1);
  const NormLayout l = norm_layout(xhat, channels_first_, channels_);
  const double cn = static_cast<double>(l.channels);
  Tensor dx(xhat.shape()), dgamma(Shape{l.channels}), dbeta(Shape{l.channels});
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t in = 0; in < l.inner; ++in) {
      const std::size_t base = o * l.channels * l.inner + in;
      double s1 = 0.0, s2 = 0.0;
      for (std::size_t c = 0; c < l.channels; ++c) {
        const std::size_t idx = base + c * l.inner;
        const double dh = grad[idx] * gamma_.value[c];
        s1 += dh;
        s2 += dh * xhat[idx];
        dgamma[c] += grad[idx] * xhat[idx];
        dbeta[c] += grad[idx];
      }
      const double is = inv_std[o * l.inner + in];
      for (std::size_t c = 0; c < l.channels; ++c) {
        const std::size_t idx = base + c * l.inner;
        const double dh = grad[idx] * gamma_.value[c];
        dx[idx] = is / cn * (cn * dh - s1 - xhat[idx] * s2);
      }
    }
  }
  accumulate_grad(state, gamma_, dgamma);
  accumulate_grad(state, beta_, dbeta);
  return dx;
}

void LayerNorm::collect(const std::string& prefix, std::vector<Parameter*>& params,
                        std::vector<Buffer>&) {
  push_param(prefix, "weight", gamma_, params);
  push_param(prefix, "bias", beta_, params);
}

// ---------------------------------------------------------------- activations

Tensor ActivationLayer::forward(const Tensor& x, Node& node, const PassState&) const {
  Tensor y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = activation_value(kind_, x[i]);
  node.saved.assign(1, x);
  return y;
}

Tensor ActivationLayer::backward(const Tensor& grad, Node& node, const PassState&) const {
  const Tensor& x = node.saved.at(0);
  Tensor dx(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) dx[i] = grad[i] * activation_derivative(kind_, x[i]);
  return dx;
}

// ---------------------------------------------------------------- pooling

Tensor MaxPool2d::forward(const Tensor& x, Node& node, const PassState&) const {
  require_rank(x, 4, "MaxPool2d");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = (h + 2 * pad_ - kernel_) / stride_ + 1;
  const std::size_t ow = (w + 2 * pad_ - kernel_) / stride_ + 1;
  Tensor y(Shape{n, c, oh, ow});
  Tensor arg(Shape{n, c, oh, ow});
  for (std::size_t p = 0; p < n * c; ++p) {
    const double* xp = x.data() + p * h * w;
    for (std::size_t yo = 0; yo < oh; ++yo) {
      for (std::size_t xo = 0; xo < ow; ++xo) {
        double best = -std::numeric_limits<double>::infinity();
        std::size_t best_i = 0;
        for (std::size_t i = 0; i < kernel_; ++i) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(yo * stride_ + i) - static_cast<std::ptrdiff_t>(pad_);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t j = 0; j < kernel_; ++j) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * stride_ + j) - static_cast<std::ptrdiff_t>(pad_);
            if (ix < 0 || ix >= static_cast<std::ptrdiff_t>(w)) continue;
            const std::size_t idx = static_cast<std::size_t>(iy) * w + static_cast<std::size_t>(ix);
            if (xp[idx] > best) {
              best = xp[idx];
              best_i = idx;
            }
          }
        }
        y[(p * oh + yo) * ow + xo] = best;
        arg[(p * oh + yo) * ow + xo] = static_cast<double>(best_i);
      }
    }
  }
  node.saved = {std::move(arg), Tensor(Shape{h, w})};
  return y;
}

Tensor MaxPool2d::backward(const Tensor& grad, Node& node, const PassState&) const {
  const Tensor& arg = node.saved.at(0);
  const std::size_t h = node.saved.at(1).dim(0), w = node.saved.at(1).dim(1);
  const std::size_t n = grad.dim(0), c = grad.dim(1), plane = grad.dim(2) * grad.dim(3);
  Tensor dx(Shape{n, c, h, w});
  for (std::size_t p = 0; p < n * c; ++p) {
    for (std::size_t q = 0; q < plane; ++q) {
      dx[p * h * w + static_cast<std::size_t>(arg[p * plane + q])] += grad[p * plane + q];
    }
  }
  return dx;
}

Tensor GlobalAvgPool::forward(const Tensor& x, Node& node, const PassState&) const {
  require_rank(x, 4, "GlobalAvgPool");
  const std::size_t n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  Tensor y(Shape{n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    double s = 0.0;
    for (std::size_t q = 0; q < plane; ++q) s += x[p * plane + q];
    y[p] = s / static_cast<double>(plane);
  }
  node.saved.assign(1, Tensor(x.shape()));
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad, Node& node, const PassState&) const {
  Tensor dx(node.saved.at(0).shape());
  const std::size_t plane = dx.dim(2) * dx.dim(3);
  for (std::size_t p = 0; p < grad.size(); ++p) {
    const double g = grad[p] / static_cast<double>(plane);
    std::fill_n(dx.data() + p * plane, plane, g);
  }
  return dx;
}

Tensor Flatten::forward(const Tensor& x, Node& node, const PassState&) const {
  node.saved.assign(1, Tensor(Shape{x.rank()}));
  for (std::size_t i = 0; i < x.rank(); ++i) node.saved[0][i] = static_cast<double>(x.dim(i));
  return x.reshaped(Shape{x.dim(0), x.row_size()});
}

Tensor Flatten::backward(const Tensor& grad, Node& node, const PassState&) const {
  Shape s;
  for (double d : node.saved.at(0).values()) s.push_back(static_cast<std::size_t>(d));
  return grad.reshaped(s);
}

// ---------------------------------------------------------------- linear

Linear::Linear(std::size_t in, std::size_t out, bool bias) : in_(in), out_(out), has_bias_(bias) {
  weight_.value = Tensor(Shape{out, in});
  weight_.init = Init::trunc_normal;
  weight_.init_value = 0.02;
  if (bias) {
    bias_.value = Tensor(Shape{out});
    bias_.decay = false;
  }
}

Tensor Linear::forward(const Tensor& x, Node& node, const PassState&) const {
  if (x.rank() == 0 || x.shape().back() != in_) {
    throw ShapeError("Linear: expected last dim " + std::to_string(in_) + ", got " + shape_string(x.shape()));
  }
  const std::size_t rows = x.size() / in_;
  Shape s = x.shape();
  s.back() = out_;
  Tensor y(std::move(s));
  if (has_bias_) {
    for (std::size_t r = 0; r < rows; ++r) std::copy_n(bias_.value.data(), out_, y.data() + r * out_);
  }
  kernels::gemm(kernels::Trans::no, kernels::Trans::yes, rows, out_, in_, x.data(), in_,
                weight_.value.data(), in_, has_bias_ ? 1.0 : 0.0, y.data(), out_);
  node.saved.assign(1, x);
  return y;
}

Tensor Linear::backward(const Tensor& grad, Node& node, const PassState& state) const {
  const Tensor& x = node.saved.at(0);
  const std::size_t rows = x.size() / in_;
  Tensor dx(x.shape());
  kernels::gemm(kernels::Trans::no, kernels::Trans::no, rows, in_, out_, grad.data(), out_,
                weight_.value.data(), in_, 0.0, dx.data(), in_);
  if (state.grads) {
    kernels::gemm(kernels::Trans::yes, kernels::Trans::no, out_, in_, rows, grad.data(), out_,
                  x.data(), in_, 1.0, grad_slot(state, weight_).data(), in_);
    if (has_bias_) {
      Tensor& db = grad_slot(state, bias_);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t o = 0; o < out_; ++o) db[o] += grad[r * out_ + o];
      }
    }
  }
  return dx;
}

void Linear::collect(const std::string& prefix, std::vector<Parameter*>& params,
                     std::vector<Buffer>&) {
  push_param(prefix, "weight", weight_, params);
  if (has_bias_) push_param(prefix, "bias", bias_, params);
}

// ---------------------------------------------------------------- layer scale

LayerScale::LayerScale(std::size_t channels, double init, bool channels_first)
    : channels_(channels), channels_first_(channels_first) {
  gamma_.value = Tensor(Shape{channels}, init);
  gamma_.init = Init::constant;
  gamma_.init_value = init;
  gamma_.decay = false;
}

Tensor LayerScale::forward(const Tensor& x, Node& node, const PassState&) const {
  const NormLayout l = norm_layout(x, channels_first_, channels_);
  Tensor y(x.shape());
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t base = (o * l.channels + c) * l.inner;
      for (std::size_t in = 0; in < l.inner; ++in) y[base + in] = gamma_.value[c] * x[base + in];
    }
  }
  node.saved.assign(1, x);
  return y;
}

Tensor LayerScale::backward(const Tensor& grad, Node& node, const PassState& state) const {
  const Tensor& x = node.saved.at(0);
  const NormLayout l = norm_layout(x, channels_first_, channels_);
  Tensor dx(x.shape()), dg(Shape{channels_});
  for (std::size_t o = 0; o < l.outer; ++o) {
    for (std::size_t c = 0; c < l.channels; ++c) {
      const std::size_t base = (o * l.channels + c) * l.inner;
      for (std::size_t in = 0; in < l.inner; ++in) {
        dx[base + in] = gamma_.value[c] * grad[base + in];
        dg[c] += x[base + in] * grad[base + in];
      }
    }
  }
  accumulate_grad(state, gamma_, dg);
  return dx;
}

void LayerScale::collect(const std::string& prefix, std::vector<Parameter*>& params,
                         std::vector<Buffer>&) {
  push_param(prefix, "gamma", gamma_, params);
}

// ---------------------------------------------------------------- token plumbing

namespace {

Tensor permute_nchw_nhwc(const Tensor& x, bool to_last) {
  require_rank(x, 4, "Permute");
  if (to_last) {
    const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
    Tensor y(Shape{n, h, w, c});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t p = 0; p < h * w; ++p) y[(i * h * w + p) * c + ch] = x[(i * c + ch) * h * w + p];
    return y;
  }
  const std::size_t n = x.dim(0), h = x.dim(1), w = x.dim(2), c = x.dim(3);
  Tensor y(Shape{n, c, h, w});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < h * w; ++p)
      for (std::size_t ch = 0; ch < c; ++ch) y[(i * c + ch) * h * w + p] = x[(i * h * w + p) * c + ch];
  return y;
}

}  // namespace

Tensor Permute::forward(const Tensor& x, Node&, const PassState&) const {
  return permute_nchw_nhwc(x, to_last_);
}

Tensor Permute::backward(const Tensor& grad, Node&, const PassState&) const {
  return permute_nchw_nhwc(grad, !to_last_);
}

Tensor FlattenGrid::forward(const Tensor& x, Node& node, const PassState& state) const {
  require_rank(x, 4, "FlattenGrid");
  if (state.captures) {
    state.captures->grid_h = x.dim(1);
    state.captures->grid_w = x.dim(2);
  }
  node.saved.assign(1, Tensor(Shape{x.dim(1), x.dim(2)}));
  return x.reshaped(Shape{x.dim(0), x.dim(1) * x.dim(2), x.dim(3)});
}

Tensor FlattenGrid::backward(const Tensor& grad, Node& node, const PassState&) const {
  const Shape& g = node.saved.at(0).shape();
  return grad.reshaped(Shape{grad.dim(0), g[0], g[1], grad.dim(2)});
}

ClassTokenEmbedding::ClassTokenEmbedding(std::size_t tokens, std::size_t dim)
    : tokens_(tokens), dim_(dim) {
  cls_.value = Tensor(Shape{1, 1, dim});
  cls_.init = Init::trunc_normal;
  cls_.init_value = 0.02;
  cls_.decay = false;
  pos_.value = Tensor(Shape{1, tokens + 1, dim});
  pos_.init = Init::trunc_normal;
  pos_.init_value = 0.02;
  pos_.decay = false;
}

Tensor ClassTokenEmbedding::forward(const Tensor& x, Node&, const PassState& state) const {
  require_rank(x, 3, "ClassTokenEmbedding");
  if (x.dim(1) != tokens_ || x.dim(2) != dim_) {
    throw ShapeError("ClassTokenEmbedding: expected " + std::to_string(tokens_) + " tokens, got " +
                     shape_string(x.shape()));
  }
  if (state.captures) state.captures->has_cls_token = true;
  const std::size_t n = x.dim(0);
  Tensor y(Shape{n, tokens_ + 1, dim_});
  for (std::size_t i = 0; i < n; ++i) {
    double* yi = y.data() + i * (tokens_ + 1) * dim_;
    for (std::size_t d = 0; d < dim_; ++d) yi[d] = cls_.value[d] + pos_.value[d];
    for (std::size_t t = 0; t < tokens_; ++t) {
      for (std::size_t d = 0; d < dim_; ++d) {
        yi[(t + 1) * dim_ + d] = x[(i * tokens_ + t) * dim_ + d] + pos_.value[(t + 1) * dim_ + d];
      }
    }
  }
  return y;
}

Tensor ClassTokenEmbedding::backward(const Tensor& grad, Node&, const PassState& state) const {
  const std::size_t n = grad.dim(0);
  Tensor dx(Shape{n, tokens_, dim_});
  Tensor dcls(cls_.value.shape()), dpos(pos_.value.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double* gi = grad.data() + i * (tokens_ + 1) * dim_;
    for (std::size_t d = 0; d < dim_; ++d) dcls[d] += gi[d];
    for (std::size_t q = 0; q < (tokens_ + 1) * dim_; ++q) dpos[q] += gi[q];
    std::copy_n(gi + dim_, tokens_ * dim_, dx.data() + i * tokens_ * dim_);
  }
  accumulate_grad(state, cls_, dcls);
  accumulate_grad(state, pos_, dpos);
  return dx;
}

void ClassTokenEmbedding::collect(const std::string& prefix, std::vector<Parameter*>& params,
                                  std::vector<Buffer>&) {
  push_param(prefix, "cls_token", cls_, params);
  push_param(prefix, "pos_embed", pos_, params);
}

Tensor FourierPositions::forward(const Tensor& x, Node&, const PassState&) const {
  require_rank(x, 4, "FourierPositions");
  const std::size_t n = x.dim(0), gh = x.dim(1), gw = x.dim(2), d = x.dim(3);
  const std::size_t half = d / 2;
  Tensor y = x;
  constexpr double kTwoPi = 6.283185307179586;
  for (std::size_t r = 0; r < gh; ++r) {
    for (std::size_t c = 0; c < gw; ++c) {
      const double py = kTwoPi * static_cast<double>(r + 1) / static_cast<double>(gh);
      const double px = kTwoPi * static_cast<double>(c + 1) / static_cast<double>(gw);
      for (std::size_t k = 0; k < d; ++k) {
        const bool is_y = k < half;
        const std::size_t kk = is_y ? k : k - half;
        const std::size_t span = is_y ? half : d - half;
        const double freq = std::pow(10000.0, -2.0 * static_cast<double>(kk / 2) / static_cast<double>(std::max<std::size_t>(span, 1)));
        const double arg = (is_y ? py : px) * freq;
        const double v = kk % 2 == 0 ? std::sin(arg) : std::cos(arg);
        for (std::size_t i = 0; i < n; ++i) y[((i * gh + r) * gw + c) * d + k] += v;
      }
    }
  }
  return y;
}

Tensor FourierPositions::backward(const Tensor& grad, Node&, const PassState&) const { return grad; }

Tensor SelectClassToken::forward(const Tensor& x, Node& node, const PassState&) const {
  require_rank(x, 3, "SelectClassToken");
  const std::size_t n = x.dim(0), t = x.dim(1), d = x.dim(2);
  Tensor y(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(x.data() + i * t * d, d, y.data() + i * d);
  node.saved.assign(1, Tensor(Shape{t}));
  return y;
}

Tensor SelectClassToken::backward(const Tensor& grad, Node& node, const PassState&) const {
  const std::size_t n = grad.dim(0), d = grad.dim(1), t = node.saved.at(0).dim(0);
  Tensor dx(Shape{n, t, d});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(grad.data() + i * d, d, dx.data() + i * t * d);
  return dx;
}

Tensor MeanTokens::forward(const Tensor& x, Node& node, const PassState&) const {
  if (x.rank() < 3) throw ShapeError("MeanTokens: expected (N, ..., D)");
  const std::size_t n = x.dim(0), d = x.shape().back(), t = x.size() / (n * d);
  Tensor y(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t q = 0; q < t; ++q)
      for (std::size_t k = 0; k < d; ++k) y[i * d + k] += x[(i * t + q) * d + k];
  y *= 1.0 / static_cast<double>(t);
  node.saved.assign(1, Tensor(x.shape()));
  return y;
}

Tensor MeanTokens::backward(const Tensor& grad, Node& node, const PassState&) const {
  Tensor dx(node.saved.at(0).shape());
  const std::size_t n = grad.dim(0), d = grad.dim(1), t = dx.size() / (n * d);
  const double inv = 1.0 / static_cast<double>(t);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t q = 0; q < t; ++q)
      for (std::size_t k = 0; k < d; ++k) dx[(i * t + q) * d + k] = grad[i * d + k] * inv;
  return dx;
}

}  // namespace robarch::nn
