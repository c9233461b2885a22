#pragma once

#include <memory>
#include <string>
#include <vector>

#include "robarch/tensor.hpp"

namespace robarch::nn {

enum class Mode { train, eval };
enum class Activation { relu, gelu };

enum class Init { trunc_normal, fan_out_normal, zeros, ones, constant };

struct Parameter {
  std::string name;
  Tensor value;
  Init init = Init::zeros;
  double init_value = 0.0;  // std for trunc_normal, fan_out for fan_out_normal, value for constant
  bool decay = true;
  std::size_t index = 0;  // position in the owning model's parameter list
};

// Non-trained state (BatchNorm running statistics) stored with checkpoints.
struct Buffer {
  std::string name;
  Tensor* value = nullptr;
};

using ParamGrads = std::vector<Tensor>;

// Hook capture for the last attention / XCA block of a transformer.
struct Captures {
  Tensor attention;  // (N, heads, T, T) row-stochastic attention weights
  Tensor queries;    // (N, heads, T, head_dim) as projected, before any normalisation
  Tensor keys;       // (N, heads, T, head_dim)
  std::size_t grid_h = 0;
  std::size_t grid_w = 0;
  bool has_cls_token = false;
};

struct PassState {
  Mode mode = Mode::eval;
  bool update_running_stats = true;  // only consulted in train mode
  ParamGrads* grads = nullptr;       // null: input gradients only
  Captures* captures = nullptr;
};

// Per-call cache. Layers read and write only their own node, so a const
// model can run any number of independent passes.
struct Node {
  std::vector<Tensor> saved;
  std::vector<Node> children;
  Node& child(std::size_t i) {
    if (children.size() <= i) children.resize(i + 1);
    return children[i];
  }
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, Node& node, const PassState& state) const = 0;
  virtual Tensor backward(const Tensor& grad, Node& node, const PassState& state) const = 0;
  virtual void collect(const std::string& prefix, std::vector<Parameter*>& params,
                       std::vector<Buffer>& buffers);
  // Appends a flat description of the computation, e.g. "dwconv7x7", "norm", "gelu".
  virtual void describe(std::vector<std::string>& out) const = 0;
};

using LayerPtr = std::unique_ptr<Layer>;

void accumulate_grad(const PassState& state, const Parameter& p, const Tensor& g);

class Sequential final : public Layer {
 public:
  Sequential() = default;
  explicit Sequential(std::vector<LayerPtr> layers) : layers_(std::move(layers)) {}
  Sequential& add(LayerPtr layer) {
    layers_.push_back(std::move(layer));
    return *this;
  }
  std::size_t size() const { return layers_.size(); }
  const Layer& at(std::size_t i) const { return *layers_.at(i); }
  Layer& at(std::size_t i) { return *layers_.at(i); }

  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void collect(const std::string& prefix, std::vector<Parameter*>& params,
               std::vector<Buffer>& buffers) override;
  void describe(std::vector<std::string>& out) const override;

 private:
  std::vector<LayerPtr> layers_;
};

// Named group of layers whose description is emitted as one bracketed block.
class Block final : public Layer {
 public:
  Block(std::string label, LayerPtr body) : label_(std::move(label)), body_(std::move(body)) {}
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override {
    return body_->forward(x, node, state);
  }
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override {
    return body_->backward(grad, node, state);
  }
  void collect(const std::string& prefix, std::vector<Parameter*>& params,
               std::vector<Buffer>& buffers) override {
    body_->collect(prefix, params, buffers);
  }
  void describe(std::vector<std::string>& out) const override;
  const std::string& label() const { return label_; }
  const Layer& body() const { return *body_; }

 private:
  std::string label_;
  LayerPtr body_;
};

// y = post(branch(x) + shortcut(x)); a null shortcut is the identity.
class Residual final : public Layer {
 public:
  Residual(LayerPtr branch, LayerPtr shortcut, LayerPtr post = nullptr)
      : branch_(std::move(branch)), shortcut_(std::move(shortcut)), post_(std::move(post)) {}
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void collect(const std::string& prefix, std::vector<Parameter*>& params,
               std::vector<Buffer>& buffers) override;
  void describe(std::vector<std::string>& out) const override;

 private:
  LayerPtr branch_;
  LayerPtr shortcut_;
  LayerPtr post_;
};

class Conv2d final : public Layer {
 public:
  // fan-out normal init; depthwise requires in == out.
  Conv2d(std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride, std::size_t pad,
         bool depthwise, bool bias);
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void collect(const std::string& prefix, std::vector<Parameter*>& params,
               std::vector<Buffer>& buffers) override;
  void describe(std::vector<std::string>& out) const override;

  Parameter& weight() { return weight_; }
  const Parameter& weight() const { return weight_; }

 private:
  std::size_t in_, out_, kernel_, stride_, pad_;
  bool depthwise_;
  bool has_bias_;
  Parameter weight_;
  Parameter bias_;
};

class BatchNorm2d final : public Layer {
 public:
  explicit BatchNorm2d(std::size_t channels, double momentum = 0.1, double eps = 1e-5);
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void collect(const std::string& prefix, std::vector<Parameter*>& params,
               std::vector<Buffer>& buffers) override;
  void describe(std::vector<std::string>& out) const override { out.push_back("norm"); }

 private:
  std::size_t channels_;
  double momentum_;
  double eps_;
  Parameter gamma_;
  Parameter beta_;
  // Updated by train-mode passes; train mode has a single writer.
  mutable Tensor running_mean_;
  mutable Tensor running_var_;
};

// LayerNorm over the channel axis: axis 1 of NCHW (channels_first) or the
// last axis of any tensor.
class LayerNorm final : public Layer {
 public:
  LayerNorm(std::size_t channels, bool channels_first, double eps = 1e-6);
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void collect(const std::string& prefix, std::vector<Parameter*>& params,
               std::vector<Buffer>& buffers) override;
  void describe(std::vector<std::string>& out) const override { out.push_back("norm"); }

 private:
  std::size_t channels_;
  bool channels_first_;
  double eps_;
  Parameter gamma_;
  Parameter beta_;
};

class ActivationLayer final : public Layer {
 public:
  explicit ActivationLayer(Activation kind) : kind_(kind) {}
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void describe(std::vector<std::string>& out) const override {
    out.push_back(kind_ == Activation::relu ? "relu" : "gelu");
  }

 private:
  Activation kind_;
};

class MaxPool2d final : public Layer {
 public:
  MaxPool2d(std::size_t kernel, std::size_t stride, std::size_t pad)
      : kernel_(kernel), stride_(stride), pad_(pad) {}
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void describe(std::vector<std::string>& out) const override { out.push_back("maxpool"); }

 private:
  std::size_t kernel_, stride_, pad_;
};

// NCHW -> (N, C)
class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void describe(std::vector<std::string>& out) const override { out.push_back("avgpool"); }
};

// (N, ...) -> (N, prod(...))
class Flatten final : public Layer {
 public:
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void describe(std::vector<std::string>& out) const override { out.push_back("flatten"); }
};

// Affine map on the last axis.
class Linear final : public Layer {
 public:
  Linear(std::size_t in, std::size_t out, bool bias = true);
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void collect(const std::string& prefix, std::vector<Parameter*>& params,
               std::vector<Buffer>& buffers) override;
  void describe(std::vector<std::string>& out) const override { out.push_back("linear"); }

  Parameter& weight() { return weight_; }
  Parameter& bias() { return bias_; }
  const Parameter& weight() const { return weight_; }
  const Parameter& bias() const { return bias_; }
  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }

 private:
  std::size_t in_, out_;
  bool has_bias_;
  Parameter weight_;
  Parameter bias_;
};

// Per-channel learnable scale of a residual branch.
class LayerScale final : public Layer {
 public:
  LayerScale(std::size_t channels, double init, bool channels_first);
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void collect(const std::string& prefix, std::vector<Parameter*>& params,
               std::vector<Buffer>& buffers) override;
  void describe(std::vector<std::string>& out) const override { out.push_back("layer_scale"); }

 private:
  std::size_t channels_;
  bool channels_first_;
  Parameter gamma_;
};

// NCHW <-> NHWC
class Permute final : public Layer {
 public:
  explicit Permute(bool to_channels_last) : to_last_(to_channels_last) {}
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void describe(std::vector<std::string>&) const override {}

 private:
  bool to_last_;
};

// (N, Hg, Wg, D) -> (N, Hg*Wg, D); records the grid for hook consumers.
class FlattenGrid final : public Layer {
 public:
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void describe(std::vector<std::string>&) const override {}
};

// Prepends a learned class token and adds learned positional embeddings.
class ClassTokenEmbedding final : public Layer {
 public:
  ClassTokenEmbedding(std::size_t tokens, std::size_t dim);
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void collect(const std::string& prefix, std::vector<Parameter*>& params,
               std::vector<Buffer>& buffers) override;
  void describe(std::vector<std::string>& out) const override { out.push_back("cls_pos_embed"); }

 private:
  std::size_t tokens_, dim_;
  Parameter cls_;
  Parameter pos_;
};

// Adds fixed 2D sinusoidal positions to an (N, Hg, Wg, D) token grid of any size.
class FourierPositions final : public Layer {
 public:
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void describe(std::vector<std::string>& out) const override { out.push_back("fourier_pos"); }
};

// (N, T, D) -> (N, D), token 0.
class SelectClassToken final : public Layer {
 public:
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void describe(std::vector<std::string>& out) const override { out.push_back("cls_select"); }
};

// (N, ..., D) -> (N, D), mean over all token axes.
class MeanTokens final : public Layer {
 public:
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void describe(std::vector<std::string>& out) const override { out.push_back("token_mean"); }
};

// Multi-head softmax self-attention on (N, T, D).
class SelfAttention final : public Layer {
 public:
  SelfAttention(std::size_t dim, std::size_t heads, bool capture);
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void collect(const std::string& prefix, std::vector<Parameter*>& params,
               std::vector<Buffer>& buffers) override;
  void describe(std::vector<std::string>& out) const override { out.push_back("attention"); }

  Linear& qkv() { return qkv_; }
  Linear& proj() { return proj_; }

 private:
  std::size_t dim_, heads_;
  bool capture_;
  Linear qkv_;
  Linear proj_;
};

// Cross-covariance attention on an (N, Hg, Wg, D) grid: queries and keys are
// l2-normalised along the token axis and attention mixes feature channels
// within a head, scaled by a learnable per-head temperature.
class CrossCovarianceAttention final : public Layer {
 public:
  CrossCovarianceAttention(std::size_t dim, std::size_t heads, bool capture);
  Tensor forward(const Tensor& x, Node& node, const PassState& state) const override;
  Tensor backward(const Tensor& grad, Node& node, const PassState& state) const override;
  void collect(const std::string& prefix, std::vector<Parameter*>& params,
               std::vector<Buffer>& buffers) override;
  void describe(std::vector<std::string>& out) const override { out.push_back("xca"); }

  Linear& qkv() { return qkv_; }

 private:
  std::size_t dim_, heads_;
  bool capture_;
  Linear qkv_;
  Linear proj_;
  Parameter temperature_;
};

double activation_value(Activation kind, double x);
double activation_derivative(Activation kind, double x);

}  // namespace robarch::nn
