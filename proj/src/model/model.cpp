#include "robarch/model.hpp"

namespace robarch {

Model::Model(ModelConfig config, nn::LayerPtr network)
    : config_(std::move(config)), network_(std::move(network)) {
  network_->collect("", params_, buffers_);
}

void Model::check_input(const Tensor& x) const {
  const auto& in = config_.input_size;
  if (x.rank() != 4 || x.dim(1) != in.channels) {
    throw ShapeError("model input: expected (N, " + std::to_string(in.channels) + ", H, W), got " +
                     shape_string(x.shape()));
  }
  if (config_.family == Family::xcit) {
    if (x.dim(2) % config_.token_size != 0 || x.dim(3) % config_.token_size != 0) {
      throw ShapeError("model input: spatial size must be divisible by token_size " +
                       std::to_string(config_.token_size) + ", got " + shape_string(x.shape()));
    }
    return;
  }
  if (x.dim(2) != in.height || x.dim(3) != in.width) {
    throw ShapeError("model input: expected spatial size " + std::to_string(in.height) + "x" +
                     std::to_string(in.width) + ", got " + shape_string(x.shape()));
  }
}

Tensor Model::forward(const Tensor& x, nn::Captures* captures) const {
  nn::Node node;
  nn::PassState state;
  state.mode = mode_;
  state.captures = captures;
  return forward(x, node, state);
}

Tensor Model::forward(const Tensor& x, nn::Node& node, const nn::PassState& state) const {
  check_input(x);
  return network_->forward(x, node, state);
}

Tensor Model::backward(const Tensor& grad_logits, nn::Node& node, const nn::PassState& state) const {
  return network_->backward(grad_logits, node, state);
}

nn::ParamGrads Model::make_grads() const {
  nn::ParamGrads g;
  g.reserve(params_.size());
  for (const auto* p : params_) g.emplace_back(p->value.shape());
  return g;
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto* p : params_) n += p->value.size();
  return n;
}

StateDict Model::state() const {
  StateDict s;
  for (const auto* p : params_) s.emplace(p->name, p->value);
  for (const auto& b : buffers_) s.emplace(b.name, *b.value);
  return s;
}

void Model::load_state(const StateDict& state) {
  auto fetch = [&](const std::string& name, const Tensor& current) -> const Tensor& {
    auto it = state.find(name);
    if (it == state.end()) throw ConfigError("state: missing entry '" + name + "'");
    if (it->second.shape() != current.shape()) {
      throw ConfigError("state: entry '" + name + "' has shape " + shape_string(it->second.shape()) +
                        ", expected " + shape_string(current.shape()));
    }
    return it->second;
  };
  const std::size_t expected = params_.size() + buffers_.size();
  if (state.size() != expected) {
    throw ConfigError("state: expected " + std::to_string(expected) + " entries, got " +
                      std::to_string(state.size()));
  }
  for (auto* p : params_) p->value = fetch(p->name, p->value);
  for (auto& b : buffers_) *b.value = fetch(b.name, *b.value);
}

std::vector<std::string> Model::describe() const {
  std::vector<std::string> out;
  network_->describe(out);
  return out;
}

Model Model::clone() const {
  Model m = build_model(config_, 0);
  m.load_state(state());
  m.set_mode(mode_);
  return m;
}

std::size_t count_parameters(const Model& model) { return model.parameter_count(); }

std::vector<BlockDescription> describe_blocks(const Model& model) {
  std::vector<BlockDescription> blocks;
  BlockDescription* open = nullptr;
  for (const auto& item : model.describe()) {
    if (item.rfind("block:", 0) == 0) {
      blocks.push_back({item.substr(6), {}});
      open = &blocks.back();
    } else if (item == "end") {
      open = nullptr;
    } else if (open) {
      open->layers.push_back(item);
    }
  }
  return blocks;
}

}  // namespace robarch
