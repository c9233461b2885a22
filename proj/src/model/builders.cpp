#include <cmath>

#include "robarch/model.hpp"
#include "robarch/random.hpp"

namespace robarch {

namespace {

using nn::LayerPtr;
using nn::Sequential;

template <class L, class... Args>
LayerPtr make(Args&&... args) {
  return std::make_unique<L>(std::forward<Args>(args)...);
}

LayerPtr seq(std::vector<LayerPtr> layers) { return std::make_unique<Sequential>(std::move(layers)); }

template <class... L>
LayerPtr seq_of(L&&... layers) {
  std::vector<LayerPtr> v;
  (v.push_back(std::forward<L>(layers)), ...);
  return seq(std::move(v));
}

LayerPtr block(const std::string& label, LayerPtr body) {
  return std::make_unique<nn::Block>(label, std::move(body));
}

class LadderBuilder {
 public:
  explicit LadderBuilder(const ModelConfig& c) : c_(c) {}

  LayerPtr norm(std::size_t channels) const {
    if (c_.norm_kind == NormKind::batch) return make<nn::BatchNorm2d>(channels);
    return make<nn::LayerNorm>(channels, true);
  }
  LayerPtr act() const { return make<nn::ActivationLayer>(c_.activation); }
  LayerPtr conv(std::size_t in, std::size_t out, std::size_t k, std::size_t s, std::size_t pad,
                bool bias, bool dw = false) const {
    return make<nn::Conv2d>(in, out, k, s, pad, dw, bias);
  }

  std::size_t base_width() const {
    return std::max<std::size_t>(
        1, static_cast<std::size_t>(std::lround(static_cast<double>(c_.embed_dim) * c_.width_multiplier)));
  }

  LayerPtr stem(std::size_t width) const {
    const std::size_t cin = c_.input_size.channels;
    if (c_.patchify_stem) {
      const std::size_t p = c_.token_size;
      return block("stem", seq_of(conv(cin, width, p, p, 0, c_.norm_kind == NormKind::layer), norm(width)));
    }
    return block("stem", seq_of(conv(cin, width, 7, 2, 3, false), norm(width), act(),
                                make<nn::MaxPool2d>(3, 2, 1)));
  }

  std::size_t stem_stride() const { return c_.patchify_stem ? c_.token_size : 4; }

  LayerPtr ladder_block(std::size_t in, std::size_t mid, std::size_t out, std::size_t stride) const {
    const std::size_t hidden = c_.inverted_bottleneck ? 4 * out : mid;
    auto spatial = [&](bool bias) {
      return conv(hidden, hidden, 3, stride, 1, bias, c_.depthwise_conv);
    };
    LayerPtr branch;
    LayerPtr post;
    if (c_.reduced_norm_act) {
      branch = seq_of(conv(in, hidden, 1, 1, 0, true), spatial(false), norm(hidden), act(),
                      conv(hidden, out, 1, 1, 0, true));
    } else {
      branch = seq_of(conv(in, hidden, 1, 1, 0, false), norm(hidden), act(), spatial(false),
                      norm(hidden), act(), conv(hidden, out, 1, 1, 0, false), norm(out));
      post = act();
    }
    LayerPtr shortcut;
    if (in != out || stride != 1) shortcut = seq_of(conv(in, out, 1, stride, 0, false), norm(out));
    return block(c_.inverted_bottleneck ? "inverted_bottleneck" : "bottleneck",
                 make<nn::Residual>(std::move(branch), std::move(shortcut), std::move(post)));
  }

  LayerPtr build_resnet_ladder() const {
    const std::size_t base = base_width();
    check_downsampling();
    std::vector<LayerPtr> layers;
    layers.push_back(stem(base));
    std::size_t channels = base;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t mid = base << i;
      const std::size_t out = c_.inverted_bottleneck ? mid : 4 * mid;
      if (c_.separate_downsample && i > 0) {
        layers.push_back(downsample(channels, out));
        channels = out;
      }
      for (std::size_t b = 0; b < c_.stage_blocks[i]; ++b) {
        const std::size_t stride = (!c_.separate_downsample && i > 0 && b == 0) ? 2 : 1;
        layers.push_back(ladder_block(channels, mid, out, stride));
        channels = out;
      }
    }
    layers.push_back(block("head", seq_of(make<nn::GlobalAvgPool>(),
                                          make<nn::Linear>(channels, c_.num_classes))));
    return seq(std::move(layers));
  }

  LayerPtr downsample(std::size_t in, std::size_t out) const {
    return block("downsample", seq_of(norm(in), conv(in, out, 2, 2, 0, true)));
  }

  void check_downsampling() const {
    if (!c_.separate_downsample) return;
    const std::size_t s = stem_stride();
    const std::size_t h = c_.input_size.height / s, w = c_.input_size.width / s;
    if (h < 8 || w < 8) {
      throw ConfigError("separate_downsample needs a feature map of at least 8x8 after the stem, got " +
                        std::to_string(h) + "x" + std::to_string(w));
    }
  }

  LayerPtr convnext_block(std::size_t d) const {
    std::vector<LayerPtr> body;
    body.push_back(conv(d, d, 7, 1, 3, true, true));
    body.push_back(make<nn::LayerNorm>(d, true));
    body.push_back(conv(d, 4 * d, 1, 1, 0, true));
    body.push_back(make<nn::ActivationLayer>(nn::Activation::gelu));
    body.push_back(conv(4 * d, d, 1, 1, 0, true));
    if (c_.layer_scale) body.push_back(make<nn::LayerScale>(d, *c_.layer_scale, true));
    return block("convnext_block", make<nn::Residual>(seq(std::move(body)), nullptr));
  }

  LayerPtr build_convnext() const {
    const std::size_t base = base_width();
    check_downsampling();
    std::vector<LayerPtr> layers;
    layers.push_back(stem(base));
    std::size_t channels = base;
    for (std::size_t i = 0; i < 4; ++i) {
      const std::size_t d = base << i;
      if (i > 0) {
        layers.push_back(downsample(channels, d));
        channels = d;
      }
      for (std::size_t b = 0; b < c_.stage_blocks[i]; ++b) layers.push_back(convnext_block(d));
    }
    layers.push_back(block("head", seq_of(make<nn::GlobalAvgPool>(), make<nn::LayerNorm>(channels, false),
                                          make<nn::Linear>(channels, c_.num_classes))));
    return seq(std::move(layers));
  }

 private:
  const ModelConfig& c_;
};

LayerPtr mlp_branch(std::size_t d) {
  return seq_of(make<nn::LayerNorm>(d, false), make<nn::Linear>(d, 4 * d),
                make<nn::ActivationLayer>(nn::Activation::gelu), make<nn::Linear>(4 * d, d));
}

LayerPtr build_vit(const ModelConfig& c) {
  const std::size_t d = c.embed_dim, p = c.token_size;
  const std::size_t tokens = (c.input_size.height / p) * (c.input_size.width / p);
  std::vector<LayerPtr> layers;
  layers.push_back(block("patch_embed",
                         seq_of(make<nn::Conv2d>(c.input_size.channels, d, p, p, 0, false, true),
                                make<nn::Permute>(true), make<nn::FlattenGrid>(),
                                make<nn::ClassTokenEmbedding>(tokens, d))));
  for (std::size_t k = 0; k < c.depth; ++k) {
    LayerPtr attn = seq_of(make<nn::LayerNorm>(d, false),
                           make<nn::SelfAttention>(d, c.num_heads, k + 1 == c.depth));
    layers.push_back(block("transformer_block",
                           seq_of(make<nn::Residual>(std::move(attn), nullptr),
                                  make<nn::Residual>(mlp_branch(d), nullptr))));
  }
  layers.push_back(block("head", seq_of(make<nn::LayerNorm>(d, false), make<nn::SelectClassToken>(),
                                        make<nn::Linear>(d, c.num_classes))));
  return seq(std::move(layers));
}

LayerPtr build_xcit(const ModelConfig& c) {
  const std::size_t d = c.embed_dim, p = c.token_size;
  std::vector<LayerPtr> layers;
  layers.push_back(block("patch_embed",
                         seq_of(make<nn::Conv2d>(c.input_size.channels, d, p, p, 0, false, true),
                                make<nn::Permute>(true), make<nn::FourierPositions>())));
  for (std::size_t k = 0; k < c.depth; ++k) {
    LayerPtr xca = seq_of(make<nn::LayerNorm>(d, false),
                          make<nn::CrossCovarianceAttention>(d, c.num_heads, k + 1 == c.depth));
    LayerPtr lpi = seq_of(make<nn::LayerNorm>(d, false), make<nn::Permute>(false),
                          make<nn::Conv2d>(d, d, 3, 1, 1, true, true),
                          make<nn::ActivationLayer>(nn::Activation::gelu), make<nn::BatchNorm2d>(d),
                          make<nn::Conv2d>(d, d, 3, 1, 1, true, true), make<nn::Permute>(true));
    layers.push_back(block("xca_block", seq_of(make<nn::Residual>(std::move(xca), nullptr),
                                               make<nn::Residual>(std::move(lpi), nullptr),
                                               make<nn::Residual>(mlp_branch(d), nullptr))));
  }
  layers.push_back(block("head", seq_of(make<nn::LayerNorm>(d, false), make<nn::MeanTokens>(),
                                        make<nn::Linear>(d, c.num_classes))));
  return seq(std::move(layers));
}

LayerPtr build_network(const ModelConfig& c) {
  const auto& in = c.input_size;
  const std::size_t flat = in.channels * in.height * in.width;
  switch (c.family) {
    case Family::resnet_ladder:
      return LadderBuilder(c).build_resnet_ladder();
    case Family::convnext:
      return LadderBuilder(c).build_convnext();
    case Family::vit:
      return build_vit(c);
    case Family::xcit:
      return build_xcit(c);
    case Family::linear:
      return seq_of(make<nn::Flatten>(), make<nn::Linear>(flat, c.num_classes));
    case Family::mlp:
      return seq_of(make<nn::Flatten>(), make<nn::Linear>(flat, c.hidden_dim),
                    make<nn::ActivationLayer>(c.activation), make<nn::Linear>(c.hidden_dim, c.num_classes));
  }
  throw ConfigError("family: unsupported");
}

void initialize(std::vector<nn::Parameter*>& params, std::uint64_t seed) {
  Rng rng = make_rng(seed, 0x1417);
  for (auto* p : params) {
    auto& v = p->value;
    switch (p->init) {
      case nn::Init::trunc_normal:
        for (auto& x : v.values()) x = truncated_normal(rng, p->init_value);
        break;
      case nn::Init::fan_out_normal: {
        const double std = std::sqrt(2.0 / p->init_value);
        for (auto& x : v.values()) x = std * standard_normal(rng);
        break;
      }
      case nn::Init::zeros:
        v.fill(0.0);
        break;
      case nn::Init::ones:
        v.fill(1.0);
        break;
      case nn::Init::constant:
        v.fill(p->init_value);
        break;
    }
  }
}

}  // namespace

Model build_model(const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  Model model(config, build_network(config));
  initialize(model.parameters(), seed);
  return model;
}

}  // namespace robarch
