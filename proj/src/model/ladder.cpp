#include "robarch/ladder.hpp"

namespace robarch {

namespace {

constexpr std::pair<const char*, LadderStep> kSteps[] = {
    {"stage_ratio", LadderStep::stage_ratio},
    {"gelu", LadderStep::gelu},
    {"depthwise_width", LadderStep::depthwise_width},
    {"patchify_stem", LadderStep::patchify_stem},
    {"inverted_bottleneck", LadderStep::inverted_bottleneck},
    {"fewer_act_norm", LadderStep::fewer_act_norm},
    {"layernorm", LadderStep::layernorm},
    {"separate_downsample", LadderStep::separate_downsample},
    {"layer_scale", LadderStep::layer_scale},
};

constexpr double kLayerScaleInit = 1e-6;

}  // namespace

const char* ladder_step_name(LadderStep step) {
  for (const auto& [name, s] : kSteps) {
    if (s == step) return name;
  }
  return "?";
}

LadderStep ladder_step_from_name(const std::string& name) {
  for (const auto& [n, s] : kSteps) {
    if (name == n) return s;
  }
  std::string known;
  for (const auto& [n, s] : kSteps) known += (known.empty() ? "" : "|") + std::string(n);
  throw ConfigError("ladder step: expected one of " + known + ", got '" + name + "'");
}

ModelConfig apply_ladder_step(const ModelConfig& config, LadderStep step) {
  const Family required = step == LadderStep::layer_scale ? Family::convnext : Family::resnet_ladder;
  if (config.family != required) {
    throw ConfigError(std::string("ladder step '") + ladder_step_name(step) +
                      "' is not applicable to family=" + family_name(config.family) +
                      " (requires family=" + family_name(required) + ")");
  }
  ModelConfig c = config;
  switch (step) {
    case LadderStep::stage_ratio:
      c.stage_blocks = {3, 3, 9, 3};
      break;
    case LadderStep::gelu:
      c.activation = nn::Activation::gelu;
      break;
    case LadderStep::depthwise_width:
      c.depthwise_conv = true;
      c.width_multiplier = 1.5;
      break;
    case LadderStep::patchify_stem:
      c.patchify_stem = true;
      break;
    case LadderStep::inverted_bottleneck:
      c.inverted_bottleneck = true;
      break;
    case LadderStep::fewer_act_norm:
      c.reduced_norm_act = true;
      break;
    case LadderStep::layernorm:
      c.norm_kind = NormKind::layer;
      break;
    case LadderStep::separate_downsample:
      c.separate_downsample = true;
      break;
    case LadderStep::layer_scale:
      c.layer_scale = kLayerScaleInit;
      break;
  }
  return c;
}

ModelConfig convnext_from_ladder(const ModelConfig& config) {
  if (config.family != Family::resnet_ladder) {
    throw ConfigError(std::string("convnext_from_ladder: expected family=resnet_ladder, got family=") +
                      family_name(config.family));
  }
  ModelConfig c = config;
  c.family = Family::convnext;
  c.activation = nn::Activation::gelu;
  c.depthwise_conv = true;
  c.patchify_stem = true;
  c.inverted_bottleneck = true;
  c.reduced_norm_act = true;
  c.norm_kind = NormKind::layer;
  c.separate_downsample = true;
  c.layer_scale.reset();
  return c;
}

std::vector<LadderEntry> list_ladder(InputSize input, std::size_t num_classes, std::size_t width) {
  using S = LadderStep;
  const ModelConfig base = resnet_baseline_config(input, num_classes, width);
  auto with = [&](std::initializer_list<S> steps) {
    ModelConfig c = base;
    for (S s : steps) c = apply_ladder_step(c, s);
    return c;
  };
  const std::string modified = "ResNet-50 + patchify stem + GELU + depth-wise conv. with increased width";
  std::vector<LadderEntry> rows;
  rows.push_back({"ResNet-50", base});
  rows.push_back({"ResNet-50 + 3:3:9:3 stage ratio", with({S::stage_ratio})});
  rows.push_back({"ResNet-50 + ReLU → GELU", with({S::gelu})});
  rows.push_back({"ResNet-50 + depth-wise conv. with increased width", with({S::depthwise_width})});
  rows.push_back({"ResNet-50 + patchify stem", with({S::patchify_stem})});
  rows.push_back({"ResNet-50 + patchify stem + depth-wise conv. with increased width",
                  with({S::patchify_stem, S::depthwise_width})});
  rows.push_back({"ResNet-50 + patchify stem + GELU", with({S::patchify_stem, S::gelu})});
  ModelConfig c = with({S::patchify_stem, S::gelu, S::depthwise_width});
  rows.push_back({modified, c});
  rows.push_back({modified, c});
  c = apply_ladder_step(c, S::stage_ratio);
  rows.push_back({"+ 3:3:9:3 stage ratio", c});
  c = apply_ladder_step(c, S::inverted_bottleneck);
  rows.push_back({"+ inverted bottleneck", c});
  c = apply_ladder_step(c, S::fewer_act_norm);
  rows.push_back({"+ fewer activations and normalizations", c});
  c = apply_ladder_step(c, S::layernorm);
  rows.push_back({"+ BatchNorm → LayerNorm", c});
  c = apply_ladder_step(c, S::separate_downsample);
  rows.push_back({"+ move downsampling to a separate layer", c});
  c = convnext_from_ladder(c);
  rows.push_back({"ConvNeXt-T without Layer Scale", c});
  rows.push_back({"ConvNeXt-T", apply_ladder_step(c, S::layer_scale)});
  return rows;
}

}  // namespace robarch
