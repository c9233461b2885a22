#include <cmath>

#include "json_util.hpp"
#include "robarch/model.hpp"

namespace robarch {

namespace {

using detail::json;

constexpr std::pair<const char*, Family> kFamilies[] = {
    {"resnet_ladder", Family::resnet_ladder}, {"vit", Family::vit},   {"xcit", Family::xcit},
    {"convnext", Family::convnext},           {"linear", Family::linear}, {"mlp", Family::mlp}};
constexpr std::pair<const char*, nn::Activation> kActivations[] = {{"relu", nn::Activation::relu},
                                                                   {"gelu", nn::Activation::gelu}};
constexpr std::pair<const char*, NormKind> kNorms[] = {{"batch", NormKind::batch},
                                                       {"layer", NormKind::layer}};

bool tokenized(const ModelConfig& c) {
  return c.family == Family::vit || c.family == Family::xcit ||
         ((c.family == Family::resnet_ladder || c.family == Family::convnext) && c.patchify_stem);
}

}  // namespace

const char* family_name(Family family) { return detail::enum_name(family, kFamilies); }

void validate(const ModelConfig& c) {
  const auto& in = c.input_size;
  if (in.channels == 0 || in.height == 0 || in.width == 0) {
    throw ConfigError("input_size: expected positive (channels, height, width)");
  }
  if (c.num_classes < 2) throw ConfigError("num_classes: expected an integer >= 2");
  if (c.token_size == 0) throw ConfigError("token_size: expected a positive integer");
  if (c.embed_dim == 0) throw ConfigError("embed_dim: expected a positive integer");
  if (!(c.width_multiplier > 0.0) || !std::isfinite(c.width_multiplier)) {
    throw ConfigError("width_multiplier: expected a positive number");
  }
  for (std::size_t b : c.stage_blocks) {
    if (b == 0) throw ConfigError("stage_blocks: expected four positive integers");
  }
  if (c.layer_scale && !(*c.layer_scale > 0.0)) {
    throw ConfigError("layer_scale: expected a positive initial value");
  }
  if (tokenized(c) && (in.height % c.token_size != 0 || in.width % c.token_size != 0)) {
    throw ConfigError("input_size " + std::to_string(in.height) + "x" + std::to_string(in.width) +
                      " is not divisible by token_size " + std::to_string(c.token_size));
  }
  switch (c.family) {
    case Family::vit:
    case Family::xcit:
      if (c.num_heads == 0 || c.embed_dim % c.num_heads != 0) {
        throw ConfigError("embed_dim " + std::to_string(c.embed_dim) +
                          " is not divisible by num_heads " + std::to_string(c.num_heads));
      }
      if (c.depth == 0) throw ConfigError("depth: expected a positive integer");
      if (c.layer_scale) {
        throw ConfigError("layer_scale is only supported with family=convnext (got family=" +
                          std::string(family_name(c.family)) + ")");
      }
      break;
    case Family::resnet_ladder:
      if (c.layer_scale) {
        throw ConfigError(
            "layer_scale conflicts with family=resnet_ladder: layer scale requires the convnext "
            "block form (family=convnext)");
      }
      if (!c.patchify_stem && (in.height < 4 || in.width < 4)) {
        throw ConfigError("input_size: the 7x7/2 + maxpool stem needs at least 4x4 inputs");
      }
      break;
    case Family::convnext:
      if (!c.patchify_stem) {
        throw ConfigError("patchify_stem=false conflicts with family=convnext");
      }
      if (!c.inverted_bottleneck || !c.reduced_norm_act || !c.separate_downsample ||
          c.norm_kind != NormKind::layer || c.activation != nn::Activation::gelu ||
          !c.depthwise_conv) {
        throw ConfigError(
            "family=convnext requires depthwise_conv, inverted_bottleneck, reduced_norm_act, "
            "separate_downsample, norm_kind=layer and activation=gelu");
      }
      break;
    case Family::linear:
      break;
    case Family::mlp:
      if (c.hidden_dim == 0) throw ConfigError("hidden_dim: expected a positive integer");
      break;
  }
}

json to_json(const ModelConfig& c) {
  json j;
  j["family"] = family_name(c.family);
  j["stage_blocks"] = c.stage_blocks;
  j["activation"] = detail::enum_name(c.activation, kActivations);
  j["depthwise_conv"] = c.depthwise_conv;
  j["width_multiplier"] = c.width_multiplier;
  j["patchify_stem"] = c.patchify_stem;
  j["inverted_bottleneck"] = c.inverted_bottleneck;
  j["reduced_norm_act"] = c.reduced_norm_act;
  j["norm_kind"] = detail::enum_name(c.norm_kind, kNorms);
  j["separate_downsample"] = c.separate_downsample;
  j["layer_scale"] = c.layer_scale ? json(*c.layer_scale) : json(nullptr);
  j["token_size"] = c.token_size;
  j["num_heads"] = c.num_heads;
  j["embed_dim"] = c.embed_dim;
  j["depth"] = c.depth;
  j["hidden_dim"] = c.hidden_dim;
  j["input_size"] = {c.input_size.channels, c.input_size.height, c.input_size.width};
  j["num_classes"] = c.num_classes;
  return j;
}

ModelConfig model_config_from_json(const json& j, const std::string& scope) {
  detail::reject_unknown_keys(
      j, scope,
      {"family", "stage_blocks", "activation", "depthwise_conv", "width_multiplier",
       "patchify_stem", "inverted_bottleneck", "reduced_norm_act", "norm_kind",
       "separate_downsample", "layer_scale", "token_size", "num_heads", "embed_dim", "depth",
       "hidden_dim", "input_size", "num_classes"});
  ModelConfig c;
  c.family = detail::read_enum(j, scope, "family", c.family, kFamilies);
  if (j.contains("stage_blocks")) {
    const json& v = j.at("stage_blocks");
    if (!v.is_array() || v.size() != 4) {
      detail::field_error(scope, "stage_blocks", "an array of 4 positive integers", v);
    }
    for (std::size_t i = 0; i < 4; ++i) {
      if (!v[i].is_number_integer() || v[i].get<long long>() <= 0) {
        detail::field_error(scope, "stage_blocks", "an array of 4 positive integers", v);
      }
      c.stage_blocks[i] = v[i].get<std::size_t>();
    }
  }
  c.activation = detail::read_enum(j, scope, "activation", c.activation, kActivations);
  c.depthwise_conv = detail::read_field(j, scope, "depthwise_conv", c.depthwise_conv, "a boolean");
  c.width_multiplier =
      detail::read_field(j, scope, "width_multiplier", c.width_multiplier, "a positive number");
  c.patchify_stem = detail::read_field(j, scope, "patchify_stem", c.patchify_stem, "a boolean");
  c.inverted_bottleneck =
      detail::read_field(j, scope, "inverted_bottleneck", c.inverted_bottleneck, "a boolean");
  c.reduced_norm_act =
      detail::read_field(j, scope, "reduced_norm_act", c.reduced_norm_act, "a boolean");
  c.norm_kind = detail::read_enum(j, scope, "norm_kind", c.norm_kind, kNorms);
  c.separate_downsample =
      detail::read_field(j, scope, "separate_downsample", c.separate_downsample, "a boolean");
  if (j.contains("layer_scale") && !j.at("layer_scale").is_null()) {
    c.layer_scale = detail::read_field(j, scope, "layer_scale", 0.0, "a positive number or null");
  }
  const std::string pos = "a positive integer";
  c.token_size = detail::read_field(j, scope, "token_size", c.token_size, pos);
  c.num_heads = detail::read_field(j, scope, "num_heads", c.num_heads, pos);
  c.embed_dim = detail::read_field(j, scope, "embed_dim", c.embed_dim, pos);
  c.depth = detail::read_field(j, scope, "depth", c.depth, pos);
  c.hidden_dim = detail::read_field(j, scope, "hidden_dim", c.hidden_dim, pos);
  if (j.contains("input_size")) {
    const json& v = j.at("input_size");
    if (!v.is_array() || v.size() != 3) {
      detail::field_error(scope, "input_size", "[channels, height, width]", v);
    }
    for (const auto& e : v) {
      if (!e.is_number_integer() || e.get<long long>() <= 0) {
        detail::field_error(scope, "input_size", "[channels, height, width] of positive integers", v);
      }
    }
    c.input_size = {v[0].get<std::size_t>(), v[1].get<std::size_t>(), v[2].get<std::size_t>()};
  }
  c.num_classes = detail::read_field(j, scope, "num_classes", c.num_classes, "an integer >= 2");
  validate(c);
  return c;
}

ModelConfig resnet_baseline_config(InputSize input, std::size_t num_classes, std::size_t width) {
  ModelConfig c;
  c.family = Family::resnet_ladder;
  c.input_size = input;
  c.num_classes = num_classes;
  c.embed_dim = width;
  c.token_size = 4;
  return c;
}

ModelConfig vit_config(InputSize input, std::size_t num_classes, std::size_t dim, std::size_t heads,
                       std::size_t token_size, std::size_t depth) {
  ModelConfig c;
  c.family = Family::vit;
  c.activation = nn::Activation::gelu;
  c.norm_kind = NormKind::layer;
  c.input_size = input;
  c.num_classes = num_classes;
  c.embed_dim = dim;
  c.num_heads = heads;
  c.token_size = token_size;
  c.depth = depth;
  return c;
}

ModelConfig xcit_config(InputSize input, std::size_t num_classes, std::size_t dim, std::size_t heads,
                        std::size_t token_size, std::size_t depth) {
  ModelConfig c = vit_config(input, num_classes, dim, heads, token_size, depth);
  c.family = Family::xcit;
  return c;
}

ModelConfig linear_config(InputSize input, std::size_t num_classes) {
  ModelConfig c;
  c.family = Family::linear;
  c.input_size = input;
  c.num_classes = num_classes;
  return c;
}

ModelConfig mlp_config(InputSize input, std::size_t num_classes, std::size_t hidden) {
  ModelConfig c = linear_config(input, num_classes);
  c.family = Family::mlp;
  c.hidden_dim = hidden;
  return c;
}

}  // namespace robarch
