#pragma once

#include <string>
#include <vector>

#include "robarch/model.hpp"

namespace robarch {

enum class LadderStep {
  stage_ratio,
  gelu,
  depthwise_width,
  patchify_stem,
  inverted_bottleneck,
  fewer_act_norm,
  layernorm,
  separate_downsample,
  layer_scale,
};

const char* ladder_step_name(LadderStep step);
LadderStep ladder_step_from_name(const std::string& name);

// Returns a copy with exactly the fields of `step` set. Steps apply to
// resnet_ladder configs; layer_scale applies to convnext configs.
ModelConfig apply_ladder_step(const ModelConfig& config, LadderStep step);

// Switches a ladder config to the convnext block form (depth-wise 7x7 first,
// one norm and one activation per block), keeping widths and depths.
ModelConfig convnext_from_ladder(const ModelConfig& config);

struct LadderEntry {
  std::string name;
  ModelConfig config;
};

// Every row of the ablation ladder, top to bottom.
std::vector<LadderEntry> list_ladder(InputSize input = {}, std::size_t num_classes = 10,
                                     std::size_t width = 8);

}  // namespace robarch
