#pragma once

#include <string>
#include <vector>

#include "robarch/model.hpp"

namespace robarch {

enum class MapSource { cls_attention, xca_key_norm, xca_query_norm };

const char* map_source_name(MapSource s);

struct HeadMapSet {
  MapSource source = MapSource::cls_attention;
  std::size_t block_index = 0;
  // One (H/p, W/p) map per head.
  std::vector<Tensor> maps;
};

// image: (C, H, W) or (1, C, H, W). Last attention block, CLS query row over
// image tokens only. Throws ConfigError for non-vit families.
HeadMapSet cls_attention_maps(const Model& model, const Tensor& image);

// Per-head l2 norm of each token's key (or query) over the feature axis, last
// XCA block. Works at any resolution divisible by the token size. Throws
// ConfigError for non-xcit families.
HeadMapSet xca_feature_norm_maps(const Model& model, const Tensor& image, bool keys = true);

// Norm maps from a captured (N, heads, T, head_dim) tensor for example n.
std::vector<Tensor> feature_norm_maps(const Tensor& vectors, std::size_t n, std::size_t grid_h,
                                      std::size_t grid_w, std::size_t skip_tokens = 0);

struct PerturbationHeatmap {
  Tensor map;    // (H, W): channel sum of adversarial - original
  Tensor image;  // (3, H, W) diverging rendering
  double scale = 0.0;
};

// zero -> white, negative -> blue, positive -> red, symmetric scale max |map|.
PerturbationHeatmap perturbation_heatmap(const Tensor& original, const Tensor& adversarial);
Tensor render_diverging(const Tensor& map, double scale);

struct GridDiscontinuity {
  double boundary_mean = 0.0;
  double interior_mean = 0.0;
};

// Mean l2 (over channels) jump of a perturbation between horizontally or
// vertically adjacent pixels, split by whether the pair straddles a token
// boundary. Accepts (C, H, W) or (N, C, H, W).
GridDiscontinuity grid_discontinuity(const Tensor& perturbation, std::size_t token_size);

// Min-max normalized gray rendering of a map, nearest-neighbour upsampled.
Tensor render_map(const Tensor& map, std::size_t height, std::size_t width);
// Original image leftmost, then one rendered map per head.
Tensor render_head_strip(const Tensor& image, const HeadMapSet& maps);

}  // namespace robarch
