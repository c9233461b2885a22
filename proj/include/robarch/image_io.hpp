#pragma once

#include <filesystem>
#include <vector>

#include "robarch/tensor.hpp"

namespace robarch {

// (3, H, W) in [0, 1]; gray is replicated, alpha dropped.
Tensor read_png(const std::filesystem::path& path);
// Accepts (H, W), (1, H, W) or (3, H, W); values are clamped to [0, 1].
void write_png(const std::filesystem::path& path, const Tensor& image);

Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);
Tensor center_crop(const Tensor& image, std::size_t height, std::size_t width);
// Scales the shorter side to the target, then center-crops.
Tensor resize_and_crop(const Tensor& image, std::size_t height, std::size_t width);

// (H, W) map to (3, H', W') by nearest-neighbour upsampling of a gray map.
Tensor upsample_nearest(const Tensor& map, std::size_t height, std::size_t width);
Tensor gray_to_rgb(const Tensor& map);
// Concatenates (3, H, W) images left to right with a white gap.
Tensor hstack_images(const std::vector<Tensor>& images, std::size_t gap = 2);

}  // namespace robarch
