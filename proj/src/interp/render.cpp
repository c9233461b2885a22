#include <algorithm>
#include <limits>

#include "robarch/image_io.hpp"
#include "robarch/interp.hpp"

namespace robarch {

Tensor render_map(const Tensor& map, std::size_t height, std::size_t width) {
  if (map.rank() != 2) throw ShapeError("render_map: expected (H, W)");
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (double v : map.values()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  Tensor norm(map.shape());
  for (std::size_t q = 0; q < map.size(); ++q) norm[q] = hi > lo ? (map[q] - lo) / (hi - lo) : 0.5;
  return gray_to_rgb(upsample_nearest(norm, height, width));
}

Tensor render_head_strip(const Tensor& image, const HeadMapSet& maps) {
  Tensor img = image.rank() == 4 ? image.reshaped({image.dim(1), image.dim(2), image.dim(3)}) : image;
  if (img.rank() != 3) throw ShapeError("render_head_strip: expected one image");
  if (img.dim(0) == 1) img = gray_to_rgb(img);
  std::vector<Tensor> tiles{img};
  for (const auto& m : maps.maps) tiles.push_back(render_map(m, img.dim(1), img.dim(2)));
  return hstack_images(tiles);
}

}  // namespace robarch
