#include "robarch/patch.hpp"

namespace robarch {

const char* alignment_name(Alignment a) { return a == Alignment::aligned ? "aligned" : "non_aligned"; }

Alignment alignment_from_name(const std::string& name) {
  if (name == "aligned") return Alignment::aligned;
  if (name == "non_aligned" || name == "non-aligned") return Alignment::non_aligned;
  throw ConfigError("alignment: expected one of aligned, non_aligned, got '" + name + "'");
}

void validate(const PatchGrid& g) {
  if (g.token_size == 0) throw ConfigError("patch grid: token_size must be positive");
  if (g.height == 0 || g.width == 0) throw ConfigError("patch grid: image size must be positive");
  if (g.height % g.token_size != 0 || g.width % g.token_size != 0) {
    throw ConfigError("patch grid: image size " + std::to_string(g.height) + "x" + std::to_string(g.width) +
                      " is not divisible by token_size " + std::to_string(g.token_size));
  }
  if (g.alignment == Alignment::non_aligned) {
    if (g.token_size % 2 != 0) throw ConfigError("patch grid: non_aligned placements need an even token_size");
    if (g.height / g.token_size < 2 || g.width / g.token_size < 2) {
      throw ConfigError("patch grid: non_aligned placements need at least 2x2 tokens");
    }
  }
}

std::pair<std::size_t, std::size_t> placement_grid_shape(const PatchGrid& g) {
  validate(g);
  const std::size_t r = g.height / g.token_size, c = g.width / g.token_size;
  if (g.alignment == Alignment::aligned) return {r, c};
  return {r - 1, c - 1};
}

std::size_t placement_count(const PatchGrid& g) {
  const auto [r, c] = placement_grid_shape(g);
  return r * c;
}

std::vector<Placement> enumerate_placements(const PatchGrid& g) {
  const auto [rows, cols] = placement_grid_shape(g);
  const std::size_t p = g.token_size, off = g.alignment == Alignment::aligned ? 0 : p / 2;
  std::vector<Placement> out;
  out.reserve(rows * cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) out.push_back({off + r * p, off + c * p, p});
  }
  return out;
}

Tensor placement_mask(const Placement& pl, std::size_t height, std::size_t width) {
  if (pl.size == 0 || pl.top + pl.size > height || pl.left + pl.size > width) {
    throw ConfigError("placement (" + std::to_string(pl.top) + ", " + std::to_string(pl.left) + ", " +
                      std::to_string(pl.size) + ") lies outside the " + std::to_string(height) + "x" +
                      std::to_string(width) + " image");
  }
  Tensor m(Shape{height, width});
  for (std::size_t r = pl.top; r < pl.top + pl.size; ++r) {
    for (std::size_t c = pl.left; c < pl.left + pl.size; ++c) m[r * width + c] = 1.0;
  }
  return m;
}

Tensor frame_mask(std::size_t height, std::size_t width, std::size_t w) {
  if (2 * w >= height || 2 * w >= width) {
    throw ConfigError("frame width " + std::to_string(w) + " must be below half the image side");
  }
  Tensor m(Shape{height, width});
  for (std::size_t r = 0; r < height; ++r) {
    for (std::size_t c = 0; c < width; ++c) {
      const bool inner = r >= w && r < height - w && c >= w && c < width - w;
      m[r * width + c] = inner ? 0.0 : 1.0;
    }
  }
  return m;
}

std::size_t mask_pixel_count(const Tensor& mask) {
  std::size_t n = 0;
  for (double v : mask.values()) n += v != 0.0;
  return n;
}

}  // namespace robarch
