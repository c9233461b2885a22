#include <algorithm>
#include <cmath>

#include "robarch/data.hpp"
#include "robarch/random.hpp"

namespace robarch {

const std::vector<std::string> kShapeNames = {"square", "disk", "triangle", "cross", "ring", "diamond", "bar"};

namespace {

constexpr std::size_t kSuper = 3;

// Inside test in shape-local coordinates scaled so the shape spans [-1, 1].
bool inside(std::size_t shape, double u, double v) {
  switch (shape) {
    case 0:
      return std::abs(u) <= 0.85 && std::abs(v) <= 0.85;
    case 1:
      return u * u + v * v <= 1.0;
    case 2:
      return v <= 0.8 && std::abs(u) <= (v + 1.0) / 1.8;
    case 3:
      return (std::abs(u) <= 0.3 && std::abs(v) <= 1.0) || (std::abs(v) <= 0.3 && std::abs(u) <= 1.0);
    case 4: {
      const double r2 = u * u + v * v;
      return r2 <= 1.0 && r2 >= 0.3;
    }
    case 5:
      return std::abs(u) + std::abs(v) <= 1.0;
    default:
      return std::abs(u) <= 1.0 && std::abs(v) <= 0.35;
  }
}

}  // namespace

Dataset generate_synthetic_shapes(const DatasetSpec& spec) {
  validate(spec);
  const std::size_t k = spec.num_classes, c = spec.channels, h = spec.height, w = spec.width;
  const std::size_t n = k * spec.samples_per_class;
  Dataset d;
  d.num_classes = k;
  d.class_names.assign(kShapeNames.begin(), kShapeNames.begin() + static_cast<long>(k));
  d.images = Tensor(Shape{n, c, h, w});
  d.labels.resize(n);
  const double side = static_cast<double>(std::min(h, w));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t label = i % k;
    d.labels[i] = static_cast<int>(label);
    Rng rng = make_rng(spec.seed, i);
    const double scale = side * uniform(rng, 0.22, 0.34);
    const double cy = static_cast<double>(h) / 2.0 + uniform(rng, -1.0, 1.0) * side / 12.0;
    const double cx = static_cast<double>(w) / 2.0 + uniform(rng, -1.0, 1.0) * side / 12.0;
    std::vector<double> bg(c), fg(c);
    const double contrast = uniform(rng, 0.45, 0.6);
    for (std::size_t ch = 0; ch < c; ++ch) {
      bg[ch] = uniform(rng, 0.2, 0.4);
      fg[ch] = bg[ch] + contrast;
    }
    double* img = d.images.data() + i * c * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        std::size_t hits = 0;
        for (std::size_t sy = 0; sy < kSuper; ++sy) {
          for (std::size_t sx = 0; sx < kSuper; ++sx) {
            const double py = static_cast<double>(y) + (static_cast<double>(sy) + 0.5) / kSuper;
            const double px = static_cast<double>(x) + (static_cast<double>(sx) + 0.5) / kSuper;
            hits += inside(label, (px - cx) / scale, (py - cy) / scale);
          }
        }
        const double a = static_cast<double>(hits) / (kSuper * kSuper);
        for (std::size_t ch = 0; ch < c; ++ch) {
          const double noise = 0.04 * standard_normal(rng);
          img[(ch * h + y) * w + x] = std::clamp(a * fg[ch] + (1.0 - a) * bg[ch] + noise, 0.0, 1.0);
        }
      }
    }
  }
  return d;
}

}  // namespace robarch
