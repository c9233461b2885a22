#include <cmath>

#include "robarch/interp.hpp"

namespace robarch {

namespace {

Tensor single(const Tensor& image) {
  if (image.rank() == 3) return image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  if (image.rank() == 4 && image.dim(0) == 1) return image;
  throw ShapeError("expected one image (C, H, W) or (1, C, H, W), got " + shape_string(image.shape()));
}

}  // namespace

const char* map_source_name(MapSource s) {
  switch (s) {
    case MapSource::cls_attention:
      return "cls_attention";
    case MapSource::xca_key_norm:
      return "xca_key_norm";
    case MapSource::xca_query_norm:
      return "xca_query_norm";
  }
  return "?";
}

HeadMapSet cls_attention_maps(const Model& model, const Tensor& image) {
  if (model.config().family != Family::vit) {
    throw ConfigError(std::string("cls_attention_maps: needs family vit, got ") + family_name(model.config().family));
  }
  nn::Captures cap;
  model.forward(single(image), &cap);
  const Tensor& a = cap.attention;
  if (a.rank() != 4 || !cap.has_cls_token) throw ShapeError("cls_attention_maps: no attention captured");
  const std::size_t heads = a.dim(1), t = a.dim(2), gh = cap.grid_h, gw = cap.grid_w;
  if (t != gh * gw + 1) throw ShapeError("cls_attention_maps: token count does not match the grid");
  HeadMapSet out{MapSource::cls_attention, model.config().depth - 1, {}};
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor m(Shape{gh, gw});
    const double* row = a.data() + h * t * t;  // query 0 = CLS
    for (std::size_t k = 0; k < gh * gw; ++k) m[k] = row[k + 1];
    out.maps.push_back(std::move(m));
  }
  return out;
}

std::vector<Tensor> feature_norm_maps(const Tensor& v, std::size_t n, std::size_t gh, std::size_t gw,
                                      std::size_t skip) {
  if (v.rank() != 4 || n >= v.dim(0)) throw ShapeError("feature_norm_maps: expected (N, heads, T, head_dim)");
  const std::size_t heads = v.dim(1), t = v.dim(2), hd = v.dim(3);
  if (t != gh * gw + skip) throw ShapeError("feature_norm_maps: token count does not match the grid");
  std::vector<Tensor> maps;
  for (std::size_t h = 0; h < heads; ++h) {
    Tensor m(Shape{gh, gw});
    for (std::size_t k = 0; k < gh * gw; ++k) {
      const double* x = v.data() + ((n * heads + h) * t + k + skip) * hd;
      double s = 0.0;
      for (std::size_t d = 0; d < hd; ++d) s += x[d] * x[d];
      m[k] = std::sqrt(s);
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

HeadMapSet xca_feature_norm_maps(const Model& model, const Tensor& image, bool keys) {
  if (model.config().family != Family::xcit) {
    throw ConfigError(std::string("xca_feature_norm_maps: needs family xcit, got ") +
                      family_name(model.config().family));
  }
  nn::Captures cap;
  model.forward(single(image), &cap);
  const Tensor& v = keys ? cap.keys : cap.queries;
  HeadMapSet out{keys ? MapSource::xca_key_norm : MapSource::xca_query_norm, model.config().depth - 1, {}};
  out.maps = feature_norm_maps(v, 0, cap.grid_h, cap.grid_w, cap.has_cls_token ? 1 : 0);
  return out;
}

PerturbationHeatmap perturbation_heatmap(const Tensor& original, const Tensor& adversarial) {
  if (original.shape() != adversarial.shape() || original.rank() != 3) {
    throw ShapeError("perturbation_heatmap: expected two (C, H, W) images of the same shape, got " +
                     shape_string(original.shape()) + " and " + shape_string(adversarial.shape()));
  }
  const std::size_t c = original.dim(0), h = original.dim(1), w = original.dim(2), plane = h * w;
  PerturbationHeatmap out;
  out.map = Tensor(Shape{h, w});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t q = 0; q < plane; ++q) out.map[q] += adversarial[ch * plane + q] - original[ch * plane + q];
  }
  out.scale = max_abs(out.map.values());
  out.image = render_diverging(out.map, out.scale);
  return out;
}

Tensor render_diverging(const Tensor& map, double scale) {
  if (map.rank() != 2) throw ShapeError("render_diverging: expected (H, W)");
  const std::size_t plane = map.size();
  Tensor img(Shape{3, map.dim(0), map.dim(1)}, 1.0);
  if (!(scale > 0.0)) return img;
  for (std::size_t q = 0; q < plane; ++q) {
    const double a = std::min(1.0, std::abs(map[q]) / scale);
    if (map[q] > 0.0) {
      img[plane + q] = 1.0 - a;
      img[2 * plane + q] = 1.0 - a;
    } else if (map[q] < 0.0) {
      img[q] = 1.0 - a;
      img[plane + q] = 1.0 - a;
    }
  }
  return img;
}

GridDiscontinuity grid_discontinuity(const Tensor& perturbation, std::size_t p) {
  if (p == 0) throw ConfigError("grid_discontinuity: token_size must be positive");
  const Tensor d = perturbation.rank() == 3 ? single(perturbation) : perturbation;
  if (d.rank() != 4) throw ShapeError("grid_discontinuity: expected (C, H, W) or (N, C, H, W)");
  const std::size_t n = d.dim(0), c = d.dim(1), h = d.dim(2), w = d.dim(3);
  double bsum = 0.0, isum = 0.0;
  std::size_t bcount = 0, icount = 0;
  auto jump = [&](const double* x, std::size_t a, std::size_t b) {
    double s = 0.0;
    for (std::size_t ch = 0; ch < c; ++ch) {
      const double diff = x[ch * h * w + a] - x[ch * h * w + b];
      s += diff * diff;
    }
    return std::sqrt(s);
  };
  auto add = [&](bool boundary, double v) {
    if (boundary) {
      bsum += v;
      ++bcount;
    } else {
      isum += v;
      ++icount;
    }
  };
  for (std::size_t i = 0; i < n; ++i) {
    const double* x = d.data() + i * c * h * w;
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t xx = 0; xx + 1 < w; ++xx) add((xx + 1) % p == 0, jump(x, y * w + xx, y * w + xx + 1));
    }
    for (std::size_t y = 0; y + 1 < h; ++y) {
      for (std::size_t xx = 0; xx < w; ++xx) add((y + 1) % p == 0, jump(x, y * w + xx, (y + 1) * w + xx));
    }
  }
  return {bcount ? bsum / static_cast<double>(bcount) : 0.0, icount ? isum / static_cast<double>(icount) : 0.0};
}

}  // namespace robarch
