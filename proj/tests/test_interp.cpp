#include <doctest.h>

#include "robarch/interp.hpp"
#include "test_util.hpp"

using namespace robarch;
using robarch::testing::toy_config;
using robarch::testing::uniform_tensor;

TEST_SUITE("interp") {
  TEST_CASE("captured attention rows are stochastic") {
    for (const char* fam : {"vit", "xcit"}) {
      const Model m = build_model(toy_config(fam), 3);
      nn::Captures cap;
      m.forward(uniform_tensor({2, 3, 16, 16}, 4), &cap);
      REQUIRE(cap.attention.rank() == 4);
      const std::size_t rows = cap.attention.dim(0) * cap.attention.dim(1) * cap.attention.dim(2);
      const std::size_t cols = cap.attention.dim(3);
      for (std::size_t r = 0; r < rows; ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
          const double v = cap.attention[r * cols + c];
          CHECK(v >= 0.0);
          s += v;
        }
        CHECK(std::abs(s - 1.0) < 1e-5);
      }
    }
  }

  TEST_CASE("CLS attention maps have one token-grid map per head") {
    const Model m = build_model(toy_config("vit"), 5);
    const HeadMapSet maps = cls_attention_maps(m, uniform_tensor({3, 16, 16}, 6));
    CHECK(maps.source == MapSource::cls_attention);
    CHECK(maps.maps.size() == 2);
    double total = 0.0;
    for (const auto& mp : maps.maps) {
      CHECK(mp.shape() == Shape{4, 4});
      for (double v : mp.storage()) total += v;
    }
    // The CLS row excludes its own weight, so each head sums to at most one.
    CHECK(total <= 2.0 + 1e-12);
    CHECK(total > 0.0);
    CHECK_THROWS_AS(cls_attention_maps(build_model(toy_config("resnet_ladder"), 1), uniform_tensor({3, 16, 16}, 1)),
                    ConfigError);
    CHECK_THROWS_AS(xca_feature_norm_maps(m, uniform_tensor({3, 16, 16}, 1)), ConfigError);
  }

  TEST_CASE("XCA key and query norm maps match the captured vectors") {
    const Model m = build_model(toy_config("xcit"), 7);
    const Tensor img = uniform_tensor({3, 16, 16}, 8);
    const HeadMapSet keys = xca_feature_norm_maps(m, img, true);
    const HeadMapSet queries = xca_feature_norm_maps(m, img, false);
    nn::Captures cap;
    m.forward(img.reshaped({1, 3, 16, 16}), &cap);
    const auto direct = feature_norm_maps(cap.keys, 0, cap.grid_h, cap.grid_w);
    REQUIRE(keys.maps.size() == direct.size());
    for (std::size_t h = 0; h < direct.size(); ++h) CHECK(keys.maps[h] == direct[h]);
    CHECK(queries.source == MapSource::xca_query_norm);
    CHECK(keys.maps[0].shape() == Shape{4, 4});
  }

  TEST_CASE("norm maps are positively homogeneous in the key scale") {
    const Tensor k = uniform_tensor({1, 2, 17, 3}, 9, -1, 1);
    const auto base = feature_norm_maps(k, 0, 4, 4, 1);
    for (double s : {0.5, 3.0}) {
      const auto scaled = feature_norm_maps(k * s, 0, 4, 4, 1);
      for (std::size_t h = 0; h < 2; ++h) {
        for (std::size_t i = 0; i < 16; ++i) CHECK(std::abs(scaled[h][i] - s * base[h][i]) < 1e-12);
      }
    }
    // Token t of the map is row t + skip of the captured tensor.
    double n0 = 0.0;
    for (std::size_t d = 0; d < 3; ++d) n0 += k[1 * 3 + d] * k[1 * 3 + d];
    CHECK(base[0][0] == doctest::Approx(std::sqrt(n0)));
  }

  TEST_CASE("perturbation heatmaps are antisymmetric") {
    const Tensor a = uniform_tensor({3, 8, 8}, 10);
    const Tensor b = uniform_tensor({3, 8, 8}, 11);
    const PerturbationHeatmap ab = perturbation_heatmap(a, b);
    const PerturbationHeatmap ba = perturbation_heatmap(b, a);
    CHECK(ab.scale == ba.scale);
    for (std::size_t i = 0; i < 64; ++i) CHECK(ab.map[i] == -ba.map[i]);
    // Swapping the sign swaps the red and blue channels.
    for (std::size_t i = 0; i < 64; ++i) {
      CHECK(ab.image[i] == doctest::Approx(ba.image[128 + i]));
      CHECK(ab.image[64 + i] == doctest::Approx(ba.image[64 + i]));
    }
    const Tensor white = render_diverging(Tensor({2, 2}), 1.0);
    for (double v : white.storage()) CHECK(v == 1.0);
    const Tensor red = render_diverging(Tensor({1, 1}, std::vector<double>{1.0}), 1.0);
    CHECK(red.storage() == std::vector<double>{1.0, 0.0, 0.0});
  }

  TEST_CASE("grid discontinuity separates token boundaries from interiors") {
    Tensor p({1, 8, 8});
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 8; ++c) p[r * 8 + c] = static_cast<double>((r / 4) * 2 + c / 4);
    const GridDiscontinuity g = grid_discontinuity(p, 4);
    CHECK(g.interior_mean == 0.0);
    CHECK(g.boundary_mean > 0.0);
  }

  TEST_CASE("renderers produce RGB strips") {
    const Model m = build_model(toy_config("vit"), 12);
    const Tensor img = uniform_tensor({3, 16, 16}, 13);
    const HeadMapSet maps = cls_attention_maps(m, img);
    const Tensor strip = render_head_strip(img, maps);
    CHECK(strip.dim(0) == 3);
    CHECK(strip.dim(1) == 16);
    CHECK(strip.dim(2) == 3 * 16 + 2 * 2);
    const Tensor r = render_map(maps.maps[0], 16, 16);
    double lo = 1e9, hi = -1e9;
    for (double v : r.storage()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    CHECK(lo == doctest::Approx(0.0));
    CHECK(hi == doctest::Approx(1.0));
  }
}
