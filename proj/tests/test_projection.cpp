#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <json.hpp>

#include "robarch/attacks.hpp"
#include "test_util.hpp"

using namespace robarch;
using robarch::testing::uniform_tensor;

namespace {

nlohmann::json oracle_instances() {
  std::ifstream in(std::string(ROBARCH_TEST_DATA_DIR) + "/oracles/projection_oracles.json");
  REQUIRE(in.good());
  return nlohmann::json::parse(in).at("instances");
}

double max_diff(std::span<const double> a, std::span<const double> b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Sort-based simplex projection of |v| onto the l1 ball.
std::vector<double> l1_ball_sort(const std::vector<double>& v, double eps) {
  double total = 0.0;
  for (double x : v) total += std::abs(x);
  if (total <= eps) return v;
  std::vector<double> u;
  for (double x : v) u.push_back(std::abs(x));
  std::sort(u.rbegin(), u.rend());
  double cum = 0.0, theta = 0.0;
  for (std::size_t j = 0; j < u.size(); ++j) {
    cum += u[j];
    const double t = (cum - eps) / static_cast<double>(j + 1);
    if (u[j] - t > 0) theta = t;
  }
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::copysign(std::max(std::abs(v[i]) - theta, 0.0), v[i]);
  return out;
}

}  // namespace

TEST_SUITE("projection") {
  TEST_CASE("l1 and l2 projections intersected with the box match the QP oracle") {
    const auto inst = oracle_instances();
    REQUIRE(inst.size() >= 100);
    std::size_t l1_count = 0;
    for (const auto& it : inst) {
      auto point = it.at("point").get<std::vector<double>>();
      const auto center = it.at("center").get<std::vector<double>>();
      const auto expected = it.at("projection").get<std::vector<double>>();
      const double eps = it.at("epsilon").get<double>();
      const bool box = it.at("box").get<bool>();
      if (it.at("p").get<int>() == 1) {
        project_l1(point, center, eps, box);
        ++l1_count;
      } else {
        project_l2(point, center, eps, box);
      }
      CHECK(max_diff(point, expected) < 1e-6);
    }
    CHECK(l1_count >= 100);
  }

  TEST_CASE("linf and unboxed l2 projections match closed forms") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const Tensor c = uniform_tensor({17}, s);
      const Tensor x0 = uniform_tensor({17}, s + 100, -0.5, 1.5);
      const double eps = 0.05 + 0.01 * static_cast<double>(s);
      std::vector<double> x = x0.storage();
      project_linf(x, c.values(), eps, true);
      for (std::size_t i = 0; i < x.size(); ++i) {
        const double want = std::clamp(std::clamp(x0[i], c[i] - eps, c[i] + eps), 0.0, 1.0);
        CHECK(x[i] == doctest::Approx(want).epsilon(1e-15));
      }
      x = x0.storage();
      project_l2(x, c.values(), eps, false);
      const double dist = l2_norm((x0 - c).values());
      const double scale = std::min(1.0, eps / dist);
      for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(x[i] - (c[i] + scale * (x0[i] - c[i]))) < 1e-12);
    }
  }

  TEST_CASE("unboxed l1 projection matches the sort-based simplex oracle") {
    for (std::uint64_t s = 0; s < 50; ++s) {
      const std::size_t d = 5 + s % 16;
      const Tensor c = uniform_tensor({d}, s);
      const Tensor x0 = uniform_tensor({d}, s + 200, -1.0, 2.0);
      const double eps = 0.1 + 0.05 * static_cast<double>(s % 7);
      std::vector<double> x = x0.storage();
      project_l1(x, c.values(), eps, false);
      std::vector<double> diff(d);
      for (std::size_t i = 0; i < d; ++i) diff[i] = x0[i] - c[i];
      const auto want = l1_ball_sort(diff, eps);
      for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(x[i] - (c[i] + want[i])) < 1e-12);
    }
  }

  TEST_CASE("projections are idempotent and feasible") {
    for (ThreatKind k : {ThreatKind::linf, ThreatKind::l2, ThreatKind::l1}) {
      for (std::uint64_t s = 0; s < 30; ++s) {
        const Tensor c = uniform_tensor({2, 12}, s);
        const Tensor x = uniform_tensor({2, 12}, s + 7, -1.0, 2.0);
        const ThreatModel t{k, 0.3};
        const Tensor p1 = project(x, c, t);
        const Tensor p2 = project(p1, c, t);
        CHECK(max_abs_diff(p1, p2) < 1e-12);
        const auto res = constraint_residual(c.reshaped({2, 1, 3, 4}), p1.reshaped({2, 1, 3, 4}), t);
        for (double r : res) CHECK(r < 1e-12);
      }
    }
  }

  TEST_CASE("pixel l0 projection keeps the k largest pixels with row-major ties") {
    Tensor d({2, 2, 3});
    // Pixel norms over the two channels: p0 = 1, p1 = 2, p2 = 2, p3 = 0.5, p4 = 3, p5 = 0.
    const double c0[] = {1, 2, 0, 0.5, 3, 0};
    const double c1[] = {0, 0, 2, 0, 0, 0};
    for (int i = 0; i < 6; ++i) {
      d[i] = c0[i];
      d[6 + i] = c1[i];
    }
    const Tensor p = project_l0_pixel(d.reshaped({1, 2, 2, 3}), 2).reshaped({2, 2, 3});
    CHECK(p[4] == 3.0);
    CHECK(p[1] == 2.0);
    CHECK(p[8] == 0.0);
    CHECK(p[0] == 0.0);
    const Tensor q = project_l0_pixel(p.reshaped({1, 2, 2, 3}), 2).reshaped({2, 2, 3});
    CHECK(q == p);
  }

  TEST_CASE("threat validation names the supported kinds") {
    try {
      threat_from_name("l3");
      FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
      const std::string msg = e.what();
      for (const char* k : {"linf", "l2", "l1", "l0", "patch", "frame"}) CHECK(msg.find(k) != std::string::npos);
    }
    CHECK_THROWS_AS(validate(ThreatModel{ThreatKind::linf, -0.1}, 8, 8), ConfigError);
    CHECK_THROWS_AS(validate(ThreatModel{ThreatKind::frame, 4}, 8, 8), ConfigError);
  }
}
