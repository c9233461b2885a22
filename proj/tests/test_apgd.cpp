#include <doctest.h>

#include "robarch/attacks.hpp"
#include "test_util.hpp"

using namespace robarch;
using robarch::testing::cyclic_labels;
using robarch::testing::linear_model;
using robarch::testing::toy_config;
using robarch::testing::uniform_tensor;

namespace {

Model random_linear(InputSize in, std::size_t k, std::uint64_t seed) {
  const std::size_t d = in.channels * in.height * in.width;
  return linear_model(in, k, uniform_tensor({k * d}, seed, -1, 1).storage(), uniform_tensor({k}, seed + 1, -0.1, 0.1).storage());
}

}  // namespace

TEST_SUITE("apgd") {
  TEST_CASE("default checkpoints follow the halving recurrence") {
    // p_0 = 0, p_1 = 0.22, p_{j+1} = p_j + max(p_j - p_{j-1} - 0.03, 0.06)
    std::vector<std::size_t> expected;
    double prev = 0.0, cur = 0.22;
    while (cur <= 1.0 + 1e-12) {
      expected.push_back(static_cast<std::size_t>(std::lround(cur * 100.0)));
      const double next = cur + std::max(cur - prev - 0.03, 0.06);
      prev = cur;
      cur = next;
    }
    CHECK(apgd_checkpoints(100) == expected);
    CHECK(apgd_checkpoints(100) == std::vector<std::size_t>{22, 41, 57, 70, 80, 87, 93, 99});
    CHECK(apgd_checkpoints(1).size() == 1);
    CHECK(apgd_checkpoints(0).empty());
  }

  TEST_CASE("best loss never decreases across iterations") {
    std::size_t instances = 0;
    for (std::uint64_t s = 0; s < 8; ++s) {
      const Model m = build_model(toy_config(s % 2 ? "mlp" : "resnet_ladder"), 100 + s);
      const Tensor x = uniform_tensor({3, 3, 16, 16}, 200 + s);
      const auto y = cyclic_labels(3, 3);
      for (ThreatKind k : {ThreatKind::linf, ThreatKind::l2, ThreatKind::l1}) {
        const double eps = k == ThreatKind::linf ? 4.0 / 255 : (k == ThreatKind::l2 ? 0.3 : 2.0);
        APGDConfig c;
        c.iterations = 25;
        c.record_trace = true;
        c.loss = s % 3 == 0 ? LossKind::margin : LossKind::cross_entropy;
        c.seed = s;
        c.random_init = s % 2 == 0;
        const ThreatModel t{k, eps};
        const AttackOutcome o = apgd(m, x, y, t, c);
        for (std::size_t i = 0; i < o.size(); ++i) {
          ++instances;
          REQUIRE(o.loss_trace[i].size() == 25);
          for (std::size_t j = 1; j < o.loss_trace[i].size(); ++j) CHECK(o.loss_trace[i][j] >= o.loss_trace[i][j - 1]);
          CHECK(o.loss_trace[i].back() == o.best_loss[i]);
        }
        for (double r : constraint_residual(x, o.adversarial, t)) CHECK(r <= 1e-12);
        CHECK(evaluate_success(m, o.adversarial, y) == o.success);
      }
    }
    CHECK(instances >= 20);
  }

  TEST_CASE("one iteration without momentum is FGSM bit for bit") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const InputSize in{3, 4, 4};
      const Model m = random_linear(in, 4, 300 + s);
      const Tensor x = uniform_tensor({5, 3, 4, 4}, 400 + s);
      const auto y = cyclic_labels(5, 4);
      const double eps = 8.0 / 255.0;
      APGDConfig c;
      c.iterations = 1;
      c.momentum = 0.0;
      c.initial_step_fraction = 0.5;
      const AttackOutcome a = apgd(m, x, y, ThreatModel{ThreatKind::linf, eps}, c);
      const Tensor f = fgsm_batch(m, x, y, eps, FgsmOptions{});
      CHECK(a.adversarial == f);
    }
  }

  TEST_CASE("linear margin optimum sits at the sign corner") {
    for (std::uint64_t s = 0; s < 10; ++s) {
      const InputSize in{1, 3, 3};
      const Model m = random_linear(in, 2, 500 + s);
      const auto& w = m.parameters()[0]->value;
      const auto& b = m.parameters()[1]->value;
      Tensor x = uniform_tensor({1, 1, 3, 3}, 600 + s, 0.3, 0.7);
      x[0] = 0.01;  // box-active coordinate
      const std::vector<int> y{0};
      const double eps = 0.1;
      Tensor corner = x;
      double opt = b[1] - b[0];
      for (std::size_t q = 0; q < 9; ++q) {
        const double dw = w[9 + q] - w[q];
        corner[q] = std::clamp(x[q] + (dw > 0 ? eps : -eps), 0.0, 1.0);
        opt += dw * corner[q];
      }
      APGDConfig c;
      c.iterations = 100;
      c.loss = LossKind::margin;
      const AttackOutcome o = apgd(m, x, y, ThreatModel{ThreatKind::linf, eps}, c);
      CHECK(std::abs(o.best_loss[0] - opt) < 1e-6);
      CHECK(max_abs_diff(o.adversarial, corner) < 1e-6);
    }
  }

  TEST_CASE("seeded restarts are deterministic and warm starts are respected") {
    const Model m = build_model(toy_config("mlp"), 7);
    const Tensor x = uniform_tensor({4, 3, 16, 16}, 8);
    const auto y = cyclic_labels(4, 3);
    APGDConfig c;
    c.iterations = 10;
    c.restarts = 2;
    c.random_init = true;
    c.seed = 99;
    const ThreatModel t{ThreatKind::l2, 0.5};
    const AttackOutcome a = apgd(m, x, y, t, c);
    const AttackOutcome b = apgd(m, x, y, t, c);
    CHECK(a.adversarial == b.adversarial);
    CHECK(a.best_loss == b.best_loss);

    APGDConfig w;
    w.iterations = 0;
    const Tensor start = a.adversarial;
    const AttackOutcome s = apgd(m, x, y, t, w, nullptr, &start);
    CHECK(max_abs_diff(s.adversarial, start) < 1e-12);
  }

  TEST_CASE("stop on success halts an example once it is misclassified") {
    const Model m = build_model(toy_config("mlp"), 17);
    const Tensor x = uniform_tensor({6, 3, 16, 16}, 18);
    const auto y = cyclic_labels(6, 3);
    APGDConfig c;
    c.iterations = 40;
    c.stop_on_success = true;
    const AttackOutcome o = apgd(m, x, y, ThreatModel{ThreatKind::linf, 16.0 / 255}, c);
    const auto clean_wrong = misclassified(predict_logits(m, x), y);
    for (std::size_t i = 0; i < o.size(); ++i) {
      if (clean_wrong[i]) CHECK(o.iterations[i] == 0);
      if (!o.success[i]) CHECK(o.iterations[i] == 40);
    }
  }

  TEST_CASE("invalid configurations are rejected") {
    const Model m = build_model(toy_config("linear"), 1);
    const Tensor x = uniform_tensor({2, 3, 16, 16}, 2);
    const auto y = cyclic_labels(2, 3);
    APGDConfig c;
    CHECK_THROWS_AS(apgd(m, x, y, ThreatModel{ThreatKind::frame, 2}, c), ConfigError);
    CHECK_THROWS_AS(apgd(m, x, y, ThreatModel{ThreatKind::linf, 0.0}, c), ConfigError);
    c.loss = LossKind::dlr;
    CHECK_THROWS_AS(apgd(m, x, y, ThreatModel{ThreatKind::linf, 0.1}, c), ConfigError);
    c.loss = LossKind::cross_entropy;
    c.momentum = 1.0;
    CHECK_THROWS_AS(apgd(m, x, y, ThreatModel{ThreatKind::linf, 0.1}, c), ConfigError);
  }
}
