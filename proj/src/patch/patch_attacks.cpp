#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "robarch/patch.hpp"
#include "robarch/random.hpp"

namespace robarch {

namespace {

constexpr std::size_t kRowChunk = 256;
const ThreatModel kBoxOnly{ThreatKind::linf, 1.0};

APGDConfig masked_config(std::size_t iterations, double step, bool stop, std::size_t restarts,
                         std::uint64_t seed) {
  APGDConfig c;
  c.iterations = iterations;
  c.absolute_step = step;
  c.loss = LossKind::margin;
  c.stop_on_success = stop;
  c.restarts = restarts;
  c.seed = seed;
  return c;
}

Tensor as_batch(const Tensor& image) {
  if (image.rank() == 3) return image.reshaped({1, image.dim(0), image.dim(1), image.dim(2)});
  if (image.rank() == 4 && image.dim(0) == 1) return image;
  throw ShapeError("expected a single image (C, H, W) or (1, C, H, W), got " + shape_string(image.shape()));
}

// Runs masked APGD on the image `x0` replicated once per placement.
// `start` (optional) holds one starting row per placement.
AttackOutcome attack_placements(const Model& model, const Tensor& x0, int label,
                                std::span<const Placement> placements, const APGDConfig& cfg,
                                const Tensor* start) {
  const std::size_t c = x0.dim(1), h = x0.dim(2), w = x0.dim(3), rs = x0.row_size(), plane = h * w;
  const std::size_t total = placements.size();
  AttackOutcome out;
  out.adversarial = Tensor(Shape{total, c, h, w});
  for (std::size_t begin = 0; begin < total; begin += kRowChunk) {
    const std::size_t rows = std::min(kRowChunk, total - begin);
    Tensor rep(Shape{rows, c, h, w});
    Tensor masks(Shape{rows, h, w});
    for (std::size_t r = 0; r < rows; ++r) {
      std::copy_n(x0.data(), rs, rep.data() + r * rs);
      const Tensor m = placement_mask(placements[begin + r], h, w);
      std::copy_n(m.data(), plane, masks.data() + r * plane);
    }
    std::vector<int> y(rows, label);
    Tensor chunk_start;
    if (start) chunk_start = start->slice(begin, begin + rows);
    const AttackOutcome o = apgd(model, rep, y, kBoxOnly, cfg, &masks, start ? &chunk_start : nullptr);
    std::copy_n(o.adversarial.data(), rows * rs, out.adversarial.data() + begin * rs);
    out.success.insert(out.success.end(), o.success.begin(), o.success.end());
    out.best_loss.insert(out.best_loss.end(), o.best_loss.begin(), o.best_loss.end());
    out.iterations.insert(out.iterations.end(), o.iterations.begin(), o.iterations.end());
    out.queries.insert(out.queries.end(), o.queries.begin(), o.queries.end());
  }
  return out;
}

bool ranks_above(bool s_a, double l_a, bool s_b, double l_b) { return (s_a && !s_b) || (s_a == s_b && l_a > l_b); }

}  // namespace

LossMap patch_loss_map(const Model& model, const Tensor& image, int label, const PatchGrid& grid,
                       std::size_t iterations) {
  const Tensor x0 = as_batch(image);
  if (x0.dim(2) != grid.height || x0.dim(3) != grid.width) throw ShapeError("patch_loss_map: image/grid size mismatch");
  const auto placements = enumerate_placements(grid);
  const auto [rows, cols] = placement_grid_shape(grid);
  const AttackOutcome o =
      attack_placements(model, x0, label, placements, masked_config(iterations, 0.5, false, 1, 0), nullptr);
  LossMap map{grid, Tensor(Shape{rows, cols}), iterations};
  for (std::size_t k = 0; k < placements.size(); ++k) map.values[k] = o.best_loss[k];
  return map;
}

std::pair<Tensor, Tensor> render_loss_map_pair(const LossMap& a, const LossMap& b) {
  if (a.grid.height != b.grid.height || a.grid.width != b.grid.width) {
    throw ShapeError("render_loss_map_pair: maps come from different image sizes");
  }
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const LossMap* m : {&a, &b}) {
    for (double v : m->values.values()) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  auto render = [&](const LossMap& m) {
    const std::size_t h = m.grid.height, w = m.grid.width, p = m.grid.token_size;
    const std::size_t rows = m.values.dim(0), cols = m.values.dim(1);
    const long long off = m.grid.alignment == Alignment::aligned ? 0 : static_cast<long long>(p / 2);
    auto cell = [&](std::size_t x, std::size_t n) {
      const long long v = (static_cast<long long>(x) - off) / static_cast<long long>(p);
      return static_cast<std::size_t>(std::clamp<long long>(x < static_cast<std::size_t>(off) ? 0 : v, 0,
                                                            static_cast<long long>(n) - 1));
    };
    Tensor img(Shape{h, w});
    for (std::size_t r = 0; r < h; ++r) {
      for (std::size_t c = 0; c < w; ++c) {
        const double v = m.values[cell(r, rows) * cols + cell(c, cols)];
        img[r * w + c] = hi > lo ? (v - lo) / (hi - lo) : 0.5;
      }
    }
    return img;
  };
  return {render(a), render(b)};
}

std::size_t kept_placement_count(std::size_t count, double keep_fraction) {
  if (!(keep_fraction > 0.0 && keep_fraction <= 1.0)) throw ConfigError("keep_fraction must be in (0, 1]");
  const auto k = static_cast<std::size_t>(std::ceil(keep_fraction * static_cast<double>(count) - 1e-9));
  return std::clamp<std::size_t>(k, 1, count);
}

GreedyPatchResult greedy_patch_attack(const Model& model, const Tensor& batch, std::span<const int> labels,
                                      const PatchGrid& grid, const GreedyPatchConfig& config) {
  if (batch.rank() != 4 || labels.size() != batch.dim(0)) throw ShapeError("greedy_patch_attack: batch/labels mismatch");
  const std::size_t n = batch.dim(0), rs = batch.row_size();
  GreedyPatchResult res;
  if (config.placements) {
    res.placements = *config.placements;
    if (res.placements.empty()) throw ConfigError("greedy_patch_attack: empty placement list");
    for (const auto& p : res.placements) placement_mask(p, batch.dim(2), batch.dim(3));
  } else {
    if (batch.dim(2) != grid.height || batch.dim(3) != grid.width) {
      throw ShapeError("greedy_patch_attack: batch images do not match the grid size");
    }
    res.placements = enumerate_placements(grid);
  }
  const std::size_t count = res.placements.size();
  const std::size_t keep = kept_placement_count(count, config.keep_fraction);

  AttackOutcome& out = res.outcome;
  out.adversarial = batch;
  out.success.assign(n, false);
  out.best_loss.assign(n, 0.0);
  out.iterations.assign(n, 0);
  out.queries.assign(n, 0);
  res.phase1_loss = Tensor(Shape{n, count});
  res.kept.resize(n);
  res.phase2_loss.resize(n);
  res.best_placement.assign(n, 0);

  for (std::size_t i = 0; i < n; ++i) {
    const Tensor x0 = batch.slice(i, i + 1);
    const APGDConfig c1 = masked_config(config.phase1_iterations, config.step, true, 1, mix_seed(config.seed, i));
    const AttackOutcome p1 = attack_placements(model, x0, labels[i], res.placements, c1, nullptr);
    for (std::size_t k = 0; k < count; ++k) {
      res.phase1_loss[i * count + k] = p1.best_loss[k];
      out.iterations[i] += p1.iterations[k];
      out.queries[i] += p1.queries[k];
    }
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return p1.best_loss[a] > p1.best_loss[b]; });
    order.resize(keep);
    res.kept[i] = order;

    std::vector<Placement> kept_pl;
    Tensor start(Shape{keep, batch.dim(1), batch.dim(2), batch.dim(3)});
    for (std::size_t r = 0; r < keep; ++r) {
      kept_pl.push_back(res.placements[order[r]]);
      std::copy_n(p1.adversarial.data() + order[r] * rs, rs, start.data() + r * rs);
    }
    const APGDConfig c2 = masked_config(config.phase2_iterations, config.step, true, 1, mix_seed(config.seed, i));
    const AttackOutcome p2 = attack_placements(model, x0, labels[i], kept_pl, c2, &start);

    std::size_t best = 0;
    for (std::size_t r = 0; r < keep; ++r) {
      res.phase2_loss[i].push_back(p2.best_loss[r]);
      out.iterations[i] += p2.iterations[r];
      out.queries[i] += p2.queries[r];
      if (r > 0 && ranks_above(p2.success[r], p2.best_loss[r], p2.success[best], p2.best_loss[best])) best = r;
    }
    std::copy_n(p2.adversarial.data() + best * rs, rs, out.adversarial.data() + i * rs);
    out.success[i] = p2.success[best];
    out.best_loss[i] = *std::max_element(p2.best_loss.begin(), p2.best_loss.end());
    res.best_placement[i] = order[best];
  }
  return res;
}

AttackOutcome fixed_position_patch_attack(const Model& model, const Tensor& batch, std::span<const int> labels,
                                          const Placement& placement, std::size_t iterations,
                                          std::size_t restarts, double step, std::uint64_t seed) {
  if (batch.rank() != 4) throw ShapeError("fixed_position_patch_attack: batch must be (N, C, H, W)");
  const Tensor mask = placement_mask(placement, batch.dim(2), batch.dim(3));
  return apgd(model, batch, labels, kBoxOnly, masked_config(iterations, step, true, restarts, seed), &mask);
}

AttackOutcome frame_attack(const Model& model, const Tensor& batch, std::span<const int> labels,
                           const FrameAttackConfig& config) {
  if (batch.rank() != 4) throw ShapeError("frame_attack: batch must be (N, C, H, W)");
  const Tensor mask = frame_mask(batch.dim(2), batch.dim(3), config.width);
  const std::size_t iterations = config.width == 0 ? 0 : config.iterations;
  const std::size_t restarts = config.width == 0 ? 1 : config.restarts;
  return apgd(model, batch, labels, kBoxOnly, masked_config(iterations, config.step, true, restarts, config.seed),
              &mask);
}

AttackOutcome combine_outcomes(const AttackOutcome& a, const AttackOutcome& b) {
  if (a.size() != b.size() || a.adversarial.shape() != b.adversarial.shape()) {
    throw ShapeError("combine_outcomes: outcomes cover different batches");
  }
  AttackOutcome out = a;
  const std::size_t rs = a.adversarial.row_size();
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (ranks_above(b.success[i], b.best_loss[i], a.success[i], a.best_loss[i])) {
      std::copy_n(b.adversarial.data() + i * rs, rs, out.adversarial.data() + i * rs);
    }
    out.success[i] = a.success[i] || b.success[i];
    out.best_loss[i] = std::max(a.best_loss[i], b.best_loss[i]);
    out.iterations[i] = a.iterations[i] + b.iterations[i];
    out.queries[i] = a.queries[i] + b.queries[i];
  }
  out.loss_trace.clear();
  return out;
}

}  // namespace robarch
