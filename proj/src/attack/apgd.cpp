#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "robarch/attacks.hpp"
#include "robarch/random.hpp"

namespace robarch {

namespace {

struct Example {
  std::vector<double> x, x_prev, g, x_best, g_best;
  double loss = 0.0, best = 0.0;
  double eta = 0.0;
  std::size_t next_cp = 0, last_cp_iter = 0, increases = 0;
  bool reduced_last = false;
  double best_at_last_cp = 0.0;
};

// Per-example plane mask of size H*W, or empty for full support.
std::vector<double> plane_mask(const Tensor* mask, std::size_t i, std::size_t n, std::size_t h, std::size_t w) {
  if (!mask) return {};
  const std::size_t plane = h * w;
  if (mask->rank() == 2) {
    if (mask->dim(0) != h || mask->dim(1) != w) throw ShapeError("apgd: mask must be (H, W) or (N, H, W)");
    return std::vector<double>(mask->data(), mask->data() + plane);
  }
  if (mask->rank() != 3 || mask->dim(0) != n || mask->dim(1) != h || mask->dim(2) != w) {
    throw ShapeError("apgd: mask must be (H, W) or (N, H, W), got " + shape_string(mask->shape()));
  }
  return std::vector<double>(mask->data() + i * plane, mask->data() + (i + 1) * plane);
}

class MaskView {
 public:
  MaskView(std::vector<double> plane, std::size_t channels) : plane_(std::move(plane)), channels_(channels) {}
  bool full() const { return plane_.empty(); }
  bool on(std::size_t q) const { return plane_.empty() || plane_[q % plane_.size()] != 0.0; }
  std::size_t support(std::size_t d) const {
    if (plane_.empty()) return d;
    std::size_t s = 0;
    for (double m : plane_) s += m != 0.0;
    return s * channels_;
  }

 private:
  std::vector<double> plane_;
  std::size_t channels_;
};

void restore_off_mask(std::span<double> x, std::span<const double> x0, const MaskView& m) {
  if (m.full()) return;
  for (std::size_t q = 0; q < x.size(); ++q) {
    if (!m.on(q)) x[q] = x0[q];
  }
}

void ascent_direction(std::span<const double> g, const MaskView& m, ThreatKind kind, std::vector<double>& dir) {
  const std::size_t d = g.size();
  dir.assign(d, 0.0);
  switch (kind) {
    case ThreatKind::linf:
      for (std::size_t q = 0; q < d; ++q) {
        if (m.on(q)) dir[q] = g[q] > 0.0 ? 1.0 : (g[q] < 0.0 ? -1.0 : 0.0);
      }
      return;
    case ThreatKind::l2: {
      double s = 0.0;
      for (std::size_t q = 0; q < d; ++q) {
        if (m.on(q)) s += g[q] * g[q];
      }
      if (s == 0.0) return;
      const double inv = 1.0 / std::sqrt(s);
      for (std::size_t q = 0; q < d; ++q) {
        if (m.on(q)) dir[q] = g[q] * inv;
      }
      return;
    }
    case ThreatKind::l1: {
      std::vector<std::size_t> idx;
      for (std::size_t q = 0; q < d; ++q) {
        if (m.on(q) && g[q] != 0.0) idx.push_back(q);
      }
      if (idx.empty()) return;
      const std::size_t keep = std::max<std::size_t>(
          1, static_cast<std::size_t>(std::ceil(0.05 * static_cast<double>(m.support(d)))));
      const std::size_t top = std::min(keep, idx.size());
      std::stable_sort(idx.begin(), idx.end(),
                       [&](std::size_t a, std::size_t b) { return std::abs(g[a]) > std::abs(g[b]); });
      for (std::size_t r = 0; r < top; ++r) dir[idx[r]] = (g[idx[r]] > 0.0 ? 1.0 : -1.0) / static_cast<double>(top);
      return;
    }
    default:
      throw ConfigError("apgd: threat must be linf, l2 or l1");
  }
}

void random_start(std::span<double> x, std::span<const double> x0, const MaskView& m, const ThreatModel& t,
                  Rng& rng) {
  const std::size_t d = x.size();
  std::vector<double> dir(d, 0.0);
  if (t.kind == ThreatKind::linf) {
    for (std::size_t q = 0; q < d; ++q) {
      if (m.on(q)) x[q] = x0[q] + t.epsilon * uniform(rng, -1.0, 1.0);
    }
  } else {
    double norm = 0.0;
    for (std::size_t q = 0; q < d; ++q) {
      if (!m.on(q)) continue;
      if (t.kind == ThreatKind::l2) {
        dir[q] = standard_normal(rng);
        norm += dir[q] * dir[q];
      } else {
        double e = uniform01(rng);
        while (e <= 0.0) e = uniform01(rng);
        dir[q] = (uniform01(rng) < 0.5 ? -1.0 : 1.0) * -std::log(e);
        norm += std::abs(dir[q]);
      }
    }
    if (t.kind == ThreatKind::l2) norm = std::sqrt(norm);
    const double support = static_cast<double>(std::max<std::size_t>(1, m.support(d)));
    const double radius = t.epsilon * std::pow(uniform01(rng), 1.0 / support);
    for (std::size_t q = 0; q < d; ++q) {
      if (m.on(q)) x[q] = x0[q] + (norm > 0.0 ? radius * dir[q] / norm : 0.0);
    }
  }
  project(x, x0, t);
  restore_off_mask(x, x0, m);
}

}  // namespace

std::vector<std::size_t> apgd_checkpoints(std::size_t iterations) {
  std::vector<std::size_t> cps;
  if (iterations == 0) return cps;
  const auto frac = [&](double f) {
    return std::max<std::size_t>(static_cast<std::size_t>(f * static_cast<double>(iterations)), 1);
  };
  std::size_t interval = frac(0.22);
  const std::size_t shrink = frac(0.03), minimum = frac(0.06);
  std::size_t at = interval;
  while (at <= iterations) {
    cps.push_back(at);
    interval = std::max(interval > shrink ? interval - shrink : 0, minimum);
    at += interval;
  }
  return cps;
}

AttackOutcome apgd(const Model& model, const Tensor& batch, std::span<const int> labels,
                   const ThreatModel& threat, const APGDConfig& config, const Tensor* mask,
                   const Tensor* start) {
  if (threat.kind != ThreatKind::linf && threat.kind != ThreatKind::l2 && threat.kind != ThreatKind::l1) {
    throw ConfigError(std::string("apgd: threat must be linf, l2 or l1, got ") + threat_name(threat.kind));
  }
  if (!(threat.epsilon > 0.0)) throw ConfigError("apgd: epsilon must be positive");
  if (config.loss == LossKind::dlr && model.config().num_classes < 4) {
    throw ConfigError("apgd: dlr loss needs at least 4 classes, got " + std::to_string(model.config().num_classes));
  }
  if (batch.rank() != 4) throw ShapeError("apgd: batch must be (N, C, H, W)");
  if (labels.size() != batch.dim(0)) throw ShapeError("apgd: label count does not match batch");
  if (start && start->shape() != batch.shape()) throw ShapeError("apgd: start shape does not match batch");
  if (config.restarts == 0) throw ConfigError("apgd: restarts must be >= 1");
  if (!(config.momentum >= 0.0 && config.momentum < 1.0)) throw ConfigError("apgd: momentum must be in [0, 1)");

  const std::size_t n = batch.dim(0), ch = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const std::size_t rs = batch.row_size();
  std::vector<std::size_t> cps = config.checkpoints.empty() ? apgd_checkpoints(config.iterations) : config.checkpoints;
  for (std::size_t i = 1; i < cps.size(); ++i) {
    if (cps[i] <= cps[i - 1]) throw ConfigError("apgd: checkpoints must be strictly increasing");
  }
  if (!cps.empty() && cps.back() > config.iterations) throw ConfigError("apgd: checkpoint beyond iterations");

  std::vector<MaskView> masks;
  masks.reserve(n);
  for (std::size_t i = 0; i < n; ++i) masks.emplace_back(plane_mask(mask, i, n, h, w), ch);

  AttackOutcome out;
  out.adversarial = batch;
  out.success.assign(n, false);
  out.best_loss.assign(n, -std::numeric_limits<double>::infinity());
  out.iterations.assign(n, 0);
  out.queries.assign(n, 0);
  if (config.record_trace) out.loss_trace.assign(n, {});
  std::vector<double> cand_loss(n, -std::numeric_limits<double>::infinity());

  const double eta0 = config.absolute_step ? *config.absolute_step
                                           : config.initial_step_fraction * 2.0 * threat.epsilon;
  auto x0_of = [&](std::size_t i) { return std::span<const double>(batch.data() + i * rs, rs); };

  auto offer = [&](std::size_t i, std::span<const double> x, double loss, bool success) {
    out.best_loss[i] = std::max(out.best_loss[i], loss);
    const bool better = (success && !out.success[i]) || (success == out.success[i] && loss > cand_loss[i]);
    if (better) {
      std::copy(x.begin(), x.end(), out.adversarial.data() + i * rs);
      out.success[i] = success;
      cand_loss[i] = loss;
    }
  };

  // Evaluates loss, gradient and success for the given examples.
  auto evaluate = [&](const std::vector<std::size_t>& ids, std::vector<Example>& ex) {
    Tensor xb(Shape{ids.size(), ch, h, w});
    std::vector<int> yb(ids.size());
    for (std::size_t a = 0; a < ids.size(); ++a) {
      std::copy(ex[ids[a]].x.begin(), ex[ids[a]].x.end(), xb.data() + a * rs);
      yb[a] = labels[ids[a]];
    }
    InputGradient r = loss_and_input_gradient(model, xb, yb, config.loss);
    const auto wrong = misclassified(r.logits, yb);
    std::vector<bool> succ(ids.size());
    for (std::size_t a = 0; a < ids.size(); ++a) {
      Example& e = ex[ids[a]];
      e.loss = r.loss[a];
      e.g.assign(r.grad.data() + a * rs, r.grad.data() + (a + 1) * rs);
      succ[a] = wrong[a];
      ++out.queries[ids[a]];
    }
    return succ;
  };

  std::vector<double> dir, z;
  for (std::size_t restart = 0; restart < config.restarts; ++restart) {
    std::vector<std::size_t> active;
    for (std::size_t i = 0; i < n; ++i) {
      if (!(config.stop_on_success && out.success[i])) active.push_back(i);
    }
    if (active.empty()) break;
    std::vector<Example> ex(n);
    for (std::size_t i : active) {
      Example& e = ex[i];
      e.x.assign(batch.data() + i * rs, batch.data() + (i + 1) * rs);
      if (config.random_init || restart >= 1) {
        Rng rng = make_rng(mix_seed(config.seed, restart), i);
        random_start(e.x, x0_of(i), masks[i], threat, rng);
      } else if (start) {
        e.x.assign(start->data() + i * rs, start->data() + (i + 1) * rs);
        project(e.x, x0_of(i), threat);
        restore_off_mask(e.x, x0_of(i), masks[i]);
      }
      e.eta = eta0;
    }
    std::vector<bool> succ = evaluate(active, ex);
    for (std::size_t a = 0; a < active.size(); ++a) {
      Example& e = ex[active[a]];
      e.best = e.loss;
      e.best_at_last_cp = e.loss;
      e.x_best = e.x;
      e.g_best = e.g;
      e.x_prev = e.x;
      offer(active[a], e.x, e.loss, succ[a]);
    }
    if (config.stop_on_success) {
      std::vector<std::size_t> keep;
      for (std::size_t i : active) {
        if (!out.success[i]) keep.push_back(i);
      }
      active.swap(keep);
    }

    for (std::size_t it = 0; it < config.iterations && !active.empty(); ++it) {
      const double a = it == 0 ? 1.0 : 1.0 - config.momentum;
      std::vector<double> prev_loss(n);
      for (std::size_t i : active) {
        Example& e = ex[i];
        const auto x0 = x0_of(i);
        ascent_direction(e.g, masks[i], threat.kind, dir);
        z.resize(rs);
        for (std::size_t q = 0; q < rs; ++q) z[q] = e.x[q] + e.eta * dir[q];
        project(z, x0, threat);
        restore_off_mask(z, x0, masks[i]);
        std::vector<double> next;
        if (a == 1.0) {
          next = z;
        } else {
          next.resize(rs);
          for (std::size_t q = 0; q < rs; ++q) next[q] = e.x[q] + a * (z[q] - e.x[q]) + (1.0 - a) * (e.x[q] - e.x_prev[q]);
          project(next, x0, threat);
          restore_off_mask(next, x0, masks[i]);
        }
        e.x_prev = std::move(e.x);
        e.x = std::move(next);
        prev_loss[i] = e.loss;
      }
      succ = evaluate(active, ex);
      std::vector<std::size_t> still;
      for (std::size_t k = 0; k < active.size(); ++k) {
        const std::size_t i = active[k];
        Example& e = ex[i];
        ++out.iterations[i];
        if (e.loss > prev_loss[i]) ++e.increases;
        if (e.loss > e.best) {
          e.best = e.loss;
          e.x_best = e.x;
          e.g_best = e.g;
        }
        offer(i, e.x, e.loss, succ[k]);
        if (config.record_trace) out.loss_trace[i].push_back(out.best_loss[i]);

        const std::size_t done = it + 1;
        if (e.next_cp < cps.size() && done == cps[e.next_cp]) {
          const double interval = static_cast<double>(done - e.last_cp_iter);
          const bool stalled = static_cast<double>(e.increases) < config.rho * interval;
          const bool no_gain = !e.reduced_last && e.best_at_last_cp >= e.best;
          const bool reduce = stalled || no_gain;
          if (reduce) {
            e.eta *= 0.5;
            e.x = e.x_best;
            e.g = e.g_best;
            e.x_prev = e.x_best;
            e.loss = e.best;
          }
          e.reduced_last = reduce;
          e.best_at_last_cp = e.best;
          e.increases = 0;
          e.last_cp_iter = done;
          ++e.next_cp;
        }
        if (!(config.stop_on_success && out.success[i])) still.push_back(i);
      }
      active.swap(still);
    }
  }
  return out;
}

}  // namespace robarch
