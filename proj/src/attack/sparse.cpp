#include <algorithm>
#include <cmath>
#include <limits>
#include <unordered_set>

#include "robarch/attacks.hpp"
#include "robarch/random.hpp"

namespace robarch {

AttackOutcome pgd0(const Model& model, const Tensor& batch, std::span<const int> labels, long long k,
                   const Pgd0Config& config) {
  if (k < 1) throw ConfigError("pgd0: k must be >= 1");
  if (batch.rank() != 4 || labels.size() != batch.dim(0)) throw ShapeError("pgd0: batch/labels mismatch");
  const std::size_t n = batch.dim(0), ch = batch.dim(1), h = batch.dim(2), w = batch.dim(3), rs = batch.row_size();
  AttackOutcome out;
  out.adversarial = batch;
  out.success.assign(n, false);
  out.best_loss.assign(n, -std::numeric_limits<double>::infinity());
  out.iterations.assign(n, 0);
  out.queries.assign(n, 0);
  std::vector<double> cand_loss(n, -std::numeric_limits<double>::infinity());
  Tensor x = batch;
  std::vector<std::size_t> active(n);
  for (std::size_t i = 0; i < n; ++i) active[i] = i;

  for (std::size_t it = 0; it <= config.iterations && !active.empty(); ++it) {
    const Tensor xb = x.gather(active);
    std::vector<int> yb(active.size());
    for (std::size_t a = 0; a < active.size(); ++a) yb[a] = labels[active[a]];
    const InputGradient r = loss_and_input_gradient(model, xb, yb, config.loss);
    const auto wrong = misclassified(r.logits, yb);
    std::vector<std::size_t> still;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t i = active[a];
      ++out.queries[i];
      out.best_loss[i] = std::max(out.best_loss[i], r.loss[a]);
      const bool better = (wrong[a] && !out.success[i]) || (wrong[a] == out.success[i] && r.loss[a] > cand_loss[i]);
      if (better) {
        std::copy_n(xb.data() + a * rs, rs, out.adversarial.data() + i * rs);
        out.success[i] = wrong[a];
        cand_loss[i] = r.loss[a];
      }
      if (it == config.iterations || (config.stop_on_success && out.success[i])) continue;
      const double* g = r.grad.data() + a * rs;
      const double gmax = max_abs(std::span<const double>(g, rs));
      double* xi = x.data() + i * rs;
      const double* x0 = batch.data() + i * rs;
      std::vector<double> delta(rs);
      for (std::size_t q = 0; q < rs; ++q) {
        const double step = gmax > 0.0 ? config.step * g[q] / gmax : 0.0;
        delta[q] = std::min(std::max(xi[q] + step, 0.0), 1.0) - x0[q];
      }
      project_l0_pixel(delta, ch, h, w, k);
      for (std::size_t q = 0; q < rs; ++q) xi[q] = delta[q] == 0.0 ? x0[q] : std::min(std::max(x0[q] + delta[q], 0.0), 1.0);
      ++out.iterations[i];
      still.push_back(i);
    }
    active.swap(still);
  }
  return out;
}

namespace {

struct SearchState {
  std::vector<std::size_t> pos;
  std::vector<unsigned> color;  // bit c set -> channel c = 1
  double loss = 0.0;
  Rng rng;
};

void paint(const Tensor& batch, std::size_t i, const SearchState& s, double* dst) {
  const std::size_t ch = batch.dim(1), plane = batch.dim(2) * batch.dim(3), rs = batch.row_size();
  std::copy_n(batch.data() + i * rs, rs, dst);
  for (std::size_t j = 0; j < s.pos.size(); ++j) {
    for (std::size_t c = 0; c < ch; ++c) dst[c * plane + s.pos[j]] = (s.color[j] >> c) & 1u ? 1.0 : 0.0;
  }
}

unsigned random_color(Rng& rng, std::size_t channels) {
  return static_cast<unsigned>(uniform_index(rng, std::size_t{1} << channels));
}

// Uniform position not present in `taken`.
std::size_t fresh_position(Rng& rng, std::size_t plane, const std::unordered_set<std::size_t>& taken) {
  const std::size_t free = plane - taken.size();
  std::size_t r = uniform_index(rng, free);
  for (std::size_t p = 0; p < plane; ++p) {
    if (taken.count(p)) continue;
    if (r == 0) return p;
    --r;
  }
  return 0;
}

}  // namespace

AttackOutcome sparse_random_search(const Model& model, const Tensor& batch, std::span<const int> labels,
                                   long long k, const SparseSearchConfig& config) {
  return sparse_random_search(model, batch, labels, k, config, nullptr);
}

AttackOutcome sparse_random_search(const Model& model, const Tensor& batch, std::span<const int> labels,
                                   long long k, const SparseSearchConfig& config, SparseSearchTrace* trace) {
  if (k < 1) throw ConfigError("sparse_random_search: k must be >= 1");
  if (config.query_budget < 1) throw ConfigError("sparse_random_search: query_budget must be >= 1");
  if (batch.rank() != 4 || labels.size() != batch.dim(0)) {
    throw ShapeError("sparse_random_search: batch/labels mismatch");
  }
  const std::size_t n = batch.dim(0), ch = batch.dim(1), plane = batch.dim(2) * batch.dim(3), rs = batch.row_size();
  if (ch > 16) throw ShapeError("sparse_random_search: too many channels");
  const std::size_t kk = std::min<std::size_t>(static_cast<std::size_t>(k), plane);

  AttackOutcome out;
  out.adversarial = batch;
  out.success.assign(n, false);
  out.best_loss.assign(n, 0.0);
  out.iterations.assign(n, 0);
  out.queries.assign(n, 0);
  if (trace) trace->accepted.assign(n, {});

  std::vector<SearchState> st(n);
  for (std::size_t i = 0; i < n; ++i) {
    SearchState& s = st[i];
    s.rng = make_rng(config.seed, i);
    std::unordered_set<std::size_t> taken;
    for (std::size_t j = 0; j < kk; ++j) {
      const std::size_t p = fresh_position(s.rng, plane, taken);
      taken.insert(p);
      s.pos.push_back(p);
      s.color.push_back(random_color(s.rng, ch));
    }
  }

  auto evaluate = [&](const std::vector<std::size_t>& ids, const std::vector<SearchState>& states) {
    Tensor xb(Shape{ids.size(), ch, batch.dim(2), batch.dim(3)});
    std::vector<int> yb(ids.size());
    for (std::size_t a = 0; a < ids.size(); ++a) {
      paint(batch, ids[a], states[a], xb.data() + a * rs);
      yb[a] = labels[ids[a]];
    }
    return loss_value(predict_logits(model, xb), yb, LossKind::margin);
  };

  std::vector<std::size_t> active(n);
  for (std::size_t i = 0; i < n; ++i) active[i] = i;
  {
    const auto loss = evaluate(active, st);
    for (std::size_t i = 0; i < n; ++i) {
      st[i].loss = loss[i];
      out.queries[i] = 1;
      if (trace) trace->accepted[i].push_back(loss[i]);
    }
  }
  auto finished = [&](std::size_t i) { return config.stop_on_success && st[i].loss > 0.0; };

  for (std::size_t q = 1; q < config.query_budget; ++q) {
    std::vector<std::size_t> still;
    for (std::size_t i : active) {
      if (!finished(i)) still.push_back(i);
    }
    active.swap(still);
    if (active.empty()) break;
    const double frac = config.initial_fraction /
                        std::pow(2.0, std::floor(10.0 * static_cast<double>(q) / static_cast<double>(config.query_budget)));
    const std::size_t m = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::lround(frac * static_cast<double>(kk))), 1, kk);
    std::vector<SearchState> cand;
    cand.reserve(active.size());
    for (std::size_t i : active) {
      SearchState& s = st[i];
      SearchState c;
      c.pos = s.pos;
      c.color = s.color;
      std::vector<std::size_t> slots(kk);
      for (std::size_t j = 0; j < kk; ++j) slots[j] = j;
      for (std::size_t j = 0; j < m; ++j) std::swap(slots[j], slots[j + uniform_index(s.rng, kk - j)]);
      std::unordered_set<std::size_t> taken;
      for (std::size_t j = m; j < kk; ++j) taken.insert(c.pos[slots[j]]);
      for (std::size_t j = 0; j < m; ++j) {
        const std::size_t p = fresh_position(s.rng, plane, taken);
        taken.insert(p);
        c.pos[slots[j]] = p;
        c.color[slots[j]] = random_color(s.rng, ch);
      }
      cand.push_back(std::move(c));
    }
    const auto loss = evaluate(active, cand);
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t i = active[a];
      ++out.queries[i];
      ++out.iterations[i];
      if (loss[a] >= st[i].loss) {
        st[i].pos = std::move(cand[a].pos);
        st[i].color = std::move(cand[a].color);
        st[i].loss = loss[a];
        if (trace) trace->accepted[i].push_back(loss[a]);
      }
    }
  }
  for (std::size_t i = 0; i < n; ++i) {
    paint(batch, i, st[i], out.adversarial.data() + i * rs);
    out.best_loss[i] = st[i].loss;
    out.success[i] = st[i].loss > 0.0;
  }
  return out;
}

}  // namespace robarch
