#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "robarch/attacks.hpp"

namespace robarch {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

void check_sizes(std::span<double> point, std::span<const double> center) {
  if (point.size() != center.size()) throw ShapeError("project: point and center differ in size");
}

// Box for the displacement delta = z - center.
inline double box_lo(double c, bool box) { return box ? -c : -kInf; }
inline double box_hi(double c, bool box) { return box ? 1.0 - c : kInf; }

}  // namespace

const char* threat_name(ThreatKind kind) {
  switch (kind) {
    case ThreatKind::linf:
      return "linf";
    case ThreatKind::l2:
      return "l2";
    case ThreatKind::l1:
      return "l1";
    case ThreatKind::l0_pixel:
      return "l0";
    case ThreatKind::patch:
      return "patch";
    case ThreatKind::frame:
      return "frame";
  }
  return "?";
}

ThreatKind threat_from_name(const std::string& name) {
  if (name == "linf") return ThreatKind::linf;
  if (name == "l2") return ThreatKind::l2;
  if (name == "l1") return ThreatKind::l1;
  if (name == "l0" || name == "l0_pixel") return ThreatKind::l0_pixel;
  if (name == "patch") return ThreatKind::patch;
  if (name == "frame") return ThreatKind::frame;
  throw ConfigError("threat: unknown kind '" + name + "'; supported kinds: linf, l2, l1, l0, patch, frame");
}

void validate(const ThreatModel& t, std::size_t height, std::size_t width) {
  const std::string who = std::string("threat ") + threat_name(t.kind);
  if (t.kind == ThreatKind::frame) {
    if (!(t.epsilon >= 0.0) || t.epsilon != std::floor(t.epsilon)) {
      throw ConfigError(who + ": width must be a non-negative integer");
    }
    if (2.0 * t.epsilon >= static_cast<double>(std::min(height, width))) {
      throw ConfigError(who + ": width must be smaller than half the image side");
    }
    return;
  }
  if (!(t.epsilon > 0.0) || !std::isfinite(t.epsilon)) throw ConfigError(who + ": epsilon must be positive");
  if (t.kind == ThreatKind::l0_pixel || t.kind == ThreatKind::patch) {
    if (t.epsilon != std::floor(t.epsilon)) throw ConfigError(who + ": epsilon must be an integer");
  }
  if (t.kind == ThreatKind::l0_pixel && t.epsilon > static_cast<double>(height * width)) {
    throw ConfigError(who + ": pixel budget exceeds H*W");
  }
  if (t.kind == ThreatKind::patch && t.epsilon > static_cast<double>(std::min(height, width))) {
    throw ConfigError(who + ": patch side exceeds the image");
  }
}

void project_linf(std::span<double> point, std::span<const double> center, double eps, bool box) {
  check_sizes(point, center);
  for (std::size_t i = 0; i < point.size(); ++i) {
    double lo = center[i] - eps, hi = center[i] + eps;
    if (box) {
      lo = std::max(lo, 0.0);
      hi = std::min(hi, 1.0);
    }
    point[i] = std::min(std::max(point[i], lo), hi);
  }
}

// Minimises |delta - w| over |delta|_2 <= eps and the box. The solution is
// clip(t * w) for the largest t in (0, 1] with |clip(t * w)| <= eps; the norm
// is piecewise quadratic in t with breakpoints where coordinates hit the box.
void project_l2(std::span<double> point, std::span<const double> center, double eps, bool box) {
  check_sizes(point, center);
  const std::size_t d = point.size();
  std::vector<double> w(d), lo(d), hi(d);
  double clipped_sq = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    w[i] = point[i] - center[i];
    lo[i] = box_lo(center[i], box);
    hi[i] = box_hi(center[i], box);
    const double c = std::min(std::max(w[i], lo[i]), hi[i]);
    clipped_sq += c * c;
  }
  const double eps_sq = eps * eps;
  if (clipped_sq <= eps_sq) {
    for (std::size_t i = 0; i < d; ++i) point[i] = center[i] + std::min(std::max(w[i], lo[i]), hi[i]);
    return;
  }
  // Breakpoint t_i at which coordinate i saturates.
  std::vector<std::pair<double, std::size_t>> bp;
  double free_sq = 0.0;  // sum of w_i^2 over unsaturated coordinates
  for (std::size_t i = 0; i < d; ++i) {
    if (w[i] == 0.0) continue;
    const double bound = w[i] > 0.0 ? hi[i] : lo[i];
    const double t = bound / w[i];
    if (t <= 0.0) continue;  // pinned at zero displacement
    if (std::isfinite(t)) bp.emplace_back(t, i);
    free_sq += w[i] * w[i];
  }
  std::sort(bp.begin(), bp.end());
  double fixed_sq = 0.0;
  double t_star = 0.0;
  bool found = false;
  for (const auto& [t, i] : bp) {
    if (fixed_sq + t * t * free_sq >= eps_sq) {
      t_star = std::sqrt(std::max(0.0, (eps_sq - fixed_sq) / free_sq));
      found = true;
      break;
    }
    const double bound = w[i] > 0.0 ? hi[i] : lo[i];
    fixed_sq += bound * bound;
    free_sq -= w[i] * w[i];
  }
  if (!found) t_star = free_sq > 0.0 ? std::sqrt(std::max(0.0, (eps_sq - fixed_sq) / free_sq)) : 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    point[i] = center[i] + std::min(std::max(t_star * w[i], lo[i]), hi[i]);
  }
}

// Minimises |delta - w| over |delta|_1 <= eps and the box. The solution is
// sign(w) * min(max(|w| - lambda, 0), u) with u the box bound in the sign
// direction; the l1 norm is piecewise linear in lambda.
void project_l1(std::span<double> point, std::span<const double> center, double eps, bool box) {
  check_sizes(point, center);
  const std::size_t d = point.size();
  std::vector<double> a(d), u(d);
  double g0 = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double w = point[i] - center[i];
    a[i] = std::abs(w);
    u[i] = w >= 0.0 ? box_hi(center[i], box) : -box_lo(center[i], box);
    g0 += std::min(a[i], u[i]);
  }
  double lambda = 0.0;
  if (g0 > eps) {
    std::vector<std::pair<double, int>> events;
    events.reserve(2 * d);
    for (std::size_t i = 0; i < d; ++i) {
      if (a[i] == 0.0 || u[i] <= 0.0) continue;
      events.emplace_back(std::max(a[i] - u[i], 0.0), -1);
      events.emplace_back(a[i], +1);
    }
    std::sort(events.begin(), events.end());
    double g = g0, slope = 0.0, prev = 0.0;
    bool found = false;
    for (const auto& [lam, ds] : events) {
      const double next = g + slope * (lam - prev);
      if (next <= eps && slope < 0.0) {
        lambda = prev + (eps - g) / slope;
        found = true;
        break;
      }
      g = next;
      prev = lam;
      slope += ds;
    }
    if (!found) lambda = prev;
  }
  for (std::size_t i = 0; i < d; ++i) {
    const double w = point[i] - center[i];
    const double mag = std::min(std::max(a[i] - lambda, 0.0), u[i]);
    point[i] = center[i] + (w >= 0.0 ? mag : -mag);
  }
}

void project(std::span<double> point, std::span<const double> center, const ThreatModel& threat, bool box) {
  switch (threat.kind) {
    case ThreatKind::linf:
      project_linf(point, center, threat.epsilon, box);
      return;
    case ThreatKind::l2:
      project_l2(point, center, threat.epsilon, box);
      return;
    case ThreatKind::l1:
      project_l1(point, center, threat.epsilon, box);
      return;
    default:
      throw ConfigError(std::string("project: threat ") + threat_name(threat.kind) +
                        " has no ball projection (expected linf, l2 or l1)");
  }
}

Tensor project(const Tensor& point, const Tensor& center, const ThreatModel& threat, bool box) {
  require_same_shape(point, center, "project");
  Tensor out = point;
  const std::size_t rows = point.rank() ? point.dim(0) : 1, rs = point.size() / std::max<std::size_t>(rows, 1);
  for (std::size_t r = 0; r < rows; ++r) {
    project(std::span<double>(out.data() + r * rs, rs), std::span<const double>(center.data() + r * rs, rs),
            threat, box);
  }
  return out;
}

void project_l0_pixel(std::span<double> delta, std::size_t channels, std::size_t height, std::size_t width,
                      long long k) {
  if (k <= 0) throw ConfigError("project_l0_pixel: k must be positive, got " + std::to_string(k));
  const std::size_t plane = height * width;
  if (delta.size() != channels * plane) throw ShapeError("project_l0_pixel: size mismatch");
  if (static_cast<std::size_t>(k) >= plane) return;
  std::vector<double> norm(plane, 0.0);
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t p = 0; p < plane; ++p) norm[p] += delta[c * plane + p] * delta[c * plane + p];
  std::vector<std::size_t> order(plane);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return norm[a] > norm[b]; });
  for (std::size_t r = static_cast<std::size_t>(k); r < plane; ++r) {
    const std::size_t p = order[r];
    for (std::size_t c = 0; c < channels; ++c) delta[c * plane + p] = 0.0;
  }
}

Tensor project_l0_pixel(const Tensor& delta, long long k) {
  Tensor out = delta;
  if (delta.rank() == 3) {
    project_l0_pixel(out.values(), delta.dim(0), delta.dim(1), delta.dim(2), k);
    return out;
  }
  if (delta.rank() != 4) throw ShapeError("project_l0_pixel: expected (C,H,W) or (N,C,H,W)");
  const std::size_t rs = delta.row_size();
  for (std::size_t n = 0; n < delta.dim(0); ++n) {
    project_l0_pixel(std::span<double>(out.data() + n * rs, rs), delta.dim(1), delta.dim(2), delta.dim(3), k);
  }
  return out;
}

std::size_t perturbed_pixel_count(std::span<const double> orig, std::span<const double> adv,
                                  std::size_t channels, std::size_t height, std::size_t width) {
  const std::size_t plane = height * width;
  std::size_t count = 0;
  for (std::size_t p = 0; p < plane; ++p) {
    bool changed = false;
    for (std::size_t c = 0; c < channels; ++c) changed = changed || orig[c * plane + p] != adv[c * plane + p];
    count += changed;
  }
  return count;
}

std::vector<double> constraint_residual(const Tensor& original, const Tensor& adversarial,
                                        const ThreatModel& threat, const Tensor* mask) {
  require_same_shape(original, adversarial, "constraint_residual");
  const std::size_t n = original.dim(0), c = original.dim(1), h = original.dim(2), w = original.dim(3);
  const std::size_t rs = c * h * w, plane = h * w;
  std::vector<double> res(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double* o = original.data() + i * rs;
    const double* a = adversarial.data() + i * rs;
    double r = 0.0, l1 = 0.0, l2 = 0.0, linf = 0.0;
    for (std::size_t q = 0; q < rs; ++q) {
      r = std::max({r, -a[q], a[q] - 1.0});
      const double d = std::abs(a[q] - o[q]);
      l1 += d;
      l2 += d * d;
      linf = std::max(linf, d);
      if (mask) {
        const std::size_t p = q % plane;
        const double m = mask->rank() == 3 ? (*mask)[i * plane + p] : (*mask)[p];
        if (m == 0.0) r = std::max(r, d);
      }
    }
    switch (threat.kind) {
      case ThreatKind::linf:
        r = std::max(r, linf - threat.epsilon);
        break;
      case ThreatKind::l2:
        r = std::max(r, std::sqrt(l2) - threat.epsilon);
        break;
      case ThreatKind::l1:
        r = std::max(r, l1 - threat.epsilon);
        break;
      case ThreatKind::l0_pixel: {
        const double count = static_cast<double>(perturbed_pixel_count(
            std::span<const double>(o, rs), std::span<const double>(a, rs), c, h, w));
        r = std::max(r, count - threat.epsilon);
        break;
      }
      case ThreatKind::patch:
      case ThreatKind::frame:
        break;
    }
    res[i] = std::max(r, 0.0);
  }
  return res;
}

}  // namespace robarch
