#include <algorithm>
#include <stdexcept>
#include <vector>

#include "robarch/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace robarch::kernels {

namespace {

bool is_pointwise(const ConvGeometry& g) {
  return !g.depthwise && g.kernel == 1 && g.stride == 1 && g.pad == 0;
}

void check(const ConvGeometry& g) {
  if (g.depthwise && g.in_channels != g.out_channels) {
    throw std::invalid_argument("depthwise conv requires in_channels == out_channels");
  }
  if (g.in_h + 2 * g.pad < g.kernel || g.in_w + 2 * g.pad < g.kernel || g.stride == 0) {
    throw std::invalid_argument("conv geometry: kernel larger than padded input");
  }
}

void im2col(const ConvGeometry& g, const double* x, double* cols) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    const double* xc = x + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        double* row = cols + ((c * k + i) * k + j) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          double* out = row + y * ow;
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) {
            std::fill_n(out, ow, 0.0);
            continue;
          }
          const double* xr = xc + static_cast<std::size_t>(iy) * g.in_w;
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * g.stride + j) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            out[xo] = (ix < 0 || ix >= static_cast<std::ptrdiff_t>(g.in_w))
                          ? 0.0
                          : xr[static_cast<std::size_t>(ix)];
          }
        }
      }
    }
  }
}

void col2im(const ConvGeometry& g, const double* cols, double* x) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  std::fill_n(x, g.in_channels * g.in_h * g.in_w, 0.0);
  for (std::size_t c = 0; c < g.in_channels; ++c) {
    double* xc = x + c * g.in_h * g.in_w;
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const double* row = cols + ((c * k + i) * k + j) * oh * ow;
        for (std::size_t y = 0; y < oh; ++y) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(y * g.stride + i) -
                                    static_cast<std::ptrdiff_t>(g.pad);
          if (iy < 0 || iy >= static_cast<std::ptrdiff_t>(g.in_h)) continue;
          double* xr = xc + static_cast<std::size_t>(iy) * g.in_w;
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const std::ptrdiff_t ix = static_cast<std::ptrdiff_t>(xo * g.stride + j) -
                                      static_cast<std::ptrdiff_t>(g.pad);
            if (ix >= 0 && ix < static_cast<std::ptrdiff_t>(g.in_w)) {
              xr[static_cast<std::size_t>(ix)] += row[y * ow + xo];
            }
          }
        }
      }
    }
  }
}

// Valid output range [lo, hi) for kernel offset `i` along one axis.
inline void tap_range(std::size_t i, std::size_t pad, std::size_t stride, std::size_t in,
                      std::size_t out, std::size_t& lo, std::size_t& hi) {
  // need 0 <= y*stride + i - pad < in
  lo = 0;
  if (i < pad) lo = (pad - i + stride - 1) / stride;
  const std::ptrdiff_t top = static_cast<std::ptrdiff_t>(in + pad) - static_cast<std::ptrdiff_t>(i);
  // y*stride < top  =>  y <= (top-1)/stride
  hi = top <= 0 ? 0 : std::min(out, static_cast<std::size_t>((top - 1) / static_cast<std::ptrdiff_t>(stride)) + 1);
  if (hi < lo) hi = lo;
}

void depthwise_forward_plane(const ConvGeometry& g, const double* x, const double* w, double bias,
                             double* y) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride;
  std::fill_n(y, oh * ow, bias);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t ylo, yhi;
    tap_range(i, g.pad, s, g.in_h, oh, ylo, yhi);
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t xlo, xhi;
      tap_range(j, g.pad, s, g.in_w, ow, xlo, xhi);
      const double wij = w[i * k + j];
      for (std::size_t yo = ylo; yo < yhi; ++yo) {
        const double* xr = x + (yo * s + i - g.pad) * g.in_w;
        double* yr = y + yo * ow;
        if (s == 1) {
          const std::size_t off = j - g.pad;  // wraps, but xo + off is in range
#pragma omp simd
          for (std::size_t xo = xlo; xo < xhi; ++xo) yr[xo] += wij * xr[xo + off];
        } else {
          for (std::size_t xo = xlo; xo < xhi; ++xo) yr[xo] += wij * xr[xo * s + j - g.pad];
        }
      }
    }
  }
}

void depthwise_backward_input_plane(const ConvGeometry& g, const double* dy, const double* w,
                                    double* dx) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride;
  std::fill_n(dx, g.in_h * g.in_w, 0.0);
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t ylo, yhi;
    tap_range(i, g.pad, s, g.in_h, oh, ylo, yhi);
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t xlo, xhi;
      tap_range(j, g.pad, s, g.in_w, ow, xlo, xhi);
      const double wij = w[i * k + j];
      for (std::size_t yo = ylo; yo < yhi; ++yo) {
        double* xr = dx + (yo * s + i - g.pad) * g.in_w;
        const double* yr = dy + yo * ow;
        for (std::size_t xo = xlo; xo < xhi; ++xo) xr[xo * s + j - g.pad] += wij * yr[xo];
      }
    }
  }
}

void depthwise_backward_weight_plane(const ConvGeometry& g, const double* x, const double* dy,
                                     double* dw) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel, s = g.stride;
  for (std::size_t i = 0; i < k; ++i) {
    std::size_t ylo, yhi;
    tap_range(i, g.pad, s, g.in_h, oh, ylo, yhi);
    for (std::size_t j = 0; j < k; ++j) {
      std::size_t xlo, xhi;
      tap_range(j, g.pad, s, g.in_w, ow, xlo, xhi);
      double acc = 0.0;
      for (std::size_t yo = ylo; yo < yhi; ++yo) {
        const double* xr = x + (yo * s + i - g.pad) * g.in_w;
        const double* yr = dy + yo * ow;
        for (std::size_t xo = xlo; xo < xhi; ++xo) acc += yr[xo] * xr[xo * s + j - g.pad];
      }
      dw[i * k + j] += acc;
    }
  }
}

int thread_count() {
#ifdef _OPENMP
  return omp_get_max_threads();
#else
  return 1;
#endif
}

int thread_id() {
#ifdef _OPENMP
  return omp_get_thread_num();
#else
  return 0;
#endif
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias,
                    double* y) {
  check(g);
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h() * g.out_w();
  const auto batch = static_cast<std::ptrdiff_t>(g.batch);
  if (g.depthwise) {
    const auto planes = static_cast<std::ptrdiff_t>(g.batch * g.in_channels);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pc = 0; pc < planes; ++pc) {
      const std::size_t c = static_cast<std::size_t>(pc) % g.in_channels;
      depthwise_forward_plane(g, x + pc * in_plane, w + c * g.kernel * g.kernel,
                              bias ? bias[c] : 0.0, y + pc * out_plane);
    }
    return;
  }
  const std::size_t kdim = g.in_channels * g.kernel * g.kernel;
  const bool pointwise = is_pointwise(g);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t n = 0; n < batch; ++n) {
    thread_local std::vector<double> cols;
    const double* xn = x + n * g.in_channels * in_plane;
    const double* src = xn;
    if (!pointwise) {
      cols.resize(kdim * out_plane);
      im2col(g, xn, cols.data());
      src = cols.data();
    }
    double* yn = y + n * g.out_channels * out_plane;
    if (bias) {
      for (std::size_t co = 0; co < g.out_channels; ++co) std::fill_n(yn + co * out_plane, out_plane, bias[co]);
    }
    gemm(Trans::no, Trans::no, g.out_channels, out_plane, kdim, w, kdim, src, out_plane,
         bias ? 1.0 : 0.0, yn, out_plane);
  }
}

void conv2d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx) {
  check(g);
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h() * g.out_w();
  const auto batch = static_cast<std::ptrdiff_t>(g.batch);
  if (g.depthwise) {
    const auto planes = static_cast<std::ptrdiff_t>(g.batch * g.in_channels);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pc = 0; pc < planes; ++pc) {
      const std::size_t c = static_cast<std::size_t>(pc) % g.in_channels;
      depthwise_backward_input_plane(g, dy + pc * out_plane, w + c * g.kernel * g.kernel,
                                     dx + pc * in_plane);
    }
    return;
  }
  const std::size_t kdim = g.in_channels * g.kernel * g.kernel;
  const bool pointwise = is_pointwise(g);
#pragma omp parallel for schedule(static)
  for (std::ptrdiff_t n = 0; n < batch; ++n) {
    thread_local std::vector<double> cols;
    double* dxn = dx + n * g.in_channels * in_plane;
    const double* dyn = dy + n * g.out_channels * out_plane;
    if (pointwise) {
      gemm(Trans::yes, Trans::no, kdim, out_plane, g.out_channels, w, kdim, dyn, out_plane, 0.0,
           dxn, out_plane);
      continue;
    }
    cols.resize(kdim * out_plane);
    gemm(Trans::yes, Trans::no, kdim, out_plane, g.out_channels, w, kdim, dyn, out_plane, 0.0,
         cols.data(), out_plane);
    col2im(g, cols.data(), dxn);
  }
}

void conv2d_backward_weight(const ConvGeometry& g, const double* x, const double* dy, double* dw,
                            double* dbias) {
  check(g);
  const std::size_t in_plane = g.in_h * g.in_w;
  const std::size_t out_plane = g.out_h() * g.out_w();
  const std::size_t wsize = g.weight_size();
  const int threads = std::min<int>(thread_count(), static_cast<int>(std::max<std::size_t>(g.batch, 1)));
  // Per-thread partial sums keep the reduction order fixed for a given thread count.
  std::vector<std::vector<double>> dw_part(static_cast<std::size_t>(threads), std::vector<double>(wsize, 0.0));
  std::vector<std::vector<double>> db_part(static_cast<std::size_t>(threads),
                                           std::vector<double>(dbias ? g.out_channels : 0, 0.0));
  const std::size_t kdim = g.in_channels * g.kernel * g.kernel;
  const bool pointwise = is_pointwise(g);
  const auto batch = static_cast<std::ptrdiff_t>(g.batch);
#pragma omp parallel for schedule(static) num_threads(threads)
  for (std::ptrdiff_t n = 0; n < batch; ++n) {
    auto& dwp = dw_part[static_cast<std::size_t>(thread_id())];
    auto& dbp = db_part[static_cast<std::size_t>(thread_id())];
    const double* xn = x + n * g.in_channels * in_plane;
    const double* dyn = dy + n * g.out_channels * out_plane;
    if (dbias) {
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        double s = 0.0;
        for (std::size_t q = 0; q < out_plane; ++q) s += dyn[co * out_plane + q];
        dbp[co] += s;
      }
    }
    if (g.depthwise) {
      for (std::size_t c = 0; c < g.in_channels; ++c) {
        depthwise_backward_weight_plane(g, xn + c * in_plane, dyn + c * out_plane,
                                        dwp.data() + c * g.kernel * g.kernel);
      }
      continue;
    }
    thread_local std::vector<double> cols;
    const double* src = xn;
    if (!pointwise) {
      cols.resize(kdim * out_plane);
      im2col(g, xn, cols.data());
      src = cols.data();
    }
    gemm(Trans::no, Trans::yes, g.out_channels, kdim, out_plane, dyn, out_plane, src, out_plane,
         1.0, dwp.data(), kdim);
  }
  for (int t = 0; t < threads; ++t) {
    for (std::size_t i = 0; i < wsize; ++i) dw[i] += dw_part[static_cast<std::size_t>(t)][i];
    if (dbias) {
      for (std::size_t c = 0; c < g.out_channels; ++c) dbias[c] += db_part[static_cast<std::size_t>(t)][c];
    }
  }
}

namespace reference {

namespace {

inline bool input_index(const ConvGeometry& g, std::size_t yo, std::size_t xo, std::size_t i,
                        std::size_t j, std::size_t& iy, std::size_t& ix) {
  const std::ptrdiff_t py = static_cast<std::ptrdiff_t>(yo * g.stride + i) - static_cast<std::ptrdiff_t>(g.pad);
  const std::ptrdiff_t px = static_cast<std::ptrdiff_t>(xo * g.stride + j) - static_cast<std::ptrdiff_t>(g.pad);
  if (py < 0 || px < 0 || py >= static_cast<std::ptrdiff_t>(g.in_h) ||
      px >= static_cast<std::ptrdiff_t>(g.in_w)) {
    return false;
  }
  iy = static_cast<std::size_t>(py);
  ix = static_cast<std::size_t>(px);
  return true;
}

// Calls f(n, co, ci, yo, xo, i, j, x_index, y_index, w_index) for every tap.
template <typename F>
void for_each_tap(const ConvGeometry& g, F&& f) {
  const std::size_t oh = g.out_h(), ow = g.out_w(), k = g.kernel;
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      const std::size_t ci_begin = g.depthwise ? co : 0;
      const std::size_t ci_end = g.depthwise ? co + 1 : g.in_channels;
      for (std::size_t ci = ci_begin; ci < ci_end; ++ci) {
        for (std::size_t yo = 0; yo < oh; ++yo) {
          for (std::size_t xo = 0; xo < ow; ++xo) {
            for (std::size_t i = 0; i < k; ++i) {
              for (std::size_t j = 0; j < k; ++j) {
                std::size_t iy, ix;
                if (!input_index(g, yo, xo, i, j, iy, ix)) continue;
                const std::size_t xi = ((n * g.in_channels + ci) * g.in_h + iy) * g.in_w + ix;
                const std::size_t yi = ((n * g.out_channels + co) * oh + yo) * ow + xo;
                const std::size_t wi = g.depthwise ? (co * k + i) * k + j
                                                   : ((co * g.in_channels + ci) * k + i) * k + j;
                f(xi, yi, wi);
              }
            }
          }
        }
      }
    }
  }
}

}  // namespace

void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias,
                    double* y) {
  check(g);
  const std::size_t plane = g.out_h() * g.out_w();
  for (std::size_t n = 0; n < g.batch; ++n) {
    for (std::size_t co = 0; co < g.out_channels; ++co) {
      std::fill_n(y + (n * g.out_channels + co) * plane, plane, bias ? bias[co] : 0.0);
    }
  }
  for_each_tap(g, [&](std::size_t xi, std::size_t yi, std::size_t wi) { y[yi] += w[wi] * x[xi]; });
}

void conv2d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx) {
  check(g);
  std::fill_n(dx, g.batch * g.in_channels * g.in_h * g.in_w, 0.0);
  for_each_tap(g, [&](std::size_t xi, std::size_t yi, std::size_t wi) { dx[xi] += w[wi] * dy[yi]; });
}

void conv2d_backward_weight(const ConvGeometry& g, const double* x, const double* dy, double* dw,
                            double* dbias) {
  check(g);
  for_each_tap(g, [&](std::size_t xi, std::size_t yi, std::size_t wi) { dw[wi] += x[xi] * dy[yi]; });
  if (dbias) {
    const std::size_t plane = g.out_h() * g.out_w();
    for (std::size_t n = 0; n < g.batch; ++n) {
      for (std::size_t co = 0; co < g.out_channels; ++co) {
        for (std::size_t q = 0; q < plane; ++q) dbias[co] += dy[(n * g.out_channels + co) * plane + q];
      }
    }
  }
}

}  // namespace reference

}  // namespace robarch::kernels
