#include <algorithm>
#include <vector>

#include "robarch/kernels.hpp"

namespace robarch::kernels {

namespace {

constexpr std::size_t kMr = 4;
constexpr std::size_t kNr = 16;
constexpr std::size_t kKc = 256;
constexpr std::size_t kMc = 128;
constexpr std::size_t kNc = 2048;

inline double load_a(Trans ta, const double* a, std::size_t lda, std::size_t i, std::size_t p) {
  return ta == Trans::no ? a[i * lda + p] : a[p * lda + i];
}

inline double load_b(Trans tb, const double* b, std::size_t ldb, std::size_t p, std::size_t j) {
  return tb == Trans::no ? b[p * ldb + j] : b[j * ldb + p];
}

// Packs an mc x kc block of op(A) into kMr-row panels, p-major inside a panel.
void pack_a(Trans ta, const double* a, std::size_t lda, std::size_t i0, std::size_t mc,
            std::size_t p0, std::size_t kc, double* dst) {
  for (std::size_t ib = 0; ib < mc; ib += kMr) {
    const std::size_t rows = std::min(kMr, mc - ib);
    for (std::size_t p = 0; p < kc; ++p) {
      for (std::size_t i = 0; i < kMr; ++i) {
        *dst++ = i < rows ? load_a(ta, a, lda, i0 + ib + i, p0 + p) : 0.0;
      }
    }
  }
}

void pack_b(Trans tb, const double* b, std::size_t ldb, std::size_t p0, std::size_t kc,
            std::size_t j0, std::size_t nc, double* dst) {
  for (std::size_t jb = 0; jb < nc; jb += kNr) {
    const std::size_t cols = std::min(kNr, nc - jb);
    for (std::size_t p = 0; p < kc; ++p) {
      if (tb == Trans::no && cols == kNr) {
        const double* src = b + (p0 + p) * ldb + j0 + jb;
        std::copy_n(src, kNr, dst);
        dst += kNr;
        continue;
      }
      for (std::size_t j = 0; j < kNr; ++j) {
        *dst++ = j < cols ? load_b(tb, b, ldb, p0 + p, j0 + jb + j) : 0.0;
      }
    }
  }
}

void micro_kernel(std::size_t kc, const double* __restrict a, const double* __restrict b,
                  double* c, std::size_t ldc, std::size_t rows, std::size_t cols, bool accumulate) {
  double acc[kMr][kNr] = {};
  for (std::size_t p = 0; p < kc; ++p) {
    const double* bp = b + p * kNr;
    for (std::size_t i = 0; i < kMr; ++i) {
      const double ai = a[p * kMr + i];
#pragma omp simd
      for (std::size_t j = 0; j < kNr; ++j) acc[i][j] += ai * bp[j];
    }
  }
  for (std::size_t i = 0; i < rows; ++i) {
    double* ci = c + i * ldc;
    if (accumulate) {
      for (std::size_t j = 0; j < cols; ++j) ci[j] += acc[i][j];
    } else {
      for (std::size_t j = 0; j < cols; ++j) ci[j] = acc[i][j];
    }
  }
}

void scale_c(std::size_t m, std::size_t n, double beta, double* c, std::size_t ldc) {
  if (beta == 1.0) return;
  for (std::size_t i = 0; i < m; ++i) std::fill_n(c + i * ldc, n, 0.0);
}

}  // namespace

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc) {
  if (m == 0 || n == 0) return;
  if (k == 0) {
    scale_c(m, n, beta, c, ldc);
    return;
  }
  const bool parallel = m * n * k > (1u << 18);
  std::vector<double> bpack;
  for (std::size_t j0 = 0; j0 < n; j0 += kNc) {
    const std::size_t nc = std::min(kNc, n - j0);
    const std::size_t nc_pad = (nc + kNr - 1) / kNr * kNr;
    for (std::size_t p0 = 0; p0 < k; p0 += kKc) {
      const std::size_t kc = std::min(kKc, k - p0);
      const bool accumulate = p0 > 0 || beta == 1.0;
      bpack.resize(nc_pad * kc);
      pack_b(tb, b, ldb, p0, kc, j0, nc, bpack.data());
      const std::size_t mblocks = (m + kMc - 1) / kMc;
#pragma omp parallel for schedule(static) if (parallel)
      for (std::size_t mb = 0; mb < mblocks; ++mb) {
        const std::size_t i0 = mb * kMc;
        const std::size_t mc = std::min(kMc, m - i0);
        const std::size_t mc_pad = (mc + kMr - 1) / kMr * kMr;
        thread_local std::vector<double> apack;
        apack.resize(mc_pad * kc);
        pack_a(ta, a, lda, i0, mc, p0, kc, apack.data());
        for (std::size_t jb = 0; jb < nc; jb += kNr) {
          const std::size_t cols = std::min(kNr, nc - jb);
          for (std::size_t ib = 0; ib < mc; ib += kMr) {
            const std::size_t rows = std::min(kMr, mc - ib);
            micro_kernel(kc, apack.data() + ib * kc, bpack.data() + jb * kc,
                         c + (i0 + ib) * ldc + j0 + jb, ldc, rows, cols, accumulate);
          }
        }
      }
    }
  }
}

namespace reference {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += load_a(ta, a, lda, i, p) * load_b(tb, b, ldb, p, j);
      c[i * ldc + j] = (beta == 1.0 ? c[i * ldc + j] : 0.0) + s;
    }
  }
}

}  // namespace reference

}  // namespace robarch::kernels
