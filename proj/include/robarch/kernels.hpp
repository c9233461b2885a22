#pragma once

// Dense compute kernels. Every kernel has an OpenMP-parallel version in
// `robarch::kernels` and a plain serial version in
// `robarch::kernels::reference` with the same signature; the reference
// versions exist for testing and benchmarking only.

#include <cstddef>

namespace robarch::kernels {

enum class Trans { no, yes };

// C = op(A) * op(B) + beta * C, row-major. op(A) is M x K, op(B) is K x N.
// beta must be 0 or 1.
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc);

struct ConvGeometry {
  std::size_t batch = 1;
  std::size_t in_channels = 1;
  std::size_t in_h = 1;
  std::size_t in_w = 1;
  std::size_t out_channels = 1;
  std::size_t kernel = 1;
  std::size_t stride = 1;
  std::size_t pad = 0;
  bool depthwise = false;  // requires in_channels == out_channels

  std::size_t out_h() const { return (in_h + 2 * pad - kernel) / stride + 1; }
  std::size_t out_w() const { return (in_w + 2 * pad - kernel) / stride + 1; }
  std::size_t weight_size() const {
    return depthwise ? out_channels * kernel * kernel
                     : out_channels * in_channels * kernel * kernel;
  }
};

// y = conv(x, w) + bias; bias may be null. Layouts: x NCHW, w (Co, Ci, k, k)
// or (C, 1, k, k) for depthwise.
void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias,
                    double* y);
// dx = conv^T(dy, w); dx is overwritten.
void conv2d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx);
// dw += corr(x, dy); dbias += sum(dy) when non-null.
void conv2d_backward_weight(const ConvGeometry& g, const double* x, const double* dy, double* dw,
                            double* dbias);

namespace reference {

void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, const double* a,
          std::size_t lda, const double* b, std::size_t ldb, double beta, double* c,
          std::size_t ldc);
void conv2d_forward(const ConvGeometry& g, const double* x, const double* w, const double* bias,
                    double* y);
void conv2d_backward_input(const ConvGeometry& g, const double* dy, const double* w, double* dx);
void conv2d_backward_weight(const ConvGeometry& g, const double* x, const double* dy, double* dw,
                            double* dbias);

}  // namespace reference

}  // namespace robarch::kernels
