#pragma once

#include <Eigen/Core>

#include <cstddef>

namespace brainseg::nn {

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using MatMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

/// C[m x n] (+)= op(A) * op(B), row-major, op = transpose when the flag is set.
/// A is m x k (or k x m when trans_a), B is k x n (or n x k when trans_b).
template <class T>
void gemm(bool trans_a, bool trans_b, std::size_t m, std::size_t n, std::size_t k, const T* a, const T* b, T* c,
          bool accumulate) {
  const auto M = Eigen::Index(m), N = Eigen::Index(n), K = Eigen::Index(k);
  MatMap<T> C(c, M, N);
  if (!accumulate) C.setZero();
  if (!trans_a && !trans_b)
    C.noalias() += ConstMatMap<T>(a, M, K) * ConstMatMap<T>(b, K, N);
  else if (trans_a && !trans_b)
    C.noalias() += ConstMatMap<T>(a, K, M).transpose() * ConstMatMap<T>(b, K, N);
  else if (!trans_a && trans_b)
    C.noalias() += ConstMatMap<T>(a, M, K) * ConstMatMap<T>(b, N, K).transpose();
  else
    C.noalias() += ConstMatMap<T>(a, K, M).transpose() * ConstMatMap<T>(b, N, K).transpose();
}

/// Geometry of a 2D convolution window sweep with zero padding.
struct ConvGeometry {
  std::size_t channels, height, width;
  std::size_t kernel, stride, pad_top, pad_left;
  std::size_t out_h, out_w;

  std::size_t col_rows() const { return channels * kernel * kernel; }
  std::size_t col_cols() const { return out_h * out_w; }
};

/// Unfolds one image [C,H,W] into col [C*k*k, OH*OW].
template <class T>
void im2col(const T* img, const ConvGeometry& g, T* col) {
  const std::size_t k = g.kernel, ncols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        T* row = col + ((c * k + ky) * k + kx) * ncols;
        const T* plane = img + c * g.height * g.width;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = long(oy * g.stride + ky) - long(g.pad_top);
          T* dst = row + oy * g.out_w;
          if (iy < 0 || iy >= long(g.height)) {
            for (std::size_t ox = 0; ox < g.out_w; ++ox) dst[ox] = T(0);
            continue;
          }
          const T* src = plane + std::size_t(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = long(ox * g.stride + kx) - long(g.pad_left);
            dst[ox] = (ix < 0 || ix >= long(g.width)) ? T(0) : src[ix];
          }
        }
      }
}

/// Adjoint of im2col: scatters col back into img (accumulating).
template <class T>
void col2im(const T* col, const ConvGeometry& g, T* img) {
  const std::size_t k = g.kernel, ncols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ky = 0; ky < k; ++ky)
      for (std::size_t kx = 0; kx < k; ++kx) {
        const T* row = col + ((c * k + ky) * k + kx) * ncols;
        T* plane = img + c * g.height * g.width;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const long iy = long(oy * g.stride + ky) - long(g.pad_top);
          if (iy < 0 || iy >= long(g.height)) continue;
          const T* src = row + oy * g.out_w;
          T* dst = plane + std::size_t(iy) * g.width;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const long ix = long(ox * g.stride + kx) - long(g.pad_left);
            if (ix >= 0 && ix < long(g.width)) dst[ix] += src[ox];
          }
        }
      }
}

}  // namespace brainseg::nn
