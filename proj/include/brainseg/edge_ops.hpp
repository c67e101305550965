#pragma once

// Boundary attention for the adversarial branch:
//   expand   5x5 stride-1 max filter (shape preserving dilation)
//   laplace  4-neighbour Laplacian, replicate boundary
//   pool     5x5 stride-5 max pooling down to the discriminator grid (ceil)
// edge_attention(M) = pool(|laplace(expand(M))|)

#include <cmath>
#include <cstdint>
#include <vector>

#include "brainseg/array.hpp"

namespace brainseg {

inline constexpr std::size_t kExpandWindow = 5;
inline constexpr std::size_t kEdgePool = 5;

template <class T>
struct EdgeMap {
  Array<T> values;  // [ceil(H/pool), ceil(W/pool)], nonnegative
  std::size_t source_height = 0, source_width = 0;
};

namespace detail {

inline void require_2d(const Shape& s, const char* who) {
  if (s.size() != 2) throw ShapeError(std::string(who) + ": expected a 2D array, got " + shape_str(s));
}

inline std::size_t clamp_index(long i, std::size_t n) {
  return i < 0 ? 0 : (i >= long(n) ? n - 1 : std::size_t(i));
}

}  // namespace detail

/// Max over the window x window neighbourhood of each pixel (edge-clamped). If `argmax` is given,
/// it receives the flat index of the selected input pixel for every output pixel.
template <class T>
Array<T> maxpool_expand(const Array<T>& mask, std::size_t window = kExpandWindow,
                        std::vector<std::uint32_t>* argmax = nullptr) {
  detail::require_2d(mask.shape(), "maxpool_expand");
  const std::size_t H = mask.dim(0), W = mask.dim(1);
  const long r = long(window / 2);
  // Separable: rows then columns, tracking indices.
  Array<T> tmp(mask.shape());
  std::vector<std::uint32_t> tmp_idx(mask.size());
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      std::size_t best = i * W + detail::clamp_index(long(j) - r, W);
      for (long d = -r; d <= r; ++d) {
        const std::size_t idx = i * W + detail::clamp_index(long(j) + d, W);
        if (mask[idx] > mask[best]) best = idx;
      }
      tmp[i * W + j] = mask[best];
      tmp_idx[i * W + j] = std::uint32_t(best);
    }
  Array<T> out(mask.shape());
  if (argmax) argmax->assign(mask.size(), 0);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      std::size_t best = detail::clamp_index(long(i) - r, H) * W + j;
      for (long d = -r; d <= r; ++d) {
        const std::size_t idx = detail::clamp_index(long(i) + d, H) * W + j;
        if (tmp[idx] > tmp[best]) best = idx;
      }
      out[i * W + j] = tmp[best];
      if (argmax) (*argmax)[i * W + j] = tmp_idx[best];
    }
  return out;
}

/// L(M)_{ij} = M_{i+1,j} + M_{i-1,j} + M_{i,j+1} + M_{i,j-1} - 4 M_{ij}, replicate boundary.
template <class T>
Array<T> laplacian(const Array<T>& m) {
  detail::require_2d(m.shape(), "laplacian");
  const std::size_t H = m.dim(0), W = m.dim(1);
  Array<T> out(m.shape());
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const std::size_t up = i == 0 ? 0 : i - 1, dn = i + 1 == H ? i : i + 1;
      const std::size_t lf = j == 0 ? 0 : j - 1, rt = j + 1 == W ? j : j + 1;
      out(i, j) = m(dn, j) + m(up, j) + m(i, rt) + m(i, lf) - T(4) * m(i, j);
    }
  return out;
}

/// Adjoint of laplacian() (replicate boundary folds stencil weights onto edge pixels).
template <class T>
Array<T> laplacian_adjoint(const Array<T>& g) {
  const std::size_t H = g.dim(0), W = g.dim(1);
  Array<T> out(g.shape(), T(0));
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const T v = g(i, j);
      const std::size_t up = i == 0 ? 0 : i - 1, dn = i + 1 == H ? i : i + 1;
      const std::size_t lf = j == 0 ? 0 : j - 1, rt = j + 1 == W ? j : j + 1;
      out(dn, j) += v;
      out(up, j) += v;
      out(i, rt) += v;
      out(i, lf) += v;
      out(i, j) -= T(4) * v;
    }
  return out;
}

/// Non-overlapping factor x factor max pooling; partial windows at the bottom/right are kept.
template <class T>
Array<T> downsample_max(const Array<T>& m, std::size_t factor = kEdgePool, std::vector<std::uint32_t>* argmax = nullptr) {
  detail::require_2d(m.shape(), "downsample_max");
  const std::size_t H = m.dim(0), W = m.dim(1);
  const std::size_t oh = (H + factor - 1) / factor, ow = (W + factor - 1) / factor;
  Array<T> out({oh, ow});
  if (argmax) argmax->assign(oh * ow, 0);
  for (std::size_t bi = 0; bi < oh; ++bi)
    for (std::size_t bj = 0; bj < ow; ++bj) {
      std::size_t best = bi * factor * W + bj * factor;
      for (std::size_t i = bi * factor; i < std::min(H, (bi + 1) * factor); ++i)
        for (std::size_t j = bj * factor; j < std::min(W, (bj + 1) * factor); ++j)
          if (m(i, j) > m[best]) best = i * W + j;
      out(bi, bj) = m[best];
      if (argmax) (*argmax)[bi * ow + bj] = std::uint32_t(best);
    }
  return out;
}

template <class T>
EdgeMap<T> edge_attention(const Array<T>& mask) {
  detail::require_2d(mask.shape(), "edge_attention");
  Array<T> lap = laplacian(maxpool_expand(mask));
  for (auto& v : lap) v = std::abs(v);
  return {downsample_max(lap), mask.dim(0), mask.dim(1)};
}

/// d(sum(g * edge_attention(M)))/dM using the subgradient selected by each max.
template <class T>
Array<T> edge_attention_backward(const Array<T>& mask, const Array<T>& grad_edge) {
  std::vector<std::uint32_t> expand_arg, pool_arg;
  const Array<T> expanded = maxpool_expand(mask, kExpandWindow, &expand_arg);
  const Array<T> lap = laplacian(expanded);
  Array<T> abs_lap(lap.shape());
  for (std::size_t i = 0; i < lap.size(); ++i) abs_lap[i] = std::abs(lap[i]);
  const Array<T> pooled = downsample_max(abs_lap, kEdgePool, &pool_arg);
  require_same_shape(pooled, grad_edge, "edge_attention_backward");
  Array<T> g_lap(lap.shape(), T(0));
  for (std::size_t k = 0; k < pool_arg.size(); ++k) {
    const std::size_t i = pool_arg[k];
    const T sign = lap[i] > T(0) ? T(1) : (lap[i] < T(0) ? T(-1) : T(0));
    g_lap[i] += grad_edge[k] * sign;
  }
  const Array<T> g_exp = laplacian_adjoint(g_lap);
  Array<T> g_mask(mask.shape(), T(0));
  for (std::size_t i = 0; i < g_exp.size(); ++i) g_mask[expand_arg[i]] += g_exp[i];
  return g_mask;
}

/// Elementwise product of a discriminator map and an edge map of the same shape.
template <class T>
Array<T> gate(const Array<T>& disc_map, const EdgeMap<T>& edge) {
  if (disc_map.shape() != edge.values.shape())
    throw ShapeError("gate: discriminator map " + shape_str(disc_map.shape()) + " vs edge map " +
                     shape_str(edge.values.shape()));
  Array<T> out(disc_map.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = disc_map[i] * edge.values[i];
  return out;
}

}  // namespace brainseg
