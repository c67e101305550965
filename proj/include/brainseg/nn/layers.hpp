#pragma once

// Layers operate on [N, C, H, W] arrays. forward() is const and records whatever backward() needs
// on an optional Tape, so a network can serve concurrent inference while a single owner trains it.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "brainseg/array.hpp"
#include "brainseg/nn/ops.hpp"
#include "brainseg/rng.hpp"

namespace brainseg::nn {

template <class T>
struct Param {
  std::string name;
  Array<T> value;
  Array<T> grad;
  bool trainable = true;
  // Xavier fan sizes; zero for parameters that are not Xavier-initialized.
  std::size_t fan_in = 0, fan_out = 0;

  Param() = default;
  Param(std::string n, Shape shape, T init = T(0)) : name(std::move(n)), value(shape, init), grad(shape, T(0)) {}
  void zero_grad() { grad.fill(T(0)); }
};

template <class T>
class Tape {
 public:
  std::vector<Array<T>>& save(const void* key) { return saved_[key]; }
  std::vector<std::uint32_t>& save_indices(const void* key) { return indices_[key]; }

  const std::vector<Array<T>>& saved(const void* key) const {
    auto it = saved_.find(key);
    if (it == saved_.end()) throw std::logic_error("backward called without a recorded forward pass");
    return it->second;
  }
  const std::vector<std::uint32_t>& indices(const void* key) const {
    auto it = indices_.find(key);
    if (it == indices_.end()) throw std::logic_error("backward called without a recorded forward pass");
    return it->second;
  }
  void clear() {
    saved_.clear();
    indices_.clear();
  }

 private:
  std::unordered_map<const void*, std::vector<Array<T>>> saved_;
  std::unordered_map<const void*, std::vector<std::uint32_t>> indices_;
};

inline void require_nchw(const Shape& s, const char* who) {
  if (s.size() != 4) throw ShapeError(std::string(who) + ": expected [N,C,H,W], got " + shape_str(s));
}

/// Glorot/Xavier uniform: U(-a, a) with a = sqrt(6 / (fan_in + fan_out)).
template <class T>
void xavier_uniform(Param<T>& p, Rng& rng) {
  const double bound = std::sqrt(6.0 / double(p.fan_in + p.fan_out));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (auto& v : p.value) v = T(dist(rng));
}

enum class Padding {
  same,  // stride 1, odd kernel, output size == input size
  ceil,  // kernel == stride, right/bottom zero padding, output = ceil(input / stride)
};

template <class T>
class Conv2d {
 public:
  Param<T> weight, bias;

  Conv2d() = default;
  Conv2d(const std::string& name, std::size_t in, std::size_t out, std::size_t kernel, std::size_t stride = 1,
         Padding padding = Padding::same, bool with_bias = true)
      : weight(name + ".weight", {out, in, kernel, kernel}),
        bias(name + ".bias", {with_bias ? out : 0}),
        in_(in), out_(out), kernel_(kernel), stride_(stride), padding_(padding) {
    if (in == 0 || out == 0 || kernel == 0 || stride == 0) throw ConstructionError(name + ": zero-sized convolution");
    if (padding == Padding::same && (kernel % 2 == 0 || stride != 1))
      throw ConstructionError(name + ": same padding needs an odd kernel and stride 1");
    if (padding == Padding::ceil && kernel != stride)
      throw ConstructionError(name + ": ceil padding needs kernel == stride");
    weight.fan_in = in * kernel * kernel;
    weight.fan_out = out * kernel * kernel;
  }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel() const { return kernel_; }

  ConvGeometry geometry(std::size_t h, std::size_t w) const {
    ConvGeometry g{in_, h, w, kernel_, stride_, 0, 0, h, w};
    if (padding_ == Padding::same) {
      g.pad_top = g.pad_left = kernel_ / 2;
    } else {
      if (h < kernel_ || w < kernel_)
        throw ShapeError(weight.name + ": input " + std::to_string(h) + "x" + std::to_string(w) +
                         " smaller than one " + std::to_string(kernel_) + "x" + std::to_string(kernel_) + " patch");
      g.out_h = (h + stride_ - 1) / stride_;
      g.out_w = (w + stride_ - 1) / stride_;
    }
    return g;
  }

  Array<T> forward(const Array<T>& x, Tape<T>* tape) const {
    require_nchw(x.shape(), "Conv2d");
    if (x.dim(1) != in_)
      throw ShapeError(weight.name + ": expected " + std::to_string(in_) + " input channels, got " +
                       std::to_string(x.dim(1)));
    const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const ConvGeometry g = geometry(H, W);
    const bool direct = kernel_ == 1 && stride_ == 1;
    Array<T> y({N, out_, g.out_h, g.out_w});
    std::vector<T> col(direct ? 0 : g.col_rows() * g.col_cols());
    const std::size_t in_plane = in_ * H * W, out_plane = out_ * g.out_h * g.out_w, hw = g.out_h * g.out_w;
    for (std::size_t n = 0; n < N; ++n) {
      const T* src = x.data() + n * in_plane;
      if (!direct) im2col(src, g, col.data());
      T* dst = y.data() + n * out_plane;
      gemm<T>(false, false, out_, hw, g.col_rows(), weight.value.data(), direct ? src : col.data(), dst, false);
      for (std::size_t o = 0; o < bias.value.size(); ++o) {
        const T b = bias.value[o];
        T* row = dst + o * hw;
        for (std::size_t i = 0; i < hw; ++i) row[i] += b;
      }
    }
    if (tape) tape->save(this) = {x};
    return y;
  }

  Array<T> backward(const Array<T>& dy, const Tape<T>& tape) {
    const Array<T>& x = tape.saved(this).at(0);
    const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3);
    const ConvGeometry g = geometry(H, W);
    const bool direct = kernel_ == 1 && stride_ == 1;
    const std::size_t hw = g.out_h * g.out_w, rows = g.col_rows();
    const std::size_t in_plane = in_ * H * W, out_plane = out_ * hw;
    Array<T> dx(x.shape(), T(0));
    std::vector<T> col(direct ? 0 : rows * hw), dcol(direct ? 0 : rows * hw);
    for (std::size_t n = 0; n < N; ++n) {
      const T* src = x.data() + n * in_plane;
      const T* g_out = dy.data() + n * out_plane;
      if (weight.trainable) {
        if (!direct) im2col(src, g, col.data());
        gemm<T>(false, true, out_, rows, hw, g_out, direct ? src : col.data(), weight.grad.data(), true);
      }
      if (bias.trainable)
        for (std::size_t o = 0; o < bias.value.size(); ++o) {
          T s = T(0);
          for (std::size_t i = 0; i < hw; ++i) s += g_out[o * hw + i];
          bias.grad[o] += s;
        }
      if (direct) {
        gemm<T>(true, false, rows, hw, out_, weight.value.data(), g_out, dx.data() + n * in_plane, true);
      } else {
        gemm<T>(true, false, rows, hw, out_, weight.value.data(), g_out, dcol.data(), false);
        col2im(dcol.data(), g, dx.data() + n * in_plane);
      }
    }
    return dx;
  }

  // A bias directly followed by instance normalization is cancelled by the mean subtraction.
  void params(std::vector<Param<T>*>& out) {
    out.push_back(&weight);
    if (bias.value.size()) out.push_back(&bias);
  }
  void params(std::vector<const Param<T>*>& out) const {
    out.push_back(&weight);
    if (bias.value.size()) out.push_back(&bias);
  }

 private:
  std::size_t in_ = 0, out_ = 0, kernel_ = 1, stride_ = 1;
  Padding padding_ = Padding::same;
};

/// 2x2 transposed convolution with stride 2 (exact 2x upsampling).
template <class T>
class ConvTranspose2x2 {
 public:
  Param<T> weight, bias;  // weight [in, out, 2, 2]

  ConvTranspose2x2() = default;
  ConvTranspose2x2(const std::string& name, std::size_t in, std::size_t out)
      : weight(name + ".weight", {in, out, 2, 2}), bias(name + ".bias", {out}), in_(in), out_(out) {
    if (in == 0 || out == 0) throw ConstructionError(name + ": zero-sized transposed convolution");
    weight.fan_in = out * 4;
    weight.fan_out = in * 4;
  }

  Array<T> forward(const Array<T>& x, Tape<T>* tape) const {
    require_nchw(x.shape(), "ConvTranspose2x2");
    if (x.dim(1) != in_) throw ShapeError(weight.name + ": input channel mismatch");
    const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3), hw = H * W, k4 = out_ * 4;
    Array<T> y({N, out_, 2 * H, 2 * W});
    std::vector<T> cols(k4 * hw);
    for (std::size_t n = 0; n < N; ++n) {
      gemm<T>(true, false, k4, hw, in_, weight.value.data(), x.data() + n * in_ * hw, cols.data(), false);
      T* dst = y.data() + n * out_ * 4 * hw;
      for (std::size_t o = 0; o < out_; ++o)
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) {
            const T* row = cols.data() + (o * 4 + a * 2 + b) * hw;
            const T bv = bias.value[o];
            for (std::size_t i = 0; i < H; ++i)
              for (std::size_t j = 0; j < W; ++j)
                dst[(o * 2 * H + 2 * i + a) * 2 * W + 2 * j + b] = row[i * W + j] + bv;
          }
    }
    if (tape) tape->save(this) = {x};
    return y;
  }

  Array<T> backward(const Array<T>& dy, const Tape<T>& tape) {
    const Array<T>& x = tape.saved(this).at(0);
    const std::size_t N = x.dim(0), H = x.dim(2), W = x.dim(3), hw = H * W, k4 = out_ * 4;
    Array<T> dx(x.shape(), T(0));
    std::vector<T> cols(k4 * hw);
    for (std::size_t n = 0; n < N; ++n) {
      const T* g = dy.data() + n * out_ * 4 * hw;
      for (std::size_t o = 0; o < out_; ++o) {
        T bsum = T(0);
        for (std::size_t a = 0; a < 2; ++a)
          for (std::size_t b = 0; b < 2; ++b) {
            T* row = cols.data() + (o * 4 + a * 2 + b) * hw;
            for (std::size_t i = 0; i < H; ++i)
              for (std::size_t j = 0; j < W; ++j) {
                const T v = g[(o * 2 * H + 2 * i + a) * 2 * W + 2 * j + b];
                row[i * W + j] = v;
                bsum += v;
              }
          }
        if (bias.trainable) bias.grad[o] += bsum;
      }
      const T* src = x.data() + n * in_ * hw;
      if (weight.trainable) gemm<T>(false, true, in_, k4, hw, src, cols.data(), weight.grad.data(), true);
      gemm<T>(false, false, in_, hw, k4, weight.value.data(), cols.data(), dx.data() + n * in_ * hw, false);
    }
    return dx;
  }

  void params(std::vector<Param<T>*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
  void params(std::vector<const Param<T>*>& out) const {
    out.push_back(&weight);
    out.push_back(&bias);
  }

 private:
  std::size_t in_ = 0, out_ = 0;
};

/// Per-sample, per-channel normalization with a learned affine transform.
template <class T>
class InstanceNorm {
 public:
  Param<T> gamma, beta;
  double eps = 1e-5;

  InstanceNorm() = default;
  InstanceNorm(const std::string& name, std::size_t channels)
      : gamma(name + ".gamma", {channels}, T(1)), beta(name + ".beta", {channels}, T(0)) {}

  Array<T> forward(const Array<T>& x, Tape<T>* tape) const {
    require_nchw(x.shape(), "InstanceNorm");
    const std::size_t N = x.dim(0), C = x.dim(1), M = x.dim(2) * x.dim(3);
    if (C != gamma.value.size()) throw ShapeError(gamma.name + ": channel mismatch");
    Array<T> y(x.shape());
    Array<T> xhat(tape ? x.shape() : Shape{0});
    Array<T> inv_std(Shape{tape ? N * C : 0});
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const T* src = x.data() + nc * M;
      double mean = 0.0;
      for (std::size_t i = 0; i < M; ++i) mean += src[i];
      mean /= double(M);
      double var = 0.0;
      for (std::size_t i = 0; i < M; ++i) var += (src[i] - mean) * (src[i] - mean);
      var /= double(M);
      const double is = 1.0 / std::sqrt(var + eps);
      const std::size_t c = nc % C;
      const T g = gamma.value[c], b = beta.value[c];
      T* dst = y.data() + nc * M;
      for (std::size_t i = 0; i < M; ++i) {
        const T xh = T((src[i] - mean) * is);
        if (tape) xhat[nc * M + i] = xh;
        dst[i] = g * xh + b;
      }
      if (tape) inv_std[nc] = T(is);
    }
    if (tape) tape->save(this) = {std::move(xhat), std::move(inv_std)};
    return y;
  }

  Array<T> backward(const Array<T>& dy, const Tape<T>& tape) {
    const auto& saved = tape.saved(this);
    const Array<T>& xhat = saved.at(0);
    const Array<T>& inv_std = saved.at(1);
    const std::size_t N = xhat.dim(0), C = xhat.dim(1), M = xhat.dim(2) * xhat.dim(3);
    Array<T> dx(xhat.shape());
    for (std::size_t nc = 0; nc < N * C; ++nc) {
      const std::size_t c = nc % C;
      const T* g = dy.data() + nc * M;
      const T* xh = xhat.data() + nc * M;
      double sum_dy = 0.0, sum_dy_xh = 0.0;
      for (std::size_t i = 0; i < M; ++i) {
        sum_dy += g[i];
        sum_dy_xh += double(g[i]) * xh[i];
      }
      if (beta.trainable) beta.grad[c] += T(sum_dy);
      if (gamma.trainable) gamma.grad[c] += T(sum_dy_xh);
      const double gm = gamma.value[c];
      // With dxhat = gamma * dy: dx = inv_std/M * (M dxhat - sum dxhat - xhat sum(dxhat xhat)).
      const double k = gm * double(inv_std[nc]) / double(M);
      T* out = dx.data() + nc * M;
      for (std::size_t i = 0; i < M; ++i)
        out[i] = T(k * (double(M) * g[i] - sum_dy - double(xh[i]) * sum_dy_xh));
    }
    return dx;
  }

  void params(std::vector<Param<T>*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
  void params(std::vector<const Param<T>*>& out) const {
    out.push_back(&gamma);
    out.push_back(&beta);
  }
};

template <class T>
class ReLU {
 public:
  Array<T> forward(const Array<T>& x, Tape<T>* tape) const {
    Array<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
    if (tape) tape->save(this) = {y};
    return y;
  }
  Array<T> backward(const Array<T>& dy, const Tape<T>& tape) const {
    const Array<T>& y = tape.saved(this).at(0);
    Array<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = y[i] > T(0) ? dy[i] : T(0);
    return dx;
  }
};

template <class T>
class LeakyReLU {
 public:
  T slope = T(0.2);

  LeakyReLU() = default;
  explicit LeakyReLU(T s) : slope(s) {}

  Array<T> forward(const Array<T>& x, Tape<T>* tape) const {
    Array<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : slope * x[i];
    if (tape) tape->save(this) = {x};
    return y;
  }
  Array<T> backward(const Array<T>& dy, const Tape<T>& tape) const {
    const Array<T>& x = tape.saved(this).at(0);
    Array<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = x[i] > T(0) ? dy[i] : slope * dy[i];
    return dx;
  }
};

template <class T>
class Tanh {
 public:
  Array<T> forward(const Array<T>& x, Tape<T>* tape) const {
    Array<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::tanh(x[i]);
    if (tape) tape->save(this) = {y};
    return y;
  }
  Array<T> backward(const Array<T>& dy, const Tape<T>& tape) const {
    const Array<T>& y = tape.saved(this).at(0);
    Array<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * (T(1) - y[i] * y[i]);
    return dx;
  }
};

template <class T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
class Sigmoid {
 public:
  Array<T> forward(const Array<T>& x, Tape<T>* tape) const {
    Array<T> y(x.shape());
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = stable_sigmoid(x[i]);
    if (tape) tape->save(this) = {y};
    return y;
  }
  Array<T> backward(const Array<T>& dy, const Tape<T>& tape) const {
    const Array<T>& y = tape.saved(this).at(0);
    Array<T> dx(dy.shape());
    for (std::size_t i = 0; i < dy.size(); ++i) dx[i] = dy[i] * y[i] * (T(1) - y[i]);
    return dx;
  }
};

/// Softmax across the channel axis of [N,C,H,W].
template <class T>
class ChannelSoftmax {
 public:
  Array<T> forward(const Array<T>& x, Tape<T>* tape) const {
    require_nchw(x.shape(), "ChannelSoftmax");
    const std::size_t N = x.dim(0), C = x.dim(1), M = x.dim(2) * x.dim(3);
    Array<T> y(x.shape());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < M; ++i) {
        const T* src = x.data() + n * C * M + i;
        T* dst = y.data() + n * C * M + i;
        T mx = src[0];
        for (std::size_t c = 1; c < C; ++c) mx = std::max(mx, src[c * M]);
        T sum = T(0);
        for (std::size_t c = 0; c < C; ++c) {
          dst[c * M] = std::exp(src[c * M] - mx);
          sum += dst[c * M];
        }
        for (std::size_t c = 0; c < C; ++c) dst[c * M] /= sum;
      }
    if (tape) tape->save(this) = {y};
    return y;
  }
  Array<T> backward(const Array<T>& dy, const Tape<T>& tape) const {
    const Array<T>& y = tape.saved(this).at(0);
    const std::size_t N = y.dim(0), C = y.dim(1), M = y.dim(2) * y.dim(3);
    Array<T> dx(y.shape());
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t i = 0; i < M; ++i) {
        const std::size_t base = n * C * M + i;
        T dot = T(0);
        for (std::size_t c = 0; c < C; ++c) dot += y[base + c * M] * dy[base + c * M];
        for (std::size_t c = 0; c < C; ++c) dx[base + c * M] = y[base + c * M] * (dy[base + c * M] - dot);
      }
    return dx;
  }
};

/// 2x2 max pooling with stride 2; H and W must be even.
template <class T>
class MaxPool2x2 {
 public:
  Array<T> forward(const Array<T>& x, Tape<T>* tape) const {
    require_nchw(x.shape(), "MaxPool2x2");
    const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    if (H % 2 || W % 2) throw ShapeError("MaxPool2x2: spatial size must be even, got " + shape_str(x.shape()));
    const std::size_t oh = H / 2, ow = W / 2;
    Array<T> y({N, C, oh, ow});
    std::vector<std::uint32_t> arg(tape ? y.size() : 0);
    for (std::size_t nc = 0; nc < N * C; ++nc)
      for (std::size_t i = 0; i < oh; ++i)
        for (std::size_t j = 0; j < ow; ++j) {
          std::size_t best = nc * H * W + 2 * i * W + 2 * j;
          for (std::size_t a = 0; a < 2; ++a)
            for (std::size_t b = 0; b < 2; ++b) {
              const std::size_t idx = nc * H * W + (2 * i + a) * W + 2 * j + b;
              if (x[idx] > x[best]) best = idx;
            }
          const std::size_t o = (nc * oh + i) * ow + j;
          y[o] = x[best];
          if (tape) arg[o] = std::uint32_t(best);
        }
    if (tape) {
      tape->save(this) = {Array<T>(x.shape(), T(0))};  // only the input shape is needed
      tape->save_indices(this) = std::move(arg);
    }
    return y;
  }
  Array<T> backward(const Array<T>& dy, const Tape<T>& tape) const {
    Array<T> dx(tape.saved(this).at(0).shape(), T(0));
    const auto& arg = tape.indices(this);
    for (std::size_t o = 0; o < dy.size(); ++o) dx[arg[o]] += dy[o];
    return dx;
  }
};

/// Concatenates along channels: [N,Ca,H,W] ++ [N,Cb,H,W].
template <class T>
Array<T> concat_channels(const Array<T>& a, const Array<T>& b) {
  require_nchw(a.shape(), "concat");
  require_nchw(b.shape(), "concat");
  if (a.dim(0) != b.dim(0) || a.dim(2) != b.dim(2) || a.dim(3) != b.dim(3))
    throw ShapeError("concat: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  const std::size_t N = a.dim(0), ca = a.dim(1), cb = b.dim(1), M = a.dim(2) * a.dim(3);
  Array<T> y({N, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(a.data() + n * ca * M, ca * M, y.data() + n * (ca + cb) * M);
    std::copy_n(b.data() + n * cb * M, cb * M, y.data() + n * (ca + cb) * M + ca * M);
  }
  return y;
}

template <class T>
std::pair<Array<T>, Array<T>> split_channels(const Array<T>& y, std::size_t ca) {
  const std::size_t N = y.dim(0), C = y.dim(1), M = y.dim(2) * y.dim(3), cb = C - ca;
  Array<T> a({N, ca, y.dim(2), y.dim(3)}), b({N, cb, y.dim(2), y.dim(3)});
  for (std::size_t n = 0; n < N; ++n) {
    std::copy_n(y.data() + n * C * M, ca * M, a.data() + n * ca * M);
    std::copy_n(y.data() + n * C * M + ca * M, cb * M, b.data() + n * cb * M);
  }
  return {std::move(a), std::move(b)};
}

template <class T>
void add_inplace(Array<T>& acc, const Array<T>& v) {
  require_same_shape(acc, v, "add_inplace");
  for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += v[i];
}

}  // namespace brainseg::nn
