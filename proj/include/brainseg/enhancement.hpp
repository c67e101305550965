#pragma once

// Five-stage low-complexity contrast enhancement.
//
//   s1 = max(I) / log(max(I) + 1) * log(I + 1)
//   s2 = 1 - exp(-I)
//   s3 = (s1 + s2) / (lambda + s1 * s2)
//   s4 = erf(lambda * atan(exp(s3)) - 0.5 * s3)
//   s5 = (s4 - min s4) / (max s4 - min s4)
//
// All stages are evaluated in double precision and cast to the caller's type at the end.

#include <algorithm>
#include <cmath>
#include <vector>

#include "brainseg/array.hpp"
#include "brainseg/volume.hpp"

namespace brainseg {

struct EnhanceParams {
  double lambda = 1.0;  // no published value; 1.0 is an arbitrary documented default
  double epsilon_guard = 1e-12;
  // Divide each slice by its maximum before the five stages. s3 saturates to a constant for
  // intensities >> 1, so raw scanner units must be brought to [0,1] first.
  bool prescale_to_unit = true;

  void validate() const {
    if (!(lambda > 0.0) || !std::isfinite(lambda)) throw ValidationError("enhance lambda must be > 0");
    if (!(epsilon_guard > 0.0)) throw ValidationError("enhance epsilon_guard must be > 0");
  }
};

enum class DegeneratePolicy { skip_and_copy, fail };

struct EnhanceStages {
  std::vector<double> s1, s2, s3, s4, s5;
};

/// Evaluates every stage; throws DegenerateInputError on all-zero, negative or constant input.
inline EnhanceStages enhance_stages(std::span<const double> image, const EnhanceParams& params) {
  params.validate();
  if (image.empty()) throw DegenerateInputError("enhance: empty image");
  double lo = image[0], hi = image[0];
  for (double v : image) {
    if (!std::isfinite(v) || v < 0.0) throw DegenerateInputError("enhance: input must be finite and nonnegative");
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  const double log_max = std::log(hi + 1.0);
  if (!(hi > 0.0) || log_max < params.epsilon_guard) throw DegenerateInputError("enhance: all-zero image");
  if (hi - lo < params.epsilon_guard) throw DegenerateInputError("enhance: constant image");

  const std::size_t n = image.size();
  const double lambda = params.lambda;
  EnhanceStages st;
  st.s1.resize(n);
  st.s2.resize(n);
  st.s3.resize(n);
  st.s4.resize(n);
  st.s5.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double x = image[i];
    st.s1[i] = hi / log_max * std::log(x + 1.0);
    st.s2[i] = 1.0 - std::exp(-x);
    st.s3[i] = (st.s1[i] + st.s2[i]) / (lambda + st.s1[i] * st.s2[i]);
    st.s4[i] = std::erf(lambda * std::atan(std::exp(st.s3[i])) - 0.5 * st.s3[i]);
  }
  const auto [mn, mx] = std::minmax_element(st.s4.begin(), st.s4.end());
  const double a = *mn, range = *mx - *mn;
  if (!(range > params.epsilon_guard)) throw DegenerateInputError("enhance: stage-4 output is constant");
  for (std::size_t i = 0; i < n; ++i) st.s5[i] = (st.s4[i] - a) / range;
  return st;
}

/// Enhances one 2D image; output spans exactly [0,1].
template <class T>
Array<T> enhance(const Array<T>& image, const EnhanceParams& params) {
  std::vector<double> in(image.begin(), image.end());
  const auto st = enhance_stages(in, params);
  std::vector<T> out(st.s5.size());
  std::transform(st.s5.begin(), st.s5.end(), out.begin(), [](double v) { return static_cast<T>(v); });
  return Array<T>(image.shape(), std::move(out));
}

/// Enhances each modality slice independently. Labels are untouched. Degenerate slices (blank or
/// constant) are copied verbatim under skip_and_copy.
inline Volume enhance_volume(const Volume& volume, const EnhanceParams& params,
                             DegeneratePolicy policy = DegeneratePolicy::skip_and_copy) {
  params.validate();
  Volume out = volume;
  const std::size_t S = volume.slices(), area = volume.height() * volume.width();
  std::vector<double> slice(area);
  for (std::size_t m = 0; m < kModalities; ++m)
    for (std::size_t s = 0; s < S; ++s) {
      const float* src = volume.modalities.data() + (m * S + s) * area;
      float* dst = out.modalities.data() + (m * S + s) * area;
      double hi = 0.0;
      for (std::size_t i = 0; i < area; ++i) hi = std::max(hi, double(src[i]));
      const double scale = (params.prescale_to_unit && hi > 0.0) ? 1.0 / hi : 1.0;
      for (std::size_t i = 0; i < area; ++i) slice[i] = double(src[i]) * scale;
      try {
        const auto st = enhance_stages(slice, params);
        for (std::size_t i = 0; i < area; ++i) dst[i] = float(st.s5[i]);
      } catch (const DegenerateInputError& e) {
        if (policy == DegeneratePolicy::fail)
          throw DegenerateInputError("volume '" + volume.subject_id + "' modality " + kModalityNames[m] + " slice " +
                                     std::to_string(s) + ": " + e.what());
        std::copy_n(src, area, dst);
      }
    }
  return out;
}

}  // namespace brainseg
