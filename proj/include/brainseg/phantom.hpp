#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "brainseg/rng.hpp"
#include "brainseg/volume.hpp"

namespace brainseg {

/// Parameters of the synthetic brain phantom generator.
struct PhantomSpec {
  std::size_t image_size = 64;
  std::size_t n_slices = 1;
  std::size_t n_subjects = 10;
  std::size_t tumor_count_min = 1;
  std::size_t tumor_count_max = 3;
  double tumor_radius_min = 4.0;
  double tumor_radius_max = 9.0;
  double noise_sigma = 0.03;  // fraction of the tissue intensity scale
  std::uint64_t seed = 0;
  bool t1_only = false;  // single T1 channel replicated to all four

  void validate() const {
    if (image_size < 16) throw ValidationError("phantom image_size must be >= 16");
    if (n_slices < 1) throw ValidationError("phantom n_slices must be >= 1");
    if (n_subjects < 1) throw ValidationError("phantom n_subjects must be >= 1");
    if (tumor_count_min > tumor_count_max) throw ValidationError("phantom tumor_count range is empty");
    if (tumor_count_max > 8) throw ValidationError("phantom tumor_count_max must be <= 8");
    if (!(tumor_radius_min > 0.0) || tumor_radius_min > tumor_radius_max)
      throw ValidationError("phantom tumor_radius range must satisfy 0 < min <= max");
    if (!(tumor_radius_max < double(image_size) / 2.0))
      throw ValidationError("phantom tumor_radius_max must be < image_size/2");
    if (!(noise_sigma >= 0.0) || !std::isfinite(noise_sigma)) throw ValidationError("phantom noise_sigma must be >= 0");
  }
};

namespace detail {

inline constexpr double kIntensityScale = 1000.0;

// Tissue means per modality, and additive offsets per tumor label (T1, T1ce, T2, FLAIR).
inline constexpr std::array<double, 4> kTissue = {0.60, 0.52, 0.42, 0.46};
inline constexpr std::array<double, 4> kCsf = {0.25, 0.22, 0.85, 0.15};
inline constexpr std::array<double, 4> kEnhancingOffset = {-0.05, 0.40, 0.18, 0.22};
inline constexpr std::array<double, 4> kNecroticOffset = {-0.28, -0.25, 0.35, 0.05};
inline constexpr std::array<double, 4> kEdemaOffset = {-0.10, -0.02, 0.30, 0.32};

struct Blob {
  double z, r, c, radius, gain;
};

}  // namespace detail

/// One phantom subject. Exposed so callers can regenerate a single subject of a dataset.
inline Volume synth_subject(const PhantomSpec& spec, bool with_tumors, std::size_t index) {
  using namespace detail;
  Rng rng = make_rng(spec.seed, index * 2 + (with_tumors ? 1 : 0));
  const std::size_t S = spec.n_slices, N = spec.image_size;
  const double n = double(N);

  Volume vol;
  vol.subject_id = std::string(with_tumors ? "tumor_" : "normal_") + std::to_string(index);
  vol.modalities = Array<float>({kModalities, S, N, N});
  vol.labels = Array<std::uint8_t>({S, N, N});

  // Brain ellipsoid.
  const double cr = n / 2.0 + uniform(rng, -1.5, 1.5), cc = n / 2.0 + uniform(rng, -1.5, 1.5);
  const double ar = n * uniform(rng, 0.38, 0.45), ac = n * uniform(rng, 0.33, 0.41);
  const double cz = (double(S) - 1.0) / 2.0, az = std::max(1.0, double(S) * 0.6);
  // Ventricle ellipse.
  const double vr = ar * uniform(rng, 0.14, 0.22), vc = ac * uniform(rng, 0.10, 0.16);
  // Smooth texture: a few low-frequency plane waves shared across modalities.
  struct Wave {
    double kr, kc, phase, amp;
  };
  std::vector<Wave> waves(4);
  for (auto& w : waves) {
    const double theta = uniform(rng, 0.0, 2.0 * std::numbers::pi);
    const double freq = uniform(rng, 1.0, 3.5) * 2.0 * std::numbers::pi / n;
    w = {freq * std::cos(theta), freq * std::sin(theta), uniform(rng, 0.0, 2.0 * std::numbers::pi),
         uniform(rng, 0.02, 0.05)};
  }
  std::array<double, 4> gain;
  for (auto& g : gain) g = uniform(rng, 0.9, 1.1);

  auto inside_brain = [&](double z, double r, double c) {
    const double dz = S > 1 ? (z - cz) / az : 0.0;
    const double dr = (r - cr) / ar, dc = (c - cc) / ac;
    return dz * dz + dr * dr + dc * dc;
  };

  // Tumor blobs: nonoverlapping balls fully inside the brain, separated by >= 3 voxels.
  std::vector<Blob> blobs;
  if (with_tumors) {
    const auto count = std::size_t(uniform_int(rng, long(spec.tumor_count_min), long(spec.tumor_count_max)));
    for (std::size_t t = 0; t < count; ++t) {
      bool placed = false;
      for (int attempt = 0; attempt < 400 && !placed; ++attempt) {
        Blob b{};
        b.radius = uniform(rng, spec.tumor_radius_min, spec.tumor_radius_max);
        b.r = uniform(rng, cr - ar + b.radius, cr + ar - b.radius);
        b.c = uniform(rng, cc - ac + b.radius, cc + ac - b.radius);
        b.z = S > 1 ? uniform(rng, std::max(0.0, cz - az * 0.5), std::min(double(S) - 1.0, cz + az * 0.5)) : 0.0;
        b.gain = uniform(rng, 0.8, 1.2);
        // Whole ball inside the brain in-plane.
        const double slack = std::min(ar, ac) - b.radius;
        if (slack <= 1.0) continue;
        const double dr = (b.r - cr) / (ar - b.radius - 1.0), dc = (b.c - cc) / (ac - b.radius - 1.0);
        if (dr * dr + dc * dc > 1.0) continue;
        bool clear = true;
        for (const auto& o : blobs) {
          const double d = std::sqrt((b.r - o.r) * (b.r - o.r) + (b.c - o.c) * (b.c - o.c) + (b.z - o.z) * (b.z - o.z));
          if (d < b.radius + o.radius + 3.0) clear = false;
        }
        if (!clear) continue;
        blobs.push_back(b);
        placed = true;
      }
      if (!placed && blobs.size() < spec.tumor_count_min)
        throw ValidationError("phantom tumors do not fit: lower tumor_count or tumor_radius");
    }
  }

  for (std::size_t s = 0; s < S; ++s)
    for (std::size_t r = 0; r < N; ++r)
      for (std::size_t c = 0; c < N; ++c) {
        const double z = double(s), y = double(r), x = double(c);
        if (inside_brain(z, y, x) > 1.0) continue;  // background stays exactly zero
        double texture = 0.0;
        for (const auto& w : waves) texture += w.amp * std::cos(w.kr * y + w.kc * x + w.phase);
        const double ddr = (y - cr) / vr, ddc = (x - cc) / vc;
        const bool csf = ddr * ddr + ddc * ddc <= 1.0;
        std::array<double, 4> value{};
        for (std::size_t m = 0; m < kModalities; ++m) value[m] = (csf ? kCsf[m] : kTissue[m] + texture) * gain[m];

        std::uint8_t label = 0;
        for (const auto& b : blobs) {
          const double d = std::sqrt((y - b.r) * (y - b.r) + (x - b.c) * (x - b.c) + (z - b.z) * (z - b.z));
          if (d > b.radius) continue;
          const std::array<double, 4>* offset = &kEdemaOffset;
          label = Label::edema;
          if (d <= 0.35 * b.radius) {
            label = Label::enhancing;
            offset = &kEnhancingOffset;
          } else if (d <= 0.6 * b.radius) {
            label = Label::ncr_net;
            offset = &kNecroticOffset;
          }
          for (std::size_t m = 0; m < kModalities; ++m) value[m] = kTissue[m] * gain[m] + (*offset)[m] * b.gain;
          break;
        }
        vol.labels(s, r, c) = label;
        for (std::size_t m = 0; m < kModalities; ++m) {
          const double noisy = value[m] + gaussian(rng, 0.0, spec.noise_sigma);
          vol.modalities(m, s, r, c) = float(std::max(noisy, 0.01) * kIntensityScale);
        }
      }

  if (spec.t1_only) {
    const std::size_t plane = S * N * N;
    for (std::size_t m = 1; m < kModalities; ++m)
      std::copy_n(vol.modalities.data(), plane, vol.modalities.data() + m * plane);
  }
  return vol;
}

/// Deterministic phantom dataset. Subject i draws from its own stream derived from spec.seed.
inline std::vector<Volume> synth_dataset(const PhantomSpec& spec, bool with_tumors) {
  spec.validate();
  std::vector<Volume> out;
  out.reserve(spec.n_subjects);
  for (std::size_t i = 0; i < spec.n_subjects; ++i) out.push_back(synth_subject(spec, with_tumors, i));
  return out;
}

}  // namespace brainseg
