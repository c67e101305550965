#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "brainseg/enhancement.hpp"
#include "brainseg/preprocess.hpp"
#include "brainseg/rng.hpp"
#include "brainseg/volume.hpp"

namespace brainseg {

struct DataConfig {
  bool enhance = true;
  std::size_t canvas = 64;  // network input side; must suit the U-Net divisor
  double val_fraction = 0.1;
  double test_fraction = 0.2;

  void validate() const {
    if (canvas < 8) throw ValidationError("data canvas must be >= 8");
    if (!(val_fraction >= 0.0 && val_fraction < 1.0)) throw ValidationError("data val_fraction must be in [0,1)");
    if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ValidationError("data test_fraction must be in [0,1)");
  }
};

/// A network-ready slice in tanh space ([-1,1]) on a canvas x canvas grid.
struct Sample {
  Array<float> image;           // [4,canvas,canvas]
  Array<std::uint8_t> label;    // [canvas,canvas]
  BBox brain;                   // brain extent on the canvas
  std::string subject_id;
  std::size_t slice_index = 0;
  bool tumor = false;           // any nonzero label
  double tumor_pixels = 0.0;    // whole-tumor pixel count
};

/// Value that zero (background) intensity takes after normalization. The enhancement curve is
/// decreasing in its compressed input, so zero maps to the top of the range.
inline float background_value(bool enhanced) { return enhanced ? 1.0f : -1.0f; }

/// Maps every modality slice to [-1,1]: enhancement (rescaled) or plain division by the slice
/// maximum. Blank slices take the background value; other degenerate slices fall back to plain
/// scaling.
inline Volume normalize_volume(const Volume& volume, const EnhanceParams& params, bool enhance) {
  params.validate();
  Volume out = volume;
  const std::size_t S = volume.slices(), area = volume.height() * volume.width();
  const float bg = background_value(enhance);
  std::vector<double> slice(area);
  for (std::size_t m = 0; m < kModalities; ++m)
    for (std::size_t s = 0; s < S; ++s) {
      const float* src = volume.modalities.data() + (m * S + s) * area;
      float* dst = out.modalities.data() + (m * S + s) * area;
      double hi = 0.0;
      for (std::size_t i = 0; i < area; ++i) {
        if (src[i] < 0.0f) throw DegenerateInputError("volume '" + volume.subject_id + "': negative intensity");
        hi = std::max(hi, double(src[i]));
      }
      if (!(hi > 0.0)) {
        std::fill_n(dst, area, bg);
        continue;
      }
      for (std::size_t i = 0; i < area; ++i) slice[i] = double(src[i]) / hi;
      bool done = false;
      if (enhance) {
        EnhanceParams p = params;
        p.prescale_to_unit = false;
        try {
          const auto st = enhance_stages(slice, p);
          for (std::size_t i = 0; i < area; ++i) dst[i] = float(2.0 * st.s5[i] - 1.0);
          done = true;
        } catch (const DegenerateInputError&) {
        }
      }
      if (!done)
        for (std::size_t i = 0; i < area; ++i) dst[i] = float(2.0 * slice[i] - 1.0);
    }
  return out;
}

/// Places a cropped slice at the centre of a canvas (centre-cropping if it is larger).
inline Sample to_sample(const TrainingSlice& ts, std::size_t canvas, float fill) {
  const std::size_t h = ts.label.dim(0), w = ts.label.dim(1);
  Sample out;
  out.subject_id = ts.subject_id;
  out.slice_index = ts.slice_index;
  out.image = Array<float>({kModalities, canvas, canvas}, fill);
  out.label = Array<std::uint8_t>({canvas, canvas}, 0);
  const long off_r = (long(canvas) - long(h)) / 2, off_c = (long(canvas) - long(w)) / 2;
  long rmin = long(canvas), rmax = -1, cmin = long(canvas), cmax = -1;
  for (std::size_t r = 0; r < h; ++r)
    for (std::size_t c = 0; c < w; ++c) {
      const long R = long(r) + off_r, C = long(c) + off_c;
      if (R < 0 || C < 0 || R >= long(canvas) || C >= long(canvas)) continue;
      for (std::size_t m = 0; m < kModalities; ++m) out.image(m, std::size_t(R), std::size_t(C)) = ts.image(m, r, c);
      const std::uint8_t l = ts.label(r, c);
      out.label(std::size_t(R), std::size_t(C)) = l;
      if (l != 0) out.tumor_pixels += 1.0;
      rmin = std::min(rmin, R);
      rmax = std::max(rmax, R);
      cmin = std::min(cmin, C);
      cmax = std::max(cmax, C);
    }
  out.brain = BBox{std::size_t(rmin), std::size_t(rmax), std::size_t(cmin), std::size_t(cmax)};
  out.tumor = out.tumor_pixels > 0.0;
  return out;
}

/// Tumor volumes keep labeled slices only; normal volumes keep every slice with brain tissue.
inline std::vector<Sample> prepare_samples(const std::vector<Volume>& volumes, const DataConfig& cfg,
                                           const EnhanceParams& params, bool labeled_slices_only) {
  cfg.validate();
  std::vector<Sample> out;
  for (const auto& v : volumes) {
    v.validate();
    SlicePlan plan;
    if (labeled_slices_only) {
      plan = filter_blank_slices(v);
    } else {
      plan.subject_id = v.subject_id;
      const std::size_t area = v.height() * v.width();
      for (std::size_t s = 0; s < v.slices(); ++s) {
        bool any = false;
        for (std::size_t m = 0; m < kModalities && !any; ++m) {
          const float* p = v.modalities.data() + (m * v.slices() + s) * area;
          any = std::any_of(p, p + area, [](float x) { return x > 0.0f; });
        }
        if (any) plan.kept_slices.push_back(s);
      }
      if (!plan.kept_slices.empty()) plan.bbox = compute_bbox(v, plan.kept_slices);
    }
    if (plan.kept_slices.empty()) continue;
    const Volume norm = normalize_volume(v, params, cfg.enhance);
    for (const auto& ts : to_training_slices(norm, plan))
      out.push_back(to_sample(ts, cfg.canvas, background_value(cfg.enhance)));
  }
  return out;
}

struct SubjectSplit {
  std::set<std::string> train, val, test;
};

/// Seeded subject-level split: test first, then val as a fraction of the remaining subjects.
inline SubjectSplit split_subjects(std::vector<std::string> ids, double val_fraction, double test_fraction,
                                   std::uint64_t seed) {
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  Rng rng = make_rng(seed, 0x5B117);
  for (std::size_t i = ids.size(); i > 1; --i) std::swap(ids[i - 1], ids[std::size_t(uniform_int(rng, 0, long(i) - 1))]);
  const std::size_t n = ids.size();
  const auto n_test = std::size_t(std::llround(double(n) * test_fraction));
  const auto n_val = std::size_t(std::llround(double(n - n_test) * val_fraction));
  SubjectSplit s;
  for (std::size_t i = 0; i < n; ++i) {
    if (i < n_test) s.test.insert(ids[i]);
    else if (i < n_test + n_val) s.val.insert(ids[i]);
    else s.train.insert(ids[i]);
  }
  return s;
}

inline std::vector<Sample> select(const std::vector<Sample>& samples, const std::set<std::string>& subjects) {
  std::vector<Sample> out;
  for (const auto& s : samples)
    if (subjects.count(s.subject_id)) out.push_back(s);
  return out;
}

inline std::vector<std::string> subject_ids(const std::vector<Sample>& samples) {
  std::vector<std::string> ids;
  for (const auto& s : samples) ids.push_back(s.subject_id);
  return ids;
}

/// Class channel order of the segmenter output.
inline constexpr std::array<std::uint8_t, 4> kClassLabels = {0, 1, 2, 4};

struct Batch {
  Array<float> images;               // [B,4,H,W]
  Array<float> onehot;               // [B,4,H,W] over kClassLabels
  std::vector<double> tumor_pixels;  // per item
  std::vector<const Sample*> items;
};

inline Batch make_batch(const std::vector<Sample>& samples, std::span<const std::size_t> indices) {
  if (indices.empty()) throw DataError("empty batch");
  const std::size_t H = samples[indices[0]].label.dim(0), W = samples[indices[0]].label.dim(1), area = H * W;
  Batch b;
  b.images = Array<float>({indices.size(), kModalities, H, W});
  b.onehot = Array<float>({indices.size(), kClassLabels.size(), H, W}, 0.0f);
  for (std::size_t k = 0; k < indices.size(); ++k) {
    const Sample& s = samples[indices[k]];
    if (s.label.dim(0) != H || s.label.dim(1) != W) throw ShapeError("batch items differ in spatial size");
    std::copy(s.image.begin(), s.image.end(), b.images.data() + k * kModalities * area);
    for (std::size_t i = 0; i < area; ++i) {
      const std::uint8_t l = s.label[i];
      const std::size_t c = l == 4 ? 3 : l;
      b.onehot[(k * kClassLabels.size() + c) * area + i] = 1.0f;
    }
    b.tumor_pixels.push_back(s.tumor_pixels);
    b.items.push_back(&s);
  }
  return b;
}

}  // namespace brainseg
