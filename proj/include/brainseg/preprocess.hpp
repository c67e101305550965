#pragma once

#include <algorithm>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "brainseg/volume.hpp"

namespace brainseg {

/// Smallest rectangle containing every pixel with intensity > 0 in any modality,
/// taken across the given slices.
inline BBox compute_bbox(const Volume& volume, std::span<const std::size_t> slices) {
  const std::size_t H = volume.height(), W = volume.width();
  std::size_t rmin = std::numeric_limits<std::size_t>::max(), rmax = 0;
  std::size_t cmin = std::numeric_limits<std::size_t>::max(), cmax = 0;
  bool any = false;
  for (std::size_t s : slices) {
    if (s >= volume.slices()) throw ConsistencyError("slice index out of range in compute_bbox");
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) {
        bool nonzero = false;
        for (std::size_t m = 0; m < kModalities && !nonzero; ++m) nonzero = volume.modalities(m, s, r, c) > 0.0f;
        if (!nonzero) continue;
        any = true;
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
      }
  }
  if (!any) throw EmptyBrainError("volume '" + volume.subject_id + "' has no nonzero brain pixel");
  return {rmin, rmax, cmin, cmax};
}

inline std::vector<std::size_t> all_slices(const Volume& volume) {
  std::vector<std::size_t> idx(volume.slices());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return idx;
}

inline BBox compute_bbox(const Volume& volume) {
  const auto idx = all_slices(volume);
  return compute_bbox(volume, idx);
}

/// Keeps exactly the slices whose label slice has a nonzero label.
inline SlicePlan filter_blank_slices(const Volume& volume) {
  SlicePlan plan;
  plan.subject_id = volume.subject_id;
  const std::size_t area = volume.height() * volume.width();
  for (std::size_t s = 0; s < volume.slices(); ++s) {
    const auto* first = volume.labels.data() + s * area;
    if (std::any_of(first, first + area, [](std::uint8_t v) { return v != 0; })) plan.kept_slices.push_back(s);
  }
  if (!plan.kept_slices.empty()) plan.bbox = compute_bbox(volume, plan.kept_slices);
  return plan;
}

/// Plan that keeps every slice (used for unlabeled pretraining data).
inline SlicePlan full_plan(const Volume& volume) {
  SlicePlan plan;
  plan.subject_id = volume.subject_id;
  plan.kept_slices = all_slices(volume);
  if (!plan.kept_slices.empty()) plan.bbox = compute_bbox(volume, plan.kept_slices);
  return plan;
}

inline std::vector<TrainingSlice> to_training_slices(const Volume& volume, const SlicePlan& plan) {
  if (plan.subject_id != volume.subject_id)
    throw ConsistencyError("slice plan for '" + plan.subject_id + "' applied to volume '" + volume.subject_id + "'");
  std::vector<TrainingSlice> out;
  if (plan.kept_slices.empty()) return out;
  if (!plan.bbox) throw ConsistencyError("slice plan has kept slices but no bounding box");
  const BBox& bb = *plan.bbox;
  if (bb.row_max >= volume.height() || bb.col_max >= volume.width() || bb.row_min > bb.row_max ||
      bb.col_min > bb.col_max)
    throw ConsistencyError("bounding box outside volume '" + volume.subject_id + "'");
  for (std::size_t k = 0; k < plan.kept_slices.size(); ++k) {
    if (plan.kept_slices[k] >= volume.slices() || (k > 0 && plan.kept_slices[k] <= plan.kept_slices[k - 1]))
      throw ConsistencyError("slice plan indices must be strictly increasing and within the volume");
  }
  out.reserve(plan.kept_slices.size());
  const std::size_t h = bb.rows(), w = bb.cols();
  for (std::size_t s : plan.kept_slices) {
    TrainingSlice item;
    item.subject_id = volume.subject_id;
    item.slice_index = s;
    item.image = Array<float>({kModalities, h, w});
    item.label = Array<std::uint8_t>({h, w});
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        for (std::size_t m = 0; m < kModalities; ++m)
          item.image(m, r, c) = volume.modalities(m, s, bb.row_min + r, bb.col_min + c);
        item.label(r, c) = volume.labels(s, bb.row_min + r, bb.col_min + c);
      }
    out.push_back(std::move(item));
  }
  return out;
}

}  // namespace brainseg
