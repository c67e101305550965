#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "brainseg/array.hpp"
#include "brainseg/error.hpp"

namespace brainseg {

/// Channel order used everywhere a 4-channel image is formed.
enum class Modality : std::size_t { t1 = 0, t1ce = 1, t2 = 2, flair = 3 };
inline constexpr std::size_t kModalities = 4;
inline constexpr std::array<const char*, kModalities> kModalityNames = {"T1", "T1ce", "T2", "FLAIR"};

/// BraTS label encoding.
enum Label : std::uint8_t { background = 0, ncr_net = 1, edema = 2, enhancing = 4 };

inline bool is_valid_label(int v) { return v == 0 || v == 1 || v == 2 || v == 4; }

/// Multi-modal scan with aligned labels.
///   modalities: [4, S, H, W] intensities in arbitrary scanner units
///   labels:     [S, H, W] values in {0,1,2,4}
struct Volume {
  Array<float> modalities;
  Array<std::uint8_t> labels;
  std::array<double, 3> spacing{1.0, 1.0, 1.0};  // mm along (slice, row, col)
  std::string subject_id;

  std::size_t slices() const { return labels.dim(0); }
  std::size_t height() const { return labels.dim(1); }
  std::size_t width() const { return labels.dim(2); }

  const float& at(std::size_t m, std::size_t s, std::size_t r, std::size_t c) const { return modalities(m, s, r, c); }

  void validate() const {
    if (modalities.rank() != 4 || modalities.dim(0) != kModalities)
      throw ConsistencyError("volume '" + subject_id + "': modalities must have shape [4,S,H,W], got " +
                             shape_str(modalities.shape()));
    if (labels.rank() != 3) throw ConsistencyError("volume '" + subject_id + "': labels must be [S,H,W]");
    for (std::size_t k = 0; k < 3; ++k)
      if (labels.dim(k) != modalities.dim(k + 1))
        throw ConsistencyError("volume '" + subject_id + "': label shape " + shape_str(labels.shape()) +
                               " does not match modalities " + shape_str(modalities.shape()));
    for (auto v : labels)
      if (!is_valid_label(v))
        throw ConsistencyError("volume '" + subject_id + "': label value " + std::to_string(int(v)) +
                               " outside {0,1,2,4}");
    for (auto v : modalities)
      if (!std::isfinite(v)) throw ConsistencyError("volume '" + subject_id + "': non-finite intensity");
    for (double s : spacing)
      if (!(s > 0.0)) throw ConsistencyError("volume '" + subject_id + "': voxel spacing must be positive");
  }
};

/// Inclusive pixel bounds.
struct BBox {
  std::size_t row_min = 0, row_max = 0, col_min = 0, col_max = 0;

  std::size_t rows() const { return row_max - row_min + 1; }
  std::size_t cols() const { return col_max - col_min + 1; }
  bool contains(std::size_t r, std::size_t c) const {
    return r >= row_min && r <= row_max && c >= col_min && c <= col_max;
  }
  friend bool operator==(const BBox&, const BBox&) = default;
};

struct SlicePlan {
  std::string subject_id;
  std::vector<std::size_t> kept_slices;
  std::optional<BBox> bbox;  // absent when no slice is kept
};

/// One network-ready slice: image [4,h,w] and label [h,w].
struct TrainingSlice {
  Array<float> image;
  Array<std::uint8_t> label;
  std::string subject_id;
  std::size_t slice_index = 0;
};

}  // namespace brainseg
