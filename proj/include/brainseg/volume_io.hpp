#pragma once

#include <filesystem>
#include <optional>
#include <string>

#include "brainseg/container.hpp"
#include "brainseg/nifti.hpp"
#include "brainseg/volume.hpp"

namespace brainseg {

/// How a NIfTI file with a single intensity channel (e.g. T1-only normal scans) is turned into
/// a 4-modality volume.
enum class ReplicationPolicy { replicate, reject };

inline void save_volume(const Volume& volume, const std::filesystem::path& path) {
  volume.validate();
  Container c;
  c.kind = "volume";
  c.meta = {{"subject_id", volume.subject_id},
            {"spacing", volume.spacing},
            {"modalities", {"T1", "T1ce", "T2", "FLAIR"}}};
  c.arrays.push_back({"modalities", volume.modalities});
  c.arrays.push_back({"labels", volume.labels.cast<float>()});
  write_container(path, c);
}

inline Volume load_volume(const std::filesystem::path& path) {
  const Container c = read_container(path);
  if (c.kind != "volume") throw IngestionError("'" + path.string() + "' holds a '" + c.kind + "', not a volume");
  Volume v;
  v.subject_id = c.meta.value("subject_id", path.stem().string());
  if (c.meta.contains("spacing")) v.spacing = c.meta.at("spacing").get<std::array<double, 3>>();
  v.modalities = c.get("modalities");
  const auto& lab = c.get("labels");
  v.labels = Array<std::uint8_t>(lab.shape());
  for (std::size_t i = 0; i < lab.size(); ++i) {
    if (!is_valid_label(int(lab[i])) || float(int(lab[i])) != lab[i])
      throw IngestionError("'" + path.string() + "': label value outside {0,1,2,4}");
    v.labels[i] = std::uint8_t(lab[i]);
  }
  try {
    v.validate();
  } catch (const ConsistencyError& e) {
    throw IngestionError(e.what());
  }
  return v;
}

namespace detail {

// NIfTI stores x fastest then y then z; volumes are [S=z][H=y][W=x].
inline void copy_nifti_channel(const nifti::Image& img, std::size_t t, Array<float>& dst, std::size_t m) {
  const std::size_t n = img.voxels_per_volume();
  for (std::size_t i = 0; i < n; ++i) {
    const double v = img.data[t * n + i];
    if (!std::isfinite(v)) throw IngestionError("NIfTI voxel is not finite");
    dst[m * n + i] = float(v);
  }
}

inline std::array<double, 3> nifti_spacing(const nifti::Image& img) {
  return {img.pixdim[2], img.pixdim[1], img.pixdim[0]};
}

}  // namespace detail

/// Loads a NIfTI intensity file. A 4D file must carry exactly 4 channels (T1, T1ce, T2, FLAIR);
/// a 3D or single-channel file is replicated to 4 channels under ReplicationPolicy::replicate.
inline Volume load_nifti(const std::filesystem::path& path, ReplicationPolicy policy = ReplicationPolicy::replicate) {
  const nifti::Image img = nifti::read(path);
  const std::size_t channels = img.ndim == 4 ? img.dims[3] : 1;
  if (channels != 1 && channels != kModalities)
    throw IngestionError("'" + path.string() + "': expected 1 or 4 channels, found " + std::to_string(channels));
  if (channels == 1 && policy == ReplicationPolicy::reject)
    throw IngestionError("'" + path.string() + "': single-channel volume and replication disabled");
  const std::size_t X = img.dims[0], Y = img.dims[1], Z = img.dims[2];
  Volume v;
  v.subject_id = path.filename().string();
  v.spacing = detail::nifti_spacing(img);
  v.modalities = Array<float>({kModalities, Z, Y, X});
  for (std::size_t m = 0; m < kModalities; ++m) detail::copy_nifti_channel(img, channels == 1 ? 0 : m, v.modalities, m);
  v.labels = Array<std::uint8_t>({Z, Y, X});
  return v;
}

inline Array<std::uint8_t> load_nifti_labels(const std::filesystem::path& path) {
  const nifti::Image img = nifti::read(path);
  if (img.ndim == 4 && img.dims[3] != 1) throw IngestionError("'" + path.string() + "': label map must be 3D");
  Array<std::uint8_t> labels({img.dims[2], img.dims[1], img.dims[0]});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const double v = img.data[i];
    if (v != std::round(v) || !is_valid_label(int(v)))
      throw IngestionError("'" + path.string() + "': label value outside {0,1,2,4}");
    labels[i] = std::uint8_t(v);
  }
  return labels;
}

/// BraTS layout: one file per modality plus an optional segmentation.
inline Volume load_nifti_subject(const std::array<std::filesystem::path, kModalities>& modality_paths,
                                 const std::optional<std::filesystem::path>& seg_path, std::string subject_id) {
  Volume v;
  v.subject_id = std::move(subject_id);
  for (std::size_t m = 0; m < kModalities; ++m) {
    const nifti::Image img = nifti::read(modality_paths[m]);
    if (img.ndim == 4 && img.dims[3] != 1)
      throw IngestionError("'" + modality_paths[m].string() + "': modality file must be 3D");
    const Shape shape{kModalities, img.dims[2], img.dims[1], img.dims[0]};
    if (m == 0) {
      v.modalities = Array<float>(shape);
      v.spacing = detail::nifti_spacing(img);
    } else if (v.modalities.shape() != shape) {
      throw IngestionError("modality shape mismatch: '" + modality_paths[m].string() + "'");
    }
    detail::copy_nifti_channel(img, 0, v.modalities, m);
  }
  if (seg_path) {
    v.labels = load_nifti_labels(*seg_path);
    if (v.labels.shape() != Shape{v.modalities.dim(1), v.modalities.dim(2), v.modalities.dim(3)})
      throw IngestionError("segmentation shape does not match modalities");
  } else {
    v.labels = Array<std::uint8_t>({v.modalities.dim(1), v.modalities.dim(2), v.modalities.dim(3)});
  }
  return v;
}

/// 4D float32 NIfTI with the four modalities as the t axis.
inline void save_nifti(const Volume& volume, const std::filesystem::path& path) {
  nifti::Image img;
  img.ndim = 4;
  img.dims = {volume.width(), volume.height(), volume.slices(), kModalities};
  img.pixdim = {volume.spacing[2], volume.spacing[1], volume.spacing[0]};
  img.data.assign(volume.modalities.begin(), volume.modalities.end());
  nifti::write(path, img, nifti::dt_float32);
}

inline void save_nifti_labels(const Array<std::uint8_t>& labels, const std::array<double, 3>& spacing,
                              const std::filesystem::path& path) {
  nifti::Image img;
  img.ndim = 3;
  img.dims = {labels.dim(2), labels.dim(1), labels.dim(0), 1};
  img.pixdim = {spacing[2], spacing[1], spacing[0]};
  img.data.assign(labels.begin(), labels.end());
  nifti::write(path, img, nifti::dt_uint8);
}

inline bool is_nifti_path(const std::filesystem::path& p) {
  const std::string s = p.string();
  return s.ends_with(".nii") || s.ends_with(".nii.gz");
}

/// Dispatches on extension: NIfTI for .nii/.nii.gz, raw container otherwise.
inline Volume load_any_volume(const std::filesystem::path& path) {
  return is_nifti_path(path) ? load_nifti(path) : load_volume(path);
}

}  // namespace brainseg
