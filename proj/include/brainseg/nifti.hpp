#pragma once

// Minimal NIfTI-1 single-file (.nii / .nii.gz) reader and writer.

#include <zlib.h>

#include <algorithm>
#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <vector>

#include "brainseg/array.hpp"
#include "brainseg/error.hpp"

namespace brainseg::nifti {

enum DataType : std::int16_t {
  dt_uint8 = 2,
  dt_int16 = 4,
  dt_int32 = 8,
  dt_float32 = 16,
  dt_float64 = 64,
  dt_int8 = 256,
  dt_uint16 = 512,
  dt_uint32 = 768,
};

/// Decoded image: data laid out [t][z][y][x] (x fastest), already scaled by scl_slope/scl_inter.
struct Image {
  std::array<std::size_t, 4> dims{1, 1, 1, 1};  // x, y, z, t
  std::array<double, 3> pixdim{1.0, 1.0, 1.0};  // x, y, z spacing in mm
  int ndim = 3;
  std::vector<double> data;

  std::size_t voxels_per_volume() const { return dims[0] * dims[1] * dims[2]; }
};

namespace detail {

inline constexpr std::size_t kHeaderSize = 348;

template <class T>
T load(const unsigned char* p, bool swap) {
  unsigned char buf[sizeof(T)];
  std::memcpy(buf, p, sizeof(T));
  if (swap) std::reverse(buf, buf + sizeof(T));
  T v;
  std::memcpy(&v, buf, sizeof(T));
  return v;
}

template <class T>
void store(unsigned char* p, T v) {
  std::memcpy(p, &v, sizeof(T));
  if constexpr (std::endian::native != std::endian::little) std::reverse(p, p + sizeof(T));
}

inline std::vector<unsigned char> read_all(const std::filesystem::path& path) {
  gzFile f = gzopen(path.string().c_str(), "rb");
  if (!f) throw IngestionError("cannot open NIfTI file '" + path.string() + "'");
  std::vector<unsigned char> bytes;
  unsigned char chunk[1 << 16];
  int n;
  while ((n = gzread(f, chunk, sizeof(chunk))) > 0) bytes.insert(bytes.end(), chunk, chunk + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw IngestionError("corrupt compressed stream in '" + path.string() + "'");
  return bytes;
}

}  // namespace detail

inline Image read(const std::filesystem::path& path) {
  using namespace detail;
  const auto bytes = read_all(path);
  const std::string name = path.string();
  if (bytes.size() < kHeaderSize) throw IngestionError("'" + name + "': file shorter than a NIfTI-1 header");
  const unsigned char* h = bytes.data();
  bool swap = false;
  if (load<std::int32_t>(h, false) != 348) {
    if (load<std::int32_t>(h, true) != 348) throw IngestionError("'" + name + "': sizeof_hdr is not 348");
    swap = true;
  }
  if (std::memcmp(h + 344, "n+1", 4) != 0 && std::memcmp(h + 344, "ni1", 4) != 0)
    throw IngestionError("'" + name + "': missing NIfTI-1 magic");
  if (std::memcmp(h + 344, "ni1", 4) == 0) throw IngestionError("'" + name + "': split .hdr/.img pairs are not supported");

  Image img;
  const auto ndim = load<std::int16_t>(h + 40, swap);
  if (ndim < 2 || ndim > 4) throw IngestionError("'" + name + "': unsupported dimensionality " + std::to_string(ndim));
  img.ndim = ndim;
  for (int k = 0; k < ndim; ++k) {
    const auto d = load<std::int16_t>(h + 42 + 2 * k, swap);
    if (d < 1) throw IngestionError("'" + name + "': nonpositive dimension");
    img.dims[std::size_t(k)] = std::size_t(d);
  }
  for (int k = 0; k < 3; ++k) {
    const float p = load<float>(h + 80 + 4 * k, swap);
    img.pixdim[std::size_t(k)] = (std::isfinite(p) && p > 0.0f) ? double(p) : 1.0;
  }
  const auto datatype = load<std::int16_t>(h + 70, swap);
  const float vox_offset = load<float>(h + 108, swap);
  float slope = load<float>(h + 112, swap);
  const float inter = load<float>(h + 116, swap);
  if (slope == 0.0f || !std::isfinite(slope)) slope = 1.0f;

  std::size_t elem = 0;
  switch (datatype) {
    case dt_uint8: case dt_int8: elem = 1; break;
    case dt_int16: case dt_uint16: elem = 2; break;
    case dt_int32: case dt_uint32: case dt_float32: elem = 4; break;
    case dt_float64: elem = 8; break;
    default: throw IngestionError("'" + name + "': unsupported datatype " + std::to_string(datatype));
  }
  const std::size_t n = img.dims[0] * img.dims[1] * img.dims[2] * img.dims[3];
  const auto offset = std::size_t(vox_offset);
  if (vox_offset < 348.0f || offset + n * elem > bytes.size())
    throw IngestionError("'" + name + "': voxel data truncated or bad vox_offset");
  img.data.resize(n);
  const unsigned char* p = h + offset;
  for (std::size_t i = 0; i < n; ++i, p += elem) {
    double v = 0.0;
    switch (datatype) {
      case dt_uint8: v = *p; break;
      case dt_int8: v = static_cast<std::int8_t>(*p); break;
      case dt_int16: v = load<std::int16_t>(p, swap); break;
      case dt_uint16: v = load<std::uint16_t>(p, swap); break;
      case dt_int32: v = load<std::int32_t>(p, swap); break;
      case dt_uint32: v = load<std::uint32_t>(p, swap); break;
      case dt_float32: v = load<float>(p, swap); break;
      case dt_float64: v = load<double>(p, swap); break;
    }
    img.data[i] = v * slope + inter;
  }
  return img;
}

/// Writes an uncompressed or gzip-compressed (by ".gz" suffix) NIfTI-1 file with float32 or uint8 voxels.
inline void write(const std::filesystem::path& path, const Image& img, DataType datatype = dt_float32) {
  using namespace detail;
  if (datatype != dt_float32 && datatype != dt_uint8) throw IngestionError("NIfTI writer supports float32 and uint8");
  std::vector<unsigned char> out(352, 0);
  unsigned char* h = out.data();
  store<std::int32_t>(h, 348);
  store<std::int16_t>(h + 40, std::int16_t(img.ndim));
  for (int k = 0; k < 4; ++k) store<std::int16_t>(h + 42 + 2 * k, std::int16_t(img.dims[std::size_t(k)]));
  for (int k = 4; k < 7; ++k) store<std::int16_t>(h + 42 + 2 * k, 1);
  store<std::int16_t>(h + 70, datatype);
  store<std::int16_t>(h + 72, std::int16_t(datatype == dt_float32 ? 32 : 8));
  store<float>(h + 76, 1.0f);
  for (int k = 0; k < 3; ++k) store<float>(h + 80 + 4 * k, float(img.pixdim[std::size_t(k)]));
  store<float>(h + 108, 352.0f);
  store<float>(h + 112, 1.0f);
  store<float>(h + 116, 0.0f);
  out[123] = 2;  // xyzt_units: mm
  std::memcpy(h + 344, "n+1", 4);
  const std::size_t n = img.dims[0] * img.dims[1] * img.dims[2] * img.dims[3];
  if (img.data.size() != n) throw IngestionError("NIfTI writer: data size does not match dims");
  for (double v : img.data) {
    if (datatype == dt_float32) {
      unsigned char b[4];
      store<float>(b, float(v));
      out.insert(out.end(), b, b + 4);
    } else {
      out.push_back(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0))));
    }
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const bool gz = path.extension() == ".gz";
  gzFile f = gzopen(path.string().c_str(), gz ? "wb6" : "wbT");
  if (!f) throw IngestionError("cannot open '" + path.string() + "' for writing");
  const int written = gzwrite(f, out.data(), unsigned(out.size()));
  gzclose(f);
  if (written != int(out.size())) throw IngestionError("write failed for '" + path.string() + "'");
}

}  // namespace brainseg::nifti
