#pragma once

// Raw container: a self-describing file holding named float32 arrays.
//
//   line 1   "BRAINSEG-RAW 1\n"
//   line 2   compact JSON header followed by "\n"
//   payload  little-endian float32 arrays, back to back, at the byte offsets
//            listed in header["arrays"] (relative to the payload start)
//
// Header: {"format":"brainseg-raw","version":1,"kind":..., "meta":{...},
//          "arrays":[{"name":..., "shape":[...], "dtype":"float32", "offset":...}]}

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"
#include "brainseg/array.hpp"
#include "brainseg/error.hpp"

namespace brainseg {

using Json = nlohmann::json;

inline constexpr const char* kContainerMagic = "BRAINSEG-RAW 1";
inline constexpr int kContainerVersion = 1;

struct NamedArray {
  std::string name;
  Array<float> array;
};

struct Container {
  std::string kind;
  Json meta = Json::object();
  std::vector<NamedArray> arrays;

  const Array<float>& get(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return a.array;
    throw IngestionError("container has no array named '" + name + "'");
  }
  bool has(const std::string& name) const {
    for (const auto& a : arrays)
      if (a.name == name) return true;
    return false;
  }
};

namespace detail {

inline std::uint32_t byteswap32(std::uint32_t v) {
  return (v >> 24) | ((v >> 8) & 0xFF00u) | ((v << 8) & 0xFF0000u) | (v << 24);
}

inline void write_f32_le(std::ostream& os, const float* p, std::size_t n) {
  if constexpr (std::endian::native == std::endian::little) {
    os.write(reinterpret_cast<const char*>(p), std::streamsize(n * sizeof(float)));
  } else {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u;
      std::memcpy(&u, p + i, 4);
      u = byteswap32(u);
      os.write(reinterpret_cast<const char*>(&u), 4);
    }
  }
}

inline void read_f32_le(const char* src, float* dst, std::size_t n) {
  std::memcpy(dst, src, n * sizeof(float));
  if constexpr (std::endian::native != std::endian::little) {
    for (std::size_t i = 0; i < n; ++i) {
      std::uint32_t u;
      std::memcpy(&u, dst + i, 4);
      u = byteswap32(u);
      std::memcpy(dst + i, &u, 4);
    }
  }
}

}  // namespace detail

inline void write_container(const std::filesystem::path& path, const Container& c) {
  Json header;
  header["format"] = "brainseg-raw";
  header["version"] = kContainerVersion;
  header["kind"] = c.kind;
  header["meta"] = c.meta;
  header["arrays"] = Json::array();
  std::size_t offset = 0;
  for (const auto& a : c.arrays) {
    header["arrays"].push_back({{"name", a.name}, {"shape", a.array.shape()}, {"dtype", "float32"}, {"offset", offset}});
    offset += a.array.size() * sizeof(float);
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IngestionError("cannot open '" + path.string() + "' for writing");
  os << kContainerMagic << '\n' << header.dump() << '\n';
  for (const auto& a : c.arrays) detail::write_f32_le(os, a.array.data(), a.array.size());
  if (!os) throw IngestionError("write failed for '" + path.string() + "'");
}

inline Container read_container(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IngestionError("cannot open '" + path.string() + "'");
  std::string magic, header_text;
  if (!std::getline(is, magic) || magic != kContainerMagic)
    throw IngestionError("'" + path.string() + "' is not a brainseg raw container");
  if (!std::getline(is, header_text)) throw IngestionError("'" + path.string() + "': missing header");
  Json header;
  try {
    header = Json::parse(header_text);
  } catch (const Json::exception& e) {
    throw IngestionError("'" + path.string() + "': malformed header: " + e.what());
  }
  if (header.value("format", "") != "brainseg-raw" || header.value("version", 0) != kContainerVersion)
    throw IngestionError("'" + path.string() + "': unsupported container format/version");
  std::vector<char> payload((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());

  Container c;
  c.kind = header.value("kind", "");
  c.meta = header.value("meta", Json::object());
  try {
    for (const auto& entry : header.at("arrays")) {
      if (entry.value("dtype", "") != "float32") throw IngestionError("unsupported dtype");
      Shape shape = entry.at("shape").get<Shape>();
      const auto offset = entry.at("offset").get<std::size_t>();
      const std::size_t n = shape_size(shape);
      if (offset + n * sizeof(float) > payload.size())
        throw IngestionError("'" + path.string() + "': payload truncated for array '" +
                             entry.at("name").get<std::string>() + "'");
      Array<float> arr(shape);
      detail::read_f32_le(payload.data() + offset, arr.data(), n);
      c.arrays.push_back({entry.at("name").get<std::string>(), std::move(arr)});
    }
  } catch (const Json::exception& e) {
    throw IngestionError("'" + path.string() + "': malformed array table: " + e.what());
  }
  return c;
}

}  // namespace brainseg
