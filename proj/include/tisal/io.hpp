#pragma once

#include <png.h>

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tisal/error.hpp"
#include "tisal/grid.hpp"

namespace tisal::io {

namespace fs = std::filesystem;

inline void ensure_parent(const fs::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
    if (ec) throw Error(ErrorKind::IoFailure, path.parent_path().string(), ec.message());
  }
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::MissingFile, path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_text(const fs::path& path, const std::string& text) {
  ensure_parent(path);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoFailure, path.string(), "cannot open for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorKind::IoFailure, path.string(), "write failed");
}

// ---------------------------------------------------------------- PNG

inline void write_png_rgb(const fs::path& path, const RgbImage& img) {
  ensure_parent(path);
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width);
  image.height = static_cast<png_uint_32>(img.height);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.pixels.data(), 0, nullptr)) {
    throw Error(ErrorKind::IoFailure, path.string(), image.message);
  }
}

inline void write_png_gray(const fs::path& path, const Grid<std::uint8_t>& img) {
  ensure_parent(path);
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(img.width());
  image.height = static_cast<png_uint_32>(img.height());
  image.format = PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, img.storage().data(), 0,
                               nullptr)) {
    throw Error(ErrorKind::IoFailure, path.string(), image.message);
  }
}

inline RgbImage read_png_rgb(const fs::path& path) {
  if (!fs::exists(path)) throw Error(ErrorKind::MissingFile, path.string());
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw Error(ErrorKind::IoFailure, path.string(), image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out(image.width, image.height);
  if (!png_image_finish_read(&image, nullptr, out.pixels.data(), 0, nullptr)) {
    png_image_free(&image);
    throw Error(ErrorKind::IoFailure, path.string(), image.message);
  }
  return out;
}

/// Linear rescale of a map to [0,255] for inspection; a constant map
/// renders black.
inline Grid<std::uint8_t> to_gray8(const Grid<double>& map) {
  Grid<std::uint8_t> out(map.width(), map.height());
  if (map.empty()) return out;
  const auto [lo, hi] = std::minmax_element(map.values().begin(), map.values().end());
  const double range = *hi - *lo;
  for (std::size_t i = 0; i < map.size(); ++i) {
    const double v = range > 0.0 ? (map[i] - *lo) / range : 0.0;
    out[i] = static_cast<std::uint8_t>(std::clamp(v * 255.0 + 0.5, 0.0, 255.0));
  }
  return out;
}

// ---------------------------------------------------------------- SALF
//
// Layout (little-endian): "SALF", u32 width, u32 height, width*height f32
// row-major.

inline constexpr char kSalfMagic[4] = {'S', 'A', 'L', 'F'};

namespace detail {

template <typename T>
void put_le(std::string& buf, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  buf.append(bytes, sizeof(T));
}

template <typename T>
T get_le(const char* p) {
  char bytes[sizeof(T)];
  std::memcpy(bytes, p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  T value;
  std::memcpy(&value, bytes, sizeof(T));
  return value;
}

}  // namespace detail

inline std::string encode_salf(const Grid<double>& map) {
  std::string buf;
  buf.reserve(12 + 4 * map.size());
  buf.append(kSalfMagic, 4);
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(map.width()));
  detail::put_le<std::uint32_t>(buf, static_cast<std::uint32_t>(map.height()));
  for (double v : map.values()) detail::put_le<float>(buf, static_cast<float>(v));
  return buf;
}

inline Grid<double> decode_salf(const std::string& buf, const std::string& name = "salf") {
  if (buf.size() < 12 || std::memcmp(buf.data(), kSalfMagic, 4) != 0) {
    throw Error(ErrorKind::SchemaViolation, name, "missing SALF magic");
  }
  const auto w = detail::get_le<std::uint32_t>(buf.data() + 4);
  const auto h = detail::get_le<std::uint32_t>(buf.data() + 8);
  const std::size_t n = static_cast<std::size_t>(w) * h;
  if (buf.size() != 12 + 4 * n) {
    throw Error(ErrorKind::SchemaViolation, name, "payload size does not match header");
  }
  Grid<double> out(w, h);
  for (std::size_t i = 0; i < n; ++i) out[i] = detail::get_le<float>(buf.data() + 12 + 4 * i);
  return out;
}

inline void write_salf(const fs::path& path, const Grid<double>& map) {
  write_text(path, encode_salf(map));
}

inline Grid<double> read_salf(const fs::path& path) {
  return decode_salf(read_text(path), path.string());
}

}  // namespace tisal::io
