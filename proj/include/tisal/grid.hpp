#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "tisal/error.hpp"

namespace tisal {

/// Dense row-major 2-D grid.
template <typename T>
class Grid {
 public:
  Grid() = default;
  Grid(std::size_t width, std::size_t height, T fill = T{})
      : width_(width), height_(height), data_(width * height, fill) {}
  Grid(std::size_t width, std::size_t height, std::vector<T> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (data_.size() != width_ * height_) {
      throw Error(ErrorKind::BadShape, "grid", "data size does not match width*height");
    }
  }

  std::size_t width() const noexcept { return width_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  T& operator()(std::size_t y, std::size_t x) { return data_[y * width_ + x]; }
  const T& operator()(std::size_t y, std::size_t x) const { return data_[y * width_ + x]; }
  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }

  std::span<T> values() noexcept { return data_; }
  std::span<const T> values() const noexcept { return data_; }
  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  bool same_shape(const Grid& other) const noexcept {
    return width_ == other.width_ && height_ == other.height_;
  }
  template <typename U>
  bool same_shape(const Grid<U>& other) const noexcept {
    return width_ == other.width() && height_ == other.height();
  }

  bool operator==(const Grid&) const = default;

 private:
  std::size_t width_ = 0;
  std::size_t height_ = 0;
  std::vector<T> data_;
};

/// 8-bit RGB raster, interleaved.
struct RgbImage {
  std::size_t width = 0;
  std::size_t height = 0;
  std::vector<std::uint8_t> pixels;  // size 3*width*height

  RgbImage() = default;
  RgbImage(std::size_t w, std::size_t h, std::uint8_t fill = 0)
      : width(w), height(h), pixels(3 * w * h, fill) {}

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[3 * (y * width + x) + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[3 * (y * width + x) + c];
  }
  void set(std::size_t y, std::size_t x, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    auto* p = &pixels[3 * (y * width + x)];
    p[0] = r;
    p[1] = g;
    p[2] = b;
  }

  bool operator==(const RgbImage&) const = default;
};

/// Bilinear resampling with half-pixel centers (align_corners = false).
/// Shared by image preprocessing and map rescaling so both agree on
/// sample positions.
struct BilinearTap {
  std::size_t i0, i1;
  double w0, w1;
};

inline std::vector<BilinearTap> bilinear_taps(std::size_t in, std::size_t out) {
  std::vector<BilinearTap> taps(out);
  const double scale = static_cast<double>(in) / static_cast<double>(out);
  for (std::size_t o = 0; o < out; ++o) {
    double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
    if (src < 0.0) src = 0.0;
    auto i0 = static_cast<std::size_t>(src);
    if (i0 > in - 1) i0 = in - 1;
    const std::size_t i1 = std::min(i0 + 1, in - 1);
    const double frac = src - static_cast<double>(i0);
    taps[o] = {i0, i1, 1.0 - frac, frac};
  }
  return taps;
}

inline Grid<double> resize_bilinear(const Grid<double>& src, std::size_t out_w,
                                    std::size_t out_h) {
  if (src.empty() || out_w == 0 || out_h == 0) {
    throw Error(ErrorKind::BadShape, "resize", "empty grid");
  }
  const auto ty = bilinear_taps(src.height(), out_h);
  const auto tx = bilinear_taps(src.width(), out_w);
  Grid<double> out(out_w, out_h);
  for (std::size_t y = 0; y < out_h; ++y) {
    for (std::size_t x = 0; x < out_w; ++x) {
      const auto& a = ty[y];
      const auto& b = tx[x];
      out(y, x) = a.w0 * (b.w0 * src(a.i0, b.i0) + b.w1 * src(a.i0, b.i1)) +
                  a.w1 * (b.w0 * src(a.i1, b.i0) + b.w1 * src(a.i1, b.i1));
    }
  }
  return out;
}

/// Box-filter area resampling; preserves the mean of the map when the
/// output divides the input, and degrades gracefully otherwise.
inline Grid<double> resize_area(const Grid<double>& src, std::size_t out_w, std::size_t out_h) {
  if (src.empty() || out_w == 0 || out_h == 0) {
    throw Error(ErrorKind::BadShape, "resize", "empty grid");
  }
  if (out_w > src.width() || out_h > src.height()) return resize_bilinear(src, out_w, out_h);
  Grid<double> out(out_w, out_h);
  const double sx = static_cast<double>(src.width()) / static_cast<double>(out_w);
  const double sy = static_cast<double>(src.height()) / static_cast<double>(out_h);
  for (std::size_t oy = 0; oy < out_h; ++oy) {
    const double y0 = oy * sy, y1 = (oy + 1) * sy;
    for (std::size_t ox = 0; ox < out_w; ++ox) {
      const double x0 = ox * sx, x1 = (ox + 1) * sx;
      double acc = 0.0, area = 0.0;
      for (auto y = static_cast<std::size_t>(y0); y < src.height() && static_cast<double>(y) < y1; ++y) {
        const double wy = std::min<double>(y + 1, y1) - std::max<double>(y, y0);
        if (wy <= 0.0) continue;
        for (auto x = static_cast<std::size_t>(x0); x < src.width() && static_cast<double>(x) < x1; ++x) {
          const double wx = std::min<double>(x + 1, x1) - std::max<double>(x, x0);
          if (wx <= 0.0) continue;
          acc += wx * wy * src(y, x);
          area += wx * wy;
        }
      }
      out(oy, ox) = area > 0.0 ? acc / area : 0.0;
    }
  }
  return out;
}

/// Resize an RGB raster to `out_w`×`out_h`, returning per-channel planes of
/// doubles in [0, 255] (channel-major, 3×H×W).
inline std::vector<double> resize_rgb_planar(const RgbImage& img, std::size_t out_w,
                                             std::size_t out_h) {
  if (img.width == 0 || img.height == 0) throw Error(ErrorKind::BadShape, "image", "empty image");
  const auto ty = bilinear_taps(img.height, out_h);
  const auto tx = bilinear_taps(img.width, out_w);
  std::vector<double> out(3 * out_w * out_h);
  for (std::size_t c = 0; c < 3; ++c) {
    for (std::size_t y = 0; y < out_h; ++y) {
      for (std::size_t x = 0; x < out_w; ++x) {
        const auto& a = ty[y];
        const auto& b = tx[x];
        out[(c * out_h + y) * out_w + x] =
            a.w0 * (b.w0 * img.at(a.i0, b.i0, c) + b.w1 * img.at(a.i0, b.i1, c)) +
            a.w1 * (b.w0 * img.at(a.i1, b.i0, c) + b.w1 * img.at(a.i1, b.i1, c));
      }
    }
  }
  return out;
}

}  // namespace tisal
