#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tisal/data_model.hpp"
#include "tisal/error.hpp"
#include "tisal/grid.hpp"
#include "tisal/io.hpp"

namespace tisal::attributes {

struct AttributeVector {
  double contrast = 0.0;             // RMS contrast of luma
  double colorfulness = 0.0;         // Hasler-Süsstrunk
  double spatial_information = 0.0;  // RMS Sobel magnitude of luma
  double brightness = 0.0;           // mean luma, [0,255]
};

inline constexpr std::array<const char*, 4> kAttributeNames = {
    "contrast", "colorfulness", "spatial_information", "brightness"};

inline double get(const AttributeVector& a, std::size_t i) {
  switch (i) {
    case 0: return a.contrast;
    case 1: return a.colorfulness;
    case 2: return a.spatial_information;
    default: return a.brightness;
  }
}

inline double luma(double r, double g, double b) { return 0.299 * r + 0.587 * g + 0.114 * b; }

/// Hasler-Süsstrunk colorfulness over a list of RGB triples:
/// rg = R - G, yb = (R + G)/2 - B,
/// C = sqrt(σ_rg² + σ_yb²) + 0.3·sqrt(μ_rg² + μ_yb²) (population moments).
inline double colorfulness(std::span<const std::uint8_t> rgb) {
  const std::size_t n = rgb.size() / 3;
  if (n == 0) throw Error(ErrorKind::TooSmall, "image");
  double mrg = 0, myb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = rgb[3 * i], g = rgb[3 * i + 1], b = rgb[3 * i + 2];
    mrg += r - g;
    myb += 0.5 * (r + g) - b;
  }
  mrg /= n;
  myb /= n;
  double vrg = 0, vyb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double r = rgb[3 * i], g = rgb[3 * i + 1], b = rgb[3 * i + 2];
    vrg += (r - g - mrg) * (r - g - mrg);
    vyb += (0.5 * (r + g) - b - myb) * (0.5 * (r + g) - b - myb);
  }
  vrg /= n;
  vyb /= n;
  return std::sqrt(vrg + vyb) + 0.3 * std::sqrt(mrg * mrg + myb * myb);
}

inline AttributeVector compute_attributes(const RgbImage& img) {
  if (img.width < 8 || img.height < 8) throw Error(ErrorKind::TooSmall, "image", "needs at least 8x8");
  Grid<double> y(img.width, img.height);
  for (std::size_t r = 0; r < img.height; ++r) {
    for (std::size_t c = 0; c < img.width; ++c) {
      y(r, c) = luma(img.at(r, c, 0), img.at(r, c, 1), img.at(r, c, 2));
    }
  }
  AttributeVector a;
  double mean = 0.0;
  for (double v : y.values()) mean += v;
  mean /= static_cast<double>(y.size());
  double var = 0.0;
  for (double v : y.values()) var += (v - mean) * (v - mean);
  var /= static_cast<double>(y.size());
  a.brightness = mean;
  a.contrast = std::sqrt(var);
  a.colorfulness = colorfulness(img.pixels);

  // Sobel on interior pixels only
  double sq = 0.0;
  std::size_t count = 0;
  for (std::size_t r = 1; r + 1 < img.height; ++r) {
    for (std::size_t c = 1; c + 1 < img.width; ++c) {
      const double gx = (y(r - 1, c + 1) + 2 * y(r, c + 1) + y(r + 1, c + 1)) -
                        (y(r - 1, c - 1) + 2 * y(r, c - 1) + y(r + 1, c - 1));
      const double gy = (y(r + 1, c - 1) + 2 * y(r + 1, c) + y(r + 1, c + 1)) -
                        (y(r - 1, c - 1) + 2 * y(r - 1, c) + y(r - 1, c + 1));
      sq += gx * gx + gy * gy;
      ++count;
    }
  }
  a.spatial_information = std::sqrt(sq / static_cast<double>(count));
  return a;
}

struct Histogram {
  double min = 0.0, max = 0.0, mean = 0.0;
  std::vector<double> mass;  // normalized bin masses over [min, max]
};

struct AttributeSummary {
  std::array<Histogram, 4> histograms;
  std::size_t images = 0;
};

inline Histogram histogram(std::span<const double> values, std::size_t bins) {
  Histogram h;
  h.mass.assign(bins, 0.0);
  if (values.empty()) return h;
  h.min = *std::min_element(values.begin(), values.end());
  h.max = *std::max_element(values.begin(), values.end());
  for (double v : values) h.mean += v;
  h.mean /= static_cast<double>(values.size());
  const double range = h.max - h.min;
  for (double v : values) {
    std::size_t b = 0;
    if (range > 0.0) b = std::min(bins - 1, static_cast<std::size_t>((v - h.min) / range * bins));
    h.mass[b] += 1.0;
  }
  for (auto& m : h.mass) m /= static_cast<double>(values.size());
  return h;
}

inline AttributeSummary summarize(std::span<const AttributeVector> attrs, std::size_t bins) {
  if (bins == 0) throw Error(ErrorKind::InvalidArgument, "bins");
  AttributeSummary s;
  s.images = attrs.size();
  for (std::size_t i = 0; i < 4; ++i) {
    std::vector<double> v;
    for (const auto& a : attrs) v.push_back(get(a, i));
    s.histograms[i] = histogram(v, bins);
  }
  return s;
}

/// Attribute histograms over the distinct images of a manifest.
inline AttributeSummary attribute_histogram(const DatasetManifest& m, std::size_t bins) {
  if (m.pairs.empty()) throw Error(ErrorKind::InvalidArgument, "manifest", "no pairs");
  std::vector<std::string> seen;
  std::vector<AttributeVector> attrs;
  for (const auto& p : m.pairs) {
    if (std::find(seen.begin(), seen.end(), p.image_path) != seen.end()) continue;
    seen.push_back(p.image_path);
    attrs.push_back(compute_attributes(io::read_png_rgb(m.resolve(p.image_path))));
  }
  return summarize(attrs, bins);
}

inline nlohmann::ordered_json to_json(const AttributeSummary& s) {
  nlohmann::ordered_json j;
  j["images"] = s.images;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& h = s.histograms[i];
    j[kAttributeNames[i]] = {{"min", h.min}, {"max", h.max}, {"mean", h.mean}, {"mass", h.mass}};
  }
  return j;
}

/// Bar-chart raster of one histogram, bars scaled to the tallest bin.
inline RgbImage render_histogram(const Histogram& h, std::size_t width = 320, std::size_t height = 200) {
  RgbImage img(width, height, 255);
  const std::size_t bins = h.mass.size();
  if (bins == 0) return img;
  const double peak = *std::max_element(h.mass.begin(), h.mass.end());
  const std::size_t margin = 10;
  const std::size_t plot_w = width - 2 * margin, plot_h = height - 2 * margin;
  for (std::size_t b = 0; b < bins; ++b) {
    const std::size_t x0 = margin + b * plot_w / bins;
    const std::size_t x1 = margin + (b + 1) * plot_w / bins;
    const auto bar = peak > 0 ? static_cast<std::size_t>(h.mass[b] / peak * plot_h) : 0;
    for (std::size_t x = x0; x + 1 < x1; ++x) {
      for (std::size_t y = height - margin - bar; y < height - margin; ++y) img.set(y, x, 70, 110, 180);
    }
  }
  for (std::size_t x = margin; x < width - margin; ++x) img.set(height - margin, x, 0, 0, 0);
  return img;
}

inline void write_summary(const AttributeSummary& s, const fs::path& out_dir) {
  io::write_text(out_dir / "attributes.json", to_json(s).dump(2) + "\n");
  for (std::size_t i = 0; i < 4; ++i) {
    io::write_png_rgb(out_dir / (std::string(kAttributeNames[i]) + ".png"), render_histogram(s.histograms[i]));
  }
}

}  // namespace tisal::attributes
