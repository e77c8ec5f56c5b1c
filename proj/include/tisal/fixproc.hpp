#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <vector>

#include "tisal/data_model.hpp"
#include "tisal/error.hpp"
#include "tisal/grid.hpp"

namespace tisal {

/// Per-pixel fixation counts aggregated over all viewers.
struct FixationMap {
  Grid<std::uint32_t> hits;

  std::size_t width() const { return hits.width(); }
  std::size_t height() const { return hits.height(); }
  std::uint64_t total() const {
    std::uint64_t n = 0;
    for (auto h : hits.values()) n += h;
    return n;
  }
  bool usable() const { return total() > 0; }
};

enum class Normalization { None, SumOne, MaxOne };

struct DensityMap {
  Grid<double> values;
  Normalization normalization = Normalization::None;

  std::size_t width() const { return values.width(); }
  std::size_t height() const { return values.height(); }
};

struct SaliencyMap {
  Grid<double> values;

  std::size_t width() const { return values.width(); }
  std::size_t height() const { return values.height(); }
};

inline std::size_t pixel_index(double coord, std::size_t extent) {
  const double r = std::round(coord);
  if (r <= 0.0) return 0;
  const auto i = static_cast<std::size_t>(r);
  return i >= extent ? extent - 1 : i;
}

/// Overlays every record onto one count grid: hits[round(y)][round(x)]++.
/// Rounding past the last row/column (possible for clamped border records)
/// lands on the last row/column.
inline FixationMap aggregate(std::span<const FixationRecord> records, std::size_t width,
                             std::size_t height) {
  if (records.empty()) throw Error(ErrorKind::NoFixations);
  FixationMap fm{Grid<std::uint32_t>(width, height, 0u)};
  for (const auto& r : records) {
    if (!(r.x >= 0.0 && r.x < static_cast<double>(width) && r.y >= 0.0 &&
          r.y < static_cast<double>(height))) {
      throw Error(ErrorKind::InvalidArgument, r.subject_id, "fixation out of bounds");
    }
    ++fm.hits(pixel_index(r.y, height), pixel_index(r.x, width));
  }
  return fm;
}

/// Separable kernel, truncated at `truncate_sigmas`·σ, normalized to unit sum.
inline std::vector<double> gaussian_kernel(double sigma_px, double truncate_sigmas = 4.0) {
  const auto radius = static_cast<std::size_t>(std::ceil(truncate_sigmas * sigma_px));
  std::vector<double> k(2 * radius + 1);
  double sum = 0.0;
  for (std::size_t i = 0; i < k.size(); ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius);
    k[i] = std::exp(-0.5 * d * d / (sigma_px * sigma_px));
    sum += k[i];
  }
  for (auto& v : k) v /= sum;
  return k;
}

inline void normalize(Grid<double>& values, Normalization how) {
  if (how == Normalization::None) return;
  double ref = 0.0;
  if (how == Normalization::SumOne) {
    for (double v : values.values()) ref += v;
  } else {
    for (double v : values.values()) ref = std::max(ref, v);
  }
  if (!(ref > 0.0)) throw Error(ErrorKind::ZeroMass, "density");
  for (auto& v : values.values()) v /= ref;
}

/// Convolves the fixation counts with an isotropic Gaussian (σ in pixels,
/// truncated at 4σ, zero padding) and normalizes.
inline DensityMap density_map(const FixationMap& fm, double sigma_px,
                              Normalization norm = Normalization::SumOne) {
  if (!fm.usable()) throw Error(ErrorKind::NoFixations);
  if (!(sigma_px > 0.0)) throw Error(ErrorKind::NonPositiveInput, "sigma_px");
  const auto k = gaussian_kernel(sigma_px);
  const auto r = static_cast<std::ptrdiff_t>(k.size() / 2);
  const auto w = static_cast<std::ptrdiff_t>(fm.width());
  const auto h = static_cast<std::ptrdiff_t>(fm.height());

  // horizontal pass, skipping rows without hits
  Grid<double> tmp(fm.width(), fm.height(), 0.0);
  std::vector<bool> row_used(fm.height(), false);
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    for (std::ptrdiff_t x = 0; x < w; ++x) {
      const auto c = fm.hits(y, x);
      if (c == 0) continue;
      row_used[y] = true;
      for (std::ptrdiff_t d = -r; d <= r; ++d) {
        const auto xx = x + d;
        if (xx < 0 || xx >= w) continue;
        tmp(y, xx) += c * k[d + r];
      }
    }
  }
  DensityMap out{Grid<double>(fm.width(), fm.height(), 0.0), Normalization::None};
  for (std::ptrdiff_t y = 0; y < h; ++y) {
    if (!row_used[y]) continue;
    for (std::ptrdiff_t d = -r; d <= r; ++d) {
      const auto yy = y + d;
      if (yy < 0 || yy >= h) continue;
      const double kv = k[d + r];
      for (std::ptrdiff_t x = 0; x < w; ++x) out.values(yy, x) += kv * tmp(y, x);
    }
  }
  normalize(out.values, norm);
  out.normalization = norm;
  return out;
}

/// How a kernel size quoted in degrees of visual angle maps to σ.
enum class KernelConvention { Sigma, FullWidthHalfMax };

inline double degrees_to_sigma(double pixels_per_degree, double degrees,
                               KernelConvention convention = KernelConvention::Sigma) {
  if (!(pixels_per_degree > 0.0)) throw Error(ErrorKind::NonPositiveInput, "pixels_per_degree");
  if (!(degrees > 0.0)) throw Error(ErrorKind::NonPositiveInput, "degrees");
  const double px = pixels_per_degree * degrees;
  if (convention == KernelConvention::FullWidthHalfMax) {
    return px / (2.0 * std::sqrt(2.0 * std::numbers::ln2));
  }
  return px;
}

/// Pixels per degree at the screen center: the width subtended by 1° at the
/// viewing distance, times the horizontal pixel density.
inline double pixels_per_degree(double viewing_distance_cm, double screen_width_px,
                                double screen_width_cm) {
  if (!(viewing_distance_cm > 0.0) || !(screen_width_px > 0.0) || !(screen_width_cm > 0.0)) {
    throw Error(ErrorKind::NonPositiveInput, "screen geometry");
  }
  const double cm_per_degree =
      2.0 * viewing_distance_cm * std::tan(0.5 * std::numbers::pi / 180.0);
  return cm_per_degree * (screen_width_px / screen_width_cm);
}

/// Loads a pair's fixations and returns its fixation map.
inline FixationMap fixation_map_for(const DatasetManifest& m, const TextImagePair& p) {
  const auto load = load_fixations(m.resolve(p.fixation_path), p.width, p.height);
  return aggregate(load.records, p.width, p.height);
}

}  // namespace tisal
