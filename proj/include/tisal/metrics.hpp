#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "tisal/error.hpp"
#include "tisal/fixproc.hpp"
#include "tisal/rng.hpp"

namespace tisal::metrics {

/// Double-precision machine epsilon, as used by the MIT benchmark code.
inline constexpr double kEps = 2.2204e-16;
inline constexpr std::size_t kDefaultShuffles = 100;
inline constexpr const char* kCenterPriorId = "center-prior-v1";

namespace detail {

struct Moments {
  double mean = 0.0;
  double var = 0.0;  // population
};

inline Moments moments(std::span<const double> v) {
  Moments m;
  for (double x : v) m.mean += x;
  m.mean /= static_cast<double>(v.size());
  for (double x : v) m.var += (x - m.mean) * (x - m.mean);
  m.var /= static_cast<double>(v.size());
  return m;
}

// Exact test; the accumulated variance of a constant map can round to a
// tiny positive value.
inline bool is_constant(std::span<const double> v) {
  return std::adjacent_find(v.begin(), v.end(), std::not_equal_to<>()) == v.end();
}

inline std::vector<double> to_distribution(std::span<const double> v, const char* which) {
  double sum = 0.0;
  for (double x : v) sum += x;
  if (!(sum > 0.0) || !std::isfinite(sum)) throw Error(ErrorKind::ZeroMass, which);
  std::vector<double> out(v.begin(), v.end());
  for (auto& x : out) x /= sum;
  return out;
}

inline void require_same_shape(const Grid<double>& a, const Grid<double>& b) {
  if (!a.same_shape(b)) throw Error(ErrorKind::ShapeMismatch, "maps");
}

/// Integer trapezoid area of an ROC polyline whose vertices are given as
/// (false-positive count, true-positive count). Returns the exact rational
/// area num / (2·P·N) evaluated with a single division.
inline double roc_area(const std::vector<std::pair<std::uint64_t, std::uint64_t>>& points,
                       std::uint64_t positives, std::uint64_t negatives) {
  std::uint64_t num = 0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    num += (points[i].first - points[i - 1].first) * (points[i].second + points[i - 1].second);
  }
  return static_cast<double>(num) / (2.0 * static_cast<double>(positives) * static_cast<double>(negatives));
}

/// ROC sweep with thresholds at the distinct values of `thresholds`
/// (descending); samples at or above a threshold count as detected.
inline double auc_sweep(std::vector<double> pos, std::vector<double> neg,
                        std::vector<double> thresholds) {
  std::sort(pos.begin(), pos.end(), std::greater<>());
  std::sort(neg.begin(), neg.end(), std::greater<>());
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::vector<std::pair<std::uint64_t, std::uint64_t>> pts;
  pts.reserve(thresholds.size() + 2);
  pts.emplace_back(0, 0);
  std::size_t ip = 0, in = 0;
  for (double t : thresholds) {
    while (ip < pos.size() && pos[ip] >= t) ++ip;
    while (in < neg.size() && neg[in] >= t) ++in;
    pts.emplace_back(in, ip);
  }
  pts.emplace_back(neg.size(), pos.size());
  return roc_area(pts, pos.size(), neg.size());
}

}  // namespace detail

// ---------------------------------------------------------------- distribution-based

/// Pearson correlation over all pixels.
inline double cc(const Grid<double>& pred, const Grid<double>& gt) {
  detail::require_same_shape(pred, gt);
  const auto mp = detail::moments(pred.values());
  const auto mg = detail::moments(gt.values());
  if (!(mp.var > 0.0) || detail::is_constant(pred.values())) throw Error(ErrorKind::ZeroVariance, "pred");
  if (!(mg.var > 0.0) || detail::is_constant(gt.values())) throw Error(ErrorKind::ZeroVariance, "gt");
  double cov = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) cov += (pred[i] - mp.mean) * (gt[i] - mg.mean);
  cov /= static_cast<double>(pred.size());
  return cov / std::sqrt(mp.var * mg.var);
}
inline double cc(const SaliencyMap& pred, const DensityMap& gt) { return cc(pred.values, gt.values); }

/// KL(gt ‖ pred) with both maps renormalized to unit mass, natural log.
inline double kl_div(const Grid<double>& pred, const Grid<double>& gt) {
  detail::require_same_shape(pred, gt);
  const auto p = detail::to_distribution(pred.values(), "pred");
  const auto g = detail::to_distribution(gt.values(), "gt");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) kl += g[i] * std::log(kEps + g[i] / (p[i] + kEps));
  return kl;
}
inline double kl_div(const SaliencyMap& pred, const DensityMap& gt) {
  return kl_div(pred.values, gt.values);
}

/// Histogram intersection of the two unit-mass maps.
inline double sim(const Grid<double>& pred, const Grid<double>& gt) {
  detail::require_same_shape(pred, gt);
  const auto p = detail::to_distribution(pred.values(), "pred");
  const auto g = detail::to_distribution(gt.values(), "gt");
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::min(p[i], g[i]);
  return s;
}
inline double sim(const SaliencyMap& pred, const DensityMap& gt) { return sim(pred.values, gt.values); }

// ---------------------------------------------------------------- location-based

/// Mean z-scored saliency at fixated pixels, weighted by hit count.
inline double nss(const Grid<double>& pred, const FixationMap& fm) {
  if (!pred.same_shape(fm.hits)) throw Error(ErrorKind::ShapeMismatch, "maps");
  const auto m = detail::moments(pred.values());
  if (!(m.var > 0.0) || detail::is_constant(pred.values())) throw Error(ErrorKind::ZeroVariance, "pred");
  if (!fm.usable()) throw Error(ErrorKind::NoFixations);
  const double sd = std::sqrt(m.var);
  double acc = 0.0;
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const auto h = fm.hits[i];
    if (h == 0) continue;
    acc += h * ((pred[i] - m.mean) / sd);
    n += h;
  }
  return acc / static_cast<double>(n);
}
inline double nss(const SaliencyMap& pred, const FixationMap& fm) { return nss(pred.values, fm); }

/// AUC-Judd: positives are fixated pixels, negatives every other pixel;
/// thresholds are the distinct saliency values at fixated pixels.
inline double auc_judd(const Grid<double>& pred, const FixationMap& fm) {
  if (!pred.same_shape(fm.hits)) throw Error(ErrorKind::ShapeMismatch, "maps");
  std::vector<double> pos, neg;
  for (std::size_t i = 0; i < pred.size(); ++i) (fm.hits[i] > 0 ? pos : neg).push_back(pred[i]);
  if (pos.empty()) throw Error(ErrorKind::NoFixations);
  if (neg.empty()) throw Error(ErrorKind::AllPixelsFixated);
  auto thresholds = pos;
  return detail::auc_sweep(std::move(pos), std::move(neg), std::move(thresholds));
}
inline double auc_judd(const SaliencyMap& pred, const FixationMap& fm) {
  return auc_judd(pred.values, fm);
}

/// Fixation locations of a pool map, one entry per hit, expressed as flat
/// indices into a `width`×`height` grid (coordinates rescaled when the pool
/// map has a different shape).
inline std::vector<std::size_t> pool_locations(std::span<const FixationMap> pool, std::size_t width,
                                               std::size_t height) {
  std::vector<std::size_t> locs;
  for (const auto& fm : pool) {
    const bool same = fm.width() == width && fm.height() == height;
    for (std::size_t y = 0; y < fm.height(); ++y) {
      for (std::size_t x = 0; x < fm.width(); ++x) {
        const auto h = fm.hits(y, x);
        if (h == 0) continue;
        std::size_t ty = y, tx = x;
        if (!same) {
          ty = std::min(height - 1, static_cast<std::size_t>((y + 0.5) * height / fm.height()));
          tx = std::min(width - 1, static_cast<std::size_t>((x + 0.5) * width / fm.width()));
        }
        for (std::uint32_t k = 0; k < h; ++k) locs.push_back(ty * width + tx);
      }
    }
  }
  return locs;
}

/// Shuffled AUC. Positives are the saliency values at every fixation hit of
/// `fm`; each shuffle draws as many negatives from the pool locations.
///
/// Draw contract, one SplitMix64(seed) stream shared by all shuffles:
///   pool ≥ positives: partial Fisher-Yates on the identity permutation,
///                     for i < k: swap(a[i], a[i + index(n - i)])
///   pool < positives: k independent draws index(n)
/// Thresholds are the distinct values of positives ∪ negatives.
inline double shuffled_auc(const Grid<double>& pred, const FixationMap& fm,
                           std::span<const FixationMap> pool, std::size_t shuffles,
                           std::uint64_t seed) {
  if (!pred.same_shape(fm.hits)) throw Error(ErrorKind::ShapeMismatch, "maps");
  if (shuffles < 1) throw Error(ErrorKind::InvalidArgument, "shuffles");
  std::vector<double> pos;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    for (std::uint32_t k = 0; k < fm.hits[i]; ++k) pos.push_back(pred[i]);
  }
  if (pos.empty()) throw Error(ErrorKind::NoFixations);
  const auto locs = pool_locations(pool, pred.width(), pred.height());
  if (locs.empty()) throw Error(ErrorKind::EmptyPool);

  SplitMix64 rng(seed);
  const std::size_t k = pos.size(), n = locs.size();
  std::vector<std::size_t> perm(n);
  double total = 0.0;
  for (std::size_t s = 0; s < shuffles; ++s) {
    std::vector<double> neg(k);
    if (n >= k) {
      std::iota(perm.begin(), perm.end(), std::size_t{0});
      for (std::size_t i = 0; i < k; ++i) {
        std::swap(perm[i], perm[i + rng.index(n - i)]);
        neg[i] = pred[locs[perm[i]]];
      }
    } else {
      for (std::size_t i = 0; i < k; ++i) neg[i] = pred[locs[rng.index(n)]];
    }
    std::vector<double> thresholds = pos;
    thresholds.insert(thresholds.end(), neg.begin(), neg.end());
    total += detail::auc_sweep(pos, std::move(neg), std::move(thresholds));
  }
  return total / static_cast<double>(shuffles);
}
inline double shuffled_auc(const SaliencyMap& pred, const FixationMap& fm,
                           std::span<const FixationMap> pool, std::size_t shuffles,
                           std::uint64_t seed) {
  return shuffled_auc(pred.values, fm, pool, shuffles, seed);
}

/// Information gain (bits per fixation) of the prediction over a baseline.
inline double info_gain(const Grid<double>& pred, const FixationMap& fm, const Grid<double>& baseline) {
  detail::require_same_shape(pred, baseline);
  if (!pred.same_shape(fm.hits)) throw Error(ErrorKind::ShapeMismatch, "maps");
  const auto p = detail::to_distribution(pred.values(), "pred");
  const auto b = detail::to_distribution(baseline.values(), "baseline");
  double acc = 0.0;
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto h = fm.hits[i];
    if (h == 0) continue;
    acc += h * (std::log2(p[i] + kEps) - std::log2(b[i] + kEps));
    n += h;
  }
  if (n == 0) throw Error(ErrorKind::NoFixations);
  return acc / static_cast<double>(n);
}
inline double info_gain(const SaliencyMap& pred, const FixationMap& fm, const DensityMap& baseline) {
  return info_gain(pred.values, fm, baseline.values);
}

/// Isotropic Gaussian at the image center, σ = min(width, height)/3, unit mass.
inline DensityMap center_prior(std::size_t width, std::size_t height) {
  DensityMap d{Grid<double>(width, height), Normalization::SumOne};
  const double sigma = static_cast<double>(std::min(width, height)) / 3.0;
  const double cx = (static_cast<double>(width) - 1.0) / 2.0;
  const double cy = (static_cast<double>(height) - 1.0) / 2.0;
  for (std::size_t y = 0; y < height; ++y) {
    for (std::size_t x = 0; x < width; ++x) {
      const double dx = x - cx, dy = y - cy;
      d.values(y, x) = std::exp(-0.5 * (dx * dx + dy * dy) / (sigma * sigma));
    }
  }
  normalize(d.values, Normalization::SumOne);
  return d;
}

// ---------------------------------------------------------------- report

/// A metric score, or the reason it could not be computed.
struct MetricValue {
  std::optional<double> value;
  std::string absent_reason;

  bool present() const { return value.has_value(); }
  double operator*() const { return *value; }
};

struct MetricReport {
  MetricValue auc_j, sauc, cc, ig, kl, nss, sim;
  std::uint64_t sauc_seed = 0;
  std::size_t sauc_shuffles = kDefaultShuffles;
  std::string ig_baseline_id = kCenterPriorId;

  template <typename F>
  void for_each(F&& f) const {
    f("auc_j", auc_j);
    f("sauc", sauc);
    f("cc", cc);
    f("ig", ig);
    f("kl", kl);
    f("nss", nss);
    f("sim", sim);
  }
  template <typename F>
  void for_each(F&& f) {
    f("auc_j", auc_j);
    f("sauc", sauc);
    f("cc", cc);
    f("ig", ig);
    f("kl", kl);
    f("nss", nss);
    f("sim", sim);
  }
};

struct EvalConfig {
  std::size_t sauc_shuffles = kDefaultShuffles;
  std::uint64_t sauc_seed = 0;
};

namespace detail {

template <typename F>
MetricValue guarded(F&& f) {
  try {
    return {f(), {}};
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::ShapeMismatch) throw;
    return {std::nullopt, std::string(to_string(e.kind()))};
  }
}

}  // namespace detail

/// Runs all seven metrics. A metric that cannot be computed is recorded as
/// absent with the error name; shape mismatches abort the whole evaluation.
/// `baseline` defaults to the center prior.
inline MetricReport evaluate_all(const SaliencyMap& pred, const FixationMap& fm, const DensityMap& gt,
                                 std::span<const FixationMap> pool, const EvalConfig& cfg = {},
                                 const DensityMap* baseline = nullptr) {
  if (!pred.values.same_shape(gt.values) || !pred.values.same_shape(fm.hits)) {
    throw Error(ErrorKind::ShapeMismatch, "evaluate_all");
  }
  DensityMap prior;
  if (baseline == nullptr) {
    prior = center_prior(pred.width(), pred.height());
    baseline = &prior;
  } else if (!baseline->values.same_shape(pred.values)) {
    throw Error(ErrorKind::ShapeMismatch, "baseline");
  }
  MetricReport r;
  r.sauc_seed = cfg.sauc_seed;
  r.sauc_shuffles = cfg.sauc_shuffles;
  r.ig_baseline_id = baseline == &prior ? kCenterPriorId : "custom";
  r.auc_j = detail::guarded([&] { return auc_judd(pred, fm); });
  r.sauc = detail::guarded([&] { return shuffled_auc(pred, fm, pool, cfg.sauc_shuffles, cfg.sauc_seed); });
  r.cc = detail::guarded([&] { return cc(pred, gt); });
  r.ig = detail::guarded([&] { return info_gain(pred, fm, *baseline); });
  r.kl = detail::guarded([&] { return kl_div(pred, gt); });
  r.nss = detail::guarded([&] { return nss(pred, fm); });
  r.sim = detail::guarded([&] { return sim(pred, gt); });
  return r;
}

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  nlohmann::ordered_json absent = nlohmann::ordered_json::object();
  r.for_each([&](const char* name, const MetricValue& v) {
    if (v.present()) {
      j[name] = *v;
    } else {
      j[name] = nullptr;
      absent[name] = v.absent_reason;
    }
  });
  j["absent"] = absent;
  j["sauc_seed"] = r.sauc_seed;
  j["sauc_shuffles"] = r.sauc_shuffles;
  j["ig_baseline_id"] = r.ig_baseline_id;
  return j;
}

inline std::string format_cell(const MetricValue& v) {
  if (!v.present()) return "absent(" + v.absent_reason + ")";
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.6f", *v);
  return buf;
}

inline constexpr const char* kCsvHeader = "pair_id,condition,auc_j,sauc,cc,ig,kl,nss,sim";

inline std::string csv_row(const std::string& pair_id, const std::string& condition,
                           const MetricReport& r) {
  std::string row = pair_id + "," + condition;
  r.for_each([&](const char*, const MetricValue& v) { row += "," + format_cell(v); });
  return row;
}

}  // namespace tisal::metrics
