#pragma once

#include <algorithm>
#include <cmath>
#include <string>

#include "tisal/fixproc.hpp"
#include "tisal/nn/tape.hpp"

namespace tisal::training {

/// Combined is α(1 − CC) + β·MSE; L1 and L2 are the loss-ablation variants
/// (mean absolute error, mean squared error).
enum class LossKind { Combined, L1, L2 };

inline const char* to_string(LossKind k) {
  switch (k) {
    case LossKind::Combined: return "combined";
    case LossKind::L1: return "l1";
    case LossKind::L2: return "l2";
  }
  return "combined";
}

inline LossKind parse_loss_kind(const std::string& s) {
  for (auto k : {LossKind::Combined, LossKind::L1, LossKind::L2}) {
    if (s == to_string(k)) return k;
  }
  throw Error(ErrorKind::SchemaViolation, "loss.kind", s);
}

struct LossConfig {
  double alpha = 0.06;
  double beta = 1.0;
  double variance_epsilon = 1e-8;
  LossKind kind = LossKind::Combined;

  void validate() const {
    if (!(alpha >= 0.0) || !(beta >= 0.0) || (alpha == 0.0 && beta == 0.0)) {
      throw Error(ErrorKind::InvalidArgument, "loss", "alpha, beta must be >= 0 and not both zero");
    }
    if (!(variance_epsilon > 0.0)) throw Error(ErrorKind::InvalidArgument, "loss.variance_epsilon");
  }
};

struct LossTerms {
  double value = 0.0;
  double cc = 0.0;
  double mse = 0.0;
  double mae = 0.0;
};

namespace detail {

// Stabilized correlation (C + ε) / sqrt((Vp + ε)(Vg + ε)), which is exactly
// one for identical inputs, constant ones included.
template <typename T>
LossTerms loss_terms(const T* p, const T* g, std::size_t n, const LossConfig& cfg, T* grad) {
  const double N = static_cast<double>(n);
  double mp = 0.0, mg = 0.0;
  for (std::size_t i = 0; i < n; ++i) mp += p[i], mg += g[i];
  mp /= N, mg /= N;
  double vp = 0.0, vg = 0.0, c = 0.0, se = 0.0, ae = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dp = p[i] - mp, dg = g[i] - mg, d = p[i] - g[i];
    vp += dp * dp, vg += dg * dg, c += dp * dg, se += d * d, ae += std::abs(d);
  }
  vp /= N, vg /= N, c /= N;
  const double e = cfg.variance_epsilon;
  const double a = vp + e;
  const double denom = std::sqrt(a * (vg + e));
  LossTerms t;
  t.cc = std::min(1.0, (c + e) / denom);
  t.mse = se / N;
  t.mae = ae / N;
  switch (cfg.kind) {
    case LossKind::Combined: t.value = cfg.alpha * (1.0 - t.cc) + cfg.beta * t.mse; break;
    case LossKind::L1: t.value = t.mae; break;
    case LossKind::L2: t.value = t.mse; break;
  }
  if (grad) {
    const double cc_raw = (c + e) / denom;
    for (std::size_t i = 0; i < n; ++i) {
      const double d = p[i] - g[i];
      double gi = 0.0;
      switch (cfg.kind) {
        case LossKind::Combined: {
          const double dcc = (g[i] - mg) / (N * denom) - cc_raw * (p[i] - mp) / (N * a);
          gi = -cfg.alpha * dcc + cfg.beta * 2.0 * d / N;
          break;
        }
        case LossKind::L1: gi = (d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / N; break;
        case LossKind::L2: gi = 2.0 * d / N; break;
      }
      grad[i] = static_cast<T>(gi);
    }
  }
  return t;
}

}  // namespace detail

inline LossTerms loss(const SaliencyMap& pred, const DensityMap& gt, const LossConfig& cfg = {}) {
  if (!pred.values.same_shape(gt.values)) {
    throw Error(ErrorKind::ShapeMismatch, "loss", "prediction and ground truth differ in shape");
  }
  return detail::loss_terms<double>(pred.values.storage().data(), gt.values.storage().data(),
                                    pred.values.size(), cfg, nullptr);
}

/// Scalar loss node over a prediction node and a constant target of equal size.
template <typename T>
nn::Var loss_node(nn::Tape<T>& t, nn::Var pred, const nn::Tensor<T>& target, const LossConfig& cfg,
                  LossTerms* terms = nullptr) {
  const auto& vp = t.value(pred);
  if (vp.size() != target.size() || vp.size() == 0) {
    throw Error(ErrorKind::ShapeMismatch, "loss", nn::shape_string(vp.shape) + " vs " + nn::shape_string(target.shape));
  }
  nn::Tensor<T> grad(vp.shape);
  const auto lt = detail::loss_terms<T>(vp.data.data(), target.data.data(), vp.size(), cfg, grad.data.data());
  if (terms) *terms = lt;
  return t.record(nn::Tensor<T>({1}, static_cast<T>(lt.value)), {pred},
                  [pred, grad = std::move(grad)](nn::Tape<T>& t, const nn::Tensor<T>& g) {
                    auto& gp = t.grad(pred);
                    for (std::size_t i = 0; i < gp.size(); ++i) gp[i] += g[0] * grad[i];
                  });
}

}  // namespace tisal::training
