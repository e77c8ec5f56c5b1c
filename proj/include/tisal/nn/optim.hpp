#pragma once

#include <cmath>

#include "tisal/nn/tensor.hpp"

namespace tisal::nn {

/// Adam with bias correction. Frozen parameters are skipped entirely.
template <typename T>
class Adam {
 public:
  explicit Adam(const ParamStore<T>& store, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : m_(zero_grads(store)), v_(zero_grads(store)), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(ParamStore<T>& store, const GradBuffer<T>& grads, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < store.size(); ++i) {
      auto& p = store[i];
      if (!p.trainable) continue;
      auto& m = m_[i].data;
      auto& v = v_[i].data;
      const auto& g = grads[i].data;
      for (std::size_t j = 0; j < g.size(); ++j) {
        m[j] = static_cast<T>(beta1_ * m[j] + (1.0 - beta1_) * g[j]);
        v[j] = static_cast<T>(beta2_ * v[j] + (1.0 - beta2_) * g[j] * g[j]);
        const double mhat = m[j] / c1, vhat = v[j] / c2;
        p.value.data[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + eps_));
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }

 private:
  GradBuffer<T> m_, v_;
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

}  // namespace tisal::nn
