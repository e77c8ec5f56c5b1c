#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "tisal/error.hpp"
#include "tisal/rng.hpp"

namespace tisal::nn {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_string(const Shape& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) out += (i ? "," : "") + std::to_string(s[i]);
  return out + "]";
}

/// Dense row-major tensor. Rank is whatever the shape says; image features
/// are C×H×W, token sequences M×D, vectors D.
template <typename T>
struct Tensor {
  Shape shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T{0}) : shape(std::move(s)), data(numel(shape), fill) {}
  Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
    if (data.size() != numel(shape)) {
      throw Error(ErrorKind::BadShape, shape_string(shape), "data size mismatch");
    }
  }

  std::size_t size() const noexcept { return data.size(); }
  std::size_t rank() const noexcept { return shape.size(); }
  std::size_t dim(std::size_t i) const { return shape.at(i); }
  T& operator[](std::size_t i) { return data[i]; }
  const T& operator[](std::size_t i) const { return data[i]; }

  bool operator==(const Tensor&) const = default;
};

template <typename T>
struct Parameter {
  std::string name;
  std::string group;
  Tensor<T> value;
  bool trainable = true;
  std::size_t index = 0;
};

/// Owns every parameter of a model in registration order. Parameters are
/// heap-allocated so module pointers survive moves of the store.
template <typename T>
class ParamStore {
 public:
  Parameter<T>& add(std::string name, Shape shape, std::string group) {
    auto p = std::make_unique<Parameter<T>>();
    p->name = std::move(name);
    p->group = std::move(group);
    p->value = Tensor<T>(std::move(shape));
    p->index = params_.size();
    params_.push_back(std::move(p));
    return *params_.back();
  }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter<T>& operator[](std::size_t i) { return *params_[i]; }
  const Parameter<T>& operator[](std::size_t i) const { return *params_[i]; }

  Parameter<T>* find(const std::string& name) {
    for (auto& p : params_) {
      if (p->name == name) return p.get();
    }
    return nullptr;
  }
  const Parameter<T>* find(const std::string& name) const {
    for (const auto& p : params_) {
      if (p->name == name) return p.get();
    }
    return nullptr;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

  void set_trainable_group(const std::string& group, bool trainable) {
    for (auto& p : params_) {
      if (p->group == group) p->trainable = trainable;
    }
  }

 private:
  std::vector<std::unique_ptr<Parameter<T>>> params_;
};

/// One gradient tensor per parameter, indexed like the store.
template <typename T>
using GradBuffer = std::vector<Tensor<T>>;

template <typename T>
GradBuffer<T> zero_grads(const ParamStore<T>& store) {
  GradBuffer<T> g;
  g.reserve(store.size());
  for (std::size_t i = 0; i < store.size(); ++i) g.emplace_back(store[i].value.shape);
  return g;
}

// He-uniform for weights feeding a ReLU, scaled by `gain`.
template <typename T>
void init_uniform(Tensor<T>& t, std::size_t fan_in, SplitMix64& rng, double gain = 1.0) {
  const double bound = gain * std::sqrt(6.0 / static_cast<double>(fan_in));
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(-bound, bound));
}

}  // namespace tisal::nn
