#pragma once

#include <deque>
#include <functional>
#include <unordered_map>
#include <utility>

#include "tisal/nn/tensor.hpp"

namespace tisal::nn {

struct Var {
  std::size_t id = 0;
};

/// Reverse-mode autodiff tape. Each op appends a node holding its value
/// and, when any input needs a gradient, a closure that pushes the node's
/// gradient into its inputs. Nodes live in a deque so references stay
/// valid while the graph grows.
template <typename T>
class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor<T>&)>;

  explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool grad_enabled() const noexcept { return grad_enabled_; }

  Var constant(Tensor<T> value) { return push(std::move(value), false, nullptr); }

  Var input(Tensor<T> value, bool requires_grad) {
    return push(std::move(value), requires_grad && grad_enabled_, nullptr);
  }

  /// Leaf bound to a parameter; repeated calls return the same node.
  Var param(const Parameter<T>& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return it->second;
    Var v = push(Tensor<T>{}, p.trainable && grad_enabled_, nullptr);
    nodes_[v.id].external = &p.value;
    nodes_[v.id].param = &p;
    param_nodes_.emplace(&p, v);
    return v;
  }

  const Tensor<T>& value(Var v) const {
    const auto& n = nodes_[v.id];
    return n.external ? *n.external : n.value;
  }
  const Shape& shape(Var v) const { return value(v).shape; }
  bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

  Tensor<T>& grad(Var v) {
    auto& n = nodes_[v.id];
    if (n.grad.data.empty() && !value(v).data.empty()) n.grad = Tensor<T>(value(v).shape);
    return n.grad;
  }
  bool has_grad(Var v) const { return !nodes_[v.id].grad.data.empty(); }

  /// Appends an op result. `backward` is dropped when no input needs a
  /// gradient.
  Var record(Tensor<T> value, std::initializer_list<Var> inputs, Backward backward) {
    bool rg = false;
    for (auto in : inputs) rg = rg || nodes_[in.id].requires_grad;
    return push(std::move(value), rg, rg ? std::move(backward) : nullptr);
  }
  Var record(Tensor<T> value, const std::vector<Var>& inputs, Backward backward) {
    bool rg = false;
    for (auto in : inputs) rg = rg || nodes_[in.id].requires_grad;
    return push(std::move(value), rg, rg ? std::move(backward) : nullptr);
  }

  /// Seeds d(objective)/d(out) and propagates to every reachable node.
  void backward(Var out, const Tensor<T>& seed) {
    if (seed.shape != value(out).shape) {
      throw Error(ErrorKind::DimMismatch, "backward seed", shape_string(seed.shape));
    }
    if (!nodes_[out.id].requires_grad) return;
    auto& g = grad(out);
    for (std::size_t i = 0; i < seed.size(); ++i) g[i] += seed[i];
    for (std::size_t i = out.id + 1; i-- > 0;) {
      auto& n = nodes_[i];
      if (!n.backward || n.grad.data.empty()) continue;
      n.backward(*this, n.grad);
    }
  }

  /// Adds gradients of trainable parameters into `buffer`.
  void accumulate(GradBuffer<T>& buffer) const {
    for (const auto& [p, v] : param_nodes_) {
      const auto& n = nodes_[v.id];
      if (!n.requires_grad || n.grad.data.empty()) continue;
      auto& dst = buffer.at(p->index);
      for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += n.grad[i];
    }
  }

  std::size_t node_count() const noexcept { return nodes_.size(); }

 private:
  struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    Backward backward;
    const Tensor<T>* external = nullptr;
    const Parameter<T>* param = nullptr;
    bool requires_grad = false;
  };

  Var push(Tensor<T> value, bool requires_grad, Backward backward) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  bool grad_enabled_;
  std::deque<Node> nodes_;
  std::unordered_map<const Parameter<T>*, Var> param_nodes_;
};

}  // namespace tisal::nn
