#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "tisal/nn/ops.hpp"

namespace tisal::nn {

template <typename T>
struct Conv2d {
  Parameter<T>* weight = nullptr;  // out×in×k×k
  Parameter<T>* bias = nullptr;    // out
  std::size_t stride = 1;
  std::size_t pad = 1;

  Conv2d() = default;
  Conv2d(ParamStore<T>& store, const std::string& name, const std::string& group, std::size_t in,
         std::size_t out, std::size_t kernel, std::size_t stride_, SplitMix64& rng)
      : stride(stride_), pad(kernel / 2) {
    weight = &store.add(name + ".weight", {out, in, kernel, kernel}, group);
    bias = &store.add(name + ".bias", {out}, group);
    init_uniform(weight->value, in * kernel * kernel, rng);
  }

  std::size_t out_channels() const { return weight->value.dim(0); }

  Var operator()(Tape<T>& t, Var x) const {
    return ops::conv2d(t, x, t.param(*weight), t.param(*bias), stride, pad);
  }
};

template <typename T>
struct ConvTranspose2x2 {
  Parameter<T>* weight = nullptr;  // in×out×2×2
  Parameter<T>* bias = nullptr;

  ConvTranspose2x2() = default;
  ConvTranspose2x2(ParamStore<T>& store, const std::string& name, const std::string& group,
                   std::size_t in, std::size_t out, SplitMix64& rng) {
    weight = &store.add(name + ".weight", {in, out, 2, 2}, group);
    bias = &store.add(name + ".bias", {out}, group);
    init_uniform(weight->value, in, rng);
  }

  Var operator()(Tape<T>& t, Var x) const {
    return ops::conv_transpose2x2(t, x, t.param(*weight), t.param(*bias));
  }
};

/// y = x·W + b, x: M×in, W: in×out.
template <typename T>
struct Linear {
  Parameter<T>* weight = nullptr;
  Parameter<T>* bias = nullptr;

  Linear() = default;
  Linear(ParamStore<T>& store, const std::string& name, const std::string& group, std::size_t in,
         std::size_t out, SplitMix64& rng, double gain = 1.0) {
    weight = &store.add(name + ".weight", {in, out}, group);
    bias = &store.add(name + ".bias", {out}, group);
    // Var(w) = gain² / fan_in
    init_uniform(weight->value, in, rng, gain / std::sqrt(2.0));
  }

  Var operator()(Tape<T>& t, Var x) const {
    return ops::add_row_bias(t, ops::matmul(t, x, t.param(*weight)), t.param(*bias));
  }

  void zero() {
    std::fill(weight->value.data.begin(), weight->value.data.end(), T(0));
    std::fill(bias->value.data.begin(), bias->value.data.end(), T(0));
  }
};

template <typename T>
struct LayerNorm {
  Parameter<T>* gain = nullptr;
  Parameter<T>* bias = nullptr;

  LayerNorm() = default;
  LayerNorm(ParamStore<T>& store, const std::string& name, const std::string& group, std::size_t dim) {
    gain = &store.add(name + ".gain", {dim}, group);
    bias = &store.add(name + ".bias", {dim}, group);
    std::fill(gain->value.data.begin(), gain->value.data.end(), T(1));
  }

  Var operator()(Tape<T>& t, Var x) const {
    return ops::layer_norm_rows(t, x, t.param(*gain), t.param(*bias));
  }
};

/// Multi-head scaled dot-product attention. Queries come from `query`
/// (M×width), keys and values from `context` (L×context_dim).
template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, out;
  std::size_t heads = 1;
  std::size_t width = 0;

  struct Result {
    Var output;                // M×width
    std::vector<Var> weights;  // per head, M×L, rows sum to one
  };

  MultiHeadAttention() = default;
  MultiHeadAttention(ParamStore<T>& store, const std::string& name, const std::string& group,
                     std::size_t width_, std::size_t context_dim, std::size_t heads_, SplitMix64& rng)
      : heads(heads_), width(width_) {
    if (heads == 0 || width % heads != 0) {
      throw Error(ErrorKind::DimMismatch, name, "heads must divide the attention width");
    }
    q = Linear<T>(store, name + ".q", group, width, width, rng);
    k = Linear<T>(store, name + ".k", group, context_dim, width, rng);
    v = Linear<T>(store, name + ".v", group, context_dim, width, rng);
    out = Linear<T>(store, name + ".out", group, width, width, rng);
  }

  Result operator()(Tape<T>& t, Var query, Var context) const {
    const auto& qs = t.shape(query);
    if (qs.size() != 2 || qs[1] != width) throw Error(ErrorKind::DimMismatch, "attention query", shape_string(qs));
    const Var Q = q(t, query), K = k(t, context), V = v(t, context);
    const std::size_t dh = width / heads;
    const T inv_sqrt = T(1) / std::sqrt(static_cast<T>(dh));
    Result r;
    std::vector<Var> parts;
    for (std::size_t h = 0; h < heads; ++h) {
      const Var qh = ops::slice_cols(t, Q, h * dh, dh);
      const Var kh = ops::slice_cols(t, K, h * dh, dh);
      const Var vh = ops::slice_cols(t, V, h * dh, dh);
      const Var a = ops::softmax_rows(t, ops::scale(t, ops::matmul_nt(t, qh, kh), inv_sqrt));
      r.weights.push_back(a);
      parts.push_back(ops::matmul(t, a, vh));
    }
    r.output = out(t, heads == 1 ? parts[0] : ops::concat_cols(t, parts));
    return r;
  }
};

}  // namespace tisal::nn
