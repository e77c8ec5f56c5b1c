#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "tisal/grid.hpp"
#include "tisal/nn/tape.hpp"

namespace tisal::nn::ops {

namespace detail {

inline void expect(bool ok, const char* what, const Shape& s) {
  if (!ok) throw Error(ErrorKind::DimMismatch, what, shape_string(s));
}

template <typename T>
void add_into(Tensor<T>& dst, const Tensor<T>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

// ---------------------------------------------------------------- elementwise

template <typename T>
Var add(Tape<T>& t, Var a, Var b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  detail::expect(va.shape == vb.shape, "add", vb.shape);
  Tensor<T> out = va;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += vb[i];
  return t.record(std::move(out), {a, b}, [a, b](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) detail::add_into(t.grad(a), g);
    if (t.requires_grad(b)) detail::add_into(t.grad(b), g);
  });
}

template <typename T>
Var scale(Tape<T>& t, Var a, T s) {
  Tensor<T> out = t.value(a);
  for (auto& v : out.data) v *= s;
  return t.record(std::move(out), {a}, [a, s](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
  });
}

template <typename T>
Var relu(Tape<T>& t, Var a) {
  Tensor<T> out = t.value(a);
  for (auto& v : out.data) v = v > T(0) ? v : T(0);
  return t.record(std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    const auto& x = t.value(a);
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (x[i] > T(0)) ga[i] += g[i];
    }
  });
}

template <typename T>
Var sigmoid(Tape<T>& t, Var a) {
  Tensor<T> out = t.value(a);
  for (auto& v : out.data) v = T(1) / (T(1) + std::exp(-v));
  Tensor<T> s = out;
  return t.record(std::move(out), {a}, [a, s = std::move(s)](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * s[i] * (T(1) - s[i]);
  });
}

template <typename T>
Var reshape(Tape<T>& t, Var a, Shape shape) {
  Tensor<T> out = t.value(a);
  detail::expect(numel(shape) == out.size(), "reshape", shape);
  out.shape = std::move(shape);
  return t.record(std::move(out), {a}, [a](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
  });
}

/// Σ a ⊙ weights, as a 1-element tensor.
template <typename T>
Var dot_const(Tape<T>& t, Var a, const Tensor<T>& weights) {
  const auto& va = t.value(a);
  detail::expect(va.size() == weights.size(), "dot_const", va.shape);
  T s = 0;
  for (std::size_t i = 0; i < va.size(); ++i) s += va[i] * weights[i];
  return t.record(Tensor<T>({1}, s), {a}, [a, weights](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g[0] * weights[i];
  });
}

// ---------------------------------------------------------------- convolution

namespace detail {

// Output indices o in [lo, hi) whose input o·stride + k − pad lies in [0, n).
inline std::pair<std::size_t, std::size_t> valid_range(std::size_t n_out, std::size_t n_in, std::size_t k,
                                                         std::size_t stride, std::size_t pad) {
  std::size_t lo = 0;
  if (pad > k) lo = (pad - k + stride - 1) / stride;
  if (n_in + pad <= k) return {0, 0};
  const std::size_t hi = std::min(n_out, (n_in + pad - k - 1) / stride + 1);
  return {std::min(lo, hi), hi};
}

}  // namespace detail

/// x: C×H×W, w: O×C×K×K, b: O. Zero padding.
template <typename T>
Var conv2d(Tape<T>& t, Var x, Var w, Var b, std::size_t stride, std::size_t pad) {
  const auto& vx = t.value(x);
  const auto& vw = t.value(w);
  detail::expect(vx.rank() == 3 && vw.rank() == 4 && vw.dim(1) == vx.dim(0) && vw.dim(2) == vw.dim(3),
                 "conv2d", vw.shape);
  const std::size_t C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
  const std::size_t O = vw.dim(0), K = vw.dim(2);
  detail::expect(H + 2 * pad >= K && W + 2 * pad >= K, "conv2d input", vx.shape);
  const std::size_t OH = (H + 2 * pad - K) / stride + 1;
  const std::size_t OW = (W + 2 * pad - K) / stride + 1;
  std::vector<std::pair<std::size_t, std::size_t>> ry(K), rx(K);
  for (std::size_t k = 0; k < K; ++k) {
    ry[k] = detail::valid_range(OH, H, k, stride, pad);
    rx[k] = detail::valid_range(OW, W, k, stride, pad);
  }
  const auto& vb = t.value(b);
  Tensor<T> out({O, OH, OW});
  for (std::size_t o = 0; o < O; ++o) {
    T* po = &out.data[o * OH * OW];
    std::fill(po, po + OH * OW, vb[o]);
    for (std::size_t c = 0; c < C; ++c) {
      const T* px = &vx.data[c * H * W];
      for (std::size_t ky = 0; ky < K; ++ky) {
        for (std::size_t kx = 0; kx < K; ++kx) {
          const T wv = vw.data[((o * C + c) * K + ky) * K + kx];
          const auto [x0, x1] = rx[kx];
          for (std::size_t oy = ry[ky].first; oy < ry[ky].second; ++oy) {
            const T* row = px + (oy * stride + ky - pad) * W;
            T* orow = po + oy * OW;
            if (stride == 1) {
              for (std::size_t ox = x0; ox < x1; ++ox) orow[ox] += wv * row[ox + kx - pad];
            } else {
              for (std::size_t ox = x0; ox < x1; ++ox) orow[ox] += wv * row[ox * stride + kx - pad];
            }
          }
        }
      }
    }
  }
  return t.record(std::move(out), {x, w, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    const auto& vx = t.value(x);
    const auto& vw = t.value(w);
    const bool gx_on = t.requires_grad(x), gw_on = t.requires_grad(w);
    if (t.requires_grad(b)) {
      auto& gb = t.grad(b);
      for (std::size_t o = 0; o < O; ++o) {
        T s = 0;
        for (std::size_t i = 0; i < OH * OW; ++i) s += g.data[o * OH * OW + i];
        gb[o] += s;
      }
    }
    if (!gx_on && !gw_on) return;
    Tensor<T>* gx = gx_on ? &t.grad(x) : nullptr;
    Tensor<T>* gw = gw_on ? &t.grad(w) : nullptr;
    for (std::size_t o = 0; o < O; ++o) {
      const T* pg = &g.data[o * OH * OW];
      for (std::size_t c = 0; c < C; ++c) {
        const T* px = &vx.data[c * H * W];
        for (std::size_t ky = 0; ky < K; ++ky) {
          for (std::size_t kx = 0; kx < K; ++kx) {
            const std::size_t wi = ((o * C + c) * K + ky) * K + kx;
            const T wv = vw.data[wi];
            const auto [x0, x1] = rx[kx];
            T acc = 0;
            for (std::size_t oy = ry[ky].first; oy < ry[ky].second; ++oy) {
              const std::size_t off = (oy * stride + ky - pad) * W;
              const T* grow = pg + oy * OW;
              if (gw) {
                const T* row = px + off;
                if (stride == 1) {
                  T a4[4] = {0, 0, 0, 0};
                  std::size_t ox = x0;
                  for (; ox + 4 <= x1; ox += 4) {
                    for (std::size_t j = 0; j < 4; ++j) a4[j] += grow[ox + j] * row[ox + j + kx - pad];
                  }
                  for (; ox < x1; ++ox) a4[0] += grow[ox] * row[ox + kx - pad];
                  acc += (a4[0] + a4[1]) + (a4[2] + a4[3]);
                } else {
                  for (std::size_t ox = x0; ox < x1; ++ox) acc += grow[ox] * row[ox * stride + kx - pad];
                }
              }
              if (gx) {
                T* gxrow = &gx->data[c * H * W + off];
                for (std::size_t ox = x0; ox < x1; ++ox) gxrow[ox * stride + kx - pad] += grow[ox] * wv;
              }
            }
            if (gw) gw->data[wi] += acc;
          }
        }
      }
    }
  });
}

/// Transposed convolution with a 2×2 kernel and stride 2:
/// out[o, 2i+a, 2j+b] = bias[o] + Σ_c x[c,i,j]·w[c,o,a,b].
template <typename T>
Var conv_transpose2x2(Tape<T>& t, Var x, Var w, Var b) {
  const auto& vx = t.value(x);
  const auto& vw = t.value(w);
  detail::expect(vx.rank() == 3 && vw.rank() == 4 && vw.dim(0) == vx.dim(0) && vw.dim(2) == 2 &&
                     vw.dim(3) == 2,
                 "conv_transpose2x2", vw.shape);
  const std::size_t C = vx.dim(0), H = vx.dim(1), W = vx.dim(2), O = vw.dim(1);
  const auto& vb = t.value(b);
  Tensor<T> out({O, 2 * H, 2 * W});
  for (std::size_t o = 0; o < O; ++o) {
    for (std::size_t i = 0; i < 4 * H * W; ++i) out.data[o * 4 * H * W + i] = vb[o];
  }
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t o = 0; o < O; ++o) {
      for (std::size_t a = 0; a < 2; ++a) {
        for (std::size_t bb = 0; bb < 2; ++bb) {
          const T wv = vw.data[((c * O + o) * 2 + a) * 2 + bb];
          for (std::size_t i = 0; i < H; ++i) {
            for (std::size_t j = 0; j < W; ++j) {
              out.data[(o * 2 * H + 2 * i + a) * 2 * W + 2 * j + bb] += wv * vx.data[(c * H + i) * W + j];
            }
          }
        }
      }
    }
  }
  return t.record(std::move(out), {x, w, b}, [=](Tape<T>& t, const Tensor<T>& g) {
    const auto& vx = t.value(x);
    const auto& vw = t.value(w);
    if (t.requires_grad(b)) {
      auto& gb = t.grad(b);
      for (std::size_t o = 0; o < O; ++o) {
        for (std::size_t i = 0; i < 4 * H * W; ++i) gb[o] += g.data[o * 4 * H * W + i];
      }
    }
    Tensor<T>* gx = t.requires_grad(x) ? &t.grad(x) : nullptr;
    Tensor<T>* gw = t.requires_grad(w) ? &t.grad(w) : nullptr;
    if (!gx && !gw) return;
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t o = 0; o < O; ++o) {
        for (std::size_t a = 0; a < 2; ++a) {
          for (std::size_t bb = 0; bb < 2; ++bb) {
            const std::size_t wi = ((c * O + o) * 2 + a) * 2 + bb;
            T acc = 0;
            for (std::size_t i = 0; i < H; ++i) {
              for (std::size_t j = 0; j < W; ++j) {
                const T gv = g.data[(o * 2 * H + 2 * i + a) * 2 * W + 2 * j + bb];
                acc += gv * vx.data[(c * H + i) * W + j];
                if (gx) gx->data[(c * H + i) * W + j] += gv * vw.data[wi];
              }
            }
            if (gw) gw->data[wi] += acc;
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------- resampling

/// Bilinear resize of a C×H×W tensor (half-pixel centers).
template <typename T>
Var resize_bilinear(Tape<T>& t, Var x, std::size_t out_h, std::size_t out_w) {
  const auto& vx = t.value(x);
  detail::expect(vx.rank() == 3 && out_h > 0 && out_w > 0, "resize_bilinear", vx.shape);
  const std::size_t C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
  const auto ty = bilinear_taps(H, out_h);
  const auto tx = bilinear_taps(W, out_w);
  Tensor<T> out({C, out_h, out_w});
  for (std::size_t c = 0; c < C; ++c) {
    const T* p = &vx.data[c * H * W];
    T* q = &out.data[c * out_h * out_w];
    for (std::size_t y = 0; y < out_h; ++y) {
      const auto& a = ty[y];
      for (std::size_t xx = 0; xx < out_w; ++xx) {
        const auto& b = tx[xx];
        q[y * out_w + xx] = static_cast<T>(a.w0 * (b.w0 * p[a.i0 * W + b.i0] + b.w1 * p[a.i0 * W + b.i1]) +
                                           a.w1 * (b.w0 * p[a.i1 * W + b.i0] + b.w1 * p[a.i1 * W + b.i1]));
      }
    }
  }
  return t.record(std::move(out), {x}, [=](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad(x);
    for (std::size_t c = 0; c < C; ++c) {
      T* p = &gx.data[c * H * W];
      const T* q = &g.data[c * out_h * out_w];
      for (std::size_t y = 0; y < out_h; ++y) {
        const auto& a = ty[y];
        for (std::size_t xx = 0; xx < out_w; ++xx) {
          const auto& b = tx[xx];
          const T v = q[y * out_w + xx];
          p[a.i0 * W + b.i0] += static_cast<T>(a.w0 * b.w0) * v;
          p[a.i0 * W + b.i1] += static_cast<T>(a.w0 * b.w1) * v;
          p[a.i1 * W + b.i0] += static_cast<T>(a.w1 * b.w0) * v;
          p[a.i1 * W + b.i1] += static_cast<T>(a.w1 * b.w1) * v;
        }
      }
    }
  });
}

/// Attention pooling over 2×2 windows (ceil mode): a 1×1 score map is
/// softmax-normalized inside each window and used to average the window's
/// feature vectors. score_w: C, score_b: 1.
template <typename T>
Var attention_pool2x2(Tape<T>& t, Var x, Var score_w, Var score_b) {
  const auto& vx = t.value(x);
  const auto& vw = t.value(score_w);
  detail::expect(vx.rank() == 3 && vw.size() == vx.dim(0), "attention_pool2x2", vx.shape);
  const std::size_t C = vx.dim(0), H = vx.dim(1), W = vx.dim(2);
  const std::size_t OH = (H + 1) / 2, OW = (W + 1) / 2;
  const T bias = t.value(score_b)[0];
  // per-pixel window weights
  Tensor<T> attn({H, W});
  for (std::size_t y = 0; y < H; ++y) {
    for (std::size_t xx = 0; xx < W; ++xx) {
      T s = bias;
      for (std::size_t c = 0; c < C; ++c) s += vw[c] * vx.data[(c * H + y) * W + xx];
      attn.data[y * W + xx] = s;
    }
  }
  for (std::size_t oy = 0; oy < OH; ++oy) {
    for (std::size_t ox = 0; ox < OW; ++ox) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t y = 2 * oy; y < std::min(H, 2 * oy + 2); ++y)
        for (std::size_t xx = 2 * ox; xx < std::min(W, 2 * ox + 2); ++xx) mx = std::max(mx, attn.data[y * W + xx]);
      T z = 0;
      for (std::size_t y = 2 * oy; y < std::min(H, 2 * oy + 2); ++y)
        for (std::size_t xx = 2 * ox; xx < std::min(W, 2 * ox + 2); ++xx) {
          auto& a = attn.data[y * W + xx];
          a = std::exp(a - mx);
          z += a;
        }
      for (std::size_t y = 2 * oy; y < std::min(H, 2 * oy + 2); ++y)
        for (std::size_t xx = 2 * ox; xx < std::min(W, 2 * ox + 2); ++xx) attn.data[y * W + xx] /= z;
    }
  }
  Tensor<T> out({C, OH, OW});
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t y = 0; y < H; ++y) {
      for (std::size_t xx = 0; xx < W; ++xx) {
        out.data[(c * OH + y / 2) * OW + xx / 2] += attn.data[y * W + xx] * vx.data[(c * H + y) * W + xx];
      }
    }
  }
  return t.record(std::move(out), {x, score_w, score_b},
                  [=, attn = std::move(attn)](Tape<T>& t, const Tensor<T>& g) {
    const auto& vx = t.value(x);
    const auto& vw = t.value(score_w);
    // da[y,x] = Σ_c g[c,Y,X]·x[c,y,x]
    Tensor<T> da({H, W});
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t xx = 0; xx < W; ++xx)
          da.data[y * W + xx] += g.data[(c * OH + y / 2) * OW + xx / 2] * vx.data[(c * H + y) * W + xx];
    // softmax backward within each window
    Tensor<T> ds({H, W});
    for (std::size_t oy = 0; oy < OH; ++oy) {
      for (std::size_t ox = 0; ox < OW; ++ox) {
        T dot = 0;
        for (std::size_t y = 2 * oy; y < std::min(H, 2 * oy + 2); ++y)
          for (std::size_t xx = 2 * ox; xx < std::min(W, 2 * ox + 2); ++xx)
            dot += attn.data[y * W + xx] * da.data[y * W + xx];
        for (std::size_t y = 2 * oy; y < std::min(H, 2 * oy + 2); ++y)
          for (std::size_t xx = 2 * ox; xx < std::min(W, 2 * ox + 2); ++xx)
            ds.data[y * W + xx] = attn.data[y * W + xx] * (da.data[y * W + xx] - dot);
      }
    }
    if (t.requires_grad(score_b)) {
      T s = 0;
      for (auto v : ds.data) s += v;
      t.grad(score_b)[0] += s;
    }
    if (t.requires_grad(score_w)) {
      auto& gw = t.grad(score_w);
      for (std::size_t c = 0; c < C; ++c) {
        T s = 0;
        for (std::size_t i = 0; i < H * W; ++i) s += ds.data[i] * vx.data[c * H * W + i];
        gw[c] += s;
      }
    }
    if (t.requires_grad(x)) {
      auto& gx = t.grad(x);
      for (std::size_t c = 0; c < C; ++c)
        for (std::size_t y = 0; y < H; ++y)
          for (std::size_t xx = 0; xx < W; ++xx) {
            const std::size_t i = y * W + xx;
            gx.data[c * H * W + i] += attn.data[i] * g.data[(c * OH + y / 2) * OW + xx / 2] + ds.data[i] * vw[c];
          }
    }
  });
}

// ---------------------------------------------------------------- layout

template <typename T>
Var concat_channels(Tape<T>& t, Var a, Var b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  detail::expect(va.rank() == 3 && vb.rank() == 3 && va.dim(1) == vb.dim(1) && va.dim(2) == vb.dim(2),
                 "concat_channels", vb.shape);
  const std::size_t na = va.size();
  Tensor<T> out({va.dim(0) + vb.dim(0), va.dim(1), va.dim(2)});
  std::copy(va.data.begin(), va.data.end(), out.data.begin());
  std::copy(vb.data.begin(), vb.data.end(), out.data.begin() + static_cast<std::ptrdiff_t>(na));
  return t.record(std::move(out), {a, b}, [a, b, na](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) {
      auto& ga = t.grad(a);
      for (std::size_t i = 0; i < na; ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      auto& gb = t.grad(b);
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] += g[na + i];
    }
  });
}

/// Tiles a D-vector over an H×W grid: D×H×W.
template <typename T>
Var broadcast_spatial(Tape<T>& t, Var v, std::size_t H, std::size_t W) {
  const auto& vv = t.value(v);
  const std::size_t D = vv.size();
  Tensor<T> out({D, H, W});
  for (std::size_t d = 0; d < D; ++d) std::fill_n(out.data.begin() + static_cast<std::ptrdiff_t>(d * H * W), H * W, vv[d]);
  return t.record(std::move(out), {v}, [v, D, H, W](Tape<T>& t, const Tensor<T>& g) {
    auto& gv = t.grad(v);
    for (std::size_t d = 0; d < D; ++d) {
      T s = 0;
      for (std::size_t i = 0; i < H * W; ++i) s += g[d * H * W + i];
      gv[d] += s;
    }
  });
}

/// C×H×W -> (H·W)×C, one token per spatial position (row-major).
template <typename T>
Var to_tokens(Tape<T>& t, Var x) {
  const auto& vx = t.value(x);
  detail::expect(vx.rank() == 3, "to_tokens", vx.shape);
  const std::size_t C = vx.dim(0), M = vx.dim(1) * vx.dim(2);
  Tensor<T> out({M, C});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t m = 0; m < M; ++m) out.data[m * C + c] = vx.data[c * M + m];
  return t.record(std::move(out), {x}, [x, C, M](Tape<T>& t, const Tensor<T>& g) {
    auto& gx = t.grad(x);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t m = 0; m < M; ++m) gx.data[c * M + m] += g.data[m * C + c];
  });
}

template <typename T>
Var from_tokens(Tape<T>& t, Var v, std::size_t H, std::size_t W) {
  const auto& vv = t.value(v);
  detail::expect(vv.rank() == 2 && vv.dim(0) == H * W, "from_tokens", vv.shape);
  const std::size_t C = vv.dim(1), M = H * W;
  Tensor<T> out({C, H, W});
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t m = 0; m < M; ++m) out.data[c * M + m] = vv.data[m * C + c];
  return t.record(std::move(out), {v}, [v, C, M](Tape<T>& t, const Tensor<T>& g) {
    auto& gv = t.grad(v);
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t m = 0; m < M; ++m) gv.data[m * C + c] += g.data[c * M + m];
  });
}

// ---------------------------------------------------------------- matrices

/// a: M×K, b: K×N.
template <typename T>
Var matmul(Tape<T>& t, Var a, Var b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  detail::expect(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(0), "matmul", vb.shape);
  const std::size_t M = va.dim(0), K = va.dim(1), N = vb.dim(1);
  Tensor<T> out({M, N});
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t k = 0; k < K; ++k) {
      const T av = va.data[i * K + k];
      for (std::size_t j = 0; j < N; ++j) out.data[i * N + j] += av * vb.data[k * N + j];
    }
  return t.record(std::move(out), {a, b}, [a, b, M, K, N](Tape<T>& t, const Tensor<T>& g) {
    const auto& va = t.value(a);
    const auto& vb = t.value(b);
    if (t.requires_grad(a)) {
      auto& ga = t.grad(a);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          T s = 0;
          for (std::size_t j = 0; j < N; ++j) s += g.data[i * N + j] * vb.data[k * N + j];
          ga.data[i * K + k] += s;
        }
    }
    if (t.requires_grad(b)) {
      auto& gb = t.grad(b);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t k = 0; k < K; ++k) {
          const T av = va.data[i * K + k];
          for (std::size_t j = 0; j < N; ++j) gb.data[k * N + j] += av * g.data[i * N + j];
        }
    }
  });
}

/// a: M×K, b: N×K -> a·bᵀ (M×N).
template <typename T>
Var matmul_nt(Tape<T>& t, Var a, Var b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  detail::expect(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(1), "matmul_nt", vb.shape);
  const std::size_t M = va.dim(0), K = va.dim(1), N = vb.dim(0);
  Tensor<T> out({M, N});
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) {
      T s = 0;
      for (std::size_t k = 0; k < K; ++k) s += va.data[i * K + k] * vb.data[j * K + k];
      out.data[i * N + j] = s;
    }
  return t.record(std::move(out), {a, b}, [a, b, M, K, N](Tape<T>& t, const Tensor<T>& g) {
    const auto& va = t.value(a);
    const auto& vb = t.value(b);
    Tensor<T>* ga = t.requires_grad(a) ? &t.grad(a) : nullptr;
    Tensor<T>* gb = t.requires_grad(b) ? &t.grad(b) : nullptr;
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < N; ++j) {
        const T gv = g.data[i * N + j];
        for (std::size_t k = 0; k < K; ++k) {
          if (ga) ga->data[i * K + k] += gv * vb.data[j * K + k];
          if (gb) gb->data[j * K + k] += gv * va.data[i * K + k];
        }
      }
  });
}

/// a: M×N plus a broadcast row bias b: N.
template <typename T>
Var add_row_bias(Tape<T>& t, Var a, Var b) {
  const auto& va = t.value(a);
  const auto& vb = t.value(b);
  detail::expect(va.rank() == 2 && vb.size() == va.dim(1), "add_row_bias", vb.shape);
  const std::size_t M = va.dim(0), N = va.dim(1);
  Tensor<T> out = va;
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < N; ++j) out.data[i * N + j] += vb[j];
  return t.record(std::move(out), {a, b}, [a, b, M, N](Tape<T>& t, const Tensor<T>& g) {
    if (t.requires_grad(a)) detail::add_into(t.grad(a), g);
    if (t.requires_grad(b)) {
      auto& gb = t.grad(b);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) gb[j] += g.data[i * N + j];
    }
  });
}

template <typename T>
Var softmax_rows(Tape<T>& t, Var a) {
  const auto& va = t.value(a);
  detail::expect(va.rank() == 2, "softmax_rows", va.shape);
  const std::size_t M = va.dim(0), N = va.dim(1);
  Tensor<T> out = va;
  for (std::size_t i = 0; i < M; ++i) {
    T* r = &out.data[i * N];
    const T mx = *std::max_element(r, r + N);
    T z = 0;
    for (std::size_t j = 0; j < N; ++j) z += (r[j] = std::exp(r[j] - mx));
    for (std::size_t j = 0; j < N; ++j) r[j] /= z;
  }
  Tensor<T> probs = out;
  return t.record(std::move(out), {a}, [a, M, N, probs = std::move(probs)](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < M; ++i) {
      const T* p = &probs.data[i * N];
      const T* gr = &g.data[i * N];
      T dot = 0;
      for (std::size_t j = 0; j < N; ++j) dot += p[j] * gr[j];
      for (std::size_t j = 0; j < N; ++j) ga.data[i * N + j] += p[j] * (gr[j] - dot);
    }
  });
}

/// Row-wise layer normalization with gain and bias (both N).
template <typename T>
Var layer_norm_rows(Tape<T>& t, Var a, Var gain, Var bias, T eps = T(1e-5)) {
  const auto& va = t.value(a);
  const auto& vg = t.value(gain);
  const auto& vb = t.value(bias);
  detail::expect(va.rank() == 2 && vg.size() == va.dim(1) && vb.size() == va.dim(1), "layer_norm", va.shape);
  const std::size_t M = va.dim(0), N = va.dim(1);
  Tensor<T> xhat({M, N});
  std::vector<T> inv_std(M);
  Tensor<T> out({M, N});
  for (std::size_t i = 0; i < M; ++i) {
    const T* r = &va.data[i * N];
    T mean = 0;
    for (std::size_t j = 0; j < N; ++j) mean += r[j];
    mean /= static_cast<T>(N);
    T var = 0;
    for (std::size_t j = 0; j < N; ++j) var += (r[j] - mean) * (r[j] - mean);
    var /= static_cast<T>(N);
    inv_std[i] = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < N; ++j) {
      xhat.data[i * N + j] = (r[j] - mean) * inv_std[i];
      out.data[i * N + j] = xhat.data[i * N + j] * vg[j] + vb[j];
    }
  }
  return t.record(std::move(out), {a, gain, bias},
                  [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, const Tensor<T>& g) {
    const auto& vg = t.value(gain);
    if (t.requires_grad(gain)) {
      auto& gg = t.grad(gain);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) gg[j] += g.data[i * N + j] * xhat.data[i * N + j];
    }
    if (t.requires_grad(bias)) {
      auto& gb = t.grad(bias);
      for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) gb[j] += g.data[i * N + j];
    }
    if (t.requires_grad(a)) {
      auto& ga = t.grad(a);
      for (std::size_t i = 0; i < M; ++i) {
        T m1 = 0, m2 = 0;
        for (std::size_t j = 0; j < N; ++j) {
          const T dx = g.data[i * N + j] * vg[j];
          m1 += dx;
          m2 += dx * xhat.data[i * N + j];
        }
        m1 /= static_cast<T>(N);
        m2 /= static_cast<T>(N);
        for (std::size_t j = 0; j < N; ++j) {
          const T dx = g.data[i * N + j] * vg[j];
          ga.data[i * N + j] += inv_std[i] * (dx - m1 - xhat.data[i * N + j] * m2);
        }
      }
    }
  });
}

template <typename T>
Var slice_cols(Tape<T>& t, Var a, std::size_t begin, std::size_t count) {
  const auto& va = t.value(a);
  detail::expect(va.rank() == 2 && begin + count <= va.dim(1), "slice_cols", va.shape);
  const std::size_t M = va.dim(0), N = va.dim(1);
  Tensor<T> out({M, count});
  for (std::size_t i = 0; i < M; ++i)
    for (std::size_t j = 0; j < count; ++j) out.data[i * count + j] = va.data[i * N + begin + j];
  return t.record(std::move(out), {a}, [a, M, N, begin, count](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < count; ++j) ga.data[i * N + begin + j] += g.data[i * count + j];
  });
}

template <typename T>
Var slice_rows(Tape<T>& t, Var a, std::size_t begin, std::size_t count) {
  const auto& va = t.value(a);
  detail::expect(va.rank() == 2 && begin + count <= va.dim(0), "slice_rows", va.shape);
  const std::size_t N = va.dim(1);
  Tensor<T> out({count, N});
  std::copy_n(va.data.begin() + static_cast<std::ptrdiff_t>(begin * N), count * N, out.data.begin());
  return t.record(std::move(out), {a}, [a, N, begin, count](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (std::size_t i = 0; i < count * N; ++i) ga.data[begin * N + i] += g.data[i];
  });
}

template <typename T>
Var concat_cols(Tape<T>& t, const std::vector<Var>& parts) {
  detail::expect(!parts.empty(), "concat_cols", {});
  const std::size_t M = t.value(parts[0]).dim(0);
  std::vector<std::size_t> widths;
  std::size_t N = 0;
  for (auto p : parts) {
    const auto& v = t.value(p);
    detail::expect(v.rank() == 2 && v.dim(0) == M, "concat_cols", v.shape);
    widths.push_back(v.dim(1));
    N += v.dim(1);
  }
  Tensor<T> out({M, N});
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto& v = t.value(parts[k]);
    for (std::size_t i = 0; i < M; ++i)
      for (std::size_t j = 0; j < widths[k]; ++j) out.data[i * N + off + j] = v.data[i * widths[k] + j];
    off += widths[k];
  }
  return t.record(std::move(out), parts, [parts, widths, M, N](Tape<T>& t, const Tensor<T>& g) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      if (t.requires_grad(parts[k])) {
        auto& gp = t.grad(parts[k]);
        for (std::size_t i = 0; i < M; ++i)
          for (std::size_t j = 0; j < widths[k]; ++j) gp.data[i * widths[k] + j] += g.data[i * N + off + j];
      }
      off += widths[k];
    }
  });
}

/// Rows of `table` (V×D) picked by `ids` -> L×D.
template <typename T>
Var gather_rows(Tape<T>& t, Var table, std::vector<std::size_t> ids) {
  const auto& vt = t.value(table);
  detail::expect(vt.rank() == 2, "gather_rows", vt.shape);
  const std::size_t V = vt.dim(0), D = vt.dim(1);
  Tensor<T> out({ids.size(), D});
  for (std::size_t i = 0; i < ids.size(); ++i) {
    detail::expect(ids[i] < V, "gather_rows id", vt.shape);
    std::copy_n(vt.data.begin() + static_cast<std::ptrdiff_t>(ids[i] * D), D,
                out.data.begin() + static_cast<std::ptrdiff_t>(i * D));
  }
  return t.record(std::move(out), {table}, [table, D, ids = std::move(ids)](Tape<T>& t, const Tensor<T>& g) {
    auto& gt = t.grad(table);
    for (std::size_t i = 0; i < ids.size(); ++i)
      for (std::size_t d = 0; d < D; ++d) gt.data[ids[i] * D + d] += g.data[i * D + d];
  });
}

/// Row `i` of an M×N matrix as an N-vector.
template <typename T>
Var select_row(Tape<T>& t, Var a, std::size_t i) {
  const auto& va = t.value(a);
  detail::expect(va.rank() == 2 && i < va.dim(0), "select_row", va.shape);
  const std::size_t N = va.dim(1);
  Tensor<T> out({N});
  std::copy_n(va.data.begin() + static_cast<std::ptrdiff_t>(i * N), N, out.data.begin());
  return t.record(std::move(out), {a}, [a, i, N](Tape<T>& t, const Tensor<T>& g) {
    auto& ga = t.grad(a);
    for (std::size_t j = 0; j < N; ++j) ga.data[i * N + j] += g.data[j];
  });
}

}  // namespace tisal::nn::ops
