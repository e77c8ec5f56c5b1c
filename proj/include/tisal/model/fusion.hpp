#pragma once

#include <optional>
#include <string>
#include <vector>

#include "tisal/model/config.hpp"
#include "tisal/nn/layers.hpp"

namespace tisal::model {

/// v = v + SelfAttn(LN(v)); v = v + CrossAttn(LN(v), T_local).
/// v holds one token per spatial position (M×C).
template <typename T>
class FusionAttention {
 public:
  struct Result {
    nn::Var output;
    std::vector<nn::Var> self_weights;   // per head, M×M
    std::vector<nn::Var> cross_weights;  // per head, M×L
  };

  FusionAttention() = default;
  FusionAttention(nn::ParamStore<T>& store, const std::string& name, std::size_t width,
                  std::size_t text_dim, std::size_t heads, SplitMix64& rng)
      : ln_self_(store, name + ".ln_self", "decoder", width),
        self_(store, name + ".self", "decoder", width, width, heads, rng),
        ln_cross_(store, name + ".ln_cross", "decoder", width),
        cross_(store, name + ".cross", "decoder", width, text_dim, heads, rng) {}

  Result operator()(nn::Tape<T>& t, nn::Var v, nn::Var t_local) const {
    Result r;
    const nn::Var h = ln_self_(t, v);
    auto s = self_(t, h, h);
    v = nn::ops::add(t, v, s.output);
    auto c = cross_(t, ln_cross_(t, v), t_local);
    r.output = nn::ops::add(t, v, c.output);
    r.self_weights = std::move(s.weights);
    r.cross_weights = std::move(c.weights);
    return r;
  }

  void zero_output_projections() {
    self_.out.zero();
    cross_.out.zero();
  }

 private:
  nn::LayerNorm<T> ln_self_;
  nn::MultiHeadAttention<T> self_;
  nn::LayerNorm<T> ln_cross_;
  nn::MultiHeadAttention<T> cross_;
};

/// Global text fusion: concat(I_bottleneck, broadcast(T_global)), resized to
/// the next skip's size, then conv + ReLU.
template <typename T>
class Gtff {
 public:
  Gtff() = default;
  Gtff(nn::ParamStore<T>& store, const ModelConfig& cfg, SplitMix64& rng)
      : text_dim_(cfg.global_fusion ? cfg.text_embed_dim : 0) {
    conv_ = nn::Conv2d<T>(store, "gtff.conv", "decoder", cfg.bottleneck_width + text_dim_,
                          cfg.decoder_widths[0], 3, 1, rng);
  }

  bool uses_text() const { return text_dim_ > 0; }

  nn::Var operator()(nn::Tape<T>& t, nn::Var bottleneck, std::optional<nn::Var> t_global,
                     std::size_t out_h, std::size_t out_w) const {
    const auto& bs = t.shape(bottleneck);
    nn::Var x = bottleneck;
    if (uses_text()) {
      if (!t_global || t.shape(*t_global) != nn::Shape{text_dim_}) {
        throw Error(ErrorKind::DimMismatch, "gtff", "T_global must have the text embedding size");
      }
      x = nn::ops::concat_channels(t, x, nn::ops::broadcast_spatial(t, *t_global, bs[1], bs[2]));
    }
    x = nn::ops::resize_bilinear(t, x, out_h, out_w);
    return nn::ops::relu(t, conv_(t, x));
  }

 private:
  std::size_t text_dim_ = 0;
  nn::Conv2d<T> conv_;
};

/// One decoder level: conv block over concat(f_up, skip), optional fusion
/// attention (LTFF), then resize to the next level's size and conv.
/// Without attention the level is an HFR level.
template <typename T>
class DecoderLevel {
 public:
  DecoderLevel() = default;
  DecoderLevel(nn::ParamStore<T>& store, const ModelConfig& cfg, std::size_t level, std::size_t in,
               std::size_t skip, SplitMix64& rng)
      : block_(cfg.block), width_(cfg.decoder_widths[level]) {
    const std::string p = "decoder.level" + std::to_string(level);
    const std::string g = "decoder";
    const std::size_t cat = in + skip;
    const bool residual = block_ == DecoderBlock::Residual || block_ == DecoderBlock::ResidualDeconv;
    conv_in_ = nn::Conv2d<T>(store, p + ".conv_in", g, cat, width_, residual ? 1 : 3, 1, rng);
    if (residual) {
      res_a_ = nn::Conv2d<T>(store, p + ".res_a", g, width_, width_, 3, 1, rng);
      res_b_ = nn::Conv2d<T>(store, p + ".res_b", g, width_, width_, 3, 1, rng);
    }
    if (block_ == DecoderBlock::DoubleConv) {
      conv_mid_ = nn::Conv2d<T>(store, p + ".conv_mid", g, width_, width_, 3, 1, rng);
    }
    if (cfg.local_fusion && cfg.is_ltff(level)) {
      attention_.emplace(store, p + ".attention", width_, cfg.text_embed_dim, cfg.attention_heads, rng);
    }
    if (block_ == DecoderBlock::ResidualDeconv) {
      deconv_ = nn::ConvTranspose2x2<T>(store, p + ".deconv", g, width_, width_, rng);
    } else {
      conv_up_ = nn::Conv2d<T>(store, p + ".conv_up", g, width_, width_, 3, 1, rng);
    }
  }

  bool has_attention() const { return attention_.has_value(); }
  std::size_t width() const { return width_; }
  FusionAttention<T>* attention() { return attention_ ? &*attention_ : nullptr; }

  nn::Var operator()(nn::Tape<T>& t, nn::Var f_up, nn::Var skip, std::optional<nn::Var> t_local,
                     std::size_t out_h, std::size_t out_w) const {
    const auto& us = t.shape(f_up);
    const auto& ss = t.shape(skip);
    if (us.size() != 3 || ss.size() != 3 || us[1] != ss[1] || us[2] != ss[2]) {
      throw Error(ErrorKind::DimMismatch, "decoder level", nn::shape_string(us) + " vs " + nn::shape_string(ss));
    }
    const std::size_t H = us[1], W = us[2];
    nn::Var c = nn::ops::relu(t, conv_in_(t, nn::ops::concat_channels(t, f_up, skip)));
    if (res_a_.weight) {
      const nn::Var r = res_b_(t, nn::ops::relu(t, res_a_(t, c)));
      c = nn::ops::relu(t, nn::ops::add(t, c, r));
    }
    if (attention_) {
      if (!t_local) throw Error(ErrorKind::DimMismatch, "ltff", "T_local required");
      const auto r = (*attention_)(t, nn::ops::to_tokens(t, c), *t_local);
      c = nn::ops::from_tokens(t, r.output, H, W);
    }
    if (conv_mid_.weight) c = nn::ops::relu(t, conv_mid_(t, c));
    if (deconv_.weight) {
      c = nn::ops::relu(t, deconv_(t, c));
      if (t.shape(c)[1] != out_h || t.shape(c)[2] != out_w) c = nn::ops::resize_bilinear(t, c, out_h, out_w);
      return c;
    }
    return nn::ops::relu(t, conv_up_(t, nn::ops::resize_bilinear(t, c, out_h, out_w)));
  }

 private:
  DecoderBlock block_ = DecoderBlock::Plain;
  std::size_t width_ = 0;
  nn::Conv2d<T> conv_in_, res_a_, res_b_, conv_mid_, conv_up_;
  nn::ConvTranspose2x2<T> deconv_;
  std::optional<FusionAttention<T>> attention_;
};

}  // namespace tisal::model
