#pragma once

#include <optional>
#include <string_view>
#include <vector>

#include "tisal/fixproc.hpp"
#include "tisal/model/fusion.hpp"
#include "tisal/model/image_encoder.hpp"
#include "tisal/model/text_encoder.hpp"

namespace tisal::model {

/// Image encoder, text encoder, GTFF, decoder levels (LTFF at the configured
/// levels, HFR elsewhere) and a 1-channel sigmoid head.
template <typename T = double>
class TgsalModel {
 public:
  struct Forward {
    ImageFeaturePyramid pyramid;
    std::optional<typename TextEncoder<T>::Output> text;
    nn::Var global;               // GTFF output
    std::vector<nn::Var> levels;  // decoder level outputs
    nn::Var logits;               // 1×S×S
    nn::Var map;                  // sigmoid(logits)
  };

  explicit TgsalModel(ModelConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    SplitMix64 rng(cfg_.init_seed);
    auto image_rng = rng.fork();
    auto text_rng = rng.fork();
    auto decoder_rng = rng.fork();
    image_ = ImageEncoder<T>(store_, cfg_, image_rng);
    text_ = TextEncoder<T>(store_, cfg_, text_rng);
    gtff_ = Gtff<T>(store_, cfg_, decoder_rng);
    const std::size_t n = cfg_.levels();
    std::size_t in = cfg_.decoder_widths[0];
    for (std::size_t k = 0; k + 1 < n; ++k) {
      const std::size_t skip = cfg_.encoder_widths[n - 2 - k];
      decoder_.emplace_back(store_, cfg_, k, in, skip, decoder_rng);
      in = cfg_.decoder_widths[k];
    }
    head_ = nn::Conv2d<T>(store_, "head.conv", "decoder", in, 1, 3, 1, decoder_rng);
    if (cfg_.freeze_encoders) {
      store_.set_trainable_group("image_encoder", false);
      store_.set_trainable_group("text_encoder", false);
    }
  }

  TgsalModel(const TgsalModel&) = delete;
  TgsalModel& operator=(const TgsalModel&) = delete;
  TgsalModel(TgsalModel&&) noexcept = default;
  TgsalModel& operator=(TgsalModel&&) noexcept = default;

  /// Deep copy with identical parameter values and trainable flags.
  TgsalModel clone() const {
    TgsalModel c(cfg_);
    for (std::size_t i = 0; i < store_.size(); ++i) {
      c.store_[i].value = store_[i].value;
      c.store_[i].trainable = store_[i].trainable;
    }
    return c;
  }

  const ModelConfig& config() const { return cfg_; }
  nn::ParamStore<T>& params() { return store_; }
  const nn::ParamStore<T>& params() const { return store_; }
  std::vector<DecoderLevel<T>>& decoder() { return decoder_; }

  TokenSequence tokenize(std::string_view text) const { return text_.tokenize(text); }
  nn::Tensor<T> preprocess(const RgbImage& img) const { return preprocess_image<T>(img, cfg_.input_size); }

  ImageFeaturePyramid encode_image(nn::Tape<T>& t, nn::Var x) const { return image_(t, x); }
  typename TextEncoder<T>::Output encode_text(nn::Tape<T>& t, const TokenSequence& seq) const {
    return text_(t, seq);
  }

  TextFeatures<T> encode_text(std::string_view text) const {
    nn::Tape<T> t(false);
    const auto out = text_(t, tokenize(text));
    return {t.value(out.global), t.value(out.local), out.is_null};
  }

  Forward forward(nn::Tape<T>& t, nn::Var input, const TokenSequence& seq) const {
    Forward f;
    f.pyramid = image_(t, input);
    if (cfg_.uses_text()) f.text = text_(t, seq);
    const std::size_t n = cfg_.levels();
    auto size_of = [&](nn::Var v) { return std::pair{t.shape(v)[1], t.shape(v)[2]}; };
    // level k consumes I_{n-1-k} and upsamples to the next skip (the stem at the last level)
    auto target_for = [&](std::size_t k) {
      return k + 2 < n ? size_of(f.pyramid.levels[n - 3 - k]) : size_of(f.pyramid.stem);
    };
    std::optional<nn::Var> t_global, t_local;
    if (f.text) {
      t_global = f.text->global;
      t_local = f.text->local;
    }
    const auto [gh, gw] = size_of(f.pyramid.levels[n - 2]);
    f.global = gtff_(t, f.pyramid.bottleneck, cfg_.global_fusion ? t_global : std::nullopt, gh, gw);
    nn::Var x = f.global;
    for (std::size_t k = 0; k < decoder_.size(); ++k) {
      const auto [oh, ow] = target_for(k);
      x = decoder_[k](t, x, f.pyramid.levels[n - 2 - k], cfg_.local_fusion ? t_local : std::nullopt, oh, ow);
      f.levels.push_back(x);
    }
    f.logits = nn::ops::resize_bilinear(t, head_(t, x), cfg_.input_size, cfg_.input_size);
    f.map = nn::ops::sigmoid(t, f.logits);
    return f;
  }

  Forward forward(nn::Tape<T>& t, const nn::Tensor<T>& input, const TokenSequence& seq) const {
    return forward(t, t.input(input, false), seq);
  }

  /// Model-resolution map (S×S) as values.
  nn::Tensor<T> predict_raw(const nn::Tensor<T>& input, const TokenSequence& seq) const {
    nn::Tape<T> t(false);
    const auto f = forward(t, input, seq);
    return t.value(f.map);
  }

  /// Saliency map at the original image size, values in (0, 1).
  SaliencyMap predict(const RgbImage& img, std::string_view text) const {
    const auto raw = predict_raw(preprocess(img), tokenize(text));
    const std::size_t S = cfg_.input_size;
    Grid<double> g(S, S);
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(raw[i]);
    return {resize_bilinear(g, img.width, img.height)};
  }

 private:
  ModelConfig cfg_;
  nn::ParamStore<T> store_;
  ImageEncoder<T> image_;
  TextEncoder<T> text_;
  Gtff<T> gtff_;
  std::vector<DecoderLevel<T>> decoder_;
  nn::Conv2d<T> head_;
};

}  // namespace tisal::model
