#pragma once

#include <string>
#include <vector>

#include "tisal/grid.hpp"
#include "tisal/model/config.hpp"
#include "tisal/nn/layers.hpp"

namespace tisal::model {

inline constexpr double kPixelMean = 0.5;
inline constexpr double kPixelStd = 0.25;

/// Resizes to size×size and standardizes: a 3×size×size tensor.
template <typename T>
nn::Tensor<T> preprocess_image(const RgbImage& img, std::size_t size) {
  if (img.width == 0 || img.height == 0) throw Error(ErrorKind::BadShape, "image", "empty image");
  const auto planar = resize_rgb_planar(img, size, size);
  nn::Tensor<T> out({3, size, size});
  for (std::size_t i = 0; i < planar.size(); ++i) {
    out[i] = static_cast<T>((planar[i] / 255.0 - kPixelMean) / kPixelStd);
  }
  return out;
}

/// I_1..I_n plus the bottleneck. `stem` is the half-resolution stem output,
/// used as the skip for the last decoder level.
struct ImageFeaturePyramid {
  nn::Var stem;
  std::vector<nn::Var> levels;
  nn::Var bottleneck;
};

/// Small hierarchical CNN. Every level halves the spatial size with a
/// stride-2 conv, except the last, which halves by attention pooling and
/// then applies a stride-1 conv.
template <typename T>
class ImageEncoder {
 public:
  ImageEncoder() = default;
  ImageEncoder(nn::ParamStore<T>& store, const ModelConfig& cfg, SplitMix64& rng)
      : input_size_(cfg.input_size) {
    const std::string g = "image_encoder";
    stem_ = nn::Conv2d<T>(store, "image.stem", g, 3, cfg.stem_width, 3, 2, rng);
    std::size_t in = cfg.stem_width;
    const std::size_t n = cfg.levels();
    for (std::size_t i = 0; i < n; ++i) {
      const bool last = i + 1 == n;
      const std::string p = "image.level" + std::to_string(i + 1);
      if (last) {
        pool_w_ = &store.add("image.attention_pool.weight", {in}, g);
        pool_b_ = &store.add("image.attention_pool.bias", {1}, g);
        nn::init_uniform(pool_w_->value, in, rng, 0.5);
      }
      levels_.push_back(nn::Conv2d<T>(store, p, g, in, cfg.encoder_widths[i], 3, last ? 1 : 2, rng));
      in = cfg.encoder_widths[i];
    }
    bottleneck_ = nn::Conv2d<T>(store, "image.bottleneck", g, in, cfg.bottleneck_width, 3, 1, rng);
  }

  ImageFeaturePyramid operator()(nn::Tape<T>& t, nn::Var x) const {
    const auto& s = t.shape(x);
    if (s.size() != 3 || s[0] != 3 || s[1] != input_size_ || s[2] != input_size_) {
      throw Error(ErrorKind::BadShape, "encode_image", nn::shape_string(s));
    }
    ImageFeaturePyramid f;
    f.stem = nn::ops::relu(t, stem_(t, x));
    nn::Var h = f.stem;
    for (std::size_t i = 0; i < levels_.size(); ++i) {
      if (i + 1 == levels_.size()) h = nn::ops::attention_pool2x2(t, h, t.param(*pool_w_), t.param(*pool_b_));
      h = nn::ops::relu(t, levels_[i](t, h));
      f.levels.push_back(h);
    }
    f.bottleneck = nn::ops::relu(t, bottleneck_(t, h));
    return f;
  }

 private:
  std::size_t input_size_ = 0;
  nn::Conv2d<T> stem_;
  std::vector<nn::Conv2d<T>> levels_;
  nn::Parameter<T>* pool_w_ = nullptr;
  nn::Parameter<T>* pool_b_ = nullptr;
  nn::Conv2d<T> bottleneck_;
};

}  // namespace tisal::model
