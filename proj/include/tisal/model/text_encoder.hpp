#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "tisal/model/config.hpp"
#include "tisal/nn/layers.hpp"

namespace tisal::model {

inline constexpr std::size_t kNullToken = 0;
inline constexpr std::size_t kStartToken = 1;
inline constexpr std::size_t kEndToken = 2;
inline constexpr std::size_t kFirstWordToken = 3;

struct TokenSequence {
  std::vector<std::size_t> ids;
  bool is_null = false;

  std::size_t length() const { return ids.size(); }
  bool operator==(const TokenSequence&) const = default;
};

inline std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (unsigned char ch : text) {
    if (std::isalnum(ch) || ch >= 0x80) {
      cur.push_back(static_cast<char>(std::tolower(ch)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

/// Hashing tokenizer: [start, words..., end], truncated so the sequence
/// never exceeds `max_tokens`. Text without words maps to the single null
/// token.
inline TokenSequence tokenize(std::string_view text, std::size_t vocab, std::size_t max_tokens) {
  const auto words = split_words(text);
  TokenSequence seq;
  if (words.empty()) {
    seq.ids = {kNullToken};
    seq.is_null = true;
    return seq;
  }
  seq.ids.push_back(kStartToken);
  for (const auto& w : words) {
    if (seq.ids.size() + 1 >= max_tokens) break;
    seq.ids.push_back(kFirstWordToken + fnv1a(w) % (vocab - kFirstWordToken));
  }
  seq.ids.push_back(kEndToken);
  return seq;
}

/// Text features as plain values (for inspection and tests).
template <typename T>
struct TextFeatures {
  nn::Tensor<T> global;  // d_t
  nn::Tensor<T> local;   // L×d_t
  bool is_null = false;
};

/// Toy pre-norm transformer text tower. The global feature is a projection
/// of the end token's output; the local features are all token outputs.
/// Empty text bypasses the tower and uses a learned null embedding, which
/// stays trainable when the encoder is frozen.
template <typename T>
class TextEncoder {
 public:
  struct Output {
    nn::Var global;  // d_t
    nn::Var local;   // L×d_t
    bool is_null = false;
  };

  TextEncoder() = default;
  TextEncoder(nn::ParamStore<T>& store, const ModelConfig& cfg, SplitMix64& rng)
      : dim_(cfg.text_embed_dim), vocab_(cfg.text_vocab), max_tokens_(cfg.max_tokens) {
    const std::string g = "text_encoder";
    token_embedding_ = &store.add("text.token_embedding", {cfg.text_vocab, dim_}, g);
    position_embedding_ = &store.add("text.position_embedding", {cfg.max_tokens, dim_}, g);
    for (auto& v : token_embedding_->value.data) v = static_cast<T>(rng.uniform(-1.0, 1.0));
    for (auto& v : position_embedding_->value.data) v = static_cast<T>(rng.uniform(-0.1, 0.1));
    for (std::size_t l = 0; l < cfg.text_layers; ++l) {
      const std::string p = "text.layer" + std::to_string(l);
      Layer layer;
      layer.ln1 = nn::LayerNorm<T>(store, p + ".ln1", g, dim_);
      layer.attn = nn::MultiHeadAttention<T>(store, p + ".attn", g, dim_, dim_, cfg.text_heads, rng);
      layer.ln2 = nn::LayerNorm<T>(store, p + ".ln2", g, dim_);
      layer.fc1 = nn::Linear<T>(store, p + ".fc1", g, dim_, cfg.text_mlp_width, rng, std::sqrt(2.0));
      layer.fc2 = nn::Linear<T>(store, p + ".fc2", g, cfg.text_mlp_width, dim_, rng);
      layers_.push_back(layer);
    }
    final_ln_ = nn::LayerNorm<T>(store, "text.final_ln", g, dim_);
    projection_ = nn::Linear<T>(store, "text.projection", g, dim_, dim_, rng);
    null_global_ = &store.add("text.null_global", {dim_}, "null_text");
    null_local_ = &store.add("text.null_local", {1, dim_}, "null_text");
    for (auto& v : null_global_->value.data) v = static_cast<T>(rng.uniform(-0.1, 0.1));
    for (auto& v : null_local_->value.data) v = static_cast<T>(rng.uniform(-0.1, 0.1));
  }

  std::size_t dim() const { return dim_; }

  TokenSequence tokenize(std::string_view text) const {
    return model::tokenize(text, vocab_, max_tokens_);
  }

  Output operator()(nn::Tape<T>& t, const TokenSequence& seq) const {
    if (seq.is_null) return {t.param(*null_global_), t.param(*null_local_), true};
    const std::size_t L = seq.length();
    nn::Var x = nn::ops::add(t, nn::ops::gather_rows(t, t.param(*token_embedding_), seq.ids),
                             nn::ops::slice_rows(t, t.param(*position_embedding_), 0, L));
    for (const auto& layer : layers_) {
      const nn::Var h = layer.ln1(t, x);
      x = nn::ops::add(t, x, layer.attn(t, h, h).output);
      const nn::Var m = layer.fc2(t, nn::ops::relu(t, layer.fc1(t, layer.ln2(t, x))));
      x = nn::ops::add(t, x, m);
    }
    const nn::Var local = final_ln_(t, x);
    const nn::Var last = nn::ops::reshape(t, nn::ops::select_row(t, local, L - 1), {1, dim_});
    const nn::Var global = nn::ops::reshape(t, projection_(t, last), {dim_});
    return {global, local, false};
  }

 private:
  struct Layer {
    nn::LayerNorm<T> ln1, ln2;
    nn::MultiHeadAttention<T> attn;
    nn::Linear<T> fc1, fc2;
  };

  std::size_t dim_ = 0, vocab_ = 0, max_tokens_ = 77;
  nn::Parameter<T>* token_embedding_ = nullptr;
  nn::Parameter<T>* position_embedding_ = nullptr;
  std::vector<Layer> layers_;
  nn::LayerNorm<T> final_ln_;
  nn::Linear<T> projection_;
  nn::Parameter<T>* null_global_ = nullptr;
  nn::Parameter<T>* null_local_ = nullptr;
};

}  // namespace tisal::model
