#pragma once

#include <algorithm>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "tisal/error.hpp"

namespace tisal::model {

/// Decoder-level block structure. `Plain` is the default layout; the
/// others are the fusion-structure ablation variants.
enum class DecoderBlock { Plain, Residual, ResidualDeconv, DoubleConv };

inline const char* to_string(DecoderBlock b) {
  switch (b) {
    case DecoderBlock::Plain: return "plain";
    case DecoderBlock::Residual: return "residual";
    case DecoderBlock::ResidualDeconv: return "residual_deconv";
    case DecoderBlock::DoubleConv: return "double_conv";
  }
  return "plain";
}

inline DecoderBlock parse_block(const std::string& s) {
  for (auto b : {DecoderBlock::Plain, DecoderBlock::Residual, DecoderBlock::ResidualDeconv,
                 DecoderBlock::DoubleConv}) {
    if (s == to_string(b)) return b;
  }
  throw Error(ErrorKind::SchemaViolation, "model.block", s);
}

struct ModelConfig {
  std::size_t input_size = 64;
  std::size_t stem_width = 8;
  std::vector<std::size_t> encoder_widths = {8, 16, 16, 32};  // I_1..I_n
  std::size_t bottleneck_width = 32;
  std::vector<std::size_t> decoder_widths = {16, 16, 8};  // one per decoder level (n-1)
  std::size_t attention_heads = 8;
  std::vector<std::size_t> ltff_levels = {0, 1};  // decoder levels with text attention, 0 = lowest resolution

  std::size_t text_embed_dim = 32;
  std::size_t text_vocab = 4096;
  std::size_t text_layers = 2;
  std::size_t text_heads = 4;
  std::size_t text_mlp_width = 64;
  std::size_t max_tokens = 77;

  bool global_fusion = true;  // GTFF text concatenation
  bool local_fusion = true;   // LTFF attention
  DecoderBlock block = DecoderBlock::Plain;
  bool freeze_encoders = false;
  std::uint64_t init_seed = 0;

  std::size_t levels() const { return encoder_widths.size(); }
  bool uses_text() const { return global_fusion || local_fusion; }
  bool is_ltff(std::size_t decoder_level) const {
    return std::find(ltff_levels.begin(), ltff_levels.end(), decoder_level) != ltff_levels.end();
  }

  /// Small CNN + toy text transformer sized for CPU tests.
  static ModelConfig desk() { return {}; }

  /// Widths shaped like a ResNet-50 IFE and a CLIP text tower (512-d,
  /// 77 tokens); far too slow for the test suite, provided for users who
  /// load their own weights.
  static ModelConfig production() {
    ModelConfig c;
    c.input_size = 224;
    c.stem_width = 64;
    c.encoder_widths = {256, 512, 1024, 2048};
    c.bottleneck_width = 2048;
    c.decoder_widths = {512, 256, 128};
    c.attention_heads = 8;
    c.text_embed_dim = 512;
    c.text_vocab = 49408;
    c.text_layers = 12;
    c.text_heads = 8;
    c.text_mlp_width = 2048;
    c.freeze_encoders = true;
    return c;
  }

  void validate() const {
    if (levels() < 2) throw Error(ErrorKind::BadShape, "model.encoder_widths", "need at least 2 levels");
    if (decoder_widths.size() != levels() - 1) {
      throw Error(ErrorKind::BadShape, "model.decoder_widths", "need one width per decoder level (levels - 1)");
    }
    if (input_size < 8) throw Error(ErrorKind::BadShape, "model.input_size");
    if (attention_heads != 2 && attention_heads != 4 && attention_heads != 8) {
      throw Error(ErrorKind::BadShape, "model.attention_heads", "must be 2, 4 or 8");
    }
    for (auto lvl : ltff_levels) {
      if (lvl + 1 >= decoder_widths.size()) {
        throw Error(ErrorKind::BadShape, "model.ltff_levels", "the final decoder level must use HFR");
      }
      if (decoder_widths[lvl] % attention_heads != 0) {
        throw Error(ErrorKind::DimMismatch, "model.attention_heads", "heads must divide the LTFF width");
      }
    }
    if (text_embed_dim == 0 || text_heads == 0 || text_embed_dim % text_heads != 0) {
      throw Error(ErrorKind::DimMismatch, "model.text_heads");
    }
    if (max_tokens < 3 || max_tokens > 77) throw Error(ErrorKind::BadShape, "model.max_tokens", "must lie in [3, 77]");
    if (text_vocab < 16) throw Error(ErrorKind::BadShape, "model.text_vocab");
  }
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {
      {"input_size", c.input_size},
      {"stem_width", c.stem_width},
      {"encoder_widths", c.encoder_widths},
      {"bottleneck_width", c.bottleneck_width},
      {"decoder_widths", c.decoder_widths},
      {"attention_heads", c.attention_heads},
      {"ltff_levels", c.ltff_levels},
      {"text_embed_dim", c.text_embed_dim},
      {"text_vocab", c.text_vocab},
      {"text_layers", c.text_layers},
      {"text_heads", c.text_heads},
      {"text_mlp_width", c.text_mlp_width},
      {"max_tokens", c.max_tokens},
      {"global_fusion", c.global_fusion},
      {"local_fusion", c.local_fusion},
      {"block", to_string(c.block)},
      {"freeze_encoders", c.freeze_encoders},
      {"init_seed", c.init_seed},
  };
}

/// Reads the fields present in `j` over the defaults in `base`.
inline ModelConfig model_config_from_json(const nlohmann::json& j, ModelConfig base = {}) {
  if (!j.is_object()) throw Error(ErrorKind::SchemaViolation, "model", "expected an object");
  try {
    for (const auto& [k, v] : j.items()) {
      if (k == "input_size") base.input_size = v.get<std::size_t>();
      else if (k == "stem_width") base.stem_width = v.get<std::size_t>();
      else if (k == "encoder_widths") base.encoder_widths = v.get<std::vector<std::size_t>>();
      else if (k == "bottleneck_width") base.bottleneck_width = v.get<std::size_t>();
      else if (k == "decoder_widths") base.decoder_widths = v.get<std::vector<std::size_t>>();
      else if (k == "attention_heads") base.attention_heads = v.get<std::size_t>();
      else if (k == "ltff_levels") base.ltff_levels = v.get<std::vector<std::size_t>>();
      else if (k == "text_embed_dim") base.text_embed_dim = v.get<std::size_t>();
      else if (k == "text_vocab") base.text_vocab = v.get<std::size_t>();
      else if (k == "text_layers") base.text_layers = v.get<std::size_t>();
      else if (k == "text_heads") base.text_heads = v.get<std::size_t>();
      else if (k == "text_mlp_width") base.text_mlp_width = v.get<std::size_t>();
      else if (k == "max_tokens") base.max_tokens = v.get<std::size_t>();
      else if (k == "global_fusion") base.global_fusion = v.get<bool>();
      else if (k == "local_fusion") base.local_fusion = v.get<bool>();
      else if (k == "block") base.block = parse_block(v.get<std::string>());
      else if (k == "freeze_encoders") base.freeze_encoders = v.get<bool>();
      else if (k == "init_seed") base.init_seed = v.get<std::uint64_t>();
      else throw Error(ErrorKind::SchemaViolation, "model." + k, "unknown field");
    }
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::SchemaViolation, "model", e.what());
  }
  base.validate();
  return base;
}

}  // namespace tisal::model
