#include <gtest/gtest.h>

#include <cmath>

#include "test_util.hpp"
#include "tisal/model/checkpoint.hpp"
#include "tisal/training/gradcheck.hpp"

using namespace tisal;
using namespace tisal::model;
using nn::Tape;
using nn::Tensor;
using nn::Var;

namespace {

ModelConfig small() { return training::gradcheck_config(); }

Tensor<double> random_tensor(nn::Shape s, SplitMix64& rng) {
  Tensor<double> t(std::move(s));
  for (auto& v : t.data) v = rng.uniform(-1, 1);
  return t;
}

RgbImage random_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  SplitMix64 rng(seed);
  RgbImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.index(256));
  return img;
}

using Size2 = std::pair<std::size_t, std::size_t>;

Size2 hw(const Tape<double>& t, Var v) { return {t.shape(v)[1], t.shape(v)[2]}; }

ErrorKind kind_of(auto&& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  ADD_FAILURE() << "no error thrown";
  return ErrorKind::InvalidArgument;
}

double mean_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double s = 0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s / a.size();
}

}  // namespace

TEST(Config, Validation) {
  EXPECT_NO_THROW(ModelConfig::desk().validate());
  EXPECT_NO_THROW(ModelConfig::production().validate());
  auto c = small();
  c.attention_heads = 3;
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::BadShape);
  c = small();
  c.ltff_levels = {2};
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::BadShape);
  c = small();
  c.decoder_widths = {8, 8};
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::BadShape);
  c = small();
  c.attention_heads = 8;  // width 8 is fine, try a width it does not divide
  c.decoder_widths = {12, 8, 4};
  EXPECT_EQ(kind_of([&] { c.validate(); }), ErrorKind::DimMismatch);
}

TEST(Config, JsonRoundTripAndUnknownFields) {
  auto c = small();
  c.block = DecoderBlock::ResidualDeconv;
  c.local_fusion = false;
  c.init_seed = 99;
  const auto back = model_config_from_json(nlohmann::json::parse(to_json(c).dump()));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(kind_of([] { model_config_from_json({{"colour", 1}}); }), ErrorKind::SchemaViolation);
  EXPECT_EQ(kind_of([] { model_config_from_json({{"block", "fancy"}}); }), ErrorKind::SchemaViolation);
}

TEST(Tokenizer, NullTruncationAndDeterminism) {
  const auto empty = tokenize("", 4096, 77);
  EXPECT_TRUE(empty.is_null);
  EXPECT_EQ(empty.length(), 1u);
  EXPECT_TRUE(tokenize("  ,. ", 4096, 77).is_null);
  std::string words;
  for (int i = 0; i < 100; ++i) words += "word" + std::to_string(i) + " ";
  const auto longseq = tokenize(words, 4096, 77);
  EXPECT_EQ(longseq.length(), 77u);
  EXPECT_EQ(longseq.ids.front(), kStartToken);
  EXPECT_EQ(longseq.ids.back(), kEndToken);
  const auto a = tokenize("A red Circle", 4096, 77);
  EXPECT_EQ(a, tokenize("a red circle", 4096, 77));
  EXPECT_EQ(a.length(), 5u);
  for (std::size_t i = 1; i + 1 < a.length(); ++i) {
    EXPECT_GE(a.ids[i], kFirstWordToken);
    EXPECT_LT(a.ids[i], 4096u);
  }
}

TEST(TextEncoder, FeaturesShapesAndNull) {
  TgsalModel<double> m(small());
  const auto f = m.encode_text("a large red circle stands out");
  EXPECT_FALSE(f.is_null);
  EXPECT_EQ(f.global.shape, (nn::Shape{8}));
  EXPECT_EQ(f.local.shape, (nn::Shape{m.tokenize("a large red circle stands out").length(), 8}));
  for (double v : f.local.data) EXPECT_TRUE(std::isfinite(v));
  const auto again = m.encode_text("a large red circle stands out");
  EXPECT_EQ(f.global, again.global);
  EXPECT_EQ(f.local, again.local);
  const auto n = m.encode_text("");
  EXPECT_TRUE(n.is_null);
  EXPECT_EQ(n.local.shape, (nn::Shape{1, 8}));
  EXPECT_EQ(n.global, m.params().find("text.null_global")->value);
}

TEST(ImageEncoder, PyramidSizesFor224) {
  ModelConfig c;
  c.input_size = 224;
  c.stem_width = 2;
  c.encoder_widths = {2, 2, 2, 2};
  c.bottleneck_width = 2;
  c.decoder_widths = {4, 4, 2};
  c.attention_heads = 2;
  c.text_embed_dim = 4;
  c.text_heads = 2;
  c.text_layers = 1;
  c.text_vocab = 32;
  TgsalModel<double> m(c);
  Tape<double> t(false);
  const auto x = m.preprocess(random_image(300, 200, 1));
  EXPECT_EQ(x.shape, (nn::Shape{3, 224, 224}));
  const auto p = m.encode_image(t, t.constant(x));
  ASSERT_EQ(p.levels.size(), 4u);
  const std::size_t expect[] = {56, 28, 14, 7};
  for (std::size_t i = 0; i < 4; ++i) EXPECT_EQ(hw(t, p.levels[i]), Size2(expect[i], expect[i]));
  EXPECT_EQ(hw(t, p.bottleneck), Size2(7, 7));
  const auto f = m.forward(t, x, m.tokenize("look for the small purple square"));
  EXPECT_EQ(hw(t, f.global), Size2(14, 14));
  EXPECT_EQ(hw(t, f.levels[0]), Size2(28, 28));
  EXPECT_EQ(hw(t, f.levels[1]), Size2(56, 56));
  EXPECT_EQ(hw(t, f.levels[2]), Size2(112, 112));
  EXPECT_EQ(t.shape(f.map), (nn::Shape{1, 224, 224}));
}

TEST(ImageEncoder, OddSizesUseCeilHalving) {
  auto c = small();
  c.input_size = 36;
  TgsalModel<double> m(c);
  Tape<double> t(false);
  const auto p = m.encode_image(t, t.constant(Tensor<double>({3, 36, 36})));
  std::size_t prev = t.shape(p.stem)[1];
  EXPECT_EQ(prev, 18u);
  for (auto lvl : p.levels) {
    EXPECT_EQ(t.shape(lvl)[1], (prev + 1) / 2);
    prev = t.shape(lvl)[1];
  }
}

TEST(ImageEncoder, DeterministicAndZeroInput) {
  TgsalModel<double> m(small());
  const auto img = random_image(40, 30, 2);
  Tape<double> t(false);
  const auto a = m.encode_image(t, t.constant(m.preprocess(img)));
  const auto b = m.encode_image(t, t.constant(m.preprocess(img)));
  for (std::size_t i = 0; i < a.levels.size(); ++i) EXPECT_EQ(t.value(a.levels[i]), t.value(b.levels[i]));
  // biases are zero-initialized, so a zero image stays on the bias pathway (all zeros)
  const auto z = m.encode_image(t, t.constant(Tensor<double>({3, 32, 32})));
  for (double v : t.value(z.bottleneck).data) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(kind_of([&] { m.encode_image(t, t.constant(Tensor<double>({3, 16, 16}))); }), ErrorKind::BadShape);
  EXPECT_EQ(kind_of([&] { m.preprocess(RgbImage()); }), ErrorKind::BadShape);
}

TEST(Gtff, UpsamplesAndDependsOnText) {
  SplitMix64 rng(3);
  const auto c = small();
  nn::ParamStore<double> store;
  Gtff<double> g(store, c, rng);
  for (std::size_t i = 0; i < store.size(); ++i)
    for (auto& v : store[i].value.data) v = rng.uniform(-0.5, 0.5);
  Tape<double> t(false);
  const Var bott = t.constant(random_tensor({8, 7, 7}, rng));
  const Var tg = t.constant(random_tensor({8}, rng));
  const Var out = g(t, bott, tg, 14, 14);
  EXPECT_EQ(t.shape(out), (nn::Shape{8, 14, 14}));
  const Var zero = g(t, bott, t.constant(Tensor<double>({8})), 14, 14);
  EXPECT_GT(mean_abs_diff(t.value(out), t.value(zero)), 1e-6);
  EXPECT_EQ(kind_of([&] { g(t, bott, t.constant(Tensor<double>({5})), 14, 14); }), ErrorKind::DimMismatch);
  // zero weights on the text slice remove the dependence
  auto& w = *store.find("gtff.conv.weight");
  for (std::size_t o = 0; o < 8; ++o)
    for (std::size_t ci = 8; ci < 16; ++ci)
      for (std::size_t k = 0; k < 9; ++k) w.value[(o * 16 + ci) * 9 + k] = 0.0;
  EXPECT_EQ(t.value(g(t, bott, tg, 14, 14)), t.value(g(t, bott, t.constant(Tensor<double>({8})), 14, 14)));
}

TEST(DecoderLevel, LtffShapesNullDeterminismAndTokenOrder) {
  SplitMix64 rng(4);
  const auto c = small();
  nn::ParamStore<double> store;
  DecoderLevel<double> lvl(store, c, 0, 8, 6, rng);
  ASSERT_TRUE(lvl.has_attention());
  for (std::size_t i = 0; i < store.size(); ++i)
    for (auto& v : store[i].value.data) v += rng.uniform(-0.2, 0.2);
  Tape<double> t(false);
  const Var up = t.constant(random_tensor({8, 14, 14}, rng)), skip = t.constant(random_tensor({6, 14, 14}, rng));
  const auto tokens = random_tensor({4, 8}, rng);
  const Var out = lvl(t, up, skip, t.constant(tokens), 28, 28);
  EXPECT_EQ(t.shape(out), (nn::Shape{8, 28, 28}));
  const Tensor<double> null_tok({1, 8}, 0.05);
  EXPECT_EQ(t.value(lvl(t, up, skip, t.constant(null_tok), 28, 28)), t.value(lvl(t, up, skip, t.constant(null_tok), 28, 28)));
  auto swapped = tokens;
  for (std::size_t j = 0; j < 8; ++j) std::swap(swapped[j], swapped[3 * 8 + j]);
  // attention alone is invariant to a joint key/value permutation
  EXPECT_LT(mean_abs_diff(t.value(out), t.value(lvl(t, up, skip, t.constant(swapped), 28, 28))), 1e-12);
  const Var bad = t.constant(random_tensor({6, 13, 14}, rng));
  EXPECT_EQ(kind_of([&] { lvl(t, up, bad, t.constant(tokens), 28, 28); }), ErrorKind::DimMismatch);
}

TEST(DecoderLevel, WordOrderReachesLtffThroughTextPositions) {
  TgsalModel<double> m(small());
  auto& lvl = m.decoder()[0];
  Tape<double> t(false);
  SplitMix64 rng(12);
  const Var up = t.constant(random_tensor({8, 4, 4}, rng)), skip = t.constant(random_tensor({6, 4, 4}, rng));
  const auto a = m.encode_text(t, m.tokenize("small purple square near the left edge"));
  const auto b = m.encode_text(t, m.tokenize("left edge near the small purple square"));
  EXPECT_GT(mean_abs_diff(t.value(lvl(t, up, skip, a.local, 8, 8)), t.value(lvl(t, up, skip, b.local, 8, 8))), 1e-9);
}

TEST(DecoderLevel, HfrHasNoTextPathway) {
  SplitMix64 rng(5);
  const auto c = small();
  nn::ParamStore<double> store;
  DecoderLevel<double> hfr(store, c, 2, 8, 4, rng);
  EXPECT_FALSE(hfr.has_attention());
  for (std::size_t i = 0; i < store.size(); ++i) {
    EXPECT_EQ(store[i].name.find("attention"), std::string::npos);
  }
  Tape<double> t(false);
  const Var up = t.constant(random_tensor({8, 28, 28}, rng)), skip = t.constant(random_tensor({4, 28, 28}, rng));
  const Var a = hfr(t, up, skip, t.constant(random_tensor({3, 8}, rng)), 56, 56);
  const Var b = hfr(t, up, skip, std::nullopt, 56, 56);
  EXPECT_EQ(t.shape(a), (nn::Shape{4, 56, 56}));
  EXPECT_EQ(t.value(a), t.value(b));
}

TEST(FusionAttention, ZeroProjectionIsIdentityAndWeightsNormalize) {
  SplitMix64 rng(6);
  nn::ParamStore<double> store;
  FusionAttention<double> fa(store, "fa", 8, 6, 4, rng);
  Tape<double> t(false);
  const auto v = random_tensor({10, 8}, rng);
  const Var ctx = t.constant(random_tensor({3, 6}, rng));
  const auto r = fa(t, t.constant(v), ctx);
  for (auto w : r.self_weights) {
    const auto& a = t.value(w);
    for (std::size_t i = 0; i < 10; ++i) {
      double s = 0;
      for (std::size_t j = 0; j < 10; ++j) s += a[i * 10 + j];
      EXPECT_NEAR(s, 1.0, 1e-6);
    }
  }
  for (auto w : r.cross_weights) {
    const auto& a = t.value(w);
    for (std::size_t i = 0; i < 10; ++i) EXPECT_NEAR(a[i * 3] + a[i * 3 + 1] + a[i * 3 + 2], 1.0, 1e-6);
  }
  EXPECT_NE(t.value(r.output), v);
  fa.zero_output_projections();
  EXPECT_EQ(t.value(fa(t, t.constant(v), ctx).output), v);
}

TEST(FusionAttention, SinglePosition) {
  SplitMix64 rng(7);
  nn::ParamStore<double> store;
  FusionAttention<double> fa(store, "fa", 4, 4, 2, rng);
  Tape<double> t(false);
  const auto r = fa(t, t.constant(random_tensor({1, 4}, rng)), t.constant(random_tensor({2, 4}, rng)));
  EXPECT_EQ(t.shape(r.output), (nn::Shape{1, 4}));
  for (auto w : r.self_weights) EXPECT_EQ(t.value(w)[0], 1.0);
}

TEST(Forward, OutputRangeAndOriginalSize) {
  TgsalModel<double> m(small());
  const auto img = random_image(50, 37, 8);
  const auto map = m.predict(img, "a large red circle stands out clearly");
  EXPECT_EQ(map.width(), 50u);
  EXPECT_EQ(map.height(), 37u);
  for (double v : map.values.values()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  const auto null_a = m.predict(img, ""), null_b = m.predict(img, "");
  EXPECT_EQ(null_a.values, null_b.values);
}

TEST(Forward, FusionAblatedModelIgnoresText) {
  auto c = small();
  c.global_fusion = false;
  c.local_fusion = false;
  TgsalModel<double> m(c);
  EXPECT_EQ(m.params().find("decoder.level0.attention.cross.q.weight"), nullptr);
  const auto img = random_image(32, 32, 9);
  EXPECT_EQ(m.predict(img, "a large red circle stands out clearly").values,
            m.predict(img, "look for the small teal square away from it").values);
  EXPECT_EQ(m.predict(img, "").values, m.predict(img, "look for the small teal square").values);
}

TEST(Forward, FullModelRespondsToText) {
  TgsalModel<double> m(small());
  const auto img = random_image(32, 32, 10);
  const auto a = m.predict(img, "a large red circle stands out clearly");
  const auto b = m.predict(img, "look for the small teal square away from it");
  double d = 0;
  for (std::size_t i = 0; i < a.values.size(); ++i) d += std::abs(a.values[i] - b.values[i]);
  EXPECT_GT(d / a.values.size(), 0.0);
}

TEST(Model, FreezeAndClone) {
  auto c = small();
  c.freeze_encoders = true;
  TgsalModel<double> m(c);
  std::size_t frozen = 0;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto& p = m.params()[i];
    const bool enc = p.group == "image_encoder" || p.group == "text_encoder";
    EXPECT_EQ(p.trainable, !enc) << p.name;
    frozen += enc;
  }
  EXPECT_GT(frozen, 0u);
  EXPECT_TRUE(m.params().find("text.null_global")->trainable);
  m.params().find("head.conv.bias")->value[0] = 0.3;
  const auto copy = m.clone();
  const auto img = random_image(32, 32, 11);
  EXPECT_EQ(copy.predict(img, "a blue thing in the picture").values, m.predict(img, "a blue thing in the picture").values);
  EXPECT_FALSE(copy.params().find("image.stem.weight")->trainable);
}

TEST(Model, SameSeedSameWeights) {
  TgsalModel<double> a(small()), b(small());
  auto c = small();
  c.init_seed = 5;
  TgsalModel<double> d(c);
  EXPECT_EQ(encode_checkpoint(a), encode_checkpoint(b));
  EXPECT_NE(encode_checkpoint(a), encode_checkpoint(d));
}

TEST(Checkpoint, RoundTripAndErrors) {
  const auto dir = testutil::fresh_dir("model_ckpt");
  auto c = small();
  c.block = DecoderBlock::Residual;
  TgsalModel<double> m(c);
  save_checkpoint(m, dir / "m.tgsc");
  const auto back = load_checkpoint(dir / "m.tgsc");
  EXPECT_EQ(to_json(back.config()), to_json(c));
  EXPECT_EQ(encode_checkpoint(back), encode_checkpoint(m));
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto& a = m.params()[i].value;
    const auto& b = back.params()[i].value;
    for (std::size_t j = 0; j < a.size(); ++j) ASSERT_EQ(b[j], static_cast<double>(static_cast<float>(a[j])));
  }
  EXPECT_EQ(kind_of([&] { load_checkpoint(dir / "missing.tgsc"); }), ErrorKind::MissingCheckpoint);
  auto buf = encode_checkpoint(m);
  EXPECT_EQ(kind_of([&] { decode_checkpoint(buf.substr(0, buf.size() - 3)); }), ErrorKind::SchemaViolation);
  EXPECT_EQ(kind_of([&] { decode_checkpoint(buf + "x"); }), ErrorKind::SchemaViolation);
  buf[0] = 'X';
  EXPECT_EQ(kind_of([&] { decode_checkpoint(buf); }), ErrorKind::SchemaViolation);
}

TEST(GradientCheck, ModelModules) {
  for (const auto& id : {"gtff", "ltff", "fusion_attention", "hfr", "text_encoder", "image_encoder"}) {
    const auto r = training::gradient_check(id, 1);
    EXPECT_LT(r.max_rel_error, 1e-4) << id << " worst " << r.worst_tensor;
    EXPECT_GT(r.coordinates, 0u);
  }
  EXPECT_THROW(training::gradient_check("nope"), Error);
}
