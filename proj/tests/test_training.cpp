#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "test_util.hpp"
#include "tisal/training/gradcheck.hpp"
#include "tisal/training/protocol.hpp"

using namespace tisal;
using namespace tisal::training;

namespace {

Grid<double> random_grid(std::size_t w, std::size_t h, SplitMix64& rng) {
  Grid<double> g(w, h);
  for (auto& v : g.storage()) v = rng.uniform();
  return g;
}

SaliencyMap as_pred(Grid<double> g) { return {std::move(g)}; }
DensityMap as_gt(Grid<double> g) { return {std::move(g), Normalization::None}; }

// Shared small fixture set: 3 images per group, 18 pairs.
const DatasetManifest& fixtures() {
  static const DatasetManifest m = [] {
    FixtureSpec spec;
    spec.images = 3;
    return generate_fixtures(spec, 5, testutil::fresh_dir("training_fx"));
  }();
  return m;
}

TrainConfig quick(std::size_t steps = 3) {
  TrainConfig tc;
  tc.max_steps = steps;
  tc.batch_size = 4;
  tc.repeats = 1;
  tc.pretrain_epochs = 1;
  tc.eval_shuffles = 5;
  tc.val_every = 0;
  return tc;
}

}  // namespace

TEST(Loss, IdenticalInputsGiveExactZero) {
  SplitMix64 rng(1);
  for (int i = 0; i < 50; ++i) {
    auto g = random_grid(1 + rng.index(12), 1 + rng.index(12), rng);
    for (auto kind : {LossKind::Combined, LossKind::L1, LossKind::L2}) {
      LossConfig cfg;
      cfg.kind = kind;
      EXPECT_EQ(loss(as_pred(g), as_gt(g), cfg).value, 0.0);
    }
  }
  Grid<double> constant(5, 4, 0.25);
  EXPECT_EQ(loss(as_pred(constant), as_gt(constant)).value, 0.0);
}

TEST(Loss, ConstantOffsetCostsOnlyMse) {
  SplitMix64 rng(2);
  auto g = random_grid(8, 6, rng);
  auto p = g;
  for (auto& v : p.storage()) v += 0.3;
  const auto t = loss(as_pred(p), as_gt(g));
  EXPECT_NEAR(t.cc, 1.0, 1e-12);
  EXPECT_NEAR(t.value, 0.09, 1e-12);
}

TEST(Loss, DefaultsAndNonNegativity) {
  const LossConfig cfg;
  EXPECT_EQ(cfg.alpha, 0.06);
  EXPECT_EQ(cfg.beta, 1.0);
  EXPECT_EQ(cfg.kind, LossKind::Combined);
  SplitMix64 rng(3);
  for (int i = 0; i < 1000; ++i) {
    const std::size_t w = 1 + rng.index(10), h = 1 + rng.index(10);
    const auto t = loss(as_pred(random_grid(w, h, rng)), as_gt(random_grid(w, h, rng)));
    ASSERT_GE(t.value, 0.0);
    ASSERT_LE(t.cc, 1.0);
  }
}

TEST(Loss, TermsMatchDirectFormulas) {
  SplitMix64 rng(4);
  auto p = random_grid(7, 5, rng), g = random_grid(7, 5, rng);
  const auto t = loss(as_pred(p), as_gt(g));
  double se = 0, ae = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    se += (p.storage()[i] - g.storage()[i]) * (p.storage()[i] - g.storage()[i]);
    ae += std::abs(p.storage()[i] - g.storage()[i]);
  }
  const double n = static_cast<double>(p.size());
  EXPECT_NEAR(t.mse, se / n, 1e-15);
  EXPECT_NEAR(t.mae, ae / n, 1e-15);
  EXPECT_NEAR(t.cc, metrics::cc(as_pred(p), as_gt(g)), 1e-6);
  EXPECT_NEAR(t.value, 0.06 * (1 - t.cc) + t.mse, 1e-15);
  LossConfig l1;
  l1.kind = LossKind::L1;
  EXPECT_EQ(loss(as_pred(p), as_gt(g), l1).value, t.mae);
  LossConfig l2;
  l2.kind = LossKind::L2;
  EXPECT_EQ(loss(as_pred(p), as_gt(g), l2).value, t.mse);
}

TEST(Loss, RejectsBadInput) {
  EXPECT_THROW(loss(as_pred(Grid<double>(3, 3)), as_gt(Grid<double>(3, 4))), Error);
  try {
    loss(as_pred(Grid<double>(2, 2)), as_gt(Grid<double>(3, 2)));
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  LossConfig bad;
  bad.alpha = 0;
  bad.beta = 0;
  EXPECT_THROW(bad.validate(), Error);
  bad.alpha = -1;
  EXPECT_THROW(bad.validate(), Error);
  EXPECT_EQ(parse_loss_kind("l1"), LossKind::L1);
  EXPECT_THROW(parse_loss_kind("huber"), Error);
}

TEST(Loss, NodeGradientMatchesFiniteDifferences) {
  SplitMix64 rng(5);
  for (auto kind : {LossKind::Combined, LossKind::L2, LossKind::L1}) {
    LossConfig cfg;
    cfg.kind = kind;
    nn::Tensor<double> x({1, 6, 6}), y({1, 6, 6});
    for (auto& v : x.data) v = rng.uniform();
    for (auto& v : y.data) v = rng.uniform();
    nn::Tape<double> t;
    const auto in = t.input(x, true);
    const auto l = loss_node(t, in, y, cfg);
    t.backward(l, nn::Tensor<double>({1}, 1.0));
    const auto analytic = t.grad(in);
    auto f = [&](const nn::Tensor<double>& z) {
      return training::detail::loss_terms<double>(z.data.data(), y.data.data(), z.size(), cfg, nullptr).value;
    };
    for (std::size_t i = 0; i < x.size(); ++i) {
      auto a = x, b = x;
      a[i] += 1e-6;
      b[i] -= 1e-6;
      EXPECT_NEAR(analytic[i], (f(a) - f(b)) / 2e-6, 1e-7) << to_string(kind) << " " << i;
    }
  }
}

TEST(Loss, GradientCheckModule) {
  const auto r = gradient_check("loss");
  EXPECT_LT(r.max_rel_error, 1e-8);
  EXPECT_GT(r.coordinates, 0u);
}

TEST(Schedule, CosineEndpointsAndShape) {
  EXPECT_EQ(lr_at(0, 100), 1e-4);
  EXPECT_EQ(lr_at(100, 100), 1e-5);
  EXPECT_NEAR(lr_at(50, 100), 5.5e-5, 1e-18);
  for (std::size_t s = 1; s <= 100; ++s) EXPECT_LE(lr_at(s, 100), lr_at(s - 1, 100));
  EXPECT_THROW(lr_at(101, 100), Error);
  EXPECT_EQ(lr_at(0, 0), 1e-4);
}

TEST(Config, JsonRoundTripAndValidation) {
  TrainConfig c;
  c.epochs = 3;
  c.protocol = Protocol::IndividualFinetune;
  c.loss.kind = LossKind::L2;
  c.kernel_convention = KernelConvention::FullWidthHalfMax;
  const auto back = train_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back).dump(), to_json(c).dump());
  EXPECT_THROW(train_config_from_json({{"epoch", 3}}), Error);
  EXPECT_THROW(train_config_from_json({{"loss", {{"gamma", 1}}}}), Error);
  EXPECT_THROW(train_config_from_json({{"lr_start", 1e-5}, {"lr_end", 1e-4}}), Error);
  EXPECT_THROW(train_config_from_json({{"epochs", "many"}}), Error);
}

TEST(Config, ProtocolNames) {
  EXPECT_EQ(parse_protocol("JOINT_SCRATCH"), Protocol::JointScratch);
  EXPECT_EQ(parse_protocol("individual_finetune"), Protocol::IndividualFinetune);
  EXPECT_EQ(parse_protocol("Joint_Finetune"), Protocol::JointFinetune);
  EXPECT_THROW(parse_protocol("joint"), Error);
}

TEST(Train, SameSeedGivesIdenticalCurves) {
  const auto data = prepare(fixtures(), 32, quick());
  const auto all = all_of(data);
  auto run = [&] {
    model::TgsalModel<double> m(gradcheck_config());
    return train(m, all, quick(6)).step_loss;
  };
  const auto a = run(), b = run();
  ASSERT_EQ(a.size(), 6u);
  EXPECT_EQ(a, b);
  auto tc = quick(6);
  tc.seed = 99;
  model::TgsalModel<double> m(gradcheck_config());
  EXPECT_NE(train(m, all, tc).step_loss, a);
}

TEST(Train, ThreadCountDoesNotChangeResults) {
  const auto data = prepare(fixtures(), 32, quick());
  const auto all = all_of(data);
  auto run = [&](std::size_t threads) {
    auto tc = quick(3);
    tc.threads = threads;
    model::TgsalModel<double> m(gradcheck_config());
    return train(m, all, tc).step_loss;
  };
  EXPECT_EQ(run(1), run(3));
}

TEST(Train, LossDecreasesOnSmallSet) {
  const auto data = prepare(fixtures(), 32, quick());
  const auto subset = select(data, [](const PreparedPair& p) { return p.pair.condition == ConditionType::Pure; });
  model::TgsalModel<double> m(gradcheck_config());
  TrainConfig tc = quick(60);
  tc.lr_start = 2e-3;
  tc.lr_end = 2e-4;
  const double before = mean_loss(m, subset, tc).value;
  train(m, subset, tc);
  EXPECT_LT(mean_loss(m, subset, tc).value, 0.8 * before);
}

TEST(Train, FrozenEncodersStayBitIdentical) {
  const auto data = prepare(fixtures(), 32, quick());
  model::TgsalModel<double> m(gradcheck_config());
  const auto before = m.clone();
  m.params().set_trainable_group("image_encoder", false);
  m.params().set_trainable_group("text_encoder", false);
  train(m, all_of(data), quick(3));
  bool decoder_moved = false;
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    const auto& now = m.params()[i];
    const auto& old = before.params()[i];
    const bool encoder = now.group == "image_encoder" || now.group == "text_encoder";
    if (encoder) {
      EXPECT_EQ(now.value.data, old.value.data) << now.name;
    } else if (now.value.data != old.value.data) {
      decoder_moved = true;
    }
  }
  EXPECT_TRUE(decoder_moved);
}

TEST(Train, NonFiniteLossIsDivergence) {
  const auto data = prepare(fixtures(), 32, quick());
  model::TgsalModel<double> m(gradcheck_config());
  for (std::size_t i = 0; i < m.params().size(); ++i) {
    for (auto& v : m.params()[i].value.data) v = std::numeric_limits<double>::quiet_NaN();
  }
  try {
    train(m, all_of(data), quick(1));
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::Divergence);
    EXPECT_TRUE(is_runtime_error(e.kind()));
  }
}

TEST(Train, RejectsEmptyData) {
  model::TgsalModel<double> m(gradcheck_config());
  EXPECT_THROW(train(m, {}, quick()), Error);
}

TEST(Train, HistoryFileHasOneLinePerEpoch) {
  const auto data = prepare(fixtures(), 32, quick());
  const auto all = all_of(data);
  model::TgsalModel<double> m(gradcheck_config());
  auto tc = quick(0);
  tc.epochs = 2;
  tc.val_every = 1;
  std::size_t seen = 0;
  const auto h = train(m, all, tc, &all, [&](const EpochRecord&) { ++seen; });
  EXPECT_EQ(h.epochs.size(), 2u);
  EXPECT_EQ(seen, 2u);
  EXPECT_EQ(h.step_loss.size(), total_steps(all.size(), tc));
  ASSERT_TRUE(h.epochs.back().val.has_value());
  const auto path = testutil::fresh_dir("history") / "h.jsonl";
  write_history(h, path);
  const auto text = testutil::slurp(path);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 2);
  EXPECT_NE(text.find("val_metrics"), std::string::npos);
}

TEST(Evaluate, ReportsAllMetricsPerPair) {
  const auto data = prepare(fixtures(), 32, quick());
  model::TgsalModel<double> m(gradcheck_config());
  const auto res = evaluate(m, all_of(data), quick(), 1);
  ASSERT_EQ(res.size(), data.size());
  const auto means = mean_of(res);
  for (const char* k : {"auc_j", "sauc", "nss", "cc", "kl", "sim", "ig"}) {
    ASSERT_TRUE(means.mean.count(k)) << k;
    EXPECT_TRUE(std::isfinite(means.mean.at(k))) << k;
  }
}

TEST(Protocol, IndividualGivesOneRowPerCondition) {
  auto tc = quick(2);
  tc.protocol = Protocol::IndividualFinetune;
  const auto dir = testutil::fresh_dir("protocol_individual");
  const auto r = run_protocol(fixtures(), gradcheck_config(), tc, {dir, {}, {}});
  ASSERT_EQ(r.rows.size(), 5u);
  EXPECT_EQ(r.models_trained, 5u);
  EXPECT_EQ(r.checkpoints.size(), 5u);
  for (const auto& p : r.checkpoints) EXPECT_TRUE(std::filesystem::exists(p));
  EXPECT_TRUE(std::filesystem::exists(dir / "results.md"));
  EXPECT_TRUE(std::filesystem::exists(dir / "effective_config.json"));
}

TEST(Protocol, JointAddsAveragedRow) {
  auto tc = quick(2);
  tc.protocol = Protocol::JointScratch;
  tc.repeats = 2;
  const auto r = run_protocol(fixtures(), gradcheck_config(), tc);
  ASSERT_EQ(r.rows.size(), 6u);
  EXPECT_EQ(r.rows.back().label, kAveragedRow);
  EXPECT_EQ(r.models_trained, 2u);
  EXPECT_TRUE(r.checkpoints.empty());
  double sum = 0;
  for (std::size_t i = 0; i < 5; ++i) sum += r.rows[i].means.mean.at("cc");
  EXPECT_NEAR(r.rows.back().means.mean.at("cc"), sum / 5, 1e-12);
  const auto md = markdown_table(r.rows);
  EXPECT_NE(md.find(kAveragedRow), std::string::npos);
}

TEST(Protocol, RepeatsUseDifferentSplitsDeterministically) {
  auto tc = quick(2);
  tc.protocol = Protocol::JointScratch;
  tc.repeats = 1;
  const auto a = run_protocol(fixtures(), gradcheck_config(), tc);
  const auto b = run_protocol(fixtures(), gradcheck_config(), tc);
  EXPECT_EQ(results_csv(a.rows), results_csv(b.rows));
}

TEST(Ablation, GridsHaveExpectedVariants) {
  const auto mc = gradcheck_config();
  const TrainConfig tc;
  EXPECT_EQ(ablation_grid(Ablation::Heads, mc, tc).size(), 3u);
  EXPECT_EQ(ablation_grid(Ablation::Loss, mc, tc).size(), 3u);
  EXPECT_EQ(ablation_grid(Ablation::Fusion, mc, tc).size(), 3u);
  EXPECT_EQ(ablation_grid(Ablation::Structure, mc, tc).size(), 4u);
  EXPECT_EQ(ablation_grid(Ablation::Heads, mc, tc)[2].model.attention_heads, 8u);
  EXPECT_EQ(ablation_grid(Ablation::Loss, mc, tc)[0].train.loss.kind, LossKind::L1);
  EXPECT_EQ(parse_ablation("structure"), Ablation::Structure);
  EXPECT_THROW(parse_ablation("width"), Error);
}

TEST(Ablation, HeadsTableIsComplete) {
  auto tc = quick(2);
  tc.protocol = Protocol::JointScratch;
  const auto dir = testutil::fresh_dir("ablation_heads");
  auto mc = gradcheck_config();
  mc.text_embed_dim = 8;
  const auto r = run_ablation(Ablation::Heads, fixtures(), mc, tc, {dir, {}, {}});
  ASSERT_EQ(r.rows.size(), 3u);
  for (const auto& row : r.rows) EXPECT_TRUE(row.means.mean.count("cc")) << row.label;
  EXPECT_NE(r.markdown.find("8 heads"), std::string::npos);
  EXPECT_TRUE(std::filesystem::exists(dir / "ablation_heads.md"));
}
