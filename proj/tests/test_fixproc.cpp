#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "oracles.hpp"
#include "test_util.hpp"
#include "tisal/fixproc.hpp"
#include "tisal/io.hpp"

using namespace tisal;

namespace {

FixationMap empty_map(std::size_t w, std::size_t h) { return {Grid<std::uint32_t>(w, h, 0u)}; }

double sum(const Grid<double>& g) {
  double s = 0;
  for (double v : g.values()) s += v;
  return s;
}

}  // namespace

TEST(Aggregate, RoundsToNearestPixel) {
  std::vector<FixationRecord> recs = {{"s", 3.2, 7.8, 0, 1}};
  const auto fm = aggregate(recs, 10, 10);
  EXPECT_EQ(fm.hits(8, 3), 1u);
  EXPECT_EQ(fm.total(), 1u);
  recs.push_back({"t", 3.4, 8.1, 0, 1});
  EXPECT_EQ(aggregate(recs, 10, 10).hits(8, 3), 2u);
}

TEST(Aggregate, ConservesCountsAndIgnoresOrder) {
  SplitMix64 rng(4);
  std::vector<FixationRecord> recs;
  for (int s = 0; s < 15; ++s)
    for (int k = 0; k < 4; ++k) recs.push_back({"s" + std::to_string(s), rng.uniform(0, 40), rng.uniform(0, 30), 0, 200});
  const auto fm = aggregate(recs, 40, 30);
  EXPECT_EQ(fm.total(), 60u);
  auto shuffled = recs;
  rng.shuffle(shuffled);
  EXPECT_EQ(aggregate(shuffled, 40, 30).hits, fm.hits);
  const auto a = density_map(fm, 2.0), b = density_map(aggregate(shuffled, 40, 30), 2.0);
  EXPECT_EQ(a.values, b.values);
}

TEST(Aggregate, RoundingPastBorderLandsOnLastPixel) {
  std::vector<FixationRecord> recs = {{"s", 9.9, 9.6, 0, 1}};
  EXPECT_EQ(aggregate(recs, 10, 10).hits(9, 9), 1u);
}

TEST(Aggregate, Errors) {
  EXPECT_THROW(aggregate({}, 10, 10), Error);
  std::vector<FixationRecord> out = {{"s", 10.0, 1.0, 0, 1}};
  EXPECT_THROW(aggregate(out, 10, 10), Error);
}

TEST(Kernel, UnitSumAndRadius) {
  const auto k = gaussian_kernel(2.5);
  EXPECT_EQ(k.size(), 2u * 10 + 1);
  double s = 0;
  for (double v : k) s += v;
  EXPECT_NEAR(s, 1.0, 1e-15);
  EXPECT_EQ(k[3], k[k.size() - 4]);
}

TEST(Density, SingleCentralFixation) {
  auto fm = empty_map(21, 21);
  fm.hits(10, 10) = 1;
  const auto d = density_map(fm, 2.0, Normalization::SumOne);
  EXPECT_NEAR(sum(d.values), 1.0, 1e-9);
  const auto at = std::max_element(d.values.values().begin(), d.values.values().end()) - d.values.values().begin();
  EXPECT_EQ(at, 10 * 21 + 10);
  for (std::size_t y = 0; y < 21; ++y)
    for (std::size_t x = 0; x < 21; ++x) {
      EXPECT_DOUBLE_EQ(d.values(y, x), d.values(x, y));
      EXPECT_DOUBLE_EQ(d.values(y, x), d.values(20 - y, x));
    }
}

TEST(Density, MirroredPairMatchesOracleAndMirror) {
  auto fm = empty_map(30, 20);
  fm.hits(6, 4) = 1;
  fm.hits(6, 25) = 1;
  const auto d = density_map(fm, 3.0, Normalization::None);
  const auto ref = oracle::direct_density(fm, 3.0);
  for (std::size_t y = 0; y < 20; ++y)
    for (std::size_t x = 0; x < 30; ++x) {
      EXPECT_NEAR(d.values(y, x), ref(y, x), 1e-12);
      EXPECT_NEAR(d.values(y, x), d.values(y, 29 - x), 1e-12);
    }
}

TEST(Density, MatchesDirectConvolutionOnRandomMaps) {
  SplitMix64 rng(17);
  for (int t = 0; t < 20; ++t) {
    const std::size_t w = 5 + rng.index(30), h = 5 + rng.index(30);
    const auto fm = oracle::random_fixations(w, h, 1 + rng.index(25), rng);
    const double sigma = rng.uniform(0.5, 5.0);
    const auto d = density_map(fm, sigma, Normalization::None);
    const auto ref = oracle::direct_density(fm, sigma);
    for (std::size_t i = 0; i < d.values.size(); ++i) ASSERT_NEAR(d.values[i], ref[i], 1e-12);
  }
}

TEST(Density, NormalizationFlags) {
  SplitMix64 rng(3);
  const auto fm = oracle::random_fixations(40, 30, 12, rng);
  const auto s = density_map(fm, 2.0, Normalization::SumOne);
  EXPECT_NEAR(sum(s.values), 1.0, 1e-9);
  EXPECT_EQ(s.normalization, Normalization::SumOne);
  const auto m = density_map(fm, 2.0, Normalization::MaxOne);
  EXPECT_EQ(*std::max_element(m.values.values().begin(), m.values.values().end()), 1.0);
  for (double v : m.values.values()) EXPECT_GE(v, 0.0);
}

TEST(DensityProperty, MassConservationAwayFromBorders) {
  SplitMix64 rng(8);
  for (int t = 0; t < 50; ++t) {
    const double sigma = rng.uniform(0.5, 3.0);
    const auto margin = static_cast<std::size_t>(std::ceil(4 * sigma));
    const std::size_t w = 2 * margin + 1 + rng.index(20), h = 2 * margin + 1 + rng.index(20);
    auto fm = empty_map(w, h);
    const std::size_t n = 1 + rng.index(30);
    for (std::size_t i = 0; i < n; ++i) {
      ++fm.hits(margin + rng.index(h - 2 * margin), margin + rng.index(w - 2 * margin));
    }
    const auto d = density_map(fm, sigma, Normalization::None);
    ASSERT_NEAR(sum(d.values) / static_cast<double>(n), 1.0, 1e-6);
  }
}

TEST(DensityProperty, Linearity) {
  SplitMix64 rng(12);
  for (int t = 0; t < 20; ++t) {
    const auto a = oracle::random_fixations(25, 18, 1 + rng.index(10), rng);
    const auto b = oracle::random_fixations(25, 18, 1 + rng.index(10), rng);
    auto ab = a;
    for (std::size_t i = 0; i < ab.hits.size(); ++i) ab.hits[i] += b.hits[i];
    const double sigma = rng.uniform(0.7, 4.0);
    const auto da = density_map(a, sigma, Normalization::None), db = density_map(b, sigma, Normalization::None),
               dab = density_map(ab, sigma, Normalization::None);
    for (std::size_t i = 0; i < dab.values.size(); ++i) ASSERT_NEAR(dab.values[i], da.values[i] + db.values[i], 1e-12);
  }
}

TEST(Density, Errors) {
  EXPECT_THROW(density_map(empty_map(5, 5), 1.0), Error);
  auto fm = empty_map(5, 5);
  fm.hits(2, 2) = 1;
  try {
    density_map(fm, 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::NonPositiveInput);
  }
}

TEST(Geometry, DegreesToSigma) {
  EXPECT_EQ(degrees_to_sigma(38.0, 1.0), 38.0);
  EXPECT_THROW(degrees_to_sigma(38.0, 0.0), Error);
  EXPECT_THROW(degrees_to_sigma(-1.0, 1.0), Error);
  EXPECT_NEAR(degrees_to_sigma(38.0, 1.0, KernelConvention::FullWidthHalfMax), 38.0 / 2.3548200450309493, 1e-12);
}

TEST(Geometry, PixelsPerDegreeOracle) {
  // chord subtended by one degree at 60 cm: 2·d·tan(θ/2)
  const double cm = 2.0 * 60.0 * std::tan(0.5 * 3.14159265358979323846 / 180.0);
  const double expect = cm * 1920.0 / 53.1;
  EXPECT_NEAR(pixels_per_degree(60.0, 1920.0, 53.1), expect, 1e-12);
  EXPECT_NEAR(expect, 37.9, 0.05);
}

TEST(Salf, RoundTripAndRejectsCorruption) {
  Grid<double> g(3, 2, std::vector<double>{0, 0.25, 0.5, 0.75, 1, 0.125});
  const auto buf = io::encode_salf(g);
  ASSERT_EQ(buf.size(), 12u + 24);
  EXPECT_EQ(buf.substr(0, 4), "SALF");
  EXPECT_EQ(io::decode_salf(buf), g);
  EXPECT_THROW(io::decode_salf(buf.substr(0, 20)), Error);
  EXPECT_THROW(io::decode_salf("XALF" + buf.substr(4)), Error);
  const auto dir = testutil::fresh_dir("fx_salf");
  io::write_salf(dir / "m.salf", g);
  EXPECT_EQ(io::read_salf(dir / "m.salf"), g);
}

TEST(Png, GrayExportScalesLinearly) {
  Grid<double> g(2, 1, std::vector<double>{0.0, 2.0});
  const auto gray = io::to_gray8(g);
  EXPECT_EQ(gray[0], 0);
  EXPECT_EQ(gray[1], 255);
  const auto dir = testutil::fresh_dir("fx_png");
  RgbImage img(4, 3, 7);
  img.set(1, 2, 10, 20, 30);
  io::write_png_rgb(dir / "a.png", img);
  const auto back = io::read_png_rgb(dir / "a.png");
  EXPECT_EQ(back.pixels, img.pixels);
}
