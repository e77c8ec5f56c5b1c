#include <gtest/gtest.h>

#include "test_util.hpp"
#include "tisal/attributes.hpp"
#include "tisal/data_model.hpp"

using namespace tisal;
using namespace tisal::attributes;

namespace {

RgbImage noise_image(std::size_t w, std::size_t h, std::uint64_t seed) {
  SplitMix64 rng(seed);
  RgbImage img(w, h);
  for (auto& p : img.pixels) p = static_cast<std::uint8_t>(rng.index(256));
  return img;
}

// Reference attributes, written independently of the library.
AttributeVector reference(const RgbImage& img) {
  const std::size_t n = img.width * img.height;
  std::vector<double> y(n), rg(n), yb(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = img.pixels[3 * i], g = img.pixels[3 * i + 1], b = img.pixels[3 * i + 2];
    y[i] = 0.299 * r + 0.587 * g + 0.114 * b;
    rg[i] = r - g;
    yb[i] = (r + g) / 2 - b;
  }
  auto mean = [&](const std::vector<double>& v) {
    long double s = 0;
    for (double x : v) s += x;
    return static_cast<double>(s / v.size());
  };
  auto sd = [&](const std::vector<double>& v) {
    const double m = mean(v);
    long double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(static_cast<double>(s / v.size()));
  };
  AttributeVector a;
  a.brightness = mean(y);
  a.contrast = sd(y);
  a.colorfulness = std::hypot(sd(rg), sd(yb)) + 0.3 * std::hypot(mean(rg), mean(yb));
  const long w = static_cast<long>(img.width);
  auto Y = [&](long r, long c) { return y[r * w + c]; };
  long double sq = 0;
  std::size_t cnt = 0;
  for (long r = 1; r + 1 < static_cast<long>(img.height); ++r)
    for (long c = 1; c + 1 < w; ++c) {
      double gx = 0, gy = 0;
      const int kx[3][3] = {{-1, 0, 1}, {-2, 0, 2}, {-1, 0, 1}};
      for (int i = -1; i <= 1; ++i)
        for (int j = -1; j <= 1; ++j) {
          gx += kx[i + 1][j + 1] * Y(r + i, c + j);
          gy += kx[j + 1][i + 1] * Y(r + i, c + j);
        }
      sq += gx * gx + gy * gy;
      ++cnt;
    }
  a.spatial_information = std::sqrt(static_cast<double>(sq / cnt));
  return a;
}

}  // namespace

TEST(Attributes, ConstantGray) {
  const auto a = compute_attributes(RgbImage(16, 12, 128));
  EXPECT_EQ(a.contrast, 0.0);
  EXPECT_EQ(a.colorfulness, 0.0);
  EXPECT_EQ(a.spatial_information, 0.0);
  EXPECT_NEAR(a.brightness, 128.0, 1e-12);
}

TEST(Attributes, TwoPixelColorfulness) {
  const std::vector<std::uint8_t> px = {255, 0, 0, 0, 255, 0};
  EXPECT_NEAR(colorfulness(px), 293.25, 1e-12);
}

TEST(Attributes, RedIsMoreColorfulThanSameLumaGray) {
  RgbImage red(8, 8), gray(8, 8);
  const auto l = static_cast<std::uint8_t>(std::lround(luma(255, 0, 0)));
  for (std::size_t y = 0; y < 8; ++y)
    for (std::size_t x = 0; x < 8; ++x) {
      red.set(y, x, 255, 0, 0);
      gray.set(y, x, l, l, l);
    }
  EXPECT_GT(compute_attributes(red).colorfulness, compute_attributes(gray).colorfulness);
  EXPECT_NEAR(compute_attributes(red).brightness, compute_attributes(gray).brightness, 0.5);
}

TEST(Attributes, MatchesReferenceOnNoise) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto img = noise_image(9 + s, 8 + 2 * s, s);
    const auto a = compute_attributes(img), r = reference(img);
    EXPECT_NEAR(a.brightness, r.brightness, 1e-9);
    EXPECT_NEAR(a.contrast, r.contrast, 1e-9);
    EXPECT_NEAR(a.colorfulness, r.colorfulness, 1e-9);
    EXPECT_NEAR(a.spatial_information, r.spatial_information, 1e-9);
    EXPECT_LE(a.brightness, 255.0);
    EXPECT_GE(a.contrast, 0.0);
  }
}

TEST(Attributes, TooSmall) {
  try {
    compute_attributes(RgbImage(7, 20));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TooSmall);
  }
}

TEST(AttributeProperties, BrightnessInvariantUnderPixelPermutation) {
  SplitMix64 rng(3);
  const auto img = noise_image(12, 10, 5);
  std::vector<std::size_t> order(img.width * img.height);
  std::iota(order.begin(), order.end(), std::size_t{0});
  rng.shuffle(order);
  RgbImage perm(img.width, img.height);
  for (std::size_t i = 0; i < order.size(); ++i)
    for (int c = 0; c < 3; ++c) perm.pixels[3 * i + c] = img.pixels[3 * order[i] + c];
  const auto a = compute_attributes(img), b = compute_attributes(perm);
  EXPECT_NEAR(a.brightness, b.brightness, 1e-9);
  EXPECT_NEAR(a.contrast, b.contrast, 1e-9);
  EXPECT_NEAR(a.colorfulness, b.colorfulness, 1e-9);
}

TEST(AttributeProperties, TranslationOnPaddedImages) {
  // a textured patch inside a constant frame, shifted by whole pixels
  const auto patch = noise_image(6, 5, 9);
  auto place = [&](std::size_t ox, std::size_t oy) {
    RgbImage img(20, 16, 90);
    for (std::size_t y = 0; y < 5; ++y)
      for (std::size_t x = 0; x < 6; ++x)
        img.set(y + oy, x + ox, patch.at(y, x, 0), patch.at(y, x, 1), patch.at(y, x, 2));
    return img;
  };
  const auto a = compute_attributes(place(4, 4)), b = compute_attributes(place(9, 7));
  EXPECT_NEAR(a.brightness, b.brightness, 1e-9);
  EXPECT_NEAR(a.contrast, b.contrast, 1e-9);
  EXPECT_NEAR(a.colorfulness, b.colorfulness, 1e-9);
  EXPECT_NEAR(a.spatial_information, b.spatial_information, 1e-9);
}

TEST(Histogram, SingleAndDuplicateImages) {
  const auto a = compute_attributes(noise_image(10, 10, 1));
  const std::vector<AttributeVector> one{a}, two{a, a};
  const auto s1 = summarize(one, 8), s2 = summarize(two, 8);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(*std::max_element(s1.histograms[i].mass.begin(), s1.histograms[i].mass.end()), 1.0);
    EXPECT_EQ(s1.histograms[i].mass, s2.histograms[i].mass);
  }
  EXPECT_THROW(summarize(one, 0), Error);
}

TEST(Histogram, FixtureMassesSumToOneAndFilesAreWritten) {
  const auto dir = testutil::fresh_dir("attr_fx");
  FixtureSpec spec;
  spec.images = 3;
  spec.width = 64;
  spec.height = 48;
  const auto m = generate_fixtures(spec, 2, dir);
  const auto s = attribute_histogram(m, 5);
  EXPECT_EQ(s.images, 6u);
  for (const auto& h : s.histograms) {
    double sum = 0;
    for (double v : h.mass) sum += v;
    EXPECT_NEAR(sum, 1.0, 1e-12);
    EXPECT_LE(h.min, h.mean);
    EXPECT_LE(h.mean, h.max);
  }
  write_summary(s, dir / "out");
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "attributes.json"));
  EXPECT_TRUE(std::filesystem::exists(dir / "out" / "colorfulness.png"));
  const auto j = nlohmann::json::parse(testutil::slurp(dir / "out" / "attributes.json"));
  EXPECT_EQ(j["images"], 6);
  EXPECT_EQ(j["brightness"]["mass"].size(), 5u);
}
