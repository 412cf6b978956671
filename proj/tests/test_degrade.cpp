#include <gtest/gtest.h>

#include <array>
#include <cmath>
#include <numbers>

#include "test_util.hpp"
#include "uniflow/degrade.hpp"
#include "uniflow/metrics.hpp"

namespace uniflow {
namespace {

using test::bitwise_equal;
using test::max_abs_diff;
using test::random_tensor;

Tensor frame(std::int64_t h, std::int64_t w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  return random_tensor({1, 3, h, w}, seed, lo, hi);
}

DegradationSpec spec_of(DegradationKind k) {
  DegradationSpec s;
  s.kind = k;
  s.seed = 17;
  return s;
}

// --- identity edges ----------------------------------------------------------

TEST(Degrade, EveryKindHasAnExactIdentitySetting) {
  const Tensor clean = frame(19, 23, 1);
  std::vector<DegradationSpec> ids;
  {
    auto s = spec_of(DegradationKind::gaussian_blur);
    s.sigma = 0;
    ids.push_back(s);
  }
  {
    auto s = spec_of(DegradationKind::motion_blur);
    s.length = 1;
    s.angle = 37;
    ids.push_back(s);
  }
  {
    auto s = spec_of(DegradationKind::gaussian_noise);
    s.noise_sigma = 0;
    ids.push_back(s);
  }
  {
    auto s = spec_of(DegradationKind::salt_pepper);
    s.p = 0;
    ids.push_back(s);
  }
  {
    auto s = spec_of(DegradationKind::block_compress);
    s.q = 0;
    ids.push_back(s);
  }
  {
    auto s = spec_of(DegradationKind::haze);
    s.t0 = 1;
    s.airlight = 0.8;
    ids.push_back(s);
  }
  {
    auto s = spec_of(DegradationKind::rain);
    s.density = 0;
    s.length = 7;
    s.intensity = 0.5;
    ids.push_back(s);
  }
  {
    auto s = spec_of(DegradationKind::rain);
    s.density = 0.02;
    s.length = 7;
    s.intensity = 0;
    ids.push_back(s);
  }
  {
    auto s = spec_of(DegradationKind::compound_blur_noise);
    ids.push_back(s);
  }
  for (const auto& s : ids) EXPECT_TRUE(bitwise_equal(apply(s, clean), clean)) << to_string(s.kind);
}

TEST(Degrade, HazeWithZeroTransmissionIsTheAirlight) {
  auto s = spec_of(DegradationKind::haze);
  s.t0 = 0;
  s.airlight = 0.73;
  const Tensor out = apply(s, frame(9, 9, 2));
  for (double v : out.data()) EXPECT_EQ(v, 0.73);
}

TEST(Degrade, HazeMatchesScatteringModel) {
  auto s = spec_of(DegradationKind::haze);
  s.t0 = 0.6;
  s.airlight = 0.9;
  const Tensor clean = frame(8, 8, 3);
  const Tensor out = apply(s, clean);
  for (std::int64_t i = 0; i < clean.numel(); ++i) EXPECT_NEAR(out.data()[i], clean.data()[i] * 0.6 + 0.9 * 0.4, 1e-15);
}

// --- kernels against direct oracles -------------------------------------------

std::int64_t mirror(std::int64_t i, std::int64_t n) {
  while (i < 0 || i >= n) i = i < 0 ? -i : 2 * (n - 1) - i;
  return i;
}

TEST(Degrade, GaussianBlurMatchesDirect2dConvolution) {
  const double sigma = 1.3;
  const int r = static_cast<int>(std::ceil(3 * sigma));
  const Tensor clean = frame(12, 15, 4);
  auto s = spec_of(DegradationKind::gaussian_blur);
  s.sigma = sigma;
  const Tensor out = apply(s, clean, false);

  double norm = 0;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) norm += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma));
  const Shape sh = clean.shape();
  double worst = 0;
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t y = 0; y < sh.h; ++y)
      for (std::int64_t x = 0; x < sh.w; ++x) {
        double acc = 0;
        for (int dy = -r; dy <= r; ++dy)
          for (int dx = -r; dx <= r; ++dx)
            acc += std::exp(-(dx * dx + dy * dy) / (2 * sigma * sigma)) *
                   clean.at(0, c, mirror(y + dy, sh.h), mirror(x + dx, sh.w));
        worst = std::max(worst, std::abs(acc / norm - out.at(0, c, y, x)));
      }
  EXPECT_LE(worst, 1e-12);
}

TEST(Degrade, MotionKernelIsNormalizedAndOriented) {
  const auto k = detail_degrade::line_kernel(5, 0);
  double total = 0;
  for (double v : k.w) total += v;
  EXPECT_NEAR(total, 1.0, 1e-15);
  const std::int64_t mid = k.size / 2;
  for (std::int64_t y = 0; y < k.size; ++y)
    for (std::int64_t x = 0; x < k.size; ++x) {
      const double v = k.w[static_cast<std::size_t>(y * k.size + x)];
      if (y != mid) EXPECT_EQ(v, 0.0);
    }
  // a vertical line is the transpose of a horizontal one
  const auto kv = detail_degrade::line_kernel(5, 90);
  ASSERT_EQ(kv.size, k.size);
  for (std::int64_t y = 0; y < k.size; ++y)
    for (std::int64_t x = 0; x < k.size; ++x)
      EXPECT_NEAR(kv.w[static_cast<std::size_t>(x * k.size + y)], k.w[static_cast<std::size_t>(y * k.size + x)], 1e-12);
}

TEST(Degrade, MotionBlurKeepsConstantFrames) {
  auto s = spec_of(DegradationKind::motion_blur);
  s.length = 9;
  s.angle = 33;
  const Tensor flat = Tensor::filled({1, 3, 16, 16}, 0.4);
  EXPECT_LE(max_abs_diff(apply(s, flat), flat), 1e-14);
}

// Orthonormal DCT-II written from its cosine definition.
double dct_c(int u) { return u == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8); }
double dct_cos(int u, int x) { return std::cos((2 * x + 1) * u * std::numbers::pi / 16); }

TEST(Degrade, BlockCompressMatchesCosineDefinitionOracle) {
  const double q = 0.05;
  const Tensor clean = frame(16, 8, 5);
  auto s = spec_of(DegradationKind::block_compress);
  s.q = q;
  const Tensor out = apply(s, clean, false);
  double worst = 0;
  for (std::int64_t c = 0; c < 3; ++c)
    for (std::int64_t by = 0; by < 16; by += 8) {
      double coef[8][8];
      for (int u = 0; u < 8; ++u)
        for (int v = 0; v < 8; ++v) {
          double acc = 0;
          for (int y = 0; y < 8; ++y)
            for (int x = 0; x < 8; ++x) acc += dct_c(u) * dct_c(v) * dct_cos(u, y) * dct_cos(v, x) * clean.at(0, c, by + y, x);
          const double step = q * (1 + u + v);
          coef[u][v] = step * std::round(acc / step);
        }
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          double acc = 0;
          for (int u = 0; u < 8; ++u)
            for (int v = 0; v < 8; ++v) acc += dct_c(u) * dct_c(v) * dct_cos(u, y) * dct_cos(v, x) * coef[u][v];
          worst = std::max(worst, std::abs(acc - out.at(0, c, by + y, x)));
        }
    }
  EXPECT_LE(worst, 1e-12);
}

TEST(Degrade, BlockCompressHandlesPartialEdgeBlocks) {
  auto s = spec_of(DegradationKind::block_compress);
  s.q = 0.08;
  const Tensor clean = frame(13, 11, 6);
  const Tensor out = apply(s, clean);
  EXPECT_EQ(out.shape(), clean.shape());
  EXPECT_GT(max_abs_diff(out, clean), 0.0);
}

// --- statistics ----------------------------------------------------------------

TEST(Degrade, SaltPepperCorruptsTheRequestedFraction) {
  auto s = spec_of(DegradationKind::salt_pepper);
  s.p = 0.1;
  const Tensor clean = frame(128, 128, 7, 0.05, 0.95);
  const Tensor out = apply(s, clean);
  std::int64_t corrupted = 0, salt = 0;
  const std::int64_t plane = 128 * 128;
  for (std::int64_t i = 0; i < plane; ++i) {
    const double r = out.data()[i], g = out.data()[plane + i], b = out.data()[2 * plane + i];
    if (r != clean.data()[i]) {
      ++corrupted;
      EXPECT_TRUE(r == 0.0 || r == 1.0);
      EXPECT_EQ(r, g);
      EXPECT_EQ(r, b);
      salt += r == 1.0;
    }
  }
  const double frac = static_cast<double>(corrupted) / plane;
  EXPECT_NEAR(frac, 0.1, 0.01);
  EXPECT_NEAR(static_cast<double>(salt) / corrupted, 0.5, 0.05);
}

TEST(Degrade, GaussianNoiseHasRequestedStdBeforeClamping) {
  auto s = spec_of(DegradationKind::gaussian_noise);
  s.noise_sigma = 0.1;
  const Tensor clean = frame(64, 64, 8);
  const Tensor out = apply(s, clean, false);
  double mean = 0, sq = 0;
  const auto n = static_cast<double>(clean.numel());
  for (std::int64_t i = 0; i < clean.numel(); ++i) mean += out.data()[i] - clean.data()[i];
  mean /= n;
  for (std::int64_t i = 0; i < clean.numel(); ++i) {
    const double d = out.data()[i] - clean.data()[i] - mean;
    sq += d * d;
  }
  EXPECT_NEAR(std::sqrt(sq / (n - 1)), 0.1, 0.005);
  EXPECT_NEAR(mean, 0.0, 0.005);
}

TEST(Degrade, OutputsStayInUnitRangeAndAreReproducible) {
  MixtureConfig mix;
  Rng rng(11);
  const Tensor clean = frame(24, 24, 9);
  for (int i = 0; i < 200; ++i) {
    const DegradationSpec s = sample_spec(mix, rng);
    const Tensor a = apply(s, clean), b = apply(s, clean);
    ASSERT_TRUE(bitwise_equal(a, b)) << to_string(s.kind);
    for (double v : a.data()) ASSERT_TRUE(v >= 0.0 && v <= 1.0) << to_string(s.kind);
  }
}

TEST(Degrade, RainAddsBrightStreaks) {
  auto s = spec_of(DegradationKind::rain);
  s.density = 0.02;
  s.length = 7;
  s.angle = 90;
  s.intensity = 0.6;
  const Tensor clean = Tensor::filled({1, 3, 32, 32}, 0.2);
  const Tensor out = apply(s, clean);
  double lowest = 1, highest = 0;
  for (double v : out.data()) lowest = std::min(lowest, v), highest = std::max(highest, v);
  EXPECT_EQ(lowest, 0.2);
  EXPECT_GT(highest, 0.4);
}

// --- validation ----------------------------------------------------------------

TEST(Degrade, OutOfRangeParametersAreRejected) {
  auto bad = [](DegradationKind k, auto set) {
    auto s = spec_of(k);
    set(s);
    return s;
  };
  const Tensor clean = frame(8, 8, 10);
  EXPECT_THROW(apply(bad(DegradationKind::gaussian_blur, [](auto& s) { s.sigma = -0.1; }), clean), ConfigError);
  EXPECT_THROW(apply(bad(DegradationKind::gaussian_blur, [](auto& s) { s.sigma = 5.5; }), clean), ConfigError);
  EXPECT_THROW(apply(bad(DegradationKind::motion_blur, [](auto& s) { s.length = 0.5; }), clean), ConfigError);
  EXPECT_THROW(apply(bad(DegradationKind::gaussian_noise, [](auto& s) { s.noise_sigma = 1.5; }), clean), ConfigError);
  EXPECT_THROW(apply(bad(DegradationKind::salt_pepper, [](auto& s) { s.p = 1.01; }), clean), ConfigError);
  EXPECT_THROW(apply(bad(DegradationKind::block_compress, [](auto& s) { s.q = -1; }), clean), ConfigError);
  EXPECT_THROW(apply(bad(DegradationKind::haze, [](auto& s) { s.t0 = 2; }), clean), ConfigError);
  EXPECT_THROW(apply(bad(DegradationKind::rain, [](auto& s) { s.density = std::nan(""); }), clean), ConfigError);
  EXPECT_THROW(apply(spec_of(DegradationKind::haze), random_tensor({1, 1, 8, 8}, 1, 0, 1)), ShapeError);
}

// --- mixture ---------------------------------------------------------------------

TEST(Mixture, CategoryFrequenciesMatchWeights) {
  MixtureConfig mix;
  Rng rng(2024);
  std::array<int, 5> counts{};
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) ++counts[static_cast<std::size_t>(category_of(sample_spec(mix, rng).kind))];
  const std::array<double, 5> expected{0.30, 0.25, 0.20, 0.15, 0.10};
  for (std::size_t c = 0; c < 5; ++c) EXPECT_NEAR(counts[c] / static_cast<double>(draws), expected[c], 0.02) << c;
}

TEST(Mixture, SameSeedSameSpecs) {
  MixtureConfig mix;
  Rng a(5), b(5);
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_spec(mix, a), sample_spec(mix, b));
}

TEST(Mixture, SinglePositiveWeightPinsTheCategory) {
  MixtureConfig mix;
  mix.weights = {1, 0, 0, 0, 0};
  Rng rng(3);
  for (int i = 0; i < 500; ++i) EXPECT_EQ(category_of(sample_spec(mix, rng).kind), DegradationCategory::blur);
  mix.weights = {0, 0, 0, 0, 1};
  for (int i = 0; i < 100; ++i) EXPECT_EQ(sample_spec(mix, rng).kind, DegradationKind::compound_blur_noise);
}

TEST(Mixture, ParametersStayInsideConfiguredRanges) {
  MixtureConfig mix;
  mix.weights = {0.5, 0.5, 0, 0, 0};
  Rng rng(4);
  for (int i = 0; i < 1000; ++i) {
    const auto s = sample_spec(mix, rng);
    if (s.kind == DegradationKind::gaussian_blur) EXPECT_TRUE(s.sigma >= 0.5 && s.sigma <= 2.0);
    if (s.kind == DegradationKind::gaussian_noise) EXPECT_TRUE(s.noise_sigma >= 0.02 && s.noise_sigma <= 0.15);
    if (s.kind == DegradationKind::salt_pepper) EXPECT_TRUE(s.p >= 0.01 && s.p <= 0.08);
  }
}

TEST(Mixture, InvalidWeightsAreRejected) {
  MixtureConfig mix;
  mix.weights = {0.5, 0.5, 0.5, 0, 0};
  Rng rng(1);
  EXPECT_THROW(sample_spec(mix, rng), ConfigError);
  mix.weights = {1.2, -0.2, 0, 0, 0};
  EXPECT_THROW(sample_spec(mix, rng), ConfigError);
}

TEST(Mixture, PairsAreReproducibleAndLabelled) {
  const Tensor clean = frame(16, 16, 12);
  MixtureConfig mix;
  Rng a(9), b(9);
  for (int i = 0; i < 20; ++i) {
    const DegradedPair p = make_pair(clean, mix, a), q = make_pair(clean, mix, b);
    EXPECT_EQ(p.spec, q.spec);
    EXPECT_TRUE(bitwise_equal(p.degraded, q.degraded));
    EXPECT_TRUE(bitwise_equal(p.clean, clean));
  }
  mix.weights = {0, 1, 0, 0, 0};
  mix.ranges.gaussian_noise_share = 0;
  mix.ranges.salt_pepper_p = {0, 0};
  EXPECT_TRUE(bitwise_equal(make_pair(clean, mix, a).degraded, clean));
  mix.ranges.gaussian_noise_share = 1;
  mix.ranges.noise_sigma = {0.1, 0.1};
  const double p = psnr(make_pair(clean, mix, a).degraded, clean);
  EXPECT_TRUE(std::isfinite(p));
}

// --- serialisation -------------------------------------------------------------

TEST(DegradeJson, SpecRoundTripsForEveryKind) {
  MixtureConfig mix;
  Rng rng(21);
  std::array<bool, 8> seen{};
  for (int i = 0; i < 400; ++i) {
    const auto s = sample_spec(mix, rng);
    seen[static_cast<std::size_t>(s.kind)] = true;
    EXPECT_EQ(spec_from_json(nlohmann::json::parse(to_json(s).dump())), s);
  }
  for (bool b : seen) EXPECT_TRUE(b);
}

TEST(DegradeJson, SpecRejectsUnknownKeysAndForeignParameters) {
  EXPECT_THROW(spec_from_json(nlohmann::json::parse(R"({"kind":"haze","params":{},"seed":1,"x":2})")), ConfigError);
  EXPECT_THROW(spec_from_json(nlohmann::json::parse(R"({"kind":"haze","params":{"sigma":1},"seed":1})")), ConfigError);
  EXPECT_THROW(spec_from_json(nlohmann::json::parse(R"({"kind":"fog","params":{},"seed":1})")), ConfigError);
  EXPECT_THROW(spec_from_json(nlohmann::json::parse(R"({"kind":"haze","params":{"t0":3},"seed":1})")), ConfigError);
}

TEST(DegradeJson, MixtureRoundTripsAndRejectsUnknownKeys) {
  MixtureConfig m;
  m.weights = {0.1, 0.2, 0.3, 0.2, 0.2};
  m.ranges.noise_sigma = {0.05, 0.07};
  m.ranges.haze_share = 0.25;
  m.seed = 77;
  EXPECT_EQ(mixture_from_json(nlohmann::json::parse(to_json(m).dump())), m);
  EXPECT_THROW(mixture_from_json(nlohmann::json::parse(R"({"weights":{"snow":1}})")), ConfigError);
  EXPECT_THROW(mixture_from_json(nlohmann::json::parse(R"({"ranges":{"noise_sigma":[0.2,0.1]}})")), ConfigError);
  EXPECT_THROW(mixture_from_json(nlohmann::json::parse(R"({"ranges":{"bogus":[0,1]}})")), ConfigError);
  EXPECT_THROW(mixture_from_json(nlohmann::json::parse(R"({"extra":1})")), ConfigError);
}

}  // namespace
}  // namespace uniflow
