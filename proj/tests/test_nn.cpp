#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "test_util.hpp"
#include "uniflow/flow.hpp"
#include "uniflow/gradcheck.hpp"
#include "uniflow/nn.hpp"

namespace uniflow {
namespace {

using test::bitwise_equal;
using test::max_abs_diff;
using test::random_tensor;

ArchConfig small_arch(PromptMode mode = PromptMode::literal) {
  ArchConfig a;
  a.prompt_mode = mode;
  return a;
}

void fill(const Tensor& t, double v) {
  for (double& x : const_cast<Tensor&>(t).data()) x = v;
}

PromptVector random_prompt(std::int64_t n, int d, std::uint64_t seed) {
  return {random_tensor({n, d, 1, 1}, seed, 0.0, 0.1), d, PromptMode::literal};
}

// --- normalize_input -------------------------------------------------------

TEST(NormalizeInput, ConstantChannelGivesZeros) {
  Graph g;
  Tensor y = normalize_input(g, Tensor::filled({1, 3, 5, 5}, 0.4));
  // Only the rounding of the mean survives, divided by eps = 1e-6.
  EXPECT_LE(max_abs_diff(y, Tensor::zeros(y.shape())), 1e-9);
}

// Population mean and standard deviation of one (n, c) plane.
std::pair<double, double> plane_stats(const Tensor& t, std::int64_t n, std::int64_t c) {
  const std::int64_t count = t.shape().h * t.shape().w;
  double mean = 0, sq = 0;
  for (std::int64_t i = 0; i < count; ++i) mean += t.at(n, c, i / t.shape().w, i % t.shape().w);
  mean /= static_cast<double>(count);
  for (std::int64_t i = 0; i < count; ++i) sq += std::pow(t.at(n, c, i / t.shape().w, i % t.shape().w) - mean, 2);
  return {mean, std::sqrt(sq / static_cast<double>(count))};
}

TEST(NormalizeInput, StandardisesEachChannel) {
  Graph g;
  Tensor x = random_tensor({2, 3, 7, 6}, 1, 0, 1);
  Tensor y = normalize_input(g, x);
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 3; ++c) {
      const auto [mean, sd] = plane_stats(y, n, c);
      const double sigma = plane_stats(x, n, c).second;
      EXPECT_NEAR(mean, 0.0, 1e-10);
      // The eps in the denominator shrinks the spread to sigma / (sigma + eps).
      EXPECT_NEAR(sd, sigma / (sigma + 1e-6), 1e-12);
      EXPECT_NEAR(sd, 1.0, 1e-6 / sigma);
    }
}

TEST(NormalizeInput, InvariantToPositiveAffineMaps) {
  Graph g;
  Tensor x = random_tensor({1, 3, 6, 6}, 2, 0, 1);
  Tensor ax = x.detach();
  for (double& v : ax.data()) v = 0.5 * v + 0.25;
  EXPECT_LE(max_abs_diff(normalize_input(g, x), normalize_input(g, ax)), 1e-5);
}

// --- prompt_generate -------------------------------------------------------

TEST(Prompt, ZeroParametersGiveHalfOfTheCeiling) {
  for (PromptMode mode : {PromptMode::literal, PromptMode::pool_late}) {
    Model m = Model::create(small_arch(mode), 3);
    for (const auto& p : m.store.all())
      if (p.name.rfind("prompt.", 0) == 0) fill(p.value, 0.0);
    Graph g;
    PromptVector z = prompt_generate(g, random_tensor({2, 3, 8, 8}, 4, 0, 1), m);
    EXPECT_EQ(z.z.shape(), (Shape{2, 16, 1, 1}));
    for (double v : z.z.data()) EXPECT_DOUBLE_EQ(v, 0.05);
  }
}

TEST(Prompt, StrictlyInsideOpenRangeForRandomInputsAndParams) {
  for (PromptMode mode : {PromptMode::literal, PromptMode::pool_late}) {
    for (std::uint64_t seed = 0; seed < 6; ++seed) {
      Model m = Model::create(small_arch(mode), seed);
      Graph g;
      PromptVector z = prompt_generate(g, random_tensor({2, 3, 8, 8}, 100 + seed, 0, 1), m);
      for (double v : z.z.data()) {
        EXPECT_GT(v, 0.0);
        EXPECT_LT(v, 0.1);
      }
    }
  }
}

TEST(Prompt, DeterministicAndPoolLateNeedsFourPixels) {
  Model m = Model::create(small_arch(PromptMode::pool_late), 5);
  Tensor x = random_tensor({1, 3, 8, 8}, 6, 0, 1);
  Graph g1, g2;
  EXPECT_TRUE(bitwise_equal(prompt_generate(g1, x, m).z, prompt_generate(g2, x, m).z));
  Graph g3;
  EXPECT_THROW(prompt_generate(g3, random_tensor({1, 3, 3, 8}, 7, 0, 1), m), ShapeError);
  Model lit = Model::create(small_arch(), 5);
  EXPECT_NO_THROW(prompt_generate(g3, random_tensor({1, 3, 3, 3}, 7, 0, 1), lit));
}

// --- task_block ------------------------------------------------------------

TEST(TaskBlock, ZeroAlphaOrZeroMlpReducesToConvBlock) {
  Model m = Model::create(small_arch(), 8);
  const TaskBlockParams& b = m.encoder[1];
  Tensor x = random_tensor({2, 32, 6, 6}, 9);
  PromptVector z = random_prompt(2, 16, 10);

  Graph g;
  Tensor plain = conv_block(g, x, b);
  fill(b.alpha, 0.0);
  EXPECT_TRUE(bitwise_equal(task_block(g, x, z, b), plain));

  fill(b.alpha, 0.7);
  fill(b.mlp.weight, 0.0);
  fill(b.mlp.bias, 0.0);
  EXPECT_TRUE(bitwise_equal(task_block(g, x, z, b), plain));
}

TEST(TaskBlock, DifferenceFromConvBlockIsBroadcastAlphaMlp) {
  Model m = Model::create(small_arch(), 11);
  const TaskBlockParams& b = m.encoder[0];
  Tensor x = random_tensor({2, 3, 5, 4}, 12);
  PromptVector z = random_prompt(2, 16, 13);
  Graph g;
  Tensor full = task_block(g, x, z, b);
  Tensor plain = conv_block(g, x, b);
  const double alpha = b.alpha.item();
  for (std::int64_t n = 0; n < 2; ++n)
    for (std::int64_t c = 0; c < 16; ++c) {
      double mlp = b.mlp.bias.data()[c];
      for (std::int64_t k = 0; k < 16; ++k) mlp += b.mlp.weight.at(c, k, 0, 0) * z.z.at(n, k, 0, 0);
      for (std::int64_t y = 0; y < 5; ++y)
        for (std::int64_t xx = 0; xx < 4; ++xx)
          EXPECT_NEAR(full.at(n, c, y, xx) - plain.at(n, c, y, xx), alpha * mlp, 1e-14);
    }
}

TEST(TaskBlock, PromptPerturbationShiftsWholeChannels) {
  Model m = Model::create(small_arch(), 14);
  const TaskBlockParams& b = m.encoder[0];
  Tensor x = random_tensor({1, 3, 6, 6}, 15);
  PromptVector z = random_prompt(1, 16, 16);
  Graph g;
  Tensor base = task_block(g, x, z, b);
  z.z.data()[5] += 0.01;
  Tensor moved = task_block(g, x, z, b);
  bool some_channel_moved = false;
  for (std::int64_t c = 0; c < 16; ++c) {
    const double d0 = moved.at(0, c, 0, 0) - base.at(0, c, 0, 0);
    for (std::int64_t i = 0; i < 36; ++i)
      EXPECT_NEAR(moved.at(0, c, i / 6, i % 6) - base.at(0, c, i / 6, i % 6), d0, 1e-14);
    some_channel_moved |= std::abs(d0) > 1e-8;
  }
  EXPECT_TRUE(some_channel_moved);
}

TEST(TaskBlock, ChannelAndPromptMismatchesThrow) {
  Model m = Model::create(small_arch(), 17);
  Graph g;
  EXPECT_THROW(task_block(g, random_tensor({1, 4, 4, 4}, 18), random_prompt(1, 16, 19), m.encoder[0]), ShapeError);
  EXPECT_THROW(task_block(g, random_tensor({1, 3, 4, 4}, 18), random_prompt(1, 8, 19), m.encoder[0]), ShapeError);
}

// --- physics_unet_forward --------------------------------------------------

TEST(PhysicsUNet, PreservesResolution) {
  for (int levels : {1, 2, 3, 4}) {
    ArchConfig a = small_arch();
    a.levels = levels;
    a.base_channels = 4;
    Model m = Model::create(a, 20);
    const std::int64_t s = 8 * a.divisor();
    Graph g;
    Tensor x = random_tensor({1, 3, s, s + a.divisor()}, 21, 0, 1);
    Tensor y = physics_unet_forward(g, x, prompt_generate(g, x, m), m);
    EXPECT_EQ(y.shape(), x.shape()) << "levels " << levels;
  }
  Model m = Model::create(small_arch(), 22);
  Graph g;
  Tensor x = random_tensor({1, 3, 32, 32}, 23, 0, 1);
  EXPECT_EQ(physics_unet_forward(g, x, prompt_generate(g, x, m), m).shape(), (Shape{1, 3, 32, 32}));
}

TEST(PhysicsUNet, ZeroFinalConvGivesZeroOutput) {
  Model m = Model::create(small_arch(), 24);
  fill(m.out.weight, 0.0);
  fill(m.out.bias, 0.0);
  Graph g;
  Tensor x = random_tensor({2, 3, 8, 8}, 25, 0, 1);
  Tensor y = physics_unet_forward(g, x, prompt_generate(g, x, m), m);
  EXPECT_TRUE(bitwise_equal(y, Tensor::zeros(y.shape())));
}

TEST(PhysicsUNet, IndivisibleResolutionNamesDivisor) {
  Model m = Model::create(small_arch(), 26);
  Graph g;
  Tensor x = random_tensor({1, 3, 10, 8}, 27, 0, 1);
  try {
    physics_unet_forward(g, x, random_prompt(1, 16, 28), m);
    FAIL() << "expected ShapeError";
  } catch (const ShapeError& e) {
    EXPECT_NE(std::string(e.what()).find("divisible by 4"), std::string::npos) << e.what();
  }
}

TEST(PhysicsUNet, AlphaGradientMatchesCentralDifferences) {
  Model m = Model::create(small_arch(), 29);
  Tensor x = random_tensor({1, 3, 8, 8}, 30, 0, 1);
  Tensor target = random_tensor({1, 3, 8, 8}, 31, 0, 1);
  std::vector<Tensor> alphas;
  for (const auto& p : m.store.all())
    if (p.name.ends_with(".alpha")) alphas.push_back(p.value);
  ASSERT_EQ(alphas.size(), 6u);
  auto f = [&](Graph& g) {
    Tensor y = physics_unet_forward(g, x, prompt_generate(g, x, m), m);
    return ops::l1_loss(g, y, target);
  };
  auto r = finite_diff_audit(f, alphas, 1e-5);
  EXPECT_LE(r.max_rel_error, 1e-4) << "alpha " << r.worst_tensor;
  for (const Tensor& a : alphas) EXPECT_NE(a.grad()[0], 0.0);
}

TEST(PhysicsUNet, EveryParameterGetsConsistentGradientThroughRestore) {
  Model m = Model::create(small_arch(PromptMode::pool_late), 32);
  Tensor x = random_tensor({1, 3, 8, 8}, 33, 0, 1);
  Tensor probe = random_tensor({1, 3, 8, 8}, 34);
  auto f = [&](Graph& g) {
    RestoreResult r = restore_frame(g, x, m, SolverSettings{}, FieldToggles::full());
    return ops::sum(g, ops::mul(g, r.output, probe));
  };
  // Every scalar gate is checked, plus a random sample over all weights.
  std::vector<Tensor> gates;
  for (const auto& p : m.store.all())
    if (p.value.numel() == 1) gates.push_back(p.value);
  ASSERT_EQ(gates.size(), 7u);
  auto rg = finite_diff_audit(f, gates, 1e-5);
  EXPECT_LE(rg.max_rel_error, 1e-4);

  auto r = finite_diff_audit(f, m.store.tensors(), 1e-5, 96, 35);
  EXPECT_EQ(r.coordinates, 96u);
  EXPECT_LE(r.max_rel_error, 1e-4) << m.store.all()[r.worst_tensor].name << "[" << r.worst_index << "] analytic "
                                   << r.worst_analytic << " numeric " << r.worst_numeric;
  for (const auto& p : m.store.all()) {
    bool any = false;
    for (double v : p.value.grad()) any |= v != 0.0;
    EXPECT_TRUE(any) << p.name << " receives no gradient";
  }
}

// --- prompt_field ----------------------------------------------------------

TEST(PromptField, ZeroGainGivesZeroField) {
  Model m = Model::create(small_arch(), 36);
  fill(m.field.gain, 0.0);
  Graph g;
  Tensor f = prompt_field(g, random_prompt(2, 16, 37), m, {2, 3, 4, 5});
  EXPECT_TRUE(bitwise_equal(f, Tensor::zeros({2, 3, 4, 5})));
}

TEST(PromptField, SpatiallyConstantAndLinearInPrompt) {
  Model m = Model::create(small_arch(), 38);
  PromptVector a = random_prompt(1, 16, 39), b = random_prompt(1, 16, 39);
  b.z.data()[3] += 0.02;
  Graph g;
  Tensor fa = prompt_field(g, a, m, {1, 3, 6, 7}), fb = prompt_field(g, b, m, {1, 3, 6, 7});
  const double gain = m.field.gain.item();
  for (std::int64_t c = 0; c < 3; ++c) {
    const double expected = gain * m.field.map.weight.at(c, 3, 0, 0) * 0.02;
    for (std::int64_t i = 0; i < 42; ++i) {
      EXPECT_EQ(fa.at(0, c, i / 7, i % 7), fa.at(0, c, 0, 0));
      EXPECT_NEAR(fb.at(0, c, i / 7, i % 7) - fa.at(0, c, i / 7, i % 7), expected, 1e-15);
    }
  }
}

// --- complexity ------------------------------------------------------------

TEST(Complexity, SingleConvHandCount) {
  LayerCost c = conv_cost("c", 3, 8, 3, 8, 8);
  EXPECT_EQ(c.params, 224);
  EXPECT_EQ(c.macs, 13824);
}

TEST(Complexity, ReferenceConfigMatchesHandCount) {
  // Per block (cin -> c, d = 16): two 3x3 convs with bias, two GN affine
  // pairs, a 16 -> c linear with bias, one alpha.
  auto block = [](std::int64_t cin, std::int64_t c) {
    return (9 * cin * c + c) + 2 * c + (9 * c * c + c) + 2 * c + (16 * c + c) + 1;
  };
  const std::int64_t prompt = (3 * 32 + 32) + 64 + (32 * 16 + 16) + 32;
  const std::int64_t encoder = block(3, 16) + (9 * 16 * 32 + 32) + block(32, 32) + (9 * 32 * 64 + 64) + block(64, 64);
  const std::int64_t middle = block(64, 64);
  const std::int64_t decoder = (9 * 96 * 32 + 32) + block(32, 32) + (9 * 48 * 16 + 16) + block(16, 16);
  const std::int64_t tail = (9 * 16 * 3 + 3) + (16 * 3 + 3) + 1;
  const std::int64_t hand = prompt + encoder + middle + decoder + tail;
  ASSERT_EQ(hand, 255805);

  Complexity c = count_params_macs(small_arch(), 64, 64, 5);
  EXPECT_EQ(c.params, hand);
  EXPECT_EQ(Model::create(small_arch(), 0).store.scalar_count(), hand);

  EXPECT_EQ(c.layer("enc0.conv1").macs, 16 * 3 * 9 * 64 * 64);
  EXPECT_EQ(c.layer("down0").macs, 32 * 16 * 9 * 32 * 32);
  EXPECT_EQ(c.layer("mid.conv2").macs, 64 * 64 * 9 * 16 * 16);
  EXPECT_EQ(c.layer("fuse0").macs, 16 * 48 * 9 * 64 * 64);
  EXPECT_EQ(c.layer("euler").macs, 5 * 3 * 64 * 64);
}

TEST(Complexity, DoublingWidthsRoughlyQuadruplesConvParams) {
  ArchConfig narrow = small_arch(), wide = small_arch();
  wide.base_channels = 32;
  wide.prompt_dim = 32;
  auto conv_weights = [](const Complexity& c) {
    std::int64_t n = 0;
    for (const auto& l : c.layers)
      if (l.macs > 0 && l.name != "euler" && l.name != "enc0.conv1" && l.name != "out") n += l.params;
    return n;
  };
  const double ratio = static_cast<double>(conv_weights(count_params_macs(wide, 32, 32, 5))) /
                       static_cast<double>(conv_weights(count_params_macs(narrow, 32, 32, 5)));
  EXPECT_GT(ratio, 3.9);
  EXPECT_LT(ratio, 4.0);
  EXPECT_EQ(count_params_macs(wide, 32, 32, 5).params, Model::create(wide, 1).store.scalar_count());
}

TEST(Model, SameSeedSameWeightsAndDocumentedOrder) {
  Model a = Model::create(small_arch(), 40), b = Model::create(small_arch(), 40);
  ASSERT_EQ(a.store.all().size(), b.store.all().size());
  for (std::size_t i = 0; i < a.store.all().size(); ++i)
    EXPECT_TRUE(bitwise_equal(a.store.all()[i].value, b.store.all()[i].value));
  const auto& all = a.store.all();
  EXPECT_EQ(all.front().name, "prompt.conv1.weight");
  EXPECT_EQ(all[8].name, "enc0.conv1.weight");
  EXPECT_EQ(all.back().name, "field.gain");
  EXPECT_DOUBLE_EQ(a.store.find("mid.alpha").item(), 0.1);
  EXPECT_DOUBLE_EQ(a.store.find("field.gain").item(), 0.01);
  const double bound = 1.0 / std::sqrt(27.0);
  for (double v : a.store.find("enc0.conv1.weight").data()) EXPECT_LE(std::abs(v), bound);
}

TEST(ArchConfig, ValidationRejectsBadValues) {
  ArchConfig a;
  a.levels = 0;
  EXPECT_THROW(a.validate(), ConfigError);
  a = {};
  a.base_channels = 2;
  EXPECT_THROW(a.validate(), ConfigError);
  EXPECT_THROW(prompt_mode_from_string("early"), ConfigError);
}

}  // namespace
}  // namespace uniflow
