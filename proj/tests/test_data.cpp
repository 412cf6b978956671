#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <string>

#include "test_util.hpp"
#include "uniflow/data.hpp"
#include "uniflow/metrics.hpp"

namespace uniflow {
namespace {

namespace fs = std::filesystem;
using test::bitwise_equal;
using test::random_tensor;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("uniflow_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::vector<unsigned char> bytes_of(const std::string& header, std::initializer_list<int> payload) {
  std::vector<unsigned char> b(header.begin(), header.end());
  for (int v : payload) b.push_back(static_cast<unsigned char>(v));
  return b;
}

// --- PPM -------------------------------------------------------------------------

TEST(Ppm, HandEncodedFixtureDecodes) {
  // 2x2: red, green / blue, white
  const auto bytes = bytes_of("P6\n# fixture\n2 2\n255\n", {255, 0, 0, 0, 255, 0, 0, 0, 255, 255, 255, 255});
  const Tensor t = decode_ppm(bytes);
  ASSERT_EQ(t.shape(), (Shape{1, 3, 2, 2}));
  const Tensor expected = Tensor::from({1, 3, 2, 2}, {1, 0, 0, 1, 0, 1, 0, 1, 0, 0, 1, 1});
  EXPECT_TRUE(bitwise_equal(t, expected));
}

TEST(Ppm, ZeroImageHasZeroPayload) {
  const auto bytes = encode_ppm(Tensor::zeros({1, 3, 3, 4}));
  const std::string header = "P6\n4 3\n255\n";
  ASSERT_EQ(bytes.size(), header.size() + 36);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + static_cast<long>(header.size())), header);
  for (std::size_t i = header.size(); i < bytes.size(); ++i) EXPECT_EQ(bytes[i], 0);
}

TEST(Ppm, RoundTripReproducesQuantizedValues) {
  TempDir dir("ppm_roundtrip");
  Tensor t = random_tensor({1, 3, 5, 7}, 1, -0.2, 1.2);
  save_image(t, dir.path / "a.ppm");
  const Tensor back = load_image(dir.path / "a.ppm");
  for (std::int64_t i = 0; i < t.numel(); ++i) {
    const double c = std::clamp(t.data()[i], 0.0, 1.0);
    EXPECT_DOUBLE_EQ(back.data()[i], std::round(c * 255.0) / 255.0);
  }
  save_image(back, dir.path / "b.ppm");
  EXPECT_EQ(read_file_bytes(dir.path / "a.ppm"), read_file_bytes(dir.path / "b.ppm"));
}

TEST(Ppm, RoundsHalfAwayFromZero) {
  EXPECT_EQ(quantize_u8(0.5 / 255.0), 1);
  EXPECT_EQ(quantize_u8(2.5 / 255.0), 3);
  EXPECT_EQ(quantize_u8(-3.0), 0);
  EXPECT_EQ(quantize_u8(7.0), 255);
}

TEST(Ppm, MalformedInputReportsByteOffset) {
  auto message = [](const std::vector<unsigned char>& b) {
    try {
      decode_ppm(b, "x.ppm");
    } catch (const IoError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  EXPECT_NE(message(bytes_of("P3\n1 1\n255\n", {1, 2, 3})).find("byte offset 0"), std::string::npos);
  EXPECT_NE(message(bytes_of("P6\n2 x\n255\n", {})).find("byte offset 5"), std::string::npos);
  EXPECT_NE(message(bytes_of("P6\n2 2\n255\n", {1, 2, 3})).find("truncated"), std::string::npos);
  EXPECT_NE(message(bytes_of("P6\n1 1\n65535\n", {0, 0, 0, 0, 0, 0})).find("maxval"), std::string::npos);
  EXPECT_THROW(load_image("/nonexistent/uniflow.ppm"), IoError);
}

// --- manifest -----------------------------------------------------------------------

ClipRecord sample_clip(const std::string& id, const std::string& split) {
  DegradationSpec s;
  s.kind = DegradationKind::haze;
  s.t0 = 0.7;
  s.airlight = 0.9;
  s.seed = 5;
  return {id, {"a.ppm", "b.ppm"}, 10, split, {"d/a.ppm", "d/b.ppm"}, {s, s}};
}

TEST(Manifest, RoundTripsThroughJsonLines) {
  TempDir dir("manifest_rt");
  ClipManifest m;
  m.clips = {sample_clip("c0", "train"), sample_clip("c1", "val"), sample_clip("c2", "test")};
  m.clips[1].degraded.clear();
  m.clips[1].specs.clear();
  write_manifest(m, dir.path / "m.jsonl");
  const ClipManifest back = read_manifest(dir.path / "m.jsonl", false);
  EXPECT_EQ(back.clips, m.clips);
  EXPECT_EQ(back.base_dir, dir.path);
  EXPECT_EQ(back.resolve("x.ppm"), dir.path / "x.ppm");
  EXPECT_EQ(back.resolve("/abs/x.ppm"), fs::path("/abs/x.ppm"));
  EXPECT_EQ(back.split("val").size(), 1u);
}

TEST(Manifest, RejectsInvalidRecords) {
  auto parse = [](const std::string& s) { return clip_from_json(nlohmann::json::parse(s)); };
  EXPECT_THROW(parse(R"({"clip_id":"a","frames":[],"fps":10,"split":"train"})"), ConfigError);
  EXPECT_THROW(parse(R"({"clip_id":"a","frames":["x"],"fps":10,"split":"holdout"})"), ConfigError);
  EXPECT_THROW(parse(R"({"clip_id":"a","frames":["x"],"fps":0,"split":"train"})"), ConfigError);
  EXPECT_THROW(parse(R"({"clip_id":"a","frames":["x"],"fps":10,"split":"train","color":1})"), ConfigError);
  EXPECT_THROW(parse(R"({"clip_id":"a","frames":["x"],"fps":10,"split":"train","degraded":["y","z"]})"), ConfigError);
  EXPECT_THROW(parse(R"({"frames":["x"],"fps":10,"split":"train"})"), ConfigError);
}

TEST(Manifest, DuplicateIdsAndMissingFramesAreErrors) {
  TempDir dir("manifest_bad");
  ClipManifest m;
  m.clips = {sample_clip("c0", "train"), sample_clip("c0", "test")};
  write_manifest(m, dir.path / "dup.jsonl");
  EXPECT_THROW(read_manifest(dir.path / "dup.jsonl", false), ConfigError);
  m.clips.pop_back();
  write_manifest(m, dir.path / "missing.jsonl");
  EXPECT_THROW(read_manifest(dir.path / "missing.jsonl", true), IoError);
  EXPECT_THROW(read_manifest(dir.path / "absent.jsonl"), IoError);
}

// --- frame sampling -------------------------------------------------------------------

ClipRecord clip_with(std::size_t frames, int fps) {
  ClipRecord c;
  c.clip_id = "c";
  c.fps = fps;
  for (std::size_t i = 0; i < frames; ++i) c.frames.push_back("f" + std::to_string(i));
  return c;
}

TEST(SampleFrames, RateEqualToFpsKeepsEveryFrame) {
  Rng rng(1);
  const auto idx = sample_frames(clip_with(23, 5), 5, rng);
  ASSERT_EQ(idx.size(), 23u);
  for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(idx[i], i);
}

TEST(SampleFrames, SingleFrameClipAlwaysGivesThatFrame) {
  for (int rate = 3; rate <= 10; ++rate) {
    Rng rng(static_cast<std::uint64_t>(rate));
    EXPECT_EQ(sample_frames(clip_with(1, 30), rate, rng), std::vector<std::size_t>{0});
  }
}

TEST(SampleFrames, PicksRatePerSecondInStrictlyIncreasingOrder) {
  Rng rng(2);
  const auto idx = sample_frames(clip_with(90, 30), 4, rng);
  ASSERT_EQ(idx.size(), 12u);
  for (std::size_t i = 1; i < idx.size(); ++i) EXPECT_LT(idx[i - 1], idx[i]);
  for (std::size_t s = 0; s < 3; ++s)
    for (std::size_t k = 0; k < 4; ++k) {
      EXPECT_GE(idx[s * 4 + k], s * 30);
      EXPECT_LT(idx[s * 4 + k], (s + 1) * 30);
    }
}

TEST(SampleFrames, DeterministicPerSeedAndValidated) {
  Rng a(9), b(9);
  EXPECT_EQ(sample_frames(clip_with(60, 25), 7, a), sample_frames(clip_with(60, 25), 7, b));
  EXPECT_THROW(sample_frames(clip_with(10, 10), 2, a), ConfigError);
  EXPECT_THROW(sample_frames(clip_with(10, 10), 11, a), ConfigError);
  EXPECT_THROW(sample_frames(clip_with(0, 10), 5, a), ConfigError);
}

// --- augmentation ----------------------------------------------------------------------

TEST(Augment, FourQuarterTurnsAreIdentity) {
  const Tensor t = random_tensor({2, 3, 4, 6}, 3);
  Tensor r = t;
  for (int i = 0; i < 4; ++i) r = rotate90(r);
  EXPECT_TRUE(bitwise_equal(r, t));
}

TEST(Augment, QuarterTurnIsCounterClockwise) {
  // [[1 2 3] [4 5 6]] -> [[3 6] [2 5] [1 4]]
  const Tensor t = Tensor::from({1, 1, 2, 3}, {1, 2, 3, 4, 5, 6});
  EXPECT_TRUE(bitwise_equal(rotate90(t), Tensor::from({1, 1, 3, 2}, {3, 6, 2, 5, 1, 4})));
}

TEST(Augment, FullCropWithoutRotationIsIdentity) {
  const Tensor t = random_tensor({1, 3, 8, 8}, 4);
  EXPECT_TRUE(bitwise_equal(apply_augment(t, {8, 0, 0, 0, false}), t));
}

TEST(Augment, CropAndFlipIndexing) {
  const Tensor t = Tensor::from({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  EXPECT_TRUE(bitwise_equal(apply_augment(t, {2, 1, 1, 0, false}), Tensor::from({1, 1, 2, 2}, {5, 6, 8, 9})));
  EXPECT_TRUE(bitwise_equal(apply_augment(t, {2, 0, 1, 0, true}), Tensor::from({1, 1, 2, 2}, {3, 2, 6, 5})));
}

TEST(Augment, FullSizeTransformsPreservePsnr) {
  const Tensor a = random_tensor({1, 3, 12, 12}, 5, 0, 1), b = random_tensor({1, 3, 12, 12}, 6, 0, 1);
  const FramePair p{a, b, "noise", "f"};
  for (int rot = 0; rot < 4; ++rot)
    for (bool flip : {false, true}) {
      const FramePair q = augment(p, {12, 0, 0, rot, flip});
      EXPECT_NEAR(psnr(q.degraded, q.clean), psnr(a, b), 1e-12);
    }
}

TEST(Augment, PairStaysAligned) {
  const Tensor a = random_tensor({1, 3, 10, 14}, 7, 0, 1);
  Rng rng(8);
  for (int i = 0; i < 20; ++i) {
    const AugmentSpec s = draw_augment(10, 14, 6, rng);
    const FramePair q = augment({a, a, "t", "f"}, s);
    EXPECT_TRUE(bitwise_equal(q.degraded, q.clean));
    EXPECT_EQ(q.clean.shape(), (Shape{1, 3, 6, 6}));
  }
}

TEST(Augment, OversizedCropIsRejected) {
  Rng rng(1);
  EXPECT_THROW(draw_augment(8, 16, 9, rng), ConfigError);
  EXPECT_THROW(apply_augment(random_tensor({1, 3, 8, 8}, 1), {4, 6, 0, 0, false}), ConfigError);
  EXPECT_THROW(augment({random_tensor({1, 3, 8, 8}, 1), random_tensor({1, 3, 8, 9}, 1), "", ""}, {4, 0, 0, 0, false}),
               ShapeError);
}

// --- procedural footage and dataset generation -------------------------------------------

TEST(Synthetic, FramesAreDeterministicAndInRange) {
  const auto a = synthesize_frames(6, 16, 20, 3), b = synthesize_frames(6, 16, 20, 3);
  ASSERT_EQ(a.size(), 6u);
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_TRUE(bitwise_equal(a[i], b[i]));
    for (double v : a[i].data()) EXPECT_TRUE(v >= 0 && v <= 1);
  }
  EXPECT_FALSE(bitwise_equal(a[0], a[1]));
}

TEST(Dataset, GenerationIsDeterministicWithDisjointSplits) {
  TempDir dir("dataset");
  write_synthetic_clips(dir.path / "clean", 10, 12, 16, 1);
  DataConfig data;
  data.val_fraction = 0.2;
  data.test_fraction = 0.2;
  MixtureConfig mix;
  const ClipManifest m1 = generate_dataset(dir.path / "clean", dir.path / "out1", mix, data, 4);
  const ClipManifest m2 = generate_dataset(dir.path / "clean", dir.path / "out2", mix, data, 4);
  EXPECT_EQ(m1.clips, m2.clips);
  EXPECT_EQ(m1.split("val").size(), 2u);
  EXPECT_EQ(m1.split("test").size(), 2u);
  EXPECT_EQ(m1.split("train").size(), 6u);
  std::set<std::string> ids;
  for (const auto& c : m1.clips) EXPECT_TRUE(ids.insert(c.clip_id).second);

  write_manifest(m1, dir.path / "out1" / "manifest.jsonl");
  const ClipManifest back = read_manifest(dir.path / "out1" / "manifest.jsonl");
  const auto pairs = load_pairs(back, "train");
  std::size_t expected = 0;
  for (const auto* c : back.split("train")) expected += c->frames.size();
  ASSERT_EQ(pairs.size(), expected);
  const ClipRecord& c0 = *back.split("train").front();
  EXPECT_TRUE(bitwise_equal(pairs.front().clean, load_image(c0.frames.front())));
  EXPECT_EQ(pairs.front().task, to_string(c0.specs.front().kind));
  EXPECT_EQ(pairs.front().frame_id, c0.clip_id + "/" + fs::path(c0.frames.front()).stem().string());
  EXPECT_THROW(load_pairs(back, "holdout"), ConfigError);
}

TEST(Dataset, EmptyInputDirectoryIsAConfigError) {
  TempDir dir("dataset_empty");
  try {
    generate_dataset(dir.path, dir.path / "out", MixtureConfig{}, DataConfig{}, 1);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("no input frames"), std::string::npos);
  }
  EXPECT_THROW(generate_dataset(dir.path / "missing", dir.path / "out", MixtureConfig{}, DataConfig{}, 1), IoError);
}

}  // namespace
}  // namespace uniflow
