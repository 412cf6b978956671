#pragma once

// Clip manifests, per-second frame sampling, lossless pair augmentation,
// procedural clean footage and on-disk dataset generation.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "uniflow/degrade.hpp"
#include "uniflow/image_io.hpp"
#include "uniflow/rng.hpp"
#include "uniflow/tensor.hpp"

namespace uniflow {

// ---------------------------------------------------------------------------
// manifest
// ---------------------------------------------------------------------------

/// One clip. `degraded` and `specs`, when present, run parallel to `frames`.
struct ClipRecord {
  std::string clip_id;
  std::vector<std::string> frames;
  int fps = 10;
  std::string split = "train";
  std::vector<std::string> degraded;
  std::vector<DegradationSpec> specs;

  friend bool operator==(const ClipRecord&, const ClipRecord&) = default;
};

inline bool valid_split(const std::string& s) { return s == "train" || s == "val" || s == "test"; }

inline nlohmann::json to_json(const ClipRecord& r) {
  nlohmann::json j = {{"clip_id", r.clip_id}, {"frames", r.frames}, {"fps", r.fps}, {"split", r.split}};
  if (!r.degraded.empty()) j["degraded"] = r.degraded;
  if (!r.specs.empty()) {
    nlohmann::json specs = nlohmann::json::array();
    for (const auto& s : r.specs) specs.push_back(to_json(s));
    j["specs"] = specs;
  }
  return j;
}

inline ClipRecord clip_from_json(const nlohmann::json& j) {
  ClipRecord r;
  try {
    for (const auto& [key, _] : j.items()) {
      if (key != "clip_id" && key != "frames" && key != "fps" && key != "split" && key != "degraded" && key != "specs")
        throw ConfigError("unknown manifest key '" + key + "'");
    }
    r.clip_id = j.at("clip_id").get<std::string>();
    r.frames = j.at("frames").get<std::vector<std::string>>();
    r.fps = j.at("fps").get<int>();
    r.split = j.at("split").get<std::string>();
    if (j.contains("degraded")) r.degraded = j["degraded"].get<std::vector<std::string>>();
    if (j.contains("specs"))
      for (const auto& s : j["specs"]) r.specs.push_back(spec_from_json(s));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed manifest record: ") + e.what());
  }
  if (r.frames.empty()) throw ConfigError("clip '" + r.clip_id + "' has no frames");
  if (r.fps < 1) throw ConfigError("clip '" + r.clip_id + "' has fps < 1");
  if (!valid_split(r.split)) throw ConfigError("clip '" + r.clip_id + "' has unknown split '" + r.split + "'");
  if (!r.degraded.empty() && r.degraded.size() != r.frames.size())
    throw ConfigError("clip '" + r.clip_id + "': degraded list does not match frames");
  if (!r.specs.empty() && r.specs.size() != r.frames.size())
    throw ConfigError("clip '" + r.clip_id + "': spec list does not match frames");
  return r;
}

/// JSON-lines clip list. Relative frame paths resolve against `base_dir`.
struct ClipManifest {
  std::vector<ClipRecord> clips;
  std::filesystem::path base_dir;

  std::filesystem::path resolve(const std::string& p) const {
    const std::filesystem::path path(p);
    return path.is_absolute() ? path : base_dir / path;
  }

  std::vector<const ClipRecord*> split(const std::string& name) const {
    std::vector<const ClipRecord*> out;
    for (const auto& c : clips)
      if (c.split == name) out.push_back(&c);
    return out;
  }

  /// Unique clip ids (so splits are disjoint) and, optionally, existing files.
  void validate(bool check_paths) const {
    std::set<std::string> ids;
    for (const auto& c : clips) {
      if (!ids.insert(c.clip_id).second) throw ConfigError("duplicate clip id '" + c.clip_id + "'");
      if (!check_paths) continue;
      for (const auto* list : {&c.frames, &c.degraded})
        for (const auto& f : *list)
          if (!std::filesystem::exists(resolve(f))) throw IoError("manifest frame not found: " + resolve(f).string());
    }
  }
};

inline ClipManifest read_manifest(const std::filesystem::path& path, bool check_paths = true) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot open manifest " + path.string());
  ClipManifest m;
  m.base_dir = path.parent_path();
  std::string line;
  int line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      m.clips.push_back(clip_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    } catch (const ConfigError& e) {
      throw ConfigError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  m.validate(check_paths);
  return m;
}

inline void write_manifest(const ClipManifest& m, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write manifest " + path.string());
  for (const auto& c : m.clips) os << to_json(c).dump() << '\n';
  if (!os) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// frame sampling
// ---------------------------------------------------------------------------

/// Indices of `rate` frames per second of footage (rate in [3, 10], capped
/// at the clip fps), one per equal slot of each second with a uniform jitter
/// inside the slot. A trailing partial second gets a proportional share.
inline std::vector<std::size_t> sample_frames(const ClipRecord& clip, int rate, Rng& rng) {
  if (rate < 3 || rate > 10) throw ConfigError("frame rate must lie in [3, 10], got " + std::to_string(rate));
  const auto total = static_cast<std::int64_t>(clip.frames.size());
  if (total == 0) throw ConfigError("clip '" + clip.clip_id + "' has no frames");
  const std::int64_t fps = clip.fps;
  const std::int64_t r = std::min<std::int64_t>(rate, fps);
  std::vector<std::size_t> out;
  for (std::int64_t start = 0; start < total; start += fps) {
    const std::int64_t len = std::min(fps, total - start);
    const std::int64_t picks = std::max<std::int64_t>(1, (r * len + fps - 1) / fps);
    const double slot = static_cast<double>(len) / static_cast<double>(picks);
    for (std::int64_t k = 0; k < picks; ++k) {
      auto idx = static_cast<std::int64_t>(std::floor((static_cast<double>(k) + rng.uniform()) * slot));
      idx = std::clamp<std::int64_t>(idx, static_cast<std::int64_t>(std::ceil(k * slot)), len - 1);
      out.push_back(static_cast<std::size_t>(start + idx));
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// augmentation
// ---------------------------------------------------------------------------

/// Crop at (y0, x0), optional horizontal flip, then `rotation` quarter turns
/// counter-clockwise.
struct AugmentSpec {
  std::int64_t crop = 64;
  std::int64_t y0 = 0;
  std::int64_t x0 = 0;
  int rotation = 0;
  bool flip = false;
};

inline AugmentSpec draw_augment(std::int64_t h, std::int64_t w, std::int64_t crop, Rng& rng) {
  if (crop > h || crop > w) throw ConfigError("crop " + std::to_string(crop) + " exceeds frame " + std::to_string(h) + "x" + std::to_string(w));
  AugmentSpec a;
  a.crop = crop;
  a.y0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(h - crop + 1)));
  a.x0 = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(w - crop + 1)));
  a.rotation = static_cast<int>(rng.below(4));
  a.flip = rng.below(2) == 1;
  return a;
}

/// Quarter-turn counter-clockwise rotation: out(y, x) = in(x, W - 1 - y).
inline Tensor rotate90(const Tensor& t) {
  const Shape s = t.shape();
  Tensor out = Tensor::zeros({s.n, s.c, s.w, s.h});
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    const double* src = t.data().data() + p * s.plane();
    double* dst = out.data().data() + p * s.plane();
    for (std::int64_t y = 0; y < s.w; ++y)
      for (std::int64_t x = 0; x < s.h; ++x) dst[y * s.h + x] = src[x * s.w + (s.w - 1 - y)];
  }
  return out;
}

inline Tensor apply_augment(const Tensor& t, const AugmentSpec& a) {
  const Shape s = t.shape();
  if (a.crop > s.h || a.crop > s.w) throw ConfigError("crop " + std::to_string(a.crop) + " exceeds frame " + s.str());
  if (a.y0 < 0 || a.x0 < 0 || a.y0 + a.crop > s.h || a.x0 + a.crop > s.w) throw ConfigError("crop window outside frame");
  Tensor out = Tensor::zeros({s.n, s.c, a.crop, a.crop});
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    const double* src = t.data().data() + p * s.plane();
    double* dst = out.data().data() + p * a.crop * a.crop;
    for (std::int64_t y = 0; y < a.crop; ++y)
      for (std::int64_t x = 0; x < a.crop; ++x) {
        const std::int64_t sx = a.flip ? a.x0 + a.crop - 1 - x : a.x0 + x;
        dst[y * a.crop + x] = src[(a.y0 + y) * s.w + sx];
      }
  }
  for (int r = 0; r < ((a.rotation % 4) + 4) % 4; ++r) out = rotate90(out);
  return out;
}

struct FramePair {
  Tensor degraded;
  Tensor clean;
  std::string task;  // degradation kind; diagnostics only
  std::string frame_id;
};

/// The same geometric transform on both frames.
inline FramePair augment(const FramePair& p, const AugmentSpec& a) {
  if (p.degraded.shape() != p.clean.shape()) throw ShapeError("augment: pair frames differ in shape");
  return {apply_augment(p.degraded, a), apply_augment(p.clean, a), p.task, p.frame_id};
}

// ---------------------------------------------------------------------------
// procedural footage
// ---------------------------------------------------------------------------

/// A piecewise-smooth scene: gradient background, soft-edged discs and
/// boxes drifting at constant velocity, and a striped patch.
struct SyntheticScene {
  struct Blob {
    bool disc = true;
    double cy = 0, cx = 0, ry = 0, rx = 0;  // unit-square coordinates
    double vy = 0, vx = 0;                  // per frame
    double color[3] = {0, 0, 0};
  };
  double top[3] = {0, 0, 0};
  double bottom[3] = {0, 0, 0};
  double tilt = 0;
  std::vector<Blob> blobs;
  double stripe_freq = 0, stripe_angle = 0, stripe_amp = 0;
  double stripe_cy = 0, stripe_cx = 0, stripe_r = 0;

  static SyntheticScene random(Rng& rng) {
    SyntheticScene s;
    for (int c = 0; c < 3; ++c) {
      s.top[c] = rng.uniform(0.1, 0.9);
      s.bottom[c] = rng.uniform(0.1, 0.9);
    }
    s.tilt = rng.uniform(-0.5, 0.5);
    const int n = 3 + static_cast<int>(rng.below(4));
    for (int i = 0; i < n; ++i) {
      Blob b;
      b.disc = rng.below(2) == 0;
      b.cy = rng.uniform(0.1, 0.9);
      b.cx = rng.uniform(0.1, 0.9);
      b.ry = rng.uniform(0.06, 0.25);
      b.rx = b.disc ? b.ry : rng.uniform(0.06, 0.25);
      b.vy = rng.uniform(-0.02, 0.02);
      b.vx = rng.uniform(-0.02, 0.02);
      for (double& c : b.color) c = rng.uniform(0.05, 0.95);
      s.blobs.push_back(b);
    }
    s.stripe_freq = rng.uniform(4, 12);
    s.stripe_angle = rng.uniform(0, std::numbers::pi);
    s.stripe_amp = rng.uniform(0.05, 0.2);
    s.stripe_cy = rng.uniform(0.2, 0.8);
    s.stripe_cx = rng.uniform(0.2, 0.8);
    s.stripe_r = rng.uniform(0.1, 0.3);
    return s;
  }

  /// Frame `t` at h x w, values in [0, 1].
  Tensor render(std::int64_t h, std::int64_t w, int t = 0) const {
    Tensor out = Tensor::zeros({1, 3, h, w});
    const double soft = 1.5 / static_cast<double>(std::max(h, w));
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const double fy = (static_cast<double>(y) + 0.5) / static_cast<double>(h);
        const double fx = (static_cast<double>(x) + 0.5) / static_cast<double>(w);
        const double g = std::clamp(fy + tilt * (fx - 0.5), 0.0, 1.0);
        double px[3];
        for (int c = 0; c < 3; ++c) px[c] = top[c] * (1 - g) + bottom[c] * g;
        for (const Blob& b : blobs) {
          const double dy = (fy - (b.cy + b.vy * t)) / b.ry, dx = (fx - (b.cx + b.vx * t)) / b.rx;
          const double dist = b.disc ? std::sqrt(dy * dy + dx * dx) : std::max(std::abs(dy), std::abs(dx));
          // Coverage ramps over ~1.5 pixels at the boundary.
          const double cover = std::clamp((1.0 - dist) * std::min(b.ry, b.rx) / soft + 0.5, 0.0, 1.0);
          for (int c = 0; c < 3; ++c) px[c] = px[c] * (1 - cover) + b.color[c] * cover;
        }
        const double sy = fy - stripe_cy, sx = fx - stripe_cx;
        if (sy * sy + sx * sx < stripe_r * stripe_r) {
          const double phase = 2 * std::numbers::pi * stripe_freq * (sx * std::cos(stripe_angle) + sy * std::sin(stripe_angle));
          for (double& v : px) v += stripe_amp * std::sin(phase);
        }
        for (int c = 0; c < 3; ++c) out.at(0, c, y, x) = std::clamp(px[c], 0.0, 1.0);
      }
    return out;
  }
};

/// `count` independent scenes, frame 0 of each.
inline std::vector<Tensor> synthesize_frames(std::size_t count, std::int64_t h, std::int64_t w, std::uint64_t seed) {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < count; ++i) {
    Rng rng(mix_seed(seed, i));
    out.push_back(SyntheticScene::random(rng).render(h, w));
  }
  return out;
}

/// Writes clips/<clip_xxx>/frame_yyy.ppm for `clips` scenes of `frames` frames each.
inline void write_synthetic_clips(const std::filesystem::path& dir, int clips, int frames, std::int64_t size,
                                  std::uint64_t seed) {
  if (clips < 1 || frames < 1 || size < 1) throw ConfigError("synthetic clips need clips, frames and size >= 1");
  for (int c = 0; c < clips; ++c) {
    Rng rng(mix_seed(seed, static_cast<std::uint64_t>(c)));
    const SyntheticScene scene = SyntheticScene::random(rng);
    char clip[32];
    std::snprintf(clip, sizeof clip, "clip_%03d", c);
    for (int f = 0; f < frames; ++f) {
      char name[32];
      std::snprintf(name, sizeof name, "frame_%03d.ppm", f);
      save_image(scene.render(size, size, f), dir / clip / name);
    }
  }
}

// ---------------------------------------------------------------------------
// dataset generation
// ---------------------------------------------------------------------------

struct DataConfig {
  int frame_rate = 5;  // frames sampled per second of footage, [3, 10]
  int fps = 10;        // assumed frame rate of the clean footage
  double val_fraction = 0.1;
  double test_fraction = 0.1;

  void validate() const {
    if (frame_rate < 3 || frame_rate > 10) throw ConfigError("data.frame_rate must lie in [3, 10]");
    if (fps < 1) throw ConfigError("data.fps must be >= 1");
    if (!(val_fraction >= 0 && test_fraction >= 0 && val_fraction + test_fraction < 1))
      throw ConfigError("data.val_fraction + data.test_fraction must lie in [0, 1)");
  }

  friend bool operator==(const DataConfig&, const DataConfig&) = default;
};

/// Clean clips found under `dir`: every subdirectory holding .ppm files is a
/// clip (frames sorted by name); every top-level .ppm file is a one-frame clip.
inline std::vector<ClipRecord> discover_clean_clips(const std::filesystem::path& dir, int fps) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw IoError("clean directory not found: " + dir.string());
  std::vector<fs::path> entries;
  for (const auto& e : fs::directory_iterator(dir)) entries.push_back(e.path());
  std::sort(entries.begin(), entries.end());
  std::vector<ClipRecord> clips;
  for (const auto& p : entries) {
    if (fs::is_directory(p)) {
      std::vector<std::string> frames;
      for (const auto& f : fs::directory_iterator(p))
        if (f.path().extension() == ".ppm") frames.push_back(fs::absolute(f.path()).string());
      std::sort(frames.begin(), frames.end());
      if (!frames.empty()) clips.push_back({p.filename().string(), frames, fps, "train", {}, {}});
    } else if (p.extension() == ".ppm") {
      clips.push_back({p.stem().string(), {fs::absolute(p).string()}, fps, "train", {}, {}});
    }
  }
  if (clips.empty()) throw ConfigError("no input frames in " + dir.string());
  return clips;
}

/// Samples frames of every clean clip, degrades each with a spec drawn from
/// `mix`, writes the degraded frames under out_dir/<clip_id>/ and returns the
/// manifest (clips assigned to splits by a seeded shuffle). Deterministic in
/// (inputs, mix, data, seed).
inline ClipManifest generate_dataset(const std::filesystem::path& clean_dir, const std::filesystem::path& out_dir,
                                     const MixtureConfig& mix, const DataConfig& data, std::uint64_t seed) {
  mix.validate();
  data.validate();
  std::vector<ClipRecord> clean = discover_clean_clips(clean_dir, data.fps);

  std::vector<std::size_t> order(clean.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  Rng split_rng(mix_seed(seed, 0x5u));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[split_rng.below(i)]);
  const auto n = static_cast<double>(clean.size());
  const auto n_val = static_cast<std::size_t>(std::round(data.val_fraction * n));
  const auto n_test = static_cast<std::size_t>(std::round(data.test_fraction * n));
  for (std::size_t k = 0; k < order.size(); ++k)
    clean[order[k]].split = k < n_val ? "val" : k < n_val + n_test ? "test" : "train";

  ClipManifest m;
  m.base_dir = out_dir;
  for (std::size_t c = 0; c < clean.size(); ++c) {
    const ClipRecord& src = clean[c];
    Rng rng(mix_seed(seed ^ mix.seed, c + 1));
    ClipRecord rec{src.clip_id, {}, src.fps, src.split, {}, {}};
    for (std::size_t idx : sample_frames(src, data.frame_rate, rng)) {
      const Tensor frame = load_image(src.frames[idx]);
      DegradationSpec spec = sample_spec(mix, rng);
      const std::string rel = src.clip_id + "/" + std::filesystem::path(src.frames[idx]).filename().string();
      save_image(apply(spec, frame), out_dir / rel);
      rec.frames.push_back(src.frames[idx]);
      rec.degraded.push_back(rel);
      rec.specs.push_back(spec);
    }
    m.clips.push_back(std::move(rec));
  }
  return m;
}

/// Every (degraded, clean) pair of the clips in `split`; requires degraded frames.
inline std::vector<FramePair> load_pairs(const ClipManifest& m, const std::string& split) {
  if (!valid_split(split)) throw ConfigError("unknown split '" + split + "'");
  std::vector<FramePair> out;
  for (const ClipRecord* c : m.split(split)) {
    if (c->degraded.empty()) throw ConfigError("clip '" + c->clip_id + "' lists no degraded frames");
    for (std::size_t i = 0; i < c->frames.size(); ++i) {
      FramePair p;
      p.clean = load_image(m.resolve(c->frames[i]));
      p.degraded = load_image(m.resolve(c->degraded[i]));
      if (p.clean.shape() != p.degraded.shape()) throw ShapeError("pair shape mismatch in clip '" + c->clip_id + "'");
      p.task = c->specs.empty() ? "unknown" : to_string(c->specs[i].kind);
      p.frame_id = c->clip_id + "/" + std::filesystem::path(c->frames[i]).stem().string();
      out.push_back(std::move(p));
    }
  }
  return out;
}

}  // namespace uniflow
