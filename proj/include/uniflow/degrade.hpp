#pragma once

// Seeded synthetic corruptions and the category mixture used to build
// (degraded, clean) training pairs.
//
// Parameter ranges accepted by apply():
//   gaussian_blur        sigma in [0, 5]           kernel radius ceil(3 sigma)
//   motion_blur          length in [1, 31], angle in [0, 360) degrees
//   gaussian_noise       sigma in [0, 1]
//   salt_pepper          p in [0, 1]
//   block_compress       q in [0, 1]               step q * (1 + u + v)
//   haze                 t0 in [0, 1], airlight in [0, 1]
//   rain                 density in [0, 1], length in [1, 31], angle in [0, 360),
//                        intensity in [0, 1]
//   compound_blur_noise  sigma in [0, 5], noise_sigma in [0, 1]
// Every kind has an identity setting (sigma 0, length 1, p 0, q 0, t0 1,
// intensity 0).

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"

#include "uniflow/error.hpp"
#include "uniflow/rng.hpp"
#include "uniflow/tensor.hpp"

namespace uniflow {

enum class DegradationKind {
  gaussian_blur,
  motion_blur,
  gaussian_noise,
  salt_pepper,
  block_compress,
  haze,
  rain,
  compound_blur_noise,
};

enum class DegradationCategory { blur, noise, compression, weather, other };

inline constexpr std::array<DegradationKind, 8> kAllDegradationKinds = {
    DegradationKind::gaussian_blur,  DegradationKind::motion_blur, DegradationKind::gaussian_noise,
    DegradationKind::salt_pepper,    DegradationKind::block_compress, DegradationKind::haze,
    DegradationKind::rain,           DegradationKind::compound_blur_noise};

inline const char* to_string(DegradationKind k) {
  switch (k) {
    case DegradationKind::gaussian_blur: return "gaussian_blur";
    case DegradationKind::motion_blur: return "motion_blur";
    case DegradationKind::gaussian_noise: return "gaussian_noise";
    case DegradationKind::salt_pepper: return "salt_pepper";
    case DegradationKind::block_compress: return "block_compress";
    case DegradationKind::haze: return "haze";
    case DegradationKind::rain: return "rain";
    case DegradationKind::compound_blur_noise: return "compound_blur_noise";
  }
  return "?";
}

inline DegradationKind degradation_kind_from_string(const std::string& s) {
  for (DegradationKind k : kAllDegradationKinds)
    if (s == to_string(k)) return k;
  throw ConfigError("unknown degradation kind '" + s + "'");
}

inline DegradationCategory category_of(DegradationKind k) {
  switch (k) {
    case DegradationKind::gaussian_blur:
    case DegradationKind::motion_blur: return DegradationCategory::blur;
    case DegradationKind::gaussian_noise:
    case DegradationKind::salt_pepper: return DegradationCategory::noise;
    case DegradationKind::block_compress: return DegradationCategory::compression;
    case DegradationKind::haze:
    case DegradationKind::rain: return DegradationCategory::weather;
    case DegradationKind::compound_blur_noise: return DegradationCategory::other;
  }
  return DegradationCategory::other;
}

inline const char* to_string(DegradationCategory c) {
  switch (c) {
    case DegradationCategory::blur: return "blur";
    case DegradationCategory::noise: return "noise";
    case DegradationCategory::compression: return "compression";
    case DegradationCategory::weather: return "weather";
    case DegradationCategory::other: return "other";
  }
  return "?";
}

/// One corruption. Only the fields used by `kind` are meaningful and serialised.
struct DegradationSpec {
  DegradationKind kind = DegradationKind::gaussian_noise;
  double sigma = 0;        // blur sigma (gaussian_blur, compound_blur_noise)
  double noise_sigma = 0;  // gaussian_noise, compound_blur_noise
  double length = 1;       // motion_blur, rain
  double angle = 0;        // degrees; motion_blur, rain
  double p = 0;            // salt_pepper
  double q = 0;            // block_compress
  double t0 = 1;           // haze transmission
  double airlight = 1;     // haze
  double density = 0;      // rain
  double intensity = 0;    // rain
  std::uint64_t seed = 0;

  friend bool operator==(const DegradationSpec&, const DegradationSpec&) = default;
};

namespace detail_degrade {

inline void check_range(const char* name, double v, double lo, double hi) {
  if (!(v >= lo && v <= hi)) {
    throw ConfigError(std::string("degradation parameter ") + name + " = " + std::to_string(v) + " outside [" +
                      std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
}

// Names and accessors of the parameters each kind uses, in serialisation order.
using Field = std::pair<const char*, double DegradationSpec::*>;

inline std::vector<Field> fields_of(DegradationKind k) {
  using S = DegradationSpec;
  switch (k) {
    case DegradationKind::gaussian_blur: return {{"sigma", &S::sigma}};
    case DegradationKind::motion_blur: return {{"length", &S::length}, {"angle", &S::angle}};
    case DegradationKind::gaussian_noise: return {{"sigma", &S::noise_sigma}};
    case DegradationKind::salt_pepper: return {{"p", &S::p}};
    case DegradationKind::block_compress: return {{"q", &S::q}};
    case DegradationKind::haze: return {{"t0", &S::t0}, {"airlight", &S::airlight}};
    case DegradationKind::rain:
      return {{"density", &S::density}, {"length", &S::length}, {"angle", &S::angle}, {"intensity", &S::intensity}};
    case DegradationKind::compound_blur_noise: return {{"sigma", &S::sigma}, {"noise_sigma", &S::noise_sigma}};
  }
  return {};
}

// Reflect-101 index: -1 -> 1, n -> n - 2.
inline std::int64_t reflect101(std::int64_t i, std::int64_t n) {
  if (n == 1) return 0;
  const std::int64_t period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}

inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(static_cast<std::size_t>(2 * radius + 1), 1.0);
  if (radius == 0) return k;
  double total = 0;
  for (int i = -radius; i <= radius; ++i) total += k[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
  for (double& v : k) v /= total;
  return k;
}

// Separable blur of every plane with reflect-101 borders.
inline void separable_blur(Tensor& t, const std::vector<double>& k) {
  if (k.size() == 1) return;
  const Shape s = t.shape();
  const std::int64_t r = static_cast<std::int64_t>(k.size() / 2);
  std::vector<double> tmp(static_cast<std::size_t>(s.plane()));
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    double* img = t.data().data() + p * s.plane();
    for (std::int64_t y = 0; y < s.h; ++y)
      for (std::int64_t x = 0; x < s.w; ++x) {
        double acc = 0;
        for (std::int64_t d = -r; d <= r; ++d) acc += k[static_cast<std::size_t>(d + r)] * img[y * s.w + reflect101(x + d, s.w)];
        tmp[static_cast<std::size_t>(y * s.w + x)] = acc;
      }
    for (std::int64_t y = 0; y < s.h; ++y)
      for (std::int64_t x = 0; x < s.w; ++x) {
        double acc = 0;
        for (std::int64_t d = -r; d <= r; ++d) acc += k[static_cast<std::size_t>(d + r)] * tmp[static_cast<std::size_t>(reflect101(y + d, s.h) * s.w + x)];
        img[y * s.w + x] = acc;
      }
  }
}

// Normalised line kernel of `length` taps along `angle`, bilinearly splatted
// onto a square grid. Length 1 is the delta kernel.
struct Kernel2d {
  std::int64_t size = 1;
  std::vector<double> w{1.0};
};

inline Kernel2d line_kernel(double length, double angle_deg) {
  Kernel2d k;
  const int taps = std::max(1, static_cast<int>(std::lround(length)));
  if (taps == 1) return k;
  const std::int64_t half = (taps + 1) / 2;
  k.size = 2 * half + 1;
  k.w.assign(static_cast<std::size_t>(k.size * k.size), 0.0);
  const double a = angle_deg * std::numbers::pi / 180.0;
  const double dx = std::cos(a), dy = -std::sin(a);
  for (int i = 0; i < taps; ++i) {
    const double s = i - (taps - 1) / 2.0;
    const double fx = half + s * dx, fy = half + s * dy;
    const auto x0 = static_cast<std::int64_t>(std::floor(fx)), y0 = static_cast<std::int64_t>(std::floor(fy));
    const double ax = fx - x0, ay = fy - y0;
    const double wts[4] = {(1 - ax) * (1 - ay), ax * (1 - ay), (1 - ax) * ay, ax * ay};
    const std::int64_t xs[4] = {x0, x0 + 1, x0, x0 + 1}, ys[4] = {y0, y0, y0 + 1, y0 + 1};
    for (int j = 0; j < 4; ++j) {
      if (xs[j] < 0 || xs[j] >= k.size || ys[j] < 0 || ys[j] >= k.size) continue;
      k.w[static_cast<std::size_t>(ys[j] * k.size + xs[j])] += wts[j];
    }
  }
  double total = 0;
  for (double v : k.w) total += v;
  for (double& v : k.w) v /= total;
  return k;
}

inline void filter2d(Tensor& t, const Kernel2d& k) {
  if (k.size == 1) return;
  const Shape s = t.shape();
  const std::int64_t r = k.size / 2;
  std::vector<double> src(static_cast<std::size_t>(s.plane()));
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    double* img = t.data().data() + p * s.plane();
    std::copy(img, img + s.plane(), src.begin());
    for (std::int64_t y = 0; y < s.h; ++y)
      for (std::int64_t x = 0; x < s.w; ++x) {
        double acc = 0;
        for (std::int64_t ky = 0; ky < k.size; ++ky) {
          const std::int64_t iy = reflect101(y + ky - r, s.h);
          for (std::int64_t kx = 0; kx < k.size; ++kx) {
            const double wv = k.w[static_cast<std::size_t>(ky * k.size + kx)];
            if (wv != 0.0) acc += wv * src[static_cast<std::size_t>(iy * s.w + reflect101(x + kx - r, s.w))];
          }
        }
        img[y * s.w + x] = acc;
      }
  }
}

// Orthonormal 8-point DCT-II basis: basis[u][x].
inline const std::array<std::array<double, 8>, 8>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> b{};
    for (int u = 0; u < 8; ++u)
      for (int x = 0; x < 8; ++x)
        b[u][x] = (u == 0 ? std::sqrt(1.0 / 8) : std::sqrt(2.0 / 8)) * std::cos((2 * x + 1) * u * std::numbers::pi / 16);
    return b;
  }();
  return basis;
}

// 8x8 block DCT quantisation; partial edge blocks are edge-extended and cropped.
inline void block_quantize(Tensor& t, double q) {
  const auto& b = dct_basis();
  const Shape s = t.shape();
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    double* img = t.data().data() + p * s.plane();
    for (std::int64_t by = 0; by < s.h; by += 8)
      for (std::int64_t bx = 0; bx < s.w; bx += 8) {
        double blk[8][8], tmp[8][8], coef[8][8];
        for (int y = 0; y < 8; ++y)
          for (int x = 0; x < 8; ++x)
            blk[y][x] = img[std::min(by + y, s.h - 1) * s.w + std::min(bx + x, s.w - 1)];
        for (int u = 0; u < 8; ++u)
          for (int x = 0; x < 8; ++x) {
            double acc = 0;
            for (int y = 0; y < 8; ++y) acc += b[u][y] * blk[y][x];
            tmp[u][x] = acc;
          }
        for (int u = 0; u < 8; ++u)
          for (int v = 0; v < 8; ++v) {
            double acc = 0;
            for (int x = 0; x < 8; ++x) acc += tmp[u][x] * b[v][x];
            const double step = q * (1 + u + v);
            coef[u][v] = step * std::round(acc / step);
          }
        for (int y = 0; y < 8; ++y)
          for (int v = 0; v < 8; ++v) {
            double acc = 0;
            for (int u = 0; u < 8; ++u) acc += b[u][y] * coef[u][v];
            tmp[y][v] = acc;
          }
        for (int y = 0; y < 8 && by + y < s.h; ++y)
          for (int x = 0; x < 8 && bx + x < s.w; ++x) {
            double acc = 0;
            for (int v = 0; v < 8; ++v) acc += tmp[y][v] * b[v][x];
            img[(by + y) * s.w + bx + x] = acc;
          }
      }
  }
}

inline void add_gaussian_noise(Tensor& t, double sigma, Rng& rng) {
  if (sigma == 0) return;
  for (double& v : t.data()) v += sigma * rng.normal();
}

}  // namespace detail_degrade

/// Throws ConfigError when a used parameter lies outside its documented range.
inline void validate(const DegradationSpec& s) {
  using detail_degrade::check_range;
  switch (s.kind) {
    case DegradationKind::gaussian_blur: check_range("sigma", s.sigma, 0, 5); break;
    case DegradationKind::motion_blur:
      check_range("length", s.length, 1, 31);
      check_range("angle", s.angle, 0, 360);
      break;
    case DegradationKind::gaussian_noise: check_range("sigma", s.noise_sigma, 0, 1); break;
    case DegradationKind::salt_pepper: check_range("p", s.p, 0, 1); break;
    case DegradationKind::block_compress: check_range("q", s.q, 0, 1); break;
    case DegradationKind::haze:
      check_range("t0", s.t0, 0, 1);
      check_range("airlight", s.airlight, 0, 1);
      break;
    case DegradationKind::rain:
      check_range("density", s.density, 0, 1);
      check_range("length", s.length, 1, 31);
      check_range("angle", s.angle, 0, 360);
      check_range("intensity", s.intensity, 0, 1);
      break;
    case DegradationKind::compound_blur_noise:
      check_range("sigma", s.sigma, 0, 5);
      check_range("noise_sigma", s.noise_sigma, 0, 1);
      break;
  }
}

/// Applies `spec` to every sample of `clean`. A pure function of (spec,
/// clean). With `clamp` false the result is left unclamped, which is how
/// noise statistics are measured.
inline Tensor apply(const DegradationSpec& spec, const Tensor& clean, bool clamp = true) {
  using namespace detail_degrade;
  validate(spec);
  if (clean.shape().c != 3) throw ShapeError("apply: expected 3-channel frames, got " + clean.shape().str());
  Tensor out = clean.detach();
  Rng rng(spec.seed);
  const Shape s = out.shape();
  switch (spec.kind) {
    case DegradationKind::gaussian_blur: separable_blur(out, gaussian_kernel(spec.sigma)); break;
    case DegradationKind::motion_blur: filter2d(out, line_kernel(spec.length, spec.angle)); break;
    case DegradationKind::gaussian_noise: add_gaussian_noise(out, spec.noise_sigma, rng); break;
    case DegradationKind::salt_pepper: {
      if (spec.p == 0) break;
      for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t i = 0; i < s.plane(); ++i) {
          const double u = rng.uniform();
          if (u >= spec.p) continue;
          const double v = u < spec.p / 2 ? 0.0 : 1.0;
          for (std::int64_t c = 0; c < s.c; ++c) out.data()[(n * s.c + c) * s.plane() + i] = v;
        }
      break;
    }
    case DegradationKind::block_compress:
      if (spec.q > 0) block_quantize(out, spec.q);
      break;
    case DegradationKind::haze:
      for (double& v : out.data()) v = v * spec.t0 + spec.airlight * (1 - spec.t0);
      break;
    case DegradationKind::rain: {
      if (spec.density == 0 || spec.intensity == 0) break;
      // Seed points blurred along the streak direction, rescaled so a
      // streak peaks near `intensity`.
      Tensor streaks = Tensor::zeros({s.n, 1, s.h, s.w});
      for (double& v : streaks.data())
        if (rng.uniform() < spec.density) v = spec.intensity * rng.uniform(0.5, 1.0);
      filter2d(streaks, line_kernel(spec.length, spec.angle));
      const double gain = std::max(1.0, std::round(spec.length));
      for (std::int64_t n = 0; n < s.n; ++n)
        for (std::int64_t c = 0; c < s.c; ++c)
          for (std::int64_t i = 0; i < s.plane(); ++i)
            out.data()[(n * s.c + c) * s.plane() + i] += gain * streaks.data()[n * s.plane() + i];
      break;
    }
    case DegradationKind::compound_blur_noise:
      separable_blur(out, gaussian_kernel(spec.sigma));
      add_gaussian_noise(out, spec.noise_sigma, rng);
      break;
  }
  if (clamp)
    for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

// ---------------------------------------------------------------------------
// serialisation
// ---------------------------------------------------------------------------

/// {"kind": ..., "params": {...}, "seed": ...}
inline nlohmann::json to_json(const DegradationSpec& s) {
  nlohmann::json params = nlohmann::json::object();
  for (auto [name, field] : detail_degrade::fields_of(s.kind)) params[name] = s.*field;
  return {{"kind", to_string(s.kind)}, {"params", params}, {"seed", s.seed}};
}

inline DegradationSpec spec_from_json(const nlohmann::json& j) {
  try {
    for (const auto& [key, _] : j.items())
      if (key != "kind" && key != "params" && key != "seed") throw ConfigError("unknown key '" + key + "' in degradation spec");
    DegradationSpec s;
    s.kind = degradation_kind_from_string(j.at("kind").get<std::string>());
    s.seed = j.at("seed").get<std::uint64_t>();
    const auto fields = detail_degrade::fields_of(s.kind);
    for (const auto& [key, value] : j.at("params").items()) {
      auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return key == f.first; });
      if (it == fields.end()) throw ConfigError("parameter '" + key + "' does not apply to " + to_string(s.kind));
      s.*(it->second) = value.get<double>();
    }
    validate(s);
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed degradation spec: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// mixture
// ---------------------------------------------------------------------------

struct Range {
  double lo = 0;
  double hi = 0;

  double draw(Rng& rng) const { return lo == hi ? lo : rng.uniform(lo, hi); }
  friend bool operator==(const Range&, const Range&) = default;
};

/// Parameter ranges the sampler draws from.
struct MixtureRanges {
  double gaussian_blur_share = 0.5;  // within blur; rest is motion blur
  Range blur_sigma{0.5, 2.0};
  Range motion_length{3, 9};
  Range motion_angle{0, 180};
  double gaussian_noise_share = 0.5;  // within noise; rest is salt-and-pepper
  Range noise_sigma{0.02, 0.15};
  Range salt_pepper_p{0.01, 0.08};
  Range compress_q{0.02, 0.1};
  double haze_share = 0.5;  // within weather; rest is rain
  Range haze_t0{0.5, 0.9};
  Range haze_airlight{0.7, 1.0};
  Range rain_density{0.005, 0.02};
  Range rain_length{5, 11};
  Range rain_angle{60, 120};
  Range rain_intensity{0.3, 0.7};
  Range compound_sigma{0.5, 1.5};
  Range compound_noise{0.02, 0.08};

  friend bool operator==(const MixtureRanges&, const MixtureRanges&) = default;
};

/// Category weights in the order blur, noise, compression, weather, other.
struct MixtureConfig {
  std::array<double, 5> weights{0.30, 0.25, 0.20, 0.15, 0.10};
  MixtureRanges ranges;
  std::uint64_t seed = 0;

  void validate() const {
    double total = 0;
    for (double w : weights) {
      if (!(w >= 0)) throw ConfigError("mixture weights must be non-negative");
      total += w;
    }
    if (std::abs(total - 1.0) > 1e-9) throw ConfigError("mixture weights must sum to 1, got " + std::to_string(total));
    for (double share : {ranges.gaussian_blur_share, ranges.gaussian_noise_share, ranges.haze_share})
      if (!(share >= 0 && share <= 1)) throw ConfigError("mixture kind shares must lie in [0, 1]");
  }

  friend bool operator==(const MixtureConfig&, const MixtureConfig&) = default;
};

/// Draws a category by weight, a kind within it, and parameters uniformly
/// from the configured ranges. Advancing `rng` is the only side effect.
inline DegradationSpec sample_spec(const MixtureConfig& mix, Rng& rng) {
  mix.validate();
  const double u = rng.uniform();
  int category = 0;
  double acc = 0;
  for (; category < 4; ++category) {
    acc += mix.weights[static_cast<std::size_t>(category)];
    if (u < acc) break;
  }
  while (mix.weights[static_cast<std::size_t>(category)] == 0 && category > 0) --category;

  const MixtureRanges& r = mix.ranges;
  DegradationSpec s;
  switch (static_cast<DegradationCategory>(category)) {
    case DegradationCategory::blur:
      if (rng.uniform() < r.gaussian_blur_share) {
        s.kind = DegradationKind::gaussian_blur;
        s.sigma = r.blur_sigma.draw(rng);
      } else {
        s.kind = DegradationKind::motion_blur;
        s.length = r.motion_length.draw(rng);
        s.angle = r.motion_angle.draw(rng);
      }
      break;
    case DegradationCategory::noise:
      if (rng.uniform() < r.gaussian_noise_share) {
        s.kind = DegradationKind::gaussian_noise;
        s.noise_sigma = r.noise_sigma.draw(rng);
      } else {
        s.kind = DegradationKind::salt_pepper;
        s.p = r.salt_pepper_p.draw(rng);
      }
      break;
    case DegradationCategory::compression:
      s.kind = DegradationKind::block_compress;
      s.q = r.compress_q.draw(rng);
      break;
    case DegradationCategory::weather:
      if (rng.uniform() < r.haze_share) {
        s.kind = DegradationKind::haze;
        s.t0 = r.haze_t0.draw(rng);
        s.airlight = r.haze_airlight.draw(rng);
      } else {
        s.kind = DegradationKind::rain;
        s.density = r.rain_density.draw(rng);
        s.length = r.rain_length.draw(rng);
        s.angle = r.rain_angle.draw(rng);
        s.intensity = r.rain_intensity.draw(rng);
      }
      break;
    case DegradationCategory::other:
      s.kind = DegradationKind::compound_blur_noise;
      s.sigma = r.compound_sigma.draw(rng);
      s.noise_sigma = r.compound_noise.draw(rng);
      break;
  }
  s.seed = rng.next_u64();
  return s;
}

struct DegradedPair {
  Tensor degraded;
  Tensor clean;
  DegradationSpec spec;
};

inline DegradedPair make_pair(const Tensor& clean, const MixtureConfig& mix, Rng& rng) {
  DegradationSpec spec = sample_spec(mix, rng);
  return {apply(spec, clean), clean, spec};
}

// ---------------------------------------------------------------------------
// mixture JSON
// ---------------------------------------------------------------------------

namespace detail_degrade {

// Visits every (name, Range) and (name, share) field of MixtureRanges.
template <class R, class FR, class FS>
void visit_ranges(R& r, FR&& on_range, FS&& on_share) {
  on_share("gaussian_blur_share", r.gaussian_blur_share);
  on_range("blur_sigma", r.blur_sigma);
  on_range("motion_length", r.motion_length);
  on_range("motion_angle", r.motion_angle);
  on_share("gaussian_noise_share", r.gaussian_noise_share);
  on_range("noise_sigma", r.noise_sigma);
  on_range("salt_pepper_p", r.salt_pepper_p);
  on_range("compress_q", r.compress_q);
  on_share("haze_share", r.haze_share);
  on_range("haze_t0", r.haze_t0);
  on_range("haze_airlight", r.haze_airlight);
  on_range("rain_density", r.rain_density);
  on_range("rain_length", r.rain_length);
  on_range("rain_angle", r.rain_angle);
  on_range("rain_intensity", r.rain_intensity);
  on_range("compound_sigma", r.compound_sigma);
  on_range("compound_noise", r.compound_noise);
}

inline constexpr std::array<const char*, 5> kCategoryNames = {"blur", "noise", "compression", "weather", "other"};

}  // namespace detail_degrade

inline nlohmann::json to_json(const MixtureConfig& m) {
  nlohmann::json weights, ranges;
  for (std::size_t i = 0; i < 5; ++i) weights[detail_degrade::kCategoryNames[i]] = m.weights[i];
  detail_degrade::visit_ranges(
      m.ranges, [&](const char* n, const Range& r) { ranges[n] = {r.lo, r.hi}; },
      [&](const char* n, double v) { ranges[n] = v; });
  return {{"weights", weights}, {"ranges", ranges}, {"seed", m.seed}};
}

/// Missing keys keep their defaults; unknown keys are rejected.
inline MixtureConfig mixture_from_json(const nlohmann::json& j) {
  MixtureConfig m;
  try {
    for (const auto& [key, value] : j.items()) {
      if (key == "seed") {
        m.seed = value.get<std::uint64_t>();
      } else if (key == "weights") {
        for (const auto& [cat, w] : value.items()) {
          const auto& names = detail_degrade::kCategoryNames;
          auto it = std::find(names.begin(), names.end(), cat);
          if (it == names.end()) throw ConfigError("unknown mixture category '" + cat + "'");
          m.weights[static_cast<std::size_t>(it - names.begin())] = w.get<double>();
        }
      } else if (key == "ranges") {
        for (const auto& [name, v] : value.items()) {
          bool found = false;
          detail_degrade::visit_ranges(
              m.ranges,
              [&](const char* n, Range& r) {
                if (name != n) return;
                found = true;
                if (!v.is_array() || v.size() != 2) throw ConfigError("range '" + name + "' must be [lo, hi]");
                r = {v[0].get<double>(), v[1].get<double>()};
                if (r.lo > r.hi) throw ConfigError("range '" + name + "' has lo > hi");
              },
              [&](const char* n, double& share) {
                if (name != n) return;
                found = true;
                share = v.get<double>();
              });
          if (!found) throw ConfigError("unknown mixture range '" + name + "'");
        }
      } else {
        throw ConfigError("unknown key '" + key + "' in mixture config");
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed mixture config: ") + e.what());
  }
  m.validate();
  return m;
}

}  // namespace uniflow
