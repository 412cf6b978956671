#pragma once

// Prompt generator, prompt-modulated TaskBlock, the symmetric PhysicsUNet
// encoder/decoder and the prompt guidance field.
//
// Parameter serialisation order (checkpoint layout) is the creation order:
//   prompt.conv1.{weight,bias}, prompt.gn1.{gamma,beta},
//   prompt.conv2.{weight,bias}, prompt.gn2.{gamma,beta},
//   for each encoder level l = 0..L-1:
//     enc{l}.<block>, and for l < L-1: down{l}.{weight,bias}
//   mid.<block>
//   for each decoder level l = L-2..0:
//     fuse{l}.{weight,bias}, dec{l}.<block>
//   out.{weight,bias}
//   field.{weight,bias,gain}
// where <block> = conv1.{weight,bias}, gn1.{gamma,beta}, conv2.{weight,bias},
//                 gn2.{gamma,beta}, mlp.{weight,bias}, alpha.

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "uniflow/ops.hpp"
#include "uniflow/rng.hpp"
#include "uniflow/tensor.hpp"

namespace uniflow {

enum class PromptMode { literal, pool_late };

inline const char* to_string(PromptMode m) { return m == PromptMode::literal ? "literal" : "pool_late"; }

inline PromptMode prompt_mode_from_string(const std::string& s) {
  if (s == "literal") return PromptMode::literal;
  if (s == "pool_late") return PromptMode::pool_late;
  throw ConfigError("unknown prompt mode '" + s + "' (expected literal or pool_late)");
}

struct ArchConfig {
  int levels = 3;
  int base_channels = 16;  // doubles per level
  int prompt_dim = 16;
  PromptMode prompt_mode = PromptMode::literal;
  int in_channels = 3;
  bool input_skip = false;  // X~ = X_in + head(features) instead of head(features)

  int channels(int level) const { return base_channels << level; }
  std::int64_t divisor() const { return std::int64_t{1} << (levels - 1); }

  void validate() const {
    if (levels < 1) throw ConfigError("arch.levels must be >= 1");
    if (base_channels < 4) throw ConfigError("arch.base_channels must be >= 4");
    if (prompt_dim < 1) throw ConfigError("arch.prompt_dim must be >= 1");
    if (in_channels != 3) throw ConfigError("arch.in_channels must be 3");
  }

  friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

/// Task prompt, every element in (0, 0.1).
struct PromptVector {
  Tensor z;  // (N, d, 1, 1)
  int d = 0;
  PromptMode mode = PromptMode::literal;
};

struct NamedParam {
  std::string name;
  Tensor value;
};

/// Ordered list of learnable tensors.
class ParamStore {
 public:
  Tensor add(std::string name, Shape s, double value) {
    Tensor t = Tensor::filled(s, value, true);
    params_.push_back({std::move(name), t});
    return t;
  }

  Tensor add_uniform(std::string name, Shape s, double bound, Rng& rng) {
    Tensor t = Tensor::zeros(s, true);
    for (double& v : t.data()) v = rng.uniform(-bound, bound);
    params_.push_back({std::move(name), t});
    return t;
  }

  const std::vector<NamedParam>& all() const { return params_; }
  std::vector<Tensor> tensors() const {
    std::vector<Tensor> out;
    for (const auto& p : params_) out.push_back(p.value);
    return out;
  }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }

  void zero_grad() {
    for (auto& p : params_) p.value.zero_grad();
  }

  const Tensor& find(const std::string& name) const {
    for (const auto& p : params_)
      if (p.name == name) return p.value;
    throw ConfigError("no parameter named '" + name + "'");
  }

 private:
  std::vector<NamedParam> params_;
};

struct ConvParams {
  Tensor weight;  // (Cout, Cin, k, k)
  Tensor bias;    // (1, Cout, 1, 1)
};

struct NormParams {
  Tensor gamma;
  Tensor beta;
  int groups = 1;
};

struct TaskBlockParams {
  int in_channels = 0;
  int out_channels = 0;
  ConvParams conv1, conv2;
  NormParams gn1, gn2;
  ConvParams mlp;  // linear d -> Cout, weight (Cout, d, 1, 1)
  Tensor alpha;    // (1,1,1,1)
};

struct PromptGeneratorParams {
  ConvParams conv1, conv2;
  NormParams gn1, gn2;
};

struct PromptFieldParams {
  ConvParams map;  // linear d -> 3
  Tensor gain;     // (1,1,1,1)
};

/// Every learnable weight of the model plus its architecture.
struct Model {
  ArchConfig arch;
  ParamStore store;
  PromptGeneratorParams prompt;
  std::vector<TaskBlockParams> encoder;  // one per level
  std::vector<ConvParams> down;          // levels - 1
  TaskBlockParams middle;
  std::vector<ConvParams> fuse;     // index = decoder level
  std::vector<TaskBlockParams> decoder;  // index = decoder level
  ConvParams out;
  PromptFieldParams field;

  static Model create(const ArchConfig& arch, std::uint64_t seed);
};

inline int group_count(int channels) {
  const int g = std::min(8, channels);
  return channels % g == 0 ? g : 1;
}

namespace detail_nn {

// PyTorch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias.
inline ConvParams make_conv(ParamStore& store, const std::string& name, int cin, int cout, int k,
                            Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
  ConvParams p;
  p.weight = store.add_uniform(name + ".weight", {cout, cin, k, k}, bound, rng);
  p.bias = store.add_uniform(name + ".bias", {1, cout, 1, 1}, bound, rng);
  return p;
}

inline NormParams make_norm(ParamStore& store, const std::string& name, int channels, int groups) {
  NormParams p;
  p.gamma = store.add(name + ".gamma", {1, channels, 1, 1}, 1.0);
  p.beta = store.add(name + ".beta", {1, channels, 1, 1}, 0.0);
  p.groups = groups;
  return p;
}

inline TaskBlockParams make_block(ParamStore& store, const std::string& name, int cin, int cout,
                                  int prompt_dim, Rng& rng) {
  TaskBlockParams b;
  b.in_channels = cin;
  b.out_channels = cout;
  b.conv1 = make_conv(store, name + ".conv1", cin, cout, 3, rng);
  b.gn1 = make_norm(store, name + ".gn1", cout, group_count(cout));
  b.conv2 = make_conv(store, name + ".conv2", cout, cout, 3, rng);
  b.gn2 = make_norm(store, name + ".gn2", cout, group_count(cout));
  b.mlp = make_conv(store, name + ".mlp", prompt_dim, cout, 1, rng);
  b.alpha = store.add(name + ".alpha", {1, 1, 1, 1}, 0.1);
  return b;
}

}  // namespace detail_nn

inline Model Model::create(const ArchConfig& arch, std::uint64_t seed) {
  using namespace detail_nn;
  arch.validate();
  Rng rng(seed);
  Model m;
  m.arch = arch;
  ParamStore& s = m.store;
  const int d = arch.prompt_dim;
  const int k = arch.prompt_mode == PromptMode::literal ? 1 : 3;
  m.prompt.conv1 = make_conv(s, "prompt.conv1", arch.in_channels, 2 * d, k, rng);
  m.prompt.gn1 = make_norm(s, "prompt.gn1", 2 * d, 1);
  m.prompt.conv2 = make_conv(s, "prompt.conv2", 2 * d, d, k, rng);
  m.prompt.gn2 = make_norm(s, "prompt.gn2", d, 1);

  for (int l = 0; l < arch.levels; ++l) {
    const int cin = l == 0 ? arch.in_channels : arch.channels(l);
    m.encoder.push_back(make_block(s, "enc" + std::to_string(l), cin, arch.channels(l), d, rng));
    if (l + 1 < arch.levels) {
      m.down.push_back(make_conv(s, "down" + std::to_string(l), arch.channels(l), arch.channels(l + 1), 3, rng));
    }
  }
  const int deep = arch.channels(arch.levels - 1);
  m.middle = make_block(s, "mid", deep, deep, d, rng);
  m.fuse.resize(static_cast<std::size_t>(arch.levels - 1));
  m.decoder.resize(static_cast<std::size_t>(arch.levels - 1));
  for (int l = arch.levels - 2; l >= 0; --l) {
    const int c = arch.channels(l);
    m.fuse[static_cast<std::size_t>(l)] = make_conv(s, "fuse" + std::to_string(l), arch.channels(l + 1) + c, c, 3, rng);
    m.decoder[static_cast<std::size_t>(l)] = make_block(s, "dec" + std::to_string(l), c, c, d, rng);
  }
  m.out = make_conv(s, "out", arch.channels(0), arch.in_channels, 3, rng);
  m.field.map = make_conv(s, "field", d, arch.in_channels, 1, rng);
  m.field.gain = s.add("field.gain", {1, 1, 1, 1}, 0.01);
  return m;
}

/// Per-sample, per-channel standardisation of the input frame.
inline Tensor normalize_input(Graph& g, const Tensor& x) { return ops::normalize_channels(g, x, 1e-6); }

/// Task prompt Z = 0.1 * sigmoid(GN2(Conv2(GELU(GN1(Conv1(pooled input)))))).
///
/// In literal mode the 1x1 conv stack runs on the spatially averaged,
/// normalised frame. In pool_late mode two stride-2 3x3 convs run at full
/// resolution and the spatial mean is taken after the sigmoid.
inline PromptVector prompt_generate(Graph& g, const Tensor& x, const Model& m) {
  const auto& p = m.prompt;
  const Shape& s = x.shape();
  if (s.c != m.arch.in_channels) throw ShapeError("prompt_generate: expected 3-channel input, got " + s.str());
  Tensor h = normalize_input(g, x);
  if (m.arch.prompt_mode == PromptMode::literal) {
    h = ops::spatial_mean(g, h);
    h = ops::conv2d(g, h, p.conv1.weight, p.conv1.bias);
    h = ops::group_norm(g, h, p.gn1.groups, p.gn1.gamma, p.gn1.beta);
    h = ops::gelu(g, h);
    h = ops::conv2d(g, h, p.conv2.weight, p.conv2.bias);
    h = ops::group_norm(g, h, p.gn2.groups, p.gn2.gamma, p.gn2.beta);
    h = ops::sigmoid(g, h);
  } else {
    if (s.h < 4 || s.w < 4) throw ShapeError("prompt_generate: pool_late mode needs H,W >= 4, got " + s.str());
    h = ops::conv2d(g, h, p.conv1.weight, p.conv1.bias, 2, 1);
    h = ops::group_norm(g, h, p.gn1.groups, p.gn1.gamma, p.gn1.beta);
    h = ops::gelu(g, h);
    h = ops::conv2d(g, h, p.conv2.weight, p.conv2.bias, 2, 1);
    h = ops::group_norm(g, h, p.gn2.groups, p.gn2.gamma, p.gn2.beta);
    h = ops::sigmoid(g, h);
    h = ops::spatial_mean(g, h);
  }
  return {ops::scale(g, h, 0.1), m.arch.prompt_dim, m.arch.prompt_mode};
}

/// conv3x3 -> GN -> GELU -> conv3x3 -> GN.
inline Tensor conv_block(Graph& g, const Tensor& x, const TaskBlockParams& b) {
  if (x.shape().c != b.in_channels) {
    throw ShapeError("task_block: input has " + std::to_string(x.shape().c) + " channels, block expects " +
                     std::to_string(b.in_channels));
  }
  Tensor h = ops::conv2d(g, x, b.conv1.weight, b.conv1.bias, 1, 1);
  h = ops::group_norm(g, h, b.gn1.groups, b.gn1.gamma, b.gn1.beta);
  h = ops::gelu(g, h);
  h = ops::conv2d(g, h, b.conv2.weight, b.conv2.bias, 1, 1);
  return ops::group_norm(g, h, b.gn2.groups, b.gn2.gamma, b.gn2.beta);
}

/// F_mod = ConvBlock(x) + alpha * MLP(z), the MLP output broadcast over H x W.
inline Tensor task_block(Graph& g, const Tensor& x, const PromptVector& z, const TaskBlockParams& b) {
  if (z.z.shape().c != b.mlp.weight.shape().c) {
    throw ShapeError("task_block: prompt width " + std::to_string(z.z.shape().c) + " does not match MLP input " +
                     std::to_string(b.mlp.weight.shape().c));
  }
  Tensor features = conv_block(g, x, b);
  Tensor mod = ops::linear(g, z.z, b.mlp.weight, b.mlp.bias);
  mod = ops::mul(g, mod, b.alpha);
  return ops::add(g, features, mod);
}

/// Symmetric U-Net; output X~ has the input's resolution and no output activation.
inline Tensor physics_unet_forward(Graph& g, const Tensor& x_in, const PromptVector& z, const Model& m) {
  const Shape& s = x_in.shape();
  const std::int64_t div = m.arch.divisor();
  if (s.h % div != 0 || s.w % div != 0) {
    throw ShapeError("physics_unet_forward: H and W must be divisible by " + std::to_string(div) + ", got " +
                     s.str());
  }
  const int levels = m.arch.levels;
  std::vector<Tensor> skips;
  Tensor h = x_in;
  for (int l = 0; l < levels; ++l) {
    h = task_block(g, h, z, m.encoder[static_cast<std::size_t>(l)]);
    skips.push_back(h);
    if (l + 1 < levels) {
      const auto& dn = m.down[static_cast<std::size_t>(l)];
      h = ops::conv2d(g, h, dn.weight, dn.bias, 2, 1);
    }
  }
  h = task_block(g, h, z, m.middle);
  for (int l = levels - 2; l >= 0; --l) {
    h = ops::upsample_nearest(g, h, 2);
    h = ops::concat_channels(g, h, skips[static_cast<std::size_t>(l)]);
    const auto& f = m.fuse[static_cast<std::size_t>(l)];
    h = ops::conv2d(g, h, f.weight, f.bias, 1, 1);
    h = task_block(g, h, z, m.decoder[static_cast<std::size_t>(l)]);
  }
  Tensor out = ops::conv2d(g, h, m.out.weight, m.out.bias, 1, 1);
  return m.arch.input_skip ? ops::add(g, out, x_in) : out;
}

/// phi(Z): gain * linear(z) broadcast over the frame; constant per (n, c).
inline Tensor prompt_field(Graph& g, const PromptVector& z, const Model& m, Shape frame) {
  Tensor v = ops::linear(g, z.z, m.field.map.weight, m.field.map.bias);
  v = ops::mul(g, v, m.field.gain);
  Tensor zeros = Tensor::zeros(frame);
  return ops::add(g, zeros, v);
}

// ---------------------------------------------------------------------------
// complexity accounting
// ---------------------------------------------------------------------------

struct LayerCost {
  std::string name;
  std::int64_t params = 0;
  std::int64_t macs = 0;
};

struct Complexity {
  std::vector<LayerCost> layers;
  std::int64_t params = 0;
  std::int64_t macs = 0;

  const LayerCost& layer(const std::string& name) const {
    for (const auto& l : layers)
      if (l.name == name) return l;
    throw ConfigError("no layer named '" + name + "'");
  }
};

/// Parameters (weights + bias) and MACs of one k x k conv producing ho x wo.
inline LayerCost conv_cost(std::string name, std::int64_t cin, std::int64_t cout, std::int64_t k, std::int64_t ho,
                           std::int64_t wo) {
  return {std::move(name), cout * cin * k * k + cout, cout * cin * k * k * ho * wo};
}

/// Learnable scalar count and per-frame multiply-accumulates of one restore
/// pass at H x W: every conv (Cout*Cin*kh*kw*H'*W') and linear (Cout*Cin),
/// plus one MAC per element for each of the `steps` Euler updates.
/// Normalisation, activations and bias additions are not counted as MACs.
inline Complexity count_params_macs(const ArchConfig& arch, std::int64_t h, std::int64_t w, int steps) {
  arch.validate();
  Complexity c;
  auto conv = [&](const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t k,
                  std::int64_t ho, std::int64_t wo) {
    c.layers.push_back(conv_cost(name, cin, cout, k, ho, wo));
  };
  auto norm = [&](const std::string& name, std::int64_t ch) { c.layers.push_back({name, 2 * ch, 0}); };
  auto block = [&](const std::string& name, std::int64_t cin, std::int64_t cout, std::int64_t ho,
                   std::int64_t wo) {
    conv(name + ".conv1", cin, cout, 3, ho, wo);
    norm(name + ".gn1", cout);
    conv(name + ".conv2", cout, cout, 3, ho, wo);
    norm(name + ".gn2", cout);
    conv(name + ".mlp", arch.prompt_dim, cout, 1, 1, 1);
    c.layers.push_back({name + ".alpha", 1, 0});
  };
  const std::int64_t d = arch.prompt_dim;
  if (arch.prompt_mode == PromptMode::literal) {
    conv("prompt.conv1", 3, 2 * d, 1, 1, 1);
    norm("prompt.gn1", 2 * d);
    conv("prompt.conv2", 2 * d, d, 1, 1, 1);
    norm("prompt.gn2", d);
  } else {
    const std::int64_t h1 = ops::conv_out_extent(h, 3, 2, 1), w1 = ops::conv_out_extent(w, 3, 2, 1);
    const std::int64_t h2 = ops::conv_out_extent(h1, 3, 2, 1), w2 = ops::conv_out_extent(w1, 3, 2, 1);
    conv("prompt.conv1", 3, 2 * d, 3, h1, w1);
    norm("prompt.gn1", 2 * d);
    conv("prompt.conv2", 2 * d, d, 3, h2, w2);
    norm("prompt.gn2", d);
  }
  std::int64_t hh = h, ww = w;
  for (int l = 0; l < arch.levels; ++l) {
    block("enc" + std::to_string(l), l == 0 ? 3 : arch.channels(l), arch.channels(l), hh, ww);
    if (l + 1 < arch.levels) {
      hh /= 2;
      ww /= 2;
      conv("down" + std::to_string(l), arch.channels(l), arch.channels(l + 1), 3, hh, ww);
    }
  }
  block("mid", arch.channels(arch.levels - 1), arch.channels(arch.levels - 1), hh, ww);
  for (int l = arch.levels - 2; l >= 0; --l) {
    hh *= 2;
    ww *= 2;
    conv("fuse" + std::to_string(l), arch.channels(l + 1) + arch.channels(l), arch.channels(l), 3, hh, ww);
    block("dec" + std::to_string(l), arch.channels(l), arch.channels(l), hh, ww);
  }
  conv("out", arch.channels(0), 3, 3, h, w);
  conv("field", d, 3, 1, 1, 1);
  c.layers.push_back({"field.gain", 1, 0});
  c.layers.push_back({"euler", 0, static_cast<std::int64_t>(steps) * 3 * h * w});
  for (const auto& l : c.layers) {
    c.params += l.params;
    c.macs += l.macs;
  }
  return c;
}

}  // namespace uniflow
