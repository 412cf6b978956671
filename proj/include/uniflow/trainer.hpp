#pragma once

// Adam optimisation of the l1 restoration loss through the unrolled flow,
// versioned binary checkpoints, and evaluation reports.
//
// Checkpoint layout (all integers and floats little-endian):
//   "UFR1"                      magic
//   u32 version (1)
//   u64 n, n bytes              JSON {arch, train, solver, toggles}
//   u64 tensor count            then per parameter: u64 numel, numel x f64
//   same for Adam first and second moments
//   u64 adam step, u64 iteration
//   u64 n, n bytes              rng state text

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uniflow/config.hpp"
#include "uniflow/data.hpp"
#include "uniflow/flow.hpp"
#include "uniflow/image_io.hpp"
#include "uniflow/metrics.hpp"
#include "uniflow/nn.hpp"

namespace uniflow {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

/// Adam with bias correction.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, double lr, double beta1, double beta2, double eps)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const Tensor& p : params_) {
      m_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
      v_.emplace_back(static_cast<std::size_t>(p.numel()), 0.0);
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto data = params_[k].data();
      auto grad = params_[k].grad();
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < m.size(); ++i) {
        const double g = grad.empty() ? 0.0 : grad[i];
        m[i] = beta1_ * m[i] + (1 - beta1_) * g;
        v[i] = beta2_ * v[i] + (1 - beta2_) * g * g;
        data[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps_);
      }
    }
  }

  std::vector<std::vector<double>>& first_moments() { return m_; }
  std::vector<std::vector<double>>& second_moments() { return v_; }
  const std::vector<std::vector<double>>& first_moments() const { return m_; }
  const std::vector<std::vector<double>>& second_moments() const { return v_; }
  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  std::int64_t t_ = 0;
  double lr_ = 1e-4, beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
};

// ---------------------------------------------------------------------------
// checkpoint
// ---------------------------------------------------------------------------

struct Checkpoint {
  ArchConfig arch;
  TrainConfig train;
  SolverSettings solver;
  FieldToggles toggles;
  std::vector<std::vector<double>> params;
  std::vector<std::vector<double>> adam_m;
  std::vector<std::vector<double>> adam_v;
  std::int64_t adam_step = 0;
  std::int64_t iteration = 0;
  std::string rng_state;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail_ckpt {

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    out.insert(out.end(), b, b + n);
  }
  void u32(std::uint32_t v) { bytes(&v, 4); }
  void u64(std::uint64_t v) { bytes(&v, 8); }
  void str(const std::string& s) {
    u64(s.size());
    bytes(s.data(), s.size());
  }
  void tensors(const std::vector<std::vector<double>>& ts) {
    u64(ts.size());
    for (const auto& t : ts) {
      u64(t.size());
      bytes(t.data(), t.size() * sizeof(double));
    }
  }
  std::vector<unsigned char> out;
};

class Reader {
 public:
  Reader(const std::vector<unsigned char>& b, std::string label) : buf(b), label_(std::move(label)) {}
  void bytes(void* p, std::size_t n) {
    if (n > buf.size() - pos) throw IoError(label_ + ": truncated checkpoint at byte " + std::to_string(pos));
    std::memcpy(p, buf.data() + pos, n);
    pos += n;
  }
  std::uint32_t u32() {
    std::uint32_t v;
    bytes(&v, 4);
    return v;
  }
  std::uint64_t u64() {
    std::uint64_t v;
    bytes(&v, 8);
    return v;
  }
  std::string str() {
    const std::uint64_t n = u64();
    if (n > buf.size() - pos) throw IoError(label_ + ": truncated checkpoint at byte " + std::to_string(pos));
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
  std::vector<std::vector<double>> tensors() {
    std::vector<std::vector<double>> ts(u64());
    for (auto& t : ts) {
      const std::uint64_t n = u64();
      if (n > (buf.size() - pos) / sizeof(double)) throw IoError(label_ + ": truncated checkpoint at byte " + std::to_string(pos));
      t.resize(n);
      bytes(t.data(), n * sizeof(double));
    }
    return ts;
  }
  const std::vector<unsigned char>& buf;
  std::size_t pos = 0;

 private:
  std::string label_;
};

inline void check_layout(const std::vector<std::vector<double>>& ts, const Model& ref, const char* what) {
  const auto& params = ref.store.all();
  if (ts.size() != params.size())
    throw ConfigError(std::string("checkpoint ") + what + " has " + std::to_string(ts.size()) +
                      " tensors, architecture expects " + std::to_string(params.size()));
  for (std::size_t i = 0; i < ts.size(); ++i)
    if (static_cast<std::int64_t>(ts[i].size()) != params[i].value.numel())
      throw ConfigError(std::string("checkpoint ") + what + " tensor " + params[i].name + " has wrong size");
}

}  // namespace detail_ckpt

inline std::vector<unsigned char> encode_checkpoint(const Checkpoint& c) {
  detail_ckpt::Writer w;
  w.bytes("UFR1", 4);
  w.u32(kCheckpointVersion);
  const nlohmann::json cfg = {
      {"arch", to_json(c.arch)}, {"train", to_json(c.train)}, {"solver", to_json(c.solver)}, {"toggles", to_json(c.toggles)}};
  w.str(cfg.dump());
  w.tensors(c.params);
  w.tensors(c.adam_m);
  w.tensors(c.adam_v);
  w.u64(static_cast<std::uint64_t>(c.adam_step));
  w.u64(static_cast<std::uint64_t>(c.iteration));
  w.str(c.rng_state);
  return w.out;
}

inline Checkpoint decode_checkpoint(const std::vector<unsigned char>& bytes, const std::string& label = "<memory>") {
  detail_ckpt::Reader r(bytes, label);
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, "UFR1", 4) != 0) throw IoError(label + ": not a checkpoint (bad magic)");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) throw IoError(label + ": unsupported checkpoint version " + std::to_string(version));
  Checkpoint c;
  nlohmann::json cfg;
  try {
    cfg = nlohmann::json::parse(r.str());
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(label + ": corrupt checkpoint config: " + e.what());
  }
  detail_config::read_object(cfg, "checkpoint", [&](const std::string& k, const nlohmann::json& v) {
    if (k == "arch") c.arch = arch_from_json(v);
    else if (k == "train") c.train = train_from_json(v);
    else if (k == "solver") c.solver = solver_from_json(v);
    else if (k == "toggles") c.toggles = toggles_from_json(v);
    else return false;
    return true;
  });
  c.arch.validate();
  c.params = r.tensors();
  c.adam_m = r.tensors();
  c.adam_v = r.tensors();
  c.adam_step = static_cast<std::int64_t>(r.u64());
  c.iteration = static_cast<std::int64_t>(r.u64());
  c.rng_state = r.str();
  if (r.pos != bytes.size()) throw IoError(label + ": trailing bytes after checkpoint");
  const Model ref = Model::create(c.arch, 0);
  detail_ckpt::check_layout(c.params, ref, "parameters");
  detail_ckpt::check_layout(c.adam_m, ref, "first moments");
  detail_ckpt::check_layout(c.adam_v, ref, "second moments");
  return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
  write_file_bytes(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(read_file_bytes(path), path.string());
}

/// Fails with ConfigError when the stored architecture differs from `expected`.
inline Checkpoint load_checkpoint(const std::filesystem::path& path, const ArchConfig& expected) {
  Checkpoint c = load_checkpoint(path);
  if (!(c.arch == expected)) {
    throw ConfigError("checkpoint architecture " + to_json(c.arch).dump() + " does not match expected " +
                      to_json(expected).dump());
  }
  return c;
}

inline Model model_from_checkpoint(const Checkpoint& c) {
  Model m = Model::create(c.arch, 0);
  const auto& params = m.store.all();
  detail_ckpt::check_layout(c.params, m, "parameters");
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor t = params[i].value;
    std::copy(c.params[i].begin(), c.params[i].end(), t.data().begin());
  }
  return m;
}

// ---------------------------------------------------------------------------
// training
// ---------------------------------------------------------------------------

struct CurveRow {
  std::int64_t iteration = 0;
  double train_l1 = 0;
  std::optional<double> val_psnr;
  std::optional<double> val_ssim;
};

namespace detail_train {

inline std::string magnitude_report(const Tensor& x_in, const Model& model, const SolverSettings& solver,
                                    const FieldToggles& toggles) {
  std::ostringstream os;
  os.precision(6);
  os << "input max|x| " << max_abs(x_in) << "; ";
  try {
    Graph probe(false);
    RestoreResult r = restore_frame(probe, x_in, model, solver, toggles, true);
    os << "anchor max|x~| " << max_abs(r.anchor) << ", prompt max " << max_abs(r.prompt.z);
    for (const auto& e : r.trace->entries)
      os << "; step " << e.step << " H " << e.hamiltonian << " |P| " << e.momentum_mag << " |pot| "
         << e.potential_mag << " |phi| " << e.prompt_mag;
  } catch (const Error& e) {
    os << "forward probe failed: " << e.what();
  }
  return os.str();
}

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

}  // namespace detail_train

/// One optimisation step on a batch: restore, mean l1 against `clean`,
/// backward through every Euler step, Adam update, gradients cleared.
inline double train_step(Model& model, Adam& opt, const Tensor& degraded, const Tensor& clean,
                         const SolverSettings& solver, const FieldToggles& toggles) {
  if (degraded.shape() != clean.shape()) throw ShapeError("train_step: batch shapes differ");
  if (degraded.shape().n < 1) throw ShapeError("train_step: empty batch");
  double loss_value = 0;
  try {
    Graph g;
    RestoreResult r = restore_frame(g, degraded, model, solver, toggles);
    Tensor loss = ops::l1_loss(g, r.output, clean);
    loss_value = loss.item();
    g.backward(loss);
    for (const auto& p : model.store.all()) {
      if (!detail_train::all_finite(p.value.grad())) throw NumericalError("non-finite gradient in " + p.name);
    }
  } catch (const NumericalError& e) {
    model.store.zero_grad();
    throw NumericalError(std::string("non-finite loss: ") + e.what() + " [" +
                         detail_train::magnitude_report(degraded, model, solver, toggles) + "]");
  }
  opt.step();
  model.store.zero_grad();
  return loss_value;
}

/// Mean PSNR / SSIM of clamped restorations over `pairs`.
struct FidelityScore {
  double psnr = 0;
  double ssim = 0;
};

inline FidelityScore score_pairs(const Model& model, const std::vector<FramePair>& pairs, const SolverSettings& solver,
                                 const FieldToggles& toggles, std::size_t limit = 0) {
  FidelityScore s;
  const std::size_t n = limit == 0 ? pairs.size() : std::min(limit, pairs.size());
  std::size_t finite = 0;
  for (std::size_t i = 0; i < n; ++i) {
    Graph g(false);
    Tensor out = clamp01(restore_frame(g, pairs[i].degraded, model, solver, toggles).output);
    const double p = psnr(out, pairs[i].clean);
    if (std::isfinite(p)) {
      s.psnr += p;
      ++finite;
    }
    s.ssim += ssim(out, pairs[i].clean);
  }
  s.psnr = finite ? s.psnr / static_cast<double>(finite) : kInf;
  s.ssim /= static_cast<double>(std::max<std::size_t>(n, 1));
  return s;
}

/// Seeded training loop. Holds the model, optimiser and data-order rng so a
/// run is fully determined by (config, pairs).
class Trainer {
 public:
  Trainer(const ArchConfig& arch, const TrainConfig& train, const SolverSettings& solver, const FieldToggles& toggles)
      : model_(Model::create(arch, mix_seed(train.seed, 0x1u))),
        train_(train),
        solver_(solver),
        toggles_(toggles),
        rng_(mix_seed(train.seed, 0x2u)) {
    arch.validate();
    train.validate();
    solver.validate();
    reset_optimizer();
  }

  /// Resumes from a checkpoint (architecture, weights, moments, counters, rng).
  explicit Trainer(const Checkpoint& c)
      : model_(model_from_checkpoint(c)), train_(c.train), solver_(c.solver), toggles_(c.toggles) {
    reset_optimizer();
    opt_.first_moments() = c.adam_m;
    opt_.second_moments() = c.adam_v;
    opt_.set_step_count(c.adam_step);
    iteration_ = c.iteration;
    rng_.set_state(c.rng_state);
  }

  Model& model() { return model_; }
  const Model& model() const { return model_; }
  std::int64_t iteration() const { return iteration_; }
  const std::vector<CurveRow>& curve() const { return curve_; }
  const TrainConfig& config() const { return train_; }
  const SolverSettings& solver() const { return solver_; }
  const FieldToggles& toggles() const { return toggles_; }

  Checkpoint checkpoint() const {
    Checkpoint c;
    c.arch = model_.arch;
    c.train = train_;
    c.solver = solver_;
    c.toggles = toggles_;
    for (const auto& p : model_.store.all()) c.params.emplace_back(p.value.data().begin(), p.value.data().end());
    c.adam_m = opt_.first_moments();
    c.adam_v = opt_.second_moments();
    c.adam_step = opt_.step_count();
    c.iteration = iteration_;
    c.rng_state = rng_.state();
    return c;
  }

  /// Draws `batch` random augmented crops from `pairs` and takes one step.
  double step(const std::vector<FramePair>& pairs) {
    if (pairs.empty()) throw ConfigError("training split is empty");
    const std::string rng_before = rng_.state();
    std::vector<Tensor> deg, clean;
    for (int b = 0; b < train_.batch; ++b) {
      const FramePair& p = pairs[rng_.below(pairs.size())];
      const AugmentSpec a = draw_augment(p.clean.shape().h, p.clean.shape().w, train_.crop, rng_);
      deg.push_back(apply_augment(p.degraded, a));
      clean.push_back(apply_augment(p.clean, a));
    }
    double loss = 0;
    try {
      loss = train_step(model_, opt_, stack_batch(deg), stack_batch(clean), solver_, toggles_);
    } catch (const NumericalError&) {
      rng_.set_state(rng_before);  // a failed step leaves no trace
      throw;
    }
    ++iteration_;
    return loss;
  }

  /// Runs until `train.iterations`, validating every `val_every` steps and at
  /// the end. With `out_dir`, writes loss_curve.csv, last.ckpt and best.ckpt
  /// (highest validation PSNR; the last state when there is no validation
  /// split). A non-finite loss writes last.ckpt with the last good state and
  /// rethrows.
  void run(const std::vector<FramePair>& train_pairs, const std::vector<FramePair>& val_pairs,
           const std::optional<std::filesystem::path>& out_dir = std::nullopt,
           const std::function<void(const CurveRow&)>& on_row = {}) {
    if (train_pairs.empty()) throw ConfigError("training split is empty");
    for (const auto& p : train_pairs) {
      if (p.clean.shape().h < train_.crop || p.clean.shape().w < train_.crop)
        throw ConfigError("train.crop " + std::to_string(train_.crop) + " exceeds frame " + p.clean.shape().str());
    }
    if (out_dir) std::filesystem::create_directories(*out_dir);
    double window = 0;
    int window_n = 0;
    while (iteration_ < train_.iterations) {
      try {
        window += step(train_pairs);
      } catch (const NumericalError&) {
        if (out_dir) save_checkpoint(checkpoint(), *out_dir / "last.ckpt");
        throw;
      }
      ++window_n;
      if (iteration_ % train_.val_every == 0 || iteration_ == train_.iterations) {
        CurveRow row{iteration_, window / window_n, std::nullopt, std::nullopt};
        window = 0;
        window_n = 0;
        if (!val_pairs.empty()) {
          const FidelityScore s = score_pairs(model_, val_pairs, solver_, toggles_, static_cast<std::size_t>(train_.val_frames));
          row.val_psnr = s.psnr;
          row.val_ssim = s.ssim;
          if (!best_psnr_ || s.psnr > *best_psnr_) {
            best_psnr_ = s.psnr;
            if (out_dir) save_checkpoint(checkpoint(), *out_dir / "best.ckpt");
          }
        }
        curve_.push_back(row);
        if (on_row) on_row(row);
        if (out_dir) write_curve(*out_dir / "loss_curve.csv");
      }
    }
    if (out_dir) {
      save_checkpoint(checkpoint(), *out_dir / "last.ckpt");
      if (val_pairs.empty()) save_checkpoint(checkpoint(), *out_dir / "best.ckpt");
    }
  }

  void write_curve(const std::filesystem::path& path) const {
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw IoError("cannot write " + path.string());
    os << "iteration,train_l1,val_psnr,val_ssim\n";
    for (const auto& r : curve_) {
      os << r.iteration << ',' << format_metric(r.train_l1) << ',' << (r.val_psnr ? format_metric(*r.val_psnr) : "")
         << ',' << (r.val_ssim ? format_metric(*r.val_ssim) : "") << '\n';
    }
  }

 private:
  void reset_optimizer() { opt_ = Adam(model_.store.tensors(), train_.lr, train_.beta1, train_.beta2, train_.eps); }

  Model model_;
  TrainConfig train_;
  SolverSettings solver_;
  FieldToggles toggles_;
  Adam opt_;
  Rng rng_;
  std::int64_t iteration_ = 0;
  std::vector<CurveRow> curve_;
  std::optional<double> best_psnr_;
};

// ---------------------------------------------------------------------------
// evaluation
// ---------------------------------------------------------------------------

/// One row per pair: fidelity of the degraded input and of the clamped restoration.
inline std::vector<MetricRow> evaluate(const Model& model, const std::vector<FramePair>& pairs,
                                       const SolverSettings& solver, const FieldToggles& toggles) {
  std::vector<MetricRow> rows;
  for (const auto& p : pairs) {
    Graph g(false);
    Tensor out = clamp01(restore_frame(g, p.degraded, model, solver, toggles).output);
    rows.push_back({p.frame_id, p.task, psnr(p.degraded, p.clean), psnr(out, p.clean), ssim(p.degraded, p.clean),
                    ssim(out, p.clean)});
  }
  return rows;
}

}  // namespace uniflow
