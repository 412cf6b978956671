#pragma once

// Hamiltonian-inspired vector field and its fixed-step explicit Euler
// integration.
//
//   P      = X~ - X_in                       (constant over the trajectory)
//   U(X)   = 1/2 sum (X - X~)^2               dU/dX = X - X~
//   H(X,P) = 1/2 mean(P^2) + U(X)
//   f      = P + exp(-lambda t dt) tanh(X~ - X_t) + phi(Z)
//   X_{t+1} = X_t + dt f
//
// Each of the three field terms, and the decay factor, can be switched off.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "uniflow/image_io.hpp"
#include "uniflow/nn.hpp"
#include "uniflow/ops.hpp"

namespace uniflow {

struct FieldToggles {
  bool momentum = true;
  bool potential = true;
  bool decay = true;
  bool prompt = true;

  static FieldToggles full() { return {}; }
  /// Momentum and decay removed.
  static FieldToggles simplified() { return {false, true, false, true}; }
  static FieldToggles momentum_only() { return {true, false, false, false}; }
  static FieldToggles none() { return {false, false, false, false}; }

  friend bool operator==(const FieldToggles&, const FieldToggles&) = default;

  /// Comma-separated list of enabled terms, or "none".
  std::string str() const {
    std::string s;
    auto put = [&s](bool on, const char* name) {
      if (!on) return;
      if (!s.empty()) s += ',';
      s += name;
    };
    put(momentum, "momentum");
    put(potential, "potential");
    put(decay, "decay");
    put(prompt, "prompt");
    return s.empty() ? "none" : s;
  }

  /// Accepts full, simplified, momentum-only, none, or a comma-separated
  /// subset of momentum,potential,decay,prompt.
  static FieldToggles parse(const std::string& text) {
    if (text == "full") return full();
    if (text == "simplified") return simplified();
    if (text == "momentum-only" || text == "momentum_only") return momentum_only();
    if (text == "none") return none();
    FieldToggles t = none();
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item == "momentum") t.momentum = true;
      else if (item == "potential") t.potential = true;
      else if (item == "decay") t.decay = true;
      else if (item == "prompt") t.prompt = true;
      else throw ConfigError("unknown field term '" + item + "'");
    }
    return t;
  }
};

struct SolverSettings {
  int steps = 5;
  double dt = 0.2;
  double lambda = 1.0;

  void validate() const {
    if (steps < 1) throw ConfigError("solver.steps must be >= 1");
    if (!(dt > 0)) throw ConfigError("solver.dt must be > 0");
    if (!(lambda >= 0)) throw ConfigError("solver.lambda must be >= 0");
  }

  friend bool operator==(const SolverSettings&, const SolverSettings&) = default;
};

/// One trajectory's state. `momentum` is fixed at t = 0 and never mutated.
struct FlowState {
  Tensor x;
  Tensor anchor;
  Tensor momentum;
  int step = 0;
  SolverSettings solver;

  double time() const { return step * solver.dt; }
};

/// ½ Σ (x − anchor)².
inline double potential(const Tensor& x, const Tensor& anchor) {
  if (x.shape() != anchor.shape()) {
    throw ShapeError("potential: " + x.shape().str() + " vs " + anchor.shape().str());
  }
  double acc = 0;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double d = x.data()[i] - anchor.data()[i];
    acc += d * d;
  }
  return 0.5 * acc;
}

/// Closed-form dU/dX = x − anchor.
inline Tensor potential_gradient(const Tensor& x, const Tensor& anchor) {
  Graph g(false);
  return ops::sub(g, x, anchor);
}

/// ½ mean(P²) + U(x).
inline double hamiltonian(const Tensor& x, const Tensor& momentum, const Tensor& anchor) {
  if (momentum.shape() != x.shape()) throw ShapeError("hamiltonian: momentum shape mismatch");
  double kinetic = 0;
  for (double p : momentum.data()) kinetic += p * p;
  kinetic /= static_cast<double>(momentum.numel());
  return 0.5 * kinetic + potential(x, anchor);
}

/// Scale applied to the potential term at step t.
inline double decay_scale(const SolverSettings& s, const FieldToggles& t, int step) {
  return t.decay ? ops::exp_neg_scale(s.lambda, step * s.dt) : 1.0;
}

/// The three field terms; a disabled term is left undefined.
struct FieldTerms {
  Tensor momentum;
  Tensor potential;
  Tensor prompt;
  Tensor total;
};

inline double mean_abs(const Tensor& t) {
  if (!t.defined() || t.numel() == 0) return 0.0;
  double acc = 0;
  for (double v : t.data()) acc += std::abs(v);
  return acc / static_cast<double>(t.numel());
}

inline double max_abs(const Tensor& t) {
  double m = 0;
  if (!t.defined()) return m;
  for (double v : t.data()) m = std::max(m, std::abs(v));
  return m;
}

inline FieldTerms vector_field_terms(Graph& g, const FlowState& state, const PromptVector& z,
                                     const FieldToggles& toggles, const Model& model) {
  FieldTerms terms;
  const Shape& s = state.x.shape();
  if (toggles.momentum) terms.momentum = state.momentum;
  if (toggles.potential) {
    // tanh(-dH/dX) with dH/dX = x − anchor.
    Tensor pull = ops::tanh(g, ops::sub(g, state.anchor, state.x));
    terms.potential = ops::scale(g, pull, decay_scale(state.solver, toggles, state.step));
  }
  if (toggles.prompt) terms.prompt = prompt_field(g, z, model, s);

  for (const Tensor* t : {&terms.momentum, &terms.potential, &terms.prompt}) {
    if (!t->defined()) continue;
    terms.total = terms.total.defined() ? ops::add(g, terms.total, *t) : *t;
  }
  if (!terms.total.defined()) terms.total = Tensor::zeros(s);
  return terms;
}

/// f(X_t, Z, t).
inline Tensor vector_field(Graph& g, const FlowState& state, const PromptVector& z,
                           const FieldToggles& toggles, const Model& model) {
  return vector_field_terms(g, state, z, toggles, model).total;
}

struct TraceEntry {
  int step = 0;
  double time = 0;
  Tensor x;  // detached snapshot
  double hamiltonian = 0;
  double momentum_mag = 0;
  double potential_mag = 0;
  double prompt_mag = 0;
  std::optional<double> l1_to_gt;
};

/// Per-step record of a trajectory, steps 0..T.
struct FlowTrace {
  std::vector<TraceEntry> entries;
};

/// Generic explicit Euler: x_{t+1} = x_t + dt * field(x_t, t) for t < steps.
inline Tensor euler_integrate(Graph& g, const Tensor& x0, int steps, double dt,
                              const std::function<Tensor(Graph&, const Tensor&, int)>& field) {
  if (steps < 1 || !(dt > 0)) throw ConfigError("euler_integrate: need steps >= 1 and dt > 0");
  Tensor x = x0;
  for (int t = 0; t < steps; ++t) {
    try {
      x = ops::add(g, x, ops::scale(g, field(g, x, t), dt));
    } catch (const NumericalError& e) {
      throw NumericalError("euler step " + std::to_string(t) + ": " + e.what());
    }
  }
  return x;
}

struct FlowResult {
  Tensor x_final;
  std::optional<FlowTrace> trace;
};

namespace detail_flow {

inline double l1_distance(const Tensor& a, const Tensor& b) {
  double acc = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) acc += std::abs(a.data()[i] - b.data()[i]);
  return acc / static_cast<double>(a.numel());
}

inline TraceEntry make_entry(const FlowState& st, const FieldTerms& terms, const Tensor* gt) {
  TraceEntry e;
  e.step = st.step;
  e.time = st.time();
  e.x = st.x.detach();
  e.hamiltonian = hamiltonian(st.x, st.momentum, st.anchor);
  e.momentum_mag = mean_abs(terms.momentum);
  e.potential_mag = mean_abs(terms.potential);
  e.prompt_mag = mean_abs(terms.prompt);
  if (gt) e.l1_to_gt = l1_distance(st.x, *gt);
  return e;
}

}  // namespace detail_flow

/// Integrates the prompt-guided field from x_in for solver.steps steps, with
/// momentum P = anchor − x_in. Differentiable through every step when the
/// graph records. With `capture`, returns a trace of T+1 entries; `gt`, when
/// given, adds the ℓ1 distance to ground truth per entry.
inline FlowResult euler_integrate(Graph& g, const Tensor& x_in, const Tensor& anchor, const PromptVector& z,
                                  const SolverSettings& solver, const FieldToggles& toggles,
                                  const Model& model, bool capture = false, const Tensor* gt = nullptr) {
  solver.validate();
  if (x_in.shape() != anchor.shape()) throw ShapeError("euler_integrate: anchor shape mismatch");
  if (gt && gt->shape() != x_in.shape()) throw ShapeError("euler_integrate: ground-truth shape mismatch");
  FlowState st{x_in, anchor, ops::sub(g, anchor, x_in), 0, solver};
  FlowResult res;
  if (capture) res.trace.emplace();
  for (int t = 0; t < solver.steps; ++t) {
    st.step = t;
    try {
      FieldTerms terms = vector_field_terms(g, st, z, toggles, model);
      if (capture) res.trace->entries.push_back(detail_flow::make_entry(st, terms, gt));
      st.x = ops::add(g, st.x, ops::scale(g, terms.total, solver.dt));
    } catch (const NumericalError& e) {
      throw NumericalError("euler step " + std::to_string(t) + ": " + e.what());
    }
  }
  st.step = solver.steps;
  if (capture) {
    Graph probe(false);
    FieldTerms terms = vector_field_terms(probe, st, z, toggles, model);
    res.trace->entries.push_back(detail_flow::make_entry(st, terms, gt));
  }
  res.x_final = st.x;
  return res;
}

struct RestoreResult {
  Tensor output;  // X_T, unclamped
  Tensor anchor;  // X~
  PromptVector prompt;
  std::optional<FlowTrace> trace;
};

/// Full restoration: prompt, backbone anchor, momentum, Euler integration.
/// Accepts pixels only; outputs are clamped to [0, 1] at export time.
inline RestoreResult restore_frame(Graph& g, const Tensor& x_in, const Model& model, const SolverSettings& solver,
                                   const FieldToggles& toggles, bool capture = false, const Tensor* gt = nullptr) {
  RestoreResult r;
  r.prompt = prompt_generate(g, x_in, model);
  r.anchor = physics_unet_forward(g, x_in, r.prompt, model);
  FlowResult flow = euler_integrate(g, x_in, r.anchor, r.prompt, solver, toggles, model, capture, gt);
  r.output = flow.x_final;
  r.trace = std::move(flow.trace);
  return r;
}

inline Tensor clamp01(const Tensor& t) {
  Tensor out = t.detach();
  for (double& v : out.data()) v = std::clamp(v, 0.0, 1.0);
  return out;
}

/// Writes step_00.ppm ... step_TT.ppm and trace.csv into `dir`.
inline void export_flow_trace(const FlowTrace& trace, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::ofstream csv(dir / "trace.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write " + (dir / "trace.csv").string());
  csv << "step,time,H,momentum_mag,potential_mag,prompt_mag,l1_to_gt\n";
  csv.precision(17);
  for (const TraceEntry& e : trace.entries) {
    char name[32];
    std::snprintf(name, sizeof name, "step_%02d.ppm", e.step);
    save_image(e.x, dir / name);
    csv << e.step << ',' << e.time << ',' << e.hamiltonian << ',' << e.momentum_mag << ',' << e.potential_mag
        << ',' << e.prompt_mag << ',';
    if (e.l1_to_gt) csv << *e.l1_to_gt;
    csv << '\n';
  }
  if (!csv) throw IoError("write failed for trace.csv");
}

}  // namespace uniflow
