#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <vector>

#include "uniflow/rng.hpp"
#include "uniflow/tensor.hpp"

namespace uniflow {

/// Scalar-valued function evaluated inside a graph.
using ScalarFn = std::function<Tensor(Graph&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t coordinates = 0;
  // Location of the worst coordinate.
  std::size_t worst_tensor = 0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

/// Compares reverse-mode gradients of `f` w.r.t. `inputs` with central
/// differences (f(x+h e) - f(x-h e)) / 2h.
///
/// With `max_coords == 0` every coordinate is checked; otherwise a seeded
/// random subset of that size (drawn across all inputs) is. Relative error
/// uses the denominator max(|a|, |b|, 1e-8). Inputs must require grad; their
/// gradient buffers are overwritten.
inline GradCheckResult finite_diff_audit(const ScalarFn& f, std::vector<Tensor> inputs, double h,
                                         std::size_t max_coords = 0, std::uint64_t seed = 0) {
  if (h < 1e-7 || h > 1e-3) throw ConfigError("finite-difference step must lie in [1e-7, 1e-3]");
  for (Tensor& t : inputs) {
    if (!t.requires_grad()) throw ConfigError("finite_diff_audit: input does not require grad");
    t.zero_grad();
  }
  {
    Graph g;
    Tensor loss = f(g);
    g.backward(loss);
  }

  std::vector<std::pair<std::size_t, std::size_t>> coords;
  std::size_t total = 0;
  for (const Tensor& t : inputs) total += static_cast<std::size_t>(t.numel());
  if (max_coords == 0 || max_coords >= total) {
    for (std::size_t k = 0; k < inputs.size(); ++k)
      for (std::size_t i = 0; i < static_cast<std::size_t>(inputs[k].numel()); ++i) coords.emplace_back(k, i);
  } else {
    // Distinct flat indices drawn by a partial Fisher-Yates shuffle.
    std::vector<std::size_t> flat(total);
    std::iota(flat.begin(), flat.end(), std::size_t{0});
    Rng rng(seed);
    for (std::size_t i = 0; i < max_coords; ++i) {
      std::swap(flat[i], flat[i + rng.below(total - i)]);
    }
    flat.resize(max_coords);
    std::sort(flat.begin(), flat.end());
    std::size_t k = 0, base = 0;
    for (std::size_t idx : flat) {
      while (idx >= base + static_cast<std::size_t>(inputs[k].numel())) base += static_cast<std::size_t>(inputs[k++].numel());
      coords.emplace_back(k, idx - base);
    }
  }

  auto eval = [&f] {
    Graph g(false);
    return f(g).item();
  };

  GradCheckResult res;
  res.coordinates = coords.size();
  for (auto [k, i] : coords) {
    double& x = inputs[k].data()[i];
    const double saved = x;
    x = saved + h;
    const double fp = eval();
    x = saved - h;
    const double fm = eval();
    x = saved;
    const double numeric = (fp - fm) / (2.0 * h);
    const double analytic = inputs[k].grad()[i];
    const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
    const double err = std::abs(analytic - numeric) / denom;
    if (err > res.max_rel_error) {
      res.max_rel_error = err;
      res.worst_tensor = k;
      res.worst_index = i;
      res.worst_analytic = analytic;
      res.worst_numeric = numeric;
    }
  }
  return res;
}

/// Single-input form; returns the maximum relative error.
inline double finite_diff_check(const ScalarFn& f, const Tensor& x, double h,
                                std::size_t max_coords = 0, std::uint64_t seed = 0) {
  return finite_diff_audit(f, {x}, h, max_coords, seed).max_rel_error;
}

}  // namespace uniflow
