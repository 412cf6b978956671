#pragma once

// Differentiable tensor operations. Every op takes the Graph it records into
// as its first argument; when no input requires a gradient (or the graph is
// not recording) nothing is recorded and the op is a plain function.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <string>
#include <vector>

#include "uniflow/gemm.hpp"
#include "uniflow/tensor.hpp"

namespace uniflow::ops {

using detail::grad_sink;
using detail::require_finite;

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

/// Output extent of a strided correlation. Throws when the extent is empty or
/// when flooring would discard real input pixels (remainder beyond padding).
inline std::int64_t conv_out_extent(std::int64_t in, std::int64_t k, int stride, int pad) {
  const std::int64_t span = in + 2 * pad - k;
  if (span < 0) {
    throw ShapeError("conv2d: kernel " + std::to_string(k) + " larger than padded input " +
                     std::to_string(in + 2 * pad));
  }
  if (span % stride > pad) {
    throw ShapeError("conv2d: non-integer output extent for input " + std::to_string(in) +
                     ", kernel " + std::to_string(k) + ", stride " + std::to_string(stride) +
                     ", padding " + std::to_string(pad));
  }
  return span / stride + 1;
}

namespace detail_conv {

struct Geometry {
  std::int64_t n, cin, h, w, cout, kh, kw, ho, wo;
  int stride, pad;

  // Output columns [lo, hi) whose input column ox*stride + kx - pad is in range.
  void col_range(std::int64_t kx, std::int64_t& lo, std::int64_t& hi) const {
    const std::int64_t off = kx - pad;
    lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    const std::int64_t last = w - 1 - off;  // largest ox*stride allowed
    hi = last < 0 ? 0 : std::min<std::int64_t>(wo, last / stride + 1);
  }
  void row_range(std::int64_t ky, std::int64_t& lo, std::int64_t& hi) const {
    const std::int64_t off = ky - pad;
    lo = off >= 0 ? 0 : (-off + stride - 1) / stride;
    const std::int64_t last = h - 1 - off;
    hi = last < 0 ? 0 : std::min<std::int64_t>(ho, last / stride + 1);
  }
};

// Output rows are processed in bands so that the column matrices stay in cache.
inline std::int64_t band_rows(const Geometry& g) {
  return std::max<std::int64_t>(1, std::min<std::int64_t>(g.ho, 256 / std::max<std::int64_t>(1, g.wo)));
}

// col[(ci*kh + ky)*kw + kx][(oy - oy_begin)*wo + ox] = x[ci][oy*s + ky - p][ox*s + kx - p],
// zero outside the input, for oy in [oy_begin, oy_end).
inline void im2col(const Geometry& g, const double* __restrict x, std::int64_t oy_begin, std::int64_t oy_end,
                   double* __restrict col) {
  const std::int64_t width = (oy_end - oy_begin) * g.wo;
  for (std::int64_t ci = 0; ci < g.cin; ++ci)
    for (std::int64_t ky = 0; ky < g.kh; ++ky)
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        double* row = col + ((ci * g.kh + ky) * g.kw + kx) * width;
        std::fill(row, row + width, 0.0);
        std::int64_t oy0, oy1, ox0, ox1;
        g.row_range(ky, oy0, oy1);
        g.col_range(kx, ox0, ox1);
        oy0 = std::max(oy0, oy_begin);
        oy1 = std::min(oy1, oy_end);
        for (std::int64_t oy = oy0; oy < oy1; ++oy) {
          const double* xr = x + (ci * g.h + oy * g.stride + ky - g.pad) * g.w + (kx - g.pad);
          double* r = row + (oy - oy_begin) * g.wo;
          for (std::int64_t ox = ox0; ox < ox1; ++ox) r[ox] = xr[ox * g.stride];
        }
      }
}

// Inverse scatter of im2col: accumulates a band's column matrix into the input gradient.
inline void col2im_add(const Geometry& g, const double* __restrict col, std::int64_t oy_begin,
                       std::int64_t oy_end, double* __restrict gx) {
  const std::int64_t width = (oy_end - oy_begin) * g.wo;
  for (std::int64_t ci = 0; ci < g.cin; ++ci)
    for (std::int64_t ky = 0; ky < g.kh; ++ky)
      for (std::int64_t kx = 0; kx < g.kw; ++kx) {
        const double* row = col + ((ci * g.kh + ky) * g.kw + kx) * width;
        std::int64_t oy0, oy1, ox0, ox1;
        g.row_range(ky, oy0, oy1);
        g.col_range(kx, ox0, ox1);
        oy0 = std::max(oy0, oy_begin);
        oy1 = std::min(oy1, oy_end);
        for (std::int64_t oy = oy0; oy < oy1; ++oy) {
          double* xr = gx + (ci * g.h + oy * g.stride + ky - g.pad) * g.w + (kx - g.pad);
          const double* r = row + (oy - oy_begin) * g.wo;
          for (std::int64_t ox = ox0; ox < ox1; ++ox) xr[ox * g.stride] += r[ox];
        }
      }
}

inline void forward(const Geometry& g, const double* in, const double* wt, const double* bias, double* out) {
  const std::int64_t plane = g.ho * g.wo, kdim = g.cin * g.kh * g.kw;
  const std::int64_t band = band_rows(g);
  std::vector<double> col(static_cast<std::size_t>(kdim * band * g.wo));
  for (std::int64_t n = 0; n < g.n; ++n) {
    double* y = out + n * g.cout * plane;
    for (std::int64_t co = 0; co < g.cout; ++co)
      std::fill(y + co * plane, y + (co + 1) * plane, bias ? bias[co] : 0.0);
    const double* x = in + n * g.cin * g.h * g.w;
    for (std::int64_t oy = 0; oy < g.ho; oy += band) {
      const std::int64_t end = std::min(g.ho, oy + band);
      const std::int64_t width = (end - oy) * g.wo;
      im2col(g, x, oy, end, col.data());
      gemm::gemm_nn(g.cout, width, kdim, wt, kdim, col.data(), width, y + oy * g.wo, plane);
    }
  }
}

inline void backward_input(const Geometry& g, const double* gout, const double* wt, double* gin) {
  const std::int64_t plane = g.ho * g.wo, kdim = g.cin * g.kh * g.kw;
  const std::int64_t band = band_rows(g);
  std::vector<double> wt_t(static_cast<std::size_t>(kdim * g.cout));
  for (std::int64_t co = 0; co < g.cout; ++co)
    for (std::int64_t k = 0; k < kdim; ++k) wt_t[static_cast<std::size_t>(k * g.cout + co)] = wt[co * kdim + k];
  std::vector<double> col(static_cast<std::size_t>(kdim * band * g.wo));
  for (std::int64_t n = 0; n < g.n; ++n) {
    const double* gy = gout + n * g.cout * plane;
    double* gx = gin + n * g.cin * g.h * g.w;
    for (std::int64_t oy = 0; oy < g.ho; oy += band) {
      const std::int64_t end = std::min(g.ho, oy + band);
      const std::int64_t width = (end - oy) * g.wo;
      std::fill(col.begin(), col.begin() + kdim * width, 0.0);
      gemm::gemm_nn(kdim, width, g.cout, wt_t.data(), g.cout, gy + oy * g.wo, plane, col.data(), width);
      col2im_add(g, col.data(), oy, end, gx);
    }
  }
}

inline void backward_weight(const Geometry& g, const double* gout, const double* in, double* gw) {
  const std::int64_t plane = g.ho * g.wo, kdim = g.cin * g.kh * g.kw;
  const std::int64_t band = band_rows(g);
  std::vector<double> col(static_cast<std::size_t>(kdim * band * g.wo));
  std::vector<double> colt(col.size());
  for (std::int64_t n = 0; n < g.n; ++n) {
    const double* gy = gout + n * g.cout * plane;
    const double* x = in + n * g.cin * g.h * g.w;
    for (std::int64_t oy = 0; oy < g.ho; oy += band) {
      const std::int64_t end = std::min(g.ho, oy + band);
      const std::int64_t width = (end - oy) * g.wo;
      im2col(g, x, oy, end, col.data());
      for (std::int64_t k = 0; k < kdim; ++k)
        for (std::int64_t p = 0; p < width; ++p)
          colt[static_cast<std::size_t>(p * kdim + k)] = col[static_cast<std::size_t>(k * width + p)];
      gemm::gemm_nn(g.cout, kdim, width, gy + oy * g.wo, plane, colt.data(), kdim, gw, kdim);
    }
  }
}

}  // namespace detail_conv

/// 2-D cross-correlation (no kernel flip) with optional bias.
///
/// `weight` is laid out (Cout, Cin, kh, kw); `bias` is undefined or holds Cout
/// values. Zero padding of `padding` pixels on every side; 0 means none.
inline Tensor conv2d(Graph& graph, const Tensor& input, const Tensor& weight, const Tensor& bias,
                     int stride = 1, int padding = 0) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (ws.c != xs.c) {
    throw ShapeError("conv2d: input has " + std::to_string(xs.c) + " channels, weight expects " +
                     std::to_string(ws.c));
  }
  if (ws.h % 2 == 0 || ws.w % 2 == 0) throw ShapeError("conv2d: kernel extents must be odd");
  if (stride != 1 && stride != 2) throw ShapeError("conv2d: stride must be 1 or 2");
  if (padding < 0) throw ShapeError("conv2d: negative padding");
  if (bias.defined() && bias.numel() != ws.n) throw ShapeError("conv2d: bias size mismatch");

  detail_conv::Geometry g{xs.n, xs.c, xs.h, xs.w, ws.n, ws.h, ws.w,
                          conv_out_extent(xs.h, ws.h, stride, padding),
                          conv_out_extent(xs.w, ws.w, stride, padding), stride, padding};
  Tensor out = graph.make_output({g.n, g.cout, g.ho, g.wo}, {&input, &weight, &bias});
  const double* bptr = bias.defined() ? bias.data().data() : nullptr;
  detail_conv::forward(g, input.data().data(), weight.data().data(), bptr, out.data().data());
  require_finite(out, OpKind::conv2d);

  graph.record(OpKind::conv2d, out, {input, weight, bias},
               [g, input, weight, bias](const detail::Node& o) {
                 const double* gy = o.grad.data();
                 if (double* gx = grad_sink(input)) detail_conv::backward_input(g, gy, weight.data().data(), gx);
                 if (double* gw = grad_sink(weight)) detail_conv::backward_weight(g, gy, input.data().data(), gw);
                 if (bias.defined()) {
                   if (double* gb = grad_sink(bias)) {
                     const std::int64_t plane = g.ho * g.wo;
                     for (std::int64_t n = 0; n < g.n; ++n) {
                       for (std::int64_t co = 0; co < g.cout; ++co) {
                         const double* p = gy + (n * g.cout + co) * plane;
                         double s = 0;
                         for (std::int64_t i = 0; i < plane; ++i) s += p[i];
                         gb[co] += s;
                       }
                     }
                   }
                 }
               });
  return out;
}

// ---------------------------------------------------------------------------
// linear
// ---------------------------------------------------------------------------

/// Dense map over the channel axis of an (N, Cin, 1, 1) tensor. `weight` is
/// (Cout, Cin, 1, 1), `bias` holds Cout values or is undefined.
inline Tensor linear(Graph& graph, const Tensor& input, const Tensor& weight, const Tensor& bias) {
  const Shape& xs = input.shape();
  const Shape& ws = weight.shape();
  if (xs.h != 1 || xs.w != 1) throw ShapeError("linear: input must be (N,C,1,1), got " + xs.str());
  if (ws.c != xs.c || ws.h != 1 || ws.w != 1) {
    throw ShapeError("linear: weight " + ws.str() + " incompatible with input " + xs.str());
  }
  if (bias.defined() && bias.numel() != ws.n) throw ShapeError("linear: bias size mismatch");
  const std::int64_t n_ = xs.n, cin = xs.c, cout = ws.n;
  Tensor out = graph.make_output({n_, cout, 1, 1}, {&input, &weight, &bias});
  const double* x = input.data().data();
  const double* w = weight.data().data();
  double* y = out.data().data();
  for (std::int64_t n = 0; n < n_; ++n) {
    for (std::int64_t co = 0; co < cout; ++co) {
      double s = bias.defined() ? bias.data()[static_cast<std::size_t>(co)] : 0.0;
      for (std::int64_t ci = 0; ci < cin; ++ci) s += w[co * cin + ci] * x[n * cin + ci];
      y[n * cout + co] = s;
    }
  }
  require_finite(out, OpKind::linear);
  graph.record(OpKind::linear, out, {input, weight, bias},
               [=](const detail::Node& o) {
                 const double* gy = o.grad.data();
                 if (double* gx = grad_sink(input)) {
                   for (std::int64_t n = 0; n < n_; ++n)
                     for (std::int64_t co = 0; co < cout; ++co)
                       for (std::int64_t ci = 0; ci < cin; ++ci)
                         gx[n * cin + ci] += w[co * cin + ci] * gy[n * cout + co];
                 }
                 if (double* gw = grad_sink(weight)) {
                   for (std::int64_t n = 0; n < n_; ++n)
                     for (std::int64_t co = 0; co < cout; ++co)
                       for (std::int64_t ci = 0; ci < cin; ++ci)
                         gw[co * cin + ci] += x[n * cin + ci] * gy[n * cout + co];
                 }
                 if (bias.defined()) {
                   if (double* gb = grad_sink(bias)) {
                     for (std::int64_t n = 0; n < n_; ++n)
                       for (std::int64_t co = 0; co < cout; ++co) gb[co] += gy[n * cout + co];
                   }
                 }
               });
  return out;
}

// ---------------------------------------------------------------------------
// normalisation
// ---------------------------------------------------------------------------

/// Group normalisation with per-channel affine terms.
inline Tensor group_norm(Graph& graph, const Tensor& input, int groups, const Tensor& gamma,
                         const Tensor& beta, double eps = 1e-5) {
  const Shape& s = input.shape();
  if (groups <= 0 || s.c % groups != 0) {
    throw ShapeError("group_norm: " + std::to_string(s.c) + " channels not divisible into " +
                     std::to_string(groups) + " groups");
  }
  if (eps <= 0) throw ShapeError("group_norm: eps must be positive");
  if (gamma.numel() != s.c || beta.numel() != s.c) throw ShapeError("group_norm: affine size mismatch");
  const std::int64_t cpg = s.c / groups, plane = s.plane();
  const std::int64_t gsize = cpg * plane;
  Tensor out = graph.make_output(s, {&input, &gamma, &beta});
  std::vector<double> mean(static_cast<std::size_t>(s.n * groups));
  std::vector<double> rstd(mean.size());
  const double* x = input.data().data();
  const double* ga = gamma.data().data();
  const double* be = beta.data().data();
  double* y = out.data().data();
  for (std::int64_t n = 0; n < s.n; ++n) {
    for (std::int64_t gi = 0; gi < groups; ++gi) {
      const double* xg = x + (n * s.c + gi * cpg) * plane;
      double m = 0;
      for (std::int64_t i = 0; i < gsize; ++i) m += xg[i];
      m /= static_cast<double>(gsize);
      double v = 0;
      for (std::int64_t i = 0; i < gsize; ++i) v += (xg[i] - m) * (xg[i] - m);
      v /= static_cast<double>(gsize);
      const double r = 1.0 / std::sqrt(v + eps);
      mean[static_cast<std::size_t>(n * groups + gi)] = m;
      rstd[static_cast<std::size_t>(n * groups + gi)] = r;
      for (std::int64_t c = 0; c < cpg; ++c) {
        const std::int64_t ch = gi * cpg + c;
        const double* xc = xg + c * plane;
        double* yc = y + (n * s.c + ch) * plane;
        for (std::int64_t i = 0; i < plane; ++i) yc[i] = ga[ch] * ((xc[i] - m) * r) + be[ch];
      }
    }
  }
  require_finite(out, OpKind::group_norm);
  graph.record(OpKind::group_norm, out, {input, gamma, beta},
               [=, mean = std::move(mean), rstd = std::move(rstd)](const detail::Node& o) {
                 const double* gy = o.grad.data();
                 double* gx = grad_sink(input);
                 double* gg = grad_sink(gamma);
                 double* gb = grad_sink(beta);
                 std::vector<double> dxhat(static_cast<std::size_t>(gsize));
                 for (std::int64_t n = 0; n < s.n; ++n) {
                   for (std::int64_t gi = 0; gi < groups; ++gi) {
                     const double m = mean[static_cast<std::size_t>(n * groups + gi)];
                     const double r = rstd[static_cast<std::size_t>(n * groups + gi)];
                     const std::int64_t off = (n * s.c + gi * cpg) * plane;
                     double sum_d = 0, sum_dx = 0;
                     for (std::int64_t c = 0; c < cpg; ++c) {
                       const std::int64_t ch = gi * cpg + c;
                       for (std::int64_t i = 0; i < plane; ++i) {
                         const std::int64_t k = c * plane + i;
                         const double xhat = (x[off + k] - m) * r;
                         const double d = gy[off + k];
                         if (gg) gg[ch] += d * xhat;
                         if (gb) gb[ch] += d;
                         const double dx = d * ga[ch];
                         dxhat[static_cast<std::size_t>(k)] = dx;
                         sum_d += dx;
                         sum_dx += dx * xhat;
                       }
                     }
                     if (!gx) continue;
                     const double inv = 1.0 / static_cast<double>(gsize);
                     for (std::int64_t k = 0; k < gsize; ++k) {
                       const double xhat = (x[off + k] - m) * r;
                       gx[off + k] +=
                           r * (dxhat[static_cast<std::size_t>(k)] - sum_d * inv - xhat * sum_dx * inv);
                     }
                   }
                 }
               });
  return out;
}

/// Per-sample, per-channel standardisation over the spatial extent:
/// (x - mean) / (std + 1e-6), population standard deviation.
inline Tensor normalize_channels(Graph& graph, const Tensor& input, double eps = 1e-6) {
  const Shape& s = input.shape();
  const std::int64_t plane = s.plane();
  if (plane < 1) throw ShapeError("normalize: empty spatial extent");
  Tensor out = graph.make_output(s, {&input});
  std::vector<double> mean(static_cast<std::size_t>(s.n * s.c)), sd(mean.size());
  const double* x = input.data().data();
  double* y = out.data().data();
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    const double* xp = x + p * plane;
    double m = 0;
    for (std::int64_t i = 0; i < plane; ++i) m += xp[i];
    m /= static_cast<double>(plane);
    double v = 0;
    for (std::int64_t i = 0; i < plane; ++i) v += (xp[i] - m) * (xp[i] - m);
    const double sdev = std::sqrt(v / static_cast<double>(plane));
    mean[static_cast<std::size_t>(p)] = m;
    sd[static_cast<std::size_t>(p)] = sdev;
    const double inv = 1.0 / (sdev + eps);
    for (std::int64_t i = 0; i < plane; ++i) y[p * plane + i] = (xp[i] - m) * inv;
  }
  require_finite(out, OpKind::normalize);
  graph.record(OpKind::normalize, out, {input},
               [=, mean = std::move(mean), sd = std::move(sd)](const detail::Node& o) {
                 double* gx = grad_sink(input);
                 const double* gy = o.grad.data();
                 const double inv_m = 1.0 / static_cast<double>(plane);
                 for (std::int64_t p = 0; p < s.n * s.c; ++p) {
                   const double m = mean[static_cast<std::size_t>(p)];
                   const double sdev = sd[static_cast<std::size_t>(p)];
                   const double denom = sdev + eps;
                   const double* g = gy + p * plane;
                   const double* xp = x + p * plane;
                   double sum_g = 0, sum_gc = 0;
                   for (std::int64_t i = 0; i < plane; ++i) {
                     sum_g += g[i];
                     sum_gc += g[i] * (xp[i] - m);
                   }
                   // d sd / d x_i = (x_i - m) / (M sd); zero-variance planes have no such term.
                   const double k = sdev > 0 ? sum_gc / (denom * denom) * inv_m / sdev : 0.0;
                   for (std::int64_t i = 0; i < plane; ++i) {
                     gx[p * plane + i] += (g[i] - sum_g * inv_m) / denom - k * (xp[i] - m);
                   }
                 }
               });
  return out;
}

// ---------------------------------------------------------------------------
// pointwise
// ---------------------------------------------------------------------------

/// Exact GELU, x * Phi(x).
inline double gelu_value(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

inline double gelu_derivative(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

namespace detail_pw {

template <class Fwd, class Deriv>
Tensor unary(Graph& graph, const Tensor& input, OpKind kind, Fwd fwd, Deriv deriv) {
  Tensor out = graph.make_output(input.shape(), {&input});
  const double* x = input.data().data();
  double* y = out.data().data();
  const std::int64_t m = input.numel();
  for (std::int64_t i = 0; i < m; ++i) y[i] = fwd(x[i]);
  require_finite(out, kind);
  // deriv(x, y) gets both input and output so each op can use the cheaper one.
  graph.record(kind, out, {input}, [=](const detail::Node& o) {
    double* gx = grad_sink(input);
    const double* gy = o.grad.data();
    const double* yy = o.data.data();
    for (std::int64_t i = 0; i < m; ++i) gx[i] += gy[i] * deriv(x[i], yy[i]);
  });
  return out;
}

}  // namespace detail_pw

inline Tensor gelu(Graph& graph, const Tensor& x) {
  return detail_pw::unary(graph, x, OpKind::gelu, gelu_value,
                          [](double v, double) { return gelu_derivative(v); });
}

inline Tensor sigmoid(Graph& graph, const Tensor& x) {
  return detail_pw::unary(graph, x, OpKind::sigmoid, sigmoid_value,
                          [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(Graph& graph, const Tensor& x) {
  return detail_pw::unary(graph, x, OpKind::tanh, [](double v) { return std::tanh(v); },
                          [](double, double y) { return 1.0 - y * y; });
}

/// Multiplies by a constant: x * c.
inline Tensor scale(Graph& graph, const Tensor& x, double c) {
  return detail_pw::unary(graph, x, OpKind::scale, [c](double v) { return v * c; },
                          [c](double, double) { return c; });
}

/// x + c for a constant c.
inline Tensor add_scalar(Graph& graph, const Tensor& x, double c) {
  return detail_pw::unary(graph, x, OpKind::add_scalar, [c](double v) { return v + c; },
                          [](double, double) { return 1.0; });
}

/// exp(-lambda * t), the time decay applied to the potential term.
inline double exp_neg_scale(double lambda, double t) { return std::exp(-lambda * t); }

/// x * exp(-lambda * t); t is a constant, so the op is linear in x.
inline Tensor exp_neg_scale(Graph& graph, const Tensor& x, double lambda, double t) {
  return scale(graph, x, exp_neg_scale(lambda, t));
}

// ---------------------------------------------------------------------------
// reshaping
// ---------------------------------------------------------------------------

/// Mean over H x W for every (n, c).
inline Tensor spatial_mean(Graph& graph, const Tensor& input) {
  const Shape& s = input.shape();
  const std::int64_t plane = s.plane();
  if (plane < 1) throw ShapeError("spatial_mean: empty spatial extent");
  Tensor out = graph.make_output({s.n, s.c, 1, 1}, {&input});
  const double* x = input.data().data();
  double* y = out.data().data();
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    double acc = 0;
    for (std::int64_t i = 0; i < plane; ++i) acc += x[p * plane + i];
    y[p] = acc / static_cast<double>(plane);
  }
  require_finite(out, OpKind::spatial_mean);
  graph.record(OpKind::spatial_mean, out, {input}, [=](const detail::Node& o) {
    double* gx = grad_sink(input);
    const double inv = 1.0 / static_cast<double>(plane);
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
      const double g = o.grad[static_cast<std::size_t>(p)] * inv;
      for (std::int64_t i = 0; i < plane; ++i) gx[p * plane + i] += g;
    }
  });
  return out;
}

/// Nearest-neighbour upsampling by an integer factor.
inline Tensor upsample_nearest(Graph& graph, const Tensor& input, int factor) {
  if (factor < 2) throw ShapeError("upsample_nearest: factor must be >= 2");
  const Shape& s = input.shape();
  const std::int64_t ho = s.h * factor, wo = s.w * factor;
  Tensor out = graph.make_output({s.n, s.c, ho, wo}, {&input});
  const double* x = input.data().data();
  double* y = out.data().data();
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    for (std::int64_t oy = 0; oy < ho; ++oy) {
      const double* xr = x + (p * s.h + oy / factor) * s.w;
      double* yr = y + (p * ho + oy) * wo;
      for (std::int64_t ox = 0; ox < wo; ++ox) yr[ox] = xr[ox / factor];
    }
  }
  graph.record(OpKind::upsample, out, {input}, [=](const detail::Node& o) {
    double* gx = grad_sink(input);
    const double* gy = o.grad.data();
    for (std::int64_t p = 0; p < s.n * s.c; ++p) {
      for (std::int64_t oy = 0; oy < ho; ++oy) {
        double* xr = gx + (p * s.h + oy / factor) * s.w;
        const double* yr = gy + (p * ho + oy) * wo;
        for (std::int64_t ox = 0; ox < wo; ++ox) xr[ox / factor] += yr[ox];
      }
    }
  });
  return out;
}

/// Channel concatenation, `a` first. An empty (zero-channel) operand is allowed.
inline Tensor concat_channels(Graph& graph, const Tensor& a, const Tensor& b) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as.n != bs.n || as.h != bs.h || as.w != bs.w) {
    throw ShapeError("concat_channels: " + as.str() + " and " + bs.str() + " disagree on N,H,W");
  }
  const std::int64_t pa = as.c * as.plane(), pb = bs.c * bs.plane();
  Tensor out = graph.make_output({as.n, as.c + bs.c, as.h, as.w}, {&a, &b});
  double* y = out.data().data();
  for (std::int64_t n = 0; n < as.n; ++n) {
    std::copy_n(a.data().data() + n * pa, pa, y + n * (pa + pb));
    std::copy_n(b.data().data() + n * pb, pb, y + n * (pa + pb) + pa);
  }
  graph.record(OpKind::concat, out, {a, b}, [=](const detail::Node& o) {
    const double* gy = o.grad.data();
    double* ga = grad_sink(a);
    double* gb = grad_sink(b);
    for (std::int64_t n = 0; n < as.n; ++n) {
      const double* src = gy + n * (pa + pb);
      if (ga)
        for (std::int64_t i = 0; i < pa; ++i) ga[n * pa + i] += src[i];
      if (gb)
        for (std::int64_t i = 0; i < pb; ++i) gb[n * pb + i] += src[pa + i];
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// elementwise arithmetic with broadcasting of the second operand
// ---------------------------------------------------------------------------

namespace detail_arith {

enum class Kind { add, sub, mul };

// b broadcasts onto a when every extent of b is 1 or equal to a's.
inline void check_broadcast(const Shape& a, const Shape& b, const char* what) {
  for (int i = 0; i < 4; ++i) {
    if (b[i] != a[i] && b[i] != 1) {
      throw ShapeError(std::string(what) + ": cannot broadcast " + b.str() + " onto " + a.str());
    }
  }
}

// Visits (index into a, index into b) for every element of a.
template <class F>
void for_each_pair(const Shape& a, const Shape& b, F&& f) {
  if (a == b) {
    for (std::int64_t i = 0; i < a.numel(); ++i) f(i, i);
    return;
  }
  const std::int64_t sn = b.n == 1 ? 0 : b.c * b.h * b.w;
  const std::int64_t sc = b.c == 1 ? 0 : b.h * b.w;
  const std::int64_t sh = b.h == 1 ? 0 : b.w;
  const std::int64_t sw = b.w == 1 ? 0 : 1;
  std::int64_t ia = 0;
  for (std::int64_t n = 0; n < a.n; ++n)
    for (std::int64_t c = 0; c < a.c; ++c)
      for (std::int64_t h = 0; h < a.h; ++h) {
        const std::int64_t row = n * sn + c * sc + h * sh;
        for (std::int64_t w = 0; w < a.w; ++w) f(ia++, row + w * sw);
      }
}

inline Tensor binary(Graph& graph, const Tensor& a, const Tensor& b, Kind kind) {
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  const OpKind op = kind == Kind::add ? OpKind::add : kind == Kind::sub ? OpKind::sub : OpKind::mul;
  check_broadcast(as, bs, op_name(op));
  Tensor out = graph.make_output(as, {&a, &b});
  const double* x = a.data().data();
  const double* z = b.data().data();
  double* y = out.data().data();
  switch (kind) {
    case Kind::add: for_each_pair(as, bs, [&](auto i, auto j) { y[i] = x[i] + z[j]; }); break;
    case Kind::sub: for_each_pair(as, bs, [&](auto i, auto j) { y[i] = x[i] - z[j]; }); break;
    case Kind::mul: for_each_pair(as, bs, [&](auto i, auto j) { y[i] = x[i] * z[j]; }); break;
  }
  require_finite(out, op);
  graph.record(op, out, {a, b}, [=](const detail::Node& o) {
    const double* gy = o.grad.data();
    double* ga = grad_sink(a);
    double* gb = grad_sink(b);
    switch (kind) {
      case Kind::add:
      case Kind::sub: {
        const double sign = kind == Kind::add ? 1.0 : -1.0;
        for_each_pair(as, bs, [&](auto i, auto j) {
          if (ga) ga[i] += gy[i];
          if (gb) gb[j] += sign * gy[i];
        });
        break;
      }
      case Kind::mul:
        for_each_pair(as, bs, [&](auto i, auto j) {
          if (ga) ga[i] += gy[i] * z[j];
          if (gb) gb[j] += gy[i] * x[i];
        });
        break;
    }
  });
  return out;
}

}  // namespace detail_arith

/// a + b; b may broadcast over any unit extent (e.g. (N,C,1,1) onto (N,C,H,W)).
inline Tensor add(Graph& graph, const Tensor& a, const Tensor& b) {
  return detail_arith::binary(graph, a, b, detail_arith::Kind::add);
}

inline Tensor sub(Graph& graph, const Tensor& a, const Tensor& b) {
  return detail_arith::binary(graph, a, b, detail_arith::Kind::sub);
}

inline Tensor mul(Graph& graph, const Tensor& a, const Tensor& b) {
  return detail_arith::binary(graph, a, b, detail_arith::Kind::mul);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

/// Sum of all elements as a (1,1,1,1) tensor.
inline Tensor sum(Graph& graph, const Tensor& input) {
  Tensor out = graph.make_output({1, 1, 1, 1}, {&input});
  double acc = 0;
  for (double v : input.data()) acc += v;
  out.data()[0] = acc;
  require_finite(out, OpKind::sum);
  graph.record(OpKind::sum, out, {input}, [input](const detail::Node& o) {
    double* gx = grad_sink(input);
    const double g = o.grad[0];
    for (std::int64_t i = 0; i < input.numel(); ++i) gx[i] += g;
  });
  return out;
}

/// Mean absolute error. The subgradient of |.| at 0 is taken as 0.
inline Tensor l1_loss(Graph& graph, const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("l1_loss: " + pred.shape().str() + " vs " + target.shape().str());
  }
  const std::int64_t m = pred.numel();
  Tensor out = graph.make_output({1, 1, 1, 1}, {&pred, &target});
  const double* p = pred.data().data();
  const double* t = target.data().data();
  double acc = 0;
  for (std::int64_t i = 0; i < m; ++i) acc += std::abs(p[i] - t[i]);
  out.data()[0] = acc / static_cast<double>(m);
  require_finite(out, OpKind::l1_loss);
  graph.record(OpKind::l1_loss, out, {pred, target}, [=](const detail::Node& o) {
    const double g = o.grad[0] / static_cast<double>(m);
    double* gp = grad_sink(pred);
    double* gt = grad_sink(target);
    for (std::int64_t i = 0; i < m; ++i) {
      const double d = p[i] - t[i];
      const double sgn = d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0;
      if (gp) gp[i] += g * sgn;
      if (gt) gt[i] -= g * sgn;
    }
  });
  return out;
}

}  // namespace uniflow::ops
