#pragma once

// Full-reference fidelity metrics and prompt-embedding cluster statistics.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "uniflow/error.hpp"
#include "uniflow/tensor.hpp"

namespace uniflow {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

/// 10 log10(peak^2 / MSE) over the whole tensor; +inf when MSE is 0.
inline double psnr(const Tensor& a, const Tensor& b, double peak = 1.0) {
  if (a.shape() != b.shape()) throw ShapeError("psnr: " + a.shape().str() + " vs " + b.shape().str());
  double se = 0;
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    se += d * d;
  }
  if (se == 0) return kInf;
  return 10.0 * std::log10(peak * peak / (se / static_cast<double>(a.numel())));
}

namespace detail_metrics {

inline constexpr int kWindow = 11;

inline const std::vector<double>& ssim_window_1d() {
  static const std::vector<double> w = [] {
    std::vector<double> k(kWindow);
    double total = 0;
    for (int i = 0; i < kWindow; ++i) total += k[static_cast<std::size_t>(i)] = std::exp(-0.5 * (i - 5) * (i - 5) / (1.5 * 1.5));
    for (double& v : k) v /= total;
    return k;
  }();
  return w;
}

// Valid-position separable filtering of one plane: (h-10) x (w-10) output.
inline std::vector<double> filter_valid(const double* img, std::int64_t h, std::int64_t w) {
  const auto& k = ssim_window_1d();
  const std::int64_t ho = h - kWindow + 1, wo = w - kWindow + 1;
  std::vector<double> rows(static_cast<std::size_t>(h * wo)), out(static_cast<std::size_t>(ho * wo));
  for (std::int64_t y = 0; y < h; ++y)
    for (std::int64_t x = 0; x < wo; ++x) {
      double acc = 0;
      for (int d = 0; d < kWindow; ++d) acc += k[static_cast<std::size_t>(d)] * img[y * w + x + d];
      rows[static_cast<std::size_t>(y * wo + x)] = acc;
    }
  for (std::int64_t y = 0; y < ho; ++y)
    for (std::int64_t x = 0; x < wo; ++x) {
      double acc = 0;
      for (int d = 0; d < kWindow; ++d) acc += k[static_cast<std::size_t>(d)] * rows[static_cast<std::size_t>((y + d) * wo + x)];
      out[static_cast<std::size_t>(y * wo + x)] = acc;
    }
  return out;
}

}  // namespace detail_metrics

/// Mean SSIM over every (sample, channel) plane: 11x11 Gaussian window with
/// sigma 1.5, C1 = (0.01 peak)^2, C2 = (0.03 peak)^2, valid window positions only.
inline double ssim(const Tensor& a, const Tensor& b, double peak = 1.0) {
  using detail_metrics::filter_valid;
  using detail_metrics::kWindow;
  const Shape s = a.shape();
  if (s != b.shape()) throw ShapeError("ssim: " + s.str() + " vs " + b.shape().str());
  if (s.h < kWindow || s.w < kWindow) throw ShapeError("ssim: image " + s.str() + " is smaller than the 11x11 window");
  const double c1 = (0.01 * peak) * (0.01 * peak), c2 = (0.03 * peak) * (0.03 * peak);
  const std::int64_t plane = s.plane();
  std::vector<double> aa(static_cast<std::size_t>(plane)), bb(aa.size()), ab(aa.size());
  double total = 0;
  std::int64_t count = 0;
  for (std::int64_t p = 0; p < s.n * s.c; ++p) {
    const double* x = a.data().data() + p * plane;
    const double* y = b.data().data() + p * plane;
    for (std::int64_t i = 0; i < plane; ++i) {
      aa[static_cast<std::size_t>(i)] = x[i] * x[i];
      bb[static_cast<std::size_t>(i)] = y[i] * y[i];
      ab[static_cast<std::size_t>(i)] = x[i] * y[i];
    }
    const auto mx = filter_valid(x, s.h, s.w), my = filter_valid(y, s.h, s.w);
    const auto sxx = filter_valid(aa.data(), s.h, s.w), syy = filter_valid(bb.data(), s.h, s.w);
    const auto sxy = filter_valid(ab.data(), s.h, s.w);
    for (std::size_t i = 0; i < mx.size(); ++i) {
      const double vx = sxx[i] - mx[i] * mx[i], vy = syy[i] - my[i] * my[i], cxy = sxy[i] - mx[i] * my[i];
      total += ((2 * mx[i] * my[i] + c1) * (2 * cxy + c2)) /
               ((mx[i] * mx[i] + my[i] * my[i] + c1) * (vx + vy + c2));
    }
    count += static_cast<std::int64_t>(mx.size());
  }
  return total / static_cast<double>(count);
}

struct PromptSeparation {
  double intra = 0;  // mean pairwise distance within a task
  double inter = 0;  // mean pairwise distance across tasks
  double ratio = 1;  // inter / intra; +inf when only intra is 0, 1 when both are
};

struct LabelledEmbedding {
  std::vector<double> z;
  std::string task;
};

/// Needs at least two tasks with at least four vectors each.
inline PromptSeparation prompt_separation(const std::vector<LabelledEmbedding>& e) {
  std::map<std::string, int> per_task;
  for (const auto& v : e) ++per_task[v.task];
  if (per_task.size() < 2) throw ConfigError("prompt_separation: need at least two tasks");
  for (const auto& [task, n] : per_task)
    if (n < 4) throw ConfigError("prompt_separation: task '" + task + "' has fewer than 4 vectors");
  for (const auto& v : e)
    if (v.z.size() != e.front().z.size()) throw ShapeError("prompt_separation: embeddings differ in width");

  double intra = 0, inter = 0;
  std::int64_t n_intra = 0, n_inter = 0;
  for (std::size_t i = 0; i < e.size(); ++i)
    for (std::size_t j = i + 1; j < e.size(); ++j) {
      double d2 = 0;
      for (std::size_t k = 0; k < e[i].z.size(); ++k) d2 += (e[i].z[k] - e[j].z[k]) * (e[i].z[k] - e[j].z[k]);
      if (e[i].task == e[j].task) {
        intra += std::sqrt(d2);
        ++n_intra;
      } else {
        inter += std::sqrt(d2);
        ++n_inter;
      }
    }
  PromptSeparation r;
  r.intra = intra / static_cast<double>(n_intra);
  r.inter = inter / static_cast<double>(n_inter);
  if (r.intra == 0) r.ratio = r.inter == 0 ? 1.0 : kInf;
  else r.ratio = r.inter / r.intra;
  return r;
}

// ---------------------------------------------------------------------------
// reports
// ---------------------------------------------------------------------------

struct MetricRow {
  std::string frame_id;
  std::string task;
  double psnr_in = 0;
  double psnr_out = 0;
  double ssim_in = 0;
  double ssim_out = 0;
};

struct MetricSummary {
  std::string task;  // "all" for the overall row
  std::int64_t frames = 0;
  double psnr_in = 0;
  double psnr_out = 0;
  double ssim_in = 0;
  double ssim_out = 0;
};

/// Per-task means followed by the overall mean. Infinite PSNR values are
/// excluded from the PSNR means; a group with no finite value reports inf.
inline std::vector<MetricSummary> summarize(const std::vector<MetricRow>& rows) {
  struct Acc {
    std::int64_t n = 0, pin_n = 0, pout_n = 0;
    double pin = 0, pout = 0, sin = 0, sout = 0;
    void add(const MetricRow& r) {
      ++n;
      if (std::isfinite(r.psnr_in)) pin += r.psnr_in, ++pin_n;
      if (std::isfinite(r.psnr_out)) pout += r.psnr_out, ++pout_n;
      sin += r.ssim_in;
      sout += r.ssim_out;
    }
    MetricSummary finish(std::string task) const {
      return {std::move(task), n, pin_n ? pin / static_cast<double>(pin_n) : kInf,
              pout_n ? pout / static_cast<double>(pout_n) : kInf, sin / static_cast<double>(n),
              sout / static_cast<double>(n)};
    }
  };
  std::map<std::string, Acc> groups;
  Acc all;
  for (const auto& r : rows) {
    groups[r.task].add(r);
    all.add(r);
  }
  std::vector<MetricSummary> out;
  for (const auto& [task, acc] : groups) out.push_back(acc.finish(task));
  if (!rows.empty()) out.push_back(all.finish("all"));
  return out;
}

inline std::string format_metric(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

/// CSV with columns frame_id, task, psnr_in, psnr_out, ssim_in, ssim_out.
inline void write_metric_csv(const std::vector<MetricRow>& rows, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "frame_id,task,psnr_in,psnr_out,ssim_in,ssim_out\n";
  for (const auto& r : rows) {
    os << r.frame_id << ',' << r.task << ',' << format_metric(r.psnr_in) << ',' << format_metric(r.psnr_out) << ','
       << format_metric(r.ssim_in) << ',' << format_metric(r.ssim_out) << '\n';
  }
  if (!os) throw IoError("write failed for " + path.string());
}

}  // namespace uniflow
