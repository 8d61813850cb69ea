#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

#include "locate/common.hpp"
#include "locate/tensor.hpp"

#include "json.hpp"

namespace locate {

// Heatmap evaluation metrics (the standard saliency-benchmark definitions,
// frozen here with explicit epsilons):
//   KLD = sum gt * ln(gt / (pred + eps) + eps), both maps sum-normalized
//   SIM = sum min(pred, gt), both maps sum-normalized
//   NSS = mean over fixations of the z-scored prediction
// with eps = 1e-12. All three are invariant to positive rescaling of the
// prediction.

constexpr double kMetricEps = 1e-12;

struct MetricTriple {
  double kld = 0.0;  // >= 0
  double sim = 0.0;  // in [0, 1]
  double nss = 0.0;
};

struct PixelPoint {
  double x = 0.0;  // column
  double y = 0.0;  // row
};

struct GroundTruthHeatmap {
  Tensor density;                     // [H0, W0], sums to 1
  std::vector<PixelPoint> fixation_points;
};

namespace detail {

inline void check_metric_input(const Tensor& m, const char* name) {
  require(m.rank() == 2, std::string(name) + " must be a rank-2 map");
  double s = 0.0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] < 0.0) throw InputError(std::string(name) + " has negative entries");
    s += m[i];
  }
  if (s <= 0.0) throw InputError(std::string(name) + " is all-zero");
}

inline Tensor sum_normalize(const Tensor& m) {
  Tensor out = m;
  const double inv = 1.0 / (m.sum() + kMetricEps);
  for (double& v : out.vec()) v *= inv;
  return out;
}

}  // namespace detail

/// Kullback-Leibler divergence of gt from pred. Finite for any inputs thanks
/// to the epsilon guards; clamped at 0 (true KL is non-negative and the guard
/// can only push the sum a hair below zero).
inline double kld(const Tensor& pred, const Tensor& gt_density) {
  detail::check_metric_input(pred, "pred");
  detail::check_metric_input(gt_density, "gt");
  require(pred.same_shape(gt_density), "kld shape mismatch");
  const Tensor p = detail::sum_normalize(pred);
  const Tensor g = detail::sum_normalize(gt_density);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i)
    if (g[i] > 0.0) s += g[i] * std::log(g[i] / (p[i] + kMetricEps) + kMetricEps);
  return std::max(s, 0.0);
}

/// Histogram intersection of the sum-normalized maps; 1 iff they are equal.
inline double sim(const Tensor& pred, const Tensor& gt_density) {
  detail::check_metric_input(pred, "pred");
  detail::check_metric_input(gt_density, "gt");
  require(pred.same_shape(gt_density), "sim shape mismatch");
  const Tensor p = detail::sum_normalize(pred);
  const Tensor g = detail::sum_normalize(gt_density);
  double s = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) s += std::min(p[i], g[i]);
  return s;
}

/// Normalized scanpath saliency: z-score the prediction (population std,
/// eps-guarded) and average it at the fixation pixels. Constant predictions
/// score exactly 0.
inline double nss(const Tensor& pred, const std::vector<PixelPoint>& fixations) {
  require(pred.rank() == 2, "pred must be a rank-2 map");
  if (fixations.empty()) throw InputError("nss requires at least one fixation point");
  const std::size_t h = pred.dim(0), w = pred.dim(1);
  const double n = static_cast<double>(pred.size());
  const double mean = pred.sum() / n;
  double var = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - mean;
    var += d * d;
  }
  const double stddev = std::sqrt(var / n);
  double acc = 0.0;
  for (const PixelPoint& pt : fixations) {
    const auto x = static_cast<long long>(std::llround(pt.x));
    const auto y = static_cast<long long>(std::llround(pt.y));
    if (x < 0 || y < 0 || static_cast<std::size_t>(x) >= w || static_cast<std::size_t>(y) >= h)
      throw InputError("fixation point outside the prediction map");
    acc += (pred(static_cast<std::size_t>(y), static_cast<std::size_t>(x)) - mean) /
           (stddev + kMetricEps);
  }
  return acc / static_cast<double>(fixations.size());
}

/// Sum of per-point Gaussians rendered at the stored resolution, then
/// sum-normalized. Point multiplicity is absorbed by the normalization.
inline GroundTruthHeatmap build_gt_heatmap(const std::vector<PixelPoint>& points,
                                           std::size_t h, std::size_t w, double sigma) {
  if (points.empty()) throw InputError("build_gt_heatmap requires at least one point");
  require(sigma > 0.0, "gt sigma must be positive");
  for (const PixelPoint& p : points)
    if (p.x < 0.0 || p.y < 0.0 || p.x > static_cast<double>(w - 1) ||
        p.y > static_cast<double>(h - 1))
      throw InputError("ground-truth point outside the image bounds");
  GroundTruthHeatmap gt;
  gt.fixation_points = points;
  gt.density = Tensor({h, w});
  const double inv2s2 = 1.0 / (2.0 * sigma * sigma);
  for (const PixelPoint& p : points)
    for (std::size_t y = 0; y < h; ++y) {
      const double dy = static_cast<double>(y) - p.y;
      for (std::size_t x = 0; x < w; ++x) {
        const double dx = static_cast<double>(x) - p.x;
        gt.density(y, x) += std::exp(-(dx * dx + dy * dy) * inv2s2);
      }
    }
  const double total = gt.density.sum();
  if (total <= 0.0) throw InputError("ground-truth heatmap degenerated to zero");
  for (double& v : gt.density.vec()) v /= total;
  return gt;
}

inline MetricTriple evaluate_heatmap(const Tensor& pred, const GroundTruthHeatmap& gt) {
  MetricTriple m;
  m.kld = kld(pred, gt.density);
  m.sim = sim(pred, gt.density);
  m.nss = gt.fixation_points.empty() ? 0.0 : nss(pred, gt.fixation_points);
  return m;
}

// --- report writers -----------------------------------------------------------

struct MetricRow {
  std::string image;
  std::string affordance;
  MetricTriple metrics;
};

struct MetricReport {
  std::vector<MetricRow> rows;
  std::size_t skipped = 0;  // records without usable ground truth

  MetricTriple aggregate() const {
    MetricTriple agg;
    if (rows.empty()) return agg;
    for (const MetricRow& r : rows) {
      agg.kld += r.metrics.kld;
      agg.sim += r.metrics.sim;
      agg.nss += r.metrics.nss;
    }
    const double n = static_cast<double>(rows.size());
    agg.kld /= n;
    agg.sim /= n;
    agg.nss /= n;
    return agg;
  }

  std::vector<std::pair<std::string, MetricTriple>> per_affordance() const {
    std::vector<std::pair<std::string, MetricTriple>> out;
    std::vector<std::size_t> counts;
    for (const MetricRow& r : rows) {
      std::size_t i = 0;
      for (; i < out.size(); ++i)
        if (out[i].first == r.affordance) break;
      if (i == out.size()) {
        out.push_back({r.affordance, {}});
        counts.push_back(0);
      }
      out[i].second.kld += r.metrics.kld;
      out[i].second.sim += r.metrics.sim;
      out[i].second.nss += r.metrics.nss;
      ++counts[i];
    }
    for (std::size_t i = 0; i < out.size(); ++i) {
      out[i].second.kld /= static_cast<double>(counts[i]);
      out[i].second.sim /= static_cast<double>(counts[i]);
      out[i].second.nss /= static_cast<double>(counts[i]);
    }
    std::sort(out.begin(), out.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    return out;
  }
};

inline std::string format_metric(double v) {
  std::ostringstream ss;
  ss << std::setprecision(9) << std::fixed << v;
  return ss.str();
}

inline void write_metrics_csv(const std::string& path, const MetricReport& report) {
  std::ofstream f(path);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << "image,affordance,kld,sim,nss\n";
  for (const MetricRow& r : report.rows)
    f << r.image << "," << r.affordance << "," << format_metric(r.metrics.kld) << ","
      << format_metric(r.metrics.sim) << "," << format_metric(r.metrics.nss) << "\n";
  const MetricTriple agg = report.aggregate();
  f << "MEAN,," << format_metric(agg.kld) << "," << format_metric(agg.sim) << ","
    << format_metric(agg.nss) << "\n";
}

inline void write_metrics_json(const std::string& path, const MetricReport& report) {
  nlohmann::json j;
  const MetricTriple agg = report.aggregate();
  j["aggregate"] = {{"kld", agg.kld}, {"sim", agg.sim}, {"nss", agg.nss}};
  j["evaluated"] = report.rows.size();
  j["skipped"] = report.skipped;
  nlohmann::json per_aff = nlohmann::json::object();
  for (const auto& [name, m] : report.per_affordance())
    per_aff[name] = {{"kld", m.kld}, {"sim", m.sim}, {"nss", m.nss}};
  j["per_affordance"] = per_aff;
  nlohmann::json rows = nlohmann::json::array();
  for (const MetricRow& r : report.rows)
    rows.push_back({{"image", r.image},
                    {"affordance", r.affordance},
                    {"kld", r.metrics.kld},
                    {"sim", r.metrics.sim},
                    {"nss", r.metrics.nss}});
  j["per_image"] = rows;
  std::ofstream f(path);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << j.dump(2) << "\n";
}

}  // namespace locate
