#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "locate/backbone.hpp"
#include "locate/cam_head.hpp"
#include "locate/common.hpp"
#include "locate/tensor.hpp"

namespace locate {

// Part-level knowledge transfer: masked average pooling of the egocentric
// branch, cosine alignment with a margin, the concentration regularizer, and
// the combined objective.

struct LossWeights {
  double lambda_cos = 1.0;
  double lambda_c = 0.07;
  double alpha = 0.5;  // cosine margin, compensates the exo/ego domain gap

  void validate() const {
    if (lambda_cos < 0.0 || lambda_c < 0.0)
      throw ConfigError("loss weights must be non-negative");
    if (alpha < 0.0 || alpha >= 1.0) throw ConfigError("loss.alpha must lie in [0, 1)");
  }
};

struct LossReport {
  double l_cls_exo = 0.0;
  double l_cls_ego = 0.0;
  double l_cos = 0.0;
  double l_c = 0.0;
  double total = 0.0;
  bool cos_skipped = false;
};

// --- masked average pooling ---------------------------------------------------

struct MaskedPool {
  std::vector<double> embedding;  // f_ego, [D]
  Tensor raw_channel;             // the map channel before normalization
  Tensor weights;                 // normalized channel
  double denom = 0.0;             // sum(weights) + eps
  bool zero_mass = false;         // all-zero normalized map; cosine term skipped
};

/// f_ego[d] = sum_{u,v} F[d,u,v] * What[u,v] / (sum What + 1e-8), with What the
/// min-max normalized t-th localization map. A constant map normalizes to all
/// zeros, which returns the zero vector and flags the cosine term as skipped.
inline MaskedPool masked_average_pool(const FeatureMap& ego_features,
                                      const LocalizationMaps& ego_maps, std::size_t t) {
  if (t >= ego_maps.data.dim(0)) throw InputError("masked_average_pool channel out of range");
  const std::size_t H = ego_features.patch_rows, W = ego_features.patch_cols;
  require(ego_maps.data.dim(1) == H && ego_maps.data.dim(2) == W,
          "map grid does not match features");
  const std::size_t D = ego_features.feature_dim();

  MaskedPool out;
  out.raw_channel = Tensor({H, W});
  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) out.raw_channel(r, c) = ego_maps.data(t, r, c);
  out.weights = normalize_map(out.raw_channel);
  const double mass = out.weights.sum();
  out.denom = mass + kNormEps;
  out.embedding.assign(D, 0.0);
  out.zero_mass = (mass < 1e-12);
  if (out.zero_mass) return out;
  for (std::size_t d = 0; d < D; ++d) {
    double acc = 0.0;
    const double* f = ego_features.data.data() + d * H * W;
    for (std::size_t s = 0; s < H * W; ++s) acc += f[s] * out.weights[s];
    out.embedding[d] = acc / out.denom;
  }
  return out;
}

/// VJP onto the raw map channel: chains the weighted-mean derivative through
/// the min-max normalization.
inline Tensor masked_average_pool_vjp(const MaskedPool& pool, const FeatureMap& ego_features,
                                      const std::vector<double>& d_embedding) {
  const std::size_t H = pool.weights.dim(0), W = pool.weights.dim(1);
  const std::size_t D = ego_features.feature_dim();
  Tensor d_weights({H, W});
  if (pool.zero_mass) return Tensor({H, W});  // flat zero-mass region, no gradient
  for (std::size_t s = 0; s < H * W; ++s) {
    double acc = 0.0;
    for (std::size_t d = 0; d < D; ++d)
      acc += d_embedding[d] *
             (ego_features.data[d * H * W + s] - pool.embedding[d]);
    d_weights[s] = acc / pool.denom;
  }
  return normalize_map_vjp(pool.raw_channel, d_weights);
}

// --- cosine margin loss -------------------------------------------------------

struct CosineMargin {
  double loss = 0.0;
  double cosine = 0.0;
  bool skipped = false;              // zero-norm input
  std::vector<double> d_f_op;        // gradients; zero in the clamped region
  std::vector<double> d_f_ego;
};

/// L = max(1 - cos(f_op, f_ego) - alpha, 0). The gradient is exactly zero
/// whenever cos >= 1 - alpha. Zero-norm inputs skip the term.
inline CosineMargin cosine_margin_loss(const std::vector<double>& f_op,
                                       const std::vector<double>& f_ego, double alpha) {
  require(f_op.size() == f_ego.size(), "cosine_margin_loss dimension mismatch");
  const std::size_t D = f_op.size();
  CosineMargin out;
  out.d_f_op.assign(D, 0.0);
  out.d_f_ego.assign(D, 0.0);
  double na = 0.0, nb = 0.0, dot = 0.0;
  for (std::size_t i = 0; i < D; ++i) {
    na += f_op[i] * f_op[i];
    nb += f_ego[i] * f_ego[i];
    dot += f_op[i] * f_ego[i];
  }
  na = std::sqrt(na);
  nb = std::sqrt(nb);
  if (na <= kNormEps || nb <= kNormEps) {
    out.skipped = true;
    return out;
  }
  out.cosine = dot / (na * nb);
  const double margin = 1.0 - out.cosine - alpha;
  if (margin > 0.0) {
    out.loss = margin;
    for (std::size_t i = 0; i < D; ++i) {
      // dL/dx = -dcos/dx
      out.d_f_op[i] = -(f_ego[i] / (na * nb) - out.cosine * f_op[i] / (na * na));
      out.d_f_ego[i] = -(f_op[i] / (na * nb) - out.cosine * f_ego[i] / (nb * nb));
    }
  }
  return out;
}

// --- concentration loss -------------------------------------------------------

namespace detail {

struct ChannelConcentration {
  double loss = 0.0;
  bool zero_mass = false;
  Tensor d_raw;  // gradient onto the raw channel (empty when not requested)
};

inline ChannelConcentration concentration_channel(const Tensor& raw, bool want_grad) {
  const std::size_t H = raw.dim(0), W = raw.dim(1);
  ChannelConcentration out;
  const Tensor w = normalize_map(raw);
  const double z = w.sum();
  if (z < 1e-12) {
    out.zero_mass = true;  // constant channel: contributes 0
    if (want_grad) out.d_raw = Tensor({H, W});
    return out;
  }
  double cu = 0.0, cv = 0.0;
  for (std::size_t u = 0; u < H; ++u)
    for (std::size_t v = 0; v < W; ++v) {
      cu += static_cast<double>(u) * w(u, v);
      cv += static_cast<double>(v) * w(u, v);
    }
  cu /= z;
  cv /= z;
  double loss = 0.0;
  double qu = 0.0, qv = 0.0;  // q = sum_i w_i * (coord_i - centroid) / dist_i
  Tensor dist({H, W});
  for (std::size_t u = 0; u < H; ++u)
    for (std::size_t v = 0; v < W; ++v) {
      const double du = static_cast<double>(u) - cu;
      const double dv = static_cast<double>(v) - cv;
      const double d = std::sqrt(du * du + dv * dv);
      dist(u, v) = d;
      loss += d * w(u, v);
      if (d > 1e-300) {
        qu += w(u, v) * du / d;
        qv += w(u, v) * dv / d;
      }
    }
  loss /= z;
  out.loss = loss;
  if (want_grad) {
    Tensor d_w({H, W});
    for (std::size_t u = 0; u < H; ++u)
      for (std::size_t v = 0; v < W; ++v) {
        const double du = static_cast<double>(u) - cu;
        const double dv = static_cast<double>(v) - cv;
        d_w(u, v) = (dist(u, v) - loss) / z - (qu * du + qv * dv) / (z * z);
      }
    out.d_raw = normalize_map_vjp(raw, d_w);
  }
  return out;
}

}  // namespace detail

/// Mass-weighted mean distance of each channel's activation to its own
/// centroid, summed over channels; coordinates are raw patch indices. Each
/// channel is min-max normalized first, so constant channels carry no mass
/// and contribute 0. `only_channel` restricts the sum (the lc_gt_only
/// ablation).
inline double concentration_loss(const LocalizationMaps& maps,
                                 std::optional<std::size_t> only_channel = std::nullopt) {
  const std::size_t C = maps.data.dim(0), H = maps.data.dim(1), W = maps.data.dim(2);
  double total = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    if (only_channel && *only_channel != c) continue;
    Tensor raw({H, W});
    for (std::size_t u = 0; u < H; ++u)
      for (std::size_t v = 0; v < W; ++v) raw(u, v) = maps.data(c, u, v);
    total += detail::concentration_channel(raw, false).loss;
  }
  return total;
}

/// Same value plus dL/dmaps (all channels; zero rows for channels outside
/// `only_channel`).
inline double concentration_loss_grad(const LocalizationMaps& maps, Tensor& d_maps,
                                      std::optional<std::size_t> only_channel = std::nullopt) {
  const std::size_t C = maps.data.dim(0), H = maps.data.dim(1), W = maps.data.dim(2);
  d_maps = Tensor({C, H, W});
  double total = 0.0;
  for (std::size_t c = 0; c < C; ++c) {
    if (only_channel && *only_channel != c) continue;
    Tensor raw({H, W});
    for (std::size_t u = 0; u < H; ++u)
      for (std::size_t v = 0; v < W; ++v) raw(u, v) = maps.data(c, u, v);
    auto ch = detail::concentration_channel(raw, true);
    total += ch.loss;
    if (!ch.zero_mass)
      for (std::size_t u = 0; u < H; ++u)
        for (std::size_t v = 0; v < W; ++v) d_maps(c, u, v) = ch.d_raw(u, v);
  }
  return total;
}

// --- total objective ----------------------------------------------------------

/// total = l_cls_exo + l_cls_ego + lambda_cos * l_cos * (1 - cos_skipped)
///       + lambda_c * l_c.  The cosine term is excluded during warmup and
/// when no prototype/embedding was available.
inline LossReport total_loss(double l_cls_exo, double l_cls_ego,
                             std::optional<double> l_cos, double l_c,
                             const LossWeights& w, bool warmup) {
  LossReport r;
  r.l_cls_exo = l_cls_exo;
  r.l_cls_ego = l_cls_ego;
  r.l_c = l_c;
  r.cos_skipped = warmup || !l_cos.has_value();
  r.l_cos = l_cos.value_or(0.0);
  r.total = l_cls_exo + l_cls_ego + w.lambda_c * l_c;
  if (!r.cos_skipped) r.total += w.lambda_cos * r.l_cos;
  return r;
}

}  // namespace locate
