#pragma once

#include <cmath>
#include <random>
#include <vector>

#include "locate/backbone.hpp"
#include "locate/common.hpp"
#include "locate/tensor.hpp"

namespace locate {

// Trainable head producing class-aware localization maps whose global average
// pool is the classification logit vector. Gradients are written out by hand;
// the whole stack is four linear/conv layers with ReLUs in between.

struct LocalizationMaps {
  Tensor data;  // [C, H, W]
  std::size_t class_count = 0;
};

struct ClassScores {
  std::vector<double> logits;  // [C]
};

struct CamHeadParams {
  Tensor projection;  // [Dp, D]   per-patch feed-forward layer
  Tensor conv1;       // [Dp, Dp, 3, 3]
  Tensor conv2;       // [Dp, Dp, 3, 3]
  Tensor class_conv;  // [C, Dp]   1x1 class-aware convolution

  std::size_t in_dim() const { return projection.dim(1); }
  std::size_t hidden_dim() const { return projection.dim(0); }
  std::size_t class_count() const { return class_conv.dim(0); }

  static CamHeadParams init(std::size_t in_dim, std::size_t hidden_dim,
                            std::size_t class_count, std::mt19937_64& rng) {
    require(in_dim >= 1 && hidden_dim >= 1 && class_count >= 1,
            "cam head dimensions must be positive");
    CamHeadParams p;
    p.projection = Tensor::randn({hidden_dim, in_dim}, rng, std::sqrt(2.0 / in_dim));
    p.conv1 = Tensor::randn({hidden_dim, hidden_dim, 3, 3}, rng,
                            std::sqrt(2.0 / (9.0 * hidden_dim)));
    p.conv2 = Tensor::randn({hidden_dim, hidden_dim, 3, 3}, rng,
                            std::sqrt(2.0 / (9.0 * hidden_dim)));
    p.class_conv = Tensor::randn({class_count, hidden_dim}, rng, std::sqrt(1.0 / hidden_dim));
    return p;
  }

  static CamHeadParams zeros_like(const CamHeadParams& p) {
    CamHeadParams z;
    z.projection = Tensor(p.projection.shape());
    z.conv1 = Tensor(p.conv1.shape());
    z.conv2 = Tensor(p.conv2.shape());
    z.class_conv = Tensor(p.class_conv.shape());
    return z;
  }
};

using CamHeadGrads = CamHeadParams;

// --- primitive layers -------------------------------------------------------

// 1x1 channel mixing: out[o, u, v] = sum_i W[o, i] * in[i, u, v]
inline Tensor channel_mix(const Tensor& in, const Tensor& w) {
  const std::size_t I = in.dim(0), H = in.dim(1), W2 = in.dim(2);
  const std::size_t O = w.dim(0);
  require(w.dim(1) == I, "channel_mix: weight/input channel mismatch");
  Tensor out({O, H, W2});
  const std::size_t hw = H * W2;
  for (std::size_t o = 0; o < O; ++o) {
    double* op = out.data() + o * hw;
    for (std::size_t i = 0; i < I; ++i) {
      const double wv = w(o, i);
      const double* ip = in.data() + i * hw;
      for (std::size_t s = 0; s < hw; ++s) op[s] += wv * ip[s];
    }
  }
  return out;
}

// 3x3 convolution, zero padding 1, spatial shape preserved.
inline Tensor conv3x3(const Tensor& in, const Tensor& w) {
  const std::size_t I = in.dim(0), H = in.dim(1), W2 = in.dim(2);
  const std::size_t O = w.dim(0);
  require(w.dim(1) == I && w.dim(2) == 3 && w.dim(3) == 3, "conv3x3: bad weight shape");
  Tensor out({O, H, W2});
  const std::size_t hw = H * W2;
  for (std::size_t o = 0; o < O; ++o) {
    double* op = out.data() + o * hw;
    for (std::size_t i = 0; i < I; ++i) {
      const double* ip = in.data() + i * hw;
      for (std::size_t p = 0; p < 3; ++p)
        for (std::size_t q = 0; q < 3; ++q) {
          const double wv = w(o, i, p, q);
          if (wv == 0.0) continue;
          const int dy = static_cast<int>(p) - 1, dx = static_cast<int>(q) - 1;
          const std::size_t y_lo = dy < 0 ? 1 : 0;
          const std::size_t y_hi = dy > 0 ? H - 1 : H;
          for (std::size_t y = y_lo; y < y_hi; ++y) {
            const double* row = ip + (y + dy) * W2;
            double* orow = op + y * W2;
            const std::size_t x_lo = dx < 0 ? 1 : 0;
            const std::size_t x_hi = dx > 0 ? W2 - 1 : W2;
            for (std::size_t x = x_lo; x < x_hi; ++x) orow[x] += wv * row[x + dx];
          }
        }
    }
  }
  return out;
}

inline void conv3x3_backward(const Tensor& in, const Tensor& w, const Tensor& dout,
                             Tensor& din, Tensor& dw) {
  const std::size_t I = in.dim(0), H = in.dim(1), W2 = in.dim(2);
  const std::size_t O = w.dim(0);
  const std::size_t hw = H * W2;
  for (std::size_t o = 0; o < O; ++o) {
    const double* dop = dout.data() + o * hw;
    for (std::size_t i = 0; i < I; ++i) {
      const double* ip = in.data() + i * hw;
      double* dip = din.data() + i * hw;
      for (std::size_t p = 0; p < 3; ++p)
        for (std::size_t q = 0; q < 3; ++q) {
          const int dy = static_cast<int>(p) - 1, dx = static_cast<int>(q) - 1;
          const double wv = w(o, i, p, q);
          double wacc = 0.0;
          const std::size_t y_lo = dy < 0 ? 1 : 0;
          const std::size_t y_hi = dy > 0 ? H - 1 : H;
          for (std::size_t y = y_lo; y < y_hi; ++y) {
            const double* grow = dop + y * W2;
            const double* irow = ip + (y + dy) * W2;
            double* drow = dip + (y + dy) * W2;
            const std::size_t x_lo = dx < 0 ? 1 : 0;
            const std::size_t x_hi = dx > 0 ? W2 - 1 : W2;
            for (std::size_t x = x_lo; x < x_hi; ++x) {
              wacc += grow[x] * irow[x + dx];
              drow[x + dx] += grow[x] * wv;
            }
          }
          dw(o, i, p, q) += wacc;
        }
    }
  }
}

inline Tensor relu(const Tensor& x) {
  Tensor out = x;
  for (double& v : out.vec())
    if (v < 0.0) v = 0.0;
  return out;
}

// --- CAM head forward / backward -------------------------------------------

struct CamForward {
  Tensor x1, a1, x2, a2, x3, a3;  // intermediates, [Dp, H, W]
  LocalizationMaps maps;
  ClassScores scores;
};

/// Per-channel spatial mean; by construction the classification scores.
inline std::vector<double> gap(const LocalizationMaps& maps) {
  const std::size_t C = maps.data.dim(0);
  const std::size_t hw = maps.data.dim(1) * maps.data.dim(2);
  std::vector<double> z(C, 0.0);
  for (std::size_t c = 0; c < C; ++c) {
    const double* p = maps.data.data() + c * hw;
    double s = 0.0;
    for (std::size_t i = 0; i < hw; ++i) s += p[i];
    z[c] = s / static_cast<double>(hw);
  }
  return z;
}

inline CamForward cam_forward(const FeatureMap& features, const CamHeadParams& params) {
  if (features.data.dim(0) != params.in_dim())
    throw ConfigError("cam head projection width does not match backbone feature dim");
  CamForward f;
  f.x1 = channel_mix(features.data, params.projection);
  f.a1 = relu(f.x1);
  f.x2 = conv3x3(f.a1, params.conv1);
  f.a2 = relu(f.x2);
  f.x3 = conv3x3(f.a2, params.conv2);
  f.a3 = relu(f.x3);
  f.maps.data = channel_mix(f.a3, params.class_conv);
  f.maps.class_count = params.class_count();
  f.scores.logits = gap(f.maps);
  return f;
}

/// Accumulates parameter gradients for dL/dmaps. Backbone features receive no
/// gradient (frozen contract).
inline void cam_backward(const FeatureMap& features, const CamHeadParams& params,
                         const CamForward& f, const Tensor& dmaps, CamHeadGrads& grads) {
  const std::size_t Dp = params.hidden_dim();
  const std::size_t C = params.class_count();
  const std::size_t H = features.patch_rows, W = features.patch_cols;
  const std::size_t hw = H * W;

  // class conv
  Tensor da3({Dp, H, W});
  for (std::size_t c = 0; c < C; ++c) {
    const double* g = dmaps.data() + c * hw;
    for (std::size_t j = 0; j < Dp; ++j) {
      const double wv = params.class_conv(c, j);
      const double* a = f.a3.data() + j * hw;
      double* d = da3.data() + j * hw;
      double wacc = 0.0;
      for (std::size_t s = 0; s < hw; ++s) {
        d[s] += wv * g[s];
        wacc += g[s] * a[s];
      }
      grads.class_conv(c, j) += wacc;
    }
  }

  auto relu_mask = [&](Tensor& d, const Tensor& pre) {
    for (std::size_t i = 0; i < d.size(); ++i)
      if (pre[i] <= 0.0) d[i] = 0.0;
  };

  relu_mask(da3, f.x3);
  Tensor da2({Dp, H, W});
  conv3x3_backward(f.a2, params.conv2, da3, da2, grads.conv2);
  relu_mask(da2, f.x2);
  Tensor da1({Dp, H, W});
  conv3x3_backward(f.a1, params.conv1, da2, da1, grads.conv1);
  relu_mask(da1, f.x1);

  // projection: dW[j, d] += sum_s da1[j, s] * input[d, s]
  const std::size_t D = params.in_dim();
  for (std::size_t j = 0; j < Dp; ++j) {
    const double* dj = da1.data() + j * hw;
    for (std::size_t d = 0; d < D; ++d) {
      const double* id = features.data.data() + d * hw;
      double acc = 0.0;
      for (std::size_t s = 0; s < hw; ++s) acc += dj[s] * id[s];
      grads.projection(j, d) += acc;
    }
  }
}

// --- losses and map post-processing -----------------------------------------

/// Softmax cross-entropy. Equals ln(C) for uniform logits.
inline double classification_loss(const ClassScores& scores, std::size_t label) {
  const std::size_t C = scores.logits.size();
  if (label >= C) throw InputError("classification label out of range");
  double zmax = scores.logits[0];
  for (double z : scores.logits) zmax = std::max(zmax, z);
  double sum = 0.0;
  for (double z : scores.logits) sum += std::exp(z - zmax);
  return std::log(sum) + zmax - scores.logits[label];
}

/// dL/dlogits = softmax(logits) - onehot(label).
inline std::vector<double> classification_loss_grad(const ClassScores& scores,
                                                    std::size_t label) {
  const std::size_t C = scores.logits.size();
  if (label >= C) throw InputError("classification label out of range");
  double zmax = scores.logits[0];
  for (double z : scores.logits) zmax = std::max(zmax, z);
  double sum = 0.0;
  std::vector<double> g(C);
  for (std::size_t c = 0; c < C; ++c) {
    g[c] = std::exp(scores.logits[c] - zmax);
    sum += g[c];
  }
  for (std::size_t c = 0; c < C; ++c) g[c] /= sum;
  g[label] -= 1.0;
  return g;
}

constexpr double kNormEps = 1e-8;

/// Min-max normalization to [0, 1]: (x - min) / (max - min + 1e-8).
/// Constant maps normalize to all zeros ("no activation").
inline Tensor normalize_map(const Tensor& map) {
  Tensor out = map;
  if (map.empty()) return out;
  const double lo = map.min();
  const double hi = map.max();
  const double inv = 1.0 / (hi - lo + kNormEps);
  for (double& v : out.vec()) v = (v - lo) * inv;
  return out;
}

/// VJP of normalize_map: propagates cotangent `dout` back through the min-max
/// transform, including the argmin/argmax selection terms (first occurrence
/// wins on ties, matching min()/max()).
inline Tensor normalize_map_vjp(const Tensor& map, const Tensor& dout) {
  require(map.same_shape(dout), "normalize_map_vjp shape mismatch");
  Tensor din(map.shape());
  if (map.empty()) return din;
  std::size_t i_min = 0, i_max = 0;
  for (std::size_t i = 1; i < map.size(); ++i) {
    if (map[i] < map[i_min]) i_min = i;
    if (map[i] > map[i_max]) i_max = i;
  }
  const double r = map[i_max] - map[i_min] + kNormEps;
  double g_sum = 0.0, gy_sum = 0.0;
  for (std::size_t i = 0; i < map.size(); ++i) {
    g_sum += dout[i];
    gy_sum += dout[i] * (map[i] - map[i_min]) / r;
  }
  for (std::size_t i = 0; i < map.size(); ++i) din[i] = dout[i] / r;
  din[i_min] -= (g_sum - gy_sum) / r;
  din[i_max] -= gy_sum / r;
  return din;
}

/// Bilinear upsampling of a [H, W] map (same sampling convention as image
/// resizing).
inline Tensor upsample_bilinear(const Tensor& map, std::size_t out_h, std::size_t out_w) {
  require(map.rank() == 2, "upsample_bilinear expects [H, W]");
  const std::size_t h = map.dim(0), w = map.dim(1);
  Tensor out({out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    double fy = (static_cast<double>(y) + 0.5) * sy - 0.5;
    fy = std::clamp(fy, 0.0, static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      double fx = (static_cast<double>(x) + 0.5) * sx - 0.5;
      fx = std::clamp(fx, 0.0, static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      const double top = map(y0, x0) * (1.0 - wx) + map(y0, x1) * wx;
      const double bot = map(y1, x0) * (1.0 - wx) + map(y1, x1) * wx;
      out(y, x) = top * (1.0 - wy) + bot * wy;
    }
  }
  return out;
}

/// Test-time prediction: pick channel t, min-max normalize, upsample to the
/// requested pixel resolution. Values stay in [0, 1].
inline Tensor predict_affordance(const LocalizationMaps& maps, std::size_t t,
                                 std::size_t out_h, std::size_t out_w) {
  if (t >= maps.data.dim(0)) throw InputError("affordance channel out of range");
  const std::size_t h = maps.data.dim(1), w = maps.data.dim(2);
  Tensor channel({h, w});
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) channel(y, x) = maps.data(t, y, x);
  return upsample_bilinear(normalize_map(channel), out_h, out_w);
}

}  // namespace locate
