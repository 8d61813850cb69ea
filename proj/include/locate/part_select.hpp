#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <vector>

#include "locate/backbone.hpp"
#include "locate/common.hpp"
#include "locate/region_extract.hpp"
#include "locate/tensor.hpp"

namespace locate {

// PartSelect: cluster harvested exocentric embeddings into K prototypes, score
// each against the egocentric saliency mask with PartIoU, and gate the best
// one on a threshold mu.

struct PrototypeSet {
  Tensor centers;  // [K, D]
  std::vector<std::size_t> member_counts;
  std::size_t kmeans_iters_used = 0;

  std::size_t k() const { return centers.dim(0); }
  std::size_t d() const { return centers.dim(1); }

  std::vector<double> center(std::size_t k_) const {
    return std::vector<double>(centers.data() + k_ * d(), centers.data() + (k_ + 1) * d());
  }
};

struct SimilarityMaps {
  Tensor data;  // [K, H, W], cosine similarities in [-1, 1]
  std::vector<Mask2D> binary;
};

struct SelectionResult {
  std::optional<std::vector<double>> selected;  // the object-part prototype
  std::vector<double> scores;                   // gamma per prototype
  std::optional<std::size_t> chosen_index;
};

namespace detail {

inline double sq_dist(const double* a, const double* b, std::size_t d) {
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    const double diff = a[i] - b[i];
    s += diff * diff;
  }
  return s;
}

// k-means++ seeding: first center uniform, then proportional to squared
// distance from the nearest chosen center.
inline std::vector<std::size_t> kmeanspp_init(const Tensor& pts, std::size_t k,
                                              std::mt19937_64& rng) {
  const std::size_t n = pts.dim(0), d = pts.dim(1);
  std::vector<std::size_t> chosen;
  std::uniform_int_distribution<std::size_t> uni(0, n - 1);
  chosen.push_back(uni(rng));
  std::vector<double> d2(n);
  while (chosen.size() < k) {
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      for (std::size_t c : chosen)
        best = std::min(best, sq_dist(pts.data() + i * d, pts.data() + c * d, d));
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      chosen.push_back(uni(rng));  // all mass on existing centers; pick uniformly
      continue;
    }
    std::uniform_real_distribution<double> ur(0.0, total);
    double r = ur(rng);
    std::size_t pick = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      r -= d2[i];
      if (r <= 0.0) {
        pick = i;
        break;
      }
    }
    chosen.push_back(pick);
  }
  return chosen;
}

// Reassign the farthest member of the largest cluster to each empty cluster.
inline void repair_empty_clusters(const Tensor& pts, const Tensor& centers,
                                  std::vector<std::size_t>& assign, std::size_t k) {
  const std::size_t n = pts.dim(0), d = pts.dim(1);
  std::vector<std::size_t> counts(k, 0);
  for (std::size_t a : assign) ++counts[a];
  for (std::size_t empty = 0; empty < k; ++empty) {
    if (counts[empty] != 0) continue;
    std::size_t largest = 0;
    for (std::size_t c = 1; c < k; ++c)
      if (counts[c] > counts[largest]) largest = c;
    std::size_t far_idx = 0;
    double far_d = -1.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (assign[i] != largest) continue;
      const double dist = sq_dist(pts.data() + i * d, centers.data() + largest * d, d);
      if (dist > far_d) {
        far_d = dist;
        far_idx = i;
      }
    }
    assign[far_idx] = empty;
    --counts[largest];
    ++counts[empty];
  }
}

inline Tensor cluster_means(const Tensor& pts, const std::vector<std::size_t>& assign,
                            std::size_t k, std::vector<std::size_t>& counts) {
  const std::size_t n = pts.dim(0), d = pts.dim(1);
  Tensor centers({k, d});
  counts.assign(k, 0);
  for (std::size_t i = 0; i < n; ++i) {
    ++counts[assign[i]];
    for (std::size_t j = 0; j < d; ++j) centers(assign[i], j) += pts(i, j);
  }
  for (std::size_t c = 0; c < k; ++c)
    if (counts[c] > 0)
      for (std::size_t j = 0; j < d; ++j) centers(c, j) /= static_cast<double>(counts[c]);
  return centers;
}

}  // namespace detail

constexpr std::size_t kKmeansMaxIters = 100;

/// Lloyd's algorithm with k-means++ initialization, Euclidean distance, and
/// deterministic tie-breaking (lowest index). Runs to an assignment fixpoint
/// or 100 iterations; empty clusters are repaired by splitting the largest
/// cluster at its farthest member. Returns nullopt when L < K ("no
/// prototype" path).
inline std::optional<PrototypeSet> cluster_prototypes(const EmbeddingBag& bag, std::size_t k,
                                                      std::uint64_t seed) {
  require(k >= 1, "K must be >= 1");
  const std::size_t n = bag.count();
  if (n < k) return std::nullopt;
  const std::size_t d = bag.embeddings.dim(1);
  const Tensor& pts = bag.embeddings;
  auto rng = make_rng(mix_seed(seed, "kmeans"));

  const std::vector<std::size_t> seeds = detail::kmeanspp_init(pts, k, rng);
  Tensor centers({k, d});
  for (std::size_t c = 0; c < k; ++c)
    for (std::size_t j = 0; j < d; ++j) centers(c, j) = pts(seeds[c], j);

  auto nearest = [&](const Tensor& cents) {
    std::vector<std::size_t> assign(n, 0);
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t best_c = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = detail::sq_dist(pts.data() + i * d, cents.data() + c * d, d);
        if (dist < best) {
          best = dist;
          best_c = c;
        }
      }
      assign[i] = best_c;
    }
    return assign;
  };

  std::vector<std::size_t> counts;
  std::vector<std::size_t> assign = nearest(centers);
  detail::repair_empty_clusters(pts, centers, assign, k);
  centers = detail::cluster_means(pts, assign, k, counts);
  std::size_t iters = 1;
  while (iters < kKmeansMaxIters) {
    std::vector<std::size_t> next = nearest(centers);
    detail::repair_empty_clusters(pts, centers, next, k);
    if (next == assign) break;
    assign = std::move(next);
    centers = detail::cluster_means(pts, assign, k, counts);
    ++iters;
  }

  PrototypeSet out;
  out.centers = std::move(centers);
  out.member_counts = counts;
  out.kmeans_iters_used = iters;
  return out;
}

/// Cosine similarity between every prototype and every egocentric feature
/// column. Norms are guarded by 1e-8; results are clamped into [-1, 1].
/// Binarization is the strict per-map mean threshold.
inline SimilarityMaps similarity_maps(const PrototypeSet& protos, const FeatureMap& ego) {
  require(protos.d() == ego.feature_dim(), "prototype/feature dimension mismatch");
  const std::size_t K = protos.k(), D = protos.d();
  const std::size_t H = ego.patch_rows, W = ego.patch_cols;
  SimilarityMaps out;
  out.data = Tensor({K, H, W});

  std::vector<double> proto_norm(K);
  for (std::size_t k = 0; k < K; ++k) {
    double s = 0.0;
    for (std::size_t j = 0; j < D; ++j) s += protos.centers(k, j) * protos.centers(k, j);
    proto_norm[k] = std::max(std::sqrt(s), kNormEps);
  }

  for (std::size_t r = 0; r < H; ++r)
    for (std::size_t c = 0; c < W; ++c) {
      double fn = 0.0;
      for (std::size_t j = 0; j < D; ++j) {
        const double v = ego.data(j, r, c);
        fn += v * v;
      }
      fn = std::max(std::sqrt(fn), kNormEps);
      for (std::size_t k = 0; k < K; ++k) {
        double dot = 0.0;
        for (std::size_t j = 0; j < D; ++j) dot += protos.centers(k, j) * ego.data(j, r, c);
        out.data(k, r, c) = std::clamp(dot / (proto_norm[k] * fn), -1.0, 1.0);
      }
    }

  out.binary.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    Tensor slice({H, W});
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) slice(r, c) = out.data(k, r, c);
    out.binary.push_back(mean_threshold(slice));
  }
  return out;
}

/// PartIoU: gamma = 1/2 * |S&A| / |S|  +  1/2 * |A| / |S|A|.
/// Equals 1 exactly when S is a nonempty subset of A; disjoint equal-size
/// masks score 0.25. Degenerate masks (|S| = 0 or empty union) score 0.
inline double part_iou(const Mask2D& sim_binary, const Mask2D& sal_binary) {
  require(sim_binary.rows == sal_binary.rows && sim_binary.cols == sal_binary.cols,
          "part_iou mask shape mismatch");
  std::size_t s = 0, a = 0, inter = 0, uni = 0;
  for (std::size_t i = 0; i < sim_binary.v.size(); ++i) {
    const bool sb = sim_binary.v[i] != 0, ab = sal_binary.v[i] != 0;
    s += sb;
    a += ab;
    inter += (sb && ab);
    uni += (sb || ab);
  }
  if (s == 0 || uni == 0) return 0.0;
  return 0.5 * static_cast<double>(inter) / static_cast<double>(s) +
         0.5 * static_cast<double>(a) / static_cast<double>(uni);
}

/// Gate: emit the argmax-gamma prototype when max gamma > mu (ties broken by
/// lowest index); otherwise no prototype is selected.
inline SelectionResult select_object_part(const PrototypeSet& protos,
                                          const SimilarityMaps& sims,
                                          const SaliencyMask& saliency, double mu) {
  SelectionResult res;
  const std::size_t K = protos.k();
  require(sims.binary.size() == K, "similarity maps do not match prototype count");
  res.scores.resize(K);
  for (std::size_t k = 0; k < K; ++k)
    res.scores[k] = part_iou(sims.binary[k], saliency.binary);
  std::size_t best = 0;
  for (std::size_t k = 1; k < K; ++k)
    if (res.scores[k] > res.scores[best]) best = k;
  if (res.scores[best] > mu) {
    res.chosen_index = best;
    res.selected = protos.center(best);
  }
  return res;
}

}  // namespace locate
