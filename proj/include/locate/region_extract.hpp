#pragma once

#include <cstddef>
#include <vector>

#include "locate/backbone.hpp"
#include "locate/cam_head.hpp"
#include "locate/common.hpp"
#include "locate/tensor.hpp"

namespace locate {

struct SourceCoord {
  std::size_t image;  // index into the exocentric image list
  std::size_t row;    // patch row
  std::size_t col;    // patch col
};

/// Feature embeddings harvested from high-activation interaction regions,
/// concatenated over the N exocentric images in image order, row-major cell
/// order within an image.
struct EmbeddingBag {
  Tensor embeddings;  // [L, D]
  std::vector<std::size_t> per_image_counts;
  std::vector<SourceCoord> source_coords;

  std::size_t count() const { return source_coords.size(); }
  bool empty() const { return source_coords.empty(); }
};

/// For each image, min-max normalize the ground-truth-class localization map
/// and copy the feature columns of cells whose normalized activation is
/// strictly greater than tau. An empty bag is legal (downstream selection
/// then reports "no prototype").
inline EmbeddingBag extract_interaction_embeddings(const std::vector<FeatureMap>& features,
                                                   const std::vector<LocalizationMaps>& maps,
                                                   std::size_t gt_class, double tau) {
  require(features.size() == maps.size(), "feature/map list length mismatch");
  require(!features.empty(), "need at least one exocentric image");
  const std::size_t H = features[0].patch_rows, W = features[0].patch_cols;
  const std::size_t D = features[0].feature_dim();

  struct Hit {
    std::size_t image, row, col;
  };
  std::vector<Hit> hits;
  EmbeddingBag bag;
  bag.per_image_counts.assign(features.size(), 0);

  for (std::size_t n = 0; n < features.size(); ++n) {
    require(features[n].patch_rows == H && features[n].patch_cols == W,
            "all exocentric images must share the patch grid shape");
    require(features[n].feature_dim() == D, "feature dimension mismatch across images");
    if (gt_class >= maps[n].data.dim(0)) throw InputError("gt_class out of range");
    require(maps[n].data.dim(1) == H && maps[n].data.dim(2) == W,
            "localization map grid does not match features");
    Tensor channel({H, W});
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c) channel(r, c) = maps[n].data(gt_class, r, c);
    const Tensor norm = normalize_map(channel);
    for (std::size_t r = 0; r < H; ++r)
      for (std::size_t c = 0; c < W; ++c)
        if (norm(r, c) > tau) {
          hits.push_back({n, r, c});
          ++bag.per_image_counts[n];
        }
  }

  bag.embeddings = Tensor({hits.size(), D});
  bag.source_coords.reserve(hits.size());
  for (std::size_t i = 0; i < hits.size(); ++i) {
    const Hit& h = hits[i];
    for (std::size_t d = 0; d < D; ++d)
      bag.embeddings(i, d) = features[h.image].data(d, h.row, h.col);
    bag.source_coords.push_back({h.image, h.row, h.col});
  }
  return bag;
}

}  // namespace locate
