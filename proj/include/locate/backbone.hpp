#pragma once

#include <array>
#include <cmath>
#include <fstream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "locate/common.hpp"
#include "locate/tensor.hpp"

namespace locate {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

/// Dense patch-grid features: data is [D, H, W] with H = image_h / patch_size.
struct FeatureMap {
  Tensor data;
  std::size_t patch_rows = 0;
  std::size_t patch_cols = 0;
  std::size_t image_h = 0;
  std::size_t image_w = 0;

  std::size_t feature_dim() const { return data.dim(0); }
};

/// Non-negative saliency weights over the patch grid plus their strict
/// mean-threshold binarization.
struct SaliencyMask {
  Tensor weights;  // [H, W]
  Mask2D binary;

  static SaliencyMask from_weights(Tensor w) {
    require(w.rank() == 2, "saliency weights must be [H, W]");
    for (std::size_t i = 0; i < w.size(); ++i)
      require(w[i] >= 0.0, "saliency weights must be non-negative");
    SaliencyMask m;
    m.binary = mean_threshold(w);
    m.weights = std::move(w);
    return m;
  }
};

struct BackboneConfig {
  std::size_t patch_size = 16;
  std::size_t feature_dim = 32;
  bool frozen = true;  // always true; no training path exists for the backbone

  void validate() const {
    if (patch_size < 1) throw ConfigError("backbone.patch_size must be >= 1");
    if (feature_dim < 2) throw ConfigError("backbone.feature_dim must be >= 2");
  }
};

// ---------------------------------------------------------------------------
// Planted layouts (synthetic scenes)
// ---------------------------------------------------------------------------

enum class PatchClass : int { Background = 0, ObjectOther = 1, ObjectPart = 2, Human = 3 };

inline const char* patch_class_name(PatchClass c) {
  switch (c) {
    case PatchClass::Background: return "background";
    case PatchClass::ObjectOther: return "object";
    case PatchClass::ObjectPart: return "part";
    case PatchClass::Human: return "human";
  }
  return "?";
}

constexpr int kMaxVariants = 8;

/// Half-open patch rectangle [r0, r1) x [c0, c1) carrying a class label.
/// `variant` distinguishes affordance-specific part/human appearances.
struct LayoutRect {
  PatchClass cls = PatchClass::Background;
  int variant = 0;
  int r0 = 0, c0 = 0, r1 = 0, c1 = 0;

  bool contains(int r, int c) const { return r >= r0 && r < r1 && c >= c0 && c < c1; }
  bool intersects(const LayoutRect& o) const {
    return r0 < o.r1 && o.r0 < r1 && c0 < o.c1 && o.c0 < c1;
  }
};

struct PlantedLayout {
  int grid_rows = 0;
  int grid_cols = 0;
  std::vector<LayoutRect> rects;

  void validate() const {
    if (grid_rows < 1 || grid_cols < 1)
      throw ConfigError("layout grid must be at least 1x1");
    for (std::size_t i = 0; i < rects.size(); ++i) {
      const LayoutRect& r = rects[i];
      if (r.r0 < 0 || r.c0 < 0 || r.r1 > grid_rows || r.c1 > grid_cols || r.r0 >= r.r1 ||
          r.c0 >= r.c1)
        throw ConfigError("layout rect out of bounds or empty");
      if (r.variant < 0 || r.variant >= kMaxVariants)
        throw ConfigError("layout variant out of range [0, 8)");
      for (std::size_t j = i + 1; j < rects.size(); ++j)
        if (r.intersects(rects[j]))
          throw ConfigError("overlapping region definitions in layout");
    }
  }

  std::pair<PatchClass, int> class_at(int r, int c) const {
    for (const LayoutRect& rect : rects)
      if (rect.contains(r, c)) return {rect.cls, rect.variant};
    return {PatchClass::Background, 0};
  }
};

/// Text form: `grid R C` then `rect <background|object|part|human> <variant> r0 c0 r1 c1`
/// lines; '#' starts a comment. Rectangles are half-open and must not overlap.
inline PlantedLayout parse_layout(const std::string& text) {
  PlantedLayout layout;
  std::istringstream in(text);
  std::string line;
  bool saw_grid = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    std::istringstream ls(line);
    std::string word;
    if (!(ls >> word)) continue;
    if (word == "grid") {
      if (!(ls >> layout.grid_rows >> layout.grid_cols))
        throw ConfigError("layout line " + std::to_string(lineno) + ": bad grid");
      saw_grid = true;
    } else if (word == "rect") {
      LayoutRect r;
      std::string cls;
      if (!(ls >> cls >> r.variant >> r.r0 >> r.c0 >> r.r1 >> r.c1))
        throw ConfigError("layout line " + std::to_string(lineno) + ": bad rect");
      if (cls == "background") r.cls = PatchClass::Background;
      else if (cls == "object") r.cls = PatchClass::ObjectOther;
      else if (cls == "part") r.cls = PatchClass::ObjectPart;
      else if (cls == "human") r.cls = PatchClass::Human;
      else throw ConfigError("layout line " + std::to_string(lineno) + ": unknown class '" + cls + "'");
      layout.rects.push_back(r);
    } else {
      throw ConfigError("layout line " + std::to_string(lineno) + ": unknown directive '" + word + "'");
    }
  }
  if (!saw_grid) throw ConfigError("layout is missing a 'grid R C' line");
  layout.validate();
  return layout;
}

inline PlantedLayout load_layout(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open layout file '" + path + "'");
  std::ostringstream ss;
  ss << f.rdbuf();
  return parse_layout(ss.str());
}

// ---------------------------------------------------------------------------
// Palette shared by the synthetic backbone and the scene renderer
// ---------------------------------------------------------------------------

using Rgb = std::array<double, 3>;

inline Rgb palette_color(PatchClass cls, int variant) {
  static constexpr Rgb kPart[kMaxVariants] = {
      {0.90, 0.10, 0.10}, {0.10, 0.80, 0.20}, {0.95, 0.55, 0.05}, {0.60, 0.15, 0.85},
      {0.95, 0.90, 0.10}, {0.05, 0.85, 0.85}, {0.95, 0.40, 0.70}, {0.45, 0.30, 0.10}};
  static constexpr Rgb kHuman[kMaxVariants] = {
      {0.85, 0.70, 0.55}, {0.55, 0.65, 0.90}, {0.70, 0.85, 0.55}, {0.90, 0.75, 0.85},
      {0.55, 0.85, 0.75}, {0.75, 0.60, 0.35}, {0.60, 0.45, 0.60}, {0.85, 0.85, 0.75}};
  switch (cls) {
    case PatchClass::Background: return {0.08, 0.08, 0.08};
    case PatchClass::ObjectOther: return {0.15, 0.35, 0.80};
    case PatchClass::ObjectPart: return kPart[variant % kMaxVariants];
    case PatchClass::Human: return kHuman[variant % kMaxVariants];
  }
  return {0, 0, 0};
}

/// Render a planted layout into a pixel image: each patch is filled with its
/// class color plus small uniform pixel noise (too small to move any patch
/// off its nearest palette entry).
inline Tensor render_scene(const PlantedLayout& layout, std::size_t patch_size,
                           std::uint64_t noise_seed, double noise_amp = 0.02) {
  layout.validate();
  const std::size_t h = layout.grid_rows * patch_size;
  const std::size_t w = layout.grid_cols * patch_size;
  Tensor img({3, h, w});
  auto rng = make_rng(mix_seed(noise_seed, "render"));
  std::uniform_real_distribution<double> jitter(-noise_amp, noise_amp);
  for (int pr = 0; pr < layout.grid_rows; ++pr)
    for (int pc = 0; pc < layout.grid_cols; ++pc) {
      const auto [cls, variant] = layout.class_at(pr, pc);
      const Rgb base = palette_color(cls, variant);
      for (std::size_t y = pr * patch_size; y < (pr + 1) * patch_size; ++y)
        for (std::size_t x = pc * patch_size; x < (pc + 1) * patch_size; ++x)
          for (std::size_t c = 0; c < 3; ++c)
            img(c, y, x) = std::clamp(base[c] + jitter(rng), 0.0, 1.0);
    }
  return img;
}

// ---------------------------------------------------------------------------
// Backbone contract
// ---------------------------------------------------------------------------

/// Frozen dense feature extractor. Implementations are stateless after
/// construction and safe for concurrent reads.
class Backbone {
 public:
  virtual ~Backbone() = default;
  virtual FeatureMap extract_features(const Tensor& image) const = 0;
  virtual SaliencyMask extract_saliency(const Tensor& image) const = 0;
  virtual std::size_t feature_dim() const = 0;
  virtual std::size_t patch_size() const = 0;
};

/// Deterministic backbone for desk-scale runs. Every patch is classified by
/// nearest palette color (the same palette render_scene paints with); its
/// feature is  mean_intensity * (class_direction + 0.01 * unit_noise)  where
/// class directions are seeded and pairwise orthogonal, and the noise is
/// keyed by (seed, image bytes, patch coords). Zero pixels therefore produce
/// zero features, identical images produce bit-identical maps, and patches
/// sharing a label stay above 0.99 cosine similarity.
///
/// Saliency surrogate (this backbone has no attention to introspect): the
/// weight of a patch is its mean intensity if it classifies as object part
/// or object, and zero otherwise, binarized by the strict mean threshold.
class SyntheticBackbone final : public Backbone {
 public:
  SyntheticBackbone(std::uint64_t seed, BackboneConfig config = {},
                    std::optional<PlantedLayout> layout = std::nullopt)
      : seed_(seed), config_(config), layout_(std::move(layout)) {
    config_.validate();
    if (layout_) layout_->validate();
    build_directions();
    build_palette_index();
  }

  FeatureMap extract_features(const Tensor& image) const override {
    check_image(image);
    const std::size_t ps = config_.patch_size;
    const std::size_t rows = image.dim(1) / ps, cols = image.dim(2) / ps;
    FeatureMap fm;
    fm.patch_rows = rows;
    fm.patch_cols = cols;
    fm.image_h = image.dim(1);
    fm.image_w = image.dim(2);
    fm.data = Tensor({config_.feature_dim, rows, cols});
    const std::uint64_t ihash = image_hash(image);
    std::vector<double> noise(config_.feature_dim);
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const auto [entry, intensity] = classify_patch(image, r, c);
        unit_noise(ihash, r, c, noise);
        const double* dir = directions_.data() + entry * config_.feature_dim;
        for (std::size_t d = 0; d < config_.feature_dim; ++d)
          fm.data(d, r, c) = intensity * (dir[d] + kNoiseScale * noise[d]);
      }
    return fm;
  }

  SaliencyMask extract_saliency(const Tensor& image) const override {
    check_image(image);
    const std::size_t ps = config_.patch_size;
    const std::size_t rows = image.dim(1) / ps, cols = image.dim(2) / ps;
    Tensor w({rows, cols});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c) {
        const auto [entry, intensity] = classify_patch(image, r, c);
        const PatchClass cls = palette_entries_[entry].first;
        w(r, c) = (cls == PatchClass::ObjectPart || cls == PatchClass::ObjectOther)
                      ? intensity
                      : 0.0;
      }
    return SaliencyMask::from_weights(std::move(w));
  }

  std::size_t feature_dim() const override { return config_.feature_dim; }
  std::size_t patch_size() const override { return config_.patch_size; }

  const std::optional<PlantedLayout>& layout() const { return layout_; }

  /// Render this backbone's planted scene (requires a layout).
  Tensor render(std::uint64_t image_seed) const {
    if (!layout_) throw ConfigError("synthetic backbone has no planted layout to render");
    return render_scene(*layout_, config_.patch_size, image_seed);
  }

  /// Noise-free direction a patch of the given class would produce; the
  /// reference vector acceptance checks compare prototypes against.
  std::vector<double> class_direction(PatchClass cls, int variant) const {
    const std::size_t e = palette_entry_index(cls, variant);
    return std::vector<double>(directions_.begin() + e * config_.feature_dim,
                               directions_.begin() + (e + 1) * config_.feature_dim);
  }

  static constexpr double kNoiseScale = 0.01;

 private:
  void check_image(const Tensor& image) const {
    if (image.rank() != 3 || image.dim(0) != 3)
      throw InputError("backbone expects a [3, H, W] image");
    if (image.dim(1) % config_.patch_size != 0 || image.dim(2) % config_.patch_size != 0)
      throw InputError("image size must be divisible by the patch size");
  }

  void build_palette_index() {
    palette_entries_.clear();
    palette_entries_.emplace_back(PatchClass::Background, 0);
    palette_entries_.emplace_back(PatchClass::ObjectOther, 0);
    for (int v = 0; v < kMaxVariants; ++v)
      palette_entries_.emplace_back(PatchClass::ObjectPart, v);
    for (int v = 0; v < kMaxVariants; ++v)
      palette_entries_.emplace_back(PatchClass::Human, v);
  }

  std::size_t palette_entry_index(PatchClass cls, int variant) const {
    switch (cls) {
      case PatchClass::Background: return 0;
      case PatchClass::ObjectOther: return 1;
      case PatchClass::ObjectPart: return 2 + static_cast<std::size_t>(variant % kMaxVariants);
      case PatchClass::Human:
        return 2 + kMaxVariants + static_cast<std::size_t>(variant % kMaxVariants);
    }
    return 0;
  }

  // Seeded directions, orthogonalized greedily (modified Gram-Schmidt) while
  // the feature dimension allows; beyond that they stay random unit vectors.
  void build_directions() {
    const std::size_t count = 2 + 2 * kMaxVariants;
    const std::size_t D = config_.feature_dim;
    directions_.assign(count * D, 0.0);
    auto rng = make_rng(mix_seed(seed_, "directions"));
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (std::size_t e = 0; e < count; ++e) {
      double* v = directions_.data() + e * D;
      for (std::size_t d = 0; d < D; ++d) v[d] = gauss(rng);
      for (std::size_t p = 0; p < e && p < D; ++p) {
        const double* u = directions_.data() + p * D;
        double dot = 0.0;
        for (std::size_t d = 0; d < D; ++d) dot += v[d] * u[d];
        for (std::size_t d = 0; d < D; ++d) v[d] -= dot * u[d];
      }
      double norm = 0.0;
      for (std::size_t d = 0; d < D; ++d) norm += v[d] * v[d];
      norm = std::sqrt(norm);
      if (norm < 1e-12) {
        // retry direction from fresh draws; vanishing residual is essentially
        // impossible for D >= 2 but must not produce a zero class vector
        v[e % D] = 1.0;
        norm = 1.0;
      }
      for (std::size_t d = 0; d < D; ++d) v[d] /= norm;
    }
  }

  // Returns (palette entry index, mean patch intensity).
  std::pair<std::size_t, double> classify_patch(const Tensor& image, std::size_t r,
                                                std::size_t c) const {
    const std::size_t ps = config_.patch_size;
    Rgb mean = {0, 0, 0};
    for (std::size_t ch = 0; ch < 3; ++ch)
      for (std::size_t y = r * ps; y < (r + 1) * ps; ++y)
        for (std::size_t x = c * ps; x < (c + 1) * ps; ++x) mean[ch] += image(ch, y, x);
    const double inv = 1.0 / static_cast<double>(ps * ps);
    double intensity = 0.0;
    for (std::size_t ch = 0; ch < 3; ++ch) {
      mean[ch] *= inv;
      intensity += std::abs(mean[ch]);
    }
    intensity /= 3.0;
    std::size_t best = 0;
    double best_d = 1e300;
    for (std::size_t e = 0; e < palette_entries_.size(); ++e) {
      const Rgb col = palette_color(palette_entries_[e].first, palette_entries_[e].second);
      double d2 = 0.0;
      for (std::size_t ch = 0; ch < 3; ++ch) {
        const double diff = mean[ch] - col[ch];
        d2 += diff * diff;
      }
      if (d2 < best_d) {
        best_d = d2;
        best = e;
      }
    }
    return {best, intensity};
  }

  std::uint64_t image_hash(const Tensor& image) const {
    std::uint64_t h = fnv1a(image.data(), image.size() * sizeof(double));
    h = mix_seed(h, image.dim(1), image.dim(2));
    return h;
  }

  void unit_noise(std::uint64_t ihash, std::size_t r, std::size_t c,
                  std::vector<double>& out) const {
    auto rng = make_rng(mix_seed(seed_, "noise", ihash, r, c));
    std::normal_distribution<double> gauss(0.0, 1.0);
    double norm = 0.0;
    for (double& v : out) {
      v = gauss(rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    if (norm < 1e-12) norm = 1.0;
    for (double& v : out) v /= norm;
  }

  std::uint64_t seed_;
  BackboneConfig config_;
  std::optional<PlantedLayout> layout_;
  std::vector<double> directions_;  // [entries, D] flattened
  std::vector<std::pair<PatchClass, int>> palette_entries_;
};

/// Factory behind the `backbone.kind` config key.
inline std::shared_ptr<Backbone> make_backbone(const std::string& kind, std::uint64_t seed,
                                               BackboneConfig config,
                                               const std::string& layout_path = "") {
  if (kind == "synthetic") {
    std::optional<PlantedLayout> layout;
    if (!layout_path.empty()) layout = load_layout(layout_path);
    return std::make_shared<SyntheticBackbone>(seed, config, std::move(layout));
  }
  if (kind == "vit-adapter")
    throw CapabilityError(
        "backbone.kind=vit-adapter requires a pretrained weight bundle, which this "
        "build does not ship; use backbone.kind=synthetic");
  throw ConfigError("unknown backbone.kind '" + kind + "' (expected synthetic or vit-adapter)");
}

}  // namespace locate
