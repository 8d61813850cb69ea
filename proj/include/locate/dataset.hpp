#pragma once

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "locate/archive.hpp"
#include "locate/common.hpp"
#include "locate/image.hpp"
#include "locate/metrics.hpp"
#include "locate/tensor.hpp"

namespace locate {

// Dataset layout:
//   <root>/<split>/<affordance>/<object>/<image>.ppm
// with split in {train, test}. The view is encoded in the filename prefix:
// exo_* are exocentric interaction images, ego_* are egocentric object
// images. Test ego images carry ground truth in a sidecar file with the same
// stem: either <stem>.pts ("x y" per line, original pixel coordinates) or
// <stem>.heat (archive with a "density" map and optionally a "points" array).

constexpr std::size_t kResizeTo = 256;
constexpr std::size_t kCropTo = 224;

enum class Split { Train, Test };

struct SampleRecord {
  std::string ego_path;
  std::vector<std::string> exo_paths;  // the (affordance, object) pool; >= 1 for train
  std::size_t affordance = 0;
  std::string affordance_name;
  std::string object_class;
  Split split = Split::Train;
  std::string gt_path;  // test records only; may be empty if no GT was found
};

struct DatasetIndex {
  std::string root;
  std::string setting;  // "seen" | "unseen"
  std::vector<std::string> vocabulary;  // affordance names from the train split, sorted
  std::vector<SampleRecord> records;    // train then test, lexicographic

  std::size_t class_count() const { return vocabulary.size(); }

  std::vector<const SampleRecord*> train_records() const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : records)
      if (r.split == Split::Train) out.push_back(&r);
    return out;
  }
  std::vector<const SampleRecord*> test_records() const {
    std::vector<const SampleRecord*> out;
    for (const auto& r : records)
      if (r.split == Split::Test) out.push_back(&r);
    return out;
  }

  std::size_t affordance_index(const std::string& name) const {
    for (std::size_t i = 0; i < vocabulary.size(); ++i)
      if (vocabulary[i] == name) return i;
    throw DataError("unknown affordance '" + name + "'");
  }
};

namespace detail {

inline std::vector<std::string> sorted_dirs(const std::filesystem::path& p) {
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(p))
    if (e.is_directory()) out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::vector<std::string> sorted_images(const std::filesystem::path& p) {
  std::vector<std::string> out;
  for (const auto& e : std::filesystem::directory_iterator(p))
    if (e.is_regular_file() && e.path().extension() == ".ppm")
      out.push_back(e.path().filename().string());
  std::sort(out.begin(), out.end());
  return out;
}

inline std::string gt_sidecar(const std::filesystem::path& image_path) {
  for (const char* ext : {".pts", ".heat"}) {
    std::filesystem::path p = image_path;
    p.replace_extension(ext);
    if (std::filesystem::exists(p)) return p.string();
  }
  return "";
}

}  // namespace detail

/// Walk the layout, derive the affordance vocabulary from the train split,
/// and build one record per egocentric image. Ordering is lexicographic and
/// deterministic. In the unseen setting, object-class disjointness between
/// train and test is re-checked here rather than trusted.
inline DatasetIndex index_dataset(const std::string& root, const std::string& setting) {
  namespace fs = std::filesystem;
  if (setting != "seen" && setting != "unseen")
    throw ConfigError("setting must be 'seen' or 'unseen', got '" + setting + "'");
  const fs::path root_path(root);
  if (!fs::is_directory(root_path)) throw DataError("dataset root '" + root + "' does not exist");

  DatasetIndex index;
  index.root = root;
  index.setting = setting;

  const fs::path train_dir = root_path / "train";
  if (!fs::is_directory(train_dir))
    throw DataError("missing train split directory '" + train_dir.string() + "'");
  index.vocabulary = detail::sorted_dirs(train_dir);
  if (index.vocabulary.empty())
    throw DataError("no records: train split of '" + root + "' has no affordance classes");

  std::set<std::string> train_objects, test_objects;

  for (std::size_t a = 0; a < index.vocabulary.size(); ++a) {
    const fs::path aff_dir = train_dir / index.vocabulary[a];
    const auto objects = detail::sorted_dirs(aff_dir);
    if (objects.empty())
      throw DataError("affordance class '" + index.vocabulary[a] + "' has no object classes");
    for (const std::string& obj : objects) {
      train_objects.insert(obj);
      const fs::path obj_dir = aff_dir / obj;
      const auto images = detail::sorted_images(obj_dir);
      if (images.empty())
        throw DataError("empty image group '" + obj_dir.string() + "'");
      std::vector<std::string> exo, ego;
      for (const std::string& name : images) {
        const std::string full = (obj_dir / name).string();
        if (name.rfind("exo_", 0) == 0) exo.push_back(full);
        else if (name.rfind("ego_", 0) == 0) ego.push_back(full);
      }
      for (const std::string& e : ego) {
        if (exo.empty())
          throw DataError("train group '" + obj_dir.string() +
                          "' has egocentric images but no exocentric images to pair");
        SampleRecord r;
        r.ego_path = e;
        r.exo_paths = exo;
        r.affordance = a;
        r.affordance_name = index.vocabulary[a];
        r.object_class = obj;
        r.split = Split::Train;
        index.records.push_back(std::move(r));
      }
    }
  }

  const fs::path test_dir = root_path / "test";
  if (fs::is_directory(test_dir)) {
    for (const std::string& aff : detail::sorted_dirs(test_dir)) {
      const auto it = std::find(index.vocabulary.begin(), index.vocabulary.end(), aff);
      if (it == index.vocabulary.end())
        throw DataError("test affordance '" + aff + "' is not in the training vocabulary");
      const std::size_t a = static_cast<std::size_t>(it - index.vocabulary.begin());
      const fs::path aff_dir = test_dir / aff;
      for (const std::string& obj : detail::sorted_dirs(aff_dir)) {
        test_objects.insert(obj);
        const fs::path obj_dir = aff_dir / obj;
        for (const std::string& name : detail::sorted_images(obj_dir)) {
          if (name.rfind("ego_", 0) != 0) continue;
          SampleRecord r;
          r.ego_path = (obj_dir / name).string();
          r.affordance = a;
          r.affordance_name = aff;
          r.object_class = obj;
          r.split = Split::Test;
          r.gt_path = detail::gt_sidecar(obj_dir / name);
          index.records.push_back(std::move(r));
        }
      }
    }
  }

  if (setting == "unseen") {
    std::vector<std::string> overlap;
    for (const std::string& o : test_objects)
      if (train_objects.count(o)) overlap.push_back(o);
    if (!overlap.empty()) {
      std::string msg = "unseen setting violated: object classes shared by train and test:";
      for (const std::string& o : overlap) msg += " " + o;
      throw DataError(msg);
    }
  }

  if (index.records.empty()) throw DataError("no records found under '" + root + "'");
  return index;
}

/// Draw N exocentric paths for one ego image: without replacement when the
/// pool is large enough; otherwise every pool item once plus seeded uniform
/// redraws. Deterministic in the seed.
inline std::vector<std::string> sample_exocentric(const std::vector<std::string>& pool,
                                                  std::size_t n, std::uint64_t seed) {
  if (pool.empty()) throw DataError("cannot sample exocentric images from an empty pool");
  auto rng = make_rng(mix_seed(seed, "exo_sample"));
  std::vector<std::string> out;
  if (pool.size() >= n) {
    std::vector<std::size_t> idx(pool.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), rng);
    for (std::size_t i = 0; i < n; ++i) out.push_back(pool[idx[i]]);
  } else {
    out = pool;
    std::uniform_int_distribution<std::size_t> uni(0, pool.size() - 1);
    while (out.size() < n) out.push_back(pool[uni(rng)]);
  }
  return out;
}

// --- augmentation ---------------------------------------------------------

struct AugmentParams {
  std::size_t crop_top = 0;
  std::size_t crop_left = 0;
  bool flip = false;
};

inline AugmentParams draw_augment_params(std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> off(0, kResizeTo - kCropTo);
  std::bernoulli_distribution coin(0.5);
  AugmentParams p;
  p.crop_top = off(rng);
  p.crop_left = off(rng);
  p.flip = coin(rng);
  return p;
}

inline Tensor apply_augment(const Tensor& img, const AugmentParams& p,
                            const std::array<double, 3>& mean,
                            const std::array<double, 3>& stddev) {
  Tensor out = resize_bilinear(img, kResizeTo, kResizeTo);
  out = crop(out, p.crop_top, p.crop_left, kCropTo, kCropTo);
  if (p.flip) out = hflip(out);
  return standardize(out, mean, stddev);
}

/// Train-time transform: resize to 256, random 224 crop, horizontal flip with
/// p = 0.5, per-channel standardization with the configured constants.
inline Tensor augment_train(const Tensor& img, std::mt19937_64& rng,
                            const std::array<double, 3>& mean,
                            const std::array<double, 3>& stddev) {
  return apply_augment(img, draw_augment_params(rng), mean, stddev);
}

/// Eval-time transform: resize to 256, center crop, no flip. Deterministic.
inline Tensor augment_eval(const Tensor& img, const std::array<double, 3>& mean,
                           const std::array<double, 3>& stddev) {
  const AugmentParams center{(kResizeTo - kCropTo) / 2, (kResizeTo - kCropTo) / 2, false};
  return apply_augment(img, center, mean, stddev);
}

// --- ground truth ----------------------------------------------------------

struct GroundTruthSource {
  std::vector<PixelPoint> points;  // original-image pixel coordinates
  std::optional<Tensor> density;   // pre-rendered heatmap at original resolution
};

inline GroundTruthSource load_gt(const std::string& path) {
  GroundTruthSource gt;
  if (path.size() >= 4 && path.substr(path.size() - 4) == ".pts") {
    std::ifstream f(path);
    if (!f) throw DataError("cannot open ground-truth file '" + path + "'");
    double x, y;
    while (f >> x >> y) gt.points.push_back({x, y});
    if (gt.points.empty()) throw DataError("ground-truth file '" + path + "' has no points");
    return gt;
  }
  if (path.size() >= 5 && path.substr(path.size() - 5) == ".heat") {
    Archive a = Archive::load(path);
    gt.density = a.get_tensor("density");
    if (gt.density->rank() != 2) throw DataError("'" + path + "': density must be [H, W]");
    if (a.has("points")) {
      const Tensor pts = a.get_tensor("points");
      for (std::size_t i = 0; i < pts.dim(0); ++i) gt.points.push_back({pts(i, 0), pts(i, 1)});
    }
    return gt;
  }
  throw DataError("unrecognized ground-truth file '" + path + "' (expected .pts or .heat)");
}

/// Map original-image points through the eval transform (resize to 256,
/// center crop 224). Points landing outside the crop are dropped.
inline std::vector<PixelPoint> transform_points_for_eval(const std::vector<PixelPoint>& pts,
                                                         std::size_t orig_h,
                                                         std::size_t orig_w) {
  const double sy = static_cast<double>(kResizeTo) / static_cast<double>(orig_h);
  const double sx = static_cast<double>(kResizeTo) / static_cast<double>(orig_w);
  const double off = static_cast<double>((kResizeTo - kCropTo) / 2);
  std::vector<PixelPoint> out;
  for (const PixelPoint& p : pts) {
    const double x = p.x * sx - off;
    const double y = p.y * sy - off;
    if (x >= 0.0 && y >= 0.0 && x <= static_cast<double>(kCropTo - 1) &&
        y <= static_cast<double>(kCropTo - 1))
      out.push_back({x, y});
  }
  return out;
}

/// Same transform for a pre-rendered density map; re-normalized to sum 1.
inline Tensor transform_density_for_eval(const Tensor& density) {
  Tensor canvas({1, density.dim(0), density.dim(1)});
  for (std::size_t i = 0; i < density.size(); ++i) canvas[i] = density[i];
  canvas = resize_bilinear(canvas, kResizeTo, kResizeTo);
  canvas = crop(canvas, (kResizeTo - kCropTo) / 2, (kResizeTo - kCropTo) / 2, kCropTo, kCropTo);
  Tensor out({kCropTo, kCropTo});
  double total = 0.0;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = std::max(canvas[i], 0.0);
    total += out[i];
  }
  if (total <= 0.0) throw DataError("ground-truth density is empty after the eval crop");
  for (double& v : out.vec()) v /= total;
  return out;
}

// --- batches ----------------------------------------------------------------

struct BatchRow {
  Tensor ego;               // [3, 224, 224]
  std::vector<Tensor> exo;  // N x [3, 224, 224]
  std::size_t label = 0;
  std::size_t record_index = 0;
};

struct Batch {
  std::vector<BatchRow> rows;
};

/// Deterministic batch assembly: a seeded shuffle per epoch, fixed
/// per-(epoch, slot) RNG streams for sampling and augmentation (so that any
/// parallel decode scheme fills identical slots), partial final batches
/// dropped. Undecodable images are skipped with a logged warning.
class BatchLoader {
 public:
  struct Options {
    std::size_t batch_size = 16;
    std::size_t n_exo = 3;
    std::uint64_t seed = 0;
    std::array<double, 3> norm_mean{0.0, 0.0, 0.0};
    std::array<double, 3> norm_std{1.0, 1.0, 1.0};
  };

  BatchLoader(const DatasetIndex& index, Options opts) : opts_(opts) {
    require(opts_.batch_size >= 1 && opts_.n_exo >= 1, "batch_size and N must be >= 1");
    for (std::size_t i = 0; i < index.records.size(); ++i)
      if (index.records[i].split == Split::Train) train_indices_.push_back(i);
    if (train_indices_.empty()) throw DataError("no train records to batch");
    records_ = &index.records;
  }

  std::size_t batches_per_epoch() const { return train_indices_.size() / opts_.batch_size; }

  Batch load(std::size_t epoch, std::size_t batch_idx) const {
    const auto order = epoch_order(epoch);
    require(batch_idx < batches_per_epoch(), "batch index out of range");
    Batch batch;
    for (std::size_t s = 0; s < opts_.batch_size; ++s) {
      const std::size_t slot = batch_idx * opts_.batch_size + s;
      const std::size_t rec_idx = order[slot];
      const SampleRecord& rec = (*records_)[rec_idx];
      const std::uint64_t slot_seed = mix_seed(opts_.seed, "slot", epoch, slot);
      try {
        BatchRow row;
        row.label = rec.affordance;
        row.record_index = rec_idx;
        auto rng = make_rng(mix_seed(slot_seed, "aug_ego"));
        row.ego = augment_train(load_ppm(rec.ego_path), rng, opts_.norm_mean, opts_.norm_std);
        const auto exo_paths =
            sample_exocentric(rec.exo_paths, opts_.n_exo, mix_seed(slot_seed, "pick"));
        for (std::size_t j = 0; j < exo_paths.size(); ++j) {
          auto erng = make_rng(mix_seed(slot_seed, "aug_exo", j));
          row.exo.push_back(
              augment_train(load_ppm(exo_paths[j]), erng, opts_.norm_mean, opts_.norm_std));
        }
        batch.rows.push_back(std::move(row));
      } catch (const DataError& e) {
        std::cerr << "warning: skipping record '" << rec.ego_path << "': " << e.what()
                  << "\n";
      }
    }
    if (batch.rows.empty()) throw DataError("entire batch failed to decode");
    return batch;
  }

 private:
  std::vector<std::size_t> epoch_order(std::size_t epoch) const {
    std::vector<std::size_t> order = train_indices_;
    auto rng = make_rng(mix_seed(opts_.seed, "epoch", epoch));
    std::shuffle(order.begin(), order.end(), rng);
    return order;
  }

  Options opts_;
  std::vector<std::size_t> train_indices_;
  const std::vector<SampleRecord>* records_ = nullptr;
};

}  // namespace locate
