#pragma once

#include <array>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "locate/backbone.hpp"
#include "locate/common.hpp"
#include "locate/dataset.hpp"
#include "locate/image.hpp"
#include "locate/tensor.hpp"

#include "json.hpp"

namespace locate {

// Tiny on-disk dataset for CI and desk experiments. Every image is a planted
// scene rendered with the synthetic backbone's palette: an object block with
// an affordance-specific part sub-block (ego and exo), plus an
// affordance-specific human block in exocentric views. Ground-truth points
// for test images sit at the part patch centers.

struct FixtureOptions {
  std::size_t affordances = 2;
  std::size_t objects = 2;
  std::size_t exo_per_group = 4;   // exocentric train images per (affordance, object)
  std::size_t ego_per_group = 2;   // egocentric train images per group
  std::size_t test_per_group = 2;  // egocentric test images per group
  std::uint64_t seed = 7;
  bool unseen = false;  // disjoint object classes between train and test
  std::size_t patch_size = 16;
};

struct FixtureImageInfo {
  std::string rel_path;
  std::string affordance;
  std::string object_class;
  bool exo = false;
  std::array<int, 4> object_rect_px{};  // [x0, y0, x1, y1), original pixels
  std::array<int, 4> part_rect_px{};
  std::array<int, 4> human_rect_px{};   // exo only
};

struct FixtureManifest {
  FixtureOptions options;
  std::vector<std::string> affordance_names;
  std::vector<std::string> train_objects;
  std::vector<std::string> test_objects;
  std::vector<FixtureImageInfo> images;
};

namespace detail {

inline const std::vector<std::string>& fixture_affordance_names() {
  static const std::vector<std::string> names = {"hold", "press", "lift", "pour",
                                                 "open", "push", "cut", "sit"};
  return names;
}
inline const std::vector<std::string>& fixture_train_objects() {
  static const std::vector<std::string> names = {"mug",   "pan",    "lamp",   "crate",
                                                 "radio", "stool",  "kettle", "board"};
  return names;
}
inline const std::vector<std::string>& fixture_unseen_objects() {
  static const std::vector<std::string> names = {"jug",   "vise", "bench",  "phone",
                                                 "chair", "rack", "bottle", "tray"};
  return names;
}

// Subtract an inner rect from an outer rect, producing up to four disjoint
// rects (planted layouts forbid overlap, so the object ring is decomposed).
inline std::vector<std::array<int, 4>> rect_minus(const std::array<int, 4>& outer,
                                                  const std::array<int, 4>& inner) {
  std::vector<std::array<int, 4>> out;
  const auto [or0, oc0, or1, oc1] = outer;
  const auto [ir0, ic0, ir1, ic1] = inner;
  if (ir0 > or0) out.push_back({or0, oc0, ir0, oc1});            // top band
  if (ir1 < or1) out.push_back({ir1, oc0, or1, oc1});            // bottom band
  if (ic0 > oc0) out.push_back({std::max(or0, ir0), oc0, std::min(or1, ir1), ic0});  // left
  if (ic1 < oc1) out.push_back({std::max(or0, ir0), ic1, std::min(or1, ir1), oc1});  // right
  return out;
}

}  // namespace detail

/// Build the planted layout for one fixture scene. The part corner inside the
/// object block is determined by the affordance, seeded offsets move the
/// object around the grid, and exocentric scenes add a human block in the
/// first free corner.
inline PlantedLayout fixture_scene(std::size_t affordance, bool exo, std::mt19937_64& rng) {
  constexpr int kGrid = 16;      // 256 px / patch 16
  constexpr int kObject = 8;     // patches
  constexpr int kPart = 3;
  constexpr int kHuman = 4;

  PlantedLayout layout;
  layout.grid_rows = layout.grid_cols = kGrid;

  std::uniform_int_distribution<int> pos(2, 6);  // keeps the object inside the eval crop
  const int r0 = pos(rng), c0 = pos(rng);
  const std::array<int, 4> object_rect = {r0, c0, r0 + kObject, c0 + kObject};

  // affordance-specific part corner (inset 1 or 4 from the object origin)
  static constexpr std::array<std::array<int, 2>, 4> kCorners = {
      {{1, 1}, {4, 4}, {1, 4}, {4, 1}}};
  const auto corner = kCorners[affordance % kCorners.size()];
  const std::array<int, 4> part_rect = {r0 + corner[0], c0 + corner[1],
                                        r0 + corner[0] + kPart, c0 + corner[1] + kPart};

  const int variant = static_cast<int>(affordance) % kMaxVariants;
  layout.rects.push_back({PatchClass::ObjectPart, variant, part_rect[0], part_rect[1],
                          part_rect[2], part_rect[3]});
  for (const auto& r : detail::rect_minus(object_rect, part_rect))
    layout.rects.push_back({PatchClass::ObjectOther, 0, r[0], r[1], r[2], r[3]});

  if (exo) {
    std::array<std::array<int, 2>, 4> candidates = {{{1, 1}, {1, 11}, {11, 1}, {11, 11}}};
    std::shuffle(candidates.begin(), candidates.end(), rng);
    for (const auto& cand : candidates) {
      LayoutRect human{PatchClass::Human, variant, cand[0], cand[1], cand[0] + kHuman,
                       cand[1] + kHuman};
      LayoutRect object{PatchClass::ObjectOther, 0, object_rect[0], object_rect[1],
                        object_rect[2], object_rect[3]};
      if (!human.intersects(object)) {
        layout.rects.push_back(human);
        break;
      }
    }
  }
  layout.validate();
  return layout;
}

inline FixtureManifest generate_fixture(const std::string& root, const FixtureOptions& opts) {
  namespace fs = std::filesystem;
  if (opts.affordances < 1 || opts.affordances > detail::fixture_affordance_names().size())
    throw ConfigError("fixture affordance count must be in [1, 8]");
  if (opts.objects < 1 || opts.objects > detail::fixture_train_objects().size())
    throw ConfigError("fixture object count must be in [1, 8]");

  FixtureManifest manifest;
  manifest.options = opts;
  for (std::size_t a = 0; a < opts.affordances; ++a)
    manifest.affordance_names.push_back(detail::fixture_affordance_names()[a]);
  for (std::size_t o = 0; o < opts.objects; ++o) {
    manifest.train_objects.push_back(detail::fixture_train_objects()[o]);
    manifest.test_objects.push_back(opts.unseen ? detail::fixture_unseen_objects()[o]
                                                : detail::fixture_train_objects()[o]);
  }

  const int ps = static_cast<int>(opts.patch_size);

  auto emit = [&](const std::string& split, const std::string& aff_name, std::size_t aff_idx,
                  const std::string& obj, const std::string& stem, bool exo,
                  std::uint64_t image_seed, bool write_gt) {
    const fs::path dir = fs::path(root) / split / aff_name / obj;
    fs::create_directories(dir);
    auto rng = make_rng(mix_seed(opts.seed, "scene", image_seed));
    const PlantedLayout layout = fixture_scene(aff_idx, exo, rng);
    const Tensor img = render_scene(layout, opts.patch_size, mix_seed(opts.seed, "pix", image_seed));
    const fs::path img_path = dir / (stem + ".ppm");
    save_ppm(img_path.string(), img);

    FixtureImageInfo info;
    info.rel_path = split + "/" + aff_name + "/" + obj + "/" + stem + ".ppm";
    info.affordance = aff_name;
    info.object_class = obj;
    info.exo = exo;
    for (const LayoutRect& r : layout.rects) {
      const std::array<int, 4> px = {r.c0 * ps, r.r0 * ps, r.c1 * ps, r.r1 * ps};
      if (r.cls == PatchClass::ObjectPart) info.part_rect_px = px;
      if (r.cls == PatchClass::Human) info.human_rect_px = px;
    }
    // full object extent = part rect united with the object ring
    {
      std::array<int, 4> obj_px = info.part_rect_px;
      for (const LayoutRect& r : layout.rects) {
        if (r.cls != PatchClass::ObjectOther) continue;
        obj_px[0] = std::min(obj_px[0], r.c0 * ps);
        obj_px[1] = std::min(obj_px[1], r.r0 * ps);
        obj_px[2] = std::max(obj_px[2], r.c1 * ps);
        obj_px[3] = std::max(obj_px[3], r.r1 * ps);
      }
      info.object_rect_px = obj_px;
    }

    if (write_gt) {
      // ground-truth points: the pixel center of every part patch
      std::ofstream pts(fs::path(dir / (stem + ".pts")));
      for (const LayoutRect& r : layout.rects) {
        if (r.cls != PatchClass::ObjectPart) continue;
        for (int pr = r.r0; pr < r.r1; ++pr)
          for (int pc = r.c0; pc < r.c1; ++pc)
            pts << (pc * ps + ps / 2.0 - 0.5) << " " << (pr * ps + ps / 2.0 - 0.5) << "\n";
      }
    }
    manifest.images.push_back(std::move(info));
  };

  std::uint64_t counter = 0;
  for (std::size_t a = 0; a < opts.affordances; ++a) {
    const std::string& aff = manifest.affordance_names[a];
    for (std::size_t o = 0; o < opts.objects; ++o) {
      const std::string& train_obj = manifest.train_objects[o];
      for (std::size_t i = 0; i < opts.exo_per_group; ++i) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "exo_%03zu", i);
        emit("train", aff, a, train_obj, stem, true, ++counter, false);
      }
      for (std::size_t i = 0; i < opts.ego_per_group; ++i) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "ego_%03zu", i);
        emit("train", aff, a, train_obj, stem, false, ++counter, false);
      }
      const std::string& test_obj = manifest.test_objects[o];
      for (std::size_t i = 0; i < opts.test_per_group; ++i) {
        char stem[32];
        std::snprintf(stem, sizeof(stem), "ego_%03zu", i);
        emit("test", aff, a, test_obj, stem, false, ++counter, true);
      }
    }
  }

  // manifest.json lets tests relate predictions back to planted regions
  nlohmann::json j;
  j["seed"] = opts.seed;
  j["patch_size"] = opts.patch_size;
  j["image_size"] = opts.patch_size * 16;
  j["unseen"] = opts.unseen;
  j["affordances"] = manifest.affordance_names;
  j["train_objects"] = manifest.train_objects;
  j["test_objects"] = manifest.test_objects;
  nlohmann::json imgs = nlohmann::json::object();
  for (const FixtureImageInfo& info : manifest.images) {
    nlohmann::json e;
    e["affordance"] = info.affordance;
    e["object"] = info.object_class;
    e["view"] = info.exo ? "exo" : "ego";
    e["object_rect_px"] = info.object_rect_px;
    e["part_rect_px"] = info.part_rect_px;
    if (info.exo) e["human_rect_px"] = info.human_rect_px;
    imgs[info.rel_path] = e;
  }
  j["images"] = imgs;
  std::ofstream mf(std::filesystem::path(root) / "manifest.json");
  if (!mf) throw DataError("cannot write fixture manifest under '" + root + "'");
  mf << j.dump(2) << "\n";

  return manifest;
}

}  // namespace locate
