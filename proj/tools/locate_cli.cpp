// locate: weakly supervised affordance grounding pipeline.
//
// Subcommands: train, eval, predict, fixture, inspect. Options mirror the
// config keys; a JSON config file can be given with --config and individual
// flags override it. The LOCATE_OUT_DIR environment variable overrides the
// configured output directory (flags still win).
//
// Exit codes: 0 ok, 2 config error, 3 data error, 4 runtime failure.

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "locate/locate.hpp"

namespace fs = std::filesystem;
using namespace locate;

namespace {

Tensor viridis(double t) {
  // compact anchor table, linearly interpolated
  static constexpr double anchors[5][3] = {{0.267, 0.005, 0.329},
                                           {0.229, 0.322, 0.546},
                                           {0.128, 0.565, 0.551},
                                           {0.369, 0.789, 0.383},
                                           {0.993, 0.906, 0.144}};
  t = std::clamp(t, 0.0, 1.0) * 4.0;
  const std::size_t i = std::min<std::size_t>(static_cast<std::size_t>(t), 3);
  const double f = t - static_cast<double>(i);
  Tensor rgb({3});
  for (std::size_t c = 0; c < 3; ++c)
    rgb[c] = anchors[i][c] * (1.0 - f) + anchors[i + 1][c] * f;
  return rgb;
}

std::string find_config_path(int argc, char** argv) {
  for (int i = 1; i < argc - 1; ++i)
    if (std::string(argv[i]) == "--config") return argv[i + 1];
  return "";
}

Config base_config(int argc, char** argv) {
  const std::string path = find_config_path(argc, argv);
  Config cfg = path.empty() ? Config{} : Config::load_file(path);
  if (const char* env = std::getenv("LOCATE_OUT_DIR"); env && *env) cfg.out_dir = env;
  return cfg;
}

// Flags shared by train/eval/inspect; each writes straight into cfg so a
// given flag overrides the config-file value.
void add_common_options(CLI::App* cmd, Config& cfg) {
  std::string ignored;
  cmd->add_option("--config", ignored, "JSON config file (parsed before flags)");
  cmd->add_option("--data", cfg.data_root, "dataset root directory");
  cmd->add_option("--setting", cfg.setting, "seen | unseen");
  cmd->add_option("--out", cfg.out_dir, "output directory");
  cmd->add_option("--batch-size", cfg.batch_size, "batch size");
  cmd->add_option("--N", cfg.n_exo, "exocentric images per egocentric image");
  cmd->add_option("--K", cfg.K, "number of k-means prototypes");
  cmd->add_option("--tau", cfg.tau, "embedding extraction threshold");
  cmd->add_option("--mu", cfg.mu, "PartIoU selection threshold");
  cmd->add_option("--alpha", cfg.alpha, "cosine margin");
  cmd->add_option("--lambda-cos", cfg.lambda_cos, "cosine loss weight");
  cmd->add_option("--lambda-c", cfg.lambda_c, "concentration loss weight");
  cmd->add_option("--transfer-mode", cfg.transfer_mode, "GKT | RKT");
  cmd->add_flag("--select,!--no-select", cfg.select_enabled,
                "enable prototype selection (the S toggle)");
  cmd->add_flag("--lc-gt-only,!--lc-all-channels", cfg.lc_gt_only,
                "restrict the concentration loss to the ground-truth channel");
  cmd->add_option("--seed", cfg.seed, "master RNG seed");
  cmd->add_option("--lr", cfg.lr, "SGD learning rate");
  cmd->add_option("--weight-decay", cfg.weight_decay, "SGD weight decay");
  cmd->add_option("--momentum", cfg.momentum, "SGD momentum");
  cmd->add_option("--epochs", cfg.epochs, "training epochs (required for train)");
  cmd->add_option("--warmup-epochs", cfg.warmup_epochs, "epochs without the cosine loss");
  cmd->add_option("--backbone", cfg.backbone_kind, "synthetic | vit-adapter");
  cmd->add_option("--backbone-seed", cfg.backbone_seed, "synthetic backbone seed");
  cmd->add_option("--feature-dim", cfg.feature_dim, "backbone feature dimension");
  cmd->add_option("--patch-size", cfg.patch_size, "backbone patch size");
  cmd->add_option("--layout", cfg.backbone_layout, "planted layout text file");
  cmd->add_flag("--cam-shared,!--cam-separate", cfg.cam_shared,
                "share the CAM head between branches");
  cmd->add_option("--cam-hidden", cfg.cam_hidden, "CAM head hidden width (0 = feature dim)");
  cmd->add_option("--gt-sigma", cfg.gt_sigma, "ground-truth Gaussian blur sigma (pixels)");
}

// eval/inspect start from the checkpoint's stored config; flags the user
// actually passed (count > 0) override it.
void apply_passed_overrides(const CLI::App* cmd, const Config& flags, Config& cfg) {
  const auto passed = [&](const std::string& name) { return cmd->count(name) > 0; };
  if (passed("--data")) cfg.data_root = flags.data_root;
  if (passed("--setting")) cfg.setting = flags.setting;
  if (passed("--out")) cfg.out_dir = flags.out_dir;
  if (passed("--tau")) cfg.tau = flags.tau;
  if (passed("--mu")) cfg.mu = flags.mu;
  if (passed("--K")) cfg.K = flags.K;
  if (passed("--N")) cfg.n_exo = flags.n_exo;
  if (passed("--seed")) cfg.seed = flags.seed;
  if (passed("--gt-sigma")) cfg.gt_sigma = flags.gt_sigma;
  if (passed("--select") || passed("--no-select")) cfg.select_enabled = flags.select_enabled;
}

std::shared_ptr<Backbone> backbone_from(const Config& cfg) {
  BackboneConfig bc;
  bc.patch_size = cfg.patch_size;
  bc.feature_dim = cfg.feature_dim;
  return make_backbone(cfg.backbone_kind, cfg.backbone_seed, bc, cfg.backbone_layout);
}

int cmd_train(Config cfg) {
  if (cfg.data_root.empty()) throw ConfigError("no dataset root given (--data or data.root)");
  if (cfg.epochs < 1)
    throw ConfigError("train.epochs is required and has no default (--epochs)");
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  std::ofstream log(fs::path(cfg.out_dir) / "train_log.jsonl");
  TrainRun run = run_training(cfg, nullptr, &log);
  run.resolved.save_file((fs::path(cfg.out_dir) / "resolved_config.json").string());
  const std::string ck_path = (fs::path(cfg.out_dir) / "checkpoint.lct").string();
  save_checkpoint(ck_path, run.checkpoint);
  const LossReport& last = run.reports.back();
  std::cout << "trained " << run.reports.size() << " steps over " << cfg.epochs
            << " epochs\n"
            << "final total loss " << last.total << " (cls_exo " << last.l_cls_exo
            << ", cls_ego " << last.l_cls_ego << ", cos " << last.l_cos << ", conc "
            << last.l_c << ")\n"
            << "checkpoint: " << ck_path << "\n";
  return 0;
}

int cmd_eval(const CLI::App* cmd, const Config& overrides, const std::string& ck_path) {
  const Checkpoint ck = load_checkpoint(ck_path);
  Config cfg = Config::from_json(nlohmann::json::parse(ck.config_json));
  apply_passed_overrides(cmd, overrides, cfg);
  if (cfg.data_root.empty()) throw ConfigError("no dataset root given (--data or data.root)");
  cfg.validate();

  const DatasetIndex index = index_dataset(cfg.data_root, cfg.setting);
  if (index.test_records().empty()) throw DataError("empty test split under '" + cfg.data_root + "'");
  const auto backbone = backbone_from(cfg);
  const MetricReport report = evaluate_dataset(*backbone, ck.ego_side(), index, cfg);
  if (report.rows.empty()) throw DataError("no test records could be evaluated");

  fs::create_directories(cfg.out_dir);
  write_metrics_csv((fs::path(cfg.out_dir) / "metrics.csv").string(), report);
  write_metrics_json((fs::path(cfg.out_dir) / "metrics.json").string(), report);
  const MetricTriple agg = report.aggregate();
  std::cout << "evaluated " << report.rows.size() << " images (" << report.skipped
            << " skipped)\n"
            << "KLD " << format_metric(agg.kld) << "  SIM " << format_metric(agg.sim)
            << "  NSS " << format_metric(agg.nss) << "\n";
  return 0;
}

int cmd_predict(const std::string& ck_path, const std::string& image_path,
                const std::string& affordance, std::string out_dir) {
  const Checkpoint ck = load_checkpoint(ck_path);
  const Config cfg = Config::from_json(nlohmann::json::parse(ck.config_json));
  std::size_t t = cfg.vocabulary.size();
  for (std::size_t i = 0; i < cfg.vocabulary.size(); ++i)
    if (cfg.vocabulary[i] == affordance) t = i;
  if (t == cfg.vocabulary.size()) {
    std::string vocab;
    for (const auto& v : cfg.vocabulary) vocab += (vocab.empty() ? "" : ", ") + v;
    throw ConfigError("unknown affordance '" + affordance + "'; vocabulary: [" + vocab + "]");
  }

  const Tensor orig = load_ppm(image_path);
  const std::size_t oh = orig.dim(1), ow = orig.dim(2);
  const Tensor img = augment_eval(orig, cfg.norm_mean, cfg.norm_std);
  const auto backbone = backbone_from(cfg);
  const FeatureMap fm = backbone->extract_features(img);
  const CamForward fwd = cam_forward(fm, ck.ego_side());
  const Tensor pred224 = predict_affordance(fwd.maps, t, kCropTo, kCropTo);

  // place the crop-frame prediction back into the resize frame, then scale to
  // the original geometry so the heatmap shape matches the input image
  Tensor canvas({1, kResizeTo, kResizeTo});
  const std::size_t off = (kResizeTo - kCropTo) / 2;
  for (std::size_t y = 0; y < kCropTo; ++y)
    for (std::size_t x = 0; x < kCropTo; ++x) canvas(0, y + off, x + off) = pred224(y, x);
  canvas = resize_bilinear(canvas, oh, ow);
  Tensor heat({oh, ow});
  for (std::size_t i = 0; i < heat.size(); ++i) heat[i] = std::clamp(canvas[i], 0.0, 1.0);

  fs::create_directories(out_dir);
  const std::string stem = fs::path(image_path).stem().string();
  const std::string heat_path = (fs::path(out_dir) / (stem + "_heatmap.heat")).string();
  Archive a;
  a.put_tensor("density", heat);
  a.save(heat_path);

  // overlay: fixed colormap at 0.5 alpha over the input image
  Tensor overlay({3, oh, ow});
  for (std::size_t y = 0; y < oh; ++y)
    for (std::size_t x = 0; x < ow; ++x) {
      const Tensor rgb = viridis(heat(y, x));
      for (std::size_t c = 0; c < 3; ++c)
        overlay(c, y, x) = 0.5 * orig(c, y, x) + 0.5 * rgb[c];
    }
  const std::string overlay_path = (fs::path(out_dir) / (stem + "_overlay.ppm")).string();
  save_ppm(overlay_path, overlay);

  std::cout << "affordance '" << affordance << "' (channel " << t << ")\n"
            << "heatmap: " << heat_path << "\noverlay: " << overlay_path << "\n";
  return 0;
}

int cmd_fixture(const std::string& out, const FixtureOptions& opts) {
  const FixtureManifest manifest = generate_fixture(out, opts);
  std::size_t exo = 0, ego = 0;
  for (const auto& info : manifest.images) (info.exo ? exo : ego)++;
  std::cout << "fixture written to " << out << ": " << manifest.affordance_names.size()
            << " affordances x " << manifest.train_objects.size() << " objects, " << exo
            << " exocentric + " << ego << " egocentric images\n";
  return 0;
}

int cmd_inspect(const CLI::App* cmd, const Config& overrides, const std::string& ck_path,
                std::size_t record_index) {
  const Checkpoint ck = load_checkpoint(ck_path);
  Config cfg = Config::from_json(nlohmann::json::parse(ck.config_json));
  apply_passed_overrides(cmd, overrides, cfg);
  if (cfg.data_root.empty()) throw ConfigError("no dataset root given (--data or data.root)");
  cfg.validate();

  const DatasetIndex index = index_dataset(cfg.data_root, cfg.setting);
  const auto train = index.train_records();
  if (record_index >= train.size())
    throw ConfigError("--index " + std::to_string(record_index) + " out of range (" +
                      std::to_string(train.size()) + " train records)");
  const SampleRecord& rec = *train[record_index];
  const auto backbone = backbone_from(cfg);

  // deterministic inspection path: eval transforms, seeded exo draw
  const Tensor ego_img = augment_eval(load_ppm(rec.ego_path), cfg.norm_mean, cfg.norm_std);
  const auto exo_paths =
      sample_exocentric(rec.exo_paths, cfg.n_exo, mix_seed(cfg.seed, "inspect", record_index));
  std::vector<FeatureMap> exo_fms;
  std::vector<LocalizationMaps> exo_maps;
  for (const auto& p : exo_paths) {
    const Tensor img = augment_eval(load_ppm(p), cfg.norm_mean, cfg.norm_std);
    FeatureMap fm = backbone->extract_features(img);
    CamForward fwd = cam_forward(fm, ck.params);
    exo_fms.push_back(std::move(fm));
    exo_maps.push_back(std::move(fwd.maps));
  }
  const EmbeddingBag bag =
      extract_interaction_embeddings(exo_fms, exo_maps, rec.affordance, cfg.tau);
  const FeatureMap ego_fm = backbone->extract_features(ego_img);
  const SaliencyMask saliency = backbone->extract_saliency(ego_img);

  fs::create_directories(cfg.out_dir);
  Archive dump;
  Tensor sal_w = saliency.weights;
  dump.put_tensor("saliency.weights", sal_w);
  Tensor sal_b({saliency.binary.rows, saliency.binary.cols});
  for (std::size_t i = 0; i < sal_b.size(); ++i) sal_b[i] = saliency.binary.v[i];
  dump.put_tensor("saliency.binary", sal_b);

  nlohmann::json j;
  j["record"] = fs::proximate(rec.ego_path, index.root).generic_string();
  j["affordance"] = rec.affordance_name;
  j["bag_size"] = bag.count();
  j["exo_paths"] = exo_paths;

  const auto protos = cluster_prototypes(bag, cfg.K, mix_seed(cfg.seed, "inspect-kmeans", record_index));
  if (protos) {
    const SimilarityMaps sims = similarity_maps(*protos, ego_fm);
    const SelectionResult sel = select_object_part(*protos, sims, saliency, cfg.mu);
    for (std::size_t k = 0; k < protos->k(); ++k) {
      Tensor s({ego_fm.patch_rows, ego_fm.patch_cols});
      for (std::size_t r = 0; r < s.dim(0); ++r)
        for (std::size_t c = 0; c < s.dim(1); ++c) s(r, c) = sims.data(k, r, c);
      dump.put_tensor("sim." + std::to_string(k), s);
    }
    j["gamma"] = sel.scores;
    if (sel.chosen_index) j["chosen_index"] = *sel.chosen_index;
    else j["chosen_index"] = nullptr;
    j["member_counts"] = protos->member_counts;
    j["kmeans_iters"] = protos->kmeans_iters_used;
  } else {
    j["gamma"] = nlohmann::json::array();
    j["chosen_index"] = nullptr;
    j["note"] = "no prototype: fewer embeddings than K";
  }

  const std::string dump_path = (fs::path(cfg.out_dir) / "inspect_maps.lct").string();
  dump.save(dump_path);
  std::ofstream jf(fs::path(cfg.out_dir) / "selection.json");
  jf << j.dump(2) << "\n";
  std::cout << j.dump(2) << "\nmaps: " << dump_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LOCATE-style weakly supervised affordance grounding"};
  app.require_subcommand(1);

  Config train_cfg = Config{}, eval_cfg = Config{}, inspect_cfg = Config{};
  try {
    train_cfg = eval_cfg = inspect_cfg = base_config(argc, argv);
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  auto* train = app.add_subcommand("train", "train on a dataset");
  add_common_options(train, train_cfg);

  std::string eval_ck;
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
  add_common_options(eval, eval_cfg);
  eval->add_option("--checkpoint", eval_ck, "checkpoint file")->required();

  std::string pred_ck, pred_image, pred_aff, pred_out = "out";
  auto* predict = app.add_subcommand("predict", "predict an affordance heatmap");
  predict->add_option("--checkpoint", pred_ck, "checkpoint file")->required();
  predict->add_option("--image", pred_image, "input image (PPM)")->required();
  predict->add_option("--affordance", pred_aff, "affordance name")->required();
  predict->add_option("--out", pred_out, "output directory");

  std::string fix_out;
  FixtureOptions fix_opts;
  auto* fixture = app.add_subcommand("fixture", "generate a synthetic CI dataset");
  fixture->add_option("--out", fix_out, "output directory")->required();
  fixture->add_option("--affordances", fix_opts.affordances, "affordance count (1-8)");
  fixture->add_option("--objects", fix_opts.objects, "object count (1-8)");
  fixture->add_option("--exo-per", fix_opts.exo_per_group, "exocentric images per group");
  fixture->add_option("--ego-per", fix_opts.ego_per_group, "train egocentric images per group");
  fixture->add_option("--test-per", fix_opts.test_per_group, "test egocentric images per group");
  fixture->add_option("--seed", fix_opts.seed, "fixture seed");
  fixture->add_flag("--unseen", fix_opts.unseen, "disjoint train/test object classes");

  std::string inspect_ck;
  std::size_t inspect_index = 0;
  auto* inspect = app.add_subcommand("inspect", "dump PartSelect internals for one sample");
  add_common_options(inspect, inspect_cfg);
  inspect->add_option("--checkpoint", inspect_ck, "checkpoint file")->required();
  inspect->add_option("--index", inspect_index, "train record index");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (train->parsed()) return cmd_train(train_cfg);
    if (eval->parsed()) return cmd_eval(eval_cfg, eval_ck);
    if (predict->parsed()) {
      if (const char* env = std::getenv("LOCATE_OUT_DIR"); env && *env)
        if (predict->get_option("--out")->count() == 0) pred_out = env;
      return cmd_predict(pred_ck, pred_image, pred_aff, pred_out);
    }
    if (fixture->parsed()) return cmd_fixture(fix_out, fix_opts);
    if (inspect->parsed()) return cmd_inspect(inspect_cfg, inspect_ck, inspect_index);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const CapabilityError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "runtime failure: " << e.what() << "\n";
    return 4;
  }
  return 0;
}
