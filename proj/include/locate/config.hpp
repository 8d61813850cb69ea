#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "locate/common.hpp"

#include "json.hpp"

namespace locate {

// Resolved run configuration. JSON layout mirrors the config keys exposed on
// the CLI (flags override file values); the fully-resolved form is echoed to
// the output directory so any run can be reproduced from it.
struct Config {
  // data
  std::string data_root;
  std::string setting = "seen";  // seen | unseen
  std::size_t batch_size = 16;
  std::size_t n_exo = 3;  // N exocentric images per egocentric image
  std::array<double, 3> norm_mean{0.0, 0.0, 0.0};
  std::array<double, 3> norm_std{1.0, 1.0, 1.0};

  // backbone
  std::string backbone_kind = "synthetic";  // synthetic | vit-adapter
  std::uint64_t backbone_seed = 1234;
  std::size_t feature_dim = 32;
  std::size_t patch_size = 16;
  std::string backbone_layout;  // optional planted-layout text file

  // cam head
  bool cam_shared = true;
  std::size_t cam_hidden = 0;  // 0 -> feature_dim

  // region extraction / prototype selection
  double tau = 0.6;
  std::size_t K = 3;
  double mu = 0.65;
  bool select_enabled = true;  // the "S" ablation toggle

  // losses
  double lambda_cos = 1.0;
  double lambda_c = 0.07;
  double alpha = 0.5;
  bool lc_gt_only = false;

  // transfer
  std::string transfer_mode = "RKT";  // GKT | RKT

  // optimization
  double lr = 1e-3;
  double weight_decay = 5e-4;
  double momentum = 0.9;
  std::size_t epochs = 0;  // required for training; no paper-stated default exists
  std::size_t warmup_epochs = 1;
  std::uint64_t seed = 0;

  // evaluation
  double gt_sigma = 3.0;

  // output
  std::string out_dir = "out";

  // affordance vocabulary; filled from the dataset at train time and carried
  // inside checkpoints so `predict` can resolve names
  std::vector<std::string> vocabulary;

  void validate() const {
    if (setting != "seen" && setting != "unseen")
      throw ConfigError("data.setting must be seen or unseen");
    if (batch_size < 1) throw ConfigError("data.batch_size must be >= 1");
    if (n_exo < 1) throw ConfigError("data.N must be >= 1");
    for (double s : norm_std)
      if (s <= 0.0) throw ConfigError("data.norm_std entries must be positive");
    if (backbone_kind != "synthetic" && backbone_kind != "vit-adapter")
      throw ConfigError("backbone.kind must be synthetic or vit-adapter");
    if (patch_size < 1) throw ConfigError("backbone.patch_size must be >= 1");
    if (feature_dim < 2) throw ConfigError("backbone.feature_dim must be >= 2");
    if (tau <= 0.0 || tau >= 1.0) throw ConfigError("extract.tau must lie in (0, 1)");
    if (K < 1) throw ConfigError("select.K must be >= 1");
    if (mu < 0.0 || mu > 1.0) throw ConfigError("select.mu must lie in [0, 1]");
    if (lambda_cos < 0.0 || lambda_c < 0.0)
      throw ConfigError("loss weights must be non-negative");
    if (alpha < 0.0 || alpha >= 1.0) throw ConfigError("loss.alpha must lie in [0, 1)");
    if (transfer_mode != "GKT" && transfer_mode != "RKT")
      throw ConfigError("transfer.mode must be GKT or RKT");
    if (lr <= 0.0) throw ConfigError("train.lr must be positive");
    if (weight_decay < 0.0) throw ConfigError("train.weight_decay must be non-negative");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum must lie in [0, 1)");
    if (gt_sigma <= 0.0) throw ConfigError("gt.sigma must be positive");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["data"] = {{"root", data_root},   {"setting", setting},
                 {"batch_size", batch_size}, {"N", n_exo},
                 {"norm_mean", norm_mean},   {"norm_std", norm_std}};
    j["backbone"] = {{"kind", backbone_kind},
                     {"seed", backbone_seed},
                     {"feature_dim", feature_dim},
                     {"patch_size", patch_size},
                     {"layout", backbone_layout}};
    j["cam"] = {{"shared", cam_shared}, {"hidden_dim", cam_hidden}};
    j["extract"] = {{"tau", tau}};
    j["select"] = {{"K", K}, {"mu", mu}, {"enabled", select_enabled}};
    j["loss"] = {{"lambda_cos", lambda_cos},
                 {"lambda_c", lambda_c},
                 {"alpha", alpha},
                 {"lc_gt_only", lc_gt_only}};
    j["transfer"] = {{"mode", transfer_mode}};
    j["train"] = {{"lr", lr},
                  {"weight_decay", weight_decay},
                  {"momentum", momentum},
                  {"epochs", epochs},
                  {"warmup_epochs", warmup_epochs},
                  {"seed", seed}};
    j["gt"] = {{"sigma", gt_sigma}};
    j["out"] = {{"dir", out_dir}};
    j["vocab"] = vocabulary;
    return j;
  }

  static Config from_json(const nlohmann::json& j) {
    Config c;
    auto get = [&](const char* section, const char* key, auto& target) {
      if (j.contains(section) && j[section].contains(key)) j[section][key].get_to(target);
    };
    get("data", "root", c.data_root);
    get("data", "setting", c.setting);
    get("data", "batch_size", c.batch_size);
    get("data", "N", c.n_exo);
    get("data", "norm_mean", c.norm_mean);
    get("data", "norm_std", c.norm_std);
    get("backbone", "kind", c.backbone_kind);
    get("backbone", "seed", c.backbone_seed);
    get("backbone", "feature_dim", c.feature_dim);
    get("backbone", "patch_size", c.patch_size);
    get("backbone", "layout", c.backbone_layout);
    get("cam", "shared", c.cam_shared);
    get("cam", "hidden_dim", c.cam_hidden);
    get("extract", "tau", c.tau);
    get("select", "K", c.K);
    get("select", "mu", c.mu);
    get("select", "enabled", c.select_enabled);
    get("loss", "lambda_cos", c.lambda_cos);
    get("loss", "lambda_c", c.lambda_c);
    get("loss", "alpha", c.alpha);
    get("loss", "lc_gt_only", c.lc_gt_only);
    get("transfer", "mode", c.transfer_mode);
    get("train", "lr", c.lr);
    get("train", "weight_decay", c.weight_decay);
    get("train", "momentum", c.momentum);
    get("train", "epochs", c.epochs);
    get("train", "warmup_epochs", c.warmup_epochs);
    get("train", "seed", c.seed);
    get("gt", "sigma", c.gt_sigma);
    get("out", "dir", c.out_dir);
    if (j.contains("vocab")) j["vocab"].get_to(c.vocabulary);
    return c;
  }

  static Config load_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file '" + path + "'");
    nlohmann::json j;
    try {
      f >> j;
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file '" + path + "': " + e.what());
    }
    return from_json(j);
  }

  void save_file(const std::string& path) const {
    std::ofstream f(path);
    if (!f) throw DataError("cannot write config to '" + path + "'");
    f << to_json().dump(2) << "\n";
  }
};

}  // namespace locate
