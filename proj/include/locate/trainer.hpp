#pragma once

#include <cmath>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "locate/archive.hpp"
#include "locate/backbone.hpp"
#include "locate/cam_head.hpp"
#include "locate/config.hpp"
#include "locate/dataset.hpp"
#include "locate/metrics.hpp"
#include "locate/part_select.hpp"
#include "locate/region_extract.hpp"
#include "locate/transfer_loss.hpp"

#include "json.hpp"

namespace locate {

// End-to-end optimization: exocentric branch -> region harvesting ->
// PartSelect -> egocentric supervision, one SGD (momentum 0.9) update per
// step over the CAM head parameters only. The backbone stays frozen.

constexpr std::int64_t kCheckpointVersion = 1;

struct Checkpoint {
  std::int64_t version = kCheckpointVersion;
  CamHeadParams params;                     // exocentric / shared head
  std::optional<CamHeadParams> params_ego;  // present when cam.shared = false
  std::string config_json;
  std::int64_t epoch = 0;
  std::string rng_state;

  const CamHeadParams& ego_side() const { return params_ego ? *params_ego : params; }
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  Archive a;
  a.put_i64("meta.version", ck.version);
  a.put_bytes("config.json", ck.config_json);
  a.put_i64("epoch", ck.epoch);
  a.put_bytes("rng.state", ck.rng_state);
  a.put_tensor("cam.projection", ck.params.projection);
  a.put_tensor("cam.conv1", ck.params.conv1);
  a.put_tensor("cam.conv2", ck.params.conv2);
  a.put_tensor("cam.class_conv", ck.params.class_conv);
  if (ck.params_ego) {
    a.put_tensor("cam_ego.projection", ck.params_ego->projection);
    a.put_tensor("cam_ego.conv1", ck.params_ego->conv1);
    a.put_tensor("cam_ego.conv2", ck.params_ego->conv2);
    a.put_tensor("cam_ego.class_conv", ck.params_ego->class_conv);
  }
  a.save(path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  const Archive a = Archive::load(path);
  Checkpoint ck;
  ck.version = a.get_i64("meta.version");
  if (ck.version != kCheckpointVersion)
    throw DataError("checkpoint '" + path + "' has version " + std::to_string(ck.version) +
                    " but this build reads version " + std::to_string(kCheckpointVersion));
  ck.config_json = a.get_bytes("config.json");
  ck.epoch = a.get_i64("epoch");
  ck.rng_state = a.get_bytes("rng.state");
  ck.params.projection = a.get_tensor("cam.projection");
  ck.params.conv1 = a.get_tensor("cam.conv1");
  ck.params.conv2 = a.get_tensor("cam.conv2");
  ck.params.class_conv = a.get_tensor("cam.class_conv");
  if (a.has("cam_ego.projection")) {
    CamHeadParams ego;
    ego.projection = a.get_tensor("cam_ego.projection");
    ego.conv1 = a.get_tensor("cam_ego.conv1");
    ego.conv2 = a.get_tensor("cam_ego.conv2");
    ego.class_conv = a.get_tensor("cam_ego.class_conv");
    ck.params_ego = std::move(ego);
  }
  return ck;
}

class Trainer {
 public:
  Trainer(std::shared_ptr<Backbone> backbone, Config cfg, std::size_t class_count)
      : backbone_(std::move(backbone)), cfg_(std::move(cfg)) {
    cfg_.validate();
    require(class_count >= 1, "trainer needs at least one affordance class");
    const std::size_t d = backbone_->feature_dim();
    const std::size_t dp = cfg_.cam_hidden ? cfg_.cam_hidden : d;
    rng_ = make_rng(mix_seed(cfg_.seed, "trainer"));
    params_ = CamHeadParams::init(d, dp, class_count, rng_);
    if (!cfg_.cam_shared) params_ego_ = CamHeadParams::init(d, dp, class_count, rng_);
    m_ = CamHeadParams::zeros_like(params_);
    if (params_ego_) m_ego_ = CamHeadParams::zeros_like(*params_ego_);
  }

  const Config& config() const { return cfg_; }
  const CamHeadParams& exo_params() const { return params_; }
  const CamHeadParams& ego_params() const { return params_ego_ ? *params_ego_ : params_; }
  const Backbone& backbone() const { return *backbone_; }

  void set_epoch(std::size_t e) { epoch_ = e; }
  std::size_t epoch() const { return epoch_; }
  std::size_t step_count() const { return step_; }
  bool in_warmup() const { return epoch_ < cfg_.warmup_epochs; }

  LossReport train_step(const Batch& batch) {
    require(!batch.rows.empty(), "train_step on an empty batch");
    const std::size_t batch_n = batch.rows.size();
    const bool warmup = in_warmup();
    const LossWeights weights{cfg_.lambda_cos, cfg_.lambda_c, cfg_.alpha};
    const bool want_cos = !warmup && cfg_.lambda_cos > 0.0;

    CamHeadGrads g_exo = CamHeadParams::zeros_like(params_);
    CamHeadGrads g_ego = CamHeadParams::zeros_like(ego_params());

    struct RowCtx {
      FeatureMap ego_fm;
      CamForward ego_fwd;
      Tensor dmaps;  // accumulated dTotal/dmaps for the ego branch
      MaskedPool pool;
      std::vector<double> dcos;  // dL_cos/df_ego, unscaled
      bool has_cos = false;
      double cos_loss = 0.0;
    };
    std::vector<RowCtx> ctxs(batch_n);

    double cls_exo_sum = 0.0, cls_ego_sum = 0.0, lc_sum = 0.0;
    std::size_t exo_count = 0;

    for (std::size_t i = 0; i < batch_n; ++i) {
      const BatchRow& row = batch.rows[i];
      RowCtx& ctx = ctxs[i];
      const std::size_t t = row.label;

      // --- egocentric branch
      ctx.ego_fm = backbone_->extract_features(row.ego);
      ctx.ego_fwd = cam_forward(ctx.ego_fm, ego_params());
      cls_ego_sum += classification_loss(ctx.ego_fwd.scores, t);
      const std::size_t C = ctx.ego_fwd.maps.class_count;
      const std::size_t H = ctx.ego_fm.patch_rows, W = ctx.ego_fm.patch_cols;
      const double hw = static_cast<double>(H * W);
      const auto dlogits = classification_loss_grad(ctx.ego_fwd.scores, t);
      ctx.dmaps = Tensor({C, H, W});
      for (std::size_t c = 0; c < C; ++c) {
        const double v = dlogits[c] / (hw * static_cast<double>(batch_n));
        double* p = ctx.dmaps.data() + c * H * W;
        for (std::size_t s = 0; s < H * W; ++s) p[s] = v;
      }
      if (cfg_.lambda_c > 0.0) {
        Tensor dlc;
        const auto only = cfg_.lc_gt_only ? std::optional<std::size_t>(t) : std::nullopt;
        lc_sum += concentration_loss_grad(ctx.ego_fwd.maps, dlc, only);
        const double scale = cfg_.lambda_c / static_cast<double>(batch_n);
        for (std::size_t s = 0; s < dlc.size(); ++s) ctx.dmaps[s] += scale * dlc[s];
      } else {
        lc_sum += concentration_loss(ctx.ego_fwd.maps,
                                     cfg_.lc_gt_only ? std::optional<std::size_t>(row.label)
                                                     : std::nullopt);
      }

      // --- exocentric branch (classification + harvesting inputs)
      const bool keep_exo = want_cos;
      std::vector<FeatureMap> exo_fms;
      std::vector<LocalizationMaps> exo_maps;
      for (const Tensor& exo_img : row.exo) {
        FeatureMap fm = backbone_->extract_features(exo_img);
        CamForward fwd = cam_forward(fm, params_);
        cls_exo_sum += classification_loss(fwd.scores, t);
        ++exo_count;
        const auto dl = classification_loss_grad(fwd.scores, t);
        Tensor dmaps_exo({C, H, W});
        const double denom =
            hw * static_cast<double>(batch_n) * static_cast<double>(row.exo.size());
        for (std::size_t c = 0; c < C; ++c) {
          const double v = dl[c] / denom;
          double* p = dmaps_exo.data() + c * H * W;
          for (std::size_t s = 0; s < H * W; ++s) p[s] = v;
        }
        cam_backward(fm, params_, fwd, dmaps_exo, g_exo);
        if (keep_exo) {
          exo_fms.push_back(std::move(fm));
          exo_maps.push_back(std::move(fwd.maps));
        }
      }

      // --- source embedding for the transfer loss
      if (want_cos && !exo_fms.empty()) {
        std::optional<std::vector<double>> f_src = source_embedding(exo_fms, exo_maps, t,
                                                                    row.ego, ctx.ego_fm, i);
        if (f_src) {
          ctx.pool = masked_average_pool(ctx.ego_fm, ctx.ego_fwd.maps, t);
          if (!ctx.pool.zero_mass) {
            const CosineMargin cm = cosine_margin_loss(*f_src, ctx.pool.embedding, cfg_.alpha);
            if (!cm.skipped) {
              ctx.has_cos = true;
              ctx.cos_loss = cm.loss;
              ctx.dcos = cm.d_f_ego;  // prototype side is detached
            }
          }
        }
      }
    }

    // --- cosine term is averaged over the rows where a source was available
    std::size_t n_cos = 0;
    double cos_sum = 0.0;
    for (const RowCtx& c : ctxs)
      if (c.has_cos) {
        ++n_cos;
        cos_sum += c.cos_loss;
      }
    for (std::size_t i = 0; i < batch_n; ++i) {
      RowCtx& ctx = ctxs[i];
      if (ctx.has_cos) {
        std::vector<double> scaled = ctx.dcos;
        const double k = cfg_.lambda_cos / static_cast<double>(n_cos);
        for (double& v : scaled) v *= k;
        const Tensor d_raw = masked_average_pool_vjp(ctx.pool, ctx.ego_fm, scaled);
        const std::size_t t = batch.rows[i].label;
        const std::size_t hw = ctx.ego_fm.patch_rows * ctx.ego_fm.patch_cols;
        double* p = ctx.dmaps.data() + t * hw;
        for (std::size_t s = 0; s < hw; ++s) p[s] += d_raw[s];
      }
      cam_backward(ctx.ego_fm, ego_params(), ctx.ego_fwd, ctx.dmaps,
                   params_ego_ ? g_ego : g_exo);
    }

    const double l_cls_exo = exo_count ? cls_exo_sum / static_cast<double>(exo_count) : 0.0;
    const double l_cls_ego = cls_ego_sum / static_cast<double>(batch_n);
    const double l_c = lc_sum / static_cast<double>(batch_n);
    const std::optional<double> l_cos =
        n_cos ? std::optional<double>(cos_sum / static_cast<double>(n_cos)) : std::nullopt;
    const LossReport report = total_loss(l_cls_exo, l_cls_ego, l_cos, l_c, weights, warmup);

    sgd_update(params_, g_exo, m_);
    if (params_ego_) sgd_update(*params_ego_, g_ego, m_ego_);
    ++step_;
    return report;
  }

  Checkpoint make_checkpoint() const {
    Checkpoint ck;
    ck.params = params_;
    ck.params_ego = params_ego_;
    ck.config_json = cfg_.to_json().dump();
    ck.epoch = static_cast<std::int64_t>(epoch_);
    std::ostringstream ss;
    ss << rng_;
    ck.rng_state = ss.str();
    return ck;
  }

  void restore(const Checkpoint& ck) {
    params_ = ck.params;
    params_ego_ = ck.params_ego;
    epoch_ = static_cast<std::size_t>(ck.epoch);
    std::istringstream ss(ck.rng_state);
    ss >> rng_;
    m_ = CamHeadParams::zeros_like(params_);
    if (params_ego_) m_ego_ = CamHeadParams::zeros_like(*params_ego_);
  }

 private:
  std::optional<std::vector<double>> source_embedding(const std::vector<FeatureMap>& exo_fms,
                                                      const std::vector<LocalizationMaps>& exo_maps,
                                                      std::size_t t, const Tensor& ego_image,
                                                      const FeatureMap& ego_fm, std::size_t row) {
    const std::size_t D = backbone_->feature_dim();
    if (cfg_.transfer_mode == "GKT") {
      // image-level pooled exocentric embedding (mean over images and space)
      std::vector<double> mean(D, 0.0);
      for (const FeatureMap& fm : exo_fms) {
        const std::size_t hw = fm.patch_rows * fm.patch_cols;
        for (std::size_t d = 0; d < D; ++d) {
          const double* p = fm.data.data() + d * hw;
          double s = 0.0;
          for (std::size_t j = 0; j < hw; ++j) s += p[j];
          mean[d] += s / static_cast<double>(hw);
        }
      }
      for (double& v : mean) v /= static_cast<double>(exo_fms.size());
      return mean;
    }
    // RKT: harvest embeddings above tau from the exocentric localization maps
    const EmbeddingBag bag = extract_interaction_embeddings(exo_fms, exo_maps, t, cfg_.tau);
    if (bag.empty()) return std::nullopt;
    if (!cfg_.select_enabled) {
      std::vector<double> mean(D, 0.0);
      for (std::size_t i = 0; i < bag.count(); ++i)
        for (std::size_t d = 0; d < D; ++d) mean[d] += bag.embeddings(i, d);
      for (double& v : mean) v /= static_cast<double>(bag.count());
      return mean;
    }
    const auto protos =
        cluster_prototypes(bag, cfg_.K, mix_seed(cfg_.seed, "kmeans", step_, row));
    if (!protos) return std::nullopt;
    const SimilarityMaps sims = similarity_maps(*protos, ego_fm);
    const SaliencyMask saliency = backbone_->extract_saliency(ego_image);
    const SelectionResult sel = select_object_part(*protos, sims, saliency, cfg_.mu);
    if (!sel.selected) return std::nullopt;
    return sel.selected;
  }

  static void sgd_axpy(Tensor& p, const Tensor& g, Tensor& m, double lr, double wd,
                       double momentum) {
    for (std::size_t i = 0; i < p.size(); ++i) {
      const double grad = g[i] + wd * p[i];
      m[i] = momentum * m[i] + grad;
      p[i] -= lr * m[i];
    }
  }

  void sgd_update(CamHeadParams& p, const CamHeadGrads& g, CamHeadParams& m) {
    sgd_axpy(p.projection, g.projection, m.projection, cfg_.lr, cfg_.weight_decay, cfg_.momentum);
    sgd_axpy(p.conv1, g.conv1, m.conv1, cfg_.lr, cfg_.weight_decay, cfg_.momentum);
    sgd_axpy(p.conv2, g.conv2, m.conv2, cfg_.lr, cfg_.weight_decay, cfg_.momentum);
    sgd_axpy(p.class_conv, g.class_conv, m.class_conv, cfg_.lr, cfg_.weight_decay,
             cfg_.momentum);
  }

  std::shared_ptr<Backbone> backbone_;
  Config cfg_;
  std::mt19937_64 rng_;
  CamHeadParams params_;
  std::optional<CamHeadParams> params_ego_;
  CamHeadParams m_;       // momentum buffers
  CamHeadParams m_ego_;
  std::size_t epoch_ = 0;
  std::size_t step_ = 0;
};

// --- evaluation ---------------------------------------------------------------

/// Predict at the ground-truth label for every test record and score against
/// the stored ground truth. Records without usable GT are skipped with a
/// warning and counted. Aggregates are per-image means.
inline MetricReport evaluate_dataset(const Backbone& backbone, const CamHeadParams& ego_params,
                                     const DatasetIndex& index, const Config& cfg) {
  namespace fs = std::filesystem;
  MetricReport report;
  for (const SampleRecord* rec : index.test_records()) {
    if (rec->gt_path.empty()) {
      std::cerr << "warning: no ground truth for '" << rec->ego_path << "', skipping\n";
      ++report.skipped;
      continue;
    }
    try {
      const Tensor orig = load_ppm(rec->ego_path);
      const std::size_t oh = orig.dim(1), ow = orig.dim(2);
      const Tensor img = augment_eval(orig, cfg.norm_mean, cfg.norm_std);
      const FeatureMap fm = backbone.extract_features(img);
      const CamForward fwd = cam_forward(fm, ego_params);
      const Tensor pred = predict_affordance(fwd.maps, rec->affordance, kCropTo, kCropTo);

      const GroundTruthSource gt = load_gt(rec->gt_path);
      GroundTruthHeatmap heat;
      if (gt.density) {
        heat.density = transform_density_for_eval(*gt.density);
        heat.fixation_points = transform_points_for_eval(gt.points, oh, ow);
        if (heat.fixation_points.empty()) {
          // pre-rendered GT without points: treat above-mean density cells as
          // fixations (same binarization rule used across the pipeline)
          const Mask2D fix = mean_threshold(heat.density);
          for (std::size_t r = 0; r < fix.rows; ++r)
            for (std::size_t c = 0; c < fix.cols; ++c)
              if (fix.at(r, c))
                heat.fixation_points.push_back({static_cast<double>(c), static_cast<double>(r)});
        }
      } else {
        const auto pts = transform_points_for_eval(gt.points, oh, ow);
        if (pts.empty()) {
          std::cerr << "warning: ground truth for '" << rec->ego_path
                    << "' lies outside the eval crop, skipping\n";
          ++report.skipped;
          continue;
        }
        heat = build_gt_heatmap(pts, kCropTo, kCropTo, cfg.gt_sigma);
      }

      MetricRow row;
      row.image = fs::proximate(rec->ego_path, index.root).generic_string();
      row.affordance = rec->affordance_name;
      row.metrics = evaluate_heatmap(pred, heat);
      report.rows.push_back(std::move(row));
    } catch (const DataError& e) {
      std::cerr << "warning: skipping '" << rec->ego_path << "': " << e.what() << "\n";
      ++report.skipped;
    }
  }
  return report;
}

// --- training driver ------------------------------------------------------------

struct TrainRun {
  std::vector<LossReport> reports;
  Checkpoint checkpoint;
  Config resolved;  // with the vocabulary filled in
};

/// Index, batch, and optimize for cfg.epochs epochs (or max_steps steps if
/// nonzero). Writes one JSONL object per step to `log` when provided.
inline TrainRun run_training(Config cfg, std::shared_ptr<Backbone> backbone = nullptr,
                             std::ostream* log = nullptr, std::size_t max_steps = 0) {
  cfg.validate();
  if (cfg.epochs < 1)
    throw ConfigError("train.epochs must be set to a positive value (it has no default)");
  const DatasetIndex index = index_dataset(cfg.data_root, cfg.setting);
  cfg.vocabulary = index.vocabulary;
  if (!backbone) {
    BackboneConfig bc;
    bc.patch_size = cfg.patch_size;
    bc.feature_dim = cfg.feature_dim;
    backbone = make_backbone(cfg.backbone_kind, cfg.backbone_seed, bc, cfg.backbone_layout);
  }
  BatchLoader loader(index,
                     {cfg.batch_size, cfg.n_exo, cfg.seed, cfg.norm_mean, cfg.norm_std});
  if (loader.batches_per_epoch() == 0)
    throw ConfigError("batch_size " + std::to_string(cfg.batch_size) +
                      " exceeds the number of train records; no full batch can be formed");
  Trainer trainer(backbone, cfg, index.class_count());

  TrainRun run;
  run.resolved = cfg;
  bool done = false;
  for (std::size_t e = 0; e < cfg.epochs && !done; ++e) {
    trainer.set_epoch(e);
    for (std::size_t b = 0; b < loader.batches_per_epoch(); ++b) {
      const Batch batch = loader.load(e, b);
      const LossReport r = trainer.train_step(batch);
      if (log) {
        nlohmann::json j = {{"step", run.reports.size()}, {"epoch", e},
                            {"l_cls_exo", r.l_cls_exo},   {"l_cls_ego", r.l_cls_ego},
                            {"l_cos", r.l_cos},           {"l_c", r.l_c},
                            {"total", r.total},           {"cos_skipped", r.cos_skipped}};
        (*log) << j.dump() << "\n";
      }
      run.reports.push_back(r);
      if (max_steps && run.reports.size() >= max_steps) {
        done = true;
        break;
      }
    }
  }
  run.checkpoint = trainer.make_checkpoint();
  return run;
}

}  // namespace locate
