#include "attnflow/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>

#include "attnflow/error.hpp"
#include "attnflow/metrics.hpp"

namespace attnflow {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr const char* kCheckpointKind = "checkpoint";

std::string mode_name(TrainMode m) { return m == TrainMode::images ? "images" : "embeddings"; }

TrainMode parse_mode(const std::string& s) {
  if (s == "images") return TrainMode::images;
  if (s == "embeddings") return TrainMode::embeddings;
  throw ConfigError("unknown data.mode '" + s + "' (expected images or embeddings)");
}

std::string selection_name(Selection s) { return s == Selection::test ? "test" : "holdout"; }

Selection parse_selection(const std::string& s) {
  if (s == "test") return Selection::test;
  if (s == "holdout") return Selection::holdout;
  throw ConfigError("unknown train.selection '" + s + "' (expected test or holdout)");
}

double mean_of(const std::vector<Real>& v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

Real log_normaliser(std::size_t dim) {
  return 0.5 * static_cast<Real>(dim) * std::log(2.0 * std::numbers::pi);
}

std::string rng_digest(std::uint64_t run_seed, std::size_t epoch) {
  const std::string s = std::to_string(run_seed) + "/" + std::to_string(epoch);
  return sha256_hex(std::span<const std::uint8_t>(
      reinterpret_cast<const std::uint8_t*>(s.data()), s.size()));
}

std::string perm_name(std::size_t block) {
  return "flow.block" + std::to_string(block) + ".perm";
}

using Clock = std::chrono::steady_clock;

/// Mode-specific pieces of the training loop.
struct TrainingTask {
  std::size_t train_count = 0;
  std::size_t embed_dim = 0;
  const Archive* pretrained = nullptr;
  // Mean loss over the given training items; updates gradients when `backprop`.
  std::function<Real(Model&, const std::vector<std::size_t>&, std::uint64_t sample_seed_root,
                     bool backprop)>
      batch_loss;
  // Scores of every test item, in order, plus labels.
  std::function<std::vector<Real>(const Model&)> test_scores;
  std::vector<Label> test_labels;
  std::vector<std::string> test_ids;
};

TrainResult run_training(const TrainConfig& cfg, const TrainingTask& task,
                         const ProgressFn& progress) {
  cfg.validate();
  if (task.train_count == 0) {
    throw ConfigError("training split is empty for category '" + cfg.category + "'");
  }

  std::vector<std::size_t> fit(task.train_count);
  std::iota(fit.begin(), fit.end(), std::size_t{0});
  std::vector<std::size_t> holdout;
  if (cfg.selection == Selection::holdout) {
    Rng rng = make_rng(cfg.seed, "holdout/split");
    std::shuffle(fit.begin(), fit.end(), rng);
    auto n_hold = static_cast<std::size_t>(
        std::lround(cfg.holdout_fraction * static_cast<double>(task.train_count)));
    n_hold = std::clamp<std::size_t>(n_hold, 1, task.train_count - 1);
    holdout.assign(fit.end() - static_cast<std::ptrdiff_t>(n_hold), fit.end());
    fit.resize(task.train_count - n_hold);
    std::sort(fit.begin(), fit.end());
  }

  TrainResult result;
  bool have_best = false;
  double best_metric = -std::numeric_limits<double>::infinity();

  for (std::size_t run = 0; run < cfg.runs; ++run) {
    const std::uint64_t run_seed = derive_seed(cfg.seed, "run/" + std::to_string(run));
    Model model(cfg, task.embed_dim, task.pretrained, run_seed);
    Adam adam(model.trainable_params(cfg.finetune_backbone), cfg.optimizer);
    const auto start = Clock::now();
    auto elapsed = [&] {
      return std::chrono::duration<double>(Clock::now() - start).count();
    };

    for (std::size_t epoch = 0; epoch <= cfg.epochs; ++epoch) {
      const std::uint64_t epoch_seed =
          derive_seed(run_seed, "epoch/" + std::to_string(epoch));
      std::vector<std::size_t> order = fit;
      {
        Rng rng = make_rng(epoch_seed, "order");
        std::shuffle(order.begin(), order.end(), rng);
      }

      double loss_sum = 0.0;
      const bool update = epoch > 0;
      for (std::size_t b = 0; b * cfg.batch_size < order.size(); ++b) {
        const auto first = order.begin() + static_cast<std::ptrdiff_t>(b * cfg.batch_size);
        const auto last = order.begin() + static_cast<std::ptrdiff_t>(
                                              std::min(order.size(), (b + 1) * cfg.batch_size));
        const std::vector<std::size_t> batch(first, last);
        Real loss = 0.0;
        try {
          if (update) adam.zero_grad();
          loss = task.batch_loss(model, batch, epoch_seed, update);
        } catch (const NumericalError& e) {
          throw NumericalError("training aborted: run " + std::to_string(run) + ", epoch " +
                               std::to_string(epoch) + ", batch " + std::to_string(b) + ": " +
                               e.what());
        }
        if (!std::isfinite(loss)) {
          throw NumericalError("training aborted: non-finite loss at run " +
                               std::to_string(run) + ", epoch " + std::to_string(epoch) +
                               ", batch " + std::to_string(b) + ": latent of block " +
                               std::to_string(cfg.flow.blocks - 1) + " overflows the loss");
        }
        if (update) adam.step();
        loss_sum += loss * static_cast<double>(batch.size());
      }
      EpochMetrics train_row{cfg.category, run, epoch, "train", std::nullopt,
                             loss_sum / static_cast<double>(order.size()) +
                                 log_normaliser(task.embed_dim),
                             std::nullopt,
                             elapsed()};
      result.metrics.push_back(train_row);
      if (progress) progress(train_row);

      std::vector<Real> scores = task.test_scores(model);
      std::vector<Real> flawless, anomalous;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        (task.test_labels[i] == Label::flawless ? flawless : anomalous).push_back(scores[i]);
      }
      const double epoch_auroc = auroc(flawless, anomalous);
      EpochMetrics test_row{cfg.category, run, epoch, "test", epoch_auroc, mean_of(flawless),
                            mean_of(anomalous), elapsed()};
      result.metrics.push_back(test_row);
      if (progress) progress(test_row);

      double metric = epoch_auroc;
      if (cfg.selection == Selection::holdout) {
        const Real hold_loss = task.batch_loss(model, holdout, epoch_seed, false);
        const Real hold_nll = hold_loss + log_normaliser(task.embed_dim);
        EpochMetrics hold_row{cfg.category, run, epoch, "holdout", std::nullopt, hold_nll,
                              std::nullopt, elapsed()};
        result.metrics.push_back(hold_row);
        if (progress) progress(hold_row);
        metric = -hold_nll;
      }

      if (!have_best || metric > best_metric) {
        have_best = true;
        best_metric = metric;
        Checkpoint& best = result.best;
        best.config = cfg;
        best.model = model;
        best.model.set_grad_enabled(false);
        best.run_id = run;
        best.epoch = epoch;
        best.auroc = epoch_auroc;
        best.rng_digest = rng_digest(run_seed, epoch);
        best.probe_id = task.test_ids.empty() ? std::string{} : task.test_ids.front();
        best.probe_score = scores.empty() ? 0.0 : scores.front();
      }
    }
  }
  for (auto& p : result.best.model.flow().params()) p->zero_grad();
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (runs < 1) throw ConfigError("train.runs must be >= 1");
  if (batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(optimizer.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (n_test_transforms < 1) throw ConfigError("train.n_test_transforms must be >= 1");
  if (selection == Selection::holdout &&
      !(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw ConfigError("train.holdout_fraction must lie in (0, 1)");
  }
  if (mode == TrainMode::images) backbone.validate();
  FlowConfig f = flow;
  if (mode == TrainMode::images) f.dim = backbone.embed_dim();
  f.validate();
}

json to_json(const TrainConfig& cfg) {
  const auto& bb = cfg.backbone;
  return json{
      {"data", {{"category", cfg.category}, {"mode", mode_name(cfg.mode)}}},
      {"backbone",
       {{"pretrained_path", bb.pretrained_path},
        {"scales", bb.scales},
        {"channels", bb.channels}}},
      {"attention",
       {{"kind", to_string(bb.attention.kind)},
        {"reduction", bb.attention.reduction},
        {"spatial_kernel", bb.attention.spatial_kernel},
        {"ab_flags", bb.ab_flags},
        {"init_std", bb.attention.init_std},
        {"init_gate_bias", bb.attention.init_gate_bias}}},
      {"flow",
       {{"dim", cfg.flow.dim},
        {"blocks", cfg.flow.blocks},
        {"clamp", cfg.flow.clamp},
        {"hidden_factor", cfg.flow.hidden_factor}}},
      {"train",
       {{"epochs", cfg.epochs},
        {"runs", cfg.runs},
        {"batch_size", cfg.batch_size},
        {"learning_rate", cfg.optimizer.learning_rate},
        {"beta1", cfg.optimizer.beta1},
        {"beta2", cfg.optimizer.beta2},
        {"eps", cfg.optimizer.eps},
        {"weight_decay", cfg.optimizer.weight_decay},
        {"n_test_transforms", cfg.n_test_transforms},
        {"finetune_backbone", cfg.finetune_backbone},
        {"selection", selection_name(cfg.selection)},
        {"holdout_fraction", cfg.holdout_fraction},
        {"saturate_attention", cfg.saturate_attention}}},
      {"run", {{"seed", cfg.seed}}},
  };
}

TrainConfig train_config_from_json(const json& j) {
  try {
    TrainConfig cfg;
    cfg.category = j.at("data").at("category").get<std::string>();
    cfg.mode = parse_mode(j.at("data").at("mode").get<std::string>());
    const auto& b = j.at("backbone");
    cfg.backbone.pretrained_path = b.at("pretrained_path").get<std::string>();
    cfg.backbone.scales = b.at("scales").get<std::vector<int>>();
    cfg.backbone.channels = b.at("channels").get<std::vector<std::size_t>>();
    const auto& a = j.at("attention");
    cfg.backbone.attention.kind = parse_attention_kind(a.at("kind").get<std::string>());
    cfg.backbone.attention.reduction = a.at("reduction").get<int>();
    cfg.backbone.attention.spatial_kernel = a.at("spatial_kernel").get<int>();
    cfg.backbone.ab_flags = a.at("ab_flags").get<std::array<bool, kAttentionSites>>();
    cfg.backbone.attention.init_std = a.at("init_std").get<double>();
    cfg.backbone.attention.init_gate_bias = a.at("init_gate_bias").get<double>();
    const auto& f = j.at("flow");
    cfg.flow.dim = f.at("dim").get<std::size_t>();
    cfg.flow.blocks = f.at("blocks").get<std::size_t>();
    cfg.flow.clamp = f.at("clamp").get<double>();
    cfg.flow.hidden_factor = f.at("hidden_factor").get<std::size_t>();
    const auto& t = j.at("train");
    cfg.epochs = t.at("epochs").get<std::size_t>();
    cfg.runs = t.at("runs").get<std::size_t>();
    cfg.batch_size = t.at("batch_size").get<std::size_t>();
    cfg.optimizer.learning_rate = t.at("learning_rate").get<double>();
    cfg.optimizer.beta1 = t.at("beta1").get<double>();
    cfg.optimizer.beta2 = t.at("beta2").get<double>();
    cfg.optimizer.eps = t.at("eps").get<double>();
    cfg.optimizer.weight_decay = t.at("weight_decay").get<double>();
    cfg.n_test_transforms = t.at("n_test_transforms").get<std::size_t>();
    cfg.finetune_backbone = t.at("finetune_backbone").get<bool>();
    cfg.selection = parse_selection(t.at("selection").get<std::string>());
    cfg.holdout_fraction = t.at("holdout_fraction").get<double>();
    cfg.saturate_attention = t.at("saturate_attention").get<bool>();
    cfg.seed = j.at("run").at("seed").get<std::uint64_t>();
    return cfg;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config snapshot schema error: ") + e.what());
  }
}

Model::Model(const TrainConfig& cfg, std::size_t embed_dim, const Archive* pretrained,
             std::uint64_t run_seed)
    : mode_(cfg.mode) {
  FlowConfig fcfg = cfg.flow;
  if (mode_ == TrainMode::images) {
    if (!pretrained) {
      throw ConfigError("image mode needs pretrained backbone weights");
    }
    backbone_.emplace(cfg.backbone);
    backbone_->load_pretrained(*pretrained);
    Rng rng = make_rng(run_seed, "attention/init");
    backbone_->init_attention(rng);
    if (cfg.saturate_attention) backbone_->saturate_attention();
    fcfg.dim = backbone_->config().embed_dim();
  } else {
    fcfg.dim = embed_dim;
  }
  Rng rng = make_rng(run_seed, "flow/init");
  flow_ = FlowModel(fcfg, rng);
}

Backbone& Model::backbone() {
  if (!backbone_) throw ConfigError("model has no backbone (embedding mode)");
  return *backbone_;
}

const Backbone& Model::backbone() const {
  if (!backbone_) throw ConfigError("model has no backbone (embedding mode)");
  return *backbone_;
}

std::string Model::weights_digest() const {
  return backbone_ ? params_digest(backbone_->conv_params()) : std::string{};
}

ParamList Model::trainable_params(bool finetune_backbone) {
  ParamList out = flow_.params();
  if (backbone_) {
    for (auto* p : backbone_->attention_params()) out.push_back(p);
    if (finetune_backbone) {
      for (auto* p : backbone_->conv_params()) out.push_back(p);
    }
  }
  return out;
}

std::uint64_t scoring_seed(std::uint64_t root) { return derive_seed(root, "score"); }

std::vector<Real> embedding_scores(const Matrix& y, const Model& model) {
  const Vector nll = nll_batch(y, model.flow());
  std::vector<Real> out(static_cast<std::size_t>(nll.size()));
  const Real c = log_normaliser(model.dim());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = nll(static_cast<Eigen::Index>(i)) + c;
  return out;
}

AnomalyScore anomaly_score(const RgbImage& image, const Model& model, std::size_t n,
                           std::uint64_t seed, const std::string& image_id) {
  const Backbone& bb = model.backbone();
  const auto angles = test_transform_angles(n, seed);
  Matrix y(static_cast<Eigen::Index>(model.dim()), static_cast<Eigen::Index>(n));
  for (std::size_t i = 0; i < n; ++i) {
    const auto emb = bb.embed(preprocess(rotate(image, angles[i]), bb.config().scales));
    for (std::size_t k = 0; k < emb.size(); ++k) {
      y(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(i)) = emb[k];
    }
  }
  const auto scores = embedding_scores(y, model);
  return {mean_of(scores), image_id, n};
}

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  Archive a;
  a.kind = kCheckpointKind;
  a.meta = {{"config", to_json(ckpt.config)},
            {"mode", mode_name(ckpt.model.mode())},
            {"flow_dim", ckpt.model.dim()},
            {"run_id", ckpt.run_id},
            {"epoch", ckpt.epoch},
            {"auroc", ckpt.auroc},
            {"rng_digest", ckpt.rng_digest},
            {"weights_digest", ckpt.model.weights_digest()},
            {"probe", {{"id", ckpt.probe_id}, {"score", ckpt.probe_score}}}};
  const auto& blocks = ckpt.model.flow().blocks();
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    const auto& perm = blocks[b].permutation();
    a.add(TensorBlock{perm_name(b), {perm.size()}, std::vector<Real>(perm.begin(), perm.end())});
  }
  for (const auto* p : ckpt.model.flow().params()) a.add(*p);
  if (ckpt.model.has_backbone()) {
    for (const auto* p : ckpt.model.backbone().attention_params()) a.add(*p);
    if (ckpt.config.finetune_backbone) {
      for (const auto* p : ckpt.model.backbone().conv_params()) a.add(*p);
    }
  }
  write_archive(a, path);
}

Checkpoint load_checkpoint(const fs::path& path, const LoadOptions& options) {
  const Archive a = read_archive(path);
  if (a.kind != kCheckpointKind) {
    throw ConfigError(path.string() + " is a '" + a.kind + "' archive, not a checkpoint");
  }
  Checkpoint ckpt;
  const json& m = a.meta;
  std::string stored_digest;
  try {
    ckpt.config = train_config_from_json(m.at("config"));
    ckpt.run_id = m.at("run_id").get<std::size_t>();
    ckpt.epoch = m.at("epoch").get<std::size_t>();
    ckpt.auroc = m.at("auroc").is_number() ? m.at("auroc").get<double>() : 0.0;
    ckpt.rng_digest = m.at("rng_digest").get<std::string>();
    stored_digest = m.at("weights_digest").get<std::string>();
    ckpt.probe_id = m.at("probe").at("id").get<std::string>();
    ckpt.probe_score = m.at("probe").at("score").get<double>();
  } catch (const json::exception& e) {
    throw ConfigError("checkpoint schema error in " + path.string() + ": " + e.what());
  }
  const auto dim = m.value("flow_dim", ckpt.config.flow.dim);

  std::optional<Archive> owned;
  const Archive* weights = options.pretrained;
  const bool images = ckpt.config.mode == TrainMode::images;
  if (images && !weights) {
    owned = load_pretrained_archive(ckpt.config.backbone.pretrained_path);
    weights = &*owned;
  }
  ckpt.model = Model(ckpt.config, dim, weights, ckpt.config.seed);

  try {
    auto& blocks = ckpt.model.flow().blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      const TensorBlock* perm = a.find(perm_name(b));
      if (!perm) throw ConfigError("missing parameter '" + perm_name(b) + "'");
      blocks[b].set_permutation({perm->values.begin(), perm->values.end()});
    }
    for (auto* p : ckpt.model.flow().params()) restore_param(a, *p);
    if (images) {
      Backbone& bb = ckpt.model.backbone();
      for (auto* p : bb.attention_params()) restore_param(a, *p);
      if (ckpt.config.finetune_backbone) {
        for (auto* p : bb.conv_params()) restore_param(a, *p);
      } else if (ckpt.model.weights_digest() != stored_digest) {
        const std::string msg = "pretrained weights digest " + ckpt.model.weights_digest() +
                                " differs from the checkpoint's " + stored_digest;
        if (!options.allow_weights_mismatch) {
          throw ConfigError(msg + " (pass the weights-mismatch override to continue)");
        }
        if (options.warnings) options.warnings->push_back(msg);
      }
    }
  } catch (const ConfigError& e) {
    throw ConfigError("checkpoint schema error in " + path.string() + ": " + e.what());
  }
  return ckpt;
}

void write_metrics_csv(const std::vector<EpochMetrics>& rows, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << kMetricsHeader << "\n";
  out << std::setprecision(17);
  for (const auto& r : rows) {
    out << r.category << "," << r.run_id << "," << r.epoch << "," << r.split << ",";
    if (r.auroc) out << *r.auroc;
    out << "," << r.mean_nll_flawless << ",";
    if (r.mean_nll_anomalous) out << *r.mean_nll_anomalous;
    out << "," << std::fixed << std::setprecision(3) << r.wall_seconds
        << std::defaultfloat << std::setprecision(17) << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

TrainResult train(const Dataset& dataset, const TrainConfig& cfg, const Archive& pretrained,
                  const ProgressFn& progress) {
  if (cfg.mode != TrainMode::images) throw ConfigError("train() expects data.mode = images");
  for (const auto& s : dataset.train) {
    if (s.label != Label::flawless) {
      throw ConfigError("training split contains a non-flawless sample: " + s.path.string());
    }
  }
  std::vector<RgbImage> train_images;
  train_images.reserve(dataset.train.size());
  for (const auto& s : dataset.train) train_images.push_back(s.load());
  std::vector<RgbImage> test_images;
  TrainingTask task;
  for (const auto& s : dataset.test) {
    test_images.push_back(s.load());
    task.test_labels.push_back(s.label);
    task.test_ids.push_back(s.path.string());
  }

  task.train_count = train_images.size();
  task.embed_dim = cfg.backbone.embed_dim();
  task.pretrained = &pretrained;
  const bool finetune = cfg.finetune_backbone;
  task.batch_loss = [&train_images, finetune](Model& model, const std::vector<std::size_t>& batch,
                                              std::uint64_t seed_root, bool backprop) {
    Backbone& bb = model.backbone();
    const bool through_backbone =
        backprop && (finetune || !bb.attention_params().empty());
    const auto& scales = bb.config().scales;
    Matrix y(static_cast<Eigen::Index>(model.dim()), static_cast<Eigen::Index>(batch.size()));
    std::vector<std::vector<ScaleTape>> tapes(through_backbone ? batch.size() : 0);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const std::uint64_t seed = derive_seed(seed_root, "sample/" + std::to_string(batch[i]));
      const auto emb = bb.embed(train_transform(train_images[batch[i]], scales, seed),
                                through_backbone ? &tapes[i] : nullptr);
      y.col(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const Vector>(emb.data(), static_cast<Eigen::Index>(emb.size()));
    }
    if (!backprop) return nll_batch(y, model.flow()).mean();
    Matrix grad_y;
    const Real loss =
        nll_mean_backward(model.flow(), y, through_backbone ? &grad_y : nullptr);
    if (through_backbone) {
      for (std::size_t i = 0; i < batch.size(); ++i) {
        const auto col = grad_y.col(static_cast<Eigen::Index>(i));
        bb.backward(tapes[i], std::span<const Real>(col.data(), static_cast<std::size_t>(col.size())),
                    finetune);
      }
    }
    return loss;
  };
  const std::size_t n_tf = cfg.n_test_transforms;
  const std::uint64_t sseed = scoring_seed(cfg.seed);
  task.test_scores = [&test_images, n_tf, sseed](const Model& model) {
    std::vector<Real> out;
    out.reserve(test_images.size());
    for (const auto& img : test_images) {
      out.push_back(anomaly_score(img, model, n_tf, sseed).value);
    }
    return out;
  };
  return run_training(cfg, task, progress);
}

TrainResult train_embeddings(const EmbeddingSet& data, const TrainConfig& cfg,
                             const ProgressFn& progress) {
  if (cfg.mode != TrainMode::embeddings) {
    throw ConfigError("train_embeddings() expects data.mode = embeddings");
  }
  TrainingTask task;
  task.train_count = static_cast<std::size_t>(data.train.cols());
  task.embed_dim = data.dim();
  task.test_labels = data.test_labels;
  for (Eigen::Index i = 0; i < data.test.cols(); ++i) {
    task.test_ids.push_back("test/" + std::to_string(i));
  }
  task.batch_loss = [&data](Model& model, const std::vector<std::size_t>& batch,
                            std::uint64_t, bool backprop) {
    Matrix y(data.train.rows(), static_cast<Eigen::Index>(batch.size()));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      y.col(static_cast<Eigen::Index>(i)) = data.train.col(static_cast<Eigen::Index>(batch[i]));
    }
    if (!backprop) return nll_batch(y, model.flow()).mean();
    return nll_mean_backward(model.flow(), y);
  };
  task.test_scores = [&data](const Model& model) { return embedding_scores(data.test, model); };
  return run_training(cfg, task, progress);
}

}  // namespace attnflow
