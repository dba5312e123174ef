#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnflow/archive.hpp"
#include "attnflow/backbone.hpp"
#include "attnflow/data.hpp"
#include "attnflow/flow.hpp"
#include "attnflow/optim.hpp"

namespace attnflow {

enum class TrainMode { images, embeddings };
enum class Selection { test, holdout };

struct TrainConfig {
  std::string category;
  TrainMode mode = TrainMode::images;
  BackboneConfig backbone;
  FlowConfig flow;  // dim is taken from the backbone in image mode
  std::size_t epochs = 100;
  std::size_t runs = 2;
  std::size_t batch_size = 24;
  AdamConfig optimizer;
  std::size_t n_test_transforms = 16;
  std::uint64_t seed = 0;
  bool finetune_backbone = false;
  Selection selection = Selection::test;
  double holdout_fraction = 0.2;
  bool saturate_attention = false;  // start every attention gate at ~1

  void validate() const;
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

/// Backbone (image mode only) plus flow, i.e. everything needed to score.
class Model {
 public:
  Model() = default;

  /// Builds a freshly initialised model for one run. Image mode requires the
  /// pretrained conv weights.
  Model(const TrainConfig& cfg, std::size_t embed_dim, const Archive* pretrained,
        std::uint64_t run_seed);

  TrainMode mode() const noexcept { return mode_; }
  std::size_t dim() const noexcept { return flow_.dim(); }
  bool has_backbone() const noexcept { return backbone_.has_value(); }
  Backbone& backbone();
  const Backbone& backbone() const;
  FlowModel& flow() { return flow_; }
  const FlowModel& flow() const { return flow_; }

  /// Content digest of the conv weights ("" without a backbone).
  std::string weights_digest() const;

  ParamList trainable_params(bool finetune_backbone);

  bool grad_enabled() const noexcept { return grad_enabled_; }
  void set_grad_enabled(bool on) noexcept { grad_enabled_ = on; }

 private:
  TrainMode mode_ = TrainMode::embeddings;
  std::optional<Backbone> backbone_;
  FlowModel flow_;
  bool grad_enabled_ = false;
};

struct AnomalyScore {
  Real value = 0.0;  // mean negative log-likelihood; higher is more anomalous
  std::string image_id;
  std::size_t n_transforms = 0;
};

/// Mean of -log p(y) over the n test-time rotations of the image.
AnomalyScore anomaly_score(const RgbImage& image, const Model& model, std::size_t n,
                           std::uint64_t seed, const std::string& image_id = {});

/// -log p(y) for embeddings given directly, one score per column.
std::vector<Real> embedding_scores(const Matrix& y, const Model& model);

/// Seed used for test-time transform angles under a root seed.
std::uint64_t scoring_seed(std::uint64_t root);

struct Checkpoint {
  TrainConfig config;
  Model model;
  std::size_t run_id = 0;
  std::size_t epoch = 0;
  double auroc = 0.0;
  std::string rng_digest;
  std::string probe_id;  // first test item; its score is stored for reload checks
  Real probe_score = 0.0;
};

struct LoadOptions {
  const Archive* pretrained = nullptr;  // default: config's backbone.pretrained_path
  bool allow_weights_mismatch = false;
  std::vector<std::string>* warnings = nullptr;
};

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);

/// Errors: IoError for unreadable/corrupt files, ConfigError for a newer format
/// version, missing parameter blocks (schema) or a conv-weight digest mismatch
/// (downgraded to a warning by allow_weights_mismatch).
Checkpoint load_checkpoint(const std::filesystem::path& path, const LoadOptions& options = {});

struct EpochMetrics {
  std::string category;
  std::size_t run_id = 0;
  std::size_t epoch = 0;
  std::string split;  // train | test | holdout
  std::optional<double> auroc;
  double mean_nll_flawless = 0.0;
  std::optional<double> mean_nll_anomalous;
  double wall_seconds = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "category,run_id,epoch,split,auroc,mean_nll_flawless,mean_nll_anomalous,wall_seconds";

void write_metrics_csv(const std::vector<EpochMetrics>& rows, const std::filesystem::path& path);

struct TrainResult {
  Checkpoint best;
  std::vector<EpochMetrics> metrics;
};

using ProgressFn = std::function<void(const EpochMetrics&)>;

/// Maximum-likelihood training on flawless images with the backbone's conv
/// weights frozen (unless finetune_backbone). Every epoch is evaluated; the
/// best (run, epoch) by test AUROC, or by held-out NLL, is returned.
TrainResult train(const Dataset& dataset, const TrainConfig& cfg, const Archive& pretrained,
                  const ProgressFn& progress = {});

/// Flow-only training on precomputed embeddings.
TrainResult train_embeddings(const EmbeddingSet& data, const TrainConfig& cfg,
                             const ProgressFn& progress = {});

}  // namespace attnflow
