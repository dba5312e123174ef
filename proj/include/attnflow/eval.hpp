#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "attnflow/data.hpp"
#include "attnflow/trainer.hpp"

namespace attnflow {

struct ScoredImage {
  std::string image_path;
  Label label = Label::flawless;
  Real score = 0.0;
};

struct CategoryEvaluation {
  std::string category;
  double auroc = 0.0;
  std::vector<ScoredImage> scores;  // test split order
};

using Scorer = std::function<Real(const ImageSample&)>;

/// Scores every test image with `scorer` and computes the AUROC. A test split
/// without both classes is a MetricError.
CategoryEvaluation evaluate_category(const Dataset& dataset, const Scorer& scorer);

/// Scores with anomaly_score under the checkpoint's model.
CategoryEvaluation evaluate_category(const Checkpoint& ckpt, const Dataset& dataset,
                                     std::size_t n_transforms, std::uint64_t seed);

/// Per-image CSV with header `image_path,label,score`.
void write_scores_csv(const CategoryEvaluation& eval, const std::filesystem::path& path);

struct ReportRow {
  std::string category;
  std::string method;
  double auroc_percent = 0.0;
};

struct EvalReport {
  std::vector<ReportRow> rows;
  nlohmann::json metadata = nlohmann::json::object();  // seeds, checkpoint digests
};

inline constexpr const char* kAverageCategory = "average";

/// Arithmetic mean of a method's category rows.
double average_percent(const std::vector<ReportRow>& rows, const std::string& method);

struct RenderedReport {
  std::string table;  // aligned text, best value per row marked with '*'
  std::string csv;    // `category,method,auroc_percent`, average rows included
  int exit_code = 0;  // 1 when there are no rows
};

RenderedReport render_report(const std::vector<EvalReport>& reports);

using AbFlags = std::array<bool, kAttentionSites>;

/// The eight AB1..AB3 subsets in reporting order: none, single blocks, pairs,
/// then all three.
std::vector<AbFlags> ablation_patterns();

struct AblationRow {
  AbFlags flags{};
  double auroc_percent = 0.0;
  std::size_t best_run = 0;
  std::size_t best_epoch = 0;
};

struct AblationOptions {
  bool parallel = false;
  std::function<void(const AbFlags&, const EpochMetrics&)> progress;
};

/// Trains and evaluates every pattern from scratch under the base seed.
std::vector<AblationRow> ablation_sweep(const Dataset& dataset, const TrainConfig& base,
                                        const Archive& pretrained,
                                        const AblationOptions& options = {});

/// Text table with columns AB1 AB2 AB3 AUROC%.
std::string render_ablation(const std::vector<AblationRow>& rows);

/// CSV with header `ab1,ab2,ab3,auroc_percent`.
std::string ablation_csv(const std::vector<AblationRow>& rows);

/// Two-decimal percent formatting used by every report.
std::string format_percent(double percent);

}  // namespace attnflow
