#include "attnflow/eval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <future>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>

#include "attnflow/error.hpp"
#include "attnflow/metrics.hpp"

namespace attnflow {

namespace fs = std::filesystem;

namespace {

void append_unique(std::vector<std::string>& v, const std::string& s) {
  if (std::find(v.begin(), v.end(), s) == v.end()) v.push_back(s);
}

std::string pad(const std::string& s, std::size_t width) {
  return s.size() >= width ? s : s + std::string(width - s.size(), ' ');
}

std::string mark(bool on) { return on ? "x" : "-"; }

}  // namespace

CategoryEvaluation evaluate_category(const Dataset& dataset, const Scorer& scorer) {
  CategoryEvaluation out;
  out.category = dataset.manifest.category;
  std::vector<Real> flawless, anomalous;
  for (const auto& sample : dataset.test) {
    const Real s = scorer(sample);
    out.scores.push_back({sample.path.string(), sample.label, s});
    (sample.label == Label::flawless ? flawless : anomalous).push_back(s);
  }
  if (flawless.empty() || anomalous.empty()) {
    throw MetricError("test split of '" + out.category +
                      "' needs at least one flawless and one anomalous image");
  }
  out.auroc = auroc(flawless, anomalous);
  return out;
}

CategoryEvaluation evaluate_category(const Checkpoint& ckpt, const Dataset& dataset,
                                     std::size_t n_transforms, std::uint64_t seed) {
  return evaluate_category(dataset, [&](const ImageSample& s) {
    return anomaly_score(s.load(), ckpt.model, n_transforms, seed, s.path.string()).value;
  });
}

void write_scores_csv(const CategoryEvaluation& eval, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "image_path,label,score\n" << std::setprecision(17);
  for (const auto& s : eval.scores) {
    out << s.image_path << "," << to_string(s.label) << "," << s.score << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

std::string format_percent(double percent) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", percent);
  return buf;
}

double average_percent(const std::vector<ReportRow>& rows, const std::string& method) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows) {
    if (r.method == method && r.category != kAverageCategory) {
      sum += r.auroc_percent;
      ++n;
    }
  }
  return n == 0 ? 0.0 : sum / static_cast<double>(n);
}

RenderedReport render_report(const std::vector<EvalReport>& reports) {
  std::vector<ReportRow> rows;
  for (const auto& r : reports) rows.insert(rows.end(), r.rows.begin(), r.rows.end());

  RenderedReport out;
  out.csv = "category,method,auroc_percent\n";
  if (rows.empty()) {
    out.table = "no rows\n";
    out.exit_code = 1;
    return out;
  }

  std::vector<std::string> categories, methods;
  std::map<std::pair<std::string, std::string>, double> cell;
  for (const auto& r : rows) {
    append_unique(categories, r.category);
    append_unique(methods, r.method);
    cell[{r.category, r.method}] = r.auroc_percent;
  }
  for (const auto& m : methods) cell[{kAverageCategory, m}] = average_percent(rows, m);
  categories.push_back(kAverageCategory);

  std::size_t first_width = std::string("category").size();
  for (const auto& c : categories) first_width = std::max(first_width, c.size());
  std::vector<std::size_t> widths;
  for (const auto& m : methods) widths.push_back(std::max<std::size_t>(m.size(), 7));

  std::ostringstream table;
  table << pad("category", first_width);
  for (std::size_t j = 0; j < methods.size(); ++j) table << "  " << pad(methods[j], widths[j]);
  table << "\n";
  for (const auto& c : categories) {
    std::optional<double> best;
    for (const auto& m : methods) {
      auto it = cell.find({c, m});
      if (it != cell.end() && (!best || it->second > *best)) best = it->second;
    }
    table << pad(c, first_width);
    for (std::size_t j = 0; j < methods.size(); ++j) {
      auto it = cell.find({c, methods[j]});
      std::string text = "-";
      if (it != cell.end()) {
        text = format_percent(it->second);
        if (methods.size() > 1 && it->second == *best) text += "*";
        out.csv += c + "," + methods[j] + "," + format_percent(it->second) + "\n";
      }
      table << "  " << pad(text, widths[j]);
    }
    table << "\n";
  }
  out.table = table.str();
  return out;
}

std::vector<AbFlags> ablation_patterns() {
  return {
      {false, false, false}, {true, false, false}, {false, true, false}, {false, false, true},
      {true, true, false},   {true, false, true},  {false, true, true},  {true, true, true},
  };
}

std::vector<AblationRow> ablation_sweep(const Dataset& dataset, const TrainConfig& base,
                                        const Archive& pretrained,
                                        const AblationOptions& options) {
  const auto patterns = ablation_patterns();
  auto run_one = [&](const AbFlags& flags) {
    TrainConfig cfg = base;
    cfg.backbone.ab_flags = flags;
    ProgressFn progress;
    if (options.progress) {
      progress = [&options, flags](const EpochMetrics& m) { options.progress(flags, m); };
    }
    const TrainResult result = train(dataset, cfg, pretrained, progress);
    return AblationRow{flags, 100.0 * result.best.auroc, result.best.run_id,
                       result.best.epoch};
  };

  std::vector<AblationRow> rows;
  if (options.parallel) {
    std::vector<std::future<AblationRow>> jobs;
    for (const auto& f : patterns) jobs.push_back(std::async(std::launch::async, run_one, f));
    for (auto& j : jobs) rows.push_back(j.get());
  } else {
    for (const auto& f : patterns) rows.push_back(run_one(f));
  }
  return rows;
}

std::string render_ablation(const std::vector<AblationRow>& rows) {
  std::ostringstream out;
  out << "AB1  AB2  AB3  AUROC%\n";
  for (const auto& r : rows) {
    out << pad(mark(r.flags[0]), 5) << pad(mark(r.flags[1]), 5) << pad(mark(r.flags[2]), 5)
        << format_percent(r.auroc_percent) << "\n";
  }
  return out.str();
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::string out = "ab1,ab2,ab3,auroc_percent\n";
  for (const auto& r : rows) {
    for (bool f : r.flags) out += f ? "1," : "0,";
    out += format_percent(r.auroc_percent) + "\n";
  }
  return out;
}

}  // namespace attnflow
