// attnflow command-line tool: train, score, eval, ablate, explain, synth.

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "attnflow/backbone.hpp"
#include "attnflow/config.hpp"
#include "attnflow/data.hpp"
#include "attnflow/error.hpp"
#include "attnflow/eval.hpp"
#include "attnflow/explain.hpp"
#include "attnflow/metrics.hpp"
#include "attnflow/synth.hpp"
#include "attnflow/trainer.hpp"
#include "attnflow/version.hpp"

namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace attnflow;

namespace {

struct GlobalOptions {
  std::string config;
  std::vector<std::string> set;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string data;
  std::string category;
  std::string embeddings;
  std::vector<std::string> checkpoints;
  std::vector<std::string> images;
  bool quiet = false;
};

RunConfig resolve_config(const GlobalOptions& g) {
  RunConfig cfg = g.config.empty() ? default_run_config() : load_run_config(g.config);
  for (const auto& s : g.set) apply_override(cfg, s);
  if (g.seed) cfg.seed = *g.seed;
  if (!g.out.empty()) cfg.out = g.out;
  if (!g.data.empty()) cfg.data_root = g.data;
  if (!g.category.empty()) cfg.train.category = g.category;
  if (!g.embeddings.empty()) {
    cfg.data_embeddings = g.embeddings;
    cfg.train.mode = TrainMode::embeddings;
  }
  cfg.train.seed = cfg.seed;
  validate(cfg);
  return cfg;
}

fs::path output_dir(const RunConfig& cfg) {
  fs::path dir = cfg.out;
  if (dir.empty()) {
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream stamp;
    stamp << std::put_time(&tm, "%Y%m%d-%H%M%S");
    dir = fs::path("runs") / stamp.str();
    for (int i = 1; fs::exists(dir); ++i) {
      dir = fs::path("runs") / (stamp.str() + "-" + std::to_string(i));
    }
  }
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create output directory " + dir.string() + ": " + ec.message());
  return dir;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + path.string());
}

/// Config snapshot plus manifest with seeds, digests and library versions.
void write_manifest(const fs::path& dir, const std::string& command, const RunConfig& cfg,
                    json digests, const std::vector<std::string>& argv) {
  write_text(dir / "config.toml", to_config_text(cfg));
  json manifest = {
      {"command", command},
      {"argv", argv},
      {"seed", cfg.seed},
      {"config_file", "config.toml"},
      {"config", to_flat_json(cfg)},
      {"digests", std::move(digests)},
      {"versions", build_info()},
  };
  write_text(dir / "manifest.json", manifest.dump(2) + "\n");
}

std::string method_of(const TrainConfig& cfg, const RunConfig& run) {
  if (!run.eval_method.empty()) return run.eval_method;
  if (!cfg.backbone.any_attention()) return "baseline";
  return to_string(cfg.backbone.attention.kind);
}

void print_progress(const EpochMetrics& m) {
  std::cerr << "run " << m.run_id << " epoch " << m.epoch << " " << m.split;
  if (m.auroc) std::cerr << " auroc " << std::fixed << std::setprecision(4) << *m.auroc;
  std::cerr << " nll " << std::fixed << std::setprecision(4) << m.mean_nll_flawless;
  if (m.mean_nll_anomalous) std::cerr << " / " << *m.mean_nll_anomalous;
  std::cerr << std::defaultfloat << "\n";
}

Archive pretrained_for(const RunConfig& cfg) {
  if (cfg.train.backbone.pretrained_path.empty()) {
    throw ConfigError("backbone.pretrained_path is not set");
  }
  return load_pretrained_archive(cfg.train.backbone.pretrained_path);
}

Dataset dataset_for(const RunConfig& cfg, const fs::path& out) {
  if (cfg.data_root.empty()) throw ConfigError("data.root is not set (use --data)");
  if (cfg.train.category.empty()) throw ConfigError("data.category is not set (use --category)");
  Dataset ds = load_dataset(cfg.data_root, cfg.train.category);
  ds.write_skip_report(out);
  if (!ds.skipped.empty()) {
    std::cerr << "skipped " << ds.skipped.size() << " unreadable files (see "
              << (out / "ingest_skipped.txt").string() << ")\n";
  }
  return ds;
}

Checkpoint checkpoint_for(const std::string& path, const RunConfig& cfg) {
  std::vector<std::string> warnings;
  LoadOptions opts;
  opts.allow_weights_mismatch = cfg.allow_weights_mismatch;
  opts.warnings = &warnings;
  Checkpoint ckpt = load_checkpoint(path, opts);
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  return ckpt;
}

int cmd_train(const GlobalOptions& g, const std::vector<std::string>& argv) {
  const RunConfig cfg = resolve_config(g);
  const fs::path out = output_dir(cfg);
  const ProgressFn progress = g.quiet ? ProgressFn{} : ProgressFn{print_progress};
  json digests = json::object();
  TrainResult result;
  if (cfg.train.mode == TrainMode::images) {
    const Archive weights = pretrained_for(cfg);
    digests["pretrained_file"] = weights.meta.value("sha256", "");
    const Dataset ds = dataset_for(cfg, out);
    result = train(ds, cfg.train, weights, progress);
  } else {
    if (cfg.data_embeddings.empty()) throw ConfigError("data.embeddings is not set");
    result = train_embeddings(load_embeddings(cfg.data_embeddings), cfg.train, progress);
  }
  write_metrics_csv(result.metrics, out / "metrics.csv");
  save_checkpoint(result.best, out / "checkpoint.bin");
  digests["checkpoint"] = sha256_file(out / "checkpoint.bin");
  digests["backbone_weights"] = result.best.model.weights_digest();
  write_manifest(out, "train", cfg, digests, argv);
  std::cout << "best run " << result.best.run_id << " epoch " << result.best.epoch << " auroc "
            << std::fixed << std::setprecision(6) << result.best.auroc << "\n"
            << "artifacts in " << out.string() << "\n";
  return 0;
}

int cmd_score(const GlobalOptions& g) {
  if (g.checkpoints.size() != 1) throw ConfigError("score needs exactly one --checkpoint");
  if (g.images.empty()) throw ConfigError("score needs --image");
  const RunConfig cfg = resolve_config(g);
  const Checkpoint ckpt = checkpoint_for(g.checkpoints.front(), cfg);
  if (!ckpt.model.has_backbone()) {
    throw ConfigError("score needs an image-mode checkpoint");
  }
  const std::uint64_t seed = scoring_seed(g.seed ? *g.seed : ckpt.config.seed);
  for (const auto& path : g.images) {
    const auto s = anomaly_score(read_image(path), ckpt.model, cfg.eval_n_transforms, seed, path);
    std::cout << std::setprecision(17) << s.value << "\n";
  }
  return 0;
}

int cmd_eval(const GlobalOptions& g, const std::vector<std::string>& argv) {
  RunConfig cfg = resolve_config(g);
  const fs::path out = output_dir(cfg);
  EvalReport report;
  json digests = json::object();
  for (const auto& path : g.checkpoints) {
    const Checkpoint ckpt = checkpoint_for(path, cfg);
    const std::uint64_t seed = scoring_seed(g.seed ? *g.seed : ckpt.config.seed);
    const std::string method = method_of(ckpt.config, cfg);
    CategoryEvaluation ev;
    if (ckpt.model.has_backbone()) {
      RunConfig data_cfg = cfg;
      if (g.category.empty()) data_cfg.train.category = ckpt.config.category;
      const Dataset ds = dataset_for(data_cfg, out);
      ev = evaluate_category(ckpt, ds, cfg.eval_n_transforms, seed);
    } else {
      if (cfg.data_embeddings.empty()) throw ConfigError("data.embeddings is not set");
      const EmbeddingSet set = load_embeddings(cfg.data_embeddings);
      const auto scores = embedding_scores(set.test, ckpt.model);
      std::vector<Real> flawless, anomalous;
      ev.category = ckpt.config.category;
      for (std::size_t i = 0; i < scores.size(); ++i) {
        ev.scores.push_back({"test/" + std::to_string(i), set.test_labels[i], scores[i]});
        (set.test_labels[i] == Label::flawless ? flawless : anomalous).push_back(scores[i]);
      }
      ev.auroc = auroc(flawless, anomalous);
    }
    write_scores_csv(ev, out / ("scores_" + ev.category + "_" + method + ".csv"));
    report.rows.push_back({ev.category, method, 100.0 * ev.auroc});
    digests[path] = sha256_file(path);
    report.metadata["checkpoints"].push_back(
        {{"path", path}, {"sha256", digests[path]}, {"seed", ckpt.config.seed}});
  }
  const RenderedReport rendered = render_report({report});
  std::cout << rendered.table;
  write_text(out / "report.csv", rendered.csv);
  write_text(out / "report.json", report.metadata.dump(2) + "\n");
  write_manifest(out, "eval", cfg, digests, argv);
  return rendered.exit_code;
}

int cmd_ablate(const GlobalOptions& g, const std::vector<std::string>& argv) {
  const RunConfig cfg = resolve_config(g);
  if (cfg.train.mode != TrainMode::images) throw ConfigError("ablate needs data.mode = images");
  const fs::path out = output_dir(cfg);
  const Archive weights = pretrained_for(cfg);
  const Dataset ds = dataset_for(cfg, out);
  AblationOptions opts;
  opts.parallel = cfg.ablate_parallel;
  if (!g.quiet) {
    opts.progress = [](const AbFlags& f, const EpochMetrics& m) {
      std::cerr << "[" << f[0] << f[1] << f[2] << "] ";
      print_progress(m);
    };
  }
  const auto rows = ablation_sweep(ds, cfg.train, weights, opts);
  std::cout << render_ablation(rows);
  write_text(out / "ablation.csv", ablation_csv(rows));
  write_manifest(out, "ablate", cfg, {{"pretrained_file", weights.meta.value("sha256", "")}},
                 argv);
  return 0;
}

int cmd_explain(const GlobalOptions& g, const std::vector<std::string>& argv) {
  if (g.checkpoints.size() != 1) throw ConfigError("explain needs exactly one --checkpoint");
  if (g.images.empty()) throw ConfigError("explain needs --image");
  const RunConfig cfg = resolve_config(g);
  const fs::path out = output_dir(cfg);
  Checkpoint ckpt = checkpoint_for(g.checkpoints.front(), cfg);
  if (!ckpt.model.has_backbone()) throw ConfigError("explain needs an image-mode checkpoint");
  ckpt.model.set_grad_enabled(true);
  const auto handles = gradcam_target_layer(ckpt.config.backbone);
  if (cfg.explain_scale_index >= handles.size()) {
    throw ConfigError("explain.scale_index out of range for the checkpoint's scales");
  }
  const LayerHandle& target = handles[cfg.explain_scale_index];
  for (const auto& path : g.images) {
    const RgbImage image = read_image(path);
    const ActivationMap map = gradcam(image, ckpt.model, target, path);
    const fs::path dest = heatmap_path(path, out);
    export_heatmap(map, image, dest);
    std::cout << dest.string() << "\n";
  }
  write_manifest(out, "explain", cfg, {{"checkpoint", sha256_file(g.checkpoints.front())}},
                 argv);
  return 0;
}

int cmd_synth(const GlobalOptions& g, const SynthOptions& options) {
  RunConfig cfg = resolve_config(g);
  const fs::path out = output_dir(cfg);
  synth_all(out, options, cfg.seed);
  std::cout << "synthetic fixture in " << out.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Attention-augmented normalizing-flow anomaly detection"};
  app.set_version_flag("--version", version());
  app.require_subcommand(1);
  app.fallthrough();

  GlobalOptions g;
  std::uint64_t seed_value = 0;
  app.add_option("--config", g.config, "Config file (sectioned key = value)");
  app.add_option("--set", g.set, "Override, key=value (repeatable)")->take_all();
  app.add_option("--out", g.out, "Output directory (default ./runs/<timestamp>)");
  auto* seed_opt = app.add_option("--seed", seed_value, "Root seed");
  app.add_flag("--quiet", g.quiet, "No per-epoch progress on stderr");

  auto* train_cmd = app.add_subcommand("train", "Train and keep the best checkpoint");
  auto* score_cmd = app.add_subcommand("score", "Print anomaly scores of images");
  auto* eval_cmd = app.add_subcommand("eval", "AUROC report over test splits");
  auto* ablate_cmd = app.add_subcommand("ablate", "Train all eight AB1..AB3 combinations");
  auto* explain_cmd = app.add_subcommand("explain", "Grad-CAM heatmaps");
  auto* synth_cmd = app.add_subcommand("synth", "Generate the synthetic fixtures");

  for (auto* cmd : {train_cmd, eval_cmd, ablate_cmd}) {
    cmd->add_option("--data", g.data, "Dataset root");
    cmd->add_option("--category", g.category, "Category folder");
  }
  for (auto* cmd : {train_cmd, eval_cmd}) {
    cmd->add_option("--embeddings", g.embeddings, "Embedding fixture directory");
  }
  for (auto* cmd : {score_cmd, eval_cmd, explain_cmd}) {
    cmd->add_option("--checkpoint", g.checkpoints, "Checkpoint file");
  }
  for (auto* cmd : {score_cmd, explain_cmd}) {
    cmd->add_option("--image", g.images, "Image file")->check(CLI::ExistingFile);
  }
  SynthOptions synth;
  synth_cmd->add_option("--size", synth.image_size, "Image side length");
  synth_cmd->add_option("--train-good", synth.train_good);
  synth_cmd->add_option("--test-good", synth.test_good);
  synth_cmd->add_option("--test-defect", synth.test_defect);

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }
  if (*seed_opt) g.seed = seed_value;
  const std::vector<std::string> args(argv, argv + argc);

  try {
    if (*train_cmd) return cmd_train(g, args);
    if (*score_cmd) return cmd_score(g);
    if (*eval_cmd) return cmd_eval(g, args);
    if (*ablate_cmd) return cmd_ablate(g, args);
    if (*explain_cmd) return cmd_explain(g, args);
    if (*synth_cmd) return cmd_synth(g, synth);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(e.kind());
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return exit_code_for(ErrorKind::io);
  }
  return 2;
}
