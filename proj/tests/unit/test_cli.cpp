#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <sstream>
#include <sys/wait.h>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"

namespace fs = std::filesystem;

namespace {

struct Outcome {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome run_cli(const std::string& args) {
  static const fs::path logs = fixtures::scratch("cli_logs");
  const fs::path out = logs / "stdout.txt", err = logs / "stderr.txt";
  const std::string cmd = std::string(ATTNFLOW_CLI) + " " + args + " >" + out.string() + " 2>" +
                          err.string();
  const int status = std::system(cmd.c_str());
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, slurp(out), slurp(err)};
}

/// Synthetic fixture shared by the CLI tests, plus one trained run.
struct Workspace {
  fs::path root;
  fs::path run;  // one trained run

  static const Workspace& get() {
    static const Workspace w = [] {
      Workspace ws;
      ws.root = fixtures::scratch("cli");
      const auto synth = run_cli("synth --out " + (ws.root / "fx").string() +
                             " --seed 4 --train-good 12 --test-good 4 --test-defect 4");
      EXPECT_EQ(synth.code, 0) << synth.err;
      ws.run = ws.root / "run";
      const auto train = run_cli("--quiet --config " + (ws.root / "fx" / "desk_images.toml").string() +
                             " --set train.epochs=1 --set train.n_test_transforms=2 train --out " +
                             ws.run.string());
      EXPECT_EQ(train.code, 0) << train.err;
      return ws;
    }();
    return w;
  }

  fs::path config() const { return root / "fx" / "desk_images.toml"; }
  fs::path image() const { return root / "fx" / "images" / "synthetic" / "test" / "defect" / "0001.png"; }
};

/// metrics.csv without the wall_seconds column.
std::vector<std::vector<std::string>> metrics_without_time(const fs::path& p) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(slurp(p));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (!cells.empty()) cells.pop_back();
    rows.push_back(cells);
  }
  return rows;
}

}  // namespace

TEST(Cli, UsageErrorsExitTwo) {
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("frobnicate").code, 2);
  EXPECT_EQ(run_cli("train --set train.epochs=zero").code, 2);
  const auto unknown = run_cli("train --set train.nope=1");
  EXPECT_EQ(unknown.code, 2);
  EXPECT_NE(unknown.err.find("train.nope"), std::string::npos);
}

TEST(Cli, MissingDatasetNamesPath) {
  const auto& ws = Workspace::get();
  const auto r = run_cli("--quiet --config " + ws.config().string() +
                     " train --data /nonexistent/attnflow_data --out " + (ws.root / "missing").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("/nonexistent/attnflow_data"), std::string::npos);
}

TEST(Cli, TrainWritesArtifacts) {
  const auto& ws = Workspace::get();
  ASSERT_TRUE(fs::exists(ws.run / "checkpoint.bin"));
  ASSERT_TRUE(fs::exists(ws.run / "config.toml"));
  const std::string metrics = slurp(ws.run / "metrics.csv");
  EXPECT_EQ(metrics.rfind("category,run_id,epoch,split,auroc,mean_nll_flawless,"
                          "mean_nll_anomalous,wall_seconds\n", 0), 0u);
  const auto manifest = nlohmann::json::parse(slurp(ws.run / "manifest.json"));
  EXPECT_EQ(manifest["command"], "train");
  EXPECT_EQ(manifest["config"]["train.epochs"], 1);
  EXPECT_TRUE(manifest["digests"].contains("checkpoint"));
}

TEST(Cli, RerunFromSnapshotReproducesMetrics) {
  const auto& ws = Workspace::get();
  const fs::path again = ws.root / "again";
  const auto r = run_cli("--quiet --config " + (ws.run / "config.toml").string() + " train --out " +
                     again.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto a = metrics_without_time(ws.run / "metrics.csv");
  const auto b = metrics_without_time(again / "metrics.csv");
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 1; i < a.size(); ++i) {
    ASSERT_EQ(a[i].size(), b[i].size());
    for (std::size_t j = 0; j < a[i].size(); ++j) {
      if (j >= 4 && !a[i][j].empty()) {
        EXPECT_NEAR(std::stod(a[i][j]), std::stod(b[i][j]), 1e-6);
      } else {
        EXPECT_EQ(a[i][j], b[i][j]);
      }
    }
  }
}

TEST(Cli, ScorePrintsOneFloatPerImage) {
  const auto& ws = Workspace::get();
  const auto r = run_cli("--set eval.n_transforms=2 score --checkpoint " +
                     (ws.run / "checkpoint.bin").string() + " --image " + ws.image().string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream in(r.out);
  double v = 0.0;
  ASSERT_TRUE(in >> v);
  EXPECT_TRUE(std::isfinite(v));
  std::string rest;
  EXPECT_FALSE(in >> rest);
  const auto again = run_cli("--set eval.n_transforms=2 score --checkpoint " +
                         (ws.run / "checkpoint.bin").string() + " --image " + ws.image().string());
  EXPECT_EQ(again.out, r.out);
}

TEST(Cli, MissingImageIsUsageError) {
  const auto& ws = Workspace::get();
  const auto r = run_cli("score --checkpoint " + (ws.run / "checkpoint.bin").string() +
                     " --image /nonexistent/x.png");
  EXPECT_EQ(r.code, 2);
}

TEST(Cli, CorruptCheckpointIsIoError) {
  const auto& ws = Workspace::get();
  const fs::path bad = ws.root / "bad.bin";
  std::ofstream(bad) << "not a checkpoint";
  const auto r = run_cli("score --checkpoint " + bad.string() + " --image " + ws.image().string());
  EXPECT_EQ(r.code, 4);
}

TEST(Cli, EvalWritesReport) {
  const auto& ws = Workspace::get();
  const fs::path out = ws.root / "eval";
  const auto r = run_cli("--config " + ws.config().string() +
                     " --set eval.n_transforms=2 eval --checkpoint " +
                     (ws.run / "checkpoint.bin").string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const std::string csv = slurp(out / "report.csv");
  EXPECT_EQ(csv.rfind("category,method,auroc_percent\n", 0), 0u);
  EXPECT_NE(csv.find("synthetic,se,"), std::string::npos);
  EXPECT_NE(csv.find("average,se,"), std::string::npos);
  EXPECT_TRUE(fs::exists(out / "scores_synthetic_se.csv"));
}

TEST(Cli, ExplainWritesHeatmap) {
  const auto& ws = Workspace::get();
  const fs::path out = ws.root / "explain";
  const auto r = run_cli("explain --checkpoint " + (ws.run / "checkpoint.bin").string() +
                     " --image " + ws.image().string() + " --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(out / "0001_gradcam.png"));
}

TEST(Cli, EmbeddingTrainAndEval) {
  const auto& ws = Workspace::get();
  const fs::path out = ws.root / "gmm";
  const auto r = run_cli("--quiet --config " + (ws.root / "fx" / "desk_embeddings.toml").string() +
                     " --set train.epochs=2 train --out " + out.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto e = run_cli("--config " + (ws.root / "fx" / "desk_embeddings.toml").string() +
                     " eval --checkpoint " + (out / "checkpoint.bin").string() + " --out " +
                     (ws.root / "gmm_eval").string());
  ASSERT_EQ(e.code, 0) << e.err;
  EXPECT_NE(slurp(ws.root / "gmm_eval" / "report.csv").find("gmm,"), std::string::npos);
}
