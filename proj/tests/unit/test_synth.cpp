#include <gtest/gtest.h>

#include <fstream>
#include <iterator>

#include "attnflow/data.hpp"
#include "attnflow/error.hpp"
#include "attnflow/synth.hpp"
#include "fixtures.hpp"

using namespace attnflow;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace

TEST(Synth, ImageCountsAndLayout) {
  const Dataset ds = load_dataset(fixtures::tiny_root(), "tiny");
  EXPECT_EQ(ds.train.size(), 12u);
  EXPECT_EQ(ds.test.size(), 10u);
  EXPECT_TRUE(ds.skipped.empty());
  const RgbImage img = ds.train.front().load();
  EXPECT_EQ(img.width, 64u);
  EXPECT_EQ(img.height, 64u);
}

TEST(Synth, SameSeedSameBytes) {
  const auto a = fixtures::scratch("synth_a"), b = fixtures::scratch("synth_b");
  synth_image_dataset(a, fixtures::tiny_options(), 5);
  synth_image_dataset(b, fixtures::tiny_options(), 5);
  const fs::path rel = fs::path("tiny") / "test" / "defect" / "0002.png";
  EXPECT_EQ(slurp(a / rel), slurp(b / rel));
  synth_image_dataset(b, fixtures::tiny_options(), 6);
  EXPECT_NE(slurp(a / rel), slurp(b / rel));
}

TEST(Synth, AnomalyDiffersFromFlawless) {
  const RgbImage good = synth_flawless(64, 1), bad = synth_anomalous(64, 1);
  std::size_t differing = 0;
  for (std::size_t i = 0; i < good.pixels.size(); ++i) differing += good.pixels[i] != bad.pixels[i];
  EXPECT_GT(differing, 0u);
}

TEST(Synth, EmbeddingFixtureShape) {
  const EmbeddingSet set = synth_embeddings(SynthOptions{}, 7);
  EXPECT_EQ(set.train.rows(), 8);
  EXPECT_EQ(set.train.cols(), 2048);
  EXPECT_EQ(set.test.cols(), 1024);
  std::size_t anomalous = 0;
  for (Label l : set.test_labels) anomalous += l == Label::anomalous;
  EXPECT_EQ(anomalous, 512u);
  const EmbeddingSet again = synth_embeddings(SynthOptions{}, 7);
  EXPECT_EQ(set.train, again.train);
}

TEST(Synth, AllWritesConfigs) {
  const auto dir = fixtures::scratch("synth_all");
  SynthOptions o = fixtures::tiny_options();
  o.embed_train = 64;
  o.embed_test_flawless = 16;
  o.embed_test_anomalous = 16;
  synth_all(dir, o, 1);
  EXPECT_TRUE(fs::exists(dir / "desk_images.toml"));
  EXPECT_TRUE(fs::exists(dir / "desk_embeddings.toml"));
  EXPECT_TRUE(fs::exists(dir / "backbone_surrogate.bin"));
  const RunConfig cfg = load_run_config(dir / "desk_images.toml");
  EXPECT_EQ(cfg.train.category, "tiny");
  EXPECT_TRUE(fs::path(cfg.data_root).is_absolute());
  const EmbeddingSet set = load_embeddings(dir / "embeddings");
  EXPECT_EQ(set.train.cols(), 64);
}

TEST(Synth, UnwritableOutputIsIoError) {
  EXPECT_THROW(synth_all("/proc/attnflow_no_such_dir", fixtures::tiny_options(), 1), Error);
}
