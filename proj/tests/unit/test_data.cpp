#include <gtest/gtest.h>

#include <fstream>

#include "attnflow/data.hpp"
#include "attnflow/error.hpp"
#include "fixtures.hpp"

using namespace attnflow;
namespace fs = std::filesystem;

TEST(Data, LoadsStandardLayout) {
  const Dataset ds = load_dataset(fixtures::tiny_root(), "tiny");
  EXPECT_EQ(ds.manifest.train_flawless, 12u);
  EXPECT_EQ(ds.manifest.test_flawless, 5u);
  EXPECT_EQ(ds.manifest.total_anomalous(), 5u);
  EXPECT_EQ(ds.manifest.test_anomalous.at("defect"), 5u);
  for (const auto& s : ds.train) EXPECT_EQ(s.label, Label::flawless);
  std::size_t anomalous = 0;
  for (const auto& s : ds.test) {
    if (s.label == Label::anomalous) {
      ++anomalous;
      EXPECT_EQ(s.defect_type.value(), "defect");
    }
  }
  EXPECT_EQ(anomalous, 5u);
  EXPECT_TRUE(ds.skipped.empty());
}

TEST(Data, MissingFolderNamesPath) {
  const fs::path root = fixtures::scratch("layout");
  fs::create_directories(root / "cat" / "train" / "good");
  try {
    load_dataset(root, "cat");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find((root / "cat" / "test").string()), std::string::npos);
  }
}

TEST(Data, UndecodableFilesAreSkippedAndReported) {
  const fs::path root = fixtures::scratch("skip");
  fs::copy(fixtures::tiny_root() / "tiny", root / "tiny", fs::copy_options::recursive);
  std::ofstream(root / "tiny" / "train" / "good" / "broken.png") << "garbage";
  const Dataset ds = load_dataset(root, "tiny");
  ASSERT_EQ(ds.skipped.size(), 1u);
  EXPECT_EQ(ds.train.size(), 12u);
  ds.write_skip_report(root / "out");
  std::ifstream in(root / "out" / "ingest_skipped.txt");
  std::string line;
  std::getline(in, line);
  EXPECT_NE(line.find("broken.png"), std::string::npos);
}

TEST(Data, TestTransformAngles) {
  EXPECT_EQ(test_transform_angles(4, 1), (std::vector<double>{0, 90, 180, 270}));
  EXPECT_EQ(test_transform_angles(1, 1), (std::vector<double>{0}));
  const auto a = test_transform_angles(16, 5);
  EXPECT_EQ(a, test_transform_angles(16, 5));
  EXPECT_NE(a, test_transform_angles(16, 6));
  for (double v : a) {
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 360.0);
  }
  EXPECT_THROW(test_transform_angles(0, 1), ConfigError);
}

TEST(Data, TrainTransformIsSeeded) {
  const Dataset ds = load_dataset(fixtures::tiny_root(), "tiny");
  const RgbImage img = ds.train[0].load();
  const auto a = train_transform(img, {32}, 4);
  const auto b = train_transform(img, {32}, 4);
  EXPECT_EQ(a[0].data(), b[0].data());
  EXPECT_NE(train_rotation_angle(4), train_rotation_angle(5));
  EXPECT_EQ(ds.train_order(1, "x"), ds.train_order(1, "x"));
}

TEST(Data, EmbeddingCsvRoundTrip) {
  SynthOptions o;
  o.embed_train = 10;
  o.embed_test_flawless = 3;
  o.embed_test_anomalous = 4;
  const EmbeddingSet set = synth_embeddings(o, 2);
  const fs::path dir = fixtures::scratch("emb");
  write_embeddings(set, dir);
  const EmbeddingSet back = load_embeddings(dir);
  EXPECT_EQ(back.train, set.train);
  EXPECT_EQ(back.test, set.test);
  EXPECT_EQ(back.test_labels, set.test_labels);
}
