#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "attnflow/flow.hpp"
#include "attnflow/image.hpp"

namespace attnflow {

enum class Label { flawless, anomalous };

std::string to_string(Label label);

struct ImageSample {
  std::filesystem::path path;
  Label label = Label::flawless;
  std::optional<std::string> defect_type;
  std::string category;

  RgbImage load() const { return read_image(path); }
};

struct DatasetManifest {
  std::string category;
  std::size_t train_flawless = 0;
  std::size_t test_flawless = 0;
  std::map<std::string, std::size_t> test_anomalous;  // per defect folder

  std::size_t total_anomalous() const;
};

struct Dataset {
  DatasetManifest manifest;
  std::vector<ImageSample> train;  // sorted by path, flawless only
  std::vector<ImageSample> test;   // sorted by (folder, path)
  std::vector<std::filesystem::path> skipped;

  /// Train indices in a seeded shuffled order.
  std::vector<std::size_t> train_order(std::uint64_t seed, std::string_view tag) const;

  /// Writes <out_dir>/ingest_skipped.txt, one path per line.
  void write_skip_report(const std::filesystem::path& out_dir) const;
};

/// Scans <root>/<category>/{train/good,test/good,test/<defect>}. Folder "good"
/// means flawless; any other test folder is anomalous with that defect type.
/// Files a decoder cannot recognise go to `skipped`.
Dataset load_dataset(const std::filesystem::path& root, const std::string& category);

// Transforms.

/// Rotation angle in [0, 360) drawn for a training sample.
double train_rotation_angle(std::uint64_t seed);

/// Random rotation followed by resize + normalisation at every scale.
std::vector<FeatureMap> train_transform(const RgbImage& image, const std::vector<int>& scales,
                                        std::uint64_t seed);

/// n angles: k * 360 / n when n divides 360, otherwise seeded uniform draws.
std::vector<double> test_transform_angles(std::size_t n, std::uint64_t seed);

std::vector<RgbImage> test_transforms(const RgbImage& image, std::size_t n, std::uint64_t seed);

// Embedding-level data for flow-only training.

struct EmbeddingSet {
  Matrix train;  // d x n_train
  Matrix test;   // d x n_test
  std::vector<Label> test_labels;

  std::size_t dim() const { return static_cast<std::size_t>(train.rows()); }
};

/// Reads <dir>/train.csv and <dir>/test.csv (header `label,v0,...`).
EmbeddingSet load_embeddings(const std::filesystem::path& dir);
void write_embeddings(const EmbeddingSet& set, const std::filesystem::path& dir);

}  // namespace attnflow
