#include "attnflow/data.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "attnflow/error.hpp"
#include "attnflow/rng.hpp"

namespace attnflow {

namespace fs = std::filesystem;

namespace {

bool has_image_extension(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

std::vector<fs::path> list_images(const fs::path& dir) {
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && has_image_extension(entry.path())) {
      out.push_back(entry.path());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

void require_dir(const fs::path& p) {
  if (!fs::is_directory(p)) {
    throw ConfigError("dataset layout error: missing directory " + p.string());
  }
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

void read_embedding_csv(const fs::path& path, Matrix& values, std::vector<Label>& labels) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw InputError(path.string() + ": empty file");
  const std::size_t dim = split_csv(line).size() - 1;
  std::vector<std::vector<Real>> columns;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = split_csv(line);
    if (cells.size() != dim + 1) {
      throw InputError(path.string() + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(dim + 1) + " cells");
    }
    labels.push_back(cells[0] == "good" ? Label::flawless : Label::anomalous);
    std::vector<Real> col(dim);
    for (std::size_t i = 0; i < dim; ++i) {
      try {
        col[i] = std::stod(cells[i + 1]);
      } catch (const std::exception&) {
        throw InputError(path.string() + ":" + std::to_string(line_no) +
                         ": not a number '" + cells[i + 1] + "'");
      }
    }
    columns.push_back(std::move(col));
  }
  values.resize(static_cast<Eigen::Index>(dim), static_cast<Eigen::Index>(columns.size()));
  for (std::size_t j = 0; j < columns.size(); ++j) {
    for (std::size_t i = 0; i < dim; ++i) {
      values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = columns[j][i];
    }
  }
}

void write_embedding_csv(const fs::path& path, const Matrix& values,
                         const std::vector<Label>& labels) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << "label";
  for (Eigen::Index i = 0; i < values.rows(); ++i) out << ",v" << i;
  out << "\n";
  out.precision(17);
  for (Eigen::Index j = 0; j < values.cols(); ++j) {
    out << (labels[static_cast<std::size_t>(j)] == Label::flawless ? "good" : "anomalous");
    for (Eigen::Index i = 0; i < values.rows(); ++i) out << "," << values(i, j);
    out << "\n";
  }
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace

std::string to_string(Label label) {
  return label == Label::flawless ? "flawless" : "anomalous";
}

std::size_t DatasetManifest::total_anomalous() const {
  std::size_t n = 0;
  for (const auto& [_, count] : test_anomalous) n += count;
  return n;
}

std::vector<std::size_t> Dataset::train_order(std::uint64_t seed, std::string_view tag) const {
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = make_rng(seed, tag);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

void Dataset::write_skip_report(const fs::path& out_dir) const {
  fs::create_directories(out_dir);
  std::ofstream out(out_dir / "ingest_skipped.txt", std::ios::trunc);
  if (!out) throw IoError("cannot write " + (out_dir / "ingest_skipped.txt").string());
  for (const auto& p : skipped) out << p.string() << "\n";
}

Dataset load_dataset(const fs::path& root, const std::string& category) {
  const fs::path base = root / category;
  const fs::path train_good = base / "train" / "good";
  const fs::path test_dir = base / "test";
  require_dir(train_good);
  require_dir(test_dir / "good");

  Dataset ds;
  ds.manifest.category = category;
  for (const auto& p : list_images(train_good)) {
    if (!is_readable_image(p)) {
      ds.skipped.push_back(p);
      continue;
    }
    ds.train.push_back({p, Label::flawless, std::nullopt, category});
  }
  ds.manifest.train_flawless = ds.train.size();

  std::vector<fs::path> folders;
  for (const auto& entry : fs::directory_iterator(test_dir)) {
    if (entry.is_directory()) folders.push_back(entry.path());
  }
  std::sort(folders.begin(), folders.end());
  for (const auto& folder : folders) {
    const std::string name = folder.filename().string();
    const bool good = name == "good";
    for (const auto& p : list_images(folder)) {
      if (!is_readable_image(p)) {
        ds.skipped.push_back(p);
        continue;
      }
      if (good) {
        ds.test.push_back({p, Label::flawless, std::nullopt, category});
        ++ds.manifest.test_flawless;
      } else {
        ds.test.push_back({p, Label::anomalous, name, category});
        ++ds.manifest.test_anomalous[name];
      }
    }
  }
  return ds;
}

double train_rotation_angle(std::uint64_t seed) {
  Rng rng = make_rng(seed, "train_transform/angle");
  return std::uniform_real_distribution<double>(0.0, 360.0)(rng);
}

std::vector<FeatureMap> train_transform(const RgbImage& image, const std::vector<int>& scales,
                                        std::uint64_t seed) {
  return preprocess(rotate(image, train_rotation_angle(seed)), scales);
}

std::vector<double> test_transform_angles(std::size_t n, std::uint64_t seed) {
  if (n == 0) throw ConfigError("test_transforms: n must be >= 1");
  std::vector<double> angles(n);
  if (360 % n == 0) {
    for (std::size_t k = 0; k < n; ++k) {
      angles[k] = static_cast<double>(k * (360 / n));
    }
    return angles;
  }
  Rng rng = make_rng(seed, "test_transform/angles");
  std::uniform_real_distribution<double> u(0.0, 360.0);
  for (auto& a : angles) a = u(rng);
  return angles;
}

std::vector<RgbImage> test_transforms(const RgbImage& image, std::size_t n, std::uint64_t seed) {
  std::vector<RgbImage> out;
  for (double a : test_transform_angles(n, seed)) out.push_back(rotate(image, a));
  return out;
}

EmbeddingSet load_embeddings(const fs::path& dir) {
  EmbeddingSet set;
  std::vector<Label> train_labels;
  read_embedding_csv(dir / "train.csv", set.train, train_labels);
  for (auto l : train_labels) {
    if (l != Label::flawless) {
      throw InputError((dir / "train.csv").string() + ": training rows must be labelled good");
    }
  }
  read_embedding_csv(dir / "test.csv", set.test, set.test_labels);
  if (set.train.rows() != set.test.rows()) {
    throw InputError("train and test embeddings differ in dimension");
  }
  if (set.train.cols() == 0) throw ConfigError("empty training embedding set");
  return set;
}

void write_embeddings(const EmbeddingSet& set, const fs::path& dir) {
  fs::create_directories(dir);
  write_embedding_csv(dir / "train.csv", set.train,
                      std::vector<Label>(static_cast<std::size_t>(set.train.cols()),
                                         Label::flawless));
  write_embedding_csv(dir / "test.csv", set.test, set.test_labels);
}

}  // namespace attnflow
