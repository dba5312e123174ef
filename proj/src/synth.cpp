#include "attnflow/synth.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <random>

#include "attnflow/archive.hpp"
#include "attnflow/error.hpp"
#include "attnflow/rng.hpp"

namespace attnflow {

namespace fs = std::filesystem;

namespace {

constexpr double kComponentStd = 0.5;
constexpr double kComponentOffset = 1.5;
constexpr double kAnomalyShift = 5.0 * kComponentStd;

std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

std::string numbered(std::size_t i) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04zu.png", i);
  return buf;
}

void make_dirs(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec || !fs::is_directory(p)) throw IoError("cannot create directory " + p.string());
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::trunc);
  out << text;
  if (!out) throw IoError("cannot write " + p.string());
}

}  // namespace

RgbImage synth_flawless(std::size_t size, std::uint64_t seed) {
  Rng rng = make_rng(seed, "synth/flawless");
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> jitter(-8.0, 8.0);
  std::normal_distribution<double> noise(0.0, 3.0);
  const double ph = phase(rng);
  const double brightness = jitter(rng);
  const double c = (static_cast<double>(size) - 1.0) / 2.0;
  const double freq = 2.0 * std::numbers::pi / 6.0;
  RgbImage img(size, size);
  for (std::size_t y = 0; y < size; ++y) {
    for (std::size_t x = 0; x < size; ++x) {
      const double r = std::hypot(static_cast<double>(x) - c, static_cast<double>(y) - c);
      const double ring = std::sin(freq * r + ph);
      const double base = 128.0 + brightness + 50.0 * ring;
      img.at(y, x, 0) = to_byte(base * 0.8 + noise(rng));
      img.at(y, x, 1) = to_byte(base * 1.0 + noise(rng));
      img.at(y, x, 2) = to_byte(base * 0.6 + noise(rng));
    }
  }
  return img;
}

RgbImage synth_anomalous(std::size_t size, std::uint64_t seed) {
  RgbImage img = synth_flawless(size, seed);
  Rng rng = make_rng(seed, "synth/defect");
  const double s = static_cast<double>(size);
  std::uniform_real_distribution<double> centre(0.2 * s, 0.8 * s);
  const double cx = centre(rng), cy = centre(rng);
  if (std::bernoulli_distribution(0.5)(rng)) {
    std::uniform_real_distribution<double> radius(0.08 * s, 0.16 * s);
    const double rx = radius(rng), ry = radius(rng);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        const double dx = (static_cast<double>(x) - cx) / rx;
        const double dy = (static_cast<double>(y) - cy) / ry;
        if (dx * dx + dy * dy <= 1.0) {
          img.at(y, x, 0) = 170;
          img.at(y, x, 1) = 40;
          img.at(y, x, 2) = 30;
        }
      }
    }
  } else {
    std::uniform_real_distribution<double> half(0.08 * s, 0.14 * s);
    const double hw = half(rng), hh = half(rng);
    for (std::size_t y = 0; y < size; ++y) {
      for (std::size_t x = 0; x < size; ++x) {
        if (std::abs(static_cast<double>(x) - cx) <= hw &&
            std::abs(static_cast<double>(y) - cy) <= hh) {
          img.at(y, x, 0) = 15;
          img.at(y, x, 1) = 15;
          img.at(y, x, 2) = 20;
        }
      }
    }
  }
  return img;
}

void synth_image_dataset(const fs::path& root, const SynthOptions& options, std::uint64_t seed) {
  const fs::path base = root / options.category;
  const fs::path train_good = base / "train" / "good";
  const fs::path test_good = base / "test" / "good";
  const fs::path test_defect = base / "test" / "defect";
  for (const auto& d : {train_good, test_good, test_defect}) make_dirs(d);
  for (std::size_t i = 0; i < options.train_good; ++i) {
    write_png(synth_flawless(options.image_size, derive_seed(seed, "train/" + std::to_string(i))),
              train_good / numbered(i));
  }
  for (std::size_t i = 0; i < options.test_good; ++i) {
    write_png(synth_flawless(options.image_size, derive_seed(seed, "test/" + std::to_string(i))),
              test_good / numbered(i));
  }
  for (std::size_t i = 0; i < options.test_defect; ++i) {
    write_png(
        synth_anomalous(options.image_size, derive_seed(seed, "defect/" + std::to_string(i))),
        test_defect / numbered(i));
  }
}

EmbeddingSet synth_embeddings(const SynthOptions& options, std::uint64_t seed) {
  const auto d = static_cast<Eigen::Index>(options.embed_dim);
  Rng rng = make_rng(seed, "synth/embeddings");
  std::normal_distribution<double> normal(0.0, kComponentStd);
  std::bernoulli_distribution pick(0.5);
  auto draw = [&](Eigen::Index n, double shift) {
    Matrix m(d, n);
    for (Eigen::Index j = 0; j < n; ++j) {
      const double sign = pick(rng) ? 1.0 : -1.0;
      for (Eigen::Index i = 0; i < d; ++i) {
        const double mean = sign * kComponentOffset * (i % 2 == 0 ? 1.0 : -1.0);
        m(i, j) = mean + normal(rng) + shift;
      }
    }
    return m;
  };
  EmbeddingSet set;
  set.train = draw(static_cast<Eigen::Index>(options.embed_train), 0.0);
  const Matrix flawless = draw(static_cast<Eigen::Index>(options.embed_test_flawless), 0.0);
  const Matrix anomalous =
      draw(static_cast<Eigen::Index>(options.embed_test_anomalous), kAnomalyShift);
  set.test.resize(d, flawless.cols() + anomalous.cols());
  set.test << flawless, anomalous;
  set.test_labels.assign(static_cast<std::size_t>(flawless.cols()), Label::flawless);
  set.test_labels.insert(set.test_labels.end(), static_cast<std::size_t>(anomalous.cols()),
                         Label::anomalous);
  return set;
}

BackboneConfig desk_backbone() {
  BackboneConfig cfg;
  cfg.scales = {64, 32};
  cfg.channels = {16, 32, 32, 32, 32};
  cfg.attention.kind = AttentionKind::se;
  cfg.attention.reduction = 4;
  cfg.attention.spatial_kernel = 3;
  cfg.ab_flags = {true, true, true};
  return cfg;
}

RunConfig desk_image_config(const fs::path& out_dir, const SynthOptions& options,
                            std::uint64_t seed) {
  RunConfig cfg = default_run_config();
  cfg.seed = seed;
  cfg.data_root = (out_dir / "images").string();
  cfg.train.category = options.category;
  cfg.train.mode = TrainMode::images;
  cfg.train.backbone = desk_backbone();
  cfg.train.backbone.pretrained_path = (out_dir / "backbone_surrogate.bin").string();
  cfg.train.epochs = 5;
  cfg.train.runs = 1;
  cfg.train.batch_size = 16;
  cfg.train.n_test_transforms = 4;
  cfg.eval_n_transforms = 4;
  return cfg;
}

RunConfig desk_embedding_config(const fs::path& out_dir, std::uint64_t seed) {
  RunConfig cfg = default_run_config();
  cfg.seed = seed;
  cfg.data_embeddings = (out_dir / "embeddings").string();
  cfg.train.category = "gmm";
  cfg.train.mode = TrainMode::embeddings;
  cfg.train.epochs = 50;
  cfg.train.runs = 1;
  return cfg;
}

void synth_all(const fs::path& out, const SynthOptions& options, std::uint64_t seed) {
  make_dirs(out);
  const fs::path out_dir = fs::absolute(out);
  synth_image_dataset(out_dir / "images", options, derive_seed(seed, "synth/images"));
  write_embeddings(synth_embeddings(options, derive_seed(seed, "synth/gmm")),
                   out_dir / "embeddings");
  write_archive(make_surrogate_weights(desk_backbone(), derive_seed(seed, "synth/weights")),
                out_dir / "backbone_surrogate.bin");
  write_text(out_dir / "desk_images.toml", to_config_text(desk_image_config(out_dir, options, seed)));
  write_text(out_dir / "desk_embeddings.toml", to_config_text(desk_embedding_config(out_dir, seed)));
}

}  // namespace attnflow
