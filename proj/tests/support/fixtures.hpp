#pragma once

// Small on-disk fixtures generated once per test process.

#include <filesystem>
#include <string>
#include <unistd.h>

#include "attnflow/archive.hpp"
#include "attnflow/synth.hpp"
#include "attnflow/trainer.hpp"

namespace fixtures {

namespace fs = std::filesystem;

inline fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() /
                       ("attnflow_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

inline attnflow::SynthOptions tiny_options() {
  attnflow::SynthOptions o;
  o.category = "tiny";
  o.train_good = 12;
  o.test_good = 5;
  o.test_defect = 5;
  return o;
}

/// <root>/tiny/{train/good,test/good,test/defect} with 12 + 5 + 5 images.
inline const fs::path& tiny_root() {
  static const fs::path root = [] {
    const fs::path r = scratch("tiny");
    attnflow::synth_image_dataset(r, tiny_options(), 17);
    return r;
  }();
  return root;
}

inline attnflow::TrainConfig tiny_train_config(attnflow::AttentionKind kind) {
  attnflow::TrainConfig cfg;
  cfg.category = "tiny";
  cfg.mode = attnflow::TrainMode::images;
  cfg.backbone = attnflow::desk_backbone();
  cfg.backbone.attention.kind = kind;
  cfg.flow.blocks = 4;
  cfg.epochs = 1;
  cfg.runs = 1;
  cfg.batch_size = 6;
  cfg.n_test_transforms = 2;
  cfg.seed = 3;
  return cfg;
}

inline const attnflow::Archive& tiny_weights() {
  static const attnflow::Archive a = attnflow::make_surrogate_weights(attnflow::desk_backbone(), 99);
  return a;
}

}  // namespace fixtures
