#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>

#include "attnflow/config.hpp"
#include "attnflow/data.hpp"
#include "attnflow/image.hpp"

namespace attnflow {

struct SynthOptions {
  std::string category = "synthetic";
  std::size_t image_size = 64;
  std::size_t train_good = 200;
  std::size_t test_good = 50;
  std::size_t test_defect = 50;
  std::size_t embed_dim = 8;
  std::size_t embed_train = 2048;
  std::size_t embed_test_flawless = 512;
  std::size_t embed_test_anomalous = 512;
};

/// Rotation-symmetric ring texture with seeded phase, brightness and noise.
RgbImage synth_flawless(std::size_t size, std::uint64_t seed);

/// A flawless image with a coloured blotch or a dark occluding rectangle.
RgbImage synth_anomalous(std::size_t size, std::uint64_t seed);

/// Writes <root>/<category>/{train/good,test/good,test/defect}/NNNN.png.
void synth_image_dataset(const std::filesystem::path& root, const SynthOptions& options,
                         std::uint64_t seed);

/// Two-component Gaussian mixture; anomalous test vectors are mixture draws
/// shifted by five component standard deviations along every coordinate.
EmbeddingSet synth_embeddings(const SynthOptions& options, std::uint64_t seed);

/// Small backbone used with the synthetic images.
BackboneConfig desk_backbone();

/// Ready-to-run configs for the two fixtures, rooted at out_dir.
RunConfig desk_image_config(const std::filesystem::path& out_dir, const SynthOptions& options,
                            std::uint64_t seed);
RunConfig desk_embedding_config(const std::filesystem::path& out_dir, std::uint64_t seed);

/// Everything: images/, embeddings/, backbone_surrogate.bin, desk_images.toml
/// and desk_embeddings.toml under out_dir. IoError when out_dir is unwritable.
void synth_all(const std::filesystem::path& out_dir, const SynthOptions& options,
               std::uint64_t seed);

}  // namespace attnflow
