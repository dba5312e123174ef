#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "attnflow/backbone.hpp"
#include "attnflow/image.hpp"
#include "attnflow/tensor.hpp"
#include "attnflow/trainer.hpp"

namespace attnflow {

/// Rectified Grad-CAM map over one layer, before normalisation.
struct ActivationMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<Real> values;  // row-major, all >= 0
  std::string layer_id;
  std::string image_id;

  Real at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
};

/// relu(sum_k alpha_k A_k) with alpha_k the spatial mean of the gradient of
/// channel k.
ActivationMap gradcam_map(const FeatureMap& activations, const FeatureMap& gradients);

/// Grad-CAM of the single-view anomaly score (identity transform) at the
/// target layer. The model must have gradients enabled.
ActivationMap gradcam(const RgbImage& image, Model& model, const LayerHandle& target,
                      const std::string& image_id = {});

/// Min-max normalisation to [0, 1]; an all-zero map stays zero.
std::vector<Real> normalize_map(const ActivationMap& map);

/// Blue -> cyan -> green -> yellow -> red colour for v in [0, 1].
std::array<std::uint8_t, 3> colormap(Real v);

/// Colours the normalised map at its own resolution.
RgbImage colorize(const ActivationMap& map);

/// Normalised map resized to the image, coloured and blended at alpha 0.5.
RgbImage heatmap_overlay(const ActivationMap& map, const RgbImage& image);

/// Writes heatmap_overlay as PNG; IoError when the path is unwritable.
void export_heatmap(const ActivationMap& map, const RgbImage& image,
                    const std::filesystem::path& out_path);

/// `<image_stem>_gradcam.png` inside out_dir.
std::filesystem::path heatmap_path(const std::filesystem::path& image,
                                   const std::filesystem::path& out_dir);

}  // namespace attnflow
