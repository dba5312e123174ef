#include "attnflow/explain.hpp"

#include <algorithm>
#include <cmath>

#include <opencv2/imgproc.hpp>

#include "attnflow/error.hpp"

namespace attnflow {

namespace fs = std::filesystem;

ActivationMap gradcam_map(const FeatureMap& activations, const FeatureMap& gradients) {
  if (!activations.same_shape(gradients)) {
    throw ConfigError("gradcam: activation shape " + activations.shape_string() +
                      " differs from gradient shape " + gradients.shape_string());
  }
  const std::size_t plane = activations.plane();
  ActivationMap map;
  map.height = activations.height();
  map.width = activations.width();
  map.values.assign(plane, 0.0);
  for (std::size_t k = 0; k < activations.channels(); ++k) {
    const auto g = gradients.channel(k);
    Real alpha = 0.0;
    for (Real v : g) alpha += v;
    alpha /= static_cast<Real>(plane);
    const auto a = activations.channel(k);
    for (std::size_t i = 0; i < plane; ++i) map.values[i] += alpha * a[i];
  }
  for (Real& v : map.values) v = std::max<Real>(v, 0.0);
  return map;
}

ActivationMap gradcam(const RgbImage& image, Model& model, const LayerHandle& target,
                      const std::string& image_id) {
  if (!model.grad_enabled()) {
    throw ConfigError("gradcam needs gradient capture; enable gradients on the model "
                      "(gradient-enabled scoring mode) before calling it");
  }
  Backbone& bb = model.backbone();
  const auto& cfg = bb.config();
  if (target.scale_index >= cfg.scales.size() || target.stage_index != kConvStages - 1) {
    throw ConfigError("gradcam: layer '" + target.name +
                      "' is not a registered target (see gradcam_target_layer)");
  }
  std::vector<ScaleTape> tapes;
  const auto emb = bb.embed(preprocess(image, cfg.scales), &tapes);
  const Matrix y = to_matrix(emb);
  Matrix grad_y;
  nll_mean_backward(model.flow(), y, &grad_y);
  zero_grads(model.flow().params());

  const FeatureMap& acts = tapes[target.scale_index].final_map;
  FeatureMap grads(acts.channels(), acts.height(), acts.width());
  const std::size_t offset = target.scale_index * cfg.per_scale_length();
  const Real inv_plane = 1.0 / static_cast<Real>(acts.plane());
  for (std::size_t c = 0; c < acts.channels(); ++c) {
    const Real g = grad_y(static_cast<Eigen::Index>(offset + c), 0) * inv_plane;
    for (Real& v : grads.channel(c)) v = g;
  }
  ActivationMap map = gradcam_map(acts, grads);
  map.layer_id = target.name;
  map.image_id = image_id;
  return map;
}

std::vector<Real> normalize_map(const ActivationMap& map) {
  for (Real v : map.values) {
    if (!std::isfinite(v)) throw NumericalError("gradcam map contains non-finite values");
  }
  std::vector<Real> out(map.values.size(), 0.0);
  if (out.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(map.values.begin(), map.values.end());
  const Real lo = *lo_it, hi = *hi_it;
  if (hi == 0.0) return out;
  const Real range = hi - lo;
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = range > 0.0 ? (map.values[i] - lo) / range : 1.0;
  }
  return out;
}

std::array<std::uint8_t, 3> colormap(Real v) {
  static constexpr std::array<std::array<double, 3>, 5> stops{{
      {0, 0, 255}, {0, 255, 255}, {0, 255, 0}, {255, 255, 0}, {255, 0, 0}}};
  v = std::clamp<Real>(v, 0.0, 1.0);
  const Real pos = v * 4.0;
  const auto i = std::min<std::size_t>(static_cast<std::size_t>(pos), 3);
  const Real t = pos - static_cast<Real>(i);
  std::array<std::uint8_t, 3> out{};
  for (std::size_t c = 0; c < 3; ++c) {
    out[c] = static_cast<std::uint8_t>(
        std::lround(stops[i][c] + t * (stops[i + 1][c] - stops[i][c])));
  }
  return out;
}

RgbImage colorize(const ActivationMap& map) {
  const auto norm = normalize_map(map);
  RgbImage out(map.width, map.height);
  for (std::size_t i = 0; i < norm.size(); ++i) {
    const auto rgb = colormap(norm[i]);
    std::copy(rgb.begin(), rgb.end(), out.pixels.begin() + static_cast<std::ptrdiff_t>(i * 3));
  }
  return out;
}

RgbImage heatmap_overlay(const ActivationMap& map, const RgbImage& image) {
  auto norm = normalize_map(map);
  cv::Mat small(static_cast<int>(map.height), static_cast<int>(map.width), CV_64F, norm.data());
  cv::Mat full;
  cv::resize(small, full, cv::Size(static_cast<int>(image.width), static_cast<int>(image.height)),
             0, 0, cv::INTER_LINEAR);
  RgbImage out(image.width, image.height);
  for (std::size_t y = 0; y < image.height; ++y) {
    for (std::size_t x = 0; x < image.width; ++x) {
      const auto rgb = colormap(full.at<double>(static_cast<int>(y), static_cast<int>(x)));
      for (std::size_t c = 0; c < 3; ++c) {
        out.at(y, x, c) = static_cast<std::uint8_t>(
            std::lround(0.5 * image.at(y, x, c) + 0.5 * rgb[c]));
      }
    }
  }
  return out;
}

void export_heatmap(const ActivationMap& map, const RgbImage& image, const fs::path& out_path) {
  write_png(heatmap_overlay(map, image), out_path);
}

fs::path heatmap_path(const fs::path& image, const fs::path& out_dir) {
  return out_dir / (image.stem().string() + "_gradcam.png");
}

}  // namespace attnflow
