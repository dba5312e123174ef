#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "attnflow/archive.hpp"
#include "attnflow/attention.hpp"
#include "attnflow/image.hpp"
#include "attnflow/layers.hpp"
#include "attnflow/rng.hpp"

namespace attnflow {

inline constexpr std::size_t kConvStages = 5;
inline constexpr std::size_t kAttentionSites = 3;

/// Conv stage index after which each attention block (AB1, AB2, AB3) sits:
/// early, mid and late depth.
inline constexpr std::array<std::size_t, kAttentionSites> kAttentionStage{0, 2, 4};

struct StageSpec {
  ConvSpec conv;
  bool pool = false;  // 3x3 stride-2 max-pool closing the stage
};

struct BackboneConfig {
  std::array<bool, kAttentionSites> ab_flags{false, false, false};
  AttentionConfig attention;
  std::vector<int> scales{448, 224, 112};
  std::vector<std::size_t> channels{64, 192, 384, 256, 256};
  std::string pretrained_path;

  bool any_attention() const;
  bool attention_at(std::size_t site) const;
  std::size_t per_scale_length() const { return channels.empty() ? 0 : channels.back(); }
  std::size_t embed_dim() const { return per_scale_length() * scales.size(); }

  /// AlexNet-style geometry: 11x11/4 conv + pool, 5x5 conv + pool, three 3x3 convs.
  std::vector<StageSpec> stages() const;

  /// Spatial extent (height == width) of the last conv stage at a scale.
  std::size_t final_extent(int scale) const;

  void validate() const;
};

struct FeatureEmbedding {
  std::vector<Real> values;
  std::string source_image_id;
  std::string transform_id;
};

/// Forward intermediates of one scale, kept for backpropagation.
struct StageTape {
  ConvCache conv;
  FeatureMap activated;  // ReLU output
  std::optional<AttentionCache> attention;
  std::optional<PoolCache> pool;
};

struct ScaleTape {
  std::vector<StageTape> stages;
  FeatureMap final_map;
};

struct LayerHandle {
  std::size_t scale_index = 0;
  std::size_t stage_index = 0;
  bool after_attention = false;
  std::string name;
};

/// Feature extractor: five conv stages run per input scale, each scale's final
/// map globally average-pooled and the results concatenated.
class Backbone {
 public:
  explicit Backbone(const BackboneConfig& cfg);

  const BackboneConfig& config() const noexcept { return cfg_; }

  /// Copies conv weights out of a pretrained archive; attention untouched.
  void load_pretrained(const Archive& weights);
  void init_attention(Rng& rng);
  void saturate_attention(double preactivation = 40.0);

  std::vector<Conv2d>& convs() { return convs_; }
  const std::vector<Conv2d>& convs() const { return convs_; }
  std::optional<AttentionBlock>& attention(std::size_t site) { return attention_[site]; }
  const std::optional<AttentionBlock>& attention(std::size_t site) const {
    return attention_[site];
  }

  ParamList conv_params();
  ConstParamList conv_params() const;
  ParamList attention_params();
  ConstParamList attention_params() const;

  /// Runs the conv stages on one scale; returns the final (post-AB3) map.
  FeatureMap forward_scale(const FeatureMap& input, ScaleTape* tape = nullptr) const;

  /// Embedding from per-scale preprocessed inputs.
  std::vector<Real> embed(const std::vector<FeatureMap>& scaled_inputs,
                          std::vector<ScaleTape>* tapes = nullptr) const;

  /// Backpropagates dL/dembedding; accumulates attention gradients and, when
  /// `conv_grads` is set, conv gradients.
  void backward(std::vector<ScaleTape>& tapes, std::span<const Real> grad_embedding,
                bool conv_grads);

 private:
  BackboneConfig cfg_;
  std::vector<StageSpec> specs_;
  std::vector<Conv2d> convs_;
  std::array<std::optional<AttentionBlock>, kAttentionSites> attention_;
};

/// Preprocesses the image at every configured scale and embeds it.
FeatureEmbedding extract_features(const RgbImage& image, const Backbone& backbone,
                                  const std::string& image_id = {},
                                  const std::string& transform_id = "identity");

/// One handle per scale, pointing at the output of the last conv stage (after
/// AB3 rescaling when AB3 is enabled).
std::vector<LayerHandle> gradcam_target_layer(const BackboneConfig& cfg);

/// Seeded He-normal stand-in for ImageNet weights, same tensor names as a
/// converted torchvision checkpoint.
Archive make_surrogate_weights(const BackboneConfig& cfg, std::uint64_t seed);

/// Loads the archive named by cfg.pretrained_path (local path or http(s) URL,
/// fetched into the cache directory).
Archive load_pretrained_archive(const std::string& path_or_url);

/// $ATTNFLOW_CACHE, else $XDG_CACHE_HOME/attnflow, else ~/.cache/attnflow.
std::filesystem::path cache_directory();

// Residual-stage attention insertion.

struct PlainStage {
  Conv2d conv;
};

/// out = identity(x) + attention(transform(x)), transform = conv -> ReLU -> conv.
struct ResidualStage {
  std::string name;
  Conv2d first;
  Conv2d second;
  std::optional<AttentionBlock> attention;

  FeatureMap transform(const FeatureMap& x) const;
  FeatureMap forward(const FeatureMap& x) const;
};

using Stage = std::variant<PlainStage, ResidualStage>;

ResidualStage make_residual_stage(std::size_t channels, const std::string& name, Rng& rng);

/// Wraps the non-identity branch of a residual stage with an attention block,
/// applied before the summation. Kind none yields the plain residual stage;
/// stages without a residual branch are a ConfigError.
ResidualStage insert_attention_residual(const Stage& stage, const AttentionConfig& attention,
                                        Rng& rng);

}  // namespace attnflow
