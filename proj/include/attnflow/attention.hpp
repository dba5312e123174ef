#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include "attnflow/param.hpp"
#include "attnflow/rng.hpp"
#include "attnflow/tensor.hpp"

namespace attnflow {

enum class AttentionKind { none, se, cbam };

AttentionKind parse_attention_kind(std::string_view text);
std::string to_string(AttentionKind kind);

struct AttentionConfig {
  AttentionKind kind = AttentionKind::none;
  int reduction = 16;      // channel bottleneck factor r
  int spatial_kernel = 7;  // CBAM spatial conv size k, odd
  double init_std = 0.01;
  double init_gate_bias = 0.0;  // added to the gate pre-activation biases at init

  /// Throws ConfigError unless r >= 1, k is odd and channels / r >= 1.
  void validate(std::size_t channels) const;
};

/// Intermediate values of a forward pass, kept for the backward pass.
struct AttentionCache {
  FeatureMap input;
  std::vector<Real> avg_pool;
  std::vector<Real> max_pool;
  std::vector<std::size_t> max_pool_index;
  std::vector<Real> hidden_avg_pre;
  std::vector<Real> hidden_max_pre;
  std::vector<Real> channel_gate;
  FeatureMap refined;     // channel-gated input (CBAM)
  FeatureMap descriptor;  // 2 x H x W channel-mean / channel-max (CBAM)
  std::vector<std::size_t> channel_argmax;
  FeatureMap spatial_gate;  // 1 x H x W (CBAM)
};

/// Trainable SE or CBAM unit for a fixed channel count.
///
/// SE:   y = x * sigmoid(W2 relu(W1 gap(x) + b1) + b2)
/// CBAM: x' = x * sigmoid(mlp(avgpool x) + mlp(maxpool x)),
///       y  = x' * sigmoid(conv_k([mean_c x'; max_c x']))
/// The MLP is C -> C/r -> C with a rectifier in between and shared between
/// the two pooled descriptors in CBAM.
class AttentionBlock {
 public:
  AttentionBlock() = default;
  AttentionBlock(const AttentionConfig& cfg, std::size_t channels,
                 const std::string& name);

  AttentionKind kind() const noexcept { return kind_; }
  std::size_t channels() const noexcept { return channels_; }
  std::size_t hidden() const noexcept { return hidden_; }
  int spatial_kernel() const noexcept { return kernel_; }
  const std::string& name() const noexcept { return name_; }

  /// Small-variance normal weights, zero biases plus cfg.init_gate_bias on
  /// the gate-producing biases.
  void initialize(Rng& rng, double init_std, double gate_bias = 0.0);

  /// Zeroes the gate-producing weights and sets every gate pre-activation
  /// to `preactivation`. The default makes every gate round to exactly 1.0
  /// in double precision, so the block becomes the identity.
  void saturate(double preactivation = 40.0);

  FeatureMap forward(const FeatureMap& x, AttentionCache* cache = nullptr) const;

  /// Accumulates parameter gradients and returns dL/dx.
  FeatureMap backward(const AttentionCache& cache, const FeatureMap& grad_out);

  /// Per-channel gate in (0, 1): SE or CBAM channel attention.
  std::vector<Real> channel_scale(const FeatureMap& x,
                                  AttentionCache* cache = nullptr) const;

  /// 1 x H x W CBAM spatial gate in (0, 1).
  FeatureMap spatial_scale(const FeatureMap& x, AttentionCache* cache = nullptr) const;

  ParamList params();
  ConstParamList params() const;

  Param& mlp_w1() { return mlp_w1_; }
  Param& mlp_b1() { return mlp_b1_; }
  Param& mlp_w2() { return mlp_w2_; }
  Param& mlp_b2() { return mlp_b2_; }
  Param& conv_w() { return conv_w_; }
  Param& conv_b() { return conv_b_; }
  const Param& mlp_w1() const { return mlp_w1_; }
  const Param& mlp_b1() const { return mlp_b1_; }
  const Param& mlp_w2() const { return mlp_w2_; }
  const Param& mlp_b2() const { return mlp_b2_; }
  const Param& conv_w() const { return conv_w_; }
  const Param& conv_b() const { return conv_b_; }

 private:
  void check_input(const FeatureMap& x) const;
  std::vector<Real> mlp(const std::vector<Real>& v, std::vector<Real>* hidden_pre) const;
  void mlp_backward(const std::vector<Real>& v, const std::vector<Real>& hidden_pre,
                    const std::vector<Real>& grad_out, std::vector<Real>& grad_in);

  AttentionKind kind_ = AttentionKind::none;
  std::size_t channels_ = 0;
  std::size_t hidden_ = 0;
  int kernel_ = 7;
  std::string name_;
  Param mlp_w1_, mlp_b1_, mlp_w2_, mlp_b2_;
  Param conv_w_, conv_b_;
};

FeatureMap se_block(const FeatureMap& x, const AttentionBlock& state);
std::vector<Real> cbam_channel_attention(const FeatureMap& x, const AttentionBlock& state);
FeatureMap cbam_spatial_attention(const FeatureMap& x, const AttentionBlock& state);
FeatureMap cbam_block(const FeatureMap& x, const AttentionBlock& state);

inline Real sigmoid(Real v) {
  return v >= 0 ? 1.0 / (1.0 + std::exp(-v)) : std::exp(v) / (1.0 + std::exp(v));
}

}  // namespace attnflow
