#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "attnflow/param.hpp"
#include "attnflow/tensor.hpp"

namespace attnflow {

using RowMatrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ConvSpec {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Output extent of a strided window over `in` samples; ConfigError when the
/// window does not fit.
std::size_t window_output(std::size_t in, std::size_t kernel, std::size_t stride,
                          std::size_t padding, const std::string& what);

struct ConvCache {
  RowMatrix cols;  // (in_c * k * k) x (out_h * out_w)
  std::size_t in_height = 0;
  std::size_t in_width = 0;
};

/// 2-D cross-correlation with zero padding, lowered to im2col + GEMM.
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const ConvSpec& spec, const std::string& name);

  const ConvSpec& spec() const noexcept { return spec_; }
  Param& weight() { return weight_; }
  Param& bias() { return bias_; }
  const Param& weight() const { return weight_; }
  const Param& bias() const { return bias_; }

  FeatureMap forward(const FeatureMap& x, ConvCache* cache = nullptr) const;

  /// Returns dL/dx; parameter gradients accumulate only when requested.
  FeatureMap backward(const ConvCache& cache, const FeatureMap& grad_out,
                      bool param_grads);

 private:
  ConvSpec spec_;
  Param weight_;  // out x (in * k * k)
  Param bias_;
};

FeatureMap relu(const FeatureMap& x);

/// Masks `grad` where the rectified output is zero.
FeatureMap relu_backward(const FeatureMap& output, const FeatureMap& grad);

struct PoolCache {
  std::vector<std::size_t> argmax;  // flat input index per output element
  std::size_t in_height = 0;
  std::size_t in_width = 0;
};

FeatureMap max_pool(const FeatureMap& x, std::size_t kernel, std::size_t stride,
                    PoolCache* cache = nullptr);
FeatureMap max_pool_backward(const PoolCache& cache, const FeatureMap& grad_out,
                             std::size_t channels);

/// Per-channel spatial mean.
std::vector<Real> global_average_pool(const FeatureMap& x);

}  // namespace attnflow
