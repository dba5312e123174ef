#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "attnflow/param.hpp"
#include "attnflow/rng.hpp"
#include "attnflow/tensor.hpp"

namespace attnflow {

using Matrix = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic>;  // column = sample
using Vector = Eigen::Matrix<Real, Eigen::Dynamic, 1>;

struct FlowConfig {
  std::size_t dim = 768;
  std::size_t blocks = 8;
  double clamp = 3.0;           // soft clamp bound alpha on scale exponents
  std::size_t hidden_factor = 2;  // subnet hidden width = hidden_factor * dim

  void validate() const;
};

/// alpha * 2/pi * atan(s * pi / (2 alpha)), strictly inside (-alpha, alpha).
Real soft_clamp(Real s, Real alpha);
Real soft_clamp_derivative(Real s, Real alpha);

struct SubnetCache {
  Matrix input;
  Matrix hidden_pre;
};

/// Two-layer fully connected net emitting [scale exponent; translation].
class Subnet {
 public:
  Subnet() = default;
  Subnet(std::size_t in, std::size_t hidden, std::size_t out, const std::string& name);

  std::size_t in() const noexcept { return in_; }
  std::size_t out() const noexcept { return out_; }

  Matrix forward(const Matrix& x, SubnetCache* cache = nullptr) const;
  Matrix backward(const SubnetCache& cache, const Matrix& grad_out);

  /// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) first layer; the last layer is
  /// zeroed unless `zero_last` is false.
  void initialize(Rng& rng, bool zero_last);

  ParamList params() { return {&w1_, &b1_, &w2_, &b2_}; }
  ConstParamList params() const { return {&w1_, &b1_, &w2_, &b2_}; }

 private:
  std::size_t in_ = 0, hidden_ = 0, out_ = 0;
  Param w1_, b1_, w2_, b2_;  // w1: hidden x in, w2: 2*out x hidden
};

struct BlockCache {
  Matrix permuted;
  Matrix scale1, scale2;  // clamp inputs
  Matrix exp1, exp2;      // exp(clamped)
  SubnetCache net1, net2;
};

/// Affine coupling block. After a fixed permutation u = P y, split u = (u1, u2):
///   v2 = u2 * exp(clamp(s2(u1))) + t2(u1)
///   v1 = u1 * exp(clamp(s1(v2))) + t1(v2)
/// log|det J| = sum clamp(s1) + sum clamp(s2).
class CouplingBlock {
 public:
  CouplingBlock() = default;
  CouplingBlock(std::size_t dim, std::size_t hidden, double clamp, std::size_t index,
                Rng& rng);

  std::size_t dim() const noexcept { return dim_; }
  std::size_t split() const noexcept { return d1_; }
  double clamp() const noexcept { return clamp_; }
  const std::vector<std::size_t>& permutation() const noexcept { return perm_; }
  const std::vector<std::size_t>& inverse_permutation() const noexcept { return inv_perm_; }
  void set_permutation(std::vector<std::size_t> perm);

  /// Returns the block output; adds per-sample log-dets into `log_det`.
  Matrix forward(const Matrix& y, Vector& log_det, BlockCache* cache = nullptr) const;
  Matrix inverse(const Matrix& z) const;

  /// Given dL/doutput and dL/dlog_det per sample, accumulates parameter
  /// gradients and returns dL/dinput.
  Matrix backward(const BlockCache& cache, const Matrix& grad_out, const Vector& grad_log_det);

  Subnet& net1() { return net1_; }
  Subnet& net2() { return net2_; }
  ParamList params();
  ConstParamList params() const;

 private:
  std::size_t dim_ = 0, d1_ = 0, d2_ = 0;
  double clamp_ = 3.0;
  std::vector<std::size_t> perm_, inv_perm_;
  Subnet net1_;  // conditions on v2, transforms u1
  Subnet net2_;  // conditions on u1, transforms u2
};

struct FlowTape {
  std::vector<BlockCache> blocks;
};

struct FlowResult {
  Matrix z;
  Vector log_det;
};

/// Stack of coupling blocks mapping embeddings to a standard-normal latent.
class FlowModel {
 public:
  FlowModel() = default;
  FlowModel(const FlowConfig& cfg, Rng& rng);

  const FlowConfig& config() const noexcept { return cfg_; }
  std::size_t dim() const noexcept { return cfg_.dim; }
  std::vector<CouplingBlock>& blocks() { return blocks_; }
  const std::vector<CouplingBlock>& blocks() const { return blocks_; }

  /// Throws ConfigError on a dimension mismatch and NumericalError naming the
  /// first block whose output is non-finite.
  FlowResult forward(const Matrix& y, FlowTape* tape = nullptr) const;
  Matrix inverse(const Matrix& z) const;
  Matrix backward(const FlowTape& tape, const Matrix& grad_z, const Vector& grad_log_det);

  /// Re-draws every subnet layer (including the final one) at random.
  void randomize(Rng& rng);

  ParamList params();
  ConstParamList params() const;

 private:
  FlowConfig cfg_;
  std::vector<CouplingBlock> blocks_;
};

struct LatentVector {
  std::vector<Real> z;
  Real log_det = 0.0;
};

LatentVector flow_forward(std::span<const Real> y, const FlowModel& model);
std::vector<Real> flow_inverse(const LatentVector& z, const FlowModel& model);

/// ||z||^2 / 2 - log_det.
Real nll_from_latent(const LatentVector& latent);
Real nll_loss(std::span<const Real> y, const FlowModel& model);

/// -||z||^2 / 2 - d/2 log(2 pi) + log_det.
Real log_likelihood(std::span<const Real> y, const FlowModel& model);

/// Per-column negative log-likelihood without the constant.
Vector nll_batch(const Matrix& y, const FlowModel& model);

/// Mean nll over the columns of y; accumulates its parameter gradients and
/// optionally returns dL/dy.
Real nll_mean_backward(FlowModel& model, const Matrix& y, Matrix* grad_y = nullptr);

Matrix to_matrix(std::span<const Real> v);

}  // namespace attnflow
