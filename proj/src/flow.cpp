#include "attnflow/flow.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "attnflow/error.hpp"

namespace attnflow {

namespace {

using Index = Eigen::Index;
using RowMajorMatrixXd = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Eigen::Map<const RowMajorMatrixXd> as_matrix(const Param& p, std::size_t rows,
                                             std::size_t cols) {
  return {p.value.data(), static_cast<Index>(rows), static_cast<Index>(cols)};
}

Eigen::Map<RowMajorMatrixXd> as_grad(Param& p, std::size_t rows, std::size_t cols) {
  return {p.grad.data(), static_cast<Index>(rows), static_cast<Index>(cols)};
}

Matrix clamp_matrix(const Matrix& s, Real alpha) {
  return s.unaryExpr([alpha](Real v) { return soft_clamp(v, alpha); });
}

Matrix clamp_derivative_matrix(const Matrix& s, Real alpha) {
  return s.unaryExpr([alpha](Real v) { return soft_clamp_derivative(v, alpha); });
}

}  // namespace

void FlowConfig::validate() const {
  if (dim < 2) throw ConfigError("flow.dim must be >= 2, got " + std::to_string(dim));
  if (blocks < 1) throw ConfigError("flow.blocks must be >= 1");
  if (!(clamp > 0.0)) throw ConfigError("flow.clamp must be positive");
  if (hidden_factor < 1) throw ConfigError("flow.hidden_factor must be >= 1");
}

Real soft_clamp(Real s, Real alpha) {
  return 2.0 * alpha / std::numbers::pi * std::atan(s * std::numbers::pi / (2.0 * alpha));
}

Real soft_clamp_derivative(Real s, Real alpha) {
  const Real u = s * std::numbers::pi / (2.0 * alpha);
  return 1.0 / (1.0 + u * u);
}

Subnet::Subnet(std::size_t in, std::size_t hidden, std::size_t out, const std::string& name)
    : in_(in),
      hidden_(hidden),
      out_(out),
      w1_(name + ".w1", {hidden, in}),
      b1_(name + ".b1", {hidden}),
      w2_(name + ".w2", {2 * out, hidden}),
      b2_(name + ".b2", {2 * out}) {}

void Subnet::initialize(Rng& rng, bool zero_last) {
  auto fill = [&rng](Param& p, std::size_t fan_in) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (auto& v : p.value) v = u(rng);
  };
  fill(w1_, in_);
  fill(b1_, in_);
  if (zero_last) {
    std::fill(w2_.value.begin(), w2_.value.end(), 0.0);
    std::fill(b2_.value.begin(), b2_.value.end(), 0.0);
  } else {
    fill(w2_, hidden_);
    fill(b2_, hidden_);
  }
  for (auto* p : params()) p->zero_grad();
}

Matrix Subnet::forward(const Matrix& x, SubnetCache* cache) const {
  Matrix pre = as_matrix(w1_, hidden_, in_) * x;
  pre.colwise() += Eigen::Map<const Vector>(b1_.value.data(), static_cast<Index>(hidden_));
  Matrix out = as_matrix(w2_, 2 * out_, hidden_) * pre.cwiseMax(0.0);
  out.colwise() += Eigen::Map<const Vector>(b2_.value.data(), static_cast<Index>(2 * out_));
  if (cache) {
    cache->input = x;
    cache->hidden_pre = std::move(pre);
  }
  return out;
}

Matrix Subnet::backward(const SubnetCache& cache, const Matrix& grad_out) {
  const Matrix hidden = cache.hidden_pre.cwiseMax(0.0);
  as_grad(w2_, 2 * out_, hidden_).noalias() += grad_out * hidden.transpose();
  Eigen::Map<Vector>(b2_.grad.data(), static_cast<Index>(2 * out_)) += grad_out.rowwise().sum();
  Matrix grad_hidden = as_matrix(w2_, 2 * out_, hidden_).transpose() * grad_out;
  grad_hidden.array() *= (cache.hidden_pre.array() > 0.0).cast<Real>();
  as_grad(w1_, hidden_, in_).noalias() += grad_hidden * cache.input.transpose();
  Eigen::Map<Vector>(b1_.grad.data(), static_cast<Index>(hidden_)) +=
      grad_hidden.rowwise().sum();
  return as_matrix(w1_, hidden_, in_).transpose() * grad_hidden;
}

CouplingBlock::CouplingBlock(std::size_t dim, std::size_t hidden, double clamp,
                             std::size_t index, Rng& rng)
    : dim_(dim), d1_(dim / 2), d2_(dim - dim / 2), clamp_(clamp) {
  const std::string name = "flow.block" + std::to_string(index);
  net1_ = Subnet(d2_, hidden, d1_, name + ".net1");
  net2_ = Subnet(d1_, hidden, d2_, name + ".net2");
  std::vector<std::size_t> perm(dim);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  std::shuffle(perm.begin(), perm.end(), rng);
  set_permutation(std::move(perm));
  net1_.initialize(rng, true);
  net2_.initialize(rng, true);
}

void CouplingBlock::set_permutation(std::vector<std::size_t> perm) {
  if (perm.size() != dim_) throw ConfigError("permutation length does not match flow dim");
  std::vector<std::size_t> inv(dim_, dim_);
  for (std::size_t i = 0; i < dim_; ++i) {
    if (perm[i] >= dim_ || inv[perm[i]] != dim_) {
      throw ConfigError("coupling permutation is not a bijection");
    }
    inv[perm[i]] = i;
  }
  perm_ = std::move(perm);
  inv_perm_ = std::move(inv);
}

ParamList CouplingBlock::params() {
  ParamList out = net1_.params();
  for (auto* p : net2_.params()) out.push_back(p);
  return out;
}

ConstParamList CouplingBlock::params() const {
  ConstParamList out = net1_.params();
  for (const auto* p : net2_.params()) out.push_back(p);
  return out;
}

Matrix CouplingBlock::forward(const Matrix& y, Vector& log_det, BlockCache* cache) const {
  const Index n = y.cols();
  const auto d1 = static_cast<Index>(d1_);
  const auto d2 = static_cast<Index>(d2_);
  Matrix u(y.rows(), n);
  for (std::size_t i = 0; i < dim_; ++i) {
    u.row(static_cast<Index>(i)) = y.row(static_cast<Index>(perm_[i]));
  }

  SubnetCache* c2 = cache ? &cache->net2 : nullptr;
  const Matrix o2 = net2_.forward(u.topRows(d1), c2);
  const Matrix s2 = o2.topRows(d2);
  const Matrix clamped2 = clamp_matrix(s2, clamp_);
  const Matrix e2 = clamped2.array().exp().matrix();
  Matrix out(y.rows(), n);
  out.bottomRows(d2) = u.bottomRows(d2).cwiseProduct(e2) + o2.bottomRows(d2);

  SubnetCache* c1 = cache ? &cache->net1 : nullptr;
  const Matrix o1 = net1_.forward(out.bottomRows(d2), c1);
  const Matrix s1 = o1.topRows(d1);
  const Matrix clamped1 = clamp_matrix(s1, clamp_);
  const Matrix e1 = clamped1.array().exp().matrix();
  out.topRows(d1) = u.topRows(d1).cwiseProduct(e1) + o1.bottomRows(d1);

  log_det += clamped1.colwise().sum().transpose() + clamped2.colwise().sum().transpose();
  if (cache) {
    cache->permuted = std::move(u);
    cache->scale1 = s1;
    cache->scale2 = s2;
    cache->exp1 = e1;
    cache->exp2 = e2;
  }
  return out;
}

Matrix CouplingBlock::inverse(const Matrix& z) const {
  const auto d1 = static_cast<Index>(d1_);
  const auto d2 = static_cast<Index>(d2_);
  Matrix u(z.rows(), z.cols());
  const Matrix o1 = net1_.forward(z.bottomRows(d2));
  const Matrix e1 = (-clamp_matrix(o1.topRows(d1), clamp_)).array().exp().matrix();
  u.topRows(d1) = (z.topRows(d1) - o1.bottomRows(d1)).cwiseProduct(e1);
  const Matrix o2 = net2_.forward(u.topRows(d1));
  const Matrix e2 = (-clamp_matrix(o2.topRows(d2), clamp_)).array().exp().matrix();
  u.bottomRows(d2) = (z.bottomRows(d2) - o2.bottomRows(d2)).cwiseProduct(e2);

  Matrix y(z.rows(), z.cols());
  for (std::size_t i = 0; i < dim_; ++i) {
    y.row(static_cast<Index>(perm_[i])) = u.row(static_cast<Index>(i));
  }
  return y;
}

Matrix CouplingBlock::backward(const BlockCache& cache, const Matrix& grad_out,
                               const Vector& grad_log_det) {
  const auto d1 = static_cast<Index>(d1_);
  const auto d2 = static_cast<Index>(d2_);
  const Index n = grad_out.cols();
  const auto& u = cache.permuted;
  const Eigen::RowVectorXd gld = grad_log_det.transpose();

  const Matrix gv1 = grad_out.topRows(d1);
  Matrix gc1 = gv1.cwiseProduct(u.topRows(d1)).cwiseProduct(cache.exp1);
  gc1.rowwise() += gld;
  Matrix g_o1(2 * d1, n);
  g_o1.topRows(d1) = gc1.cwiseProduct(clamp_derivative_matrix(cache.scale1, clamp_));
  g_o1.bottomRows(d1) = gv1;
  const Matrix gv2 = grad_out.bottomRows(d2) + net1_.backward(cache.net1, g_o1);

  Matrix gu(grad_out.rows(), n);
  gu.topRows(d1) = gv1.cwiseProduct(cache.exp1);

  Matrix gc2 = gv2.cwiseProduct(u.bottomRows(d2)).cwiseProduct(cache.exp2);
  gc2.rowwise() += gld;
  Matrix g_o2(2 * d2, n);
  g_o2.topRows(d2) = gc2.cwiseProduct(clamp_derivative_matrix(cache.scale2, clamp_));
  g_o2.bottomRows(d2) = gv2;
  gu.topRows(d1) += net2_.backward(cache.net2, g_o2);
  gu.bottomRows(d2) = gv2.cwiseProduct(cache.exp2);

  Matrix gy(grad_out.rows(), n);
  for (std::size_t i = 0; i < dim_; ++i) {
    gy.row(static_cast<Index>(perm_[i])) = gu.row(static_cast<Index>(i));
  }
  return gy;
}

FlowModel::FlowModel(const FlowConfig& cfg, Rng& rng) : cfg_(cfg) {
  cfg_.validate();
  const std::size_t hidden = cfg_.hidden_factor * cfg_.dim;
  blocks_.reserve(cfg_.blocks);
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    blocks_.emplace_back(cfg_.dim, hidden, cfg_.clamp, b, rng);
  }
}

FlowResult FlowModel::forward(const Matrix& y, FlowTape* tape) const {
  if (static_cast<std::size_t>(y.rows()) != cfg_.dim) {
    throw ConfigError("flow expects dimension " + std::to_string(cfg_.dim) + ", got " +
                      std::to_string(y.rows()));
  }
  FlowResult r{y, Vector::Zero(y.cols())};
  if (tape) tape->blocks.assign(blocks_.size(), BlockCache{});
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    r.z = blocks_[b].forward(r.z, r.log_det, tape ? &tape->blocks[b] : nullptr);
    if (!r.z.allFinite() || !r.log_det.allFinite()) {
      throw NumericalError("non-finite flow output at coupling block " + std::to_string(b));
    }
  }
  return r;
}

Matrix FlowModel::inverse(const Matrix& z) const {
  if (static_cast<std::size_t>(z.rows()) != cfg_.dim) {
    throw ConfigError("flow expects dimension " + std::to_string(cfg_.dim) + ", got " +
                      std::to_string(z.rows()));
  }
  Matrix y = z;
  for (std::size_t b = blocks_.size(); b-- > 0;) {
    y = blocks_[b].inverse(y);
    if (!y.allFinite()) {
      throw NumericalError("non-finite flow inverse at coupling block " + std::to_string(b));
    }
  }
  return y;
}

Matrix FlowModel::backward(const FlowTape& tape, const Matrix& grad_z,
                           const Vector& grad_log_det) {
  Matrix g = grad_z;
  for (std::size_t b = blocks_.size(); b-- > 0;) {
    g = blocks_[b].backward(tape.blocks[b], g, grad_log_det);
  }
  return g;
}

void FlowModel::randomize(Rng& rng) {
  for (auto& block : blocks_) {
    block.net1().initialize(rng, false);
    block.net2().initialize(rng, false);
  }
}

ParamList FlowModel::params() {
  ParamList out;
  for (auto& b : blocks_) {
    for (auto* p : b.params()) out.push_back(p);
  }
  return out;
}

ConstParamList FlowModel::params() const {
  ConstParamList out;
  for (const auto& b : blocks_) {
    for (const auto* p : b.params()) out.push_back(p);
  }
  return out;
}

Matrix to_matrix(std::span<const Real> v) {
  Matrix m(static_cast<Index>(v.size()), 1);
  for (std::size_t i = 0; i < v.size(); ++i) m(static_cast<Index>(i), 0) = v[i];
  return m;
}

LatentVector flow_forward(std::span<const Real> y, const FlowModel& model) {
  const FlowResult r = model.forward(to_matrix(y));
  LatentVector out;
  out.z.assign(r.z.data(), r.z.data() + r.z.size());
  out.log_det = r.log_det(0);
  return out;
}

std::vector<Real> flow_inverse(const LatentVector& z, const FlowModel& model) {
  const Matrix y = model.inverse(to_matrix(z.z));
  return {y.data(), y.data() + y.size()};
}

Real nll_from_latent(const LatentVector& latent) {
  Real sq = 0.0;
  for (Real v : latent.z) sq += v * v;
  return 0.5 * sq - latent.log_det;
}

Real nll_loss(std::span<const Real> y, const FlowModel& model) {
  return nll_from_latent(flow_forward(y, model));
}

Real log_likelihood(std::span<const Real> y, const FlowModel& model) {
  const auto d = static_cast<Real>(model.dim());
  return -nll_loss(y, model) - 0.5 * d * std::log(2.0 * std::numbers::pi);
}

Vector nll_batch(const Matrix& y, const FlowModel& model) {
  const FlowResult r = model.forward(y);
  return 0.5 * r.z.colwise().squaredNorm().transpose() - r.log_det;
}

Real nll_mean_backward(FlowModel& model, const Matrix& y, Matrix* grad_y) {
  FlowTape tape;
  const FlowResult r = model.forward(y, &tape);
  const auto n = static_cast<Real>(y.cols());
  const Real loss =
      (0.5 * r.z.colwise().squaredNorm().transpose() - r.log_det).sum() / n;
  const Matrix grad_z = r.z / n;
  const Vector grad_ld = Vector::Constant(y.cols(), -1.0 / n);
  Matrix g = model.backward(tape, grad_z, grad_ld);
  if (grad_y) *grad_y = std::move(g);
  return loss;
}

}  // namespace attnflow
