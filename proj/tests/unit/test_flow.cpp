#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <utility>

#include "attnflow/error.hpp"
#include "attnflow/archive.hpp"
#include "attnflow/flow.hpp"
#include "checks.hpp"

using namespace attnflow;

namespace {

FlowModel random_flow(std::size_t dim, std::size_t blocks, std::uint64_t seed) {
  FlowConfig cfg;
  cfg.dim = dim;
  cfg.blocks = blocks;
  Rng rng = make_rng(seed, "test/flow");
  FlowModel f(cfg, rng);
  f.randomize(rng);
  return f;
}

Matrix gaussian(Eigen::Index d, Eigen::Index n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(d, n);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
  return m;
}

}  // namespace

TEST(SoftClamp, BoundedOddAndSmooth) {
  EXPECT_EQ(soft_clamp(0.0, 3.0), 0.0);
  for (double s : {-1e6, -7.0, -0.3, 0.2, 5.0, 1e6}) {
    EXPECT_LT(std::abs(soft_clamp(s, 3.0)), 3.0);
    EXPECT_DOUBLE_EQ(soft_clamp(-s, 3.0), -soft_clamp(s, 3.0));
  }
  EXPECT_NEAR(soft_clamp(1e-4, 3.0), 1e-4, 1e-10);
  for (double s : {-2.0, 0.0, 0.7, 4.0}) {
    const double fd = (soft_clamp(s + 1e-6, 3.0) - soft_clamp(s - 1e-6, 3.0)) / 2e-6;
    EXPECT_NEAR(soft_clamp_derivative(s, 3.0), fd, 1e-8);
  }
}

TEST(Flow, FreshFlowIsVolumePreservingPermutation) {
  FlowConfig cfg;
  cfg.dim = 6;
  Rng rng = make_rng(1, "fresh");
  const FlowModel f(cfg, rng);
  const Matrix y = gaussian(6, 4, 2);
  const FlowResult r = f.forward(y);
  for (Eigen::Index j = 0; j < 4; ++j) {
    EXPECT_NEAR(r.log_det(j), 0.0, 1e-15);
    EXPECT_NEAR(r.z.col(j).squaredNorm(), y.col(j).squaredNorm(), 1e-12);
  }
  const Vector nll = nll_batch(y, f);
  for (Eigen::Index j = 0; j < 4; ++j) EXPECT_NEAR(nll(j), 0.5 * y.col(j).squaredNorm(), 1e-12);
}

TEST(Flow, InverseRoundTrip) {
  const FlowModel f = random_flow(64, 8, 3);
  const Matrix y = gaussian(64, 1000, 4);
  EXPECT_LT((f.inverse(f.forward(y).z) - y).cwiseAbs().maxCoeff(), 1e-5);
  const Matrix zero = Matrix::Zero(64, 1);
  EXPECT_LT((f.inverse(f.forward(zero).z) - zero).cwiseAbs().maxCoeff(), 1e-6);
}

TEST(Flow, InverseErrorTracksLatentMagnitude) {
  // Small random flows expand some inputs by many orders of magnitude; the
  // round-trip error stays at machine precision relative to the latent.
  for (std::size_t d : {8, 16}) {
    const FlowModel f = random_flow(d, 8, 3);
    const Matrix y = gaussian(static_cast<Eigen::Index>(d), 1000, 4);
    const Matrix z = f.forward(y).z;
    const double err = (f.inverse(z) - y).cwiseAbs().maxCoeff();
    EXPECT_LT(err / z.cwiseAbs().maxCoeff(), 1e-9) << "d = " << d;
  }
}

TEST(Flow, OddDimensionRoundTrip) {
  const FlowModel f = random_flow(7, 3, 5);
  const Matrix y = gaussian(7, 20, 6);
  EXPECT_LT((f.inverse(f.forward(y).z) - y).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Flow, LogDetMatchesJacobian) {
  for (std::uint64_t t = 0; t < 5; ++t) {
    const FlowModel f = random_flow(8, 2, 10 + t);
    const Eigen::VectorXd y = gaussian(8, 1, 20 + t).col(0);
    EXPECT_LT(checks::logdet_rel_error(f, y, 1e-5), 1e-5);
  }
}

TEST(Flow, LikelihoodIdentities) {
  const FlowModel f = random_flow(8, 4, 7);
  const Matrix y = gaussian(8, 1, 8);
  const std::vector<Real> v(y.data(), y.data() + 8);
  const LatentVector z = flow_forward(v, f);
  EXPECT_NEAR(nll_loss(v, f), nll_from_latent(z), 1e-12);
  EXPECT_NEAR(log_likelihood(v, f), -nll_loss(v, f) - 4.0 * std::log(2.0 * std::numbers::pi),
              1e-12);
  const auto back = flow_inverse(z, f);
  for (std::size_t i = 0; i < 8; ++i) EXPECT_NEAR(back[i], v[i], 1e-10);
}

TEST(Flow, ParameterGradientsMatchFiniteDifferences) {
  FlowModel f = random_flow(8, 3, 9);
  const Matrix y = gaussian(8, 5, 10);
  for (const auto& [name, err] : checks::nll_gradient_rel_errors(f, y, 1e-5)) {
    EXPECT_LT(err, 1e-5) << name;
  }
}

TEST(Flow, InputGradientMatchesFiniteDifferences) {
  FlowModel f = random_flow(6, 3, 11);
  const Matrix y = gaussian(6, 3, 12);
  Matrix gy;
  nll_mean_backward(f, y, &gy);
  const double h = 1e-6;
  for (Eigen::Index i = 0; i < y.size(); ++i) {
    Matrix hi = y, lo = y;
    hi.data()[i] += h;
    lo.data()[i] -= h;
    const double fd = (nll_batch(hi, f).mean() - nll_batch(lo, f).mean()) / (2 * h);
    EXPECT_NEAR(gy.data()[i], fd, 1e-6);
  }
}

TEST(Flow, Errors) {
  FlowModel f = random_flow(6, 2, 13);
  EXPECT_THROW(f.forward(gaussian(5, 1, 1)), ConfigError);
  Matrix bad = gaussian(6, 1, 1);
  bad(0, 0) = std::nan("");
  try {
    f.forward(bad);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("block 0"), std::string::npos);
  }
  EXPECT_THROW(f.blocks()[0].set_permutation({0, 0, 1, 2, 3, 4}), ConfigError);
  FlowConfig cfg;
  cfg.dim = 1;
  EXPECT_THROW(cfg.validate(), ConfigError);
}

TEST(Flow, SeededConstructionIsDeterministic) {
  const FlowModel a = random_flow(8, 4, 21), b = random_flow(8, 4, 21);
  EXPECT_EQ(params_digest(std::as_const(a).params()), params_digest(std::as_const(b).params()));
  EXPECT_EQ(a.blocks()[2].permutation(), b.blocks()[2].permutation());
}
