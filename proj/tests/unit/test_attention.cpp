#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "attnflow/attention.hpp"
#include "attnflow/error.hpp"
#include "oracles.hpp"

using namespace attnflow;

namespace {

AttentionBlock random_block(AttentionKind kind, std::size_t channels, int reduction, int kernel,
                            std::mt19937_64& rng) {
  AttentionConfig cfg;
  cfg.kind = kind;
  cfg.reduction = reduction;
  cfg.spatial_kernel = kernel;
  AttentionBlock b(cfg, channels, "att");
  std::normal_distribution<double> n(0.0, 0.7);
  for (auto* p : b.params())
    for (auto& v : p->value) v = n(rng);
  return b;
}

double weighted_sum(const FeatureMap& y, const FeatureMap& r) {
  double s = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * r.data()[i];
  return s;
}

void expect_gradients_match(AttentionKind kind) {
  std::mt19937_64 rng(11);
  AttentionBlock b = random_block(kind, 6, 2, 3, rng);
  const FeatureMap x = oracle::random_map(6, 4, 5, rng);
  const FeatureMap r = oracle::random_map(6, 4, 5, rng);

  AttentionCache cache;
  const FeatureMap y = b.forward(x, &cache);
  zero_grads(b.params());
  const FeatureMap dx = b.backward(cache, r);

  const double h = 1e-6;
  for (auto* p : b.params()) {
    for (std::size_t i = 0; i < p->numel(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double hi = weighted_sum(b.forward(x), r);
      p->value[i] = keep - h;
      const double lo = weighted_sum(b.forward(x), r);
      p->value[i] = keep;
      const double fd = (hi - lo) / (2 * h);
      EXPECT_NEAR(p->grad[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << p->name << "[" << i << "]";
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    FeatureMap xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    const double fd = (weighted_sum(b.forward(xp), r) - weighted_sum(b.forward(xm), r)) / (2 * h);
    EXPECT_NEAR(dx.data()[i], fd, 1e-6 * std::max(1.0, std::abs(fd))) << "dx[" << i << "]";
  }
}

}  // namespace

TEST(Attention, ParsesKinds) {
  EXPECT_EQ(parse_attention_kind("none"), AttentionKind::none);
  EXPECT_EQ(parse_attention_kind("se"), AttentionKind::se);
  EXPECT_EQ(parse_attention_kind("cbam"), AttentionKind::cbam);
  EXPECT_EQ(to_string(AttentionKind::cbam), "cbam");
  EXPECT_THROW(parse_attention_kind("eca"), ConfigError);
}

TEST(Attention, RejectsBadConfig) {
  AttentionConfig cfg;
  cfg.kind = AttentionKind::cbam;
  cfg.reduction = 16;
  EXPECT_THROW(cfg.validate(8), ConfigError);
  cfg.reduction = 2;
  cfg.spatial_kernel = 4;
  EXPECT_THROW(cfg.validate(8), ConfigError);
  cfg.spatial_kernel = 3;
  EXPECT_NO_THROW(cfg.validate(8));
}

TEST(Attention, SeMatchesScalarOracle) {
  std::mt19937_64 rng(1);
  for (int t = 0; t < 50; ++t) {
    const std::size_t c = 2 + rng() % 7;
    AttentionBlock b = random_block(AttentionKind::se, c, 2, 3, rng);
    const FeatureMap x = oracle::random_map(c, 1 + rng() % 5, 1 + rng() % 5, rng);
    const FeatureMap got = se_block(x, b);
    const FeatureMap want = oracle::se(x, b);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-12);
  }
}

TEST(Attention, CbamMatchesScalarOracle) {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 50; ++t) {
    const std::size_t c = 2 + rng() % 7;
    const int k = (rng() % 2) ? 3 : 5;
    AttentionBlock b = random_block(AttentionKind::cbam, c, 2, k, rng);
    const FeatureMap x = oracle::random_map(c, 1 + rng() % 5, 1 + rng() % 5, rng);
    const FeatureMap got = cbam_block(x, b);
    const FeatureMap want = oracle::cbam(x, b);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-12);
  }
}

TEST(Attention, GatesOnlyShrink) {
  std::mt19937_64 rng(3);
  for (auto kind : {AttentionKind::se, AttentionKind::cbam}) {
    AttentionBlock b = random_block(kind, 8, 4, 3, rng);
    const FeatureMap x = oracle::random_map(8, 5, 5, rng, 3.0);
    const FeatureMap y = b.forward(x);
    ASSERT_TRUE(y.same_shape(x));
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_LE(std::abs(y.data()[i]), std::abs(x.data()[i]));
      EXPECT_GE(y.data()[i] * x.data()[i], 0.0);
    }
  }
}

TEST(Attention, SaturatedBlockIsIdentity) {
  std::mt19937_64 rng(4);
  for (auto kind : {AttentionKind::se, AttentionKind::cbam}) {
    AttentionBlock b = random_block(kind, 8, 4, 3, rng);
    b.saturate();
    const FeatureMap x = oracle::random_map(8, 5, 4, rng, 10.0);
    EXPECT_EQ(b.forward(x).data(), x.data());
    for (Real g : b.channel_scale(x)) EXPECT_EQ(g, 1.0);
  }
}

TEST(Attention, WrongKindForFreeFunction) {
  std::mt19937_64 rng(5);
  AttentionBlock se = random_block(AttentionKind::se, 4, 2, 3, rng);
  const FeatureMap x = oracle::random_map(4, 3, 3, rng);
  EXPECT_THROW(cbam_block(x, se), ConfigError);
  EXPECT_THROW(cbam_spatial_attention(x, se), ConfigError);
}

TEST(Attention, ChannelMismatchRejected) {
  std::mt19937_64 rng(6);
  AttentionBlock b = random_block(AttentionKind::se, 4, 2, 3, rng);
  EXPECT_ANY_THROW(b.forward(oracle::random_map(5, 3, 3, rng)));
}

TEST(Attention, SeGradientsMatchFiniteDifferences) { expect_gradients_match(AttentionKind::se); }

TEST(Attention, CbamGradientsMatchFiniteDifferences) {
  expect_gradients_match(AttentionKind::cbam);
}

TEST(Attention, CbamSpatialGateInUnitInterval) {
  std::mt19937_64 rng(7);
  AttentionBlock b = random_block(AttentionKind::cbam, 6, 3, 3, rng);
  const FeatureMap x = oracle::random_map(6, 4, 4, rng);
  const FeatureMap g = b.spatial_scale(x);
  EXPECT_EQ(g.channels(), 1u);
  for (Real v : g.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}
