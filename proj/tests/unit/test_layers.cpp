#include <gtest/gtest.h>

#include <random>

#include "attnflow/error.hpp"
#include "attnflow/layers.hpp"
#include "oracles.hpp"

using namespace attnflow;

namespace {

Conv2d random_conv(const ConvSpec& spec, std::mt19937_64& rng) {
  Conv2d conv(spec, "conv");
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& v : conv.weight().value) v = n(rng);
  for (auto& v : conv.bias().value) v = n(rng);
  return conv;
}

}  // namespace

TEST(Conv2d, MatchesDirectLoops) {
  std::mt19937_64 rng(1);
  const ConvSpec specs[] = {{3, 4, 3, 1, 1}, {2, 5, 5, 2, 2}, {3, 2, 11, 4, 2}, {1, 1, 1, 1, 0}};
  for (const auto& spec : specs) {
    const Conv2d conv = random_conv(spec, rng);
    const FeatureMap x = oracle::random_map(spec.in_channels, 23, 19, rng);
    const FeatureMap got = conv.forward(x);
    const FeatureMap want = oracle::conv2d(x, conv.weight().value, conv.bias().value,
                                           spec.out_channels, spec.kernel, spec.stride,
                                           spec.padding);
    ASSERT_TRUE(got.same_shape(want));
    for (std::size_t i = 0; i < got.size(); ++i) EXPECT_NEAR(got.data()[i], want.data()[i], 1e-10);
  }
}

TEST(Conv2d, BackwardMatchesFiniteDifferences) {
  std::mt19937_64 rng(2);
  const ConvSpec spec{2, 3, 3, 2, 1};
  Conv2d conv = random_conv(spec, rng);
  const FeatureMap x = oracle::random_map(2, 7, 6, rng);
  ConvCache cache;
  const FeatureMap y = conv.forward(x, &cache);
  const FeatureMap r = oracle::random_map(y.channels(), y.height(), y.width(), rng);
  auto loss = [&](const Conv2d& c, const FeatureMap& in) {
    const FeatureMap o = c.forward(in);
    double s = 0.0;
    for (std::size_t i = 0; i < o.size(); ++i) s += o.data()[i] * r.data()[i];
    return s;
  };
  conv.weight().zero_grad();
  conv.bias().zero_grad();
  const FeatureMap dx = conv.backward(cache, r, true);
  const double h = 1e-6;
  for (Param* p : {&conv.weight(), &conv.bias()}) {
    for (std::size_t i = 0; i < p->numel(); ++i) {
      const double keep = p->value[i];
      p->value[i] = keep + h;
      const double hi = loss(conv, x);
      p->value[i] = keep - h;
      const double lo = loss(conv, x);
      p->value[i] = keep;
      EXPECT_NEAR(p->grad[i], (hi - lo) / (2 * h), 1e-6);
    }
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    FeatureMap xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    EXPECT_NEAR(dx.data()[i], (loss(conv, xp) - loss(conv, xm)) / (2 * h), 1e-6);
  }
}

TEST(Conv2d, WindowMustFit) {
  EXPECT_EQ(window_output(224, 11, 4, 2, "conv"), 55u);
  EXPECT_EQ(window_output(55, 3, 2, 0, "pool"), 27u);
  EXPECT_THROW(window_output(4, 11, 4, 2, "conv"), ConfigError);
}

TEST(MaxPool, ForwardAndBackwardRouteToArgmax) {
  FeatureMap x(1, 3, 3);
  const double v[] = {1, 5, 2, 4, 3, 9, 0, 7, 6};
  std::copy(std::begin(v), std::end(v), x.data().begin());
  PoolCache cache;
  const FeatureMap y = max_pool(x, 2, 1, &cache);
  ASSERT_EQ(y.height(), 2u);
  EXPECT_EQ(y.at(0, 0, 0), 5);
  EXPECT_EQ(y.at(0, 0, 1), 9);
  EXPECT_EQ(y.at(0, 1, 0), 7);
  EXPECT_EQ(y.at(0, 1, 1), 9);
  const FeatureMap g = max_pool_backward(cache, FeatureMap(1, 2, 2, 1.0), 1);
  EXPECT_EQ(g.at(0, 0, 1), 1.0);
  EXPECT_EQ(g.at(0, 1, 2), 2.0);
  EXPECT_EQ(g.at(0, 2, 1), 1.0);
  EXPECT_EQ(g.at(0, 0, 0), 0.0);
}

TEST(Layers, ReluAndGlobalAveragePool) {
  FeatureMap x(2, 1, 2);
  x.at(0, 0, 0) = -1;
  x.at(0, 0, 1) = 3;
  x.at(1, 0, 0) = 2;
  x.at(1, 0, 1) = 4;
  const FeatureMap r = relu(x);
  EXPECT_EQ(r.at(0, 0, 0), 0);
  EXPECT_EQ(r.at(0, 0, 1), 3);
  const auto gap = global_average_pool(x);
  EXPECT_DOUBLE_EQ(gap[0], 1.0);
  EXPECT_DOUBLE_EQ(gap[1], 3.0);
  const FeatureMap g = relu_backward(r, FeatureMap(2, 1, 2, 1.0));
  EXPECT_EQ(g.at(0, 0, 0), 0.0);
  EXPECT_EQ(g.at(0, 0, 1), 1.0);
}
