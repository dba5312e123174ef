#pragma once

// Scalar reference implementations used as independent oracles.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <random>
#include <vector>

#include <Eigen/Dense>

#include "attnflow/attention.hpp"
#include "attnflow/tensor.hpp"

namespace oracle {

using attnflow::FeatureMap;
using attnflow::Real;

inline Real sig(Real v) { return 1.0 / (1.0 + std::exp(-v)); }

/// C -> hidden -> C bottleneck with a rectifier, weights row-major.
inline std::vector<Real> mlp(const std::vector<Real>& v, const attnflow::AttentionBlock& b) {
  const std::size_t C = b.channels(), H = b.hidden();
  std::vector<Real> hidden(H), out(C);
  for (std::size_t j = 0; j < H; ++j) {
    Real acc = b.mlp_b1().value[j];
    for (std::size_t c = 0; c < C; ++c) acc += b.mlp_w1().value[j * C + c] * v[c];
    hidden[j] = std::max<Real>(acc, 0.0);
  }
  for (std::size_t c = 0; c < C; ++c) {
    Real acc = b.mlp_b2().value[c];
    for (std::size_t j = 0; j < H; ++j) acc += b.mlp_w2().value[c * H + j] * hidden[j];
    out[c] = acc;
  }
  return out;
}

inline FeatureMap se(const FeatureMap& x, const attnflow::AttentionBlock& b) {
  const std::size_t C = x.channels(), H = x.height(), W = x.width();
  std::vector<Real> gap(C, 0.0);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) gap[c] += x.at(c, h, w) / static_cast<Real>(H * W);
  const auto pre = mlp(gap, b);
  FeatureMap y(C, H, W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) y.at(c, h, w) = x.at(c, h, w) * sig(pre[c]);
  return y;
}

inline FeatureMap cbam(const FeatureMap& x, const attnflow::AttentionBlock& b) {
  const std::size_t C = x.channels(), H = x.height(), W = x.width();
  std::vector<Real> avg(C, 0.0), mx(C, -INFINITY);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) {
        avg[c] += x.at(c, h, w) / static_cast<Real>(H * W);
        mx[c] = std::max(mx[c], x.at(c, h, w));
      }
  const auto pa = mlp(avg, b);
  const auto pm = mlp(mx, b);
  FeatureMap r(C, H, W);
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) r.at(c, h, w) = x.at(c, h, w) * sig(pa[c] + pm[c]);

  FeatureMap desc(2, H, W);
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t w = 0; w < W; ++w) {
      Real s = 0.0, m = -INFINITY;
      for (std::size_t c = 0; c < C; ++c) {
        s += r.at(c, h, w);
        m = std::max(m, r.at(c, h, w));
      }
      desc.at(0, h, w) = s / static_cast<Real>(C);
      desc.at(1, h, w) = m;
    }
  const int k = b.spatial_kernel();
  const int pad = (k - 1) / 2;
  FeatureMap y(C, H, W);
  for (int h = 0; h < static_cast<int>(H); ++h)
    for (int w = 0; w < static_cast<int>(W); ++w) {
      Real acc = b.conv_b().value[0];
      for (int ch = 0; ch < 2; ++ch)
        for (int i = 0; i < k; ++i)
          for (int j = 0; j < k; ++j) {
            const int hh = h + i - pad, ww = w + j - pad;
            if (hh < 0 || ww < 0 || hh >= static_cast<int>(H) || ww >= static_cast<int>(W))
              continue;
            acc += b.conv_w().value[(ch * k + i) * k + j] * desc.at(ch, hh, ww);
          }
      const Real g = sig(acc);
      for (std::size_t c = 0; c < C; ++c) y.at(c, h, w) = r.at(c, h, w) * g;
    }
  return y;
}

/// Direct cross-correlation with zero padding; weight [out][in][k][k].
inline FeatureMap conv2d(const FeatureMap& x, const std::vector<Real>& weight,
                         const std::vector<Real>& bias, std::size_t out_c, std::size_t k,
                         std::size_t stride, std::size_t pad) {
  const std::size_t C = x.channels(), H = x.height(), W = x.width();
  const std::size_t OH = (H + 2 * pad - k) / stride + 1, OW = (W + 2 * pad - k) / stride + 1;
  FeatureMap y(out_c, OH, OW);
  for (std::size_t o = 0; o < out_c; ++o)
    for (std::size_t oh = 0; oh < OH; ++oh)
      for (std::size_t ow = 0; ow < OW; ++ow) {
        Real acc = bias[o];
        for (std::size_t c = 0; c < C; ++c)
          for (std::size_t i = 0; i < k; ++i)
            for (std::size_t j = 0; j < k; ++j) {
              const long hh = static_cast<long>(oh * stride + i) - static_cast<long>(pad);
              const long ww = static_cast<long>(ow * stride + j) - static_cast<long>(pad);
              if (hh < 0 || ww < 0 || hh >= static_cast<long>(H) || ww >= static_cast<long>(W))
                continue;
              acc += weight[((o * C + c) * k + i) * k + j] * x.at(c, hh, ww);
            }
        y.at(o, oh, ow) = acc;
      }
  return y;
}

/// Exhaustive pair counting with half credit for ties.
inline double auroc_pairs(const std::vector<Real>& flawless, const std::vector<Real>& anomalous) {
  double wins = 0.0;
  for (Real a : anomalous)
    for (Real f : flawless) wins += a > f ? 1.0 : (a == f ? 0.5 : 0.0);
  return wins / (static_cast<double>(flawless.size()) * static_cast<double>(anomalous.size()));
}

/// Grad-CAM with explicit loops.
inline std::vector<Real> gradcam(const FeatureMap& a, const FeatureMap& g) {
  const std::size_t C = a.channels(), H = a.height(), W = a.width();
  std::vector<Real> out(H * W, 0.0);
  for (std::size_t k = 0; k < C; ++k) {
    Real alpha = 0.0;
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) alpha += g.at(k, h, w);
    alpha /= static_cast<Real>(H * W);
    for (std::size_t h = 0; h < H; ++h)
      for (std::size_t w = 0; w < W; ++w) out[h * W + w] += alpha * a.at(k, h, w);
  }
  for (Real& v : out) v = v > 0.0 ? v : 0.0;
  return out;
}

/// Central-difference Jacobian of f at x.
inline Eigen::MatrixXd jacobian(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                const Eigen::VectorXd& x, double step) {
  const auto n = x.size();
  const auto m = f(x).size();
  Eigen::MatrixXd J(m, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd hi = x, lo = x;
    hi(i) += step;
    lo(i) -= step;
    J.col(i) = (f(hi) - f(lo)) / (2.0 * step);
  }
  return J;
}

/// log|det J| from an LU factorisation.
inline double log_abs_det(const Eigen::MatrixXd& J) {
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(J);
  double s = 0.0;
  const Eigen::MatrixXd& LU = lu.matrixLU();
  for (Eigen::Index i = 0; i < LU.rows(); ++i) s += std::log(std::abs(LU(i, i)));
  return s;
}

inline FeatureMap random_map(std::size_t c, std::size_t h, std::size_t w, std::mt19937_64& rng,
                             double scale = 1.0) {
  std::normal_distribution<double> n(0.0, scale);
  FeatureMap m(c, h, w);
  for (Real& v : m.data()) v = n(rng);
  return m;
}

}  // namespace oracle
