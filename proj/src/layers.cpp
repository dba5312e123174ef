#include "attnflow/layers.hpp"

#include <algorithm>

#include "attnflow/error.hpp"

namespace attnflow {

std::size_t window_output(std::size_t in, std::size_t kernel, std::size_t stride,
                          std::size_t padding, const std::string& what) {
  if (stride == 0 || kernel == 0) {
    throw ConfigError(what + ": kernel and stride must be positive");
  }
  if (in + 2 * padding < kernel) {
    throw ConfigError(what + ": input extent " + std::to_string(in) +
                      " is smaller than the kernel " + std::to_string(kernel));
  }
  return (in + 2 * padding - kernel) / stride + 1;
}

Conv2d::Conv2d(const ConvSpec& spec, const std::string& name)
    : spec_(spec),
      weight_(name + ".weight",
              {spec.out_channels, spec.in_channels, spec.kernel, spec.kernel}),
      bias_(name + ".bias", {spec.out_channels}) {}

FeatureMap Conv2d::forward(const FeatureMap& x, ConvCache* cache) const {
  if (x.channels() != spec_.in_channels) {
    throw ConfigError(weight_.name + ": expected " + std::to_string(spec_.in_channels) +
                      " input channels, got " + x.shape_string());
  }
  const std::size_t k = spec_.kernel;
  const std::size_t s = spec_.stride;
  const auto p = static_cast<long>(spec_.padding);
  const std::size_t H = x.height();
  const std::size_t W = x.width();
  const std::size_t oh = window_output(H, k, s, spec_.padding, weight_.name);
  const std::size_t ow = window_output(W, k, s, spec_.padding, weight_.name);

  RowMatrix cols = RowMatrix::Zero(static_cast<Eigen::Index>(spec_.in_channels * k * k),
                                   static_cast<Eigen::Index>(oh * ow));
  for (std::size_t c = 0; c < spec_.in_channels; ++c) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        Real* row = cols.row(static_cast<Eigen::Index>((c * k + i) * k + j)).data();
        for (std::size_t y = 0; y < oh; ++y) {
          const long hh = static_cast<long>(y * s + i) - p;
          if (hh < 0 || hh >= static_cast<long>(H)) continue;
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const long ww = static_cast<long>(xo * s + j) - p;
            if (ww < 0 || ww >= static_cast<long>(W)) continue;
            row[y * ow + xo] =
                x.at(c, static_cast<std::size_t>(hh), static_cast<std::size_t>(ww));
          }
        }
      }
    }
  }

  FeatureMap out(spec_.out_channels, oh, ow);
  Eigen::Map<const RowMatrix> w(weight_.value.data(),
                                static_cast<Eigen::Index>(spec_.out_channels),
                                static_cast<Eigen::Index>(spec_.in_channels * k * k));
  Eigen::Map<RowMatrix> o(out.data().data(), static_cast<Eigen::Index>(spec_.out_channels),
                          static_cast<Eigen::Index>(oh * ow));
  o.noalias() = w * cols;
  for (std::size_t c = 0; c < spec_.out_channels; ++c) {
    o.row(static_cast<Eigen::Index>(c)).array() += bias_.value[c];
  }
  if (cache) {
    cache->cols = std::move(cols);
    cache->in_height = H;
    cache->in_width = W;
  }
  return out;
}

FeatureMap Conv2d::backward(const ConvCache& cache, const FeatureMap& grad_out,
                            bool param_grads) {
  const std::size_t k = spec_.kernel;
  const std::size_t s = spec_.stride;
  const auto p = static_cast<long>(spec_.padding);
  const std::size_t H = cache.in_height;
  const std::size_t W = cache.in_width;
  const std::size_t oh = grad_out.height();
  const std::size_t ow = grad_out.width();
  const auto K = static_cast<Eigen::Index>(spec_.in_channels * k * k);
  const auto O = static_cast<Eigen::Index>(spec_.out_channels);
  const auto P = static_cast<Eigen::Index>(oh * ow);

  Eigen::Map<const RowMatrix> g(grad_out.data().data(), O, P);
  Eigen::Map<const RowMatrix> w(weight_.value.data(), O, K);
  if (param_grads) {
    Eigen::Map<RowMatrix> gw(weight_.grad.data(), O, K);
    gw.noalias() += g * cache.cols.transpose();
    for (Eigen::Index c = 0; c < O; ++c) bias_.grad[static_cast<std::size_t>(c)] += g.row(c).sum();
  }
  const RowMatrix gcols = w.transpose() * g;

  FeatureMap grad_in(spec_.in_channels, H, W);
  for (std::size_t c = 0; c < spec_.in_channels; ++c) {
    for (std::size_t i = 0; i < k; ++i) {
      for (std::size_t j = 0; j < k; ++j) {
        const Real* row = gcols.row(static_cast<Eigen::Index>((c * k + i) * k + j)).data();
        for (std::size_t y = 0; y < oh; ++y) {
          const long hh = static_cast<long>(y * s + i) - p;
          if (hh < 0 || hh >= static_cast<long>(H)) continue;
          for (std::size_t xo = 0; xo < ow; ++xo) {
            const long ww = static_cast<long>(xo * s + j) - p;
            if (ww < 0 || ww >= static_cast<long>(W)) continue;
            grad_in.at(c, static_cast<std::size_t>(hh), static_cast<std::size_t>(ww)) +=
                row[y * ow + xo];
          }
        }
      }
    }
  }
  return grad_in;
}

FeatureMap relu(const FeatureMap& x) {
  FeatureMap out = x;
  for (Real& v : out.data()) v = std::max<Real>(v, 0.0);
  return out;
}

FeatureMap relu_backward(const FeatureMap& output, const FeatureMap& grad) {
  FeatureMap out = grad;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (output.data()[i] <= 0.0) out.data()[i] = 0.0;
  }
  return out;
}

FeatureMap max_pool(const FeatureMap& x, std::size_t kernel, std::size_t stride,
                    PoolCache* cache) {
  const std::size_t H = x.height();
  const std::size_t W = x.width();
  const std::size_t oh = window_output(H, kernel, stride, 0, "max_pool");
  const std::size_t ow = window_output(W, kernel, stride, 0, "max_pool");
  FeatureMap out(x.channels(), oh, ow);
  std::vector<std::size_t> argmax(out.size());
  std::size_t n = 0;
  for (std::size_t c = 0; c < x.channels(); ++c) {
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo, ++n) {
        std::size_t best = (c * H + y * stride) * W + xo * stride;
        for (std::size_t i = 0; i < kernel; ++i) {
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t idx = (c * H + y * stride + i) * W + xo * stride + j;
            if (x.data()[idx] > x.data()[best]) best = idx;
          }
        }
        out.data()[n] = x.data()[best];
        argmax[n] = best;
      }
    }
  }
  if (cache) {
    cache->argmax = std::move(argmax);
    cache->in_height = H;
    cache->in_width = W;
  }
  return out;
}

FeatureMap max_pool_backward(const PoolCache& cache, const FeatureMap& grad_out,
                             std::size_t channels) {
  FeatureMap grad_in(channels, cache.in_height, cache.in_width);
  for (std::size_t n = 0; n < grad_out.size(); ++n) {
    grad_in.data()[cache.argmax[n]] += grad_out.data()[n];
  }
  return grad_in;
}

std::vector<Real> global_average_pool(const FeatureMap& x) {
  std::vector<Real> out(x.channels());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    Real sum = 0.0;
    for (Real v : x.channel(c)) sum += v;
    out[c] = sum / static_cast<Real>(x.plane());
  }
  return out;
}

}  // namespace attnflow
