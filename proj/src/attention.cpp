#include "attnflow/attention.hpp"

#include <algorithm>
#include <cmath>

#include "attnflow/error.hpp"

namespace attnflow {

AttentionKind parse_attention_kind(std::string_view text) {
  if (text == "none") return AttentionKind::none;
  if (text == "se") return AttentionKind::se;
  if (text == "cbam") return AttentionKind::cbam;
  throw ConfigError("unknown attention kind '" + std::string(text) +
                    "' (expected none, se or cbam)");
}

std::string to_string(AttentionKind kind) {
  switch (kind) {
    case AttentionKind::none:
      return "none";
    case AttentionKind::se:
      return "se";
    case AttentionKind::cbam:
      return "cbam";
  }
  return "none";
}

void AttentionConfig::validate(std::size_t channels) const {
  if (reduction < 1) {
    throw ConfigError("attention.reduction must be >= 1, got " +
                      std::to_string(reduction));
  }
  if (spatial_kernel < 1 || spatial_kernel % 2 == 0) {
    throw ConfigError("attention.spatial_kernel must be a positive odd integer, got " +
                      std::to_string(spatial_kernel));
  }
  if (channels / static_cast<std::size_t>(reduction) < 1) {
    throw ConfigError("attention.reduction " + std::to_string(reduction) +
                      " leaves no hidden units for " + std::to_string(channels) +
                      " channels");
  }
}

AttentionBlock::AttentionBlock(const AttentionConfig& cfg, std::size_t channels,
                               const std::string& name)
    : kind_(cfg.kind), channels_(channels), kernel_(cfg.spatial_kernel), name_(name) {
  if (kind_ == AttentionKind::none) {
    throw ConfigError("attention block '" + name + "' constructed with kind none");
  }
  cfg.validate(channels);
  hidden_ = channels / static_cast<std::size_t>(cfg.reduction);
  mlp_w1_ = Param(name + ".mlp.w1", {hidden_, channels_});
  mlp_b1_ = Param(name + ".mlp.b1", {hidden_});
  mlp_w2_ = Param(name + ".mlp.w2", {channels_, hidden_});
  mlp_b2_ = Param(name + ".mlp.b2", {channels_});
  if (kind_ == AttentionKind::cbam) {
    const auto k = static_cast<std::size_t>(kernel_);
    conv_w_ = Param(name + ".spatial.w", {2, k, k});
    conv_b_ = Param(name + ".spatial.b", {1});
  }
}

void AttentionBlock::initialize(Rng& rng, double init_std, double gate_bias) {
  std::normal_distribution<double> normal(0.0, init_std);
  for (Param* p : params()) {
    std::fill(p->value.begin(), p->value.end(), 0.0);
    p->zero_grad();
  }
  for (auto* p : {&mlp_w1_, &mlp_w2_, &conv_w_}) {
    for (auto& v : p->value) v = normal(rng);
  }
  // CBAM sums two MLP passes, so each carries half the requested bias.
  const double mlp_bias = kind_ == AttentionKind::cbam ? gate_bias / 2 : gate_bias;
  std::fill(mlp_b2_.value.begin(), mlp_b2_.value.end(), mlp_bias);
  std::fill(conv_b_.value.begin(), conv_b_.value.end(), gate_bias);
}

void AttentionBlock::saturate(double preactivation) {
  std::fill(mlp_w2_.value.begin(), mlp_w2_.value.end(), 0.0);
  const double mlp_bias =
      kind_ == AttentionKind::cbam ? preactivation / 2 : preactivation;
  std::fill(mlp_b2_.value.begin(), mlp_b2_.value.end(), mlp_bias);
  std::fill(conv_w_.value.begin(), conv_w_.value.end(), 0.0);
  std::fill(conv_b_.value.begin(), conv_b_.value.end(), preactivation);
}

ParamList AttentionBlock::params() {
  ParamList out{&mlp_w1_, &mlp_b1_, &mlp_w2_, &mlp_b2_};
  if (kind_ == AttentionKind::cbam) {
    out.push_back(&conv_w_);
    out.push_back(&conv_b_);
  }
  return out;
}

ConstParamList AttentionBlock::params() const {
  ConstParamList out{&mlp_w1_, &mlp_b1_, &mlp_w2_, &mlp_b2_};
  if (kind_ == AttentionKind::cbam) {
    out.push_back(&conv_w_);
    out.push_back(&conv_b_);
  }
  return out;
}

void AttentionBlock::check_input(const FeatureMap& x) const {
  if (x.channels() != channels_) {
    throw ConfigError("attention block '" + name_ + "' expects " +
                      std::to_string(channels_) + " channels, got " +
                      x.shape_string());
  }
  require_finite(x, "attention");
}

std::vector<Real> AttentionBlock::mlp(const std::vector<Real>& v,
                                      std::vector<Real>* hidden_pre) const {
  std::vector<Real> pre(hidden_);
  for (std::size_t j = 0; j < hidden_; ++j) {
    Real acc = mlp_b1_.value[j];
    for (std::size_t c = 0; c < channels_; ++c) {
      acc += mlp_w1_.value[j * channels_ + c] * v[c];
    }
    pre[j] = acc;
  }
  std::vector<Real> out(channels_);
  for (std::size_t c = 0; c < channels_; ++c) {
    Real acc = mlp_b2_.value[c];
    for (std::size_t j = 0; j < hidden_; ++j) {
      acc += mlp_w2_.value[c * hidden_ + j] * std::max<Real>(pre[j], 0.0);
    }
    out[c] = acc;
  }
  if (hidden_pre) *hidden_pre = std::move(pre);
  return out;
}

void AttentionBlock::mlp_backward(const std::vector<Real>& v,
                                  const std::vector<Real>& hidden_pre,
                                  const std::vector<Real>& grad_out,
                                  std::vector<Real>& grad_in) {
  std::vector<Real> grad_hidden(hidden_, 0.0);
  for (std::size_t c = 0; c < channels_; ++c) {
    mlp_b2_.grad[c] += grad_out[c];
    for (std::size_t j = 0; j < hidden_; ++j) {
      const Real h = std::max<Real>(hidden_pre[j], 0.0);
      mlp_w2_.grad[c * hidden_ + j] += grad_out[c] * h;
      grad_hidden[j] += mlp_w2_.value[c * hidden_ + j] * grad_out[c];
    }
  }
  grad_in.assign(channels_, 0.0);
  for (std::size_t j = 0; j < hidden_; ++j) {
    if (hidden_pre[j] <= 0.0) continue;
    mlp_b1_.grad[j] += grad_hidden[j];
    for (std::size_t c = 0; c < channels_; ++c) {
      mlp_w1_.grad[j * channels_ + c] += grad_hidden[j] * v[c];
      grad_in[c] += mlp_w1_.value[j * channels_ + c] * grad_hidden[j];
    }
  }
}

std::vector<Real> AttentionBlock::channel_scale(const FeatureMap& x,
                                                AttentionCache* cache) const {
  check_input(x);
  const std::size_t plane = x.plane();
  std::vector<Real> avg(channels_, 0.0);
  std::vector<Real> mx(channels_, 0.0);
  std::vector<std::size_t> mx_idx(channels_, 0);
  for (std::size_t c = 0; c < channels_; ++c) {
    auto ch = x.channel(c);
    Real sum = 0.0;
    Real best = ch[0];
    std::size_t best_i = 0;
    for (std::size_t i = 0; i < plane; ++i) {
      sum += ch[i];
      if (ch[i] > best) {
        best = ch[i];
        best_i = i;
      }
    }
    avg[c] = sum / static_cast<Real>(plane);
    mx[c] = best;
    mx_idx[c] = best_i;
  }

  std::vector<Real> hidden_avg;
  std::vector<Real> hidden_max;
  std::vector<Real> pre = mlp(avg, &hidden_avg);
  if (kind_ == AttentionKind::cbam) {
    const std::vector<Real> pre_max = mlp(mx, &hidden_max);
    for (std::size_t c = 0; c < channels_; ++c) pre[c] += pre_max[c];
  }
  std::vector<Real> gate(channels_);
  for (std::size_t c = 0; c < channels_; ++c) gate[c] = sigmoid(pre[c]);

  if (cache) {
    cache->avg_pool = std::move(avg);
    cache->max_pool = std::move(mx);
    cache->max_pool_index = std::move(mx_idx);
    cache->hidden_avg_pre = std::move(hidden_avg);
    cache->hidden_max_pre = std::move(hidden_max);
    cache->channel_gate = gate;
  }
  return gate;
}

FeatureMap AttentionBlock::spatial_scale(const FeatureMap& x,
                                         AttentionCache* cache) const {
  if (kind_ != AttentionKind::cbam) {
    throw ConfigError("spatial attention requires a cbam block, '" + name_ + "' is " +
                      to_string(kind_));
  }
  check_input(x);
  const std::size_t H = x.height();
  const std::size_t W = x.width();
  FeatureMap desc(2, H, W);
  std::vector<std::size_t> argmax(H * W, 0);
  for (std::size_t i = 0; i < H * W; ++i) {
    Real sum = 0.0;
    Real best = x.data()[i];
    std::size_t best_c = 0;
    for (std::size_t c = 0; c < channels_; ++c) {
      const Real v = x.data()[c * H * W + i];
      sum += v;
      if (v > best) {
        best = v;
        best_c = c;
      }
    }
    desc.data()[i] = sum / static_cast<Real>(channels_);
    desc.data()[H * W + i] = best;
    argmax[i] = best_c;
  }

  const int k = kernel_;
  const int pad = (k - 1) / 2;
  FeatureMap gate(1, H, W);
  for (std::size_t h = 0; h < H; ++h) {
    for (std::size_t w = 0; w < W; ++w) {
      Real acc = conv_b_.value[0];
      for (std::size_t ch = 0; ch < 2; ++ch) {
        for (int i = 0; i < k; ++i) {
          const int hh = static_cast<int>(h) + i - pad;
          if (hh < 0 || hh >= static_cast<int>(H)) continue;
          for (int j = 0; j < k; ++j) {
            const int ww = static_cast<int>(w) + j - pad;
            if (ww < 0 || ww >= static_cast<int>(W)) continue;
            acc += conv_w_.value[(ch * k + i) * k + j] *
                   desc.at(ch, static_cast<std::size_t>(hh), static_cast<std::size_t>(ww));
          }
        }
      }
      gate.at(0, h, w) = sigmoid(acc);
    }
  }
  if (cache) {
    cache->descriptor = std::move(desc);
    cache->channel_argmax = std::move(argmax);
    cache->spatial_gate = gate;
  }
  return gate;
}

FeatureMap AttentionBlock::forward(const FeatureMap& x, AttentionCache* cache) const {
  if (cache) cache->input = x;
  const std::vector<Real> gate = channel_scale(x, cache);
  FeatureMap refined = x;
  for (std::size_t c = 0; c < channels_; ++c) {
    for (Real& v : refined.channel(c)) v *= gate[c];
  }
  if (kind_ == AttentionKind::se) return refined;

  const FeatureMap spatial = spatial_scale(refined, cache);
  FeatureMap out = refined;
  const std::size_t plane = x.plane();
  for (std::size_t c = 0; c < channels_; ++c) {
    auto ch = out.channel(c);
    for (std::size_t i = 0; i < plane; ++i) ch[i] *= spatial.data()[i];
  }
  if (cache) cache->refined = std::move(refined);
  return out;
}

FeatureMap AttentionBlock::backward(const AttentionCache& cache,
                                   const FeatureMap& grad_out) {
  const FeatureMap& x = cache.input;
  if (!grad_out.same_shape(x)) {
    throw ConfigError("attention backward: gradient shape " + grad_out.shape_string() +
                      " does not match input " + x.shape_string());
  }
  const std::size_t H = x.height();
  const std::size_t W = x.width();
  const std::size_t plane = H * W;

  // Gradient with respect to the channel-gated map x'.
  FeatureMap grad_refined;
  if (kind_ == AttentionKind::se) {
    grad_refined = grad_out;
  } else {
    const FeatureMap& refined = cache.refined;
    const auto& sgate = cache.spatial_gate.data();
    grad_refined = FeatureMap(channels_, H, W);
    FeatureMap grad_pre(1, H, W);
    for (std::size_t i = 0; i < plane; ++i) {
      Real gs = 0.0;
      for (std::size_t c = 0; c < channels_; ++c) {
        gs += grad_out.data()[c * plane + i] * refined.data()[c * plane + i];
        grad_refined.data()[c * plane + i] = grad_out.data()[c * plane + i] * sgate[i];
      }
      grad_pre.data()[i] = gs * sgate[i] * (1.0 - sgate[i]);
    }

    const int k = kernel_;
    const int pad = (k - 1) / 2;
    FeatureMap grad_desc(2, H, W);
    for (std::size_t h = 0; h < H; ++h) {
      for (std::size_t w = 0; w < W; ++w) {
        const Real g = grad_pre.at(0, h, w);
        conv_b_.grad[0] += g;
        if (g == 0.0) continue;
        for (std::size_t ch = 0; ch < 2; ++ch) {
          for (int i = 0; i < k; ++i) {
            const int hh = static_cast<int>(h) + i - pad;
            if (hh < 0 || hh >= static_cast<int>(H)) continue;
            for (int j = 0; j < k; ++j) {
              const int ww = static_cast<int>(w) + j - pad;
              if (ww < 0 || ww >= static_cast<int>(W)) continue;
              const auto uh = static_cast<std::size_t>(hh);
              const auto uw = static_cast<std::size_t>(ww);
              const std::size_t widx = (ch * k + i) * k + j;
              conv_w_.grad[widx] += g * cache.descriptor.at(ch, uh, uw);
              grad_desc.at(ch, uh, uw) += g * conv_w_.value[widx];
            }
          }
        }
      }
    }
    const Real inv_c = 1.0 / static_cast<Real>(channels_);
    for (std::size_t i = 0; i < plane; ++i) {
      const Real gmean = grad_desc.data()[i] * inv_c;
      for (std::size_t c = 0; c < channels_; ++c) {
        grad_refined.data()[c * plane + i] += gmean;
      }
      grad_refined.data()[cache.channel_argmax[i] * plane + i] +=
          grad_desc.data()[plane + i];
    }
  }

  // Channel gate.
  const auto& gate = cache.channel_gate;
  FeatureMap grad_in(channels_, H, W);
  std::vector<Real> grad_pre(channels_);
  for (std::size_t c = 0; c < channels_; ++c) {
    Real gs = 0.0;
    auto gr = grad_refined.channel(c);
    auto xc = x.channel(c);
    auto gi = grad_in.channel(c);
    for (std::size_t i = 0; i < plane; ++i) {
      gs += gr[i] * xc[i];
      gi[i] = gr[i] * gate[c];
    }
    grad_pre[c] = gs * gate[c] * (1.0 - gate[c]);
  }

  std::vector<Real> grad_avg;
  mlp_backward(cache.avg_pool, cache.hidden_avg_pre, grad_pre, grad_avg);
  const Real inv_plane = 1.0 / static_cast<Real>(plane);
  for (std::size_t c = 0; c < channels_; ++c) {
    for (Real& v : grad_in.channel(c)) v += grad_avg[c] * inv_plane;
  }
  if (kind_ == AttentionKind::cbam) {
    std::vector<Real> grad_max;
    mlp_backward(cache.max_pool, cache.hidden_max_pre, grad_pre, grad_max);
    for (std::size_t c = 0; c < channels_; ++c) {
      grad_in.channel(c)[cache.max_pool_index[c]] += grad_max[c];
    }
  }
  return grad_in;
}

FeatureMap se_block(const FeatureMap& x, const AttentionBlock& state) {
  if (state.kind() != AttentionKind::se) {
    throw ConfigError("se_block called with a " + to_string(state.kind()) + " state");
  }
  return state.forward(x);
}

std::vector<Real> cbam_channel_attention(const FeatureMap& x, const AttentionBlock& state) {
  if (state.kind() != AttentionKind::cbam) {
    throw ConfigError("cbam_channel_attention called with a " + to_string(state.kind()) +
                      " state");
  }
  return state.channel_scale(x);
}

FeatureMap cbam_spatial_attention(const FeatureMap& x, const AttentionBlock& state) {
  return state.spatial_scale(x);
}

FeatureMap cbam_block(const FeatureMap& x, const AttentionBlock& state) {
  if (state.kind() != AttentionKind::cbam) {
    throw ConfigError("cbam_block called with a " + to_string(state.kind()) + " state");
  }
  return state.forward(x);
}

}  // namespace attnflow
