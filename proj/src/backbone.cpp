#include "attnflow/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>

#include <curl/curl.h>

#include "attnflow/error.hpp"

namespace attnflow {

namespace {

constexpr std::size_t kPoolKernel = 3;
constexpr std::size_t kPoolStride = 2;

std::string conv_name(std::size_t stage) { return "conv" + std::to_string(stage + 1); }

std::string attention_name(std::size_t site) { return "ab" + std::to_string(site + 1); }

std::optional<std::size_t> site_for_stage(std::size_t stage) {
  for (std::size_t s = 0; s < kAttentionSites; ++s) {
    if (kAttentionStage[s] == stage) return s;
  }
  return std::nullopt;
}

std::size_t curl_write(char* data, std::size_t size, std::size_t n, void* user) {
  auto* out = static_cast<std::ofstream*>(user);
  out->write(data, static_cast<std::streamsize>(size * n));
  return out->good() ? size * n : 0;
}

void download(const std::string& url, const std::filesystem::path& dest) {
  const auto partial = dest.string() + ".part";
  {
    std::ofstream out(partial, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + partial);
    CURL* curl = curl_easy_init();
    if (!curl) throw IoError("libcurl initialisation failed");
    curl_easy_setopt(curl, CURLOPT_URL, url.c_str());
    curl_easy_setopt(curl, CURLOPT_FOLLOWLOCATION, 1L);
    curl_easy_setopt(curl, CURLOPT_FAILONERROR, 1L);
    curl_easy_setopt(curl, CURLOPT_WRITEFUNCTION, curl_write);
    curl_easy_setopt(curl, CURLOPT_WRITEDATA, &out);
    const CURLcode rc = curl_easy_perform(curl);
    curl_easy_cleanup(curl);
    if (rc != CURLE_OK) {
      std::filesystem::remove(partial);
      throw IoError("failed to fetch " + url + ": " + curl_easy_strerror(rc));
    }
  }
  std::filesystem::rename(partial, dest);
}

}  // namespace

bool BackboneConfig::any_attention() const {
  return attention.kind != AttentionKind::none &&
         std::any_of(ab_flags.begin(), ab_flags.end(), [](bool b) { return b; });
}

bool BackboneConfig::attention_at(std::size_t site) const {
  return attention.kind != AttentionKind::none && ab_flags.at(site);
}

std::vector<StageSpec> BackboneConfig::stages() const {
  if (channels.size() != kConvStages) {
    throw ConfigError("backbone.channels must list " + std::to_string(kConvStages) +
                      " stage widths, got " + std::to_string(channels.size()));
  }
  std::vector<StageSpec> out(kConvStages);
  out[0] = {{3, channels[0], 11, 4, 2}, true};
  out[1] = {{channels[0], channels[1], 5, 1, 2}, true};
  out[2] = {{channels[1], channels[2], 3, 1, 1}, false};
  out[3] = {{channels[2], channels[3], 3, 1, 1}, false};
  out[4] = {{channels[3], channels[4], 3, 1, 1}, false};
  return out;
}

std::size_t BackboneConfig::final_extent(int scale) const {
  auto extent = static_cast<std::size_t>(scale);
  for (const auto& st : stages()) {
    extent = window_output(extent, st.conv.kernel, st.conv.stride, st.conv.padding,
                           "scale " + std::to_string(scale));
    if (st.pool) {
      extent = window_output(extent, kPoolKernel, kPoolStride, 0,
                             "scale " + std::to_string(scale) + " pooling");
    }
  }
  return extent;
}

void BackboneConfig::validate() const {
  if (scales.empty()) throw ConfigError("backbone.scales must not be empty");
  for (auto c : channels) {
    if (c == 0) throw ConfigError("backbone.channels entries must be positive");
  }
  const auto specs = stages();
  for (int s : scales) {
    if (s <= 0) throw ConfigError("backbone.scales entries must be positive");
    final_extent(s);
  }
  for (std::size_t site = 0; site < kAttentionSites; ++site) {
    if (attention_at(site)) {
      attention.validate(specs[kAttentionStage[site]].conv.out_channels);
    }
  }
}

Backbone::Backbone(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  specs_ = cfg_.stages();
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    convs_.emplace_back(specs_[i].conv, conv_name(i));
  }
  for (std::size_t site = 0; site < kAttentionSites; ++site) {
    if (cfg_.attention_at(site)) {
      attention_[site].emplace(cfg_.attention,
                               specs_[kAttentionStage[site]].conv.out_channels,
                               attention_name(site));
    }
  }
}

void Backbone::load_pretrained(const Archive& weights) {
  for (auto* p : conv_params()) restore_param(weights, *p);
}

void Backbone::init_attention(Rng& rng) {
  for (auto& block : attention_) {
    if (block) block->initialize(rng, cfg_.attention.init_std, cfg_.attention.init_gate_bias);
  }
}

void Backbone::saturate_attention(double preactivation) {
  for (auto& block : attention_) {
    if (block) block->saturate(preactivation);
  }
}

ParamList Backbone::conv_params() {
  ParamList out;
  for (auto& c : convs_) {
    out.push_back(&c.weight());
    out.push_back(&c.bias());
  }
  return out;
}

ConstParamList Backbone::conv_params() const {
  ConstParamList out;
  for (const auto& c : convs_) {
    out.push_back(&c.weight());
    out.push_back(&c.bias());
  }
  return out;
}

ParamList Backbone::attention_params() {
  ParamList out;
  for (auto& block : attention_) {
    if (!block) continue;
    for (auto* p : block->params()) out.push_back(p);
  }
  return out;
}

ConstParamList Backbone::attention_params() const {
  ConstParamList out;
  for (const auto& block : attention_) {
    if (!block) continue;
    for (const auto* p : block->params()) out.push_back(p);
  }
  return out;
}

FeatureMap Backbone::forward_scale(const FeatureMap& input, ScaleTape* tape) const {
  require_finite(input, "backbone input");
  if (tape) tape->stages.assign(specs_.size(), StageTape{});
  FeatureMap x = input;
  for (std::size_t i = 0; i < specs_.size(); ++i) {
    StageTape* st = tape ? &tape->stages[i] : nullptr;
    x = relu(convs_[i].forward(x, st ? &st->conv : nullptr));
    if (st) st->activated = x;
    if (auto site = site_for_stage(i); site && attention_[*site]) {
      if (st) st->attention.emplace();
      x = attention_[*site]->forward(x, st ? &*st->attention : nullptr);
    }
    if (specs_[i].pool) {
      if (st) st->pool.emplace();
      x = max_pool(x, kPoolKernel, kPoolStride, st ? &*st->pool : nullptr);
    }
  }
  if (tape) tape->final_map = x;
  return x;
}

std::vector<Real> Backbone::embed(const std::vector<FeatureMap>& scaled_inputs,
                                  std::vector<ScaleTape>* tapes) const {
  if (scaled_inputs.size() != cfg_.scales.size()) {
    throw ConfigError("backbone expects " + std::to_string(cfg_.scales.size()) +
                      " scaled inputs, got " + std::to_string(scaled_inputs.size()));
  }
  if (tapes) tapes->assign(scaled_inputs.size(), ScaleTape{});
  std::vector<Real> out;
  out.reserve(cfg_.embed_dim());
  for (std::size_t s = 0; s < scaled_inputs.size(); ++s) {
    const FeatureMap fmap = forward_scale(scaled_inputs[s], tapes ? &(*tapes)[s] : nullptr);
    const auto pooled = global_average_pool(fmap);
    out.insert(out.end(), pooled.begin(), pooled.end());
  }
  return out;
}

void Backbone::backward(std::vector<ScaleTape>& tapes, std::span<const Real> grad_embedding,
                        bool conv_grads) {
  if (grad_embedding.size() != cfg_.embed_dim()) {
    throw ConfigError("backbone backward: gradient length mismatch");
  }
  // Lowest stage whose parameters receive gradients.
  std::optional<std::size_t> lowest;
  if (conv_grads) {
    lowest = 0;
  } else {
    for (std::size_t site = 0; site < kAttentionSites && !lowest; ++site) {
      if (attention_[site]) lowest = kAttentionStage[site];
    }
  }
  if (!lowest) return;

  const std::size_t per_scale = cfg_.per_scale_length();
  for (std::size_t s = 0; s < tapes.size(); ++s) {
    ScaleTape& tape = tapes[s];
    const FeatureMap& fmap = tape.final_map;
    FeatureMap grad(fmap.channels(), fmap.height(), fmap.width());
    const Real inv = 1.0 / static_cast<Real>(fmap.plane());
    for (std::size_t c = 0; c < fmap.channels(); ++c) {
      const Real g = grad_embedding[s * per_scale + c] * inv;
      for (Real& v : grad.channel(c)) v = g;
    }
    for (std::size_t i = specs_.size(); i-- > *lowest;) {
      StageTape& st = tape.stages[i];
      if (st.pool) grad = max_pool_backward(*st.pool, grad, specs_[i].conv.out_channels);
      if (auto site = site_for_stage(i); site && attention_[*site]) {
        grad = attention_[*site]->backward(*st.attention, grad);
      }
      if (i == *lowest && !conv_grads) break;
      grad = relu_backward(st.activated, grad);
      grad = convs_[i].backward(st.conv, grad, conv_grads);
    }
  }
}

FeatureEmbedding extract_features(const RgbImage& image, const Backbone& backbone,
                                  const std::string& image_id,
                                  const std::string& transform_id) {
  FeatureEmbedding out;
  out.values = backbone.embed(preprocess(image, backbone.config().scales));
  out.source_image_id = image_id;
  out.transform_id = transform_id;
  for (std::size_t i = 0; i < out.values.size(); ++i) {
    if (!std::isfinite(out.values[i])) {
      throw NumericalError("non-finite embedding entry " + std::to_string(i) +
                           " for image " + image_id);
    }
  }
  return out;
}

std::vector<LayerHandle> gradcam_target_layer(const BackboneConfig& cfg) {
  std::vector<LayerHandle> out;
  const bool ab3 = cfg.attention_at(kAttentionSites - 1);
  for (std::size_t s = 0; s < cfg.scales.size(); ++s) {
    LayerHandle h;
    h.scale_index = s;
    h.stage_index = kConvStages - 1;
    h.after_attention = ab3;
    h.name = conv_name(kConvStages - 1) + (ab3 ? "+ab3" : "") + "@" +
             std::to_string(cfg.scales[s]);
    out.push_back(std::move(h));
  }
  return out;
}

Archive make_surrogate_weights(const BackboneConfig& cfg, std::uint64_t seed) {
  Archive a;
  a.kind = "backbone_weights";
  a.meta = {{"source", "surrogate"},
            {"seed", seed},
            {"channels", cfg.channels}};
  Rng rng = make_rng(seed, "backbone/surrogate");
  const auto specs = cfg.stages();
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const ConvSpec& spec = specs[i].conv;
    const Conv2d conv(spec, conv_name(i));
    const double fan_in = static_cast<double>(spec.in_channels * spec.kernel * spec.kernel);
    std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / fan_in));
    TensorBlock w{conv.weight().name, conv.weight().shape, conv.weight().value};
    for (auto& v : w.values) v = normal(rng);
    TensorBlock b{conv.bias().name, conv.bias().shape, conv.bias().value};
    for (auto& v : b.values) v = 0.01 * normal(rng);
    a.add(std::move(w));
    a.add(std::move(b));
  }
  return a;
}

std::filesystem::path cache_directory() {
  if (const char* env = std::getenv("ATTNFLOW_CACHE"); env && *env) return env;
  if (const char* xdg = std::getenv("XDG_CACHE_HOME"); xdg && *xdg) {
    return std::filesystem::path(xdg) / "attnflow";
  }
  if (const char* home = std::getenv("HOME"); home && *home) {
    return std::filesystem::path(home) / ".cache" / "attnflow";
  }
  return std::filesystem::temp_directory_path() / "attnflow";
}

Archive load_pretrained_archive(const std::string& path_or_url) {
  if (path_or_url.empty()) {
    throw ConfigError("backbone.pretrained_path is not set; pretrained weights are required");
  }
  std::filesystem::path local = path_or_url;
  if (path_or_url.rfind("http://", 0) == 0 || path_or_url.rfind("https://", 0) == 0) {
    const auto dir = cache_directory();
    std::filesystem::create_directories(dir);
    const std::string key = sha256_hex(std::span<const std::uint8_t>(
        reinterpret_cast<const std::uint8_t*>(path_or_url.data()), path_or_url.size()));
    local = dir / (key.substr(0, 16) + ".weights");
    if (!std::filesystem::exists(local)) download(path_or_url, local);
  }
  if (!std::filesystem::exists(local)) {
    throw IoError("pretrained weights not found at " + local.string());
  }
  Archive a = read_archive(local);
  if (a.kind != "backbone_weights") {
    throw ConfigError(local.string() + " holds a '" + a.kind +
                      "' archive, expected backbone_weights");
  }
  a.meta["sha256"] = sha256_file(local);
  return a;
}

FeatureMap ResidualStage::transform(const FeatureMap& x) const {
  return second.forward(relu(first.forward(x)));
}

FeatureMap ResidualStage::forward(const FeatureMap& x) const {
  FeatureMap branch = transform(x);
  if (attention) branch = attention->forward(branch);
  if (!branch.same_shape(x)) {
    throw ConfigError("residual stage: branch shape " + branch.shape_string() +
                      " does not match identity " + x.shape_string());
  }
  for (std::size_t i = 0; i < branch.size(); ++i) branch.data()[i] += x.data()[i];
  return branch;
}

ResidualStage make_residual_stage(std::size_t channels, const std::string& name, Rng& rng) {
  const ConvSpec spec{channels, channels, 3, 1, 1};
  ResidualStage st{name, Conv2d(spec, name + ".conv1"), Conv2d(spec, name + ".conv2"),
                   std::nullopt};
  std::normal_distribution<double> normal(0.0, std::sqrt(2.0 / (9.0 * channels)));
  for (auto* conv : {&st.first, &st.second}) {
    for (auto& v : conv->weight().value) v = normal(rng);
  }
  return st;
}

ResidualStage insert_attention_residual(const Stage& stage, const AttentionConfig& attention,
                                        Rng& rng) {
  const auto* residual = std::get_if<ResidualStage>(&stage);
  if (!residual) {
    throw ConfigError("insert_attention_residual: stage has no residual branch");
  }
  ResidualStage out = *residual;
  out.attention.reset();
  if (attention.kind == AttentionKind::none) return out;
  const std::size_t channels = residual->second.spec().out_channels;
  out.attention.emplace(attention, channels, residual->name + ".attention");
  out.attention->initialize(rng, attention.init_std, attention.init_gate_bias);
  return out;
}

}  // namespace attnflow
