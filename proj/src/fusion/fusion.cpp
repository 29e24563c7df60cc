#include <cmath>

#include "merv/errors.hpp"
#include "merv/fusion.hpp"
#include "merv/numerics.hpp"
#include "merv/rng.hpp"

namespace merv {

std::string to_string(FusionStrategy s) {
  switch (s) {
    case FusionStrategy::cross_attn: return "cross_attn";
    case FusionStrategy::concat_seq: return "concat_seq";
    case FusionStrategy::concat_channel: return "concat_channel";
    case FusionStrategy::learnable_weights: return "learnable_weights";
    case FusionStrategy::fixed_mix: return "fixed_mix";
  }
  return "cross_attn";
}

FusionStrategy fusion_strategy_from_string(const std::string& name) {
  if (name == "cross_attn") return FusionStrategy::cross_attn;
  if (name == "concat_seq") return FusionStrategy::concat_seq;
  if (name == "concat_channel") return FusionStrategy::concat_channel;
  if (name == "learnable_weights") return FusionStrategy::learnable_weights;
  if (name == "fixed_mix") return FusionStrategy::fixed_mix;
  throw ConfigError("unknown fusion strategy '" + name + "'");
}

void FusionConfig::validate(std::size_t encoders) const {
  if (encoders == 0) throw ConfigError("fusion needs at least one encoder");
  if (strategy != FusionStrategy::fixed_mix || fixed_weights.empty()) return;
  if (fixed_weights.size() != encoders) {
    throw ConfigError("fixed_mix has " + std::to_string(fixed_weights.size()) + " weights for " +
                      std::to_string(encoders) + " encoders");
  }
  double sum = 0.0;
  for (double w : fixed_weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("fixed_mix weights must be nonnegative");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-6) throw ConfigError("fixed_mix weights must sum to 1");
}

std::vector<double> FusionConfig::mix_weights(std::size_t encoders) const {
  validate(encoders);
  if (!fixed_weights.empty()) return fixed_weights;
  return std::vector<double>(encoders, 1.0 / static_cast<double>(encoders));
}

std::size_t FusionConfig::output_tokens(std::size_t encoders, std::size_t length) const {
  return strategy == FusionStrategy::concat_seq ? encoders * length : length;
}

template <typename T>
void FusionParams<T>::visit(const std::function<void(const std::string&, BasicTensor<T>&)>& fn) {
  auto maybe = [&](const char* name, BasicTensor<T>& t) {
    if (!t.empty()) fn(name, t);
  };
  maybe("query", query);
  maybe("mix_logits", mix_logits);
  maybe("mlp_in", mlp_in);
  maybe("mlp_in_bias", mlp_in_bias);
  maybe("mlp_out", mlp_out);
  maybe("mlp_out_bias", mlp_out_bias);
}

template <typename T>
void FusionParams<T>::visit(const std::function<void(const std::string&, const BasicTensor<T>&)>& fn) const {
  const_cast<FusionParams*>(this)->visit([&](const std::string& n, BasicTensor<T>& t) { fn(n, t); });
}

template <typename T>
template <typename U>
FusionParams<U> FusionParams<T>::cast() const {
  auto c = [](const BasicTensor<T>& t) { return t.empty() ? BasicTensor<U>() : t.template cast<U>(); };
  FusionParams<U> out;
  out.query = c(query);
  out.mix_logits = c(mix_logits);
  out.mlp_in = c(mlp_in);
  out.mlp_in_bias = c(mlp_in_bias);
  out.mlp_out = c(mlp_out);
  out.mlp_out_bias = c(mlp_out_bias);
  return out;
}

template <typename T>
FusionParams<T> init_fusion(const FusionConfig& cfg, std::size_t encoders, std::size_t dim) {
  cfg.validate(encoders);
  Rng rng = Rng::derive(cfg.seed, "fusion:" + to_string(cfg.strategy));
  auto gaussian = [&](Shape shape, double stddev) {
    std::vector<T> data(shape_numel(shape));
    for (auto& v : data) v = static_cast<T>(rng.normal() * stddev);
    return BasicTensor<T>(std::move(shape), std::move(data));
  };
  FusionParams<T> p;
  switch (cfg.strategy) {
    case FusionStrategy::cross_attn:
      p.query = gaussian({1, dim}, 1.0 / std::sqrt(static_cast<double>(dim)));
      break;
    case FusionStrategy::learnable_weights:
      p.mix_logits = BasicTensor<T>({encoders}, T(0));
      break;
    case FusionStrategy::concat_channel: {
      const std::size_t hidden = cfg.mlp_hidden ? cfg.mlp_hidden : dim;
      p.mlp_in = gaussian({encoders * dim, hidden}, 1.0 / std::sqrt(static_cast<double>(encoders * dim)));
      p.mlp_in_bias = BasicTensor<T>({hidden}, T(0));
      p.mlp_out = gaussian({hidden, dim}, 1.0 / std::sqrt(static_cast<double>(hidden)));
      p.mlp_out_bias = BasicTensor<T>({dim}, T(0));
      break;
    }
    case FusionStrategy::concat_seq:
    case FusionStrategy::fixed_mix:
      break;
  }
  return p;
}

namespace {

template <typename T>
void check_features(const std::vector<BasicTensor<T>>& features) {
  if (features.empty()) throw DimensionError("fusion needs at least one feature");
  const Shape& s = features.front().shape();
  if (s.size() != 2) throw DimensionError("fusion features must be (l, d), got " + shape_str(s));
  for (const auto& f : features) {
    if (f.shape() != s) {
      throw DimensionError("fusion features disagree: " + shape_str(s) + " vs " + shape_str(f.shape()));
    }
  }
}

template <typename T>
BasicTensor<T> mix(const std::vector<BasicTensor<T>>& features, const BasicTensor<T>& weights) {
  BasicTensor<T> out(features.front().shape());
  for (std::size_t e = 0; e < features.size(); ++e) {
    const T w = weights[e];
    for (std::size_t i = 0; i < out.numel(); ++i) out[i] += w * features[e][i];
  }
  return out;
}

}  // namespace

template <typename T>
CrossAttention<T> cross_attend(const BasicTensor<T>& query, const std::vector<BasicTensor<T>>& features) {
  check_features(features);
  const std::size_t n = features.size(), d = features.front().dim(1);
  if (query.shape() != Shape{1, d}) {
    throw DimensionError("query must be (1, " + std::to_string(d) + "), got " + shape_str(query.shape()));
  }
  CrossAttention<T> r;
  r.keys = BasicTensor<T>({n, d});
  for (std::size_t e = 0; e < n; ++e) {
    const BasicTensor<T> m = mean_over_axis(features[e], 0);
    std::copy(m.data().begin(), m.data().end(), r.keys.data().begin() + static_cast<std::ptrdiff_t>(e * d));
  }
  BasicTensor<T> logits = matmul_nt(query, r.keys);  // (1, N)
  const T scale = T(1) / std::sqrt(static_cast<T>(d));
  for (auto& v : logits.data()) v *= scale;
  r.weights = softmax(logits, 1).reshaped({n});
  r.output = mix(features, r.weights);
  return r;
}

template <typename T>
FusionOutput<T> fuse(const std::vector<BasicTensor<T>>& features, const FusionConfig& cfg,
                     const FusionParams<T>& params) {
  check_features(features);
  cfg.validate(features.size());
  const std::size_t n = features.size(), len = features.front().dim(0), d = features.front().dim(1);
  FusionOutput<T> out;
  switch (cfg.strategy) {
    case FusionStrategy::cross_attn: {
      auto r = cross_attend(params.query, features);
      out.tokens = std::move(r.output);
      out.weights = std::move(r.weights);
      break;
    }
    case FusionStrategy::concat_seq: {
      std::vector<T> data;
      data.reserve(n * len * d);
      for (const auto& f : features) data.insert(data.end(), f.data().begin(), f.data().end());
      out.tokens = BasicTensor<T>({n * len, d}, std::move(data));
      break;
    }
    case FusionStrategy::concat_channel: {
      BasicTensor<T> cat({len, n * d});
      for (std::size_t r = 0; r < len; ++r)
        for (std::size_t e = 0; e < n; ++e)
          std::copy_n(features[e].data().data() + r * d, d, cat.data().data() + r * n * d + e * d);
      if (params.mlp_in.empty() || params.mlp_in.dim(0) != n * d) {
        throw DimensionError("concat_channel MLP expects " + std::to_string(n * d) + " inputs");
      }
      const BasicTensor<T> hidden = gelu(linear(cat, params.mlp_in, &params.mlp_in_bias));
      out.tokens = linear(hidden, params.mlp_out, &params.mlp_out_bias);
      break;
    }
    case FusionStrategy::learnable_weights: {
      if (params.mix_logits.shape() != Shape{n}) throw DimensionError("mix_logits must have one entry per encoder");
      out.weights = softmax(params.mix_logits, 0);
      out.tokens = mix(features, out.weights);
      break;
    }
    case FusionStrategy::fixed_mix: {
      const auto w = cfg.mix_weights(n);
      std::vector<T> wt(w.begin(), w.end());
      out.weights = BasicTensor<T>({n}, std::move(wt));
      out.tokens = mix(features, out.weights);
      break;
    }
  }
  return out;
}

template struct FusionParams<float>;
template struct FusionParams<double>;
template FusionParams<double> FusionParams<float>::cast<double>() const;
template FusionParams<float> FusionParams<double>::cast<float>() const;
template FusionParams<float> init_fusion<float>(const FusionConfig&, std::size_t, std::size_t);
template FusionParams<double> init_fusion<double>(const FusionConfig&, std::size_t, std::size_t);
template CrossAttention<float> cross_attend(const BasicTensor<float>&, const std::vector<BasicTensor<float>>&);
template CrossAttention<double> cross_attend(const BasicTensor<double>&, const std::vector<BasicTensor<double>>&);
template FusionOutput<float> fuse(const std::vector<BasicTensor<float>>&, const FusionConfig&,
                                  const FusionParams<float>&);
template FusionOutput<double> fuse(const std::vector<BasicTensor<double>>&, const FusionConfig&,
                                   const FusionParams<double>&);

}  // namespace merv
