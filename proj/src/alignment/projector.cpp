#include <algorithm>
#include <cmath>

#include "merv/alignment.hpp"
#include "merv/errors.hpp"
#include "merv/numerics.hpp"
#include "merv/rng.hpp"

namespace merv {

std::string to_string(ProjectorVariant v) {
  switch (v) {
    case ProjectorVariant::avg2d: return "avg2d";
    case ProjectorVariant::avg3d: return "avg3d";
    case ProjectorVariant::attn_resampler: return "attn_resampler";
    case ProjectorVariant::conv2d: return "conv2d";
    case ProjectorVariant::conv3d: return "conv3d";
  }
  return "avg2d";
}

ProjectorVariant projector_variant_from_string(const std::string& name) {
  if (name == "avg2d") return ProjectorVariant::avg2d;
  if (name == "avg3d") return ProjectorVariant::avg3d;
  if (name == "attn_resampler") return ProjectorVariant::attn_resampler;
  if (name == "conv2d") return ProjectorVariant::conv2d;
  if (name == "conv3d") return ProjectorVariant::conv3d;
  throw ConfigError("unknown projector variant '" + name + "'");
}

std::size_t ProjectorConfig::output_frames(std::size_t t) const {
  if (variant == ProjectorVariant::avg3d && avg3d_mode == TemporalPoolMode::halved) return (t + 1) / 2;
  return t;
}

std::size_t ProjectorConfig::tokens(std::size_t t) const { return output_frames(t) * target_h * target_w; }

void ProjectorConfig::validate(const std::vector<EncoderProfile>& profiles) const {
  if (target_h < 1 || target_w < 1) throw ConfigError("projector target grid must be >= 1x1");
  if (llm_dim < 1) throw ConfigError("projector output dimension must be >= 1");
  for (const auto& p : profiles) {
    if (target_h > p.out_h || target_w > p.out_w) {
      throw ConfigError("projector grid " + std::to_string(target_h) + "x" + std::to_string(target_w) +
                        " exceeds encoder '" + p.name + "' grid " + std::to_string(p.out_h) + "x" +
                        std::to_string(p.out_w));
    }
    if (variant == ProjectorVariant::attn_resampler && (resampler.heads == 0 || p.dim % resampler.heads != 0)) {
      throw ConfigError("resampler heads must divide encoder '" + p.name + "' width");
    }
  }
  if (variant == ProjectorVariant::attn_resampler && resampler.mlp_ratio == 0) {
    throw ConfigError("resampler MLP ratio must be >= 1");
  }
}

// -- parameters ---------------------------------------------------------------

template <typename T>
void EncoderProjector<T>::visit(const std::function<void(const std::string&, BasicTensor<T>&)>& fn) {
  auto maybe = [&](const char* name, BasicTensor<T>& t) {
    if (!t.empty()) fn(name, t);
  };
  maybe("projection", projection);
  maybe("latents", latents);
  maybe("latent_norm_gain", latent_norm_gain);
  maybe("latent_norm_bias", latent_norm_bias);
  maybe("feature_norm_gain", feature_norm_gain);
  maybe("feature_norm_bias", feature_norm_bias);
  maybe("mlp_norm_gain", mlp_norm_gain);
  maybe("mlp_norm_bias", mlp_norm_bias);
  maybe("wq", wq);
  maybe("wk", wk);
  maybe("wv", wv);
  maybe("wo", wo);
  maybe("mlp_in", mlp_in);
  maybe("mlp_out", mlp_out);
  for (std::size_t i = 0; i < conv_kernels.size(); ++i) fn("conv_kernel." + std::to_string(i), conv_kernels[i]);
  for (std::size_t i = 0; i < conv_biases.size(); ++i) fn("conv_bias." + std::to_string(i), conv_biases[i]);
}

template <typename T>
void EncoderProjector<T>::visit(
    const std::function<void(const std::string&, const BasicTensor<T>&)>& fn) const {
  const_cast<EncoderProjector*>(this)->visit(
      [&](const std::string& name, BasicTensor<T>& t) { fn(name, t); });
}

template <typename T>
template <typename U>
EncoderProjector<U> EncoderProjector<T>::cast() const {
  EncoderProjector<U> out;
  auto c = [](const BasicTensor<T>& t) { return t.empty() ? BasicTensor<U>() : t.template cast<U>(); };
  out.projection = c(projection);
  out.latents = c(latents);
  out.latent_norm_gain = c(latent_norm_gain);
  out.latent_norm_bias = c(latent_norm_bias);
  out.feature_norm_gain = c(feature_norm_gain);
  out.feature_norm_bias = c(feature_norm_bias);
  out.mlp_norm_gain = c(mlp_norm_gain);
  out.mlp_norm_bias = c(mlp_norm_bias);
  out.wq = c(wq);
  out.wk = c(wk);
  out.wv = c(wv);
  out.wo = c(wo);
  out.mlp_in = c(mlp_in);
  out.mlp_out = c(mlp_out);
  for (const auto& k : conv_kernels) out.conv_kernels.push_back(c(k));
  for (const auto& b : conv_biases) out.conv_biases.push_back(c(b));
  return out;
}

namespace {

template <typename T>
BasicTensor<T> gaussian(Rng& rng, Shape shape, double stddev) {
  std::vector<T> data(shape_numel(shape));
  for (auto& v : data) v = static_cast<T>(rng.normal() * stddev);
  return BasicTensor<T>(std::move(shape), std::move(data));
}

template <typename T>
BasicTensor<T> add_channel_bias(BasicTensor<T> x, const BasicTensor<T>& bias) {
  const std::size_t d = bias.numel();
  if (x.shape().back() != d) throw DimensionError("bias width mismatch");
  for (std::size_t i = 0; i < x.numel(); ++i) x[i] += bias[i % d];
  return x;
}

template <typename T>
BasicTensor<T> frame_slice(const BasicTensor<T>& v, std::size_t f) {
  const std::size_t plane = v.dim(1) * v.dim(2) * v.dim(3);
  std::vector<T> data(v.data().begin() + static_cast<std::ptrdiff_t>(f * plane),
                      v.data().begin() + static_cast<std::ptrdiff_t>((f + 1) * plane));
  return BasicTensor<T>({v.dim(1) * v.dim(2), v.dim(3)}, std::move(data));
}

}  // namespace

std::size_t projector_internal_params(const ProjectorConfig& cfg, std::size_t d_e) {
  switch (cfg.variant) {
    case ProjectorVariant::avg2d:
    case ProjectorVariant::avg3d:
      return 0;
    case ProjectorVariant::attn_resampler: {
      const std::size_t latents = cfg.target_h * cfg.target_w * d_e;
      const std::size_t attn = 4 * d_e * d_e;
      const std::size_t mlp = 2 * cfg.resampler.mlp_ratio * d_e * d_e;
      const std::size_t norms = 3 * 2 * d_e;
      return latents + attn + mlp + norms;
    }
    case ProjectorVariant::conv2d:
      return (cfg.conv.blocks_before + cfg.conv.blocks_after) * (9 * d_e * d_e + d_e);
    case ProjectorVariant::conv3d:
      return 18 * d_e * d_e + d_e;
  }
  return 0;
}

ProjectorParamCount count_projector_params(const ProjectorConfig& cfg,
                                           const std::vector<EncoderProfile>& profiles) {
  ProjectorParamCount c;
  for (const auto& p : profiles) {
    const std::size_t internal = projector_internal_params(cfg, p.dim);
    c.internal_per_encoder.push_back(internal);
    c.internal += internal;
    c.projection += cfg.llm_dim * p.dim;
  }
  return c;
}

template <typename T>
ProjectorWeights<T> init_projector(const ProjectorConfig& cfg, const std::vector<EncoderProfile>& profiles) {
  cfg.validate(profiles);
  ProjectorWeights<T> w{cfg, {}};
  for (const auto& p : profiles) {
    Rng rng = Rng::derive(cfg.seed, "projector:" + p.name);
    const std::size_t de = p.dim, d = cfg.llm_dim;
    const double inv = 1.0 / std::sqrt(static_cast<double>(de));
    EncoderProjector<T> e;
    e.projection = gaussian<T>(rng, {de, d}, inv);
    switch (cfg.variant) {
      case ProjectorVariant::avg2d:
      case ProjectorVariant::avg3d:
        break;
      case ProjectorVariant::attn_resampler: {
        const std::size_t hidden = cfg.resampler.mlp_ratio * de;
        e.latents = gaussian<T>(rng, {cfg.target_h * cfg.target_w, de}, 1.0);
        e.latent_norm_gain = BasicTensor<T>({de}, T(1));
        e.latent_norm_bias = BasicTensor<T>({de}, T(0));
        e.feature_norm_gain = BasicTensor<T>({de}, T(1));
        e.feature_norm_bias = BasicTensor<T>({de}, T(0));
        e.mlp_norm_gain = BasicTensor<T>({de}, T(1));
        e.mlp_norm_bias = BasicTensor<T>({de}, T(0));
        e.wq = gaussian<T>(rng, {de, de}, inv);
        e.wk = gaussian<T>(rng, {de, de}, inv);
        e.wv = gaussian<T>(rng, {de, de}, inv);
        e.wo = gaussian<T>(rng, {de, de}, inv);
        e.mlp_in = gaussian<T>(rng, {de, hidden}, inv);
        e.mlp_out = gaussian<T>(rng, {hidden, de}, 1.0 / std::sqrt(static_cast<double>(hidden)));
        break;
      }
      case ProjectorVariant::conv2d: {
        const double s = 0.5 / std::sqrt(9.0 * static_cast<double>(de));
        for (std::size_t b = 0; b < cfg.conv.blocks_before + cfg.conv.blocks_after; ++b) {
          e.conv_kernels.push_back(gaussian<T>(rng, {1, 3, 3, de, de}, s));
          e.conv_biases.push_back(BasicTensor<T>({de}, T(0)));
        }
        break;
      }
      case ProjectorVariant::conv3d: {
        const double s = 1.0 / std::sqrt(18.0 * static_cast<double>(de));
        e.conv_kernels.push_back(gaussian<T>(rng, {2, 3, 3, de, de}, s));
        e.conv_biases.push_back(BasicTensor<T>({de}, T(0)));
        break;
      }
    }
    w.encoders.push_back(std::move(e));
  }
  return w;
}

std::vector<std::size_t> restored_frame_index(std::size_t pooled, std::size_t frames) {
  std::vector<std::size_t> idx(frames);
  for (std::size_t i = 0; i < frames; ++i) idx[i] = (i * pooled) / frames;
  return idx;
}

namespace {

Conv3dGeometry temporal_conv_geometry() {
  // 2x3x3 kernel: pad one frame at the end so the frame count is preserved.
  Conv3dGeometry g;
  g.pad_before = {0, 1, 1};
  g.pad_after = {1, 1, 1};
  return g;
}

template <typename T>
BasicTensor<T> conv_block(const BasicTensor<T>& x, const BasicTensor<T>& kernel, const BasicTensor<T>& bias) {
  BasicTensor<T> y = add_channel_bias(conv3d_simple(x, kernel, Conv3dGeometry::same_padding(1, 3, 3)), bias);
  y = gelu(y);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += x[i];
  return y;
}

template <typename T>
BasicTensor<T> resample_frame(const BasicTensor<T>& frame, const EncoderProjector<T>& p,
                              const ResamplerConfig& rc) {
  const BasicTensor<T> lat = layer_norm(p.latents, p.latent_norm_gain, p.latent_norm_bias);
  const BasicTensor<T> feat = layer_norm(frame, p.feature_norm_gain, p.feature_norm_bias);
  const auto att = attention(matmul(lat, p.wq), matmul(feat, p.wk), matmul(feat, p.wv), rc.heads, false);
  BasicTensor<T> y = matmul(att.out, p.wo);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += p.latents[i];
  const BasicTensor<T> h = gelu(matmul(layer_norm(y, p.mlp_norm_gain, p.mlp_norm_bias), p.mlp_in));
  const BasicTensor<T> m = matmul(h, p.mlp_out);
  for (std::size_t i = 0; i < y.numel(); ++i) y[i] += m[i];
  return y;
}

}  // namespace

template <typename T>
BasicTensor<T> prefuse(const BasicTensor<T>& feature, const ProjectorConfig& cfg,
                       const EncoderProjector<T>& params, const EncoderProfile& profile) {
  if (feature.shape() != profile.output_shape()) {
    throw DimensionError("prefuse: feature " + shape_str(feature.shape()) + " does not match encoder '" +
                         profile.name + "' output " + shape_str(profile.output_shape()));
  }
  if (params.projection.shape() != Shape{profile.dim, cfg.llm_dim}) {
    throw DimensionError("prefuse: projection must be (" + std::to_string(profile.dim) + ", " +
                         std::to_string(cfg.llm_dim) + ")");
  }
  const std::size_t t = feature.dim(0), de = profile.dim, h = cfg.target_h, w = cfg.target_w;
  BasicTensor<T> pooled;  // (tokens, d_e)
  switch (cfg.variant) {
    case ProjectorVariant::avg2d:
      pooled = adaptive_avg_pool2d(feature, h, w).reshaped({t * h * w, de});
      break;
    case ProjectorVariant::avg3d: {
      const std::size_t half = (t + 1) / 2;
      BasicTensor<T> p = adaptive_avg_pool3d(feature, half, h, w).reshaped({half, h * w * de});
      if (cfg.avg3d_mode == TemporalPoolMode::restored) {
        const auto idx = restored_frame_index(half, t);
        BasicTensor<T> r({t, h * w * de});
        for (std::size_t f = 0; f < t; ++f)
          std::copy_n(p.data().data() + idx[f] * h * w * de, h * w * de, r.data().data() + f * h * w * de);
        p = std::move(r);
      }
      pooled = std::move(p).reshaped({cfg.tokens(t), de});
      break;
    }
    case ProjectorVariant::attn_resampler: {
      std::vector<T> rows;
      rows.reserve(t * h * w * de);
      for (std::size_t f = 0; f < t; ++f) {
        const auto y = resample_frame(frame_slice(feature, f), params, cfg.resampler);
        rows.insert(rows.end(), y.data().begin(), y.data().end());
      }
      pooled = BasicTensor<T>({t * h * w, de}, std::move(rows));
      break;
    }
    case ProjectorVariant::conv2d: {
      BasicTensor<T> x = feature;
      std::size_t k = 0;
      for (std::size_t b = 0; b < cfg.conv.blocks_before; ++b, ++k)
        x = conv_block(x, params.conv_kernels.at(k), params.conv_biases.at(k));
      x = adaptive_avg_pool2d(x, h, w);
      for (std::size_t b = 0; b < cfg.conv.blocks_after; ++b, ++k)
        x = conv_block(x, params.conv_kernels.at(k), params.conv_biases.at(k));
      pooled = std::move(x).reshaped({t * h * w, de});
      break;
    }
    case ProjectorVariant::conv3d: {
      BasicTensor<T> x = add_channel_bias(conv3d_simple(feature, params.conv_kernels.at(0), temporal_conv_geometry()),
                                          params.conv_biases.at(0));
      pooled = adaptive_avg_pool2d(x, h, w).reshaped({t * h * w, de});
      break;
    }
  }
  return matmul(pooled, params.projection);
}

template struct EncoderProjector<float>;
template struct EncoderProjector<double>;
template EncoderProjector<double> EncoderProjector<float>::cast<double>() const;
template EncoderProjector<float> EncoderProjector<double>::cast<float>() const;
template EncoderProjector<double> EncoderProjector<double>::cast<double>() const;
template EncoderProjector<float> EncoderProjector<float>::cast<float>() const;

template ProjectorWeights<float> init_projector<float>(const ProjectorConfig&, const std::vector<EncoderProfile>&);
template ProjectorWeights<double> init_projector<double>(const ProjectorConfig&, const std::vector<EncoderProfile>&);
template BasicTensor<float> prefuse(const BasicTensor<float>&, const ProjectorConfig&,
                                    const EncoderProjector<float>&, const EncoderProfile&);
template BasicTensor<double> prefuse(const BasicTensor<double>&, const ProjectorConfig&,
                                     const EncoderProjector<double>&, const EncoderProfile&);

}  // namespace merv
