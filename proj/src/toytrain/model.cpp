#include "merv/toytrain/model.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>

#include "merv/errors.hpp"
#include "merv/numerics.hpp"
#include "merv/rng.hpp"

namespace merv {

void ToyLLMConfig::validate(std::size_t visual_tokens) const {
  if (layers == 0 || dim == 0 || heads == 0 || vocab == 0) throw ConfigError("toy LLM extents must be >= 1");
  if (dim % heads != 0) throw ConfigError("toy LLM heads must divide its width");
  if (vocab <= static_cast<std::size_t>(kLabelToken)) throw ConfigError("toy LLM vocabulary has no room for labels");
  if (context != 0 && context < visual_tokens + 3) {
    throw ConfigError("toy LLM context " + std::to_string(context) + " is shorter than " +
                      std::to_string(visual_tokens) + " visual tokens plus 3 text tokens");
  }
}

namespace {

EncoderProfile toy_profile(const std::string& name, std::size_t frames, std::size_t out_t, std::size_t grid,
                           std::size_t dim) {
  EncoderProfile p;
  p.name = name;
  p.input_frames = frames;
  p.out_t = out_t;
  p.out_h = grid;
  p.out_w = grid;
  p.dim = dim;
  return p;
}

Tensor64 gaussian(Rng& rng, Shape shape, double stddev) {
  std::vector<double> data(shape_numel(shape));
  for (auto& v : data) v = rng.normal() * stddev;
  return Tensor64(std::move(shape), std::move(data));
}

LLMParams init_llm(const ToyLLMConfig& cfg, std::size_t context, std::uint64_t seed) {
  Rng rng = Rng::derive(seed, "llm");
  const std::size_t d = cfg.dim;
  const double inv = 1.0 / std::sqrt(static_cast<double>(d));
  const double out_scale = inv / std::sqrt(2.0 * static_cast<double>(cfg.layers));
  LLMParams p;
  p.tok_embed = gaussian(rng, {cfg.vocab, d}, 1.0);
  p.pos_embed = gaussian(rng, {context, d}, 0.1);
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    LLMLayer layer;
    layer.ln1_gain = Tensor64({d}, 1.0);
    layer.ln1_bias = Tensor64({d}, 0.0);
    layer.wq = gaussian(rng, {d, d}, inv);
    layer.wk = gaussian(rng, {d, d}, inv);
    layer.wv = gaussian(rng, {d, d}, inv);
    layer.wo = gaussian(rng, {d, d}, out_scale);
    layer.ln2_gain = Tensor64({d}, 1.0);
    layer.ln2_bias = Tensor64({d}, 0.0);
    layer.mlp_in = gaussian(rng, {d, 4 * d}, inv);
    layer.mlp_in_bias = Tensor64({4 * d}, 0.0);
    layer.mlp_out = gaussian(rng, {4 * d, d}, out_scale / 2.0);
    layer.mlp_out_bias = Tensor64({d}, 0.0);
    p.layers.push_back(std::move(layer));
  }
  p.final_gain = Tensor64({d}, 1.0);
  p.final_bias = Tensor64({d}, 0.0);
  p.lm_head = gaussian(rng, {d, cfg.vocab}, inv);
  return p;
}

Conv3dGeometry temporal_conv_geometry() {
  Conv3dGeometry g;
  g.pad_before = {0, 1, 1};
  g.pad_after = {1, 1, 1};
  return g;
}

/// Maps model tensors to graph params, attaching gradient slots for the
/// trainable groups.
class Binder {
 public:
  Binder(Graph& g, const ToyModel& model, Gradients* grads, const std::vector<ParamGroup>& trainable) : g_(g) {
    std::size_t i = 0;
    model.visit([&](ParamGroup group, const std::string&, const Tensor64& t) {
      const bool train = grads && std::find(trainable.begin(), trainable.end(), group) != trainable.end();
      slots_[&t] = train ? &grads->slots.at(i) : nullptr;
      ++i;
    });
  }

  Var operator()(const Tensor64& t) {
    auto it = slots_.find(&t);
    if (it == slots_.end()) throw ConfigError("tensor is not a parameter of this model");
    return g_.param(t, it->second);
  }

 private:
  Graph& g_;
  std::unordered_map<const Tensor64*, Tensor64*> slots_;
};

Var resample(Graph& g, Binder& bind, Var frame, const EncoderProjector<double>& p, const ResamplerConfig& rc) {
  const Var latents = bind(p.latents);
  const Var lat = g.layer_norm(latents, bind(p.latent_norm_gain), bind(p.latent_norm_bias));
  const Var feat = g.layer_norm(frame, bind(p.feature_norm_gain), bind(p.feature_norm_bias));
  const Var att = g.attention(g.matmul(lat, bind(p.wq)), g.matmul(feat, bind(p.wk)), g.matmul(feat, bind(p.wv)),
                              rc.heads, false);
  const Var y = g.add(latents, g.matmul(att, bind(p.wo)));
  const Var m = g.layer_norm(y, bind(p.mlp_norm_gain), bind(p.mlp_norm_bias));
  return g.add(y, g.matmul(g.gelu(g.matmul(m, bind(p.mlp_in))), bind(p.mlp_out)));
}

Var conv_block(Graph& g, Binder& bind, Var x, const Tensor64& kernel, const Tensor64& bias) {
  const Var y = g.add_bias(g.conv3d(x, bind(kernel), Conv3dGeometry::same_padding(1, 3, 3)), bind(bias));
  return g.add(g.gelu(y), x);
}

Var project(Graph& g, Binder& bind, const Tensor64& feature, const ProjectorConfig& cfg,
            const EncoderProjector<double>& p, const EncoderProfile& profile) {
  if (feature.shape() != profile.output_shape()) {
    throw DimensionError("feature " + shape_str(feature.shape()) + " does not match encoder '" + profile.name +
                         "' output " + shape_str(profile.output_shape()));
  }
  const std::size_t t = profile.out_t, h = cfg.target_h, w = cfg.target_w, de = profile.dim;
  const std::size_t hw_e = profile.out_h * profile.out_w;
  Var pooled;
  switch (cfg.variant) {
    case ProjectorVariant::avg2d:
      pooled = g.constant(adaptive_avg_pool2d(feature, h, w).reshaped({t * h * w, de}));
      break;
    case ProjectorVariant::avg3d: {
      const std::size_t half = (t + 1) / 2;
      Tensor64 q = adaptive_avg_pool3d(feature, half, h, w).reshaped({half, h * w * de});
      Var v = g.constant(std::move(q));
      if (cfg.avg3d_mode == TemporalPoolMode::restored) v = g.gather_rows(v, restored_frame_index(half, t));
      pooled = g.reshape(v, {cfg.tokens(t), de});
      break;
    }
    case ProjectorVariant::attn_resampler: {
      const Var all = g.constant(feature.reshaped({t * hw_e, de}));
      std::vector<Var> frames;
      for (std::size_t f = 0; f < t; ++f) {
        std::vector<std::size_t> rows(hw_e);
        for (std::size_t i = 0; i < hw_e; ++i) rows[i] = f * hw_e + i;
        frames.push_back(resample(g, bind, g.gather_rows(all, rows), p, cfg.resampler));
      }
      pooled = g.concat_rows(frames);
      break;
    }
    case ProjectorVariant::conv2d: {
      Var x = g.constant(feature);
      std::size_t k = 0;
      for (std::size_t b = 0; b < cfg.conv.blocks_before; ++b, ++k)
        x = conv_block(g, bind, x, p.conv_kernels.at(k), p.conv_biases.at(k));
      x = g.pool3d(x, t, h, w);
      for (std::size_t b = 0; b < cfg.conv.blocks_after; ++b, ++k)
        x = conv_block(g, bind, x, p.conv_kernels.at(k), p.conv_biases.at(k));
      pooled = g.reshape(x, {t * h * w, de});
      break;
    }
    case ProjectorVariant::conv3d: {
      Var x = g.conv3d(g.constant(feature), bind(p.conv_kernels.at(0)), temporal_conv_geometry());
      x = g.add_bias(x, bind(p.conv_biases.at(0)));
      pooled = g.reshape(g.pool3d(x, t, h, w), {t * h * w, de});
      break;
    }
  }
  return g.matmul(pooled, bind(p.projection));
}

struct Fused {
  Var tokens;
  std::optional<Var> weights;
};

Fused fuse_graph(Graph& g, Binder& bind, const std::vector<Var>& xs, const FusionConfig& cfg,
                 const FusionParams<double>& p) {
  const std::size_t n = xs.size();
  switch (cfg.strategy) {
    case FusionStrategy::cross_attn: {
      std::vector<Var> means;
      for (Var x : xs) means.push_back(g.mean_rows(x));
      const double d = static_cast<double>(g.value(xs[0]).dim(1));
      const Var logits = g.scale(g.matmul_nt(bind(p.query), g.concat_rows(means)), 1.0 / std::sqrt(d));
      const Var w = g.softmax(logits);
      return {g.weighted_sum(xs, w), w};
    }
    case FusionStrategy::concat_seq:
      return {g.concat_rows(xs), std::nullopt};
    case FusionStrategy::concat_channel: {
      const Var hidden = g.gelu(g.add_bias(g.matmul(g.concat_cols(xs), bind(p.mlp_in)), bind(p.mlp_in_bias)));
      return {g.add_bias(g.matmul(hidden, bind(p.mlp_out)), bind(p.mlp_out_bias)), std::nullopt};
    }
    case FusionStrategy::learnable_weights: {
      const Var w = g.softmax(g.reshape(bind(p.mix_logits), {1, n}));
      return {g.weighted_sum(xs, w), w};
    }
    case FusionStrategy::fixed_mix: {
      const auto mw = cfg.mix_weights(n);
      const Var w = g.constant(Tensor64({1, n}, std::vector<double>(mw.begin(), mw.end())));
      return {g.weighted_sum(xs, w), w};
    }
  }
  throw ConfigError("unknown fusion strategy");
}

}  // namespace

ToyModelConfig default_toy_config(std::uint64_t seed) {
  ToyModelConfig c;
  c.profiles = {toy_profile("temporal", 8, 4, 8, 32), toy_profile("spatial", 8, 4, 8, 32)};
  c.kinds = {EncoderKind::temporal, EncoderKind::spatial};
  c.t = 4;
  c.projector.variant = ProjectorVariant::avg2d;
  c.projector.target_h = 4;
  c.projector.target_w = 4;
  c.projector.llm_dim = 64;
  c.projector.seed = seed;
  c.fusion.strategy = FusionStrategy::cross_attn;
  c.fusion.seed = seed;
  c.llm = ToyLLMConfig{};
  c.seed = seed;
  return c;
}

ToyModelConfig micro_toy_config(std::uint64_t seed) {
  ToyModelConfig c;
  c.profiles = {toy_profile("temporal", 4, 2, 4, 8), toy_profile("spatial", 2, 2, 4, 8)};
  c.kinds = {EncoderKind::temporal, EncoderKind::spatial};
  c.t = 2;
  c.projector.variant = ProjectorVariant::attn_resampler;
  c.projector.target_h = 2;
  c.projector.target_w = 2;
  c.projector.llm_dim = 16;
  c.projector.seed = seed;
  c.projector.resampler.heads = 2;
  c.projector.resampler.mlp_ratio = 2;
  c.fusion.strategy = FusionStrategy::cross_attn;
  c.fusion.seed = seed;
  c.llm.layers = 2;
  c.llm.dim = 16;
  c.llm.heads = 2;
  c.llm.vocab = 11;
  c.seed = seed;
  return c;
}

std::string to_string(ParamGroup g) {
  switch (g) {
    case ParamGroup::llm: return "llm";
    case ParamGroup::projector: return "projector";
    case ParamGroup::fusion: return "fusion";
  }
  return "llm";
}

ParamGroup param_group_from_string(const std::string& name) {
  if (name == "llm") return ParamGroup::llm;
  if (name == "projector") return ParamGroup::projector;
  if (name == "fusion") return ParamGroup::fusion;
  throw ConfigError("unknown parameter group '" + name + "'");
}

std::size_t ToyModel::visual_tokens() const {
  return config.fusion.output_tokens(encoders.size(), config.projector.tokens(config.t));
}

std::size_t ToyModel::source_frames() const {
  std::size_t n = 1;
  for (const auto& e : encoders) n = std::max(n, e.profile().input_frames);
  return n;
}

std::vector<std::string> ToyModel::encoder_names() const {
  std::vector<std::string> out;
  for (const auto& e : encoders) out.push_back(e.profile().name);
  return out;
}

std::vector<Tensor64> ToyModel::encode(const VideoTensor& video) const {
  std::vector<Tensor64> out;
  for (const auto& e : encoders) {
    const std::size_t n = e.profile().input_frames;
    const Tensor f = video.frames() == n ? e.encode(video) : e.encode(uniform_sample_frames(video, n));
    out.push_back(f.cast<double>());
  }
  return out;
}

void ToyModel::visit(const Visitor& fn) {
  for (std::size_t e = 0; e < projector.encoders.size(); ++e) {
    const std::string prefix = "projector." + encoders[e].profile().name + ".";
    projector.encoders[e].visit([&](const std::string& n, Tensor64& t) { fn(ParamGroup::projector, prefix + n, t); });
  }
  fusion.visit([&](const std::string& n, Tensor64& t) { fn(ParamGroup::fusion, "fusion." + n, t); });
  auto l = [&](const std::string& n, Tensor64& t) { fn(ParamGroup::llm, "llm." + n, t); };
  l("tok_embed", llm.tok_embed);
  l("pos_embed", llm.pos_embed);
  for (std::size_t i = 0; i < llm.layers.size(); ++i) {
    LLMLayer& L = llm.layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    l(p + "ln1_gain", L.ln1_gain);
    l(p + "ln1_bias", L.ln1_bias);
    l(p + "wq", L.wq);
    l(p + "wk", L.wk);
    l(p + "wv", L.wv);
    l(p + "wo", L.wo);
    l(p + "ln2_gain", L.ln2_gain);
    l(p + "ln2_bias", L.ln2_bias);
    l(p + "mlp_in", L.mlp_in);
    l(p + "mlp_in_bias", L.mlp_in_bias);
    l(p + "mlp_out", L.mlp_out);
    l(p + "mlp_out_bias", L.mlp_out_bias);
  }
  l("final_gain", llm.final_gain);
  l("final_bias", llm.final_bias);
  l("lm_head", llm.lm_head);
}

void ToyModel::visit(const ConstVisitor& fn) const {
  const_cast<ToyModel*>(this)->visit([&](ParamGroup g, const std::string& n, Tensor64& t) { fn(g, n, t); });
}

ToyModel build_pipeline(const ToyModelConfig& cfg) {
  if (cfg.profiles.empty()) throw ConfigError("toy model needs at least one encoder");
  if (cfg.kinds.size() != cfg.profiles.size()) throw ConfigError("one encoder kind is required per profile");
  if (cfg.projector.llm_dim != cfg.llm.dim) {
    throw ConfigError("projector output width " + std::to_string(cfg.projector.llm_dim) +
                      " does not match the LLM width " + std::to_string(cfg.llm.dim));
  }
  ToyModel m;
  m.config = cfg;
  m.plan = plan_temporal_alignment(cfg.profiles, cfg.t);
  const auto aligned = m.plan.aligned(cfg.profiles);
  cfg.projector.validate(aligned);
  cfg.fusion.validate(aligned.size());
  for (std::size_t i = 0; i < aligned.size(); ++i) {
    const std::uint64_t s = Rng::derive(cfg.seed, "encoder:" + aligned[i].name).next_u64();
    m.encoders.push_back(make_mock_encoder(aligned[i], s, cfg.kinds[i]));
  }
  const std::size_t visual = m.visual_tokens();
  cfg.llm.validate(visual);
  const std::size_t context = cfg.llm.context ? cfg.llm.context : visual + 3;
  m.config.llm.context = context;
  m.projector = init_projector<double>(cfg.projector, aligned);
  m.fusion = init_fusion<double>(cfg.fusion, aligned.size(), cfg.llm.dim);
  m.llm = init_llm(cfg.llm, context, cfg.seed);
  return m;
}

Gradients Gradients::zeros_like(const ToyModel& model) {
  Gradients g;
  model.visit([&](ParamGroup, const std::string&, const Tensor64& t) { g.slots.emplace_back(t.shape()); });
  return g;
}

void Gradients::zero() {
  for (auto& s : slots) s.fill(0.0);
}

ForwardOutput forward(Graph& g, const ToyModel& model, const Sample& sample, Gradients* grads,
                      const std::vector<ParamGroup>& trainable) {
  if (sample.features.size() != model.encoders.size()) {
    throw DimensionError("sample has " + std::to_string(sample.features.size()) + " features for " +
                         std::to_string(model.encoders.size()) + " encoders");
  }
  const ToyLLMConfig& lc = model.config.llm;
  if (sample.answer < 0 || static_cast<std::size_t>(sample.answer) >= lc.vocab) {
    throw ConfigError("answer token outside the vocabulary");
  }
  Binder bind(g, model, grads, trainable);
  std::vector<Var> xs;
  for (std::size_t e = 0; e < model.encoders.size(); ++e) {
    xs.push_back(project(g, bind, sample.features[e], model.config.projector, model.projector.encoders[e],
                         model.encoders[e].profile()));
  }
  const Fused fused = fuse_graph(g, bind, xs, model.config.fusion, model.fusion);

  const std::vector<std::size_t> text{static_cast<std::size_t>(kBosToken), static_cast<std::size_t>(sample.prompt)};
  Var x = g.concat_rows({fused.tokens, g.gather_rows(bind(model.llm.tok_embed), text)});
  const std::size_t n = g.value(x).dim(0);
  if (n > lc.context) throw DimensionError("sequence longer than the LLM context");
  std::vector<std::size_t> positions(n);
  for (std::size_t i = 0; i < n; ++i) positions[i] = i;
  x = g.add(x, g.gather_rows(bind(model.llm.pos_embed), positions));

  for (const LLMLayer& L : model.llm.layers) {
    const Var h = g.layer_norm(x, bind(L.ln1_gain), bind(L.ln1_bias));
    const Var a = g.attention(g.matmul(h, bind(L.wq)), g.matmul(h, bind(L.wk)), g.matmul(h, bind(L.wv)), lc.heads, true);
    x = g.add(x, g.matmul(a, bind(L.wo)));
    const Var h2 = g.layer_norm(x, bind(L.ln2_gain), bind(L.ln2_bias));
    const Var hidden = g.gelu(g.add_bias(g.matmul(h2, bind(L.mlp_in)), bind(L.mlp_in_bias)));
    x = g.add(x, g.add_bias(g.matmul(hidden, bind(L.mlp_out)), bind(L.mlp_out_bias)));
  }
  x = g.layer_norm(x, bind(model.llm.final_gain), bind(model.llm.final_bias));

  ForwardOutput out;
  out.logits = g.matmul(x, bind(model.llm.lm_head));
  std::vector<int> targets(n, -1);
  targets.back() = sample.answer;
  out.loss = g.cross_entropy(out.logits, targets);
  out.weights = fused.weights;
  out.sequence = n;
  return out;
}

double sample_loss(const ToyModel& model, const Sample& sample) {
  Graph g;
  return g.value(forward(g, model, sample).loss)[0];
}

Tensor64 batch_logits(const ToyModel& model, const std::vector<Sample>& batch) {
  if (batch.empty()) throw DimensionError("empty batch");
  std::vector<double> data;
  std::size_t seq = 0;
  for (const auto& s : batch) {
    Graph g;
    const auto out = forward(g, model, s);
    seq = out.sequence;
    const auto& z = g.value(out.logits);
    data.insert(data.end(), z.data().begin(), z.data().end());
  }
  return Tensor64({batch.size(), seq, model.config.llm.vocab}, std::move(data));
}

Prediction predict(const ToyModel& model, const Sample& sample) {
  Graph g;
  const auto out = forward(g, model, sample);
  const Tensor64& z = g.value(out.logits);
  const std::size_t vocab = z.dim(1), last = z.dim(0) - 1;
  Prediction p;
  std::size_t best = 0;
  for (std::size_t c = 1; c < vocab; ++c)
    if (z[last * vocab + c] > z[last * vocab + best]) best = c;
  p.token = static_cast<int>(best);
  p.loss = g.value(out.loss)[0];
  if (out.weights) {
    for (double w : g.value(*out.weights).data()) p.weights.push_back(w);
  }
  return p;
}

}  // namespace merv
