#include "merv/costmodel.hpp"

#include <cstdio>
#include <ostream>

#include "json.hpp"

#include "merv/errors.hpp"

namespace merv {

double avg_pool_flops(std::size_t in_cells, std::size_t channels, std::size_t out_cells) {
  return static_cast<double>(in_cells) * static_cast<double>(channels) + static_cast<double>(out_cells);
}

namespace {

// one residual 3x3 conv block on a (cells, d_e) map: conv, bias, gelu, residual add
double conv_block_flops(double cells, double de) { return 2.0 * cells * 9.0 * de * de + 3.0 * cells * de; }

}  // namespace

ProjectorFlops projector_flops_for(const ProjectorConfig& cfg, const EncoderProfile& profile) {
  const double t = static_cast<double>(profile.out_t);
  const double de = static_cast<double>(profile.dim);
  const double in_hw = static_cast<double>(profile.out_h * profile.out_w);
  const double hw = static_cast<double>(cfg.target_h * cfg.target_w);
  const std::size_t in_cells = profile.out_t * profile.out_h * profile.out_w;
  const std::size_t out_cells = profile.out_t * cfg.target_h * cfg.target_w;

  ProjectorFlops f;
  switch (cfg.variant) {
    case ProjectorVariant::avg2d:
      f.pooling = avg_pool_flops(in_cells, profile.dim, out_cells);
      break;
    case ProjectorVariant::avg3d:
      f.pooling = avg_pool_flops(in_cells, profile.dim, ((profile.out_t + 1) / 2) * cfg.target_h * cfg.target_w);
      break;
    case ProjectorVariant::attn_resampler: {
      const double r = static_cast<double>(cfg.resampler.mlp_ratio);
      const double q = 2.0 * hw * de * de;
      const double kv = 2.0 * 2.0 * in_hw * de * de;
      const double scores = 2.0 * 2.0 * hw * in_hw * de;  // QK^T and AV
      const double out = 2.0 * hw * de * de;
      const double mlp = 2.0 * 2.0 * hw * de * r * de;
      f.internal = t * (q + kv + scores + out + mlp);
      break;
    }
    case ProjectorVariant::conv2d:
      f.internal = static_cast<double>(cfg.conv.blocks_before) * conv_block_flops(static_cast<double>(in_cells), de) +
                   static_cast<double>(cfg.conv.blocks_after) * conv_block_flops(static_cast<double>(out_cells), de);
      f.pooling = avg_pool_flops(in_cells, profile.dim, out_cells);
      break;
    case ProjectorVariant::conv3d:
      f.internal = 2.0 * static_cast<double>(in_cells) * 18.0 * de * de + static_cast<double>(in_cells) * de;
      f.pooling = avg_pool_flops(in_cells, profile.dim, out_cells);
      break;
  }
  f.projection = 2.0 * static_cast<double>(cfg.tokens(profile.out_t)) * de * static_cast<double>(cfg.llm_dim);
  return f;
}

double projector_flops(const ProjectorConfig& cfg, const std::vector<EncoderProfile>& profiles, std::size_t t) {
  const auto aligned = plan_temporal_alignment(profiles, t).aligned(profiles);
  double total = 0;
  for (const auto& p : aligned) total += projector_flops_for(cfg, p).total();
  return total;
}

double llm_flops(double tokens, double params) { return 2.0 * tokens * params; }

double llm_flops(double tokens, const LLMCostConfig& cfg) {
  double f = llm_flops(tokens, cfg.params);
  if (cfg.attention_quadratic) {
    f += 4.0 * static_cast<double>(cfg.layers) * tokens * tokens * static_cast<double>(cfg.width);
  }
  return f;
}

FusionCost fusion_cost(const FusionConfig& cfg, std::size_t encoders, std::size_t length, std::size_t dim) {
  FusionCost c;
  if (encoders == 0) return c;
  const double n = static_cast<double>(encoders), l = static_cast<double>(length), d = static_cast<double>(dim);
  const double mix = 2.0 * n * l * d;
  switch (cfg.strategy) {
    case FusionStrategy::cross_attn:
      c.params = d;
      c.flops = n * l * d + 2.0 * n * d + 3.0 * n + mix;  // means, logits, softmax, mixture
      break;
    case FusionStrategy::concat_seq:
      break;
    case FusionStrategy::concat_channel: {
      const double h = static_cast<double>(cfg.mlp_hidden ? cfg.mlp_hidden : dim);
      c.params = n * d * h + h + h * d + d;
      c.flops = 2.0 * l * (n * d * h + h * d) + l * (h + d) + l * h;  // matmuls, biases, gelu
      break;
    }
    case FusionStrategy::learnable_weights:
      c.params = n;
      c.flops = 3.0 * n + mix;
      break;
    case FusionStrategy::fixed_mix:
      c.flops = mix;
      break;
  }
  return c;
}

SystemConfig full_scale_config(FusionStrategy strategy) {
  SystemConfig cfg;
  cfg.profiles = default_ensemble();
  cfg.t = 16;
  cfg.projector.variant = ProjectorVariant::avg2d;
  cfg.projector.target_h = 8;
  cfg.projector.target_w = 8;
  cfg.projector.llm_dim = 4096;
  cfg.fusion.strategy = strategy;
  return cfg;
}

SystemConfig single_encoder_full_tokens(const EncoderProfile& profile, std::size_t t) {
  SystemConfig cfg = full_scale_config();
  cfg.profiles = {profile};
  cfg.t = t;
  cfg.projector.target_h = profile.out_h;
  cfg.projector.target_w = profile.out_w;
  return cfg;
}

const StageCost& CostReport::stage(const std::string& name) const {
  for (const auto& s : stages)
    if (s.stage == name) return s;
  throw ConfigError("no cost stage named '" + name + "'");
}

void CostReport::write_json(std::ostream& os) const {
  nlohmann::ordered_json j;
  j["stages"] = nlohmann::ordered_json::array();
  for (const auto& s : stages) j["stages"].push_back({{"stage", s.stage}, {"params", s.params}, {"flops", s.flops}});
  j["total_params"] = total_params;
  j["total_flops"] = total_flops;
  j["visual_tokens"] = visual_tokens;
  j["llm_tokens"] = llm_tokens;
  os << j.dump(2) << '\n';
}

void CostReport::write_table(std::ostream& os) const {
  char line[128];
  std::snprintf(line, sizeof line, "%-10s %18s %22s\n", "stage", "params", "flops");
  os << line;
  for (const auto& s : stages) {
    std::snprintf(line, sizeof line, "%-10s %18.0f %22.0f\n", s.stage.c_str(), s.params, s.flops);
    os << line;
  }
  std::snprintf(line, sizeof line, "%-10s %18.0f %22.0f\n", "total", total_params, total_flops);
  os << line;
  std::snprintf(line, sizeof line, "visual tokens %zu, llm tokens %zu\n", visual_tokens, llm_tokens);
  os << line;
}

CostReport pipeline_cost(const SystemConfig& cfg) {
  StageCost enc{"encoder", 0, 0}, proj{"projector", 0, 0}, fus{"fusion", 0, 0}, llm{"llm", 0, 0};
  CostReport r;
  if (!cfg.profiles.empty()) {
    const auto aligned = plan_temporal_alignment(cfg.profiles, cfg.t).aligned(cfg.profiles);
    cfg.projector.validate(aligned);
    for (const auto& p : aligned) {
      enc.params += p.params;
      enc.flops += p.flops_per_frame * static_cast<double>(p.input_frames);
      proj.flops += projector_flops_for(cfg.projector, p).total();
    }
    proj.params = static_cast<double>(count_projector_params(cfg.projector, aligned).total());
    const std::size_t len = cfg.projector.tokens(cfg.t);
    const FusionCost fc = fusion_cost(cfg.fusion, aligned.size(), len, cfg.projector.llm_dim);
    fus.params = fc.params;
    fus.flops = fc.flops;
    r.visual_tokens = cfg.fusion.output_tokens(aligned.size(), len);
  }
  r.llm_tokens = r.visual_tokens + cfg.text_tokens;
  llm.params = cfg.llm.params;
  llm.flops = llm_flops(static_cast<double>(r.llm_tokens), cfg.llm);
  r.stages = {enc, proj, fus, llm};
  for (const auto& s : r.stages) {
    r.total_params += s.params;
    r.total_flops += s.flops;
  }
  return r;
}

}  // namespace merv
