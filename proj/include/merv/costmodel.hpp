#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "merv/alignment.hpp"
#include "merv/encoders.hpp"
#include "merv/fusion.hpp"

namespace merv {

/// FLOPs of one encoder's projector on an aligned feature.
struct ProjectorFlops {
  double pooling = 0;   // adds and divides of the average pools
  double internal = 0;  // resampler / conv blocks
  double projection = 0;  // 2 * tokens * d_e * d

  double total() const { return pooling + internal + projection; }
};

/// Average pooling: one add per input element plus one divide per output
/// spatial cell.
double avg_pool_flops(std::size_t in_cells, std::size_t channels, std::size_t out_cells);

/// `profile` must already be aligned (out_t is the frame count t).
ProjectorFlops projector_flops_for(const ProjectorConfig& cfg, const EncoderProfile& profile);

/// Sum over the ensemble after aligning every profile to `t` output frames.
double projector_flops(const ProjectorConfig& cfg, const std::vector<EncoderProfile>& profiles,
                       std::size_t t);

struct LLMCostConfig {
  double params = 7e9;
  bool attention_quadratic = false;
  std::size_t layers = 32;
  std::size_t width = 4096;
};

/// 2 * tokens * params, plus 4 * layers * tokens^2 * width when the
/// quadratic attention term is enabled.
double llm_flops(double tokens, double params);
double llm_flops(double tokens, const LLMCostConfig& cfg);

struct FusionCost {
  double params = 0;
  double flops = 0;
};

FusionCost fusion_cost(const FusionConfig& cfg, std::size_t encoders, std::size_t length, std::size_t dim);

struct SystemConfig {
  std::vector<EncoderProfile> profiles;
  std::size_t t = 16;
  ProjectorConfig projector;
  FusionConfig fusion;
  LLMCostConfig llm;
  std::size_t text_tokens = 0;
};

/// 4 default encoders, t = 16, 8x8 tokens per frame, d = 4096, 7B LLM.
SystemConfig full_scale_config(FusionStrategy strategy = FusionStrategy::cross_attn);

/// One encoder feeding all of its h_e x w_e tokens per frame to the LLM.
SystemConfig single_encoder_full_tokens(const EncoderProfile& profile, std::size_t t = 16);

struct StageCost {
  std::string stage;
  double params = 0;
  double flops = 0;
};

struct CostReport {
  std::vector<StageCost> stages;  // encoder, projector, fusion, llm
  double total_params = 0;
  double total_flops = 0;
  std::size_t visual_tokens = 0;
  std::size_t llm_tokens = 0;

  const StageCost& stage(const std::string& name) const;
  void write_json(std::ostream& os) const;
  void write_table(std::ostream& os) const;
};

CostReport pipeline_cost(const SystemConfig& cfg);

}  // namespace merv
