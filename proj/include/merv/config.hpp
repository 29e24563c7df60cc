#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "merv/alignment.hpp"
#include "merv/costmodel.hpp"
#include "merv/encoders.hpp"
#include "merv/fusion.hpp"
#include "merv/scheduler.hpp"
#include "merv/toytrain/model.hpp"
#include "merv/toytrain/synth_task.hpp"
#include "merv/toytrain/trainer.hpp"

namespace merv {

using Json = nlohmann::ordered_json;

struct SimulateConfig {
  SchedulePolicy policy = SchedulePolicy::parallel;
  std::size_t lanes = 8;
};

struct ToyRunConfig {
  TaskKind task = TaskKind::temporal_direction;
  std::size_t train_size = 256;
  std::size_t heldout_size = 200;
  ToyModelConfig model = default_toy_config();
  RecipeConfig recipe;
};

/// Everything a command needs. Missing JSON keys keep these defaults;
/// unknown keys are rejected.
struct RunConfig {
  std::vector<EncoderProfile> profiles = default_ensemble();
  std::vector<EncoderKind> kinds;  // empty: default kind per encoder name
  std::size_t t = 16;
  std::size_t expected_tokens = 0;  // 0: not checked
  ProjectorConfig projector;
  FusionConfig fusion;
  LLMCostConfig llm;
  SimulateConfig simulate;
  ToyRunConfig toy;
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  /// Checks every cross-reference: alignment of the ensemble at t, the
  /// projector grid, the token count, fusion weights, and the toy model.
  void validate() const;
  /// Kinds with defaults filled in.
  std::vector<EncoderKind> resolved_kinds() const;
  /// Copy with every component seed set from `seed`.
  RunConfig with_seed(std::uint64_t seed) const;
};

/// language for languagebind, spatial for dinov2, temporal for vivit,
/// generic otherwise.
EncoderKind default_kind(const std::string& encoder);

Json to_json(const EncoderProfile& p);
Json to_json(const ProjectorConfig& c);
Json to_json(const FusionConfig& c);
Json to_json(const LLMCostConfig& c);
Json to_json(const ToyLLMConfig& c);
Json to_json(const ToyModelConfig& c);
Json to_json(const RecipeConfig& c);
Json to_json(const RunConfig& c);

EncoderProfile profile_from_json(const Json& j);
ProjectorConfig projector_config_from_json(const Json& j, ProjectorConfig base = {});
FusionConfig fusion_config_from_json(const Json& j, FusionConfig base = {});
ToyModelConfig toy_model_config_from_json(const Json& j, ToyModelConfig base = default_toy_config());
RecipeConfig recipe_config_from_json(const Json& j, RecipeConfig base = {});
RunConfig run_config_from_json(const Json& j);

/// Parses and validates a RunConfig file; all failures are ConfigError.
RunConfig load_run_config(const std::filesystem::path& path);

}  // namespace merv
