#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "merv/toytrain/model.hpp"
#include "merv/toytrain/synth_task.hpp"

namespace merv {

enum class Recipe { frozen, full, two_stage_frozen_llm, mixed_single_stage };

std::string to_string(Recipe r);
Recipe recipe_from_string(const std::string& name);

enum class PromptMode { caption, question, mixed };

struct StagePlan {
  std::string name;
  std::vector<ParamGroup> trainable;
  PromptMode prompt = PromptMode::question;
  double lr = 0;
  std::size_t steps = 0;
};

struct RecipeConfig {
  Recipe recipe = Recipe::full;
  double stage1_lr = 5e-3;
  double stage2_lr = 1e-3;
  double warmup_ratio = 0.03;
  std::string schedule = "cosine";  // cosine | constant
  std::size_t stage1_steps = 150;
  std::size_t stage2_steps = 150;
  std::size_t batch_size = 8;
  double clip_norm = 1.0;  // 0 disables

  void validate() const;
  /// frozen:               one stage, projector + fusion, question prompt
  /// full:                 caption stage and question stage, everything trainable
  /// two_stage_frozen_llm: caption stage on projector + fusion, then everything
  /// mixed_single_stage:   one stage over both prompts, everything trainable
  std::vector<StagePlan> stages() const;
};

/// Learning rate at `step` of a stage: linear warmup over
/// ceil(warmup_ratio * steps) steps, then cosine decay to zero (or flat).
double scheduled_lr(const RecipeConfig& cfg, double base, std::size_t step, std::size_t steps);

struct Example {
  std::string id;
  std::vector<Tensor64> features;
  int label = 0;
};

/// Encodes every task video once.
std::vector<Example> encode_task(const ToyModel& model, const SynthTask& task);

struct MetricsRow {
  std::size_t step = 0;
  std::string stage;
  double loss = 0;
  double accuracy = 0;
  std::vector<double> weights;  // batch mean fusion weight per encoder
};

struct Evaluation {
  double accuracy = 0;
  double loss = 0;
  std::vector<double> mean_weights;
};

Evaluation evaluate(const ToyModel& model, const std::vector<Example>& data, PromptMode prompt = PromptMode::question);

struct TrainResult {
  std::vector<std::string> encoders;
  std::vector<MetricsRow> history;
};

/// Adam (0.9, 0.999, 1e-8) on batch-mean gradients. Throws TrainingError
/// with the step index when the loss stops being finite.
TrainResult train(ToyModel& model, const std::vector<Example>& data, const RecipeConfig& recipe, std::uint64_t seed,
                  const std::function<void(const MetricsRow&)>& on_step = {});

/// step, loss, accuracy, w_<encoder>...
void write_metrics_csv(std::ostream& os, const TrainResult& result);

struct GradCheckEntry {
  std::string name;
  std::size_t coordinates = 0;
  double max_relative_error = 0;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> params;
  double max_relative_error = 0;
};

/// Compares analytic gradients of the sample loss with central differences
/// for every coordinate of the params in `groups` whose name contains one
/// of `filters` (all of them when empty).
GradCheckReport grad_check(ToyModel& model, const Sample& sample, const std::vector<ParamGroup>& groups,
                           const std::vector<std::string>& filters = {}, double eps = 1e-5);

}  // namespace merv
