#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "merv/alignment.hpp"
#include "merv/encoders.hpp"
#include "merv/fusion.hpp"
#include "merv/toytrain/graph.hpp"

namespace merv {

struct ToyLLMConfig {
  std::size_t layers = 2;
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t vocab = 16;
  std::size_t context = 0;  // 0: visual tokens + 3

  void validate(std::size_t visual_tokens) const;
};

/// Reserved token ids; class labels start at kLabelToken.
inline constexpr int kPadToken = 0;
inline constexpr int kBosToken = 1;
inline constexpr int kCaptionToken = 2;
inline constexpr int kQuestionToken = 3;
inline constexpr int kLabelToken = 4;

struct LLMLayer {
  Tensor64 ln1_gain, ln1_bias;
  Tensor64 wq, wk, wv, wo;  // (d, d)
  Tensor64 ln2_gain, ln2_bias;
  Tensor64 mlp_in, mlp_in_bias;    // (d, 4d), (4d)
  Tensor64 mlp_out, mlp_out_bias;  // (4d, d), (d)
};

struct LLMParams {
  Tensor64 tok_embed;  // (vocab, d)
  Tensor64 pos_embed;  // (context, d)
  std::vector<LLMLayer> layers;
  Tensor64 final_gain, final_bias;
  Tensor64 lm_head;  // (d, vocab)
};

struct ToyModelConfig {
  std::vector<EncoderProfile> profiles;
  std::vector<EncoderKind> kinds;
  std::size_t t = 4;
  ProjectorConfig projector;
  FusionConfig fusion;
  ToyLLMConfig llm;
  std::uint64_t seed = 0;
};

/// Temporal-kind and spatial-kind encoders, both 8 frames -> 4 (stride 2),
/// on an 8x8 grid of width 32; t = 4, 4x4 tokens per frame,
/// d = 64, 2-layer LLM.
ToyModelConfig default_toy_config(std::uint64_t seed = 0);

/// Grad-check scale: d = 16, l = 8, vocab 11, attention resampler.
ToyModelConfig micro_toy_config(std::uint64_t seed = 0);

enum class ParamGroup { llm, projector, fusion };

std::string to_string(ParamGroup g);
ParamGroup param_group_from_string(const std::string& name);

struct ToyModel {
  ToyModelConfig config;
  AlignmentPlan plan;
  std::vector<MockEncoder> encoders;  // aligned
  ProjectorWeights<double> projector;
  FusionParams<double> fusion;
  LLMParams llm;

  std::size_t visual_tokens() const;
  std::size_t source_frames() const;
  std::vector<std::string> encoder_names() const;

  /// Per-encoder features of one video, widened to 64-bit.
  std::vector<Tensor64> encode(const VideoTensor& video) const;

  using Visitor = std::function<void(ParamGroup, const std::string&, Tensor64&)>;
  using ConstVisitor = std::function<void(ParamGroup, const std::string&, const Tensor64&)>;
  /// Every learnable tensor with a unique dotted name, in a fixed order.
  void visit(const Visitor& fn);
  void visit(const ConstVisitor& fn) const;
};

/// encode -> prefuse -> fuse -> visual prefix + text -> causal LM.
ToyModel build_pipeline(const ToyModelConfig& cfg);

struct Sample {
  std::vector<Tensor64> features;  // one per encoder
  int prompt = kQuestionToken;
  int answer = kLabelToken;
};

/// Gradient slots matching ToyModel::visit order.
struct Gradients {
  std::vector<Tensor64> slots;

  static Gradients zeros_like(const ToyModel& model);
  void zero();
};

struct ForwardOutput {
  Var logits;  // (sequence, vocab)
  Var loss;    // answer-token cross-entropy
  std::optional<Var> weights;  // fusion weights (N) when the strategy has them
  std::size_t sequence = 0;
};

/// Records the model on `g`. Params of groups listed in `trainable` get
/// gradient targets in `grads` (which may be null for inference).
ForwardOutput forward(Graph& g, const ToyModel& model, const Sample& sample, Gradients* grads = nullptr,
                      const std::vector<ParamGroup>& trainable = {});

double sample_loss(const ToyModel& model, const Sample& sample);

/// Logits for a batch: (batch, sequence, vocab).
Tensor64 batch_logits(const ToyModel& model, const std::vector<Sample>& batch);

struct Prediction {
  int token = 0;
  double loss = 0;
  std::vector<double> weights;
};

Prediction predict(const ToyModel& model, const Sample& sample);

}  // namespace merv
