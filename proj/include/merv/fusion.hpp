#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "merv/alignment.hpp"
#include "merv/encoders.hpp"
#include "merv/tensor.hpp"

namespace merv {

enum class FusionStrategy { cross_attn, concat_seq, concat_channel, learnable_weights, fixed_mix };

std::string to_string(FusionStrategy s);
FusionStrategy fusion_strategy_from_string(const std::string& name);

struct FusionConfig {
  FusionStrategy strategy = FusionStrategy::cross_attn;
  std::size_t mlp_hidden = 0;        // concat_channel; 0 means d
  std::vector<double> fixed_weights;  // fixed_mix; empty means uniform
  std::uint64_t seed = 0;

  /// fixed_mix weights must be nonnegative and sum to 1 (within 1e-6).
  void validate(std::size_t encoders) const;
  std::vector<double> mix_weights(std::size_t encoders) const;
  /// Visual tokens handed to the language model for N inputs of length l.
  std::size_t output_tokens(std::size_t encoders, std::size_t length) const;
};

/// Learnable state of the fusion stage.
template <typename T>
struct FusionParams {
  BasicTensor<T> query;       // (1, d)              cross_attn
  BasicTensor<T> mix_logits;  // (N)                 learnable_weights
  BasicTensor<T> mlp_in;      // (N*d, hidden)       concat_channel
  BasicTensor<T> mlp_in_bias;
  BasicTensor<T> mlp_out;     // (hidden, d)
  BasicTensor<T> mlp_out_bias;

  void visit(const std::function<void(const std::string&, BasicTensor<T>&)>& fn);
  void visit(const std::function<void(const std::string&, const BasicTensor<T>&)>& fn) const;

  template <typename U>
  FusionParams<U> cast() const;
};

/// Query ~ N(0, 1/d); logits zero; MLP scaled by fan-in. From cfg.seed.
template <typename T>
FusionParams<T> init_fusion(const FusionConfig& cfg, std::size_t encoders, std::size_t dim);

template <typename T>
struct CrossAttention {
  BasicTensor<T> output;   // (l, d)
  BasicTensor<T> weights;  // (N)
  BasicTensor<T> keys;     // (N, d): per-encoder sequence means
};

/// weights = softmax(Q mean(X)^T / sqrt(d)); O = sum_e weights_e x_e.
template <typename T>
CrossAttention<T> cross_attend(const BasicTensor<T>& query, const std::vector<BasicTensor<T>>& features);

template <typename T>
struct FusionOutput {
  BasicTensor<T> tokens;   // (tokens, d)
  BasicTensor<T> weights;  // (N) for the additive strategies, empty otherwise
};

template <typename T>
FusionOutput<T> fuse(const std::vector<BasicTensor<T>>& features, const FusionConfig& cfg,
                     const FusionParams<T>& params);

// -- pipeline -----------------------------------------------------------------

/// Encoders, projector and fusion wired together for inference.
struct VisualPipeline {
  AlignmentPlan plan;
  std::vector<MockEncoder> encoders;  // aligned to plan.target_t
  ProjectorWeights<float> projector;
  FusionConfig fusion;
  FusionParams<float> fusion_params;

  static VisualPipeline build(const std::vector<EncoderProfile>& profiles,
                              const std::vector<EncoderKind>& kinds, std::size_t t,
                              const ProjectorConfig& projector, const FusionConfig& fusion,
                              std::uint64_t seed);

  std::vector<EncoderProfile> profiles() const;
  std::size_t source_frames() const;

  /// Frame-samples `video` for each encoder and runs them (possibly
  /// concurrently); results come back in encoder order.
  std::vector<Tensor> encode(const VideoTensor& video) const;
  std::vector<Tensor> project(const std::vector<Tensor>& features) const;
  FusionOutput<float> run(const VideoTensor& video) const;
};

struct AttentionRow {
  std::string video_id;
  std::vector<double> weights;
  std::size_t argmax = 0;
};

struct AttentionTable {
  std::vector<std::string> encoders;
  std::vector<AttentionRow> rows;

  /// Videos ordered by decreasing weight on `encoder`, ties by id.
  std::vector<AttentionRow> top_k(std::size_t encoder, std::size_t k) const;
  std::vector<double> mean_weights() const;
  /// video_id, w_<encoder>..., argmax_encoder
  void write_csv(std::ostream& os) const;
};

/// Per-video cross-attention weights for a cross_attn pipeline.
AttentionTable extract_attention_weights(const std::vector<std::pair<std::string, VideoTensor>>& videos,
                                         const VisualPipeline& pipeline);

/// Same table from already-projected features (one list per video).
AttentionTable attention_table_from_features(
    const std::vector<std::string>& encoder_names,
    const std::vector<std::pair<std::string, std::vector<Tensor>>>& projected,
    const Tensor& query);

std::string format_double(double v);

}  // namespace merv
