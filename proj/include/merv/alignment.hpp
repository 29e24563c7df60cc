#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "merv/encoders.hpp"
#include "merv/tensor.hpp"

namespace merv {

// -- temporal alignment -----------------------------------------------------

struct AlignmentEntry {
  std::string encoder;
  std::size_t input_frames;
};

/// Per-encoder input frame counts under which every encoder emits
/// `target_t` output frames.
struct AlignmentPlan {
  std::size_t target_t = 0;
  std::vector<AlignmentEntry> entries;

  std::size_t frames_for(const std::string& encoder) const;
  /// Profiles re-targeted to the plan, in the order given.
  std::vector<EncoderProfile> aligned(const std::vector<EncoderProfile>& profiles) const;
};

/// Throws AlignmentError naming the first encoder that cannot reach `t`.
AlignmentPlan plan_temporal_alignment(const std::vector<EncoderProfile>& profiles, std::size_t t);

// -- projector configuration ------------------------------------------------

enum class ProjectorVariant { avg2d, avg3d, attn_resampler, conv2d, conv3d };

std::string to_string(ProjectorVariant v);
ProjectorVariant projector_variant_from_string(const std::string& name);

/// How the 3D average pool reconciles its halved frame axis with the
/// token budget: keep (ceil(t/2))*h*w tokens, or repeat each pooled frame
/// back to t*h*w tokens.
enum class TemporalPoolMode { halved, restored };

struct ResamplerConfig {
  std::size_t heads = 8;
  std::size_t mlp_ratio = 4;
};

/// Residual 3x3 conv blocks applied before and after the average pool.
struct ConvPlan {
  std::size_t blocks_before = 3;
  std::size_t blocks_after = 3;
};

struct ProjectorConfig {
  ProjectorVariant variant = ProjectorVariant::avg2d;
  std::size_t target_h = 8;
  std::size_t target_w = 8;
  std::size_t llm_dim = 4096;
  std::uint64_t seed = 0;
  TemporalPoolMode avg3d_mode = TemporalPoolMode::halved;
  ResamplerConfig resampler;
  ConvPlan conv;

  /// Frames that reach the projection for an aligned input of t frames.
  std::size_t output_frames(std::size_t t) const;
  /// Sequence length l of every aligned feature.
  std::size_t tokens(std::size_t t) const;
  /// Requires h <= min h_e, w <= min w_e and variant-specific divisibility.
  void validate(const std::vector<EncoderProfile>& profiles) const;
};

// -- projector parameters ---------------------------------------------------

/// Trainable state of one encoder's projector. Only the members used by the
/// configured variant are populated.
template <typename T>
struct EncoderProjector {
  BasicTensor<T> projection;  // W_e: (d_e, d), no bias

  // attn_resampler
  BasicTensor<T> latents;  // (h*w, d_e)
  BasicTensor<T> latent_norm_gain, latent_norm_bias;
  BasicTensor<T> feature_norm_gain, feature_norm_bias;
  BasicTensor<T> mlp_norm_gain, mlp_norm_bias;
  BasicTensor<T> wq, wk, wv, wo;  // (d_e, d_e)
  BasicTensor<T> mlp_in;          // (d_e, ratio*d_e)
  BasicTensor<T> mlp_out;         // (ratio*d_e, d_e)

  // conv2d / conv3d
  std::vector<BasicTensor<T>> conv_kernels;  // (k_t, 3, 3, d_e, d_e)
  std::vector<BasicTensor<T>> conv_biases;   // (d_e)

  /// Visits every populated tensor with a stable name.
  void visit(const std::function<void(const std::string&, BasicTensor<T>&)>& fn);
  void visit(const std::function<void(const std::string&, const BasicTensor<T>&)>& fn) const;

  template <typename U>
  EncoderProjector<U> cast() const;
};

template <typename T>
struct ProjectorWeights {
  ProjectorConfig config;
  std::vector<EncoderProjector<T>> encoders;

  template <typename U>
  ProjectorWeights<U> cast() const {
    ProjectorWeights<U> out{config, {}};
    for (const auto& e : encoders) out.encoders.push_back(e.template cast<U>());
    return out;
  }
};

/// Deterministic initialisation from cfg.seed.
template <typename T>
ProjectorWeights<T> init_projector(const ProjectorConfig& cfg, const std::vector<EncoderProfile>& profiles);

/// x_e = flatten(P(v_e)) W_e. `feature` is (t, h_e, w_e, d_e) for the
/// aligned profile; the result is (tokens(t), d).
template <typename T>
BasicTensor<T> prefuse(const BasicTensor<T>& feature, const ProjectorConfig& cfg,
                       const EncoderProjector<T>& params, const EncoderProfile& profile);

/// Frame index used for each output frame when a pooled axis of `pooled`
/// frames is repeated back to `frames`.
std::vector<std::size_t> restored_frame_index(std::size_t pooled, std::size_t frames);

struct ProjectorParamCount {
  std::vector<std::size_t> internal_per_encoder;  // pooling / resampler / conv weights
  std::size_t internal = 0;
  std::size_t projection = 0;  // d * sum(d_e)

  std::size_t total() const { return internal + projection; }
};

ProjectorParamCount count_projector_params(const ProjectorConfig& cfg,
                                           const std::vector<EncoderProfile>& profiles);

/// Internal (non-projection) weights of one encoder's projector.
std::size_t projector_internal_params(const ProjectorConfig& cfg, std::size_t encoder_dim);

extern template struct EncoderProjector<float>;
extern template struct EncoderProjector<double>;

}  // namespace merv
