#include "merv/encoders.hpp"
#include "merv/errors.hpp"

namespace merv {

std::size_t EncoderProfile::temporal_stride() const {
  if (out_t == 0 || input_frames % out_t != 0) {
    throw ConfigError("encoder '" + name + "': input_frames must be a multiple of out_t");
  }
  return input_frames / out_t;
}

std::optional<std::size_t> EncoderProfile::input_frames_for(std::size_t t) const {
  if (t == 0) return std::nullopt;
  const std::size_t frames = t * temporal_stride();
  if (max_input_frames != 0 && frames > max_input_frames) return std::nullopt;
  return frames;
}

EncoderProfile EncoderProfile::at_output_frames(std::size_t t) const {
  const auto frames = input_frames_for(t);
  if (!frames) {
    throw AlignmentError("encoder '" + name + "' cannot produce " + std::to_string(t) +
                         " output frames");
  }
  EncoderProfile p = *this;
  p.input_frames = *frames;
  p.out_t = t;
  return p;
}

void EncoderProfile::validate() const {
  if (name.empty()) throw ConfigError("encoder profile needs a name");
  if (input_frames < 1 || out_t < 1 || out_h < 1 || out_w < 1 || dim < 1) {
    throw ConfigError("encoder '" + name + "': all extents must be >= 1");
  }
  (void)temporal_stride();
  if (latency_ms < 0.0 || flops_per_frame < 0.0 || params < 0.0) {
    throw ConfigError("encoder '" + name + "': cost coefficients must be nonnegative");
  }
  if (max_input_frames != 0 && input_frames > max_input_frames) {
    throw ConfigError("encoder '" + name + "': input_frames exceeds max_input_frames");
  }
}

std::vector<EncoderProfile> default_ensemble() {
  // Backbone sizes: ViT-L/14 (~304M, 16x16 patches + cls/registers) for
  // LanguageBind and DINOv2; ViT-B (~86M) for ViViT (2-frame tubelets,
  // 14x14 patches) and SigLIP (14x14 patches). FLOPs per input frame follow
  // 2 * params * tokens-per-frame.
  std::vector<EncoderProfile> e;
  e.push_back({"languagebind", 16, 16, 16, 16, 1024, 30.0, 2.0 * 304e6 * 257, 304e6, 0});
  e.push_back({"dinov2", 16, 16, 16, 16, 1024, 31.0, 2.0 * 304e6 * 261, 304e6, 0});
  e.push_back({"vivit", 32, 16, 14, 14, 768, 24.0, 2.0 * 86e6 * 98, 86e6, 0});
  e.push_back({"siglip", 16, 16, 14, 14, 768, 14.0, 2.0 * 86e6 * 196, 86e6, 0});
  return e;
}

EncoderProfile default_profile(const std::string& name) {
  for (auto& p : default_ensemble())
    if (p.name == name) return p;
  throw ConfigError("unknown encoder profile '" + name + "'");
}

}  // namespace merv
