#include "merv/alignment.hpp"
#include "merv/errors.hpp"

namespace merv {

std::size_t AlignmentPlan::frames_for(const std::string& encoder) const {
  for (const auto& e : entries)
    if (e.encoder == encoder) return e.input_frames;
  throw AlignmentError("encoder '" + encoder + "' is not part of the alignment plan");
}

std::vector<EncoderProfile> AlignmentPlan::aligned(const std::vector<EncoderProfile>& profiles) const {
  std::vector<EncoderProfile> out;
  out.reserve(profiles.size());
  for (const auto& p : profiles) {
    EncoderProfile q = p.at_output_frames(target_t);
    if (q.input_frames != frames_for(p.name)) {
      throw AlignmentError("plan and profile disagree for encoder '" + p.name + "'");
    }
    out.push_back(std::move(q));
  }
  return out;
}

AlignmentPlan plan_temporal_alignment(const std::vector<EncoderProfile>& profiles, std::size_t t) {
  if (t == 0) throw AlignmentError("target frame count must be >= 1");
  AlignmentPlan plan;
  plan.target_t = t;
  for (const auto& p : profiles) {
    p.validate();
    for (const auto& e : plan.entries) {
      if (e.encoder == p.name) throw AlignmentError("duplicate encoder name '" + p.name + "'");
    }
    const auto frames = p.input_frames_for(t);
    if (!frames) {
      throw AlignmentError("encoder '" + p.name + "' cannot emit " + std::to_string(t) +
                           " output frames (stride " + std::to_string(p.temporal_stride()) +
                           ", max input " + std::to_string(p.max_input_frames) + ")");
    }
    plan.entries.push_back({p.name, *frames});
  }
  return plan;
}

}  // namespace merv
