#include <algorithm>
#include <cstdio>
#include <ostream>

#include "merv/errors.hpp"
#include "merv/fusion.hpp"
#include "merv/parallel.hpp"
#include "merv/rng.hpp"

namespace merv {

VisualPipeline VisualPipeline::build(const std::vector<EncoderProfile>& profiles,
                                     const std::vector<EncoderKind>& kinds, std::size_t t,
                                     const ProjectorConfig& projector, const FusionConfig& fusion,
                                     std::uint64_t seed) {
  if (profiles.empty()) throw ConfigError("pipeline needs at least one encoder");
  if (kinds.size() != profiles.size()) throw ConfigError("one encoder kind is required per profile");
  VisualPipeline p;
  p.plan = plan_temporal_alignment(profiles, t);
  const auto aligned = p.plan.aligned(profiles);
  projector.validate(aligned);
  fusion.validate(aligned.size());
  for (std::size_t i = 0; i < aligned.size(); ++i) {
    const std::uint64_t s = Rng::derive(seed, "encoder:" + aligned[i].name).next_u64();
    p.encoders.push_back(make_mock_encoder(aligned[i], s, kinds[i]));
  }
  p.projector = init_projector<float>(projector, aligned);
  p.fusion = fusion;
  p.fusion_params = init_fusion<float>(fusion, aligned.size(), projector.llm_dim);
  return p;
}

std::vector<EncoderProfile> VisualPipeline::profiles() const {
  std::vector<EncoderProfile> out;
  for (const auto& e : encoders) out.push_back(e.profile());
  return out;
}

std::size_t VisualPipeline::source_frames() const {
  std::size_t n = 1;
  for (const auto& e : encoders) n = std::max(n, e.profile().input_frames);
  return n;
}

std::vector<Tensor> VisualPipeline::encode(const VideoTensor& video) const {
  std::vector<Tensor> out(encoders.size());
  parallel_for(encoders.size(), [&](std::size_t i) {
    const auto& enc = encoders[i];
    const std::size_t n = enc.profile().input_frames;
    out[i] = video.frames() == n ? enc.encode(video) : enc.encode(uniform_sample_frames(video, n));
  });
  return out;
}

std::vector<Tensor> VisualPipeline::project(const std::vector<Tensor>& features) const {
  if (features.size() != encoders.size()) {
    throw DimensionError("expected " + std::to_string(encoders.size()) + " features, got " +
                         std::to_string(features.size()));
  }
  std::vector<Tensor> out(features.size());
  parallel_for(features.size(), [&](std::size_t i) {
    out[i] = prefuse(features[i], projector.config, projector.encoders[i], encoders[i].profile());
  });
  return out;
}

FusionOutput<float> VisualPipeline::run(const VideoTensor& video) const {
  return fuse(project(encode(video)), fusion, fusion_params);
}

namespace {

std::size_t argmax(const std::vector<double>& w) {
  return static_cast<std::size_t>(std::max_element(w.begin(), w.end()) - w.begin());
}

AttentionRow make_row(std::string id, const Tensor& weights) {
  AttentionRow row;
  row.video_id = std::move(id);
  for (float w : weights.data()) row.weights.push_back(w);
  row.argmax = argmax(row.weights);
  return row;
}

}  // namespace

std::vector<AttentionRow> AttentionTable::top_k(std::size_t encoder, std::size_t k) const {
  if (encoder >= encoders.size()) throw ConfigError("encoder index out of range");
  std::vector<AttentionRow> sorted = rows;
  std::sort(sorted.begin(), sorted.end(), [&](const AttentionRow& a, const AttentionRow& b) {
    if (a.weights[encoder] != b.weights[encoder]) return a.weights[encoder] > b.weights[encoder];
    return a.video_id < b.video_id;
  });
  if (sorted.size() > k) sorted.resize(k);
  return sorted;
}

std::vector<double> AttentionTable::mean_weights() const {
  std::vector<double> mean(encoders.size(), 0.0);
  if (rows.empty()) return mean;
  for (const auto& r : rows)
    for (std::size_t e = 0; e < mean.size(); ++e) mean[e] += r.weights[e];
  for (auto& m : mean) m /= static_cast<double>(rows.size());
  return mean;
}

void AttentionTable::write_csv(std::ostream& os) const {
  os << "video_id";
  for (const auto& e : encoders) os << ",w_" << e;
  os << ",argmax_encoder\n";
  for (const auto& r : rows) {
    os << r.video_id;
    for (double w : r.weights) os << ',' << format_double(w);
    os << ',' << encoders[r.argmax] << '\n';
  }
}

AttentionTable extract_attention_weights(const std::vector<std::pair<std::string, VideoTensor>>& videos,
                                         const VisualPipeline& pipeline) {
  if (pipeline.fusion.strategy != FusionStrategy::cross_attn) {
    throw ConfigError("attention weights need a cross_attn pipeline");
  }
  AttentionTable table;
  for (const auto& e : pipeline.encoders) table.encoders.push_back(e.profile().name);
  for (const auto& [id, video] : videos) {
    const auto r = cross_attend(pipeline.fusion_params.query, pipeline.project(pipeline.encode(video)));
    table.rows.push_back(make_row(id, r.weights));
  }
  return table;
}

AttentionTable attention_table_from_features(
    const std::vector<std::string>& encoder_names,
    const std::vector<std::pair<std::string, std::vector<Tensor>>>& projected, const Tensor& query) {
  AttentionTable table;
  table.encoders = encoder_names;
  for (const auto& [id, feats] : projected) {
    if (feats.size() != encoder_names.size()) {
      throw DimensionError("video '" + id + "' has " + std::to_string(feats.size()) + " features, expected " +
                           std::to_string(encoder_names.size()));
    }
    table.rows.push_back(make_row(id, cross_attend(query, feats).weights));
  }
  return table;
}

std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace merv
