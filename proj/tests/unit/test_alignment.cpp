#include <cmath>

#include "doctest.h"
#include "helpers.hpp"
#include "merv/alignment.hpp"
#include "merv/errors.hpp"
#include "merv/numerics.hpp"

using namespace merv;
using merv::test::random_tensor;

namespace {

EncoderProfile profile(std::string name, std::size_t frames, std::size_t t, std::size_t h, std::size_t w,
                       std::size_t dim) {
  EncoderProfile p;
  p.name = std::move(name);
  p.input_frames = frames;
  p.out_t = t;
  p.out_h = h;
  p.out_w = w;
  p.dim = dim;
  return p;
}

ProjectorConfig config(ProjectorVariant v, std::size_t h, std::size_t w, std::size_t d) {
  ProjectorConfig c;
  c.variant = v;
  c.target_h = h;
  c.target_w = w;
  c.llm_dim = d;
  c.seed = 3;
  return c;
}

template <typename T>
EncoderProjector<T> identity_projector(std::size_t d) {
  EncoderProjector<T> p;
  p.projection = BasicTensor<T>({d, d});
  for (std::size_t i = 0; i < d; ++i) p.projection.at({i, i}) = T(1);
  return p;
}

}  // namespace

TEST_SUITE("alignment") {

TEST_CASE("default ensemble aligns at t = 16") {
  const auto plan = plan_temporal_alignment(default_ensemble(), 16);
  CHECK(plan.frames_for("languagebind") == 16);
  CHECK(plan.frames_for("dinov2") == 16);
  CHECK(plan.frames_for("siglip") == 16);
  CHECK(plan.frames_for("vivit") == 32);
  for (const auto& p : plan.aligned(default_ensemble())) CHECK(p.out_t == 16);
}

TEST_CASE("single image-style encoder maps t frames to t frames") {
  const auto plan = plan_temporal_alignment({profile("img", 1, 1, 4, 4, 8)}, 8);
  CHECK(plan.frames_for("img") == 8);
}

TEST_CASE("tubelet encoders need twice the frames, bounded by their maximum") {
  auto vivit = default_profile("vivit");
  CHECK(plan_temporal_alignment({vivit}, 7).frames_for("vivit") == 14);
  vivit.max_input_frames = 32;
  CHECK(plan_temporal_alignment({vivit}, 16).frames_for("vivit") == 32);
  try {
    plan_temporal_alignment({default_profile("dinov2"), vivit}, 17);
    FAIL("expected an alignment error");
  } catch (const AlignmentError& e) {
    CHECK(std::string(e.what()).find("vivit") != std::string::npos);
  }
  CHECK_THROWS_AS(plan_temporal_alignment({vivit}, 0), AlignmentError);
}

TEST_CASE("avg2d at full scale produces 1024 x 4096") {
  const auto lb = default_profile("languagebind");
  const auto cfg = config(ProjectorVariant::avg2d, 8, 8, 4096);
  const auto weights = init_projector<float>(cfg, {lb});
  const auto x = prefuse(random_tensor({16, 16, 16, 1024}, 1, 0.1), cfg, weights.encoders[0], lb);
  CHECK(x.shape() == Shape{1024, 4096});
  CHECK(cfg.tokens(16) == 1024);
}

TEST_CASE("avg2d with full grid and identity projection flattens the input") {
  const auto p = profile("e", 2, 2, 3, 2, 4);
  const auto cfg = config(ProjectorVariant::avg2d, 3, 2, 4);
  const auto v = random_tensor({2, 3, 2, 4}, 2);
  const auto x = prefuse(v, cfg, identity_projector<float>(4), p);
  CHECK(x.shape() == Shape{12, 4});
  CHECK(x.values() == v.values());

  const Tensor c({2, 3, 2, 4}, 0.75f);
  const auto cfg1 = config(ProjectorVariant::avg2d, 1, 1, 4);
  const auto xc = prefuse(c, cfg1, identity_projector<float>(4), p);
  for (float e : xc.data()) CHECK(e == 0.75f);
}

TEST_CASE("prefuse rejects features that do not match the profile") {
  const auto p = profile("e", 2, 2, 4, 4, 3);
  const auto cfg = config(ProjectorVariant::avg2d, 2, 2, 5);
  const auto w = init_projector<float>(cfg, {p});
  CHECK_THROWS_AS(prefuse(random_tensor({2, 4, 4, 4}, 1), cfg, w.encoders[0], p), DimensionError);
  CHECK_THROWS_AS(prefuse(random_tensor({3, 4, 4, 3}, 1), cfg, w.encoders[0], p), DimensionError);
}

TEST_CASE("projector grid larger than an encoder grid is rejected") {
  const auto cfg = config(ProjectorVariant::avg2d, 15, 15, 64);
  CHECK_THROWS_AS(cfg.validate(default_ensemble()), ConfigError);
  CHECK_NOTHROW(config(ProjectorVariant::avg2d, 14, 14, 64).validate(default_ensemble()));
}

TEST_CASE("projector parameter counts") {
  const auto cfg = config(ProjectorVariant::avg2d, 8, 8, 4096);
  const auto count = count_projector_params(cfg, default_ensemble());
  CHECK(count.projection == 14680064u);
  CHECK(count.internal == 0u);
  CHECK(count_projector_params(config(ProjectorVariant::avg3d, 8, 8, 4096), default_ensemble()).total() ==
        14680064u);
  CHECK(projector_internal_params(cfg, 1024) == 0u);

  // One block at width 1024 with 64 latents and MLP ratio 4:
  // q,k,v,o 4*1024^2; MLP 2*1024*4096; latents 64*1024; three norms 2*1024 each.
  const auto attn = config(ProjectorVariant::attn_resampler, 8, 8, 4096);
  const std::size_t expected = 4 * 1024 * 1024 + 2 * 1024 * 4096 + 64 * 1024 + 3 * 2 * 1024;
  CHECK(projector_internal_params(attn, 1024) == expected);
  CHECK(std::fabs(static_cast<double>(expected) - 12.7e6) / 12.7e6 < 0.02);
}

TEST_CASE("every variant emits the same shape across the ensemble") {
  const std::vector<EncoderProfile> ens{profile("a", 4, 4, 4, 4, 6), profile("b", 8, 4, 6, 6, 4),
                                        profile("c", 4, 4, 5, 3, 5)};
  for (auto v : {ProjectorVariant::avg2d, ProjectorVariant::avg3d, ProjectorVariant::attn_resampler,
                 ProjectorVariant::conv2d, ProjectorVariant::conv3d}) {
    CAPTURE(to_string(v));
    auto cfg = config(v, 2, 2, 7);
    cfg.resampler.heads = 2;
    cfg.conv.blocks_before = cfg.conv.blocks_after = 1;
    const auto plan = plan_temporal_alignment(ens, 4);
    const auto aligned = plan.aligned(ens);
    if (v == ProjectorVariant::attn_resampler) {
      // head count must divide every d_e
      CHECK_THROWS_AS(cfg.validate(aligned), ConfigError);
      cfg.resampler.heads = 1;
    }
    cfg.validate(aligned);
    const auto w = init_projector<float>(cfg, aligned);
    Shape first;
    for (std::size_t e = 0; e < aligned.size(); ++e) {
      const auto x = prefuse(random_tensor(aligned[e].output_shape(), e + 1, 0.5), cfg, w.encoders[e], aligned[e]);
      if (e == 0) first = x.shape();
      CHECK(x.shape() == first);
      CHECK(x.dim(0) == cfg.tokens(4));
      CHECK(x.dim(1) == 7u);
    }
  }
}

TEST_CASE("token law and the avg3d length modes") {
  for (auto v : {ProjectorVariant::avg2d, ProjectorVariant::attn_resampler, ProjectorVariant::conv2d,
                 ProjectorVariant::conv3d})
    CHECK(config(v, 3, 2, 8).tokens(5) == 5u * 3 * 2);
  auto cfg = config(ProjectorVariant::avg3d, 2, 2, 8);
  CHECK(cfg.tokens(16) == 8u * 4);
  CHECK(cfg.tokens(5) == 3u * 4);
  cfg.avg3d_mode = TemporalPoolMode::restored;
  CHECK(cfg.tokens(16) == 16u * 4);
  CHECK(restored_frame_index(2, 4) == std::vector<std::size_t>{0, 0, 1, 1});
}

TEST_CASE("avg3d pools pairs of frames") {
  const auto p = profile("e", 2, 2, 1, 1, 2);
  auto cfg = config(ProjectorVariant::avg3d, 1, 1, 2);
  const Tensor v({2, 1, 1, 2}, std::vector<float>{1, 2, 3, 6});
  const auto x = prefuse(v, cfg, identity_projector<float>(2), p);
  REQUIRE(x.shape() == Shape{1, 2});
  CHECK(x[0] == 2.0f);
  CHECK(x[1] == 4.0f);
  cfg.avg3d_mode = TemporalPoolMode::restored;
  const auto r = prefuse(v, cfg, identity_projector<float>(2), p);
  CHECK(r.values() == std::vector<float>{2, 4, 2, 4});
}

TEST_CASE("avg2d is equivariant to frame permutations") {
  const auto p = profile("e", 3, 3, 4, 4, 3);
  const auto cfg = config(ProjectorVariant::avg2d, 2, 2, 5);
  const auto w = init_projector<float>(cfg, {p});
  const auto v = random_tensor({3, 4, 4, 3}, 4);
  const std::size_t perm[3] = {2, 0, 1}, frame = 4 * 4 * 3;
  std::vector<float> pv(v.numel());
  for (std::size_t t = 0; t < 3; ++t)
    std::copy_n(v.data().begin() + perm[t] * frame, frame, pv.begin() + t * frame);
  const auto x = prefuse(v, cfg, w.encoders[0], p);
  const auto y = prefuse(Tensor(v.shape(), pv), cfg, w.encoders[0], p);
  const std::size_t block = 2 * 2 * 5;
  for (std::size_t t = 0; t < 3; ++t)
    for (std::size_t i = 0; i < block; ++i) CHECK(y[t * block + i] == x[perm[t] * block + i]);
}

TEST_CASE("gradient of prefuse with respect to W_e matches finite differences") {
  const auto p = profile("e", 2, 2, 4, 4, 3);
  const auto cfg = config(ProjectorVariant::avg2d, 2, 2, 4);
  auto w = init_projector<double>(cfg, {p});
  const auto v = random_tensor<double>({2, 4, 4, 3}, 5);
  const auto probe = random_tensor<double>({8, 4}, 6);
  // Loss sum(probe * pooled W): dL/dW = pooled^T probe.
  const auto pooled = adaptive_avg_pool2d(v, 2, 2).reshaped({8, 3});
  const auto analytic = matmul_tn(pooled, probe);
  const auto numeric = finite_diff_grad([&](const Tensor64& W) {
    auto e = w.encoders[0];
    e.projection = W;
    const auto x = prefuse(v, cfg, e, p);
    double s = 0;
    for (std::size_t i = 0; i < x.numel(); ++i) s += x[i] * probe[i];
    return s;
  }, w.encoders[0].projection);
  CHECK(max_relative_error(analytic, numeric) < 1e-4);
}

TEST_CASE("projector init is seeded") {
  const auto ens = default_ensemble();
  auto cfg = config(ProjectorVariant::avg2d, 8, 8, 32);
  const auto a = init_projector<float>(cfg, ens), b = init_projector<float>(cfg, ens);
  CHECK(a.encoders[2].projection == b.encoders[2].projection);
  cfg.seed = 4;
  CHECK_FALSE(init_projector<float>(cfg, ens).encoders[2].projection == a.encoders[2].projection);
  CHECK(a.encoders[0].projection.shape() == Shape{1024, 32});
}

TEST_CASE("variant names round trip") {
  for (auto v : {ProjectorVariant::avg2d, ProjectorVariant::avg3d, ProjectorVariant::attn_resampler,
                 ProjectorVariant::conv2d, ProjectorVariant::conv3d})
    CHECK(projector_variant_from_string(to_string(v)) == v);
  CHECK_THROWS_AS(projector_variant_from_string("mlp"), ConfigError);
}

}  // TEST_SUITE
