#include <cmath>

#include "merv/encoders.hpp"
#include "merv/errors.hpp"
#include "merv/numerics.hpp"
#include "merv/rng.hpp"

namespace merv {

namespace {

constexpr float kMotionGain = 8.0f;
constexpr float kEnergyGain = 4.0f;
constexpr float kPositionalScale = 0.1f;

float luminance(const VideoTensor& v, std::size_t t, std::size_t y, std::size_t x) {
  return (v.at(t, y, x, 0) + v.at(t, y, x, 1) + v.at(t, y, x, 2)) / 3.0f;
}

// Central difference with clamped borders.
float grad_x(const VideoTensor& v, std::size_t t, std::size_t y, std::size_t x) {
  const std::size_t lo = x > 0 ? x - 1 : x;
  const std::size_t hi = x + 1 < v.width() ? x + 1 : x;
  if (hi == lo) return 0.0f;
  return (luminance(v, t, y, hi) - luminance(v, t, y, lo)) / static_cast<float>(hi - lo);
}

float grad_y(const VideoTensor& v, std::size_t t, std::size_t y, std::size_t x) {
  const std::size_t lo = y > 0 ? y - 1 : y;
  const std::size_t hi = y + 1 < v.height() ? y + 1 : y;
  if (hi == lo) return 0.0f;
  return (luminance(v, t, hi, x) - luminance(v, t, lo, x)) / static_cast<float>(hi - lo);
}

// Channel means and mean squares over a frame range and a pixel box.
void append_patch_moments(std::vector<float>& out, const VideoTensor& v, std::size_t f0,
                          std::size_t f1, std::size_t y0, std::size_t y1, std::size_t x0,
                          std::size_t x1) {
  double sum[3] = {0, 0, 0}, sq[3] = {0, 0, 0};
  for (std::size_t t = f0; t < f1; ++t)
    for (std::size_t y = y0; y < y1; ++y)
      for (std::size_t x = x0; x < x1; ++x)
        for (std::size_t c = 0; c < 3; ++c) {
          const double p = v.at(t, y, x, c);
          sum[c] += p;
          sq[c] += p * p;
        }
  const double n = static_cast<double>((f1 - f0) * (y1 - y0) * (x1 - x0));
  for (double s : sum) out.push_back(static_cast<float>(s / n));
  for (double s : sq) out.push_back(static_cast<float>(s / n));
}

void append_frame_means(std::vector<float>& out, const VideoTensor& v, std::size_t f0,
                        std::size_t f1) {
  double sum[3] = {0, 0, 0};
  for (std::size_t t = f0; t < f1; ++t)
    for (std::size_t y = 0; y < v.height(); ++y)
      for (std::size_t x = 0; x < v.width(); ++x)
        for (std::size_t c = 0; c < 3; ++c) sum[c] += v.at(t, y, x, c);
  const double n = static_cast<double>((f1 - f0) * v.height() * v.width());
  for (double s : sum) out.push_back(static_cast<float>(s / n));
}

}  // namespace

std::string to_string(EncoderKind kind) {
  switch (kind) {
    case EncoderKind::spatial: return "spatial";
    case EncoderKind::temporal: return "temporal";
    case EncoderKind::language: return "language";
    case EncoderKind::generic: return "generic";
  }
  return "generic";
}

EncoderKind encoder_kind_from_string(const std::string& name) {
  if (name == "spatial") return EncoderKind::spatial;
  if (name == "temporal") return EncoderKind::temporal;
  if (name == "language") return EncoderKind::language;
  if (name == "generic") return EncoderKind::generic;
  throw ConfigError("unknown encoder kind '" + name + "'");
}

MockEncoder::MockEncoder(EncoderProfile profile, std::uint64_t seed, EncoderKind kind)
    : profile_(std::move(profile)), seed_(seed), kind_(kind) {
  profile_.validate();
  // Weights depend on the grid and width only, never on the frame counts,
  // so retargeting an encoder to another temporal operating point keeps it.
  Rng rng = Rng::derive(seed, "mock-encoder:" + profile_.name + ":" + to_string(kind));
  const std::size_t k = stat_count();
  const double scale = 1.0 / std::sqrt(static_cast<double>(k));
  std::vector<float> w(k * profile_.dim);
  for (auto& v : w) v = static_cast<float>(rng.normal() * scale);
  weight_ = Tensor({k, profile_.dim}, std::move(w));
  std::vector<float> pos(profile_.out_h * profile_.out_w * profile_.dim);
  for (auto& v : pos) v = static_cast<float>(rng.normal() * kPositionalScale);
  positional_ = Tensor({profile_.out_h * profile_.out_w, profile_.dim}, std::move(pos));
}

std::size_t MockEncoder::stat_count() const {
  switch (kind_) {
    case EncoderKind::language: return 10;
    case EncoderKind::spatial:
    case EncoderKind::temporal:
    case EncoderKind::generic: return 7;
  }
  return 7;
}

MockEncoder MockEncoder::retargeted(const EncoderProfile& profile) const {
  if (profile.out_h != profile_.out_h || profile.out_w != profile_.out_w || profile.dim != profile_.dim) {
    throw ConfigError("retargeting may only change the temporal operating point");
  }
  MockEncoder copy = *this;
  profile.validate();
  copy.profile_ = profile;
  return copy;
}

std::vector<float> MockEncoder::cell_stats(const VideoTensor& v, std::size_t f0, std::size_t f1,
                                           std::size_t y0, std::size_t y1, std::size_t x0,
                                           std::size_t x1) const {
  std::vector<float> s;
  s.reserve(stat_count());
  s.push_back(1.0f);
  switch (kind_) {
    case EncoderKind::generic:
      append_patch_moments(s, v, f0, f1, y0, y1, x0, x1);
      break;
    case EncoderKind::language:
      append_patch_moments(s, v, f0, f1, y0, y1, x0, x1);
      append_frame_means(s, v, f0, f1);
      break;
    case EncoderKind::spatial:
      append_patch_moments(s, v, 0, v.frames(), y0, y1, x0, x1);
      break;
    case EncoderKind::temporal: {
      append_frame_means(s, v, f0, f1);
      // Adjacent pairs inside the tubelet; a single-frame tubelet looks one
      // frame ahead (or back at the clip end).
      std::vector<std::size_t> firsts;
      if (f1 - f0 >= 2) {
        for (std::size_t k = f0; k + 1 < f1; ++k) firsts.push_back(k);
      } else if (v.frames() >= 2) {
        firsts.push_back(f0 + 1 < v.frames() ? f0 : v.frames() - 2);
      }
      double mx = 0, my = 0, energy = 0;
      for (std::size_t k : firsts)
        for (std::size_t y = y0; y < y1; ++y)
          for (std::size_t x = x0; x < x1; ++x) {
            const double d = luminance(v, k + 1, y, x) - luminance(v, k, y, x);
            const double gx = 0.5 * (grad_x(v, k, y, x) + grad_x(v, k + 1, y, x));
            const double gy = 0.5 * (grad_y(v, k, y, x) + grad_y(v, k + 1, y, x));
            mx += d * gx;
            my += d * gy;
            energy += std::abs(d);
          }
      const double n = firsts.empty() ? 1.0 : static_cast<double>(firsts.size() * (y1 - y0) * (x1 - x0));
      s.push_back(static_cast<float>(kMotionGain * mx / n));
      s.push_back(static_cast<float>(kMotionGain * my / n));
      s.push_back(static_cast<float>(kEnergyGain * energy / n));
      break;
    }
  }
  return s;
}

Tensor MockEncoder::encode(const VideoTensor& video) const {
  if (video.frames() != profile_.input_frames) {
    throw AlignmentError("encoder '" + profile_.name + "' expects " +
                         std::to_string(profile_.input_frames) + " frames, got " +
                         std::to_string(video.frames()));
  }
  const std::size_t stride = profile_.temporal_stride();
  const std::size_t te = profile_.out_t, he = profile_.out_h, we = profile_.out_w, d = profile_.dim;
  const std::size_t k = stat_count();
  Tensor out({te, he, we, d});
  for (std::size_t ti = 0; ti < te; ++ti) {
    for (std::size_t i = 0; i < he; ++i) {
      const PoolWindow wy = adaptive_window(i, video.height(), he);
      for (std::size_t j = 0; j < we; ++j) {
        const PoolWindow wx = adaptive_window(j, video.width(), we);
        const auto s = cell_stats(video, ti * stride, (ti + 1) * stride, wy.begin, wy.end, wx.begin, wx.end);
        float* dst = out.data().data() + ((ti * he + i) * we + j) * d;
        const float* pos = positional_.data().data() + (i * we + j) * d;
        for (std::size_t c = 0; c < d; ++c) dst[c] = pos[c];
        for (std::size_t r = 0; r < k; ++r) {
          const float sv = s[r];
          const float* wrow = weight_.data().data() + r * d;
          for (std::size_t c = 0; c < d; ++c) dst[c] += sv * wrow[c];
        }
      }
    }
  }
  return out;
}

MockEncoder make_mock_encoder(const EncoderProfile& profile, std::uint64_t seed, EncoderKind kind) {
  return MockEncoder(profile, seed, kind);
}

}  // namespace merv
