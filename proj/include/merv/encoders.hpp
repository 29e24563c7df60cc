#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "merv/tensor.hpp"

namespace merv {

/// Static description of one visual encoder.
///
/// `input_frames` is the frame count at the profile's operating point and
/// `out_t` the number of output frames it yields there; their ratio is the
/// encoder's temporal stride (2 for tubelet models such as ViViT).
struct EncoderProfile {
  std::string name;
  std::size_t input_frames = 1;
  std::size_t out_t = 1;
  std::size_t out_h = 1;
  std::size_t out_w = 1;
  std::size_t dim = 1;
  double latency_ms = 0.0;
  double flops_per_frame = 0.0;  // ~ 2 * params * tokens per input frame
  double params = 0.0;
  std::size_t max_input_frames = 0;  // 0: unbounded

  std::size_t temporal_stride() const;
  /// Input frame count that yields `t` output frames, if the encoder can.
  std::optional<std::size_t> input_frames_for(std::size_t t) const;
  /// Copy of this profile re-targeted to `t` output frames.
  EncoderProfile at_output_frames(std::size_t t) const;
  Shape output_shape() const { return {out_t, out_h, out_w, dim}; }
  void validate() const;

  bool operator==(const EncoderProfile&) const = default;
};

/// The four-expert ensemble: languagebind, dinov2, vivit, siglip.
std::vector<EncoderProfile> default_ensemble();
/// Lookup in the default ensemble; throws ConfigError for unknown names.
EncoderProfile default_profile(const std::string& name);

/// T x H x W x 3 video with values in [0, 1].
class VideoTensor {
 public:
  VideoTensor() = default;
  explicit VideoTensor(Tensor pixels);

  std::size_t frames() const { return pixels_.dim(0); }
  std::size_t height() const { return pixels_.dim(1); }
  std::size_t width() const { return pixels_.dim(2); }
  const Tensor& pixels() const { return pixels_; }

  float at(std::size_t t, std::size_t y, std::size_t x, std::size_t c) const {
    return pixels_[((t * height() + y) * width() + x) * 3 + c];
  }

  VideoTensor reversed() const;
  bool operator==(const VideoTensor&) const = default;

 private:
  Tensor pixels_;
};

/// Repeats an H x W x 3 image T times.
VideoTensor image_as_video(const Tensor& image, std::size_t frames);

/// Frame indices round(i (T - 1) / (n - 1)), i = 0..n-1; n = 1 picks frame 0.
std::vector<std::size_t> uniform_frame_indices(std::size_t total, std::size_t n);
VideoTensor uniform_sample_frames(const VideoTensor& video, std::size_t n);

/// Loads a video from a rank-4 (T, H, W, 3) feature container, or from a
/// directory of raw 8-bit RGB frame files of size `frame_h` x `frame_w`
/// read in lexicographic filename order.
VideoTensor read_video(const std::filesystem::path& path, std::size_t frame_h = 0,
                       std::size_t frame_w = 0);

enum class EncoderKind { spatial, temporal, language, generic };

std::string to_string(EncoderKind kind);
EncoderKind encoder_kind_from_string(const std::string& name);

/// Deterministic stand-in for a pretrained backbone: a fixed random linear
/// map from per-cell pixel statistics to `dim` channels plus a learned-looking
/// positional code, both drawn from `seed`.
///
/// What the statistics see depends on the kind:
///  - generic:  channel means and mean squares over each tubelet patch;
///  - language: generic statistics plus whole-frame channel means;
///  - spatial:  per-patch statistics averaged over every frame of the clip,
///              so the output ignores frame order entirely;
///  - temporal: whole-frame appearance plus per-patch motion products of
///              adjacent-frame differences and spatial gradients, whose sign
///              flips under time reversal.
class MockEncoder {
 public:
  MockEncoder(EncoderProfile profile, std::uint64_t seed, EncoderKind kind);

  const EncoderProfile& profile() const { return profile_; }
  EncoderKind kind() const { return kind_; }
  std::uint64_t seed() const { return seed_; }
  std::size_t stat_count() const;

  /// Requires video.frames() == profile.input_frames; returns
  /// (out_t, out_h, out_w, dim).
  Tensor encode(const VideoTensor& video) const;

  /// Same weights, different temporal operating point.
  MockEncoder retargeted(const EncoderProfile& profile) const;

  bool operator==(const MockEncoder&) const = default;

 private:
  std::vector<float> cell_stats(const VideoTensor& video, std::size_t frame_begin,
                                std::size_t frame_end, std::size_t y0, std::size_t y1,
                                std::size_t x0, std::size_t x1) const;

  EncoderProfile profile_;
  std::uint64_t seed_;
  EncoderKind kind_;
  Tensor weight_;      // (stats, dim)
  Tensor positional_;  // (out_h * out_w, dim)
};

MockEncoder make_mock_encoder(const EncoderProfile& profile, std::uint64_t seed, EncoderKind kind);

// -- feature container -------------------------------------------------------
//
// "MERVFTR1" | u8 dtype (1 = f32, 2 = f64) | u8 rank | rank x u32 LE extents
// | payload little-endian, row-major.

inline constexpr char kFeatureMagic[8] = {'M', 'E', 'R', 'V', 'F', 'T', 'R', '1'};

std::vector<std::uint8_t> encode_feature(const Tensor& tensor);
std::vector<std::uint8_t> encode_feature(const Tensor64& tensor);
Tensor decode_feature(std::span<const std::uint8_t> bytes);
/// Accepts either dtype; f32 payloads are widened.
Tensor64 decode_feature64(std::span<const std::uint8_t> bytes);

void write_feature(const std::filesystem::path& path, const Tensor& tensor);
void write_feature(const std::filesystem::path& path, const Tensor64& tensor);
Tensor read_feature(const std::filesystem::path& path);
Tensor64 read_feature64(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace merv
