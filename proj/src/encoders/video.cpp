#include <algorithm>
#include <fstream>

#include "merv/encoders.hpp"
#include "merv/errors.hpp"

namespace merv {

VideoTensor::VideoTensor(Tensor pixels) : pixels_(std::move(pixels)) {
  if (pixels_.rank() != 4 || pixels_.dim(3) != 3) {
    throw DimensionError("video must have shape (T, H, W, 3), got " + shape_str(pixels_.shape()));
  }
  for (float v : pixels_.data()) {
    if (!(v >= 0.0f && v <= 1.0f)) throw FormatError("video pixel values must lie in [0, 1]");
  }
}

VideoTensor VideoTensor::reversed() const {
  const std::size_t T = frames();
  const std::size_t plane = height() * width() * 3;
  std::vector<float> data(pixels_.numel());
  for (std::size_t t = 0; t < T; ++t) {
    std::copy_n(pixels_.data().data() + (T - 1 - t) * plane, plane, data.data() + t * plane);
  }
  return VideoTensor(Tensor(pixels_.shape(), std::move(data)));
}

VideoTensor image_as_video(const Tensor& image, std::size_t frames) {
  if (image.rank() != 3 || image.dim(2) != 3) {
    throw DimensionError("image must have shape (H, W, 3), got " + shape_str(image.shape()));
  }
  if (frames < 1) throw DimensionError("image_as_video: frame count must be >= 1");
  std::vector<float> data;
  data.reserve(frames * image.numel());
  for (std::size_t t = 0; t < frames; ++t) data.insert(data.end(), image.data().begin(), image.data().end());
  return VideoTensor(Tensor({frames, image.dim(0), image.dim(1), 3}, std::move(data)));
}

std::vector<std::size_t> uniform_frame_indices(std::size_t total, std::size_t n) {
  if (total < 1 || n < 1) throw DimensionError("uniform_sample_frames: counts must be >= 1");
  std::vector<std::size_t> idx(n, 0);
  if (n == 1) return idx;
  const std::size_t span = total - 1, steps = n - 1;
  // round half up of i * span / steps, in integers
  for (std::size_t i = 0; i < n; ++i) idx[i] = (2 * i * span + steps) / (2 * steps);
  return idx;
}

VideoTensor uniform_sample_frames(const VideoTensor& video, std::size_t n) {
  const auto idx = uniform_frame_indices(video.frames(), n);
  const std::size_t plane = video.height() * video.width() * 3;
  std::vector<float> data(n * plane);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(video.pixels().data().data() + idx[i] * plane, plane, data.data() + i * plane);
  }
  return VideoTensor(Tensor({n, video.height(), video.width(), 3}, std::move(data)));
}

VideoTensor read_video(const std::filesystem::path& path, std::size_t frame_h, std::size_t frame_w) {
  namespace fs = std::filesystem;
  if (!fs::exists(path)) throw FormatError("video path does not exist: " + path.string());
  if (!fs::is_directory(path)) {
    Tensor t = read_feature(path);
    return VideoTensor(std::move(t));
  }
  if (frame_h == 0 || frame_w == 0) {
    throw ConfigError("raw frame directories need an explicit frame size (HxW)");
  }
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(path))
    if (entry.is_regular_file()) files.push_back(entry.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw FormatError("no frame files in " + path.string());
  const std::size_t plane = frame_h * frame_w * 3;
  std::vector<float> data;
  data.reserve(files.size() * plane);
  for (const auto& f : files) {
    const auto bytes = read_file_bytes(f);
    if (bytes.size() != plane) {
      throw FormatError("frame " + f.filename().string() + " has " + std::to_string(bytes.size()) +
                        " bytes, expected " + std::to_string(plane));
    }
    for (auto b : bytes) data.push_back(static_cast<float>(b) / 255.0f);
  }
  return VideoTensor(Tensor({files.size(), frame_h, frame_w, 3}, std::move(data)));
}

}  // namespace merv
