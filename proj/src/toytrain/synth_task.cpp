#include "merv/toytrain/synth_task.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

#include "merv/errors.hpp"

namespace merv {

std::string to_string(TaskKind k) {
  switch (k) {
    case TaskKind::temporal_direction: return "temporal_direction";
    case TaskKind::spatial_pattern: return "spatial_pattern";
    case TaskKind::mixed: return "mixed";
  }
  return "temporal_direction";
}

TaskKind task_kind_from_string(const std::string& name) {
  if (name == "temporal_direction") return TaskKind::temporal_direction;
  if (name == "spatial_pattern") return TaskKind::spatial_pattern;
  if (name == "mixed") return TaskKind::mixed;
  throw ConfigError("unknown task kind '" + name + "'");
}

namespace {

using Color = std::array<float, 3>;

constexpr float kFlicker = 0.15f;

double luminance(const Color& c) { return 0.299 * c[0] + 0.587 * c[1] + 0.114 * c[2]; }

Color random_color(Rng& rng) {
  return {static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform()), static_cast<float>(rng.uniform())};
}

/// Background and foreground with at least 0.3 luminance contrast.
std::pair<Color, Color> contrasting_colors(Rng& rng) {
  const Color bg = random_color(rng);
  Color fg = random_color(rng);
  while (std::abs(luminance(fg) - luminance(bg)) < 0.3) fg = random_color(rng);
  return {bg, fg};
}

std::size_t bar_width(const SynthGeometry& g) { return std::max<std::size_t>(2, g.size / 5); }
std::size_t block_size(const SynthGeometry& g) { return std::max<std::size_t>(2, g.size * 3 / 8); }

void paint(std::vector<float>& data, const SynthGeometry& g, std::size_t t, std::size_t y0, std::size_t y1,
           std::size_t x0, std::size_t x1, const Color& c) {
  for (std::size_t y = y0; y < y1; ++y)
    for (std::size_t x = x0; x < x1; ++x)
      for (std::size_t ch = 0; ch < 3; ++ch) data[((t * g.size + y) * g.size + x) * 3 + ch] = c[ch];
}

}  // namespace

VideoTensor make_direction_video(Rng& rng, bool leftward, SynthGeometry geom) {
  const std::size_t w = bar_width(geom);
  if (geom.frames < 2 || geom.size < w + geom.frames) {
    throw ConfigError("direction videos need at least 2 frames and room for the bar to travel");
  }
  const auto [bg, fg] = contrasting_colors(rng);
  const std::size_t x0 = rng.below(geom.size - w - (geom.frames - 1) + 1);
  std::vector<float> data(geom.frames * geom.size * geom.size * 3);
  for (std::size_t t = 0; t < geom.frames; ++t) {
    paint(data, geom, t, 0, geom.size, 0, geom.size, bg);
    const std::size_t step = leftward ? geom.frames - 1 - t : t;
    paint(data, geom, t, 0, geom.size, x0 + step, x0 + step + w, fg);
  }
  return VideoTensor(Tensor({geom.frames, geom.size, geom.size, 3}, std::move(data)));
}

VideoTensor make_pattern_video(Rng& rng, bool bottom, SynthGeometry geom) {
  const std::size_t b = block_size(geom), half = geom.size / 2;
  if (geom.size < 4 || b > half) throw ConfigError("pattern videos need frames of at least 4 pixels");
  // A light block on a darker ground, both kept clear of the flicker range.
  auto [bg, fg] = contrasting_colors(rng);
  if (luminance(fg) < luminance(bg)) std::swap(bg, fg);
  for (Color* c : {&bg, &fg})
    for (float& v : *c) v = kFlicker + (1.0f - 2.0f * kFlicker) * v;
  const std::size_t y0 = (bottom ? half : 0) + rng.below(half - b + 1);
  const std::size_t x0 = rng.below(geom.size - b + 1);
  // Grey flicker of +-kFlicker per frame, balanced so it cancels over the clip.
  std::vector<float> flicker(geom.frames, 0.0f);
  for (std::size_t t = 0; t + 1 < geom.frames; t += 2) {
    flicker[t] = kFlicker;
    flicker[t + 1] = -kFlicker;
  }
  for (std::size_t i = geom.frames; i > 1; --i) std::swap(flicker[i - 1], flicker[rng.below(i)]);
  std::vector<float> data(geom.frames * geom.size * geom.size * 3);
  for (std::size_t t = 0; t < geom.frames; ++t) {
    Color bt = bg, ft = fg;
    for (float& v : bt) v += flicker[t];
    for (float& v : ft) v += flicker[t];
    paint(data, geom, t, 0, geom.size, 0, geom.size, bt);
    paint(data, geom, t, y0, y0 + b, x0, x0 + b, ft);
  }
  return VideoTensor(Tensor({geom.frames, geom.size, geom.size, 3}, std::move(data)));
}

int reversed_label(int label) { return label == 0 ? 1 : 0; }

SynthTask make_synth_task(TaskKind kind, std::size_t n, std::uint64_t seed, SynthGeometry geom) {
  SynthTask task;
  task.kind = kind;
  task.classes = kind == TaskKind::mixed ? 4 : 2;
  Rng rng = Rng::derive(seed, "synth:" + to_string(kind));
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = static_cast<int>(i % task.classes);
  for (std::size_t i = n; i > 1; --i) std::swap(labels[i - 1], labels[rng.below(i)]);
  char id[64];
  for (std::size_t i = 0; i < n; ++i) {
    const int label = labels[i];
    SynthVideo v;
    std::snprintf(id, sizeof id, "%s_%05zu", to_string(kind).c_str(), i);
    v.id = id;
    v.label = label;
    const bool temporal = kind == TaskKind::temporal_direction || (kind == TaskKind::mixed && label < 2);
    v.video = temporal ? make_direction_video(rng, label % 2 == 1, geom) : make_pattern_video(rng, label % 2 == 1, geom);
    task.items.push_back(std::move(v));
  }
  return task;
}

}  // namespace merv
