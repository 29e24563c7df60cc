#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "merv/encoders.hpp"
#include "merv/rng.hpp"

namespace merv {

enum class TaskKind { temporal_direction, spatial_pattern, mixed };

std::string to_string(TaskKind k);
TaskKind task_kind_from_string(const std::string& name);

struct SynthVideo {
  std::string id;
  VideoTensor video;
  int label = 0;
};

struct SynthTask {
  TaskKind kind = TaskKind::temporal_direction;
  std::size_t classes = 2;
  std::vector<SynthVideo> items;
};

struct SynthGeometry {
  std::size_t frames = 8;
  std::size_t size = 16;  // square frames
};

/// temporal_direction: a full-height bar sliding one pixel per frame;
///   label 0 moves right, 1 moves left. Colors and start are random.
/// spatial_pattern: a static light block in the top (0) or bottom (1) half.
///   The block area is fixed so both labels share the same frame mean. Each
///   frame also carries a grey offset of +-0.15 in random order that sums to
///   zero over the clip: it moves per-frame statistics but not clip averages.
/// mixed: labels 0-1 as temporal_direction, 2-3 as spatial_pattern.
///
/// Labels cycle through the classes and the list is then shuffled, so
/// classes are exactly balanced when n is a multiple of the class count.
SynthTask make_synth_task(TaskKind kind, std::size_t n, std::uint64_t seed, SynthGeometry geom = {});

/// Bar video moving right (or left when `leftward`).
VideoTensor make_direction_video(Rng& rng, bool leftward, SynthGeometry geom = {});
VideoTensor make_pattern_video(Rng& rng, bool bottom, SynthGeometry geom = {});

/// Label of the time-reversed video for a temporal_direction label.
int reversed_label(int label);

}  // namespace merv
