#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "merv/encoders.hpp"

namespace merv {

struct EncoderLatency {
  std::string name;
  double encode_ms = 0;
  double project_ms = 0;
};

/// Per-stage latencies of one step. `dispatch_ms` is the overhead each
/// encoder beyond the first adds when encoders run concurrently.
struct LatencyProfile {
  std::vector<EncoderLatency> encoders;
  double fusion_ms = 0;
  double llm_ms = 0;
  double dispatch_ms = 0;

  void validate() const;
  /// Subset in the given name order; throws ConfigError on unknown names.
  LatencyProfile subset(const std::vector<std::string>& names) const;
};

/// Builds a profile from encoder latency coefficients.
LatencyProfile latency_profile_from(const std::vector<EncoderProfile>& profiles, double project_ms,
                                    double fusion_ms, double llm_ms, double dispatch_ms);

/// Rows "stage,name,latency_ms" with stage one of encoder, projector,
/// fusion, llm, dispatch. A projector row names its encoder, or "*" for
/// all of them. A header row and blank lines are skipped.
LatencyProfile read_latency_csv(std::istream& is);

enum class SchedulePolicy { serial, parallel };

std::string to_string(SchedulePolicy p);
SchedulePolicy schedule_policy_from_string(const std::string& name);

struct TaskSpan {
  std::string name;
  int lane = -1;  // -1 for the downstream stages
  double start = 0;
  double end = 0;
};

struct ScheduleTrace {
  std::vector<TaskSpan> tasks;  // in completion order
  double encoder_phase = 0;     // end of the gather step
  double makespan = 0;

  const TaskSpan& task(const std::string& name) const;
  void write_json(std::ostream& os) const;
  /// One bar per task scaled to `width` columns.
  void write_gantt(std::ostream& os, std::size_t width = 60) const;
};

/// Event-driven simulation of one step.
///
/// Each encoder occupies a lane for its encode task followed by its
/// project task; encoders are dispatched in profile order onto the
/// earliest free lane. Once every projection is done a gather step of
/// (k - 1) * dispatch_ms runs, k being the number of lanes used, followed
/// by fuse and llm. The serial policy is a single lane with no dispatch
/// overhead.
ScheduleTrace simulate_step(const LatencyProfile& profile, SchedulePolicy policy, std::size_t lanes);

inline const std::vector<std::string>& encoder_sweep_order() {
  static const std::vector<std::string> order{"dinov2", "languagebind", "siglip", "vivit"};
  return order;
}

struct SweepRow {
  std::vector<std::string> encoders;
  double makespan = 0;
  /// Slowest single-encoder phase + N * dispatch + downstream.
  double bound = 0;
};

/// Makespans of the growing prefixes of `order`.
std::vector<SweepRow> sweep_encoders(const LatencyProfile& profile, const std::vector<std::string>& order,
                                     SchedulePolicy policy, std::size_t lanes);

}  // namespace merv
