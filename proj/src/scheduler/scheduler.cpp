#include "merv/scheduler.hpp"

#include <algorithm>
#include <cmath>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <queue>
#include <sstream>

#include "json.hpp"
#include "merv/errors.hpp"

namespace merv {

namespace {

void check_latency(double v, const std::string& what) {
  if (!std::isfinite(v) || v < 0) throw ConfigError(what + " latency must be a nonnegative number");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void LatencyProfile::validate() const {
  for (const auto& e : encoders) {
    check_latency(e.encode_ms, "encoder '" + e.name + "'");
    check_latency(e.project_ms, "projector '" + e.name + "'");
  }
  check_latency(fusion_ms, "fusion");
  check_latency(llm_ms, "llm");
  check_latency(dispatch_ms, "dispatch");
}

LatencyProfile LatencyProfile::subset(const std::vector<std::string>& names) const {
  LatencyProfile out = *this;
  out.encoders.clear();
  for (const auto& n : names) {
    auto it = std::find_if(encoders.begin(), encoders.end(), [&](const EncoderLatency& e) { return e.name == n; });
    if (it == encoders.end()) throw ConfigError("latency profile has no encoder '" + n + "'");
    out.encoders.push_back(*it);
  }
  return out;
}

LatencyProfile latency_profile_from(const std::vector<EncoderProfile>& profiles, double project_ms,
                                    double fusion_ms, double llm_ms, double dispatch_ms) {
  LatencyProfile p;
  for (const auto& e : profiles) p.encoders.push_back({e.name, e.latency_ms, project_ms});
  p.fusion_ms = fusion_ms;
  p.llm_ms = llm_ms;
  p.dispatch_ms = dispatch_ms;
  p.validate();
  return p;
}

LatencyProfile read_latency_csv(std::istream& is) {
  LatencyProfile p;
  std::optional<double> default_project;
  std::map<std::string, double> project;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> cols;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cols.push_back(trim(c));
    if (cols.size() != 3) throw FormatError("latency csv line " + std::to_string(lineno) + ": expected 3 columns");
    if (lineno == 1 && cols[0] == "stage") continue;
    double ms = 0;
    try {
      std::size_t used = 0;
      ms = std::stod(cols[2], &used);
      if (used != cols[2].size()) throw std::invalid_argument("trailing");
    } catch (const std::exception&) {
      throw FormatError("latency csv line " + std::to_string(lineno) + ": bad latency '" + cols[2] + "'");
    }
    const std::string& stage = cols[0];
    if (stage == "encoder") {
      for (const auto& e : p.encoders)
        if (e.name == cols[1]) throw FormatError("latency csv: duplicate encoder '" + cols[1] + "'");
      p.encoders.push_back({cols[1], ms, 0});
    } else if (stage == "projector") {
      if (cols[1] == "*")
        default_project = ms;
      else
        project[cols[1]] = ms;
    } else if (stage == "fusion") {
      p.fusion_ms = ms;
    } else if (stage == "llm") {
      p.llm_ms = ms;
    } else if (stage == "dispatch") {
      p.dispatch_ms = ms;
    } else {
      throw FormatError("latency csv line " + std::to_string(lineno) + ": unknown stage '" + stage + "'");
    }
  }
  for (auto& e : p.encoders) {
    if (auto it = project.find(e.name); it != project.end()) {
      e.project_ms = it->second;
      project.erase(it);
    } else if (default_project) {
      e.project_ms = *default_project;
    }
  }
  if (!project.empty()) throw FormatError("latency csv: projector row for unknown encoder '" + project.begin()->first + "'");
  p.validate();
  return p;
}

std::string to_string(SchedulePolicy p) { return p == SchedulePolicy::serial ? "serial" : "parallel"; }

SchedulePolicy schedule_policy_from_string(const std::string& name) {
  if (name == "serial") return SchedulePolicy::serial;
  if (name == "parallel") return SchedulePolicy::parallel;
  throw ConfigError("unknown schedule policy '" + name + "'");
}

const TaskSpan& ScheduleTrace::task(const std::string& name) const {
  for (const auto& t : tasks)
    if (t.name == name) return t;
  throw ConfigError("trace has no task '" + name + "'");
}

void ScheduleTrace::write_json(std::ostream& os) const {
  nlohmann::ordered_json j;
  j["tasks"] = nlohmann::ordered_json::array();
  for (const auto& t : tasks) {
    j["tasks"].push_back({{"name", t.name}, {"lane", t.lane}, {"start", t.start}, {"end", t.end}});
  }
  j["encoder_phase"] = encoder_phase;
  j["makespan"] = makespan;
  os << j.dump(2) << '\n';
}

void ScheduleTrace::write_gantt(std::ostream& os, std::size_t width) const {
  std::size_t name_w = 4;
  for (const auto& t : tasks) name_w = std::max(name_w, t.name.size());
  const double scale = makespan > 0 ? static_cast<double>(width) / makespan : 0.0;
  char buf[64];
  for (const auto& t : tasks) {
    const auto b = static_cast<std::size_t>(std::floor(t.start * scale));
    auto e = static_cast<std::size_t>(std::ceil(t.end * scale));
    e = std::min(std::max(e, b + (t.end > t.start ? 1 : 0)), width);
    std::string bar(width, '.');
    for (std::size_t i = b; i < e; ++i) bar[i] = '#';
    os << t.name << std::string(name_w - t.name.size() + 1, ' ') << '|' << bar << '|';
    std::snprintf(buf, sizeof buf, " %9.3f %9.3f\n", t.start, t.end);
    os << buf;
  }
  std::snprintf(buf, sizeof buf, "makespan %.3f ms\n", makespan);
  os << buf;
}

ScheduleTrace simulate_step(const LatencyProfile& profile, SchedulePolicy policy, std::size_t lanes) {
  if (lanes < 1) throw ConfigError("lanes must be >= 1");
  profile.validate();
  const bool serial = policy == SchedulePolicy::serial;
  const std::size_t n = profile.encoders.size();
  const std::size_t used = serial ? std::min<std::size_t>(n, 1) : std::min(lanes, n);

  struct Running {
    TaskSpan span;
    std::size_t encoder;  // n for downstream stages
  };
  using Event = std::pair<double, std::string>;
  std::priority_queue<Event, std::vector<Event>, std::greater<>> queue;
  std::map<std::string, Running> running;
  ScheduleTrace trace;

  auto start = [&](std::string name, int lane, double at, double duration, std::size_t encoder) {
    queue.emplace(at + duration, name);
    running.emplace(name, Running{{name, lane, at, at + duration}, encoder});
  };
  std::size_t next_encoder = 0, projected = 0;
  auto dispatch = [&](int lane, double at) {
    if (next_encoder < n) {
      const auto& e = profile.encoders[next_encoder];
      start("encode:" + e.name, lane, at, e.encode_ms, next_encoder);
      ++next_encoder;
    }
  };
  auto gather = [&](double at) {
    const double overhead = serial || used == 0 ? 0.0 : static_cast<double>(used - 1) * profile.dispatch_ms;
    start("gather", -1, at, overhead, n);
  };

  if (n == 0) gather(0.0);
  for (std::size_t l = 0; l < used; ++l) dispatch(static_cast<int>(l), 0.0);

  while (!queue.empty()) {
    const auto [time, name] = queue.top();
    queue.pop();
    auto node = running.extract(name);
    const Running done = node.mapped();
    trace.tasks.push_back(done.span);
    if (name.rfind("encode:", 0) == 0) {
      const auto& e = profile.encoders[done.encoder];
      start("project:" + e.name, done.span.lane, time, e.project_ms, done.encoder);
    } else if (name.rfind("project:", 0) == 0) {
      dispatch(done.span.lane, time);
      if (++projected == n) gather(time);
    } else if (name == "gather") {
      trace.encoder_phase = time;
      start("fuse", -1, time, profile.fusion_ms, n);
    } else if (name == "fuse") {
      start("llm", -1, time, profile.llm_ms, n);
    }
  }
  for (const auto& t : trace.tasks) trace.makespan = std::max(trace.makespan, t.end);
  return trace;
}

std::vector<SweepRow> sweep_encoders(const LatencyProfile& profile, const std::vector<std::string>& order,
                                     SchedulePolicy policy, std::size_t lanes) {
  std::vector<SweepRow> rows;
  std::vector<std::string> prefix;
  const double downstream = profile.fusion_ms + profile.llm_ms;
  for (const auto& name : order) {
    prefix.push_back(name);
    const LatencyProfile sub = profile.subset(prefix);
    double slowest = 0;
    for (const auto& e : sub.encoders) slowest = std::max(slowest, e.encode_ms + e.project_ms);
    SweepRow row;
    row.encoders = prefix;
    row.makespan = simulate_step(sub, policy, lanes).makespan;
    row.bound = slowest + static_cast<double>(prefix.size()) * profile.dispatch_ms + downstream;
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace merv
