#include "cfkin/events.hpp"

#include <algorithm>
#include <cmath>

#include "cfkin/error.hpp"

namespace cfkin::events {

namespace {
constexpr double kLeaderBrakingAccel = -0.5;
constexpr double kUrgentTtc = 6.0;
constexpr double kCloseSpacing = 20.0;
constexpr double kFreeFlowSpacing = 50.0;
constexpr double kContextWindow = 1.0;  // s
}  // namespace

bool same_value(double a, double b) { return std::abs(a - b) <= 1e-9 * std::max(1.0, std::abs(b)); }

std::string_view severity_name(Severity s) {
  switch (s) {
    case Severity::mild: return "mild";
    case Severity::moderate: return "moderate";
    case Severity::hard: return "hard";
  }
  return "mild";
}

std::string_view context_name(Context c) {
  switch (c) {
    case Context::leader_induced: return "leader_induced";
    case Context::close_following: return "close_following";
    case Context::free_flow: return "free_flow";
    case Context::other: return "other";
  }
  return "other";
}

Severity parse_severity(std::string_view name) {
  for (auto s : {Severity::mild, Severity::moderate, Severity::hard})
    if (severity_name(s) == name) return s;
  throw DataError("unknown severity '" + std::string(name) + "'");
}

Context parse_context(std::string_view name) {
  for (auto c : {Context::leader_induced, Context::close_following, Context::free_flow, Context::other})
    if (context_name(c) == name) return c;
  throw DataError("unknown context '" + std::string(name) + "'");
}

void validate(const EventConfig& config) {
  if (!(config.accel_threshold < 0.0)) throw ConfigError("acceleration threshold must be negative");
  if (!(config.min_duration > 0.0)) throw ConfigError("minimum duration must be positive");
  if (!(config.frame_interval > 0.0)) throw ConfigError("frame interval must be positive");
  if (config.dip_tolerance_frames < 0) throw ConfigError("dip tolerance must be non-negative");
  severity_bounds_for(config);
}

SeverityBounds severity_bounds_for(const EventConfig& config) {
  if (config.severity_bounds) {
    const auto& b = *config.severity_bounds;
    if (!(b.hard_below < b.moderate_below)) throw ConfigError("severity bounds must satisfy hard < moderate");
    return b;
  }
  if (same_value(config.accel_threshold, -0.5)) return {-1.5, -3.0};
  if (same_value(config.accel_threshold, -0.3)) return {-1.0, -2.0};
  throw ConfigError("no severity boundaries defined for threshold " + std::to_string(config.accel_threshold) +
                    "; supply them explicitly");
}

std::size_t min_frames(const EventConfig& config) {
  const double frames = config.min_duration / config.frame_interval;
  return static_cast<std::size_t>(std::max(1.0, std::ceil(frames - 1e-9)));
}

std::string DecelerationEvent::id() const {
  return site_tag + ":" + std::to_string(vehicle_id) + ":" + std::to_string(onset_frame);
}

Severity classify_severity(const DecelerationEvent& event, const EventConfig& config) {
  const auto b = severity_bounds_for(config);
  if (event.max_decel >= b.moderate_below) return Severity::mild;
  if (event.max_decel >= b.hard_below) return Severity::moderate;
  return Severity::hard;
}

Context label_context(const DecelerationEvent& event, const kinematics::AnnotatedSegment& segment,
                      double frame_interval) {
  const auto& obs = segment.segment.observations;
  const auto window = static_cast<std::size_t>(std::llround(kContextWindow / frame_interval));
  const std::size_t first = event.onset_index >= window ? event.onset_index - window : 0;
  bool leader_braking = false;
  for (std::size_t i = first; i <= event.onset_index && i < obs.size(); ++i)
    leader_braking = leader_braking || obs[i].leader_acceleration < kLeaderBrakingAccel;

  const auto& f = event.onset_features;
  const bool urgent = f.ttc.has_value() && !f.imputed_ttc && *f.ttc < kUrgentTtc;
  if (leader_braking && urgent) return Context::leader_induced;
  if (event.onset_spacing < kCloseSpacing) return Context::close_following;
  if (event.onset_spacing > kFreeFlowSpacing && !leader_braking) return Context::free_flow;
  return Context::other;
}

std::vector<DecelerationEvent> detect_events(const kinematics::AnnotatedSegment& segment,
                                             std::size_t segment_index, const EventConfig& config) {
  const auto& obs = segment.segment.observations;
  const std::size_t n = obs.size();
  const std::size_t needed = min_frames(config);
  const auto tolerance = static_cast<std::size_t>(config.dip_tolerance_frames);
  const auto qualifies = [&](std::size_t i) { return obs[i].follower.acceleration <= config.accel_threshold; };

  std::vector<DecelerationEvent> out;
  std::size_t i = 0;
  while (i < n) {
    if (!qualifies(i)) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    std::size_t end = i;
    std::size_t gap = 0;
    for (std::size_t j = i + 1; j < n; ++j) {
      if (qualifies(j)) {
        end = j;
        gap = 0;
      } else if (++gap > tolerance) {
        break;
      }
    }
    const std::size_t length = end - start + 1;
    if (length >= needed) {
      DecelerationEvent e;
      e.segment_index = segment_index;
      e.onset_index = start;
      e.onset_frame = obs[start].timestamp_index;
      e.site_tag = segment.segment.site_tag;
      e.vehicle_id = segment.segment.vehicle_id;
      e.leader_id = segment.segment.leader_id;
      e.accel_threshold = config.accel_threshold;
      e.min_duration = config.min_duration;
      e.length_frames = length;
      e.duration_s = static_cast<double>(length) * config.frame_interval;
      double sum = 0.0;
      double lowest = obs[start].follower.acceleration;
      for (std::size_t k = start; k <= end; ++k) {
        sum += obs[k].follower.acceleration;
        lowest = std::min(lowest, obs[k].follower.acceleration);
      }
      e.mean_decel = sum / static_cast<double>(length);
      e.max_decel = lowest;
      e.onset_features = segment.features[start];
      e.onset_spacing = obs[start].spacing;
      e.ego_speed_onset = obs[start].follower.velocity;
      e.leader_speed_onset = obs[start].leader_velocity;
      e.severity = classify_severity(e, config);
      e.context = label_context(e, segment, config.frame_interval);
      out.push_back(std::move(e));
    }
    i = end + 1;
  }
  return out;
}

std::vector<DecelerationEvent> detect_events(std::span<const kinematics::AnnotatedSegment> segments,
                                             const EventConfig& config) {
  validate(config);
  std::vector<DecelerationEvent> out;
  for (std::size_t s = 0; s < segments.size(); ++s) {
    auto found = detect_events(segments[s], s, config);
    std::move(found.begin(), found.end(), std::back_inserter(out));
  }
  return out;
}

const CensusCell* CensusReport::find(double threshold, double min_duration) const {
  for (const auto& c : cells)
    if (same_value(c.threshold, threshold) && same_value(c.min_duration, min_duration)) return &c;
  return nullptr;
}

CensusReport event_census(std::span<const std::pair<EventConfig, std::vector<DecelerationEvent>>> grid,
                          std::size_t valid_observations, std::size_t min_sample) {
  CensusReport report;
  report.valid_observations = valid_observations;
  report.min_sample = min_sample;
  for (const auto& [config, found] : grid) {
    CensusCell cell;
    cell.threshold = config.accel_threshold;
    cell.min_duration = config.min_duration;
    cell.count = found.size();
    cell.pct_valid = valid_observations > 0
                         ? 100.0 * static_cast<double>(found.size()) / static_cast<double>(valid_observations)
                         : 0.0;
    for (const auto& e : found) {
      switch (e.severity) {
        case Severity::mild: ++cell.mild; break;
        case Severity::moderate: ++cell.moderate; break;
        case Severity::hard: ++cell.hard; break;
      }
    }
    cell.insufficient = cell.count < min_sample;
    report.cells.push_back(cell);
  }
  return report;
}

}  // namespace cfkin::events
