#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfkin/kinematics.hpp"

namespace cfkin::events {

enum class Severity { mild, moderate, hard };
enum class Context { leader_induced, close_following, free_flow, other };

std::string_view severity_name(Severity s);
std::string_view context_name(Context c);
Severity parse_severity(std::string_view name);
Context parse_context(std::string_view name);

/// mild if max_decel >= moderate_below; moderate if hard_below <= max_decel < moderate_below;
/// hard if max_decel < hard_below.
struct SeverityBounds {
  double moderate_below = -1.5;
  double hard_below = -3.0;
};

struct EventConfig {
  double accel_threshold = -0.5;  // m/s^2
  double min_duration = 1.0;      // s
  double frame_interval = ingest::kFrameInterval;
  int dip_tolerance_frames = 0;   // frames above threshold allowed inside a run
  std::optional<SeverityBounds> severity_bounds;  // required for non-canonical thresholds
};

void validate(const EventConfig& config);

/// Boundaries for the configured threshold: explicit ones if set, else the
/// canonical pair for -0.5 / -0.3 m/s^2. Throws ConfigError otherwise.
SeverityBounds severity_bounds_for(const EventConfig& config);

/// Minimum run length in frames for the configured duration.
std::size_t min_frames(const EventConfig& config);

struct LaggedFeatures {
  double lag_s = 0.0;
  std::optional<kinematics::KinematicFeatures> features;
};

struct DecelerationEvent {
  std::size_t segment_index = 0;
  std::size_t onset_index = 0;  // position within the segment
  std::int64_t onset_frame = 0;
  std::string site_tag;
  std::int64_t vehicle_id = 0;
  std::int64_t leader_id = 0;

  double accel_threshold = 0.0;
  double min_duration = 0.0;

  std::size_t length_frames = 0;
  double duration_s = 0.0;
  double mean_decel = 0.0;
  double max_decel = 0.0;  // most negative
  Severity severity = Severity::mild;
  Context context = Context::other;

  kinematics::KinematicFeatures onset_features;
  double onset_spacing = 0.0;
  double ego_speed_onset = 0.0;
  double leader_speed_onset = 0.0;
  std::vector<LaggedFeatures> lagged;

  /// Stable identifier "<site>:<vehicle>:<onset_frame>".
  std::string id() const;
};

Severity classify_severity(const DecelerationEvent& event, const EventConfig& config);

/// Contextual label, evaluated in priority order leader_induced, close_following,
/// free_flow, other. The leader window spans [onset - 1 s, onset], truncated at
/// the segment start. Imputed TTC never counts as short.
Context label_context(const DecelerationEvent& event, const kinematics::AnnotatedSegment& segment,
                      double frame_interval = ingest::kFrameInterval);

/// Maximal runs of frames with follower acceleration at or below the threshold
/// lasting at least min_duration. Severity and context are filled in.
std::vector<DecelerationEvent> detect_events(const kinematics::AnnotatedSegment& segment,
                                             std::size_t segment_index, const EventConfig& config);

std::vector<DecelerationEvent> detect_events(std::span<const kinematics::AnnotatedSegment> segments,
                                             const EventConfig& config);

struct CensusCell {
  double threshold = 0.0;
  double min_duration = 0.0;
  std::size_t count = 0;
  double pct_valid = 0.0;
  std::size_t mild = 0;
  std::size_t moderate = 0;
  std::size_t hard = 0;
  bool insufficient = false;
};

struct CensusReport {
  std::size_t valid_observations = 0;
  std::size_t min_sample = 50;
  std::vector<CensusCell> cells;  // thresholds x durations, row-major

  const CensusCell* find(double threshold, double min_duration) const;
};

/// Tabulates per-configuration counts and severity mixes. `grid` holds, for each
/// configuration, the events it produced.
CensusReport event_census(std::span<const std::pair<EventConfig, std::vector<DecelerationEvent>>> grid,
                          std::size_t valid_observations, std::size_t min_sample = 50);

bool same_value(double a, double b);

}  // namespace cfkin::events
