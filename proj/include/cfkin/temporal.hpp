#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfkin/events.hpp"

namespace cfkin::temporal {

/// Features compared across lags; the binary leader-braking flag is reported
/// only as an activation rate.
inline constexpr std::array<std::string_view, 5> kContinuousFeatures = {"v_rel", "ttc", "gap_closing_rate",
                                                                        "a_req", "ttc_inv"};

double feature_value(const kinematics::KinematicFeatures& f, std::string_view name);

/// Features at onset + lag for each lag (seconds, <= 0); absent when the frame
/// falls before the segment start.
std::vector<events::LaggedFeatures> extract_lagged(const events::DecelerationEvent& event,
                                                   const kinematics::AnnotatedSegment& segment,
                                                   std::span<const double> lags_s,
                                                   double frame_interval = ingest::kFrameInterval);

struct TTestResult {
  std::size_t n = 0;
  double mean_diff = 0.0;
  double sd_diff = 0.0;  // sample sd
  double t = 0.0;        // NaN when degenerate
  double df = 0.0;
  double p = 1.0;        // two-sided
  bool degenerate = false;
};

/// Paired t-test on d_i = onset_i - lag_i. Requires at least two pairs.
TTestResult paired_t_test(std::span<const double> lag_values, std::span<const double> onset_values);

struct CohensD {
  double d = 0.0;  // NaN when degenerate
  bool degenerate = false;
};

CohensD cohens_d_paired(std::span<const double> diffs);

enum class Magnitude { negligible, small, medium_to_large };
std::string_view magnitude_name(Magnitude m);
Magnitude classify_magnitude(double d);

struct LagCell {
  std::string feature;
  double lag_s = 0.0;
  bool available = false;  // false when fewer than two pairs
  std::size_t n_pairs = 0;
  double mean_at_lag = 0.0;
  double mean_at_onset = 0.0;
  TTestResult test;
  CohensD effect;
  bool significant = false;
  Magnitude magnitude = Magnitude::negligible;
};

struct FeaturePrecedence {
  std::string feature;
  bool precedes = false;  // otherwise "co-occurs"
};

struct FlagActivation {
  double lag_s = 0.0;
  std::size_t n = 0;
  double rate = 0.0;
};

struct LagTable {
  double alpha = 0.05;
  std::vector<LagCell> cells;  // feature-major, lags in the given order
  std::vector<FeaturePrecedence> precedence;
  std::vector<FlagActivation> flag_activation;  // includes lag 0
};

/// Per-feature per-lag comparison against onset. A feature "precedes"
/// deceleration when it changes significantly with |D| > 0.5 at a lag of -3 s
/// or earlier.
LagTable precedence_report(std::span<const events::DecelerationEvent> events, std::span<const double> lags_s,
                           double alpha = 0.05);

}  // namespace cfkin::temporal
