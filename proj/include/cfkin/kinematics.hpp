#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cfkin/ingest.hpp"

namespace cfkin::kinematics {

inline constexpr double kLeaderBrakingThreshold = -0.5;  // m/s^2

/// The six car-following cues for one observation.
///
/// `ttc` and `ttc_inv` are undefined (nullopt) while the gap is opening or
/// steady (v_rel <= 0) until median imputation fills them.
struct KinematicFeatures {
  double v_rel = 0.0;             // m/s, ego minus leader
  std::optional<double> ttc;      // s
  double gap_closing_rate = 0.0;  // m/s, identical to v_rel
  double a_req = 0.0;             // m/s^2
  int leader_braking_flag = 0;
  std::optional<double> ttc_inv;  // 1/s
  bool imputed_ttc = false;
  bool imputed_ttc_inv = false;

  bool operator==(const KinematicFeatures&) const = default;
};

KinematicFeatures compute_features(const ingest::DyadObservation& dyad);

/// A segment together with the per-frame features of its observations.
struct AnnotatedSegment {
  ingest::TrajectorySegment segment;
  std::vector<KinematicFeatures> features;
};

std::vector<AnnotatedSegment> annotate(std::vector<ingest::TrajectorySegment> segments);

enum class MedianPolicy { exact, p2 };

struct ImputationMedians {
  double ttc = 0.0;
  double ttc_inv = 0.0;
  std::size_t ttc_defined = 0;
  std::size_t ttc_inv_defined = 0;
};

/// Streaming median estimate (Jain & Chlamtac P-square, five markers).
class P2Median {
 public:
  void add(double x);
  double value() const;
  std::size_t count() const { return n_; }

 private:
  std::size_t n_ = 0;
  double q_[5]{};
  double pos_[5]{};
  double desired_[5]{};
};

/// Median of the defined values (exact for even counts: mean of middle two).
double median(std::vector<double> values);

/// Replaces undefined TTC / TTC-inverse values with the medians of the defined
/// ones over the whole population. Throws DataError if a feature has no
/// defined value at all.
ImputationMedians impute_undefined(std::span<KinematicFeatures> features,
                                   MedianPolicy policy = MedianPolicy::exact);
ImputationMedians impute_undefined(std::vector<AnnotatedSegment>& segments,
                                   MedianPolicy policy = MedianPolicy::exact);

struct Histogram {
  std::vector<double> edges;  // size = counts.size() + 1
  std::vector<std::size_t> counts;
};

struct HistogramOptions {
  std::size_t bins = 0;  // 0 = Freedman-Diaconis
  std::size_t max_bins = 200;
};

Histogram histogram(std::span<const double> values, const HistogramOptions& options = {});

struct FeatureStats {
  std::string name;
  std::size_t count = 0;
  double mean = 0.0;
  double sd = 0.0;  // population
  double median = 0.0;
  double imputation_rate = 0.0;
  Histogram histogram;
};

struct FeatureSummary {
  std::size_t observations = 0;
  std::vector<FeatureStats> features;  // six cues, then spacing / ego speed / leader speed
  std::optional<double> closing_ttc_median;  // over observations with v_rel > 0
  ImputationMedians medians;

  const FeatureStats& at(const std::string& name) const;
};

/// Summary statistics of one column (population sd).
FeatureStats describe(std::string name, std::span<const double> values, const HistogramOptions& options = {});

FeatureSummary dataset_summary(const std::vector<AnnotatedSegment>& segments,
                               const HistogramOptions& options = {});

}  // namespace cfkin::kinematics
