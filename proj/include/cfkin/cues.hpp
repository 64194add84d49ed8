#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfkin/cluster.hpp"
#include "cfkin/events.hpp"

namespace cfkin::cues {

struct AnovaResult {
  double f = 0.0;
  double p = 1.0;
  double eta_squared = 0.0;
  double ss_between = 0.0;
  double ss_within = 0.0;
  double ss_total = 0.0;
  int df_between = 0;
  int df_within = 0;
  bool degenerate = false;  // SS_total == 0
};

/// One-way ANOVA of `values` grouped by `labels` (0..K-1).
AnovaResult anova_eta_squared(std::span<const double> values, std::span<const int> labels);

enum class EffectClass { negligible, small, medium, large };
std::string_view effect_name(EffectClass e);
EffectClass classify_effect(double eta_squared);

/// Ranked ANOVA variables, in tie-break order.
inline constexpr std::array<std::string_view, 6> kRankedCues = {"v_rel",   "ttc",     "gap_closing_rate",
                                                                "a_req",   "ttc_inv", "spacing"};

double cue_value(const events::DecelerationEvent& e, std::string_view name);

struct CueImportanceRow {
  std::string feature;
  AnovaResult anova;
  EffectClass effect = EffectClass::negligible;
  int rank = 0;
  bool reversal = false;
};

/// ANOVA per ranked cue; rows sorted by descending eta squared (degenerate rows last).
std::vector<CueImportanceRow> rank_cues(std::span<const events::DecelerationEvent> events,
                                        std::span<const int> labels);

/// Flags cues that lead the ranking under some threshold but not under the
/// first (reference) one. Cues tied in eta squared with the leader count as leading.
void mark_reversals(std::span<std::vector<CueImportanceRow>> per_threshold);

struct ClusterProfile {
  int cluster = 0;
  std::size_t size = 0;
  double share_pct = 0.0;
  std::string label = "unlabeled";
  std::vector<std::pair<std::string, double>> means;  // original units
  bool ttc_applicable = true;  // false when mean v_rel <= 0
  double leader_braking_pct = 0.0;
  std::map<std::string, std::size_t> contexts;
};

/// Cluster labelling: negative mean v_rel -> uncertain; among the rest the
/// highest mean TTC -> preventive, lowest -> reactive.
struct LabelRule {
  std::string uncertain = "uncertain";
  std::string preventive = "preventive gradual";
  std::string reactive = "reactive hard braking";
  bool enabled = true;
};

std::vector<ClusterProfile> cluster_profile(std::span<const events::DecelerationEvent> events,
                                            std::span<const int> labels, const LabelRule& rule = {});

struct PcaResult {
  cluster::Matrix scores;           // rows = events, cols = components
  Eigen::MatrixXd components;       // columns are unit loading vectors
  std::vector<double> eigenvalues;  // retained components
  std::vector<double> explained_ratio;
  std::vector<std::string> warnings;
};

/// Covariance eigendecomposition; components in descending variance with the
/// largest-magnitude loading made positive.
PcaResult pca_project(const cluster::Matrix& standardized, int n_components = 3);

inline constexpr std::array<std::string_view, 6> kRadarAxes = {"v_rel", "ttc", "a_req", "ttc_inv", "spacing",
                                                               "max_decel"};

struct RadarProfile {
  int cluster = 0;
  std::vector<std::pair<std::string, double>> values;  // z-scored cluster means
};

std::vector<RadarProfile> radar_data(std::span<const events::DecelerationEvent> events,
                                     std::span<const int> labels);

}  // namespace cfkin::cues
