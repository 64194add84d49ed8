#pragma once

#include <Eigen/Dense>

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "cfkin/events.hpp"

namespace cfkin::cluster {

using Matrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Column order of the event matrix: six onset cues, then event-level descriptors.
inline constexpr std::array<std::string_view, 10> kEventColumns = {
    "v_rel",     "ttc",       "gap_closing_rate", "a_req",           "leader_braking_flag",
    "ttc_inv",   "mean_decel", "max_decel",       "ego_speed_onset", "leader_speed_onset"};

struct EventFeatureMatrix {
  Matrix values;
  std::vector<std::string> columns;
};

/// Builds the event matrix. Throws DataError if an onset TTC value is still undefined.
EventFeatureMatrix build_event_matrix(std::span<const events::DecelerationEvent> events,
                                      bool include_leader_flag = true);

struct Standardized {
  Matrix values;
  std::vector<std::string> columns;  // surviving columns
  std::vector<double> mean;          // per surviving column
  std::vector<double> sd;            // population sd
  std::vector<std::string> dropped;  // constant columns
  std::vector<double> dropped_values;
  std::vector<std::string> warnings;
};

/// z-scores each column with the population sd; constant columns are dropped.
Standardized standardize(const EventFeatureMatrix& matrix);

struct KMeansOptions {
  int restarts = 50;
  int max_iterations = 300;
  double tolerance = 1e-4;  // max per-centroid Euclidean shift
  int workers = 1;
};

struct KMeansResult {
  std::vector<int> labels;  // canonical: clusters numbered by first member row
  Matrix centroids;         // cluster means, rows follow the canonical labels
  double inertia = 0.0;
  int best_restart = 0;
  int iterations = 0;
  std::vector<double> restart_inertia;
};

/// One k-means++ seeded Lloyd run drawing from `stream_seed`. If `trace` is
/// given, the inertia after every assignment step is appended to it.
KMeansResult kmeans_single(const Matrix& x, int k, std::uint64_t stream_seed, const KMeansOptions& options,
                           std::vector<double>* trace = nullptr);

/// Best of `options.restarts` runs; restart r uses seed + r. Ties in inertia go
/// to the lowest restart index, so the result does not depend on `workers`.
KMeansResult kmeans(const Matrix& x, int k, std::uint64_t seed, const KMeansOptions& options = {});

/// Relabels clusters in order of their first member.
std::vector<int> canonicalize_labels(std::span<const int> labels);

double silhouette(const Matrix& x, std::span<const int> labels);
/// +inf when two centroids coincide.
double davies_bouldin(const Matrix& x, std::span<const int> labels);
/// +inf when within-cluster dispersion is zero, NaN when all points coincide.
double calinski_harabasz(const Matrix& x, std::span<const int> labels);

enum class SelectionRationale { silhouette_max, capped_at_3 };
std::string_view rationale_name(SelectionRationale r);

struct KScore {
  int k = 0;
  double silhouette = 0.0;
};

struct KSelection {
  int k = 0;
  SelectionRationale rationale = SelectionRationale::silhouette_max;
};

/// Silhouette maximisation (ties to the smaller K). Below 500 events with a best
/// silhouette under 0.3 the choice is capped at K = 3.
KSelection select_k(std::span<const KScore> scores, std::size_t n_events);

struct KOutcome {
  int k = 0;
  std::vector<int> labels;
  Matrix centroids;
  double inertia = 0.0;
  double silhouette = 0.0;
  double davies_bouldin = 0.0;
  double calinski_harabasz = 0.0;
  std::vector<std::string> warnings;
};

struct ClusteringOutcome {
  std::vector<KOutcome> per_k;
  int selected_k = 0;
  SelectionRationale rationale = SelectionRationale::silhouette_max;
  std::vector<std::string> warnings;

  const KOutcome& selected() const;
};

/// Sweeps K over [k_min, k_max] (skipping K >= rows) and selects K.
ClusteringOutcome cluster_events(const Matrix& standardized, int k_min, int k_max, std::uint64_t seed,
                                 const KMeansOptions& options = {});

}  // namespace cfkin::cluster
