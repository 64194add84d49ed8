#include "cfkin/cluster.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <random>
#include <thread>

#include "cfkin/error.hpp"
#include "cfkin/temporal.hpp"

namespace cfkin::cluster {

namespace {
constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr std::size_t kCapSampleSize = 500;
constexpr double kCapSilhouette = 0.3;
constexpr int kCapK = 3;

int cluster_count(std::span<const int> labels) {
  int k = 0;
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("negative cluster label");
    k = std::max(k, l + 1);
  }
  return k;
}

Matrix cluster_means(const Matrix& x, std::span<const int> labels, int k, std::vector<std::size_t>& sizes) {
  Matrix c = Matrix::Zero(k, x.cols());
  sizes.assign(static_cast<std::size_t>(k), 0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto l = labels[static_cast<std::size_t>(i)];
    c.row(l) += x.row(i);
    ++sizes[static_cast<std::size_t>(l)];
  }
  for (int j = 0; j < k; ++j)
    if (sizes[static_cast<std::size_t>(j)] > 0) c.row(j) /= static_cast<double>(sizes[static_cast<std::size_t>(j)]);
  return c;
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }
}  // namespace

// ---------------------------------------------------------------------------
// matrix construction and scaling

EventFeatureMatrix build_event_matrix(std::span<const events::DecelerationEvent> evts, bool include_leader_flag) {
  EventFeatureMatrix m;
  for (auto c : kEventColumns)
    if (include_leader_flag || c != "leader_braking_flag") m.columns.emplace_back(c);
  m.values.resize(static_cast<Eigen::Index>(evts.size()), static_cast<Eigen::Index>(m.columns.size()));
  for (std::size_t i = 0; i < evts.size(); ++i) {
    const auto& e = evts[i];
    if (!e.onset_features.ttc || !e.onset_features.ttc_inv)
      throw DataError("event " + e.id() + " has undefined onset TTC; impute before clustering");
    Eigen::Index col = 0;
    for (const auto& name : m.columns) {
      double v = 0.0;
      if (name == "mean_decel") v = e.mean_decel;
      else if (name == "max_decel") v = e.max_decel;
      else if (name == "ego_speed_onset") v = e.ego_speed_onset;
      else if (name == "leader_speed_onset") v = e.leader_speed_onset;
      else v = temporal::feature_value(e.onset_features, name);
      m.values(static_cast<Eigen::Index>(i), col++) = v;
    }
  }
  return m;
}

Standardized standardize(const EventFeatureMatrix& matrix) {
  const auto n = matrix.values.rows();
  if (n < 2) throw DataError("standardize needs at least two rows");
  Standardized s;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index c = 0; c < matrix.values.cols(); ++c) {
    const auto col = matrix.values.col(c);
    const double mean = col.sum() / static_cast<double>(n);
    const double sd = std::sqrt((col.array() - mean).square().sum() / static_cast<double>(n));
    const double scale = col.cwiseAbs().maxCoeff();
    if (!(sd > 1e-12 * std::max(1.0, scale))) {
      s.dropped.push_back(matrix.columns[static_cast<std::size_t>(c)]);
      s.dropped_values.push_back(mean);
      s.warnings.push_back("column '" + matrix.columns[static_cast<std::size_t>(c)] +
                           "' is constant and was dropped from standardization");
      continue;
    }
    keep.push_back(c);
    s.columns.push_back(matrix.columns[static_cast<std::size_t>(c)]);
    s.mean.push_back(mean);
    s.sd.push_back(sd);
  }
  s.values.resize(n, static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j)
    s.values.col(static_cast<Eigen::Index>(j)) = (matrix.values.col(keep[j]).array() - s.mean[j]) / s.sd[j];
  return s;
}

// ---------------------------------------------------------------------------
// k-means

std::vector<int> canonicalize_labels(std::span<const int> labels) {
  std::map<int, int> remap;
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    auto [it, inserted] = remap.emplace(labels[i], static_cast<int>(remap.size()));
    out[i] = it->second;
  }
  return out;
}

KMeansResult kmeans_single(const Matrix& x, int k, std::uint64_t stream_seed, const KMeansOptions& options,
                           std::vector<double>* trace) {
  const auto n = static_cast<std::size_t>(x.rows());
  if (k < 1 || static_cast<std::size_t>(k) > n)
    throw ConfigError("k-means: K=" + std::to_string(k) + " exceeds the " + std::to_string(n) + " available rows");

  std::mt19937_64 rng(stream_seed);
  const auto ku = static_cast<std::size_t>(k);

  // k-means++ seeding (D^2 sampling).
  std::vector<std::size_t> chosen;
  chosen.push_back(std::min(n - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(n))));
  std::vector<double> d2(n);
  for (std::size_t i = 0; i < n; ++i) d2[i] = (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(chosen[0]))).squaredNorm();
  while (chosen.size() < ku) {
    double total = 0.0;
    for (double v : d2) total += v;
    std::size_t pick = n;
    if (total > 0.0) {
      const double target = uniform01(rng) * total;
      double cum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        if (d2[i] <= 0.0) continue;
        cum += d2[i];
        pick = i;
        if (cum > target) break;
      }
    } else {
      std::vector<std::size_t> unused;
      for (std::size_t i = 0; i < n; ++i)
        if (std::find(chosen.begin(), chosen.end(), i) == chosen.end()) unused.push_back(i);
      pick = unused[std::min(unused.size() - 1, static_cast<std::size_t>(uniform01(rng) * static_cast<double>(unused.size())))];
    }
    chosen.push_back(pick);
    for (std::size_t i = 0; i < n; ++i)
      d2[i] = std::min(d2[i], (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(pick))).squaredNorm());
  }

  Matrix centroids(k, x.cols());
  for (int j = 0; j < k; ++j) centroids.row(j) = x.row(static_cast<Eigen::Index>(chosen[static_cast<std::size_t>(j)]));

  std::vector<int> labels(n, -1);
  std::vector<double> dist(n, 0.0);
  std::vector<std::size_t> sizes;

  const auto assign = [&] {
    bool changed = false;
    double inertia = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      int best = 0;
      double best_d = kInf;
      for (int j = 0; j < k; ++j) {
        const double d = (x.row(static_cast<Eigen::Index>(i)) - centroids.row(j)).squaredNorm();
        if (d < best_d) {
          best_d = d;
          best = j;
        }
      }
      changed = changed || labels[i] != best;
      labels[i] = best;
      dist[i] = best_d;
      inertia += best_d;
    }
    if (trace != nullptr) trace->push_back(inertia);

    // Refill empty clusters with the point farthest from its centroid.
    std::vector<std::size_t> counts(ku, 0);
    for (int l : labels) ++counts[static_cast<std::size_t>(l)];
    for (std::size_t j = 0; j < ku; ++j) {
      if (counts[j] > 0) continue;
      std::size_t far = n;
      for (std::size_t i = 0; i < n; ++i) {
        if (counts[static_cast<std::size_t>(labels[i])] <= 1) continue;
        if (far == n || dist[i] > dist[far]) far = i;
      }
      --counts[static_cast<std::size_t>(labels[far])];
      labels[far] = static_cast<int>(j);
      dist[far] = 0.0;
      counts[j] = 1;
      centroids.row(static_cast<Eigen::Index>(j)) = x.row(static_cast<Eigen::Index>(far));
      changed = true;
    }
    return changed;
  };

  KMeansResult result;
  for (int it = 1; it <= options.max_iterations; ++it) {
    const bool changed = assign();
    Matrix updated = cluster_means(x, labels, k, sizes);
    const double shift = (updated - centroids).rowwise().norm().maxCoeff();
    centroids = std::move(updated);
    result.iterations = it;
    if (!changed || shift < options.tolerance) break;
  }
  assign();
  centroids = cluster_means(x, labels, k, sizes);

  double inertia = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    inertia += (x.row(static_cast<Eigen::Index>(i)) - centroids.row(labels[i])).squaredNorm();
  if (trace != nullptr) trace->push_back(inertia);

  result.labels = canonicalize_labels(labels);
  result.centroids.resize(k, x.cols());
  for (std::size_t i = 0; i < n; ++i) result.centroids.row(result.labels[i]) = centroids.row(labels[i]);
  result.inertia = inertia;
  return result;
}

KMeansResult kmeans(const Matrix& x, int k, std::uint64_t seed, const KMeansOptions& options) {
  if (options.restarts < 1) throw ConfigError("k-means needs at least one restart");
  if (k < 1 || k > x.rows())
    throw ConfigError("k-means: K=" + std::to_string(k) + " exceeds the " + std::to_string(x.rows()) + " available rows");
  const auto restarts = static_cast<std::size_t>(options.restarts);
  std::vector<KMeansResult> runs(restarts);
  const auto workers = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(options.workers, 1)), 1, restarts);

  const auto work = [&](std::size_t w) {
    for (std::size_t r = w; r < restarts; r += workers) runs[r] = kmeans_single(x, k, seed + r, options);
  };
  if (workers == 1) {
    work(0);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
  }

  std::size_t best = 0;
  for (std::size_t r = 1; r < restarts; ++r)
    if (runs[r].inertia < runs[best].inertia) best = r;
  KMeansResult out = std::move(runs[best]);
  out.best_restart = static_cast<int>(best);
  out.restart_inertia.reserve(restarts);
  for (const auto& run : runs) out.restart_inertia.push_back(run.inertia);
  return out;
}

// ---------------------------------------------------------------------------
// validity indices

double silhouette(const Matrix& x, std::span<const int> labels) {
  const auto n = static_cast<std::size_t>(x.rows());
  const int k = cluster_count(labels);
  std::vector<std::size_t> sizes(static_cast<std::size_t>(k), 0);
  for (int l : labels) ++sizes[static_cast<std::size_t>(l)];
  const auto occupied = std::count_if(sizes.begin(), sizes.end(), [](auto s) { return s > 0; });
  if (occupied < 2) throw DataError("silhouette is undefined for fewer than two clusters");

  std::vector<double> sums(static_cast<std::size_t>(k));
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    std::fill(sums.begin(), sums.end(), 0.0);
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      sums[static_cast<std::size_t>(labels[j])] +=
          (x.row(static_cast<Eigen::Index>(i)) - x.row(static_cast<Eigen::Index>(j))).norm();
    }
    const auto own = static_cast<std::size_t>(labels[i]);
    if (sizes[own] <= 1) continue;  // singleton scores 0
    const double a = sums[own] / static_cast<double>(sizes[own] - 1);
    double b = kInf;
    for (std::size_t c = 0; c < sums.size(); ++c)
      if (c != own && sizes[c] > 0) b = std::min(b, sums[c] / static_cast<double>(sizes[c]));
    const double denom = std::max(a, b);
    if (denom > 0.0) total += (b - a) / denom;
  }
  return total / static_cast<double>(n);
}

double davies_bouldin(const Matrix& x, std::span<const int> labels) {
  const int k = cluster_count(labels);
  if (k < 2) throw DataError("Davies-Bouldin index needs at least two clusters");
  std::vector<std::size_t> sizes;
  const Matrix c = cluster_means(x, labels, k, sizes);
  std::vector<double> scatter(static_cast<std::size_t>(k), 0.0);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const auto l = labels[static_cast<std::size_t>(i)];
    scatter[static_cast<std::size_t>(l)] += (x.row(i) - c.row(l)).norm();
  }
  for (int j = 0; j < k; ++j)
    if (sizes[static_cast<std::size_t>(j)] > 0) scatter[static_cast<std::size_t>(j)] /= static_cast<double>(sizes[static_cast<std::size_t>(j)]);

  double total = 0.0;
  for (int a = 0; a < k; ++a) {
    double worst = 0.0;
    for (int b = 0; b < k; ++b) {
      if (a == b) continue;
      const double sep = (c.row(a) - c.row(b)).norm();
      const double num = scatter[static_cast<std::size_t>(a)] + scatter[static_cast<std::size_t>(b)];
      const double ratio = sep > 0.0 ? num / sep : kInf;
      worst = std::max(worst, ratio);
    }
    total += worst;
  }
  return total / static_cast<double>(k);
}

double calinski_harabasz(const Matrix& x, std::span<const int> labels) {
  const int k = cluster_count(labels);
  const auto n = static_cast<double>(x.rows());
  if (k < 2) throw DataError("Calinski-Harabasz index needs at least two clusters");
  if (!(n > k)) throw DataError("Calinski-Harabasz index needs more rows than clusters");
  std::vector<std::size_t> sizes;
  const Matrix c = cluster_means(x, labels, k, sizes);
  const Eigen::RowVectorXd grand = x.colwise().mean();
  double between = 0.0;
  for (int j = 0; j < k; ++j)
    between += static_cast<double>(sizes[static_cast<std::size_t>(j)]) * (c.row(j) - grand).squaredNorm();
  double within = 0.0;
  for (Eigen::Index i = 0; i < x.rows(); ++i) within += (x.row(i) - c.row(labels[static_cast<std::size_t>(i)])).squaredNorm();
  if (within == 0.0) return between > 0.0 ? kInf : kNaN;
  return (between / (k - 1)) / (within / (n - k));
}

// ---------------------------------------------------------------------------
// K selection

std::string_view rationale_name(SelectionRationale r) {
  return r == SelectionRationale::capped_at_3 ? "capped_at_3" : "silhouette_max";
}

KSelection select_k(std::span<const KScore> scores, std::size_t n_events) {
  std::vector<KScore> sorted(scores.begin(), scores.end());
  std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.k < b.k; });

  const auto argmax = [&](int k_limit) -> const KScore* {
    const KScore* best = nullptr;
    for (const auto& s : sorted) {
      if (s.k > k_limit || std::isnan(s.silhouette)) continue;
      if (best == nullptr || s.silhouette > best->silhouette) best = &s;
    }
    return best;
  };

  const KScore* base = argmax(std::numeric_limits<int>::max());
  if (base == nullptr) throw DataError("no K has a defined silhouette score");
  if (n_events < kCapSampleSize && base->silhouette < kCapSilhouette && base->k > kCapK) {
    if (const KScore* capped = argmax(kCapK)) return {capped->k, SelectionRationale::capped_at_3};
  }
  return {base->k, SelectionRationale::silhouette_max};
}

const KOutcome& ClusteringOutcome::selected() const {
  for (const auto& o : per_k)
    if (o.k == selected_k) return o;
  throw std::logic_error("selected K missing from outcome");
}

ClusteringOutcome cluster_events(const Matrix& standardized, int k_min, int k_max, std::uint64_t seed,
                                 const KMeansOptions& options) {
  if (k_min < 2 || k_max < k_min) throw ConfigError("K range must satisfy 2 <= k_min <= k_max");
  ClusteringOutcome out;
  const auto rows = standardized.rows();
  std::vector<KScore> scores;
  for (int k = k_min; k <= k_max; ++k) {
    if (k >= rows) {
      out.warnings.push_back("K=" + std::to_string(k) + " skipped: needs more than " + std::to_string(k) + " events");
      continue;
    }
    auto km = kmeans(standardized, k, seed, options);
    KOutcome o;
    o.k = k;
    o.labels = std::move(km.labels);
    o.centroids = std::move(km.centroids);
    o.inertia = km.inertia;
    o.silhouette = silhouette(standardized, o.labels);
    o.davies_bouldin = davies_bouldin(standardized, o.labels);
    o.calinski_harabasz = calinski_harabasz(standardized, o.labels);
    if (std::isinf(o.davies_bouldin)) o.warnings.push_back("Davies-Bouldin index infinite: coincident centroids");
    if (std::isinf(o.calinski_harabasz)) o.warnings.push_back("Calinski-Harabasz index infinite: zero within-cluster dispersion");
    if (std::isnan(o.calinski_harabasz)) o.warnings.push_back("Calinski-Harabasz index undefined: all points coincide");
    scores.push_back({k, o.silhouette});
    out.per_k.push_back(std::move(o));
  }
  if (out.per_k.empty()) throw DataError("too few events to evaluate any K");
  const auto sel = select_k(scores, static_cast<std::size_t>(rows));
  out.selected_k = sel.k;
  out.rationale = sel.rationale;
  return out;
}

}  // namespace cfkin::cluster
