#include "cfkin/cues.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <set>

#include "cfkin/distributions.hpp"
#include "cfkin/error.hpp"
#include "cfkin/temporal.hpp"

namespace cfkin::cues {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kInf = std::numeric_limits<double>::infinity();

int group_count(std::span<const int> labels) {
  int k = 0;
  for (int l : labels) {
    if (l < 0) throw std::invalid_argument("negative cluster label");
    k = std::max(k, l + 1);
  }
  return k;
}
}  // namespace

AnovaResult anova_eta_squared(std::span<const double> values, std::span<const int> labels) {
  if (values.size() != labels.size()) throw std::invalid_argument("anova: values and labels differ in length");
  const int k = group_count(labels);
  const std::size_t n = values.size();
  if (k < 2) throw DataError("anova needs at least two groups");
  if (n <= static_cast<std::size_t>(k)) throw DataError("anova needs more observations than groups");

  std::vector<double> sums(static_cast<std::size_t>(k), 0.0);
  std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
  double scale = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    sums[static_cast<std::size_t>(labels[i])] += values[i];
    ++counts[static_cast<std::size_t>(labels[i])];
    scale = std::max(scale, std::abs(values[i]));
  }
  if (std::any_of(counts.begin(), counts.end(), [](auto c) { return c == 0; }))
    throw DataError("anova: every group needs at least one member");

  const double grand = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(n);
  std::vector<double> means(static_cast<std::size_t>(k));
  for (std::size_t g = 0; g < means.size(); ++g) means[g] = sums[g] / static_cast<double>(counts[g]);

  AnovaResult r;
  r.df_between = k - 1;
  r.df_within = static_cast<int>(n) - k;
  for (std::size_t g = 0; g < means.size(); ++g)
    r.ss_between += static_cast<double>(counts[g]) * (means[g] - grand) * (means[g] - grand);
  for (std::size_t i = 0; i < n; ++i) {
    r.ss_total += (values[i] - grand) * (values[i] - grand);
    const double dev = values[i] - means[static_cast<std::size_t>(labels[i])];
    r.ss_within += dev * dev;
  }

  const double eps = std::numeric_limits<double>::epsilon() * scale;
  if (r.ss_total <= 16.0 * static_cast<double>(n) * eps * eps) {
    r.degenerate = true;
    r.eta_squared = kNaN;
    r.f = kNaN;
    r.p = kNaN;
    return r;
  }
  r.eta_squared = std::clamp(r.ss_between / r.ss_total, 0.0, 1.0);
  if (r.ss_within <= 0.0) {
    r.f = kInf;
    r.p = 0.0;
    return r;
  }
  r.f = (r.ss_between / r.df_between) / (r.ss_within / r.df_within);
  r.p = dist::f_upper_tail(r.f, r.df_between, r.df_within);
  return r;
}

std::string_view effect_name(EffectClass e) {
  switch (e) {
    case EffectClass::negligible: return "negligible";
    case EffectClass::small: return "small";
    case EffectClass::medium: return "medium";
    case EffectClass::large: return "large";
  }
  return "negligible";
}

EffectClass classify_effect(double eta_squared) {
  if (!(eta_squared >= 0.01)) return EffectClass::negligible;
  if (eta_squared < 0.06) return EffectClass::small;
  if (eta_squared < 0.14) return EffectClass::medium;
  return EffectClass::large;
}

double cue_value(const events::DecelerationEvent& e, std::string_view name) {
  if (name == "spacing") return e.onset_spacing;
  if (name == "mean_decel") return e.mean_decel;
  if (name == "max_decel") return e.max_decel;
  if (name == "ego_speed_onset") return e.ego_speed_onset;
  if (name == "leader_speed_onset") return e.leader_speed_onset;
  return temporal::feature_value(e.onset_features, name);
}

std::vector<CueImportanceRow> rank_cues(std::span<const events::DecelerationEvent> evts, std::span<const int> labels) {
  std::vector<CueImportanceRow> rows;
  std::vector<double> column(evts.size());
  for (auto name : kRankedCues) {
    for (std::size_t i = 0; i < evts.size(); ++i) column[i] = cue_value(evts[i], name);
    CueImportanceRow row;
    row.feature = std::string(name);
    row.anova = anova_eta_squared(column, labels);
    row.effect = classify_effect(row.anova.eta_squared);
    rows.push_back(std::move(row));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const auto& a, const auto& b) {
    const double ea = std::isnan(a.anova.eta_squared) ? -1.0 : a.anova.eta_squared;
    const double eb = std::isnan(b.anova.eta_squared) ? -1.0 : b.anova.eta_squared;
    return ea > eb;
  });
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].rank = static_cast<int>(i) + 1;
  return rows;
}

namespace {
std::set<std::string> leaders(const std::vector<CueImportanceRow>& rows) {
  std::set<std::string> out;
  if (rows.empty() || std::isnan(rows.front().anova.eta_squared)) return out;
  const double top = rows.front().anova.eta_squared;
  for (const auto& r : rows)
    if (!std::isnan(r.anova.eta_squared) && r.anova.eta_squared >= top - 1e-12) out.insert(r.feature);
  return out;
}
}  // namespace

void mark_reversals(std::span<std::vector<CueImportanceRow>> per_threshold) {
  if (per_threshold.size() < 2) return;
  const auto reference = leaders(per_threshold.front());
  std::set<std::string> flagged;
  for (std::size_t t = 1; t < per_threshold.size(); ++t)
    for (const auto& f : leaders(per_threshold[t]))
      if (!reference.count(f)) flagged.insert(f);
  for (auto& rows : per_threshold)
    for (auto& r : rows) r.reversal = flagged.count(r.feature) > 0;
}

std::vector<ClusterProfile> cluster_profile(std::span<const events::DecelerationEvent> evts,
                                            std::span<const int> labels, const LabelRule& rule) {
  if (evts.size() != labels.size()) throw std::invalid_argument("cluster_profile: events and labels differ in length");
  static constexpr std::array<std::string_view, 10> kProfileColumns = {
      "v_rel",   "ttc",        "gap_closing_rate", "a_req",           "ttc_inv",
      "spacing", "mean_decel", "max_decel",        "ego_speed_onset", "leader_speed_onset"};

  const int k = group_count(labels);
  std::vector<ClusterProfile> out(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) {
    auto& p = out[static_cast<std::size_t>(c)];
    p.cluster = c;
    for (auto ctx : {events::Context::leader_induced, events::Context::close_following, events::Context::free_flow,
                     events::Context::other})
      p.contexts[std::string(events::context_name(ctx))] = 0;
    std::vector<double> sums(kProfileColumns.size(), 0.0);
    double braking = 0.0;
    for (std::size_t i = 0; i < evts.size(); ++i) {
      if (labels[i] != c) continue;
      ++p.size;
      for (std::size_t j = 0; j < kProfileColumns.size(); ++j) sums[j] += cue_value(evts[i], kProfileColumns[j]);
      braking += evts[i].onset_features.leader_braking_flag;
      ++p.contexts[std::string(events::context_name(evts[i].context))];
    }
    const double n = std::max<double>(1.0, static_cast<double>(p.size));
    for (std::size_t j = 0; j < kProfileColumns.size(); ++j)
      p.means.emplace_back(std::string(kProfileColumns[j]), sums[j] / n);
    p.share_pct = evts.empty() ? 0.0 : 100.0 * static_cast<double>(p.size) / static_cast<double>(evts.size());
    p.leader_braking_pct = 100.0 * braking / n;
    p.ttc_applicable = p.means[0].second > 0.0;
  }

  if (rule.enabled) {
    std::vector<std::size_t> rest;
    for (std::size_t c = 0; c < out.size(); ++c) {
      if (out[c].means[0].second < 0.0) out[c].label = rule.uncertain;
      else rest.push_back(c);
    }
    if (rest.size() >= 2) {
      const auto ttc = [&](std::size_t c) { return out[c].means[1].second; };
      const auto [lo, hi] = std::minmax_element(rest.begin(), rest.end(),
                                                [&](auto a, auto b) { return ttc(a) < ttc(b); });
      const auto ties = [&](double v) {
        return std::count_if(rest.begin(), rest.end(), [&](auto c) { return ttc(c) == v; });
      };
      if (ttc(*hi) > ttc(*lo)) {
        if (ties(ttc(*hi)) == 1) out[*hi].label = rule.preventive;
        if (ties(ttc(*lo)) == 1) out[*lo].label = rule.reactive;
      }
    }
  }
  return out;
}

PcaResult pca_project(const cluster::Matrix& x, int n_components) {
  const auto n = x.rows();
  if (n_components < 1) throw ConfigError("PCA needs at least one component");
  if (n <= n_components) throw DataError("PCA needs more rows than components");

  const Eigen::RowVectorXd mean = x.colwise().mean();
  const Eigen::MatrixXd centered = x.rowwise() - mean;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw DataError("covariance eigendecomposition failed");

  const Eigen::VectorXd values = solver.eigenvalues();
  const Eigen::MatrixXd vectors = solver.eigenvectors();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(values.size()));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return values(a) > values(b); });

  double total = 0.0;
  for (Eigen::Index i = 0; i < values.size(); ++i) total += std::max(0.0, values(i));
  const double largest = values.size() > 0 ? std::max(0.0, values(order.front())) : 0.0;

  PcaResult r;
  std::vector<Eigen::Index> keep;
  for (auto idx : order) {
    if (static_cast<int>(keep.size()) == n_components) break;
    if (!(values(idx) > 1e-10 * largest) || largest <= 0.0) break;
    keep.push_back(idx);
  }
  if (static_cast<int>(keep.size()) < n_components)
    r.warnings.push_back("covariance rank " + std::to_string(keep.size()) + " below requested " +
                         std::to_string(n_components) + " components");

  r.components.resize(x.cols(), static_cast<Eigen::Index>(keep.size()));
  for (std::size_t j = 0; j < keep.size(); ++j) {
    Eigen::VectorXd v = vectors.col(keep[j]);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v(arg) < 0.0) v = -v;
    r.components.col(static_cast<Eigen::Index>(j)) = v;
    r.eigenvalues.push_back(values(keep[j]));
    r.explained_ratio.push_back(total > 0.0 ? values(keep[j]) / total : 0.0);
  }
  r.scores = centered * r.components;
  return r;
}

std::vector<RadarProfile> radar_data(std::span<const events::DecelerationEvent> evts, std::span<const int> labels) {
  const int k = group_count(labels);
  std::vector<RadarProfile> out(static_cast<std::size_t>(k));
  for (int c = 0; c < k; ++c) out[static_cast<std::size_t>(c)].cluster = c;
  if (evts.empty()) return out;
  for (auto axis : kRadarAxes) {
    std::vector<double> col(evts.size());
    for (std::size_t i = 0; i < evts.size(); ++i) col[i] = cue_value(evts[i], axis);
    const double n = static_cast<double>(col.size());
    const double mean = std::accumulate(col.begin(), col.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : col) ss += (v - mean) * (v - mean);
    const double sd = std::sqrt(ss / n);
    std::vector<double> sums(static_cast<std::size_t>(k), 0.0);
    std::vector<std::size_t> counts(static_cast<std::size_t>(k), 0);
    for (std::size_t i = 0; i < col.size(); ++i) {
      sums[static_cast<std::size_t>(labels[i])] += col[i];
      ++counts[static_cast<std::size_t>(labels[i])];
    }
    for (std::size_t c = 0; c < out.size(); ++c) {
      const double m = counts[c] > 0 ? sums[c] / static_cast<double>(counts[c]) : mean;
      out[c].values.emplace_back(std::string(axis), sd > 0.0 ? (m - mean) / sd : 0.0);
    }
  }
  return out;
}

}  // namespace cfkin::cues
