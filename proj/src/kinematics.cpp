#include "cfkin/kinematics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "cfkin/error.hpp"

namespace cfkin::kinematics {

KinematicFeatures compute_features(const ingest::DyadObservation& dyad) {
  const double s = dyad.spacing;
  if (!(s > 0.0)) throw std::logic_error("compute_features: non-positive spacing reached feature extraction");
  const double v_ego = dyad.follower.velocity;
  const double v_lead = dyad.leader_velocity;

  KinematicFeatures f;
  f.v_rel = v_ego - v_lead;
  f.gap_closing_rate = f.v_rel;
  f.a_req = (v_ego * v_ego - v_lead * v_lead) / (2.0 * s);
  f.leader_braking_flag = dyad.leader_acceleration < kLeaderBrakingThreshold ? 1 : 0;
  if (f.v_rel > 0.0) {
    f.ttc = s / f.v_rel;
    f.ttc_inv = f.v_rel / s;
  }
  return f;
}

std::vector<AnnotatedSegment> annotate(std::vector<ingest::TrajectorySegment> segments) {
  std::vector<AnnotatedSegment> out;
  out.reserve(segments.size());
  for (auto& seg : segments) {
    AnnotatedSegment a;
    a.features.reserve(seg.observations.size());
    for (const auto& obs : seg.observations) a.features.push_back(compute_features(obs));
    a.segment = std::move(seg);
    out.push_back(std::move(a));
  }
  return out;
}

// ---------------------------------------------------------------------------
// medians

double median(std::vector<double> values) {
  if (values.empty()) throw DataError("median of an empty set");
  const auto mid = values.size() / 2;
  std::nth_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid), values.end());
  const double upper = values[mid];
  if (values.size() % 2 == 1) return upper;
  const double lower = *std::max_element(values.begin(), values.begin() + static_cast<std::ptrdiff_t>(mid));
  return 0.5 * (lower + upper);
}

void P2Median::add(double x) {
  if (n_ < 5) {
    q_[n_++] = x;
    if (n_ == 5) {
      std::sort(q_, q_ + 5);
      for (int i = 0; i < 5; ++i) {
        pos_[i] = i + 1;
        desired_[i] = i + 1;
      }
    }
    return;
  }
  static constexpr double kIncrement[5] = {0.0, 0.25, 0.5, 0.75, 1.0};

  int k = 0;
  if (x < q_[0]) {
    q_[0] = x;
    k = 0;
  } else if (x >= q_[4]) {
    q_[4] = x;
    k = 3;
  } else {
    while (k < 3 && x >= q_[k + 1]) ++k;
  }
  for (int i = k + 1; i < 5; ++i) pos_[i] += 1.0;
  for (int i = 0; i < 5; ++i) desired_[i] += kIncrement[i];

  for (int i = 1; i <= 3; ++i) {
    const double d = desired_[i] - pos_[i];
    if ((d >= 1.0 && pos_[i + 1] - pos_[i] > 1.0) || (d <= -1.0 && pos_[i - 1] - pos_[i] < -1.0)) {
      const double s = d > 0 ? 1.0 : -1.0;
      const double parabolic =
          q_[i] + s / (pos_[i + 1] - pos_[i - 1]) *
                      ((pos_[i] - pos_[i - 1] + s) * (q_[i + 1] - q_[i]) / (pos_[i + 1] - pos_[i]) +
                       (pos_[i + 1] - pos_[i] - s) * (q_[i] - q_[i - 1]) / (pos_[i] - pos_[i - 1]));
      if (q_[i - 1] < parabolic && parabolic < q_[i + 1]) {
        q_[i] = parabolic;
      } else {
        const int j = i + static_cast<int>(s);
        q_[i] += s * (q_[j] - q_[i]) / (pos_[j] - pos_[i]);
      }
      pos_[i] += s;
    }
  }
  ++n_;
}

double P2Median::value() const {
  if (n_ == 0) throw DataError("median of an empty set");
  if (n_ >= 5) return q_[2];
  return median(std::vector<double>(q_, q_ + n_));
}

namespace {

template <typename Visit>
ImputationMedians compute_medians(Visit&& visit, MedianPolicy policy) {
  ImputationMedians m;
  if (policy == MedianPolicy::exact) {
    std::vector<double> ttc, ttc_inv;
    visit([&](const KinematicFeatures& f) {
      if (f.ttc && !f.imputed_ttc) ttc.push_back(*f.ttc);
      if (f.ttc_inv && !f.imputed_ttc_inv) ttc_inv.push_back(*f.ttc_inv);
    });
    m.ttc_defined = ttc.size();
    m.ttc_inv_defined = ttc_inv.size();
    if (ttc.empty() || ttc_inv.empty())
      throw DataError("median imputation impossible: no observation with a closing gap");
    m.ttc = median(std::move(ttc));
    m.ttc_inv = median(std::move(ttc_inv));
    return m;
  }
  P2Median ttc, ttc_inv;
  visit([&](const KinematicFeatures& f) {
    if (f.ttc && !f.imputed_ttc) ttc.add(*f.ttc);
    if (f.ttc_inv && !f.imputed_ttc_inv) ttc_inv.add(*f.ttc_inv);
  });
  m.ttc_defined = ttc.count();
  m.ttc_inv_defined = ttc_inv.count();
  if (m.ttc_defined == 0 || m.ttc_inv_defined == 0)
    throw DataError("median imputation impossible: no observation with a closing gap");
  m.ttc = ttc.value();
  m.ttc_inv = ttc_inv.value();
  return m;
}

void fill(KinematicFeatures& f, const ImputationMedians& m) {
  if (!f.ttc) {
    f.ttc = m.ttc;
    f.imputed_ttc = true;
  }
  if (!f.ttc_inv) {
    f.ttc_inv = m.ttc_inv;
    f.imputed_ttc_inv = true;
  }
}

}  // namespace

ImputationMedians impute_undefined(std::span<KinematicFeatures> features, MedianPolicy policy) {
  const auto m = compute_medians(
      [&](auto&& fn) {
        for (const auto& f : features) fn(f);
      },
      policy);
  for (auto& f : features) fill(f, m);
  return m;
}

ImputationMedians impute_undefined(std::vector<AnnotatedSegment>& segments, MedianPolicy policy) {
  const auto m = compute_medians(
      [&](auto&& fn) {
        for (const auto& seg : segments)
          for (const auto& f : seg.features) fn(f);
      },
      policy);
  for (auto& seg : segments)
    for (auto& f : seg.features) fill(f, m);
  return m;
}

// ---------------------------------------------------------------------------
// summaries

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
  const double h = (static_cast<double>(sorted.size()) - 1.0) * q;
  const auto lo = static_cast<std::size_t>(std::floor(h));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[hi] - sorted[lo]);
}

}  // namespace

Histogram histogram(std::span<const double> values, const HistogramOptions& options) {
  Histogram h;
  if (values.empty()) return h;
  std::vector<double> sorted(values.begin(), values.end());
  std::sort(sorted.begin(), sorted.end());
  const double lo = sorted.front();
  const double hi = sorted.back();
  const double range = hi - lo;

  std::size_t bins = options.bins;
  if (range <= 0.0) {
    bins = 1;
  } else if (bins == 0) {
    const double iqr = quantile_sorted(sorted, 0.75) - quantile_sorted(sorted, 0.25);
    const double width = 2.0 * iqr / std::cbrt(static_cast<double>(sorted.size()));
    bins = width > 0.0 ? static_cast<std::size_t>(std::ceil(range / width))
                       : static_cast<std::size_t>(std::ceil(std::log2(static_cast<double>(sorted.size())))) + 1;
  }
  bins = std::clamp<std::size_t>(bins, 1, std::max<std::size_t>(options.max_bins, 1));

  h.counts.assign(bins, 0);
  h.edges.resize(bins + 1);
  if (range <= 0.0) {
    h.edges = {lo - 0.5, hi + 0.5};
  } else {
    for (std::size_t i = 0; i <= bins; ++i)
      h.edges[i] = lo + range * static_cast<double>(i) / static_cast<double>(bins);
    h.edges.back() = hi;
  }
  for (double v : sorted) {
    std::size_t idx = 0;
    if (range > 0.0) {
      idx = static_cast<std::size_t>(std::floor((v - lo) / range * static_cast<double>(bins)));
      idx = std::min(idx, bins - 1);
    }
    ++h.counts[idx];
  }
  return h;
}

FeatureStats describe(std::string name, std::span<const double> values, const HistogramOptions& options) {
  FeatureStats s;
  s.name = std::move(name);
  s.count = values.size();
  if (values.empty()) return s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.sd = std::sqrt(ss / n);
  s.median = median(std::vector<double>(values.begin(), values.end()));
  s.histogram = histogram(values, options);
  return s;
}

const FeatureStats& FeatureSummary::at(const std::string& name) const {
  for (const auto& f : features)
    if (f.name == name) return f;
  throw std::out_of_range("no feature named " + name);
}

FeatureSummary dataset_summary(const std::vector<AnnotatedSegment>& segments, const HistogramOptions& options) {
  std::vector<double> v_rel, ttc, gap, a_req, flag, ttc_inv, spacing, ego, leader, closing_ttc;
  std::size_t imputed_ttc = 0, imputed_ttc_inv = 0;
  for (const auto& seg : segments) {
    for (std::size_t i = 0; i < seg.features.size(); ++i) {
      const auto& f = seg.features[i];
      const auto& obs = seg.segment.observations[i];
      v_rel.push_back(f.v_rel);
      gap.push_back(f.gap_closing_rate);
      a_req.push_back(f.a_req);
      flag.push_back(f.leader_braking_flag);
      if (f.ttc) ttc.push_back(*f.ttc);
      if (f.ttc_inv) ttc_inv.push_back(*f.ttc_inv);
      if (f.ttc && !f.imputed_ttc && f.v_rel > 0.0) closing_ttc.push_back(*f.ttc);
      imputed_ttc += f.imputed_ttc ? 1 : 0;
      imputed_ttc_inv += f.imputed_ttc_inv ? 1 : 0;
      spacing.push_back(obs.spacing);
      ego.push_back(obs.follower.velocity);
      leader.push_back(obs.leader_velocity);
    }
  }

  FeatureSummary summary;
  summary.observations = v_rel.size();
  summary.features.push_back(describe("v_rel", v_rel, options));
  summary.features.push_back(describe("ttc", ttc, options));
  summary.features.push_back(describe("gap_closing_rate", gap, options));
  summary.features.push_back(describe("a_req", a_req, options));
  summary.features.push_back(describe("leader_braking_flag", flag, options));
  summary.features.push_back(describe("ttc_inv", ttc_inv, options));
  summary.features.push_back(describe("spacing", spacing, options));
  summary.features.push_back(describe("ego_speed", ego, options));
  summary.features.push_back(describe("leader_speed", leader, options));
  if (summary.observations > 0) {
    const double n = static_cast<double>(summary.observations);
    summary.features[1].imputation_rate = static_cast<double>(imputed_ttc) / n;
    summary.features[5].imputation_rate = static_cast<double>(imputed_ttc_inv) / n;
  }
  if (!closing_ttc.empty()) summary.closing_ttc_median = median(std::move(closing_ttc));
  return summary;
}

}  // namespace cfkin::kinematics
