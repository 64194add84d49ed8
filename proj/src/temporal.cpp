#include "cfkin/temporal.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "cfkin/distributions.hpp"
#include "cfkin/error.hpp"

namespace cfkin::temporal {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
constexpr double kLargeEffect = 0.5;
constexpr double kSmallEffect = 0.2;
constexpr double kEarlyLag = -3.0;

struct MeanSd {
  double mean = 0.0;
  double sd = 0.0;
  bool degenerate = false;
};

MeanSd sample_mean_sd(std::span<const double> x) {
  const double n = static_cast<double>(x.size());
  MeanSd r;
  r.mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  double scale = 0.0;
  for (double v : x) {
    ss += (v - r.mean) * (v - r.mean);
    scale = std::max(scale, std::abs(v));
  }
  r.sd = std::sqrt(ss / (n - 1.0));
  // Identical differences can leave rounding residue in the sd.
  r.degenerate = r.sd <= 16.0 * std::numeric_limits<double>::epsilon() * scale;
  if (r.degenerate) r.sd = 0.0;
  return r;
}
}  // namespace

double feature_value(const kinematics::KinematicFeatures& f, std::string_view name) {
  if (name == "v_rel") return f.v_rel;
  if (name == "ttc") return f.ttc.value_or(kNaN);
  if (name == "gap_closing_rate") return f.gap_closing_rate;
  if (name == "a_req") return f.a_req;
  if (name == "ttc_inv") return f.ttc_inv.value_or(kNaN);
  if (name == "leader_braking_flag") return f.leader_braking_flag;
  throw std::invalid_argument("unknown feature " + std::string(name));
}

std::vector<events::LaggedFeatures> extract_lagged(const events::DecelerationEvent& event,
                                                   const kinematics::AnnotatedSegment& segment,
                                                   std::span<const double> lags_s, double frame_interval) {
  std::vector<events::LaggedFeatures> out;
  out.reserve(lags_s.size());
  for (double lag : lags_s) {
    events::LaggedFeatures lf;
    lf.lag_s = lag;
    const auto back = std::llround(-lag / frame_interval);
    if (back >= 0 && static_cast<std::size_t>(back) <= event.onset_index) {
      const auto idx = event.onset_index - static_cast<std::size_t>(back);
      if (idx < segment.features.size()) lf.features = segment.features[idx];
    }
    out.push_back(std::move(lf));
  }
  return out;
}

TTestResult paired_t_test(std::span<const double> lag_values, std::span<const double> onset_values) {
  if (lag_values.size() != onset_values.size()) throw std::invalid_argument("paired_t_test: unaligned pairs");
  if (lag_values.size() < 2) throw DataError("paired_t_test needs at least two pairs");
  std::vector<double> diffs(lag_values.size());
  for (std::size_t i = 0; i < diffs.size(); ++i) diffs[i] = onset_values[i] - lag_values[i];

  const auto ms = sample_mean_sd(diffs);
  TTestResult r;
  r.n = diffs.size();
  r.df = static_cast<double>(r.n) - 1.0;
  r.mean_diff = ms.mean;
  r.sd_diff = ms.sd;
  if (ms.degenerate) {
    r.degenerate = true;
    r.t = kNaN;
    r.p = ms.mean != 0.0 ? 0.0 : 1.0;
    return r;
  }
  r.t = ms.mean / (ms.sd / std::sqrt(static_cast<double>(r.n)));
  r.p = dist::student_t_two_sided_p(r.t, r.df);
  return r;
}

CohensD cohens_d_paired(std::span<const double> diffs) {
  if (diffs.size() < 2) throw DataError("cohens_d_paired needs at least two differences");
  const auto ms = sample_mean_sd(diffs);
  if (ms.degenerate) return {kNaN, true};
  return {ms.mean / ms.sd, false};
}

std::string_view magnitude_name(Magnitude m) {
  switch (m) {
    case Magnitude::negligible: return "negligible";
    case Magnitude::small: return "small";
    case Magnitude::medium_to_large: return "medium-to-large";
  }
  return "negligible";
}

Magnitude classify_magnitude(double d) {
  const double a = std::abs(d);
  if (!(a >= kSmallEffect)) return Magnitude::negligible;
  if (a > kLargeEffect) return Magnitude::medium_to_large;
  return Magnitude::small;
}

namespace {
const kinematics::KinematicFeatures* lagged_at(const events::DecelerationEvent& e, double lag) {
  for (const auto& lf : e.lagged)
    if (events::same_value(lf.lag_s, lag)) return lf.features ? &*lf.features : nullptr;
  return nullptr;
}
}  // namespace

LagTable precedence_report(std::span<const events::DecelerationEvent> evts, std::span<const double> lags_s,
                           double alpha) {
  LagTable table;
  table.alpha = alpha;
  for (auto name : kContinuousFeatures) {
    FeaturePrecedence prec{std::string(name), false};
    for (double lag : lags_s) {
      LagCell cell;
      cell.feature = std::string(name);
      cell.lag_s = lag;
      std::vector<double> at_lag, at_onset;
      for (const auto& e : evts) {
        const auto* lf = lagged_at(e, lag);
        if (lf == nullptr) continue;
        at_lag.push_back(feature_value(*lf, name));
        at_onset.push_back(feature_value(e.onset_features, name));
      }
      cell.n_pairs = at_lag.size();
      if (cell.n_pairs >= 1) {
        cell.mean_at_lag = std::accumulate(at_lag.begin(), at_lag.end(), 0.0) / static_cast<double>(cell.n_pairs);
        cell.mean_at_onset =
            std::accumulate(at_onset.begin(), at_onset.end(), 0.0) / static_cast<double>(cell.n_pairs);
      }
      cell.available = cell.n_pairs >= 2;
      if (cell.available) {
        cell.test = paired_t_test(at_lag, at_onset);
        std::vector<double> diffs(cell.n_pairs);
        for (std::size_t i = 0; i < diffs.size(); ++i) diffs[i] = at_onset[i] - at_lag[i];
        cell.effect = cohens_d_paired(diffs);
        cell.significant = cell.test.p < alpha;
        cell.magnitude = cell.effect.degenerate ? Magnitude::negligible : classify_magnitude(cell.effect.d);
        if (lag <= kEarlyLag + 1e-9 && cell.significant && cell.magnitude == Magnitude::medium_to_large)
          prec.precedes = true;
      }
      table.cells.push_back(std::move(cell));
    }
    table.precedence.push_back(std::move(prec));
  }

  std::vector<double> flag_lags{0.0};
  flag_lags.insert(flag_lags.end(), lags_s.begin(), lags_s.end());
  for (double lag : flag_lags) {
    FlagActivation fa;
    fa.lag_s = lag;
    std::size_t active = 0;
    for (const auto& e : evts) {
      const auto* f = events::same_value(lag, 0.0) ? &e.onset_features : lagged_at(e, lag);
      if (f == nullptr) continue;
      ++fa.n;
      active += f->leader_braking_flag != 0 ? 1 : 0;
    }
    fa.rate = fa.n > 0 ? static_cast<double>(active) / static_cast<double>(fa.n) : 0.0;
    table.flag_activation.push_back(fa);
  }
  return table;
}

}  // namespace cfkin::temporal
