#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "cfkin/error.hpp"
#include "cfkin/temporal.hpp"
#include "oracles/reference.hpp"
#include "support.hpp"

using namespace cfkin::temporal;
using cfkin::events::DecelerationEvent;
using cfkin::events::EventConfig;

namespace {

const std::vector<double> kLags{-5.0, -3.0, -1.0};

DecelerationEvent event_at(const cfkin::kinematics::AnnotatedSegment& seg, std::size_t onset) {
  const auto found = cfkin::events::detect_events(seg, 0, EventConfig{});
  for (auto e : found)
    if (e.onset_index == onset) {
      e.lagged = extract_lagged(e, seg, kLags);
      return e;
    }
  FAIL("no event at the requested onset");
  return {};
}

cfkin::kinematics::AnnotatedSegment braking_at(std::size_t onset, std::size_t length = 100) {
  testkit::SegmentSpec spec;
  spec.accel = std::vector<double>(length, 0.0);
  for (std::size_t i = onset; i < std::min(length, onset + 12); ++i) spec.accel[i] = -1.0;
  spec.v_rel.resize(length);
  for (std::size_t i = 0; i < length; ++i) spec.v_rel[i] = 1.0 + 0.01 * static_cast<double>(i);
  return testkit::make_segment(spec);
}

// Each event's v_rel sits at a baseline until 3 s before onset, then ramps up.
std::vector<DecelerationEvent> ramp_events(std::uint64_t seed, int n, double ramp) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> base(0.5, 1.5), extra(0.5, 1.5), lead_a(-0.2, 0.2);
  std::vector<DecelerationEvent> out;
  for (int k = 0; k < n; ++k) {
    const double b = base(rng), r = ramp * extra(rng);
    testkit::SegmentSpec spec;
    spec.vehicle = 2 + k;
    spec.accel = testkit::runs({{70, 0.0}, {12, -1.0}, {18, 0.0}});
    spec.leader_accel.resize(100);
    for (auto& a : spec.leader_accel) a = lead_a(rng);
    spec.v_rel.resize(100);
    for (int i = 0; i < 100; ++i) spec.v_rel[i] = i < 40 ? b : b + r * std::min(1.0, (i - 40) / 30.0);
    const auto seg = testkit::make_segment(spec);
    auto found = cfkin::events::detect_events(seg, static_cast<std::size_t>(k), EventConfig{});
    REQUIRE(found.size() == 1);
    found[0].lagged = extract_lagged(found[0], seg, kLags);
    out.push_back(found[0]);
  }
  return out;
}

const LagCell& cell(const LagTable& t, const std::string& feature, double lag) {
  for (const auto& c : t.cells)
    if (c.feature == feature && std::abs(c.lag_s - lag) < 1e-9) return c;
  throw std::out_of_range("no such cell");
}

}  // namespace

TEST_CASE("lag availability follows the segment start") {
  SUBCASE("onset at frame 70 has every lag") {
    const auto seg = braking_at(70);
    const auto e = event_at(seg, 70);
    REQUIRE(e.lagged.size() == 3);
    for (const auto& lf : e.lagged) REQUIRE(lf.features);
    CHECK(e.lagged[0].features->v_rel == doctest::Approx(1.2));
    CHECK(e.lagged[1].features->v_rel == doctest::Approx(1.4));
    CHECK(e.lagged[2].features->v_rel == doctest::Approx(1.6));
  }
  SUBCASE("onset at frame 20 has only -1 s") {
    const auto seg = braking_at(20);
    const auto e = event_at(seg, 20);
    CHECK_FALSE(e.lagged[0].features);
    CHECK_FALSE(e.lagged[1].features);
    REQUIRE(e.lagged[2].features);
    CHECK(e.lagged[2].features->v_rel == doctest::Approx(1.1));
  }
  SUBCASE("lag 0 is the onset itself") {
    const auto seg = braking_at(50);
    auto e = event_at(seg, 50);
    const std::vector<double> zero{0.0};
    const auto lf = extract_lagged(e, seg, zero);
    REQUIRE(lf[0].features);
    CHECK(*lf[0].features == e.onset_features);
  }
}

TEST_CASE("paired t on diffs {1, 2, 3}") {
  const std::vector<double> lag{0, 0, 0}, onset{1, 2, 3};
  const auto r = paired_t_test(lag, onset);
  CHECK(r.mean_diff == doctest::Approx(2.0));
  CHECK(r.sd_diff == doctest::Approx(1.0));
  CHECK(r.t == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-12));
  CHECK(r.df == 2.0);
  const auto ref = oracle::paired_t(lag, onset);
  CHECK(std::abs(r.p - ref.p) < 1e-12);
  CHECK_FALSE(r.degenerate);
}

TEST_CASE("degenerate and symmetric paired tests") {
  const std::vector<double> zeros{0, 0, 0, 0};
  auto r = paired_t_test(zeros, zeros);
  CHECK(r.degenerate);
  CHECK(r.p == 1.0);
  CHECK(std::isnan(r.t));
  const std::vector<double> ones{1, 1, 1, 1};
  r = paired_t_test(zeros, ones);
  CHECK(r.degenerate);
  CHECK(r.p == 0.0);
  const std::vector<double> alt{1, -1, 1, -1};
  r = paired_t_test(zeros, alt);
  CHECK(r.t == 0.0);
  CHECK(r.p == doctest::Approx(1.0).epsilon(1e-15));
  const std::vector<double> one{1.0};
  CHECK_THROWS_AS(paired_t_test(one, one), cfkin::DataError);
}

TEST_CASE("Cohen's D keeps its sign") {
  const std::vector<double> up{1, 2, 3}, down{-1, -2, -3}, flat{0, 0, 0};
  CHECK(cohens_d_paired(up).d == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(cohens_d_paired(down).d == doctest::Approx(-2.0).epsilon(1e-15));
  const auto f = cohens_d_paired(flat);
  CHECK(f.degenerate);
  CHECK(std::isnan(f.d));
}

TEST_CASE("effect magnitude boundaries") {
  CHECK(classify_magnitude(0.5) == Magnitude::small);
  CHECK(classify_magnitude(-0.51) == Magnitude::medium_to_large);
  CHECK(classify_magnitude(0.2) == Magnitude::small);
  CHECK(classify_magnitude(0.19) == Magnitude::negligible);
  CHECK(magnitude_name(Magnitude::medium_to_large) == "medium-to-large");
}

TEST_CASE("t equals D times root n and matches the high-precision reference") {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> g(0.3, 1.0);
  std::uniform_int_distribution<int> size(2, 50);
  for (int trial = 0; trial < 200; ++trial) {
    const int n = size(rng);
    std::vector<double> lag(n), onset(n), diffs(n);
    for (int i = 0; i < n; ++i) {
      lag[i] = g(rng);
      onset[i] = g(rng) + 0.2;
      diffs[i] = onset[i] - lag[i];
    }
    const auto r = paired_t_test(lag, onset);
    const auto d = cohens_d_paired(diffs);
    CHECK(r.t == doctest::Approx(d.d * std::sqrt(static_cast<double>(n))).epsilon(1e-12));
    const auto ref = oracle::paired_t(lag, onset);
    CHECK(std::abs(r.t - ref.t) < 1e-9);
    CHECK(std::abs(r.p - ref.p) < 1e-9);
    CHECK(std::abs(d.d - ref.d) < 1e-9);

    std::vector<int> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    std::vector<double> lag2(n), onset2(n);
    for (int i = 0; i < n; ++i) {
      lag2[i] = lag[order[i]];
      onset2[i] = onset[order[i]];
    }
    const auto s = paired_t_test(lag2, onset2);
    CHECK(s.t == doctest::Approx(r.t).epsilon(1e-12));
    CHECK(s.p == doctest::Approx(r.p).epsilon(1e-10));
  }
}

TEST_CASE("a v_rel ramp three seconds before braking is flagged as preceding") {
  const auto events = ramp_events(8, 40, 2.0);
  const auto table = precedence_report(events, kLags);
  REQUIRE(table.cells.size() == kContinuousFeatures.size() * kLags.size());
  const auto& c = cell(table, "v_rel", -3.0);
  CHECK(c.available);
  CHECK(c.n_pairs == 40);
  CHECK(c.significant);
  CHECK(c.effect.d > 0.5);
  const auto it = std::find_if(table.precedence.begin(), table.precedence.end(),
                               [](const auto& p) { return p.feature == "v_rel"; });
  REQUIRE(it != table.precedence.end());
  CHECK(it->precedes);
  for (const auto& x : table.cells) {
    CHECK(x.n_pairs <= events.size());
    if (x.available && !x.test.degenerate)
      CHECK(x.test.t == doctest::Approx(x.effect.d * std::sqrt(static_cast<double>(x.n_pairs))).epsilon(1e-12));
  }
  REQUIRE(table.flag_activation.size() == 4);
  CHECK(table.flag_activation[0].lag_s == 0.0);
  CHECK(table.flag_activation[0].n == 40);
}

TEST_CASE("a constant corpus flags nothing") {
  const auto events = ramp_events(8, 10, 0.0);
  std::vector<DecelerationEvent> same(10, events.front());
  const auto table = precedence_report(same, kLags);
  for (const auto& c : table.cells) {
    CHECK(c.available);
    CHECK(c.test.degenerate);
    CHECK_FALSE(c.significant);
  }
  for (const auto& p : table.precedence) CHECK_FALSE(p.precedes);
}

TEST_CASE("cells with fewer than two pairs are unavailable") {
  const auto events = ramp_events(3, 1, 1.0);
  const auto table = precedence_report(events, kLags);
  for (const auto& c : table.cells) {
    CHECK_FALSE(c.available);
    CHECK(c.n_pairs == 1);
  }
}
