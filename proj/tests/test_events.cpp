#include <doctest.h>

#include <limits>
#include <random>

#include "cfkin/error.hpp"
#include "cfkin/events.hpp"
#include "cfkin/kinematics.hpp"
#include "support.hpp"

using namespace cfkin::events;
using testkit::make_segment;
using testkit::runs;

namespace {

std::vector<DecelerationEvent> detect(const std::vector<double>& accel, double threshold = -0.5,
                                      double duration = 1.0) {
  testkit::SegmentSpec spec;
  spec.accel = accel;
  EventConfig c;
  c.accel_threshold = threshold;
  c.min_duration = duration;
  return detect_events(make_segment(spec), 0, c);
}

DecelerationEvent with_max(double max_decel) {
  DecelerationEvent e;
  e.max_decel = max_decel;
  return e;
}

EventConfig at(double threshold) {
  EventConfig c;
  c.accel_threshold = threshold;
  return c;
}

// Smooth random acceleration traces with occasional braking episodes.
std::vector<cfkin::kinematics::AnnotatedSegment> random_segments(std::uint64_t seed, int count) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 0.25);
  std::uniform_int_distribution<int> len(60, 400);
  std::vector<cfkin::kinematics::AnnotatedSegment> out;
  for (int s = 0; s < count; ++s) {
    testkit::SegmentSpec spec;
    spec.vehicle = 2 + s;
    double a = 0.0;
    for (int i = 0, n = len(rng); i < n; ++i) {
      a = 0.9 * a + g(rng);
      spec.accel.push_back(a);
    }
    out.push_back(make_segment(spec));
  }
  return out;
}

}  // namespace

TEST_CASE("minimum run length in frames") {
  EventConfig c;
  for (auto [d, n] : std::vector<std::pair<double, std::size_t>>{{1.0, 10}, {2.0, 20}, {3.0, 30}, {4.0, 40}, {0.3, 3}}) {
    c.min_duration = d;
    CHECK(min_frames(c) == n);
  }
}

TEST_CASE("15 frames at -0.6 give one 1.5 s event at the run start") {
  const auto e = detect(runs({{20, 0.0}, {15, -0.6}, {25, 0.0}}));
  REQUIRE(e.size() == 1);
  CHECK(e[0].duration_s == doctest::Approx(1.5));
  CHECK(e[0].length_frames == 15);
  CHECK(e[0].onset_index == 20);
  CHECK(e[0].onset_frame == 20);
  CHECK(e[0].mean_decel == doctest::Approx(-0.6));
  CHECK(e[0].max_decel == -0.6);
  CHECK(e[0].id() == "t:2:20");
}

TEST_CASE("runs below the minimum duration are ignored") {
  CHECK(detect(runs({{20, 0.0}, {8, -0.6}, {30, 0.0}})).empty());
  CHECK(detect(runs({{20, 0.0}, {9, -0.6}, {30, 0.0}})).empty());
  CHECK(detect(runs({{20, 0.0}, {10, -0.6}, {30, 0.0}})).size() == 1);
}

TEST_CASE("a short rise above the threshold splits two events") {
  const auto e = detect(runs({{12, -0.6}, {3, 0.1}, {12, -0.7}, {30, 0.0}}));
  REQUIRE(e.size() == 2);
  CHECK(e[0].duration_s == doctest::Approx(1.2));
  CHECK(e[1].duration_s == doctest::Approx(1.2));
  CHECK(e[0].onset_index == 0);
  CHECK(e[1].onset_index == 15);
  CHECK(e[1].max_decel == -0.7);
}

TEST_CASE("dip tolerance bridges short rises when requested") {
  testkit::SegmentSpec spec;
  spec.accel = runs({{12, -0.6}, {3, 0.1}, {12, -0.7}, {30, 0.0}});
  EventConfig c;
  c.dip_tolerance_frames = 3;
  const auto e = detect_events(make_segment(spec), 0, c);
  REQUIRE(e.size() == 1);
  CHECK(e[0].length_frames == 27);
}

TEST_CASE("the threshold itself qualifies and runs touching the segment end count") {
  const auto e = detect(runs({{40, 0.0}, {20, -0.5}}));
  REQUIRE(e.size() == 1);
  CHECK(e[0].length_frames == 20);
}

TEST_CASE("severity boundaries per threshold") {
  CHECK(classify_severity(with_max(-2.0), at(-0.5)) == Severity::moderate);
  CHECK(classify_severity(with_max(-2.0), at(-0.3)) == Severity::moderate);
  CHECK(classify_severity(with_max(-3.5), at(-0.5)) == Severity::hard);
  CHECK(classify_severity(with_max(-1.5), at(-0.5)) == Severity::mild);
  CHECK(classify_severity(with_max(-3.0), at(-0.5)) == Severity::moderate);
  CHECK(classify_severity(with_max(-1.0), at(-0.3)) == Severity::mild);
  CHECK(classify_severity(with_max(-2.01), at(-0.3)) == Severity::hard);
}

TEST_CASE("non-canonical thresholds need explicit severity bounds") {
  auto c = at(-0.4);
  CHECK_THROWS_AS(validate(c), cfkin::ConfigError);
  c.severity_bounds = SeverityBounds{-1.2, -2.5};
  CHECK_NOTHROW(validate(c));
  CHECK(classify_severity(with_max(-2.0), c) == Severity::moderate);
  c.severity_bounds = SeverityBounds{-2.5, -1.2};
  CHECK_THROWS_AS(validate(c), cfkin::ConfigError);
  CHECK_THROWS_AS(validate(at(0.1)), cfkin::ConfigError);
  auto d = at(-0.5);
  d.min_duration = 0.0;
  CHECK_THROWS_AS(validate(d), cfkin::ConfigError);
}

TEST_CASE("context labels follow the priority order") {
  SUBCASE("leader braking within 1 s and TTC under 6 s") {
    testkit::SegmentSpec spec;
    spec.accel = runs({{30, 0.0}, {15, -1.0}, {15, 0.0}});
    spec.leader_accel = std::vector<double>(60, 0.0);
    spec.leader_accel[26] = -1.0;  // 0.4 s before onset
    spec.v_ego = 20.0;
    spec.v_lead = 12.5;  // TTC 30 / 7.5 = 4 s
    const auto e = detect_events(make_segment(spec), 0, EventConfig{});
    REQUIRE(e.size() == 1);
    CHECK(e[0].context == Context::leader_induced);
  }
  SUBCASE("leader braking outside the window does not count") {
    testkit::SegmentSpec spec;
    spec.accel = runs({{30, 0.0}, {15, -1.0}, {15, 0.0}});
    spec.leader_accel = std::vector<double>(60, 0.0);
    spec.leader_accel[18] = -1.0;  // 1.2 s before onset
    spec.v_lead = 12.5;
    const auto e = detect_events(make_segment(spec), 0, EventConfig{});
    REQUIRE(e.size() == 1);
    CHECK(e[0].context == Context::other);
  }
  SUBCASE("close following") {
    testkit::SegmentSpec spec;
    spec.accel = runs({{30, 0.0}, {15, -1.0}, {15, 0.0}});
    spec.spacing = 15.0;
    const auto e = detect_events(make_segment(spec), 0, EventConfig{});
    REQUIRE(e.size() == 1);
    CHECK(e[0].context == Context::close_following);
  }
  SUBCASE("free flow") {
    testkit::SegmentSpec spec;
    spec.accel = runs({{30, 0.0}, {15, -1.0}, {15, 0.0}});
    spec.spacing = 60.0;
    const auto e = detect_events(make_segment(spec), 0, EventConfig{});
    REQUIRE(e.size() == 1);
    CHECK(e[0].context == Context::free_flow);
  }
  SUBCASE("imputed TTC is never urgent") {
    testkit::SegmentSpec spec;
    spec.accel = runs({{30, 0.0}, {15, -1.0}, {15, 0.0}});
    spec.leader_accel = std::vector<double>(60, -1.0);
    spec.v_lead = 25.0;  // opening gap
    std::vector<cfkin::kinematics::AnnotatedSegment> segs{make_segment(spec)};
    segs[0].features[0].ttc = 2.0;  // give the medians something to work with
    segs[0].features[0].ttc_inv = 0.5;
    cfkin::kinematics::impute_undefined(segs);
    const auto e = detect_events(segs[0], 0, EventConfig{});
    REQUIRE(e.size() == 1);
    CHECK(e[0].onset_features.imputed_ttc);
    CHECK(*e[0].onset_features.ttc < 6.0);
    CHECK(e[0].context == Context::other);
  }
}

TEST_CASE("detected events satisfy their defining invariants") {
  const auto segs = random_segments(4, 40);
  for (double threshold : {-0.5, -0.3}) {
    for (double d : {1.0, 2.0}) {
      EventConfig c;
      c.accel_threshold = threshold;
      c.min_duration = d;
      const auto events = detect_events(segs, c);
      CHECK_FALSE(events.empty());
      for (const auto& e : events) {
        const auto& obs = segs[e.segment_index].segment.observations;
        REQUIRE(e.onset_index + e.length_frames <= obs.size());
        for (std::size_t k = 0; k < e.length_frames; ++k)
          CHECK(obs[e.onset_index + k].follower.acceleration <= threshold);
        CHECK(e.max_decel <= e.mean_decel + 1e-12);
        CHECK(e.mean_decel <= threshold);
        CHECK(e.duration_s >= d - 1e-9);
        if (e.onset_index > 0) CHECK(obs[e.onset_index - 1].follower.acceleration > threshold);
        const auto after = e.onset_index + e.length_frames;
        if (after < obs.size()) CHECK(obs[after].follower.acceleration > threshold);
      }
    }
  }
}

TEST_CASE("duration monotonicity and threshold containment on random traces") {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto segs = random_segments(seed, 30);
    std::size_t previous = std::numeric_limits<std::size_t>::max();
    for (double d : {0.5, 1.0, 2.0, 3.0, 4.0}) {
      EventConfig c;
      c.min_duration = d;
      const auto n = detect_events(segs, c).size();
      CHECK(n <= previous);
      previous = n;
    }
    for (double d : {1.0, 2.0}) {
      EventConfig strict = at(-0.5), loose = at(-0.3);
      strict.min_duration = loose.min_duration = d;
      const auto a = detect_events(segs, strict);
      const auto b = detect_events(segs, loose);
      for (const auto& e : a) {
        bool contained = false;
        for (const auto& f : b)
          contained = contained || (f.segment_index == e.segment_index && f.onset_index <= e.onset_index &&
                                    e.onset_index + e.length_frames <= f.onset_index + f.length_frames);
        CHECK(contained);
      }
    }
  }
}

TEST_CASE("a looser threshold can merge two runs into one") {
  const auto accel = runs({{10, -0.6}, {1, -0.4}, {10, -0.6}, {30, 0.0}});
  CHECK(detect(accel, -0.5).size() == 2);
  CHECK(detect(accel, -0.3).size() == 1);
}

TEST_CASE("census tallies counts, shares and severities") {
  std::vector<cfkin::kinematics::AnnotatedSegment> segs;
  for (int i = 0; i < 10; ++i) {
    testkit::SegmentSpec spec;
    spec.vehicle = 10 + i;
    spec.accel = runs({{20, 0.0}, {12, -0.8}, {28, 0.0}});
    if (i == 0) spec.accel[25] = -2.0;
    segs.push_back(make_segment(spec));
  }
  std::vector<std::pair<EventConfig, std::vector<DecelerationEvent>>> grid;
  for (double d : {1.0, 2.0}) {
    EventConfig c;
    c.min_duration = d;
    grid.emplace_back(c, detect_events(segs, c));
  }
  const auto census = event_census(grid, 600, 5);
  REQUIRE(census.cells.size() == 2);
  const auto* one = census.find(-0.5, 1.0);
  REQUIRE(one);
  CHECK(one->count == 10);
  CHECK(one->pct_valid == doctest::Approx(100.0 * 10 / 600));
  CHECK(one->mild == 9);
  CHECK(one->moderate == 1);
  CHECK(one->mild + one->moderate + one->hard == one->count);
  CHECK_FALSE(one->insufficient);
  const auto* two = census.find(-0.5, 2.0);
  REQUIRE(two);
  CHECK(two->count == 0);
  CHECK(two->insufficient);
  CHECK(census.find(-0.3, 1.0) == nullptr);
}

TEST_CASE("severity and context names round trip") {
  for (auto s : {Severity::mild, Severity::moderate, Severity::hard}) CHECK(parse_severity(severity_name(s)) == s);
  for (auto c : {Context::leader_induced, Context::close_following, Context::free_flow, Context::other})
    CHECK(parse_context(context_name(c)) == c);
  CHECK_THROWS_AS(parse_severity("extreme"), cfkin::DataError);
}
