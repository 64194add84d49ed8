#include <doctest.h>

#include <algorithm>
#include <map>
#include <random>
#include <sstream>

#include "cfkin/error.hpp"
#include "cfkin/events.hpp"
#include "cfkin/ingest.hpp"
#include "cfkin/kinematics.hpp"
#include "cfkin/pipeline.hpp"
#include "cfkin/synth.hpp"
#include "oracles/reference.hpp"
#include "support.hpp"

using namespace cfkin::synth;

namespace {

SynthConfig single_mode(int n, double intensity, double duration) {
  SynthConfig c;
  c.n_vehicles = n;
  c.seed = 3;
  ModeSpec m;
  m.name = "only";
  m.intensity = intensity;
  m.duration_s = duration;
  c.modes = {m};
  c.noise = NoiseSpec{0.0, 0.0, 0.0, 0.0, 0.0};
  return c;
}

std::vector<cfkin::kinematics::AnnotatedSegment> ingest_corpus(const SynthCorpus& corpus) {
  std::ostringstream csv;
  write_ngsim_csv(csv, corpus.records);
  const auto text = csv.str();
  cfkin::ingest::IngestOptions o;
  auto r = cfkin::ingest::ingest([&] { return std::make_unique<std::istringstream>(text); }, "synth", o);
  auto segs = cfkin::kinematics::annotate(std::move(r.segments));
  cfkin::kinematics::impute_undefined(segs);
  return segs;
}

// Pulls every mode's onset targets toward the across-mode mean.
SynthConfig shrunk(double factor, std::uint64_t seed) {
  auto c = SynthConfig::three_mode(150, seed);
  double v = 0, s = 0, e = 0, a = 0;
  for (const auto& m : c.modes) {
    v += m.v_rel / 3;
    s += m.spacing / 3;
    e += m.ego_speed / 3;
    a += m.intensity / 3;
  }
  for (auto& m : c.modes) {
    m.v_rel = v + factor * (m.v_rel - v);
    m.spacing = s + factor * (m.spacing - s);
    m.ego_speed = e + factor * (m.ego_speed - e);
    m.intensity = a + factor * (m.intensity - a);
  }
  return c;
}

}  // namespace

TEST_CASE("preset configs validate and round-trip through JSON") {
  for (const auto& c : {SynthConfig::three_mode(), SynthConfig::spacing_null()}) {
    CHECK_NOTHROW(validate(c));
    double share = 0;
    for (const auto& m : c.modes) {
      share += m.share;
      CHECK(m.intensity < 0.0);
    }
    CHECK(share == doctest::Approx(1.0));
    const auto back = config_from_json(config_to_json(c));
    CHECK(config_to_json(back) == config_to_json(c));
  }
}

TEST_CASE("invalid synth configs are rejected") {
  auto c = SynthConfig::three_mode();
  c.modes[0].share = 0.7;
  CHECK_THROWS_AS(validate(c), cfkin::ConfigError);
  c = SynthConfig::three_mode();
  c.modes[1].intensity = 0.5;
  CHECK_THROWS_AS(validate(c), cfkin::ConfigError);
  c = SynthConfig::three_mode();
  c.modes[2].duration_s = 1.25;
  CHECK_THROWS_AS(validate(c), cfkin::ConfigError);
  c = SynthConfig::three_mode();
  c.modes[0].spacing = 250.0;
  CHECK_THROWS_AS(validate(c), cfkin::ConfigError);
  c = SynthConfig::three_mode();
  c.modes[0].ego_speed = 0.5;
  CHECK_THROWS_AS(validate(c), cfkin::ConfigError);
  c = SynthConfig::three_mode();
  c.onset_frame = 445;
  CHECK_THROWS_AS(validate(c), cfkin::ConfigError);
  CHECK_THROWS_AS(config_from_json(nlohmann::json{{"modes", "nope"}}), cfkin::ConfigError);
}

TEST_CASE("planted shares follow the configured split") {
  const auto t = planted_truth(SynthConfig::three_mode(300, 1));
  std::map<int, int> counts;
  for (const auto& v : t.vehicles) ++counts[v.mode];
  CHECK(counts[0] == 180);
  CHECK(counts[1] == 90);
  CHECK(counts[2] == 30);
  const auto odd = planted_truth(SynthConfig::three_mode(7, 1));
  std::map<int, int> c7;
  for (const auto& v : odd.vehicles) ++c7[v.mode];
  CHECK(c7[0] + c7[1] + c7[2] == 7);
  CHECK(c7[0] == 4);
  CHECK(c7[1] == 2);
  CHECK(c7[2] == 1);
}

TEST_CASE("generated records and episodes are well formed") {
  const auto c = SynthConfig::three_mode(30, 5);
  const auto corpus = generate_trajectories(c);
  CHECK(corpus.records.size() == static_cast<std::size_t>(2 * 30 * c.frames_per_vehicle));
  CHECK(corpus.truth.vehicles.size() == 30);
  CHECK(corpus.truth.episodes.size() == 30);
  std::map<std::int64_t, std::pair<std::int64_t, std::int64_t>> range;
  for (const auto& r : corpus.records) {
    auto [it, fresh] = range.emplace(r.vehicle_id, std::make_pair(r.frame_id, r.frame_id));
    it->second.first = std::min(it->second.first, r.frame_id);
    it->second.second = std::max(it->second.second, r.frame_id);
    CHECK(r.units == cfkin::ingest::Units::imperial);
  }
  for (const auto& e : corpus.truth.episodes) {
    const auto& [lo, hi] = range.at(e.vehicle_id);
    CHECK(e.onset_frame >= lo);
    CHECK(e.onset_frame + static_cast<std::int64_t>(std::llround(e.duration_s / 0.1)) - 1 <= hi);
    CHECK(e.max_decel < 0.0);
    const double steps = e.duration_s / 0.1;
    CHECK(std::abs(steps - std::round(steps)) < 1e-9);
  }
  for (const auto& v : corpus.truth.vehicles) CHECK(corpus.truth.mode_of(v.vehicle_id) == v.mode);
  CHECK(corpus.truth.mode_of(-5) == -1);
  const auto back = truth_from_json(truth_to_json(corpus.truth));
  CHECK(truth_to_json(back) == truth_to_json(corpus.truth));
}

TEST_CASE("generation is deterministic in the seed") {
  const auto a = generate_trajectories(SynthConfig::three_mode(20, 9));
  const auto b = generate_trajectories(SynthConfig::three_mode(20, 9));
  const auto c = generate_trajectories(SynthConfig::three_mode(20, 10));
  CHECK(a.records == b.records);
  CHECK(a.records != c.records);
  const auto d = generate_trajectories(SynthConfig::three_mode(20, 1), 9);
  CHECK(d.records == a.records);
}

TEST_CASE("a noise-free episode reproduces its intensity") {
  const auto corpus = generate_trajectories(single_mode(1, -2.0, 1.5));
  const auto segs = ingest_corpus(corpus);
  cfkin::events::EventConfig cfg;
  const auto events = cfkin::events::detect_events(segs, cfg);
  REQUIRE(events.size() == 1);
  CHECK(events[0].max_decel == doctest::Approx(-2.0).epsilon(0.01 / 2.0));
  CHECK(events[0].duration_s == doctest::Approx(1.5));
  CHECK(events[0].onset_frame == corpus.truth.episodes[0].onset_frame);
}

TEST_CASE("ten planted 1.2 s runs at -0.8 populate only the 1 s column") {
  cfkin::pipeline::PipelineConfig p;
  p.synth = single_mode(10, -0.8, 1.2);
  p.thresholds = {-0.5};
  p.durations = {1.0, 2.0};
  const auto col = cfkin::pipeline::collect(p);
  const auto* one = col.census.find(-0.5, 1.0);
  const auto* two = col.census.find(-0.5, 2.0);
  REQUIRE(one);
  REQUIRE(two);
  CHECK(one->count == 10);
  CHECK(two->count == 0);
  CHECK(col.filter_stats.raw_count == col.filter_stats.retained_count + col.filter_stats.total_rejected());
}

TEST_CASE("infeasible targets are a configuration error") {
  auto c = single_mode(1, -1.0, 1.2);
  c.modes[0].v_rel = 30.0;  // the leader would need to stop and reverse
  CHECK_THROWS_AS(generate_trajectories(c), cfkin::ConfigError);
}

TEST_CASE("adjusted Rand index against pair counting") {
  const std::vector<int> a{0, 0, 1, 1, 2, 2};
  const std::vector<int> relabeled{2, 2, 0, 0, 1, 1};
  CHECK(adjusted_rand_index(a, a) == doctest::Approx(1.0));
  CHECK(adjusted_rand_index(a, relabeled) == doctest::Approx(1.0));
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const auto x = testkit::random_labels(rng, 60, 3);
    const auto y = testkit::random_labels(rng, 60, 4);
    CHECK(adjusted_rand_index(x, y) == doctest::Approx(oracle::ari_pairs(x, y)).epsilon(1e-12));
  }
}

TEST_CASE("wider mode separation gives better recovered silhouettes") {
  std::vector<double> mean_sil;
  for (double factor : {0.35, 0.65, 1.0}) {
    double total = 0.0;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
      cfkin::pipeline::PipelineConfig p;
      p.synth = shrunk(factor, seed);
      p.thresholds = {-0.5};
      p.durations = {1.0};
      p.k_min = p.k_max = 3;
      p.restarts = 10;
      p.min_events = 10;
      const auto col = cfkin::pipeline::collect(p);
      const auto an = cfkin::pipeline::analyze(col, p);
      REQUIRE(an.per_threshold.size() == 1);
      REQUIRE_FALSE(an.per_threshold[0].skipped);
      total += an.per_threshold[0].clustering.selected().silhouette;
    }
    mean_sil.push_back(total / 5);
  }
  CHECK(mean_sil[0] < mean_sil[1]);
  CHECK(mean_sil[1] < mean_sil[2]);
}
