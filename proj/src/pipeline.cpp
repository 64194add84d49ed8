#include "cfkin/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include <fmt/format.h>

#include "cfkin/error.hpp"
#include "cfkin/report.hpp"

namespace cfkin::pipeline {

namespace {

std::string median_policy_name(kinematics::MedianPolicy p) {
  return p == kinematics::MedianPolicy::exact ? "exact" : "p2";
}

kinematics::MedianPolicy parse_median_policy(const std::string& s) {
  if (s == "exact") return kinematics::MedianPolicy::exact;
  if (s == "p2") return kinematics::MedianPolicy::p2;
  throw ConfigError("unknown median policy '" + s + "' (expected exact or p2)");
}

const std::vector<events::DecelerationEvent>* analysis_cell(const Collected& c, double threshold, double duration) {
  for (const auto& [cfg, evts] : c.grid)
    if (events::same_value(cfg.accel_threshold, threshold) && events::same_value(cfg.min_duration, duration))
      return &evts;
  return nullptr;
}

}  // namespace

void validate(const PipelineConfig& c) {
  if (c.inputs.empty() && !c.synth) throw ConfigError("no input: give --input paths or a synth config");
  if (!c.inputs.empty() && c.synth) throw ConfigError("give either input paths or a synth config, not both");
  if (c.thresholds.empty()) throw ConfigError("at least one threshold is required");
  if (c.durations.empty()) throw ConfigError("at least one duration is required");
  for (double t : c.thresholds) {
    events::EventConfig e;
    e.accel_threshold = t;
    events::validate(e);
    events::severity_bounds_for(e);
  }
  for (double d : c.durations)
    if (!(d > 0.0)) throw ConfigError(fmt::format("duration {} must be positive", d));
  if (std::none_of(c.durations.begin(), c.durations.end(),
                   [&](double d) { return events::same_value(d, c.analysis_duration); }))
    throw ConfigError(fmt::format("analysis duration {} s is not in the duration list", c.analysis_duration));
  for (double l : c.lags)
    if (!(l < 0.0)) throw ConfigError(fmt::format("lag {} must be negative", l));
  if (c.k_min < 2 || c.k_max < c.k_min) throw ConfigError(fmt::format("bad K range {}-{}", c.k_min, c.k_max));
  if (c.chunk_size < 1) throw ConfigError("chunk size must be >= 1");
  if (c.workers < 1) throw ConfigError("workers must be >= 1");
  if (c.restarts < 1) throw ConfigError("restarts must be >= 1");
  if (!(c.alpha > 0.0 && c.alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (c.synth) synth::validate(*c.synth);
}

nlohmann::json config_to_json(const PipelineConfig& c) {
  nlohmann::ordered_json j;
  auto inputs = nlohmann::ordered_json::array();
  for (const auto& p : c.inputs) inputs.push_back(p.generic_string());
  j["inputs"] = std::move(inputs);
  j["synth"] = c.synth ? nlohmann::ordered_json(synth::config_to_json(*c.synth)) : nlohmann::ordered_json();
  j["units"] = std::string(ingest::units_name(c.units));
  j["chunk_size"] = c.chunk_size;
  j["thresholds"] = c.thresholds;
  j["durations"] = c.durations;
  j["lags"] = c.lags;
  j["analysis_duration"] = c.analysis_duration;
  j["k_min"] = c.k_min;
  j["k_max"] = c.k_max;
  j["seed"] = c.seed;
  j["dump_features"] = c.dump_features;
  j["include_leader_flag"] = c.include_leader_flag;
  j["spacing_from_positions"] = c.spacing_from_positions;
  j["median_policy"] = median_policy_name(c.median_policy);
  j["min_events"] = c.min_events;
  j["restarts"] = c.restarts;
  j["alpha"] = c.alpha;
  return nlohmann::json::parse(j.dump());
}

PipelineConfig config_from_json(const nlohmann::json& j) {
  PipelineConfig c;
  try {
    for (const auto& p : j.at("inputs")) c.inputs.emplace_back(p.get<std::string>());
    if (j.contains("synth") && !j.at("synth").is_null()) c.synth = synth::config_from_json(j.at("synth"));
    c.units = ingest::parse_units(j.at("units").get<std::string>());
    c.chunk_size = j.at("chunk_size").get<std::size_t>();
    c.thresholds = j.at("thresholds").get<std::vector<double>>();
    c.durations = j.at("durations").get<std::vector<double>>();
    c.lags = j.at("lags").get<std::vector<double>>();
    c.analysis_duration = j.at("analysis_duration").get<double>();
    c.k_min = j.at("k_min").get<int>();
    c.k_max = j.at("k_max").get<int>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.dump_features = j.at("dump_features").get<bool>();
    c.include_leader_flag = j.at("include_leader_flag").get<bool>();
    c.spacing_from_positions = j.at("spacing_from_positions").get<bool>();
    c.median_policy = parse_median_policy(j.at("median_policy").get<std::string>());
    c.min_events = j.at("min_events").get<std::size_t>();
    c.restarts = j.at("restarts").get<int>();
    c.alpha = j.at("alpha").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad pipeline config: ") + e.what());
  }
  return c;
}

Collected collect(const PipelineConfig& config) {
  validate(config);
  Collected out;

  ingest::IngestOptions io;
  io.chunk_size = config.chunk_size;
  io.units = config.units;
  io.join.spacing_from_positions = config.spacing_from_positions;

  ingest::IngestResult ingested;
  if (config.synth) {
    const auto corpus = synth::generate_trajectories(*config.synth);
    std::ostringstream csv;
    synth::write_ngsim_csv(csv, corpus.records);
    auto text = std::make_shared<const std::string>(csv.str());
    out.inputs.push_back({"synth_config.json", report::sha256_hex(synth::config_to_json(*config.synth).dump())});
    out.inputs.push_back({"synth_corpus.csv", report::sha256_hex(*text)});
    out.truth = corpus.truth;
    io.units = config.synth->output_units;
    ingested = ingest::ingest([text] { return std::make_unique<std::istringstream>(*text); }, config.synth->site_tag, io);
  } else {
    for (const auto& p : config.inputs) {
      if (!std::filesystem::is_regular_file(p)) throw ConfigError("input not found: " + p.string());
      out.inputs.push_back({p.filename().string(), report::sha256_file(p)});
    }
    ingested = ingest::ingest_files(config.inputs, io);
  }
  out.filter_stats = ingested.stats;

  auto segments = kinematics::annotate(std::move(ingested.segments));
  if (segments.empty()) throw DataError("no car-following segment survived the filters");
  const auto medians = kinematics::impute_undefined(segments, config.median_policy);
  out.summary = kinematics::dataset_summary(segments);
  out.summary.medians = medians;

  for (double t : config.thresholds) {
    for (double d : config.durations) {
      events::EventConfig ec;
      ec.accel_threshold = t;
      ec.min_duration = d;
      auto evts = events::detect_events(segments, ec);
      if (events::same_value(d, config.analysis_duration))
        for (auto& e : evts) e.lagged = temporal::extract_lagged(e, segments[e.segment_index], config.lags);
      out.grid.emplace_back(ec, std::move(evts));
    }
  }
  out.census = events::event_census(out.grid, out.summary.observations, config.min_events);
  if (config.dump_features) out.segments = std::move(segments);
  return out;
}

bool Analysis::all_skipped() const {
  return std::all_of(per_threshold.begin(), per_threshold.end(), [](const auto& t) { return t.skipped; });
}

Analysis analyze(const Collected& collected, const PipelineConfig& config) {
  Analysis analysis;
  for (double t : config.thresholds) {
    ThresholdAnalysis ta;
    ta.threshold = t;
    const auto* evts = analysis_cell(collected, t, config.analysis_duration);
    if (!evts) throw ConfigError(fmt::format("no detection cell for threshold {}", t));
    ta.n_events = evts->size();
    if (ta.n_events < config.min_events) {
      ta.skipped = true;
      ta.skip_reason = fmt::format("{} events at {} m/s^2 / {} s, below the minimum of {}", ta.n_events, t,
                                   config.analysis_duration, config.min_events);
      analysis.per_threshold.push_back(std::move(ta));
      continue;
    }
    ta.events = *evts;
    ta.lag_table = temporal::precedence_report(ta.events, config.lags, config.alpha);

    const auto matrix = cluster::build_event_matrix(ta.events, config.include_leader_flag);
    ta.standardized = cluster::standardize(matrix);
    cluster::KMeansOptions ko;
    ko.restarts = config.restarts;
    ko.workers = config.workers;
    ta.clustering = cluster::cluster_events(ta.standardized.values, config.k_min, config.k_max, config.seed, ko);
    const auto& labels = ta.clustering.selected().labels;

    ta.cues = cues::rank_cues(ta.events, labels);
    ta.profiles = cues::cluster_profile(ta.events, labels);
    ta.pca = cues::pca_project(ta.standardized.values, 3);
    ta.radar = cues::radar_data(ta.events, labels);

    if (collected.truth) {
      std::vector<int> planted;
      planted.reserve(ta.events.size());
      for (const auto& e : ta.events) planted.push_back(collected.truth->mode_of(e.vehicle_id));
      ta.ari = synth::adjusted_rand_index(planted, labels);
    }
    analysis.per_threshold.push_back(std::move(ta));
  }

  std::vector<std::vector<cues::CueImportanceRow>> tables;
  for (const auto& ta : analysis.per_threshold)
    if (!ta.skipped) tables.push_back(ta.cues);
  cues::mark_reversals(tables);
  std::size_t next = 0;
  for (auto& ta : analysis.per_threshold)
    if (!ta.skipped) ta.cues = std::move(tables[next++]);
  return analysis;
}

RunResult run_pipeline(const PipelineConfig& config) {
  validate(config);
  report::check_writable(config.out);
  RunResult r;
  r.collected = collect(config);
  r.analysis = analyze(r.collected, config);
  report::write_bundle(report::build_bundle(r.collected, r.analysis, config), config.out);
  r.bundle = config.out;
  return r;
}

RunResult run_census(const PipelineConfig& config) {
  validate(config);
  report::check_writable(config.out);
  RunResult r;
  r.collected = collect(config);
  report::write_bundle(report::build_bundle(r.collected, r.analysis, config, true), config.out);
  r.bundle = config.out;
  return r;
}

RunResult rerun_report(const std::filesystem::path& intermediates, const std::filesystem::path& out, int workers) {
  std::ifstream in(intermediates);
  if (!in) throw ConfigError("cannot read " + intermediates.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("malformed intermediates file: " + std::string(e.what()));
  }
  auto [collected, config] = report::intermediates_from_json(j);
  config.out = out;
  config.workers = workers;
  report::check_writable(out);
  RunResult r;
  r.analysis = analyze(collected, config);
  r.collected = std::move(collected);
  report::write_bundle(report::build_bundle(r.collected, r.analysis, config), out);
  r.bundle = out;
  return r;
}

}  // namespace cfkin::pipeline
