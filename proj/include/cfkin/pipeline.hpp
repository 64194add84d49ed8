#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfkin/cluster.hpp"
#include "cfkin/cues.hpp"
#include "cfkin/events.hpp"
#include "cfkin/ingest.hpp"
#include "cfkin/kinematics.hpp"
#include "cfkin/synth.hpp"
#include "cfkin/temporal.hpp"

namespace cfkin::pipeline {

inline constexpr const char* kVersion = "1.0.0";

struct PipelineConfig {
  std::vector<std::filesystem::path> inputs;
  std::optional<synth::SynthConfig> synth;
  ingest::Units units = ingest::Units::imperial;
  std::size_t chunk_size = ingest::kDefaultChunkSize;
  std::vector<double> thresholds{-0.5, -0.3};
  std::vector<double> durations{1.0, 2.0, 3.0, 4.0};
  std::vector<double> lags{-5.0, -3.0, -1.0};
  double analysis_duration = 1.0;  // the grid column carried into clustering
  int k_min = 2;
  int k_max = 8;
  std::uint64_t seed = 42;
  std::filesystem::path out = "cfkin_out";
  int workers = 1;
  bool dump_features = false;
  bool include_leader_flag = true;
  bool spacing_from_positions = false;
  kinematics::MedianPolicy median_policy = kinematics::MedianPolicy::exact;
  std::size_t min_events = 50;
  int restarts = 50;
  double alpha = 0.05;
};

void validate(const PipelineConfig& config);

/// Analysis-relevant settings as JSON (output path and worker count excluded,
/// since neither changes results).
nlohmann::json config_to_json(const PipelineConfig& config);
PipelineConfig config_from_json(const nlohmann::json& j);

struct InputDigest {
  std::string name;
  std::string sha256;
};

/// Everything up to and including the detection census.
struct Collected {
  ingest::FilterStats filter_stats;
  kinematics::FeatureSummary summary;
  std::vector<std::pair<events::EventConfig, std::vector<events::DecelerationEvent>>> grid;
  events::CensusReport census;
  std::optional<synth::GroundTruth> truth;
  std::vector<InputDigest> inputs;
  std::vector<kinematics::AnnotatedSegment> segments;  // kept only for the feature dump
};

/// Ingest, features, imputation, the detection grid and lagged extraction for
/// the analysis duration.
Collected collect(const PipelineConfig& config);

struct ThresholdAnalysis {
  double threshold = 0.0;
  std::size_t n_events = 0;
  bool skipped = false;
  std::string skip_reason;
  std::vector<events::DecelerationEvent> events;
  temporal::LagTable lag_table;
  cluster::Standardized standardized;
  cluster::ClusteringOutcome clustering;
  std::vector<cues::CueImportanceRow> cues;
  std::vector<cues::ClusterProfile> profiles;
  cues::PcaResult pca;
  std::vector<cues::RadarProfile> radar;
  std::optional<double> ari;  // against planted modes, synth runs only
};

struct Analysis {
  std::vector<ThresholdAnalysis> per_threshold;
  bool all_skipped() const;
};

/// Lags, clustering, cue ranking, profiles and projections per threshold.
Analysis analyze(const Collected& collected, const PipelineConfig& config);

struct RunResult {
  Collected collected;
  Analysis analysis;
  std::filesystem::path bundle;
};

/// Full run; the bundle is written atomically to config.out.
RunResult run_pipeline(const PipelineConfig& config);

/// Detection grid only; writes filter, feature, census and event files.
RunResult run_census(const PipelineConfig& config);

/// Re-runs the analysis from a bundle's intermediates.json and writes a new bundle.
RunResult rerun_report(const std::filesystem::path& intermediates, const std::filesystem::path& out, int workers);

}  // namespace cfkin::pipeline
