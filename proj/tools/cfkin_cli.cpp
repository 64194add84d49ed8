// Command-line front end: run, synth, census and report verbs.

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <regex>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <fmt/format.h>
#include <json.hpp>

#include "cfkin/error.hpp"
#include "cfkin/pipeline.hpp"
#include "cfkin/report.hpp"
#include "cfkin/synth.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitInsufficient = 4;

struct RawOptions {
  std::vector<std::string> inputs;
  std::string synth_config;
  std::string units = "imperial";
  std::size_t chunk_size = cfkin::ingest::kDefaultChunkSize;
  std::vector<double> thresholds{-0.5, -0.3};
  std::vector<double> durations{1.0, 2.0, 3.0, 4.0};
  std::vector<double> lags{-5.0, -3.0, -1.0};
  double analysis_duration = 1.0;
  std::string k_range = "2-8";
  std::uint64_t seed = 42;
  std::string out = "cfkin_out";
  int workers = 1;
  bool dump_features = false;
  bool no_leader_flag = false;
  bool spacing_from_positions = false;
  std::string median_policy = "exact";
  std::size_t min_events = 50;
  int restarts = 50;
  double alpha = 0.05;
};

cfkin::synth::SynthConfig load_synth(const std::string& spec, std::uint64_t seed, bool seed_given) {
  cfkin::synth::SynthConfig c;
  if (spec == "preset:three_mode") {
    c = cfkin::synth::SynthConfig::three_mode(300, seed);
  } else if (spec == "preset:spacing_null") {
    c = cfkin::synth::SynthConfig::spacing_null(300, seed);
  } else {
    std::ifstream in(spec);
    if (!in) throw cfkin::ConfigError("cannot read synth config " + spec);
    try {
      c = cfkin::synth::config_from_json(nlohmann::json::parse(in));
    } catch (const nlohmann::json::exception& e) {
      throw cfkin::ConfigError("synth config " + spec + " is not valid JSON: " + e.what());
    }
    if (seed_given) c.seed = seed;
  }
  return c;
}

cfkin::pipeline::PipelineConfig to_config(const RawOptions& o, bool seed_given) {
  cfkin::pipeline::PipelineConfig c;
  for (const auto& p : o.inputs) c.inputs.emplace_back(p);
  if (!o.synth_config.empty()) c.synth = load_synth(o.synth_config, o.seed, seed_given);
  c.units = cfkin::ingest::parse_units(o.units);
  c.chunk_size = o.chunk_size;
  c.thresholds = o.thresholds;
  c.durations = o.durations;
  c.lags = o.lags;
  c.analysis_duration = o.analysis_duration;
  static const std::regex range(R"(\s*(\d+)\s*[-:]\s*(\d+)\s*)");
  std::smatch m;
  if (!std::regex_match(o.k_range, m, range)) throw cfkin::ConfigError("--k-range expects MIN-MAX, got " + o.k_range);
  c.k_min = std::stoi(m[1]);
  c.k_max = std::stoi(m[2]);
  c.seed = o.seed;
  c.out = o.out;
  c.workers = o.workers;
  c.dump_features = o.dump_features;
  c.include_leader_flag = !o.no_leader_flag;
  c.spacing_from_positions = o.spacing_from_positions;
  if (o.median_policy == "exact")
    c.median_policy = cfkin::kinematics::MedianPolicy::exact;
  else if (o.median_policy == "p2")
    c.median_policy = cfkin::kinematics::MedianPolicy::p2;
  else
    throw cfkin::ConfigError("--median-policy expects exact or p2");
  c.min_events = o.min_events;
  c.restarts = o.restarts;
  c.alpha = o.alpha;
  return c;
}

void add_pipeline_options(CLI::App* cmd, RawOptions& o) {
  cmd->add_option("--input", o.inputs, "NGSIM-schema trajectory files (plain or gzip)");
  cmd->add_option("--synth-config", o.synth_config,
                  "Synthetic corpus config (JSON file, or preset:three_mode / preset:spacing_null)");
  cmd->add_option("--units", o.units, "Units of the input files")->check(CLI::IsMember({"imperial", "si"}));
  cmd->add_option("--chunk-size", o.chunk_size, "Rows per streamed chunk")->check(CLI::PositiveNumber);
  cmd->add_option("--thresholds", o.thresholds, "Acceleration thresholds, m/s^2")->delimiter(',');
  cmd->add_option("--durations", o.durations, "Minimum event durations, s")->delimiter(',');
  cmd->add_option("--lags", o.lags, "Lags before onset, s")->delimiter(',');
  cmd->add_option("--analysis-duration", o.analysis_duration, "Duration whose events are clustered");
  cmd->add_option("--k-range", o.k_range, "K sweep as MIN-MAX");
  cmd->add_option("--seed", o.seed, "Random seed");
  cmd->add_option("--out", o.out, "Output bundle directory");
  cmd->add_option("--workers", o.workers, "Worker threads for K-means restarts")->check(CLI::PositiveNumber);
  cmd->add_flag("--dump-features", o.dump_features, "Also write per-observation features.csv");
  cmd->add_flag("--no-leader-flag", o.no_leader_flag, "Leave the leader-braking flag out of the clustering vector");
  cmd->add_flag("--spacing-from-positions", o.spacing_from_positions, "Recompute spacing from Local_Y");
  cmd->add_option("--median-policy", o.median_policy, "Imputation median: exact or p2");
  cmd->add_option("--min-events", o.min_events, "Minimum events per threshold for downstream analysis");
  cmd->add_option("--restarts", o.restarts, "K-means restarts")->check(CLI::PositiveNumber);
  cmd->add_option("--alpha", o.alpha, "Significance level for lag tests");
}

int summarize(const cfkin::pipeline::RunResult& r, bool census_only) {
  const auto& s = r.collected.filter_stats;
  std::cout << fmt::format("retained {} of {} rows from {} vehicles\n", s.retained_count, s.raw_count,
                           s.retained_vehicles);
  for (const auto& cell : r.collected.census.cells)
    std::cout << fmt::format("  threshold {:>5} duration {:>3} s: {} events{}\n", cell.threshold, cell.min_duration,
                             cell.count, cell.insufficient ? " (insufficient)" : "");
  if (census_only) {
    std::cout << "bundle written to " << r.bundle.string() << "\n";
    return 0;
  }
  for (const auto& ta : r.analysis.per_threshold) {
    if (ta.skipped) {
      std::cout << fmt::format("threshold {}: skipped ({})\n", ta.threshold, ta.skip_reason);
      continue;
    }
    std::cout << fmt::format("threshold {}: {} events, K = {} ({}), top cue {}", ta.threshold, ta.n_events,
                             ta.clustering.selected_k, cfkin::cluster::rationale_name(ta.clustering.rationale),
                             ta.cues.empty() ? "-" : ta.cues.front().feature);
    if (ta.ari) std::cout << fmt::format(", ARI {:.4f}", *ta.ari);
    std::cout << "\n";
  }
  std::cout << "bundle written to " << r.bundle.string() << "\n";
  return r.analysis.all_skipped() ? kExitInsufficient : 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Car-following kinematics: event detection, clustering and cue importance"};
  app.set_config("--config", "", "Key-value config file; command-line flags take precedence");
  app.require_subcommand(1);

  RawOptions run_opts;
  auto* run = app.add_subcommand("run", "Full pipeline");
  add_pipeline_options(run, run_opts);

  RawOptions census_opts;
  auto* census = app.add_subcommand("census", "Detection grid only");
  add_pipeline_options(census, census_opts);

  std::string synth_spec = "preset:three_mode";
  std::string synth_out = "synth_corpus";
  std::uint64_t synth_seed = 1;
  int synth_vehicles = 0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus with planted modes");
  synth->add_option("--synth-config", synth_spec, "JSON config or preset:three_mode / preset:spacing_null");
  synth->add_option("--seed", synth_seed, "Random seed");
  synth->add_option("--n-vehicles", synth_vehicles, "Override the number of followers");
  synth->add_option("--out", synth_out, "Output directory");

  std::string report_in;
  std::string report_out = "cfkin_report";
  int report_workers = 1;
  auto* rep = app.add_subcommand("report", "Re-run the analysis from a bundle's intermediates");
  rep->add_option("--input", report_in, "Bundle directory or intermediates.json")->required();
  rep->add_option("--out", report_out, "Output bundle directory");
  rep->add_option("--workers", report_workers, "Worker threads")->check(CLI::PositiveNumber);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*run) {
      const auto config = to_config(run_opts, run->count("--seed") > 0);
      return summarize(cfkin::pipeline::run_pipeline(config), false);
    }
    if (*census) {
      const auto config = to_config(census_opts, census->count("--seed") > 0);
      return summarize(cfkin::pipeline::run_census(config), true);
    }
    if (*synth) {
      auto config = load_synth(synth_spec, synth_seed, synth->count("--seed") > 0);
      if (synth_vehicles > 0) config.n_vehicles = synth_vehicles;
      const auto corpus = cfkin::synth::generate_trajectories(config);
      const std::filesystem::path dir(synth_out);
      std::filesystem::create_directories(dir);
      std::ofstream csv(dir / "corpus.csv", std::ios::binary);
      cfkin::synth::write_ngsim_csv(csv, corpus.records);
      std::ofstream(dir / "truth.json") << cfkin::synth::truth_to_json(corpus.truth).dump(2) << "\n";
      std::ofstream(dir / "synth_config.json") << cfkin::synth::config_to_json(config).dump(2) << "\n";
      if (!csv) throw cfkin::ConfigError("failed writing " + (dir / "corpus.csv").string());
      std::cout << fmt::format("{} rows, {} followers, {} planted episodes written to {}\n", corpus.records.size(),
                               corpus.truth.vehicles.size(), corpus.truth.episodes.size(), dir.string());
      return 0;
    }
    if (*rep) {
      std::filesystem::path in(report_in);
      if (std::filesystem::is_directory(in)) in /= "intermediates.json";
      return summarize(cfkin::pipeline::rerun_report(in, report_out, report_workers), false);
    }
  } catch (const cfkin::ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const cfkin::DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  }
  return 0;
}
