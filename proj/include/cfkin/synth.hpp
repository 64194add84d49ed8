#pragma once

#include <cstddef>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "cfkin/ingest.hpp"

namespace cfkin::synth {

/// One planted behavioural mode. Targets describe the dyad state at the onset
/// of the follower's braking episode.
struct ModeSpec {
  std::string name;
  double share = 1.0;
  double v_rel = 3.0;        // m/s at onset
  double spacing = 35.0;     // m at onset
  double ego_speed = 20.0;   // m/s cruise
  double intensity = -1.0;   // m/s^2 during the episode
  double duration_s = 1.2;   // 0 = no episode
  double leader_brake_prob = 0.0;  // leader decelerating hard through onset
};

struct NoiseSpec {
  double accel_sd = 0.03;      // per frame, both vehicles
  double v_rel_sd = 0.0;       // per vehicle jitter of the onset target
  double spacing_sd = 0.0;
  double ego_speed_sd = 0.0;
  double intensity_sd = 0.0;
};

struct SynthConfig {
  int n_vehicles = 100;  // followers; each gets its own scripted leader
  int frames_per_vehicle = 450;
  int onset_frame = 300;
  std::vector<ModeSpec> modes;
  NoiseSpec noise;
  std::uint64_t seed = 1;
  ingest::Units output_units = ingest::Units::imperial;
  std::string site_tag = "synth";

  /// Three modes whose onset TTC sits near 17, 8 and 4 s.
  static SynthConfig three_mode(int n_vehicles = 300, std::uint64_t seed = 1);
  /// Modes sharing one spacing distribution but differing in closure rate.
  static SynthConfig spacing_null(int n_vehicles = 300, std::uint64_t seed = 1);
};

void validate(const SynthConfig& config);

SynthConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const SynthConfig& config);

struct TruthVehicle {
  std::int64_t vehicle_id = 0;  // follower
  std::int64_t leader_id = 0;
  int mode = 0;
  std::string mode_name;
};

struct TruthEpisode {
  std::int64_t vehicle_id = 0;
  std::int64_t onset_frame = 0;
  double duration_s = 0.0;
  double max_decel = 0.0;  // nominal, before noise
  bool leader_braking = false;
};

struct GroundTruth {
  std::vector<TruthVehicle> vehicles;
  std::vector<TruthEpisode> episodes;

  /// Planted mode of a follower, or -1 if unknown.
  int mode_of(std::int64_t vehicle_id) const;
};

GroundTruth planted_truth(const SynthConfig& config);
nlohmann::json truth_to_json(const GroundTruth& truth);
GroundTruth truth_from_json(const nlohmann::json& j);

struct SynthCorpus {
  std::vector<ingest::TrajectoryRecord> records;  // in config.output_units, ordered by (vehicle, frame)
  GroundTruth truth;
};

/// Scripted leaders plus followers that cruise, brake through the planted
/// episode, then follow with a clamped IDM. Throws ConfigError when the config is
/// infeasible (e.g. the gap would close or exceed filter bounds).
SynthCorpus generate_trajectories(const SynthConfig& config);
SynthCorpus generate_trajectories(SynthConfig config, std::uint64_t seed);

/// Writes records with an NGSIM header row.
void write_ngsim_csv(std::ostream& out, std::span<const ingest::TrajectoryRecord> records);

/// Chance-corrected agreement between two labelings.
double adjusted_rand_index(std::span<const int> a, std::span<const int> b);

}  // namespace cfkin::synth
