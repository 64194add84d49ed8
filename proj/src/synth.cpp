#include "cfkin/synth.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <ostream>
#include <random>

#include <fmt/format.h>

#include "cfkin/error.hpp"

namespace cfkin::synth {

namespace {
constexpr double kDt = ingest::kFrameInterval;
constexpr std::int64_t kTimeBase = 1'113'433'136'100;  // ms
constexpr double kMaxSpacing = 200.0;
constexpr double kMinSpeed = 1.0;

// Leader scripts.
constexpr double kHardLeaderDecel = 0.8;    // minimum magnitude, m/s^2
constexpr double kGentleLeaderDecel = 0.35;  // stays above the braking-flag cut
constexpr double kLeaderRecovery = 0.8;
constexpr int kGentleClearance = 12;  // frames between gentle ramp end and onset

// Follower noise is clipped so it never creates or breaks a braking run.
constexpr double kNoiseClip = 0.1;
constexpr double kCruiseFloor = -0.2;

// IDM with published default parameters; desired speed is offset from cruise.
struct Idm {
  double desired_factor = 1.2;
  double headway = 1.6;
  double jam_gap = 2.0;
  double max_accel = 0.73;
  double comfort_decel = 1.67;
  double exponent = 4.0;
  double vehicle_length = 5.0;

  double accel(double v, double v_leader, double spacing, double cruise) const {
    const double v0 = desired_factor * cruise;
    const double gap = std::max(spacing - vehicle_length, 0.1);
    const double dv = v - v_leader;
    const double s_star = jam_gap + std::max(0.0, v * headway + v * dv / (2.0 * std::sqrt(max_accel * comfort_decel)));
    return max_accel * (1.0 - std::pow(v / v0, exponent) - (s_star / gap) * (s_star / gap));
  }
};

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t vehicle_seed(std::uint64_t seed, int vehicle, std::uint64_t stream) {
  return splitmix64(splitmix64(seed ^ (stream * 0x632BE59BD9B4E019ULL)) + static_cast<std::uint64_t>(vehicle));
}

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

int episode_frames(double duration_s) { return static_cast<int>(std::lround(duration_s / kDt)); }

// Largest-remainder apportionment; ties go to the earlier mode.
std::vector<int> mode_counts(const SynthConfig& c) {
  const auto m = c.modes.size();
  std::vector<int> counts(m);
  std::vector<std::pair<double, std::size_t>> rem;
  int assigned = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double q = c.modes[i].share * c.n_vehicles;
    counts[i] = static_cast<int>(std::floor(q + 1e-9));
    assigned += counts[i];
    rem.emplace_back(q - counts[i], i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first + 1e-12; });
  for (std::size_t j = 0; assigned < c.n_vehicles; ++j, ++assigned) ++counts[rem[j % m].second];
  return counts;
}

std::vector<int> mode_of_vehicle(const SynthConfig& c) {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(c.n_vehicles));
  const auto counts = mode_counts(c);
  for (std::size_t m = 0; m < counts.size(); ++m) out.insert(out.end(), static_cast<std::size_t>(counts[m]), static_cast<int>(m));
  return out;
}

bool draws_leader_braking(const SynthConfig& c, int vehicle, const ModeSpec& mode) {
  std::mt19937_64 plan(vehicle_seed(c.seed, vehicle, 1));
  return uniform01(plan) < mode.leader_brake_prob;
}

std::int64_t leader_id(int i) { return 2 * static_cast<std::int64_t>(i) + 1; }
std::int64_t follower_id(int i) { return 2 * static_cast<std::int64_t>(i) + 2; }

struct VehiclePlan {
  double cruise = 0.0;
  double v_rel = 0.0;
  double spacing = 0.0;
  double intensity = 0.0;
  int episode = 0;  // frames
  bool leader_braking = false;
};

struct Trace {
  std::vector<double> x, v, a;
  explicit Trace(std::size_t n) : x(n), v(n), a(n) {}
};

void integrate_step(Trace& t, std::size_t i) {
  t.v[i + 1] = t.v[i] + t.a[i] * kDt;
  t.x[i + 1] = t.x[i] + t.v[i] * kDt + 0.5 * t.a[i] * kDt * kDt;
}

[[noreturn]] void infeasible(int vehicle, const std::string& why) {
  throw ConfigError(fmt::format("synth config infeasible for follower {}: {}", vehicle, why));
}

std::vector<ingest::TrajectoryRecord> simulate_vehicle(const SynthConfig& c, int i, const ModeSpec& mode) {
  const auto frames = static_cast<std::size_t>(c.frames_per_vehicle);
  const auto onset = static_cast<std::size_t>(c.onset_frame);
  std::mt19937_64 rng(vehicle_seed(c.seed, i, 2));
  std::normal_distribution<double> gauss(0.0, 1.0);
  auto jitter = [&](double sd) { return sd > 0.0 ? sd * gauss(rng) : 0.0; };
  auto accel_noise = [&] { return std::clamp(jitter(c.noise.accel_sd), -kNoiseClip, kNoiseClip); };

  VehiclePlan p;
  p.cruise = mode.ego_speed + jitter(c.noise.ego_speed_sd);
  p.episode = episode_frames(mode.duration_s);
  p.leader_braking = draws_leader_braking(c, i, mode);
  if (p.episode > 0) {
    p.v_rel = std::max(0.5, mode.v_rel + jitter(c.noise.v_rel_sd));
    p.spacing = std::max(5.0, mode.spacing + jitter(c.noise.spacing_sd));
    p.intensity = std::clamp(mode.intensity + jitter(c.noise.intensity_sd), 1.5 * mode.intensity, 0.75 * mode.intensity);
  } else {
    p.spacing = std::max(5.0, mode.spacing + jitter(c.noise.spacing_sd));
  }

  // Leader: cruise, then a scripted slowdown that leaves it v_rel below cruise at onset.
  Trace lead(frames);
  lead.v[0] = p.cruise;
  std::vector<double> script(frames, 0.0);
  if (p.episode > 0) {
    std::size_t from = 0, to = 0;  // inclusive ramp frames
    double decel = 0.0;
    if (p.leader_braking) {
      const double mag = std::max(p.v_rel / 3.0, kHardLeaderDecel);
      const int n = std::max(1, static_cast<int>(std::floor(p.v_rel / (mag * kDt))));
      decel = -p.v_rel / (n * kDt);
      if (static_cast<int>(onset) < n) infeasible(i, "leader ramp starts before the first frame");
      from = onset - static_cast<std::size_t>(n);
      to = onset;  // still braking at onset; the onset frame itself is not integrated before onset
    } else {
      const int n = std::max(1, static_cast<int>(std::lround(p.v_rel / (kGentleLeaderDecel * kDt))));
      decel = -p.v_rel / (n * kDt);
      if (static_cast<int>(onset) < n + kGentleClearance) infeasible(i, "gentle leader ramp starts before the first frame");
      to = onset - kGentleClearance - 1;
      from = to + 1 - static_cast<std::size_t>(n);
    }
    for (std::size_t f = from; f <= to; ++f) script[f] = decel;
  }
  for (std::size_t f = 0; f < frames; ++f) {
    double a = script[f];
    if (p.episode > 0 && f > onset) a = lead.v[f] < p.cruise ? std::min(kLeaderRecovery, (p.cruise - lead.v[f]) / kDt) : 0.0;
    lead.a[f] = a + accel_noise();
    if (f + 1 < frames) integrate_step(lead, f);
  }

  // Follower.
  Trace fol(frames);
  fol.v[0] = p.cruise;
  const Idm idm;
  const std::size_t scripted_end = p.episode > 0 ? onset + static_cast<std::size_t>(p.episode) : 0;
  double offset = 0.0;  // leader position relative to the follower's start
  if (p.episode == 0) offset = p.spacing;
  for (std::size_t f = 0; f < frames; ++f) {
    if (f == scripted_end && p.episode > 0) offset = p.spacing - (lead.x[onset] - fol.x[onset]);
    double a = 0.0;
    if (f < scripted_end) {
      a = f < onset ? std::max(kCruiseFloor, accel_noise()) : p.intensity + accel_noise();
    } else {
      const double spacing = lead.x[f] + offset - fol.x[f];
      a = std::max(kCruiseFloor, idm.accel(fol.v[f], lead.v[f], spacing, p.cruise) + accel_noise());
    }
    fol.a[f] = a;
    if (f + 1 < frames) integrate_step(fol, f);
  }

  std::vector<ingest::TrajectoryRecord> out;
  out.reserve(2 * frames);
  const auto lane = static_cast<std::int64_t>(i % 5 + 1);
  auto emit = [&](std::int64_t id, std::int64_t preceding, const Trace& t, std::size_t f, double headway,
                  double x_shift) {
    ingest::TrajectoryRecord r;
    r.vehicle_id = id;
    r.frame_id = static_cast<std::int64_t>(f);
    r.global_time = kTimeBase + static_cast<std::int64_t>(f) * 100;
    r.local_y = t.x[f] + x_shift;
    r.velocity = t.v[f];
    r.acceleration = t.a[f];
    r.lane_id = lane;
    r.preceding_id = preceding;
    r.space_headway = headway;
    r.site_tag = c.site_tag;
    r.units = ingest::Units::si;
    out.push_back(std::move(r));
  };
  for (std::size_t f = 0; f < frames; ++f) emit(leader_id(i), 0, lead, f, 0.0, offset);
  for (std::size_t f = 0; f < frames; ++f) {
    const double spacing = lead.x[f] + offset - fol.x[f];
    if (!(spacing > 0.0) || spacing > kMaxSpacing)
      infeasible(i, fmt::format("spacing {:.3g} m at frame {} is outside (0, {}]", spacing, f, kMaxSpacing));
    if (!(fol.v[f] > kMinSpeed) || !(lead.v[f] > kMinSpeed))
      infeasible(i, fmt::format("speed drops to or below {} m/s at frame {}", kMinSpeed, f));
    emit(follower_id(i), leader_id(i), fol, f, spacing, 0.0);
  }
  if (c.output_units == ingest::Units::imperial)
    for (auto& r : out) r = ingest::to_imperial(std::move(r));
  return out;
}

}  // namespace

SynthConfig SynthConfig::three_mode(int n_vehicles, std::uint64_t seed) {
  SynthConfig c;
  c.n_vehicles = n_vehicles;
  c.seed = seed;
  c.modes = {
      {"preventive", 0.6, 2.3, 39.0, 22.0, -0.9, 1.2, 0.0},
      {"intermediate", 0.3, 4.5, 36.0, 20.0, -1.8, 1.5, 0.0},
      {"reactive", 0.1, 7.8, 31.0, 17.0, -3.0, 1.2, 1.0},
  };
  c.noise = {0.03, 0.3, 2.0, 1.0, 0.1};
  return c;
}

SynthConfig SynthConfig::spacing_null(int n_vehicles, std::uint64_t seed) {
  SynthConfig c;
  c.n_vehicles = n_vehicles;
  c.seed = seed;
  c.modes = {
      {"slow_closure", 1.0 / 3.0, 1.5, 35.0, 20.0, -0.9, 1.2, 0.0},
      {"medium_closure", 1.0 / 3.0, 4.0, 35.0, 20.0, -1.6, 1.2, 0.0},
      {"fast_closure", 1.0 / 3.0, 7.0, 35.0, 20.0, -2.6, 1.2, 1.0},
  };
  c.noise = {0.03, 0.3, 4.0, 1.0, 0.1};
  return c;
}

void validate(const SynthConfig& c) {
  if (c.n_vehicles < 1) throw ConfigError("synth n_vehicles must be >= 1");
  if (c.frames_per_vehicle < 2) throw ConfigError("synth frames_per_vehicle must be >= 2");
  if (c.modes.empty()) throw ConfigError("synth config needs at least one mode");
  double total = 0.0;
  for (const auto& m : c.modes) {
    if (!(m.share >= 0.0)) throw ConfigError("mode '" + m.name + "': share must be non-negative");
    total += m.share;
    const double steps = m.duration_s / kDt;
    if (m.duration_s < 0.0 || std::abs(steps - std::round(steps)) > 1e-6)
      throw ConfigError("mode '" + m.name + "': duration must be a non-negative multiple of 0.1 s");
    if (m.duration_s > 0.0 && !(m.intensity < 0.0)) throw ConfigError("mode '" + m.name + "': intensity must be negative");
    if (m.leader_brake_prob < 0.0 || m.leader_brake_prob > 1.0)
      throw ConfigError("mode '" + m.name + "': leader_brake_prob must lie in [0, 1]");
    if (!(m.spacing > 0.0) || m.spacing > kMaxSpacing) throw ConfigError("mode '" + m.name + "': spacing outside (0, 200]");
    if (!(m.ego_speed > kMinSpeed)) throw ConfigError("mode '" + m.name + "': ego_speed must exceed 1 m/s");
    if (m.duration_s > 0.0 && c.onset_frame + episode_frames(m.duration_s) >= c.frames_per_vehicle)
      throw ConfigError("mode '" + m.name + "': episode runs past the end of the trajectory");
  }
  if (std::abs(total - 1.0) > 1e-6) throw ConfigError(fmt::format("mode shares sum to {}, expected 1", total));
  if (c.onset_frame < 0 || c.onset_frame >= c.frames_per_vehicle) throw ConfigError("onset_frame outside the trajectory");
  const auto& n = c.noise;
  for (double sd : {n.accel_sd, n.v_rel_sd, n.spacing_sd, n.ego_speed_sd, n.intensity_sd})
    if (!(sd >= 0.0)) throw ConfigError("noise sd must be non-negative");
}

SynthConfig config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  try {
    c.n_vehicles = j.value("n_vehicles", c.n_vehicles);
    c.frames_per_vehicle = j.value("frames_per_vehicle", c.frames_per_vehicle);
    c.onset_frame = j.value("onset_frame", c.onset_frame);
    c.seed = j.value("seed", c.seed);
    c.site_tag = j.value("site_tag", c.site_tag);
    if (j.contains("output_units")) c.output_units = ingest::parse_units(j.at("output_units").get<std::string>());
    if (j.contains("noise")) {
      const auto& n = j.at("noise");
      c.noise.accel_sd = n.value("accel_sd", c.noise.accel_sd);
      c.noise.v_rel_sd = n.value("v_rel_sd", c.noise.v_rel_sd);
      c.noise.spacing_sd = n.value("spacing_sd", c.noise.spacing_sd);
      c.noise.ego_speed_sd = n.value("ego_speed_sd", c.noise.ego_speed_sd);
      c.noise.intensity_sd = n.value("intensity_sd", c.noise.intensity_sd);
    }
    for (const auto& m : j.at("modes")) {
      ModeSpec s;
      s.name = m.value("name", fmt::format("mode{}", c.modes.size()));
      s.share = m.value("share", s.share);
      s.v_rel = m.value("v_rel", s.v_rel);
      s.spacing = m.value("spacing", s.spacing);
      s.ego_speed = m.value("ego_speed", s.ego_speed);
      s.intensity = m.value("intensity", s.intensity);
      s.duration_s = m.value("duration_s", s.duration_s);
      s.leader_brake_prob = m.value("leader_brake_prob", s.leader_brake_prob);
      c.modes.push_back(std::move(s));
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad synth config: ") + e.what());
  }
  validate(c);
  return c;
}

nlohmann::json config_to_json(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["n_vehicles"] = c.n_vehicles;
  j["frames_per_vehicle"] = c.frames_per_vehicle;
  j["onset_frame"] = c.onset_frame;
  j["seed"] = c.seed;
  j["output_units"] = std::string(ingest::units_name(c.output_units));
  j["site_tag"] = c.site_tag;
  j["noise"] = {{"accel_sd", c.noise.accel_sd},
                {"v_rel_sd", c.noise.v_rel_sd},
                {"spacing_sd", c.noise.spacing_sd},
                {"ego_speed_sd", c.noise.ego_speed_sd},
                {"intensity_sd", c.noise.intensity_sd}};
  auto modes = nlohmann::ordered_json::array();
  for (const auto& m : c.modes) {
    nlohmann::ordered_json o;
    o["name"] = m.name;
    o["share"] = m.share;
    o["v_rel"] = m.v_rel;
    o["spacing"] = m.spacing;
    o["ego_speed"] = m.ego_speed;
    o["intensity"] = m.intensity;
    o["duration_s"] = m.duration_s;
    o["leader_brake_prob"] = m.leader_brake_prob;
    modes.push_back(std::move(o));
  }
  j["modes"] = std::move(modes);
  return nlohmann::json::parse(j.dump());
}

int GroundTruth::mode_of(std::int64_t vehicle_id) const {
  for (const auto& v : vehicles)
    if (v.vehicle_id == vehicle_id) return v.mode;
  return -1;
}

GroundTruth planted_truth(const SynthConfig& c) {
  validate(c);
  GroundTruth t;
  const auto modes = mode_of_vehicle(c);
  for (int i = 0; i < c.n_vehicles; ++i) {
    const int m = modes[static_cast<std::size_t>(i)];
    const auto& spec = c.modes[static_cast<std::size_t>(m)];
    t.vehicles.push_back({follower_id(i), leader_id(i), m, spec.name});
    if (episode_frames(spec.duration_s) > 0)
      t.episodes.push_back({follower_id(i), c.onset_frame, spec.duration_s, spec.intensity, draws_leader_braking(c, i, spec)});
  }
  return t;
}

nlohmann::json truth_to_json(const GroundTruth& t) {
  nlohmann::ordered_json j;
  auto vehicles = nlohmann::ordered_json::array();
  for (const auto& v : t.vehicles)
    vehicles.push_back({{"vehicle_id", v.vehicle_id}, {"leader_id", v.leader_id}, {"mode", v.mode}, {"mode_name", v.mode_name}});
  auto episodes = nlohmann::ordered_json::array();
  for (const auto& e : t.episodes)
    episodes.push_back({{"vehicle_id", e.vehicle_id},
                        {"onset_frame", e.onset_frame},
                        {"duration_s", e.duration_s},
                        {"max_decel", e.max_decel},
                        {"leader_braking", e.leader_braking}});
  j["vehicles"] = std::move(vehicles);
  j["episodes"] = std::move(episodes);
  return nlohmann::json::parse(j.dump());
}

GroundTruth truth_from_json(const nlohmann::json& j) {
  GroundTruth t;
  for (const auto& v : j.at("vehicles"))
    t.vehicles.push_back({v.at("vehicle_id").get<std::int64_t>(), v.at("leader_id").get<std::int64_t>(),
                          v.at("mode").get<int>(), v.at("mode_name").get<std::string>()});
  for (const auto& e : j.at("episodes"))
    t.episodes.push_back({e.at("vehicle_id").get<std::int64_t>(), e.at("onset_frame").get<std::int64_t>(),
                          e.at("duration_s").get<double>(), e.at("max_decel").get<double>(),
                          e.at("leader_braking").get<bool>()});
  return t;
}

SynthCorpus generate_trajectories(const SynthConfig& c) {
  SynthCorpus corpus;
  corpus.truth = planted_truth(c);
  corpus.records.reserve(static_cast<std::size_t>(c.n_vehicles) * 2 * static_cast<std::size_t>(c.frames_per_vehicle));
  for (int i = 0; i < c.n_vehicles; ++i) {
    const auto& mode = c.modes[static_cast<std::size_t>(corpus.truth.vehicles[static_cast<std::size_t>(i)].mode)];
    auto rows = simulate_vehicle(c, i, mode);
    std::move(rows.begin(), rows.end(), std::back_inserter(corpus.records));
  }
  return corpus;
}

SynthCorpus generate_trajectories(SynthConfig config, std::uint64_t seed) {
  config.seed = seed;
  return generate_trajectories(config);
}

void write_ngsim_csv(std::ostream& out, std::span<const ingest::TrajectoryRecord> records) {
  out << "Vehicle_ID,Frame_ID,Global_Time,Local_Y,v_Vel,v_Acc,Lane_ID,Preceding,Space_Headway,Location\n";
  fmt::memory_buffer buf;
  for (const auto& r : records) {
    buf.clear();
    fmt::format_to(std::back_inserter(buf), "{},{},{},{},{},{},{},{},{},{}\n", r.vehicle_id, r.frame_id, r.global_time,
                   r.local_y, r.velocity, r.acceleration, r.lane_id, r.preceding_id, r.space_headway, r.site_tag);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  }
}

double adjusted_rand_index(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw std::invalid_argument("labelings differ in length");
  const auto n = static_cast<double>(a.size());
  std::map<std::pair<int, int>, double> cells;
  std::map<int, double> rows, cols;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ++cells[{a[i], b[i]}];
    ++rows[a[i]];
    ++cols[b[i]];
  }
  auto pairs = [](double x) { return x * (x - 1.0) / 2.0; };
  double index = 0.0, sum_a = 0.0, sum_b = 0.0;
  for (const auto& [_, v] : cells) index += pairs(v);
  for (const auto& [_, v] : rows) sum_a += pairs(v);
  for (const auto& [_, v] : cols) sum_b += pairs(v);
  const double total = pairs(n);
  if (total == 0.0) return 1.0;
  const double expected = sum_a * sum_b / total;
  const double max_index = 0.5 * (sum_a + sum_b);
  if (max_index == expected) return 1.0;
  return (index - expected) / (max_index - expected);
}

}  // namespace cfkin::synth
