#include "cfkin/ingest.hpp"

#include <zlib.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <istream>
#include <set>
#include <streambuf>

#include "cfkin/error.hpp"

namespace cfkin::ingest {

Units parse_units(std::string_view name) {
  if (name == "imperial") return Units::imperial;
  if (name == "si") return Units::si;
  throw ConfigError("unknown unit system '" + std::string(name) + "' (expected imperial|si)");
}

std::string_view units_name(Units units) { return units == Units::si ? "si" : "imperial"; }

TrajectoryRecord convert_units(TrajectoryRecord record) {
  if (record.units == Units::si) return record;
  record.local_y *= kFeetToMeters;
  record.velocity *= kFeetToMeters;
  record.acceleration *= kFeetToMeters;
  record.space_headway *= kFeetToMeters;
  record.units = Units::si;
  return record;
}

TrajectoryRecord to_imperial(TrajectoryRecord record) {
  if (record.units == Units::imperial) return record;
  record.local_y /= kFeetToMeters;
  record.velocity /= kFeetToMeters;
  record.acceleration /= kFeetToMeters;
  record.space_headway /= kFeetToMeters;
  record.units = Units::imperial;
  return record;
}

std::string_view criterion_name(Criterion criterion) {
  switch (criterion) {
    case Criterion::parse: return "parse";
    case Criterion::valid_leader: return "valid_leader";
    case Criterion::leader_missing: return "leader_missing";
    case Criterion::reasonable_spacing: return "reasonable_spacing";
    case Criterion::moving_vehicles: return "moving_vehicles";
    case Criterion::minimum_trajectory: return "minimum_trajectory";
  }
  return "unknown";
}

std::uint64_t FilterStats::total_rejected() const {
  std::uint64_t total = 0;
  for (auto n : rejected) total += n;
  return total;
}

void FilterStats::merge(const FilterStats& other) {
  raw_count += other.raw_count;
  for (std::size_t i = 0; i < kCriterionCount; ++i) rejected[i] += other.rejected[i];
  retained_count += other.retained_count;
  retained_vehicles += other.retained_vehicles;
}

// ---------------------------------------------------------------------------
// gzip-aware input

namespace {

class GzStreamBuf : public std::streambuf {
 public:
  explicit GzStreamBuf(const std::filesystem::path& path) {
    file_ = gzopen(path.c_str(), "rb");
    if (file_ == nullptr) throw ConfigError("cannot open input '" + path.string() + "'");
    gzbuffer(file_, 1 << 17);
  }
  ~GzStreamBuf() override {
    if (file_ != nullptr) gzclose(file_);
  }
  GzStreamBuf(const GzStreamBuf&) = delete;
  GzStreamBuf& operator=(const GzStreamBuf&) = delete;

 protected:
  int_type underflow() override {
    if (gptr() < egptr()) return traits_type::to_int_type(*gptr());
    const int n = gzread(file_, buffer_.data(), static_cast<unsigned>(buffer_.size()));
    if (n < 0) {
      int errnum = 0;
      throw DataError(std::string("gzip read failure: ") + gzerror(file_, &errnum));
    }
    if (n == 0) return traits_type::eof();
    setg(buffer_.data(), buffer_.data(), buffer_.data() + n);
    return traits_type::to_int_type(*gptr());
  }

 private:
  gzFile file_ = nullptr;
  std::array<char, 1 << 16> buffer_{};
};

class GzInputStream : public std::istream {
 public:
  explicit GzInputStream(const std::filesystem::path& path) : std::istream(nullptr), buf_(path) {
    rdbuf(&buf_);
  }

 private:
  GzStreamBuf buf_;
};

}  // namespace

std::unique_ptr<std::istream> open_input(const std::filesystem::path& path) {
  return std::make_unique<GzInputStream>(path);
}

// ---------------------------------------------------------------------------
// ChunkReader

namespace {

enum Field : std::size_t {
  kVehicle,
  kFrame,
  kGlobalTime,
  kLocalY,
  kVelocity,
  kAcceleration,
  kLane,
  kPreceding,
  kSpaceHeadway,
  kRequiredFields,
};

constexpr std::array<std::string_view, kRequiredFields> kRequiredNames = {
    "vehicle_id", "frame_id", "global_time", "local_y",      "v_vel",
    "v_acc",      "lane_id",  "preceding",   "space_headway"};

// Column positions in the headerless 18-column NGSIM release files.
constexpr std::array<std::size_t, kRequiredFields> kCanonicalPositions = {0, 1, 3, 5, 11, 12, 13, 14, 16};
constexpr std::size_t kCanonicalWidth = 18;

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

std::string_view trim(std::string_view s) {
  const auto is_space = [](char c) { return c == ' ' || c == '\t' || c == '\r' || c == '\n'; };
  while (!s.empty() && is_space(s.front())) s.remove_prefix(1);
  while (!s.empty() && is_space(s.back())) s.remove_suffix(1);
  if (s.size() >= 2 && s.front() == '"' && s.back() == '"') s = s.substr(1, s.size() - 2);
  return s;
}

void split(std::string_view line, bool comma, std::vector<std::string_view>& out) {
  out.clear();
  if (comma) {
    std::size_t start = 0;
    while (true) {
      const auto pos = line.find(',', start);
      out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
      if (pos == std::string_view::npos) break;
      start = pos + 1;
    }
    return;
  }
  std::size_t i = 0;
  while (i < line.size()) {
    while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
    if (i >= line.size()) break;
    std::size_t j = i;
    while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
    out.push_back(line.substr(i, j - i));
    i = j;
  }
}

bool parse_double(std::string_view token, double& out) {
  if (token.empty()) return false;
  if (token.front() == '+') token.remove_prefix(1);
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, out);
  return ec == std::errc() && ptr == end && std::isfinite(out);
}

bool parse_int(std::string_view token, std::int64_t& out) {
  if (token.empty()) return false;
  if (token.front() == '+') token.remove_prefix(1);
  const auto* end = token.data() + token.size();
  const auto [ptr, ec] = std::from_chars(token.data(), end, out);
  if (ec == std::errc() && ptr == end) return true;
  double d = 0.0;
  if (!parse_double(token, d) || d != std::floor(d) || std::abs(d) > 9.0e15) return false;
  out = static_cast<std::int64_t>(d);
  return true;
}

}  // namespace

struct ChunkReader::State {
  std::unique_ptr<std::istream> input;
  ReadOptions options;
  bool initialised = false;
  bool comma = true;
  std::array<std::size_t, kRequiredFields> positions{};
  std::optional<std::size_t> location_position;
  std::size_t min_width = 0;
  std::optional<std::string> pending_line;
  std::uint64_t parsed = 0;
  std::uint64_t errors = 0;
  std::vector<std::string_view> fields;
  std::string line;

  bool next_line(std::string& out) {
    if (pending_line) {
      out = std::move(*pending_line);
      pending_line.reset();
      return true;
    }
    while (std::getline(*input, out)) {
      if (!trim(out).empty()) return true;
    }
    return false;
  }

  void initialise() {
    initialised = true;
    std::string first;
    if (!next_line(first)) return;
    comma = first.find(',') != std::string::npos;
    split(first, comma, fields);

    std::map<std::string, std::size_t> by_name;
    for (std::size_t i = 0; i < fields.size(); ++i) by_name.emplace(lower(fields[i]), i);

    bool any_named = false;
    for (auto name : kRequiredNames) any_named = any_named || by_name.count(std::string(name)) > 0;

    if (!any_named) {
      double probe = 0.0;
      const bool numeric = std::all_of(fields.begin(), fields.end(),
                                       [&](std::string_view f) { return parse_double(f, probe); });
      if (numeric && fields.size() >= kCanonicalWidth) {
        positions = kCanonicalPositions;
        min_width = kCanonicalWidth;
        pending_line = std::move(first);
        return;
      }
    }

    std::string missing;
    for (std::size_t f = 0; f < kRequiredFields; ++f) {
      const auto it = by_name.find(std::string(kRequiredNames[f]));
      if (it == by_name.end()) {
        missing += missing.empty() ? "" : ", ";
        missing += kRequiredNames[f];
        continue;
      }
      positions[f] = it->second;
      min_width = std::max(min_width, it->second + 1);
    }
    if (!missing.empty()) throw ConfigError("input is missing required column(s): " + missing);
    if (const auto it = by_name.find("location"); it != by_name.end()) {
      location_position = it->second;
      min_width = std::max(min_width, it->second + 1);
    }
  }

  std::optional<TrajectoryRecord> parse_row(std::string_view text) {
    split(text, comma, fields);
    if (fields.size() < min_width) return std::nullopt;
    TrajectoryRecord r;
    const bool ok = parse_int(fields[positions[kVehicle]], r.vehicle_id) &&
                    parse_int(fields[positions[kFrame]], r.frame_id) &&
                    parse_int(fields[positions[kGlobalTime]], r.global_time) &&
                    parse_double(fields[positions[kLocalY]], r.local_y) &&
                    parse_double(fields[positions[kVelocity]], r.velocity) &&
                    parse_double(fields[positions[kAcceleration]], r.acceleration) &&
                    parse_int(fields[positions[kLane]], r.lane_id) &&
                    parse_int(fields[positions[kPreceding]], r.preceding_id) &&
                    parse_double(fields[positions[kSpaceHeadway]], r.space_headway);
    if (!ok) return std::nullopt;
    r.site_tag = location_position ? std::string(fields[*location_position]) : options.site_tag;
    r.units = options.units;
    return r;
  }
};

ChunkReader::ChunkReader(std::unique_ptr<std::istream> input, ReadOptions options)
    : state_(std::make_unique<State>()) {
  if (options.chunk_size == 0) throw ConfigError("chunk_size must be at least 1");
  state_->input = std::move(input);
  state_->options = std::move(options);
}

ChunkReader::~ChunkReader() = default;
ChunkReader::ChunkReader(ChunkReader&&) noexcept = default;
ChunkReader& ChunkReader::operator=(ChunkReader&&) noexcept = default;

std::optional<std::vector<TrajectoryRecord>> ChunkReader::next_batch() {
  auto& s = *state_;
  if (!s.initialised) s.initialise();
  std::vector<TrajectoryRecord> batch;
  batch.reserve(std::min<std::size_t>(s.options.chunk_size, 1 << 16));
  while (batch.size() < s.options.chunk_size && s.next_line(s.line)) {
    if (auto record = s.parse_row(s.line)) {
      batch.push_back(std::move(*record));
      ++s.parsed;
    } else {
      ++s.errors;
    }
  }
  if (batch.empty()) return std::nullopt;
  return batch;
}

std::uint64_t ChunkReader::parsed_rows() const { return state_->parsed; }
std::uint64_t ChunkReader::parse_errors() const { return state_->errors; }

// ---------------------------------------------------------------------------
// LeaderIndex

void LeaderIndex::add(const TrajectoryRecord& record) {
  finalized_ = false;
  series_[{record.site_tag, record.vehicle_id}].emplace_back(
      record.frame_id, State{record.velocity, record.acceleration, record.local_y});
}

void LeaderIndex::add(std::span<const TrajectoryRecord> records) {
  for (const auto& r : records) add(r);
}

void LeaderIndex::finalize() {
  for (auto& [key, rows] : series_) {
    std::stable_sort(rows.begin(), rows.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
  }
  finalized_ = true;
}

std::optional<LeaderIndex::State> LeaderIndex::find(const std::string& site, std::int64_t vehicle,
                                                    std::int64_t frame) const {
  if (!finalized_) throw std::logic_error("LeaderIndex::find before finalize()");
  const auto it = series_.find({site, vehicle});
  if (it == series_.end()) return std::nullopt;
  const auto& rows = it->second;
  const auto pos = std::lower_bound(rows.begin(), rows.end(), frame,
                                    [](const auto& row, std::int64_t f) { return row.first < f; });
  if (pos == rows.end() || pos->first != frame) return std::nullopt;
  return pos->second;
}

std::size_t LeaderIndex::size() const {
  std::size_t n = 0;
  for (const auto& [key, rows] : series_) n += rows.size();
  return n;
}

// ---------------------------------------------------------------------------
// Join / filters / segmentation

std::vector<DyadObservation> join_leader(std::span<const TrajectoryRecord> batch,
                                         const LeaderIndex& leaders, FilterStats& stats,
                                         const JoinOptions& options) {
  std::vector<DyadObservation> dyads;
  dyads.reserve(batch.size());
  for (const auto& row : batch) {
    if (row.preceding_id == 0) {
      ++stats.rejected_for(Criterion::valid_leader);
      continue;
    }
    const auto leader = leaders.find(row.site_tag, row.preceding_id, row.frame_id);
    if (!leader) {
      ++stats.rejected_for(Criterion::leader_missing);
      continue;
    }
    DyadObservation dyad;
    dyad.follower = row;
    dyad.leader_velocity = leader->velocity;
    dyad.leader_acceleration = leader->acceleration;
    dyad.spacing = options.spacing_from_positions ? leader->local_y - row.local_y : row.space_headway;
    dyad.timestamp_index = row.frame_id;
    dyads.push_back(std::move(dyad));
  }
  return dyads;
}

std::vector<DyadObservation> apply_filters(std::vector<DyadObservation> dyads, FilterStats& stats,
                                           const FilterOptions& options) {
  std::vector<DyadObservation> kept;
  kept.reserve(dyads.size());
  for (auto& d : dyads) {
    if (d.follower.preceding_id == 0) {
      ++stats.rejected_for(Criterion::valid_leader);
    } else if (!(d.spacing > 0.0 && d.spacing <= options.max_spacing)) {
      ++stats.rejected_for(Criterion::reasonable_spacing);
    } else if (!(d.follower.velocity > options.min_speed && d.leader_velocity > options.min_speed)) {
      ++stats.rejected_for(Criterion::moving_vehicles);
    } else {
      kept.push_back(std::move(d));
    }
  }
  return kept;
}

SegmentBuilder::SegmentBuilder(FilterOptions options) : options_(options) {}

void SegmentBuilder::push(DyadObservation dyad) {
  const auto& f = dyad.follower;
  auto key = std::make_pair(f.site_tag, f.vehicle_id);
  auto it = open_.find(key);
  if (it != open_.end()) {
    auto& seg = it->second;
    const auto& last = seg.observations.back();
    const bool continues = f.frame_id == last.follower.frame_id + 1 && f.preceding_id == seg.leader_id;
    if (continues) {
      seg.observations.push_back(std::move(dyad));
      return;
    }
    close(std::move(seg));
    open_.erase(it);
  }
  TrajectorySegment seg;
  seg.site_tag = f.site_tag;
  seg.vehicle_id = f.vehicle_id;
  seg.leader_id = f.preceding_id;
  seg.observations.push_back(std::move(dyad));
  open_.emplace(std::move(key), std::move(seg));
}

void SegmentBuilder::close(TrajectorySegment&& segment) {
  if (segment.length_frames() >= options_.min_segment_frames) {
    closed_.push_back(std::move(segment));
  } else {
    short_rows_ += segment.length_frames();
  }
}

std::vector<TrajectorySegment> SegmentBuilder::finish(FilterStats& stats) {
  for (auto& [key, seg] : open_) close(std::move(seg));
  open_.clear();
  std::stable_sort(closed_.begin(), closed_.end(), [](const auto& a, const auto& b) {
    return std::tie(a.site_tag, a.vehicle_id, a.observations.front().timestamp_index) <
           std::tie(b.site_tag, b.vehicle_id, b.observations.front().timestamp_index);
  });
  std::set<std::pair<std::string, std::int64_t>> vehicles;
  for (const auto& seg : closed_) {
    stats.retained_count += seg.length_frames();
    vehicles.emplace(seg.site_tag, seg.vehicle_id);
  }
  stats.retained_vehicles += vehicles.size();
  stats.rejected_for(Criterion::minimum_trajectory) += short_rows_;
  short_rows_ = 0;
  return std::move(closed_);
}

std::vector<TrajectorySegment> segment_trajectories(std::vector<DyadObservation> dyads,
                                                    FilterStats& stats, const FilterOptions& options) {
  SegmentBuilder builder(options);
  for (auto& d : dyads) builder.push(std::move(d));
  return builder.finish(stats);
}

// ---------------------------------------------------------------------------
// ingest

IngestResult ingest(const StreamFactory& open, const std::string& site_tag, const IngestOptions& options) {
  const ReadOptions read{options.chunk_size, options.units, site_tag};

  LeaderIndex leaders;
  {
    ChunkReader reader(open(), read);
    while (auto batch = reader.next_batch()) {
      for (auto& r : *batch) leaders.add(convert_units(std::move(r)));
    }
  }
  leaders.finalize();

  IngestResult result;
  SegmentBuilder builder(options.filters);
  ChunkReader reader(open(), read);
  while (auto batch = reader.next_batch()) {
    for (auto& r : *batch) r = convert_units(std::move(r));
    auto dyads = join_leader(*batch, leaders, result.stats, options.join);
    for (auto& d : apply_filters(std::move(dyads), result.stats, options.filters)) builder.push(std::move(d));
  }
  result.stats.raw_count = reader.parsed_rows() + reader.parse_errors();
  result.stats.rejected_for(Criterion::parse) = reader.parse_errors();
  result.segments = builder.finish(result.stats);
  return result;
}

namespace {
std::string site_from_path(const std::filesystem::path& path) {
  auto p = path.filename();
  if (p.extension() == ".gz") p = p.stem();
  return p.stem().string();
}
}  // namespace

IngestResult ingest_file(const std::filesystem::path& path, const IngestOptions& options) {
  if (!std::filesystem::is_regular_file(path)) throw ConfigError("input not found: " + path.string());
  return ingest([&] { return open_input(path); }, site_from_path(path), options);
}

IngestResult ingest_files(std::span<const std::filesystem::path> paths, const IngestOptions& options) {
  IngestResult all;
  for (const auto& path : paths) {
    auto one = ingest_file(path, options);
    all.stats.merge(one.stats);
    std::move(one.segments.begin(), one.segments.end(), std::back_inserter(all.segments));
  }
  return all;
}

}  // namespace cfkin::ingest
