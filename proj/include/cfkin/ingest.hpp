#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace cfkin::ingest {

inline constexpr double kFeetToMeters = 0.3048;
inline constexpr double kFrameInterval = 0.1;  // seconds, 10 Hz
inline constexpr std::size_t kDefaultChunkSize = 500'000;

enum class Units { imperial, si };

Units parse_units(std::string_view name);
std::string_view units_name(Units units);

/// One raw per-frame vehicle sample.
struct TrajectoryRecord {
  std::int64_t vehicle_id = 0;
  std::int64_t frame_id = 0;
  std::int64_t global_time = 0;  // ms
  double local_y = 0.0;
  double velocity = 0.0;
  double acceleration = 0.0;
  std::int64_t lane_id = 0;
  std::int64_t preceding_id = 0;  // 0 = none
  double space_headway = 0.0;
  std::string site_tag;
  Units units = Units::imperial;

  bool operator==(const TrajectoryRecord&) const = default;
};

/// Converts lengths (and their derivatives) from feet to meters. SI records pass through.
TrajectoryRecord convert_units(TrajectoryRecord record);

/// Inverse of convert_units. Imperial records pass through.
TrajectoryRecord to_imperial(TrajectoryRecord record);

/// Follower sample joined with the leader's state at the same frame.
struct DyadObservation {
  TrajectoryRecord follower;
  double leader_velocity = 0.0;
  double leader_acceleration = 0.0;
  double spacing = 0.0;
  std::int64_t timestamp_index = 0;  // frame
};

/// Frame-consecutive dyads of one follower behind one leader.
struct TrajectorySegment {
  std::string site_tag;
  std::int64_t vehicle_id = 0;
  std::int64_t leader_id = 0;
  std::vector<DyadObservation> observations;

  std::size_t length_frames() const { return observations.size(); }
};

/// Rejection criteria in attribution order.
enum class Criterion : std::size_t {
  parse,
  valid_leader,
  leader_missing,
  reasonable_spacing,
  moving_vehicles,
  minimum_trajectory,
};
inline constexpr std::size_t kCriterionCount = 6;
std::string_view criterion_name(Criterion criterion);

struct FilterStats {
  std::uint64_t raw_count = 0;
  std::array<std::uint64_t, kCriterionCount> rejected{};
  std::uint64_t retained_count = 0;
  std::uint64_t retained_vehicles = 0;

  std::uint64_t& rejected_for(Criterion c) { return rejected[static_cast<std::size_t>(c)]; }
  std::uint64_t rejected_for(Criterion c) const { return rejected[static_cast<std::size_t>(c)]; }
  std::uint64_t total_rejected() const;
  void merge(const FilterStats& other);

  bool operator==(const FilterStats&) const = default;
};

struct FilterOptions {
  double max_spacing = 200.0;
  double min_speed = 1.0;
  std::size_t min_segment_frames = 50;
};

// ---------------------------------------------------------------------------
// Chunked reading

/// Opens a plain or gzip-compressed file as an input stream.
std::unique_ptr<std::istream> open_input(const std::filesystem::path& path);

struct ReadOptions {
  std::size_t chunk_size = kDefaultChunkSize;
  Units units = Units::imperial;
  std::string site_tag;  // used when the file has no Location column
};

/// Streams delimited NGSIM-schema rows in batches of at most chunk_size.
///
/// Accepts comma- or whitespace-delimited text with a header row naming at least
/// Vehicle_ID, Frame_ID, Global_Time, Local_Y, v_Vel, v_Acc, Lane_ID, Preceding and
/// Space_Headway (case-insensitive). Headerless files in the canonical 18-column
/// NGSIM layout are also recognised. Malformed rows are skipped and counted.
class ChunkReader {
 public:
  ChunkReader(std::unique_ptr<std::istream> input, ReadOptions options);
  ~ChunkReader();
  ChunkReader(ChunkReader&&) noexcept;
  ChunkReader& operator=(ChunkReader&&) noexcept;

  /// Next batch of parsed records, or nullopt once the input is exhausted.
  std::optional<std::vector<TrajectoryRecord>> next_batch();

  std::uint64_t parsed_rows() const;
  std::uint64_t parse_errors() const;

 private:
  struct State;
  std::unique_ptr<State> state_;
};

// ---------------------------------------------------------------------------
// Leader join, filters and segmentation

/// Leader kinematics keyed by (site, vehicle, frame).
class LeaderIndex {
 public:
  struct State {
    double velocity = 0.0;
    double acceleration = 0.0;
    double local_y = 0.0;
  };

  void add(const TrajectoryRecord& record);
  void add(std::span<const TrajectoryRecord> records);
  /// Must be called after the last add() and before lookups.
  void finalize();
  std::optional<State> find(const std::string& site, std::int64_t vehicle, std::int64_t frame) const;
  std::size_t size() const;

 private:
  using Key = std::pair<std::string, std::int64_t>;
  std::map<Key, std::vector<std::pair<std::int64_t, State>>> series_;
  bool finalized_ = false;
};

struct JoinOptions {
  bool spacing_from_positions = false;
};

/// Emits dyads for follower rows whose leader has a row at the same frame. Rows
/// without a leader or whose leader row is absent are counted in `stats`.
std::vector<DyadObservation> join_leader(std::span<const TrajectoryRecord> batch,
                                         const LeaderIndex& leaders, FilterStats& stats,
                                         const JoinOptions& options = {});

/// Keeps dyads passing the leader, spacing and speed criteria. Each rejection is
/// attributed to the first failing criterion.
std::vector<DyadObservation> apply_filters(std::vector<DyadObservation> dyads, FilterStats& stats,
                                           const FilterOptions& options = {});

/// Accumulates per-vehicle open segments across chunk boundaries.
class SegmentBuilder {
 public:
  explicit SegmentBuilder(FilterOptions options = {});

  void push(DyadObservation dyad);
  /// Closes every open segment and returns all kept segments in (site, vehicle, frame) order.
  std::vector<TrajectorySegment> finish(FilterStats& stats);

 private:
  void close(TrajectorySegment&& segment);

  FilterOptions options_;
  std::map<std::pair<std::string, std::int64_t>, TrajectorySegment> open_;
  std::vector<TrajectorySegment> closed_;
  std::uint64_t short_rows_ = 0;
};

/// Splits dyads on frame gaps and leader changes, keeping segments of at least
/// min_segment_frames. Dyads must be ordered by frame within each vehicle.
std::vector<TrajectorySegment> segment_trajectories(std::vector<DyadObservation> dyads,
                                                    FilterStats& stats,
                                                    const FilterOptions& options = {});

// ---------------------------------------------------------------------------
// Whole-source ingest

struct IngestOptions {
  std::size_t chunk_size = kDefaultChunkSize;
  Units units = Units::imperial;
  FilterOptions filters;
  JoinOptions join;
};

struct IngestResult {
  std::vector<TrajectorySegment> segments;
  FilterStats stats;
};

using StreamFactory = std::function<std::unique_ptr<std::istream>()>;

/// Two passes over the source: the first builds the leader index, the second
/// joins, filters and segments follower rows chunk by chunk.
IngestResult ingest(const StreamFactory& open, const std::string& site_tag,
                    const IngestOptions& options);

IngestResult ingest_file(const std::filesystem::path& path, const IngestOptions& options);

/// Ingests several sources independently and concatenates the results.
IngestResult ingest_files(std::span<const std::filesystem::path> paths, const IngestOptions& options);

}  // namespace cfkin::ingest
