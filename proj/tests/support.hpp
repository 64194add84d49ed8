#pragma once

#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cfkin/cluster.hpp"
#include "cfkin/ingest.hpp"
#include "cfkin/kinematics.hpp"

namespace testkit {

inline cfkin::ingest::DyadObservation dyad(std::int64_t vehicle, std::int64_t leader, std::int64_t frame,
                                           double v_ego, double v_lead, double spacing, double a_ego = 0.0,
                                           double a_lead = 0.0, const std::string& site = "t") {
  cfkin::ingest::DyadObservation d;
  d.follower.vehicle_id = vehicle;
  d.follower.frame_id = frame;
  d.follower.global_time = frame * 100;
  d.follower.velocity = v_ego;
  d.follower.acceleration = a_ego;
  d.follower.preceding_id = leader;
  d.follower.space_headway = spacing;
  d.follower.site_tag = site;
  d.follower.units = cfkin::ingest::Units::si;
  d.leader_velocity = v_lead;
  d.leader_acceleration = a_lead;
  d.spacing = spacing;
  d.timestamp_index = frame;
  return d;
}

/// One annotated segment whose follower acceleration follows `accel`; other
/// channels are constant unless overridden per frame.
struct SegmentSpec {
  std::vector<double> accel;
  double v_ego = 20.0;
  double v_lead = 18.0;
  double spacing = 30.0;
  std::vector<double> leader_accel;  // empty = zeros
  std::vector<double> v_rel;         // empty = v_ego - v_lead
  std::int64_t vehicle = 2;
  std::int64_t leader = 1;
  std::int64_t first_frame = 0;
};

inline cfkin::kinematics::AnnotatedSegment make_segment(const SegmentSpec& s) {
  cfkin::ingest::TrajectorySegment seg;
  seg.site_tag = "t";
  seg.vehicle_id = s.vehicle;
  seg.leader_id = s.leader;
  for (std::size_t i = 0; i < s.accel.size(); ++i) {
    const double v_lead = s.v_rel.empty() ? s.v_lead : s.v_ego - s.v_rel[i];
    const double a_lead = s.leader_accel.empty() ? 0.0 : s.leader_accel[i];
    seg.observations.push_back(dyad(s.vehicle, s.leader, s.first_frame + static_cast<std::int64_t>(i), s.v_ego,
                                    v_lead, s.spacing, s.accel[i], a_lead));
  }
  auto annotated = cfkin::kinematics::annotate({seg});
  return annotated.front();
}

inline std::vector<double> runs(std::initializer_list<std::pair<int, double>> parts) {
  std::vector<double> out;
  for (auto [n, v] : parts) out.insert(out.end(), static_cast<std::size_t>(n), v);
  return out;
}

inline cfkin::cluster::Matrix to_matrix(const std::vector<std::vector<double>>& pts) {
  cfkin::cluster::Matrix m(static_cast<Eigen::Index>(pts.size()), static_cast<Eigen::Index>(pts[0].size()));
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t d = 0; d < pts[i].size(); ++d) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(d)) = pts[i][d];
  return m;
}

inline std::vector<std::vector<double>> random_points(std::mt19937_64& rng, std::size_t n, std::size_t dims,
                                                      int blobs = 3) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> pick(0, blobs - 1);
  std::vector<std::vector<double>> pts(n, std::vector<double>(dims));
  for (auto& p : pts) {
    const int b = pick(rng);
    for (std::size_t d = 0; d < dims; ++d) p[d] = 3.0 * b * (d == 0 ? 1.0 : 0.5) + g(rng);
  }
  return pts;
}

/// Random labels over k groups with every group non-empty (n >= k).
inline std::vector<int> random_labels(std::mt19937_64& rng, std::size_t n, int k) {
  std::vector<int> labels(n);
  std::uniform_int_distribution<int> pick(0, k - 1);
  for (std::size_t i = 0; i < n; ++i) labels[i] = i < static_cast<std::size_t>(k) ? static_cast<int>(i) : pick(rng);
  std::shuffle(labels.begin(), labels.end(), rng);
  return labels;
}

inline std::string ngsim_header() {
  return "Vehicle_ID,Frame_ID,Global_Time,Local_Y,v_Vel,v_Acc,Lane_ID,Preceding,Space_Headway\n";
}

/// One NGSIM-schema CSV row (imperial units).
inline std::string ngsim_row(std::int64_t vehicle, std::int64_t frame, double y, double v, double a,
                             std::int64_t preceding, double headway) {
  std::ostringstream s;
  s.precision(17);
  s << vehicle << ',' << frame << ',' << 1113433136100 + frame * 100 << ',' << y << ',' << v << ',' << a << ",1,"
    << preceding << ',' << headway << '\n';
  return s.str();
}

}  // namespace testkit
