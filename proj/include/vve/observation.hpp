#pragma once

#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "vve/config.hpp"
#include "vve/dynamics.hpp"
#include "vve/grid.hpp"
#include "vve/safety.hpp"
#include "vve/scenario.hpp"

namespace vve {

/// What the agent sees: the binary occupancy grid plus a fused feature
/// vector of ego, path, zone, and per-actor summaries.  All features are
/// scaled to roughly [-1, 1]; unbounded times are capped before scaling.
struct Observation {
  OccupancyGrid grid;
  std::vector<double> feats;
};

namespace obs_scale {
inline constexpr double kSpeed = 20.0;     ///< m/s
inline constexpr double kSideslip = 0.5;   ///< rad
inline constexpr double kYawRate = 1.0;    ///< rad/s
inline constexpr double kLatOffset = 5.0;  ///< m
inline constexpr double kZoneDist = 100.0; ///< m
inline constexpr double kWaypointX = 50.0; ///< m
inline constexpr double kWaypointY = 10.0; ///< m
inline constexpr double kActorRange = 50.0; ///< m
inline constexpr double kActorSpeed = 3.0;  ///< m/s
inline constexpr double kTtzCap = 10.0;     ///< s
} // namespace obs_scale

/// Arc offsets ahead of the ego at which path preview points are sampled.
inline constexpr double kPreviewOffsets[5] = {2.0, 5.0, 10.0, 20.0, 40.0};

/// Number of fused features for a given actor count.
inline int fusion_feature_count(int actor_count) {
  return 6 + 2 * 5 + 4 * actor_count + 1;
}

/// Point on the polyline at a given arc length (clamped to the ends).
inline Vec2 point_at_arc_length(const std::vector<Vec2>& line, double s) {
  if (s <= 0.0) return line.front();
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const double seg = std::hypot(line[i + 1].x - line[i].x,
                                  line[i + 1].y - line[i].y);
    if (acc + seg >= s && seg > 0.0) {
      const double t = (s - acc) / seg;
      return {line[i].x + t * (line[i + 1].x - line[i].x),
              line[i].y + t * (line[i + 1].y - line[i].y)};
    }
    acc += seg;
  }
  return line.back();
}

/// Tangent heading of the polyline at a given arc length.
inline double heading_at_arc_length(const std::vector<Vec2>& line, double s) {
  double acc = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const double seg = std::hypot(line[i + 1].x - line[i].x,
                                  line[i + 1].y - line[i].y);
    if ((acc + seg >= s || i + 2 == line.size()) && seg > 0.0)
      return std::atan2(line[i + 1].y - line[i].y, line[i + 1].x - line[i].x);
    acc += seg;
  }
  return 0.0;
}

inline constexpr double kPi = std::numbers::pi;

inline double wrap_angle(double a) {
  a = std::fmod(a + kPi, 2.0 * kPi);
  if (a < 0.0) a += 2.0 * kPi;
  return a - kPi;
}

inline Observation build_observation(const VehicleState& ego,
                                     const Scenario& sc,
                                     const AgentParams& ap, double v_eps) {
  namespace sc_ = obs_scale;
  Observation obs;
  obs.grid = build_grid(ego.x, ego.y, ego.psi, sc.actors, ap.grid_rows,
                        ap.grid_cols, ap.grid_cell);

  const double s_ego = arc_length_projection(sc.centerline, ego.x, ego.y);
  const double lat = lateral_offset(sc.centerline, ego.x, ego.y);
  const double path_psi = heading_at_arc_length(sc.centerline, s_ego);
  const SafetyMetrics safety = compute_safety(s_ego, ego.v, sc, v_eps);

  auto cap_ttz = [](double t) {
    return std::min(t, sc_::kTtzCap) / sc_::kTtzCap;
  };

  std::vector<double>& f = obs.feats;
  f.reserve(fusion_feature_count(static_cast<int>(sc.actors.size())));
  f.push_back(ego.v / sc_::kSpeed);
  f.push_back(ego.beta / sc_::kSideslip);
  f.push_back(ego.r / sc_::kYawRate);
  f.push_back(wrap_angle(path_psi - ego.psi) / kPi);
  f.push_back(lat / sc_::kLatOffset);
  const double zone_d =
      std::clamp(sc.zone_entry_s - s_ego, -20.0, sc_::kZoneDist);
  f.push_back(zone_d / sc_::kZoneDist);

  const double c = std::cos(ego.psi), s = std::sin(ego.psi);
  for (double off : kPreviewOffsets) {
    const Vec2 p = point_at_arc_length(sc.centerline, s_ego + off);
    const double dx = p.x - ego.x, dy = p.y - ego.y;
    f.push_back((c * dx + s * dy) / sc_::kWaypointX);
    f.push_back((-s * dx + c * dy) / sc_::kWaypointY);
  }

  for (std::size_t i = 0; i < sc.actors.size(); ++i) {
    const Actor& a = sc.actors[i];
    const double dx = a.x - ego.x, dy = a.y - ego.y;
    const double fx = c * dx + s * dy, fy = -s * dx + c * dy;
    f.push_back(std::min(std::hypot(fx, fy), sc_::kActorRange) /
                sc_::kActorRange);
    f.push_back(std::atan2(fy, fx) / kPi);
    f.push_back(a.speed / sc_::kActorSpeed);
    f.push_back(cap_ttz(safety.threats[i].ttz_actor));
  }

  f.push_back(cap_ttz(safety.threats.empty()
                          ? ttz_vehicle(s_ego, ego.v, sc, v_eps)
                          : safety.threats.front().ttz_vehicle));
  return obs;
}

} // namespace vve
