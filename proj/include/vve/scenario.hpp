#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "vve/config.hpp"
#include "vve/errors.hpp"

namespace vve {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;
};

/// Axis-aligned rectangle (the crosswalk conflict zone).
struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  bool contains(double px, double py) const {
    return px >= x0 && px <= x1 && py >= y0 && py <= y1;
  }
  /// Euclidean distance from a point to the rectangle (0 inside).
  double distance(double px, double py) const {
    const double dx = std::max({x0 - px, 0.0, px - x1});
    const double dy = std::max({y0 - py, 0.0, py - y1});
    return std::hypot(dx, dy);
  }
};

/// A road user patrolling back and forth along a segment.
struct Actor {
  std::uint32_t id = 0;
  double x = 0.0;
  double y = 0.0;
  double heading = 0.0; ///< direction of motion [rad]
  double speed = 0.0;   ///< walking speed [m/s]
  double radius = 0.35; ///< collision footprint [m]
  Vec2 patrol_a, patrol_b;
  double phase = 0.0;   ///< arc position within the 2L back-and-forth cycle
};

/// Place an actor on its patrol segment according to its phase.
inline void place_actor(Actor& a) {
  const double len = std::hypot(a.patrol_b.x - a.patrol_a.x,
                                a.patrol_b.y - a.patrol_a.y);
  if (len <= 0.0) {
    a.x = a.patrol_a.x;
    a.y = a.patrol_a.y;
    return;
  }
  const double ux = (a.patrol_b.x - a.patrol_a.x) / len;
  const double uy = (a.patrol_b.y - a.patrol_a.y) / len;
  double u = std::fmod(a.phase, 2.0 * len);
  if (u < 0.0) u += 2.0 * len;
  const bool outbound = u <= len;
  const double d = outbound ? u : 2.0 * len - u;
  a.x = a.patrol_a.x + ux * d;
  a.y = a.patrol_a.y + uy * d;
  a.heading = outbound ? std::atan2(uy, ux) : std::atan2(-uy, -ux);
}

/// Advance an actor's patrol by dt.
inline void advance_actor(Actor& a, double dt) {
  const double len = std::hypot(a.patrol_b.x - a.patrol_a.x,
                                a.patrol_b.y - a.patrol_a.y);
  if (len <= 0.0 || a.speed <= 0.0) return;
  a.phase = std::fmod(a.phase + a.speed * dt, 2.0 * len);
  place_actor(a);
}

/// The full driving task: a reference path, a crosswalk conflict zone,
/// and the actors that may occupy it.
struct Scenario {
  std::vector<Vec2> centerline;
  Rect zone;
  double zone_entry_s = 0.0; ///< arc length at which the zone begins
  double zone_exit_s = 0.0;
  std::vector<Actor> actors;
};

/// Build the straight-lane crosswalk scenario.  Pedestrian crossing lines
/// are spread evenly across the zone depth; starting phases are drawn from
/// `seed` so episodes differ in crossing timing.
inline Scenario build_scenario(const ScenarioParams& p, std::uint64_t seed) {
  Scenario sc;
  const int n_wp =
      static_cast<int>(std::floor(p.lane_length / p.waypoint_spacing)) + 1;
  for (int i = 0; i < n_wp; ++i)
    sc.centerline.push_back({i * p.waypoint_spacing, 0.0});
  if (sc.centerline.back().x < p.lane_length)
    sc.centerline.push_back({p.lane_length, 0.0});

  sc.zone = {p.zone_entry, -p.zone_half_width, p.zone_entry + p.zone_depth,
             p.zone_half_width};
  sc.zone_entry_s = p.zone_entry;
  sc.zone_exit_s = p.zone_entry + p.zone_depth;

  std::mt19937_64 rng(seed);
  for (int i = 0; i < p.ped_count; ++i) {
    Actor a;
    a.id = static_cast<std::uint32_t>(i + 1);
    a.speed = p.ped_speed;
    a.radius = p.ped_radius;
    const double cx =
        p.zone_entry + (i + 0.5) * p.zone_depth / std::max(p.ped_count, 1);
    a.patrol_a = {cx, -p.ped_patrol_half_span};
    a.patrol_b = {cx, p.ped_patrol_half_span};
    const double cycle = 4.0 * p.ped_patrol_half_span;
    a.phase = std::uniform_real_distribution<double>(0.0, cycle)(rng);
    place_actor(a);
    sc.actors.push_back(a);
  }
  return sc;
}

/// Arc-length coordinate of the closest point on the centerline polyline.
inline double arc_length_projection(const std::vector<Vec2>& line, double px,
                                    double py) {
  if (line.size() < 2)
    throw InvalidInputError("centerline needs at least two waypoints");
  double best_d2 = std::numeric_limits<double>::infinity();
  double best_s = 0.0;
  double s_acc = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const double ax = line[i].x, ay = line[i].y;
    const double bx = line[i + 1].x, by = line[i + 1].y;
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    double t = len2 > 0.0 ? ((px - ax) * vx + (py - ay) * vy) / len2 : 0.0;
    t = std::clamp(t, 0.0, 1.0);
    const double cx = ax + t * vx, cy = ay + t * vy;
    const double d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
    const double seg_len = std::sqrt(len2);
    if (d2 < best_d2) {
      best_d2 = d2;
      best_s = s_acc + t * seg_len;
    }
    s_acc += seg_len;
  }
  return best_s;
}

/// Signed lateral offset from the centerline (positive to the left of the
/// path direction).  Assumes a polyline; uses the closest segment.
inline double lateral_offset(const std::vector<Vec2>& line, double px,
                             double py) {
  if (line.size() < 2)
    throw InvalidInputError("centerline needs at least two waypoints");
  double best_d2 = std::numeric_limits<double>::infinity();
  double best_off = 0.0;
  for (std::size_t i = 0; i + 1 < line.size(); ++i) {
    const double ax = line[i].x, ay = line[i].y;
    const double bx = line[i + 1].x, by = line[i + 1].y;
    const double vx = bx - ax, vy = by - ay;
    const double len2 = vx * vx + vy * vy;
    if (len2 <= 0.0) continue;
    double t = ((px - ax) * vx + (py - ay) * vy) / len2;
    t = std::clamp(t, 0.0, 1.0);
    const double cx = ax + t * vx, cy = ay + t * vy;
    const double d2 = (px - cx) * (px - cx) + (py - cy) * (py - cy);
    if (d2 < best_d2) {
      best_d2 = d2;
      const double len = std::sqrt(len2);
      // Cross product of path direction with the offset vector.
      best_off = (vx * (py - cy) - vy * (px - cx)) / len;
    }
  }
  return best_off;
}

/// Oriented-rectangle (ego footprint) vs disc (actor) overlap test.
inline bool footprint_overlaps(double ex, double ey, double psi,
                               double half_len, double half_wid,
                               const Actor& a) {
  const double c = std::cos(psi), s = std::sin(psi);
  const double dx = a.x - ex, dy = a.y - ey;
  const double lx = c * dx + s * dy;  // actor in ego frame, forward
  const double ly = -s * dx + c * dy; // left
  const double qx = std::clamp(lx, -half_len, half_len);
  const double qy = std::clamp(ly, -half_wid, half_wid);
  return std::hypot(lx - qx, ly - qy) <= a.radius;
}

} // namespace vve
