#pragma once

#include <algorithm>
#include <cmath>
#include <vector>

#include "vve/scenario.hpp"

namespace vve {

struct PursuitResult {
  double delta = 0.0;       ///< front steering command [rad]
  bool end_of_path = false; ///< lookahead ran past the final waypoint
};

/// Pure-pursuit steering toward a point `L = max(L_min, k*v)` ahead on the
/// path:  delta = atan(2 * wheelbase * sin(eta) / L), with eta the bearing
/// of the lookahead point in the ego frame.  Past the final waypoint the
/// command is zero and the end-of-path flag is raised.
inline PursuitResult pure_pursuit(double ex, double ey, double psi, double v,
                                  const std::vector<Vec2>& path,
                                  double wheelbase, double lookahead_min,
                                  double lookahead_gain, double steer_max) {
  PursuitResult out;
  if (path.size() < 2) {
    out.end_of_path = true;
    return out;
  }
  const double lookahead = std::max(lookahead_min, lookahead_gain * v);

  // Walk the polyline from the ego's arc-length position forward by the
  // lookahead distance to find the goal point.
  const double s_ego = arc_length_projection(path, ex, ey);
  double target_s = s_ego + lookahead;
  double s_acc = 0.0;
  Vec2 goal = path.back();
  bool found = false;
  for (std::size_t i = 0; i + 1 < path.size() && !found; ++i) {
    const double seg = std::hypot(path[i + 1].x - path[i].x,
                                  path[i + 1].y - path[i].y);
    if (s_acc + seg >= target_s && seg > 0.0) {
      const double t = (target_s - s_acc) / seg;
      goal.x = path[i].x + t * (path[i + 1].x - path[i].x);
      goal.y = path[i].y + t * (path[i + 1].y - path[i].y);
      found = true;
    }
    s_acc += seg;
  }
  if (!found) {
    // Lookahead extends beyond the path: hold the wheel straight.
    out.end_of_path = true;
    out.delta = 0.0;
    return out;
  }

  const double dx = goal.x - ex, dy = goal.y - ey;
  const double eta = std::atan2(dy, dx) - psi;
  const double delta = std::atan(2.0 * wheelbase * std::sin(eta) / lookahead);
  out.delta = std::clamp(delta, -steer_max, steer_max);
  return out;
}

} // namespace vve
