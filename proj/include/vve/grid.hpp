#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "vve/config.hpp"
#include "vve/scenario.hpp"

namespace vve {

/// Forward-facing binary occupancy grid in the ego frame.
///
/// Row 0 starts at the ego position and rows extend forward; columns span
/// the lateral range symmetrically, column 0 on the right.  A cell covers
/// [row*cell, (row+1)*cell) x [(col - cols/2)*cell, ...) and is marked when
/// an actor's disc footprint overlaps it.
struct OccupancyGrid {
  int rows = 0;
  int cols = 0;
  double cell = 1.0;
  std::vector<std::uint8_t> data; ///< row-major, rows*cols entries, 0/1

  std::uint8_t at(int row, int col) const { return data[row * cols + col]; }
  int count() const {
    int n = 0;
    for (auto v : data) n += v;
    return n;
  }
};

inline OccupancyGrid build_grid(double ex, double ey, double psi,
                                const std::vector<Actor>& actors, int rows,
                                int cols, double cell) {
  OccupancyGrid g;
  g.rows = rows;
  g.cols = cols;
  g.cell = cell;
  g.data.assign(static_cast<std::size_t>(rows) * cols, 0);
  const double c = std::cos(psi), s = std::sin(psi);
  const double half_span = 0.5 * cols * cell;
  for (const Actor& a : actors) {
    const double dx = a.x - ex, dy = a.y - ey;
    const double fx = c * dx + s * dy;  // forward distance
    const double fy = -s * dx + c * dy; // lateral, left positive
    if (fx + a.radius < 0.0 || fx - a.radius >= rows * cell) continue;
    if (fy + a.radius < -half_span || fy - a.radius >= half_span) continue;
    const int r0 = std::max(0, static_cast<int>(std::floor((fx - a.radius) / cell)));
    const int r1 = std::min(rows - 1,
                            static_cast<int>(std::floor((fx + a.radius) / cell)));
    const int c0 = std::max(
        0, static_cast<int>(std::floor((fy - a.radius + half_span) / cell)));
    const int c1 = std::min(
        cols - 1,
        static_cast<int>(std::floor((fy + a.radius + half_span) / cell)));
    for (int r = r0; r <= r1; ++r) {
      const double cy0 = r * cell, cy1 = (r + 1) * cell;
      const double qx = std::clamp(fx, cy0, cy1);
      for (int cc = c0; cc <= c1; ++cc) {
        const double cx0 = cc * cell - half_span, cx1 = (cc + 1) * cell - half_span;
        const double qy = std::clamp(fy, cx0, cx1);
        if (std::hypot(fx - qx, fy - qy) <= a.radius)
          g.data[static_cast<std::size_t>(r) * cols + cc] = 1;
      }
    }
  }
  return g;
}

} // namespace vve
