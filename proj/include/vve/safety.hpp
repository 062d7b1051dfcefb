#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "vve/scenario.hpp"

namespace vve {

/// Threat bands over the pair (time-to-zone of the vehicle, time-to-zone
/// of an actor).  A band is raised only when BOTH are below its threshold:
/// a conflict needs the two parties to reach the zone around the same time.
enum class Band : int { kClear = 0, kBlue = 1, kOrange = 2, kRed = 3 };

inline constexpr double kBandRed = 2.0;
inline constexpr double kBandOrange = 4.0;
inline constexpr double kBandBlue = 6.0;

inline const char* band_name(Band b) {
  switch (b) {
    case Band::kRed: return "red";
    case Band::kOrange: return "orange";
    case Band::kBlue: return "blue";
    default: return "clear";
  }
}

inline Band classify_band(double ttz_vehicle, double ttz_actor) {
  if (ttz_vehicle < kBandRed && ttz_actor < kBandRed) return Band::kRed;
  if (ttz_vehicle < kBandOrange && ttz_actor < kBandOrange)
    return Band::kOrange;
  if (ttz_vehicle < kBandBlue && ttz_actor < kBandBlue) return Band::kBlue;
  return Band::kClear;
}

/// Per-actor conflict timing.
struct ActorThreat {
  std::uint32_t id = 0;
  double ttz_vehicle = std::numeric_limits<double>::infinity();
  double ttz_actor = std::numeric_limits<double>::infinity();
  Band band = Band::kClear;
};

struct SafetyMetrics {
  std::vector<ActorThreat> threats;

  Band worst_band() const {
    Band w = Band::kClear;
    for (const auto& t : threats)
      if (static_cast<int>(t.band) > static_cast<int>(w)) w = t.band;
    return w;
  }
};

/// Time for the ego to reach the zone entry along the path.  Zero while
/// inside the zone, infinite once past it or when standing still (a
/// stopped vehicle never arrives).
inline double ttz_vehicle(double s_ego, double v, const Scenario& sc,
                          double v_eps) {
  if (s_ego > sc.zone_exit_s) return std::numeric_limits<double>::infinity();
  if (s_ego >= sc.zone_entry_s) return 0.0;
  if (v <= 0.0) return std::numeric_limits<double>::infinity();
  return (sc.zone_entry_s - s_ego) / std::max(v, v_eps);
}

/// Time for an actor to reach the zone: straight-line distance over its
/// speed.  Zero inside the zone, infinite when stationary outside.
inline double ttz_actor(const Actor& a, const Rect& zone) {
  const double d = zone.distance(a.x, a.y);
  if (d <= 0.0) return 0.0;
  if (a.speed <= 0.0) return std::numeric_limits<double>::infinity();
  return d / a.speed;
}

inline SafetyMetrics compute_safety(double s_ego, double v,
                                    const Scenario& sc, double v_eps) {
  SafetyMetrics m;
  const double tv = ttz_vehicle(s_ego, v, sc, v_eps);
  for (const Actor& a : sc.actors) {
    ActorThreat t;
    t.id = a.id;
    t.ttz_vehicle = tv;
    t.ttz_actor = ttz_actor(a, sc.zone);
    t.band = classify_band(t.ttz_vehicle, t.ttz_actor);
    m.threats.push_back(t);
  }
  return m;
}

/// Speed the ego should hold: the set speed when no actor threatens the
/// zone, otherwise the comfortable-deceleration profile that reaches zero
/// `stop_margin` before the zone entry.
inline double reference_speed(double s_ego, double v_set,
                              const SafetyMetrics& m, const Scenario& sc,
                              double stop_margin, double a_ref) {
  bool any_threat = false;
  for (const auto& t : m.threats)
    if (t.band != Band::kClear) any_threat = true;
  if (!any_threat) return v_set;
  if (s_ego > sc.zone_exit_s) return v_set;
  const double d = sc.zone_entry_s - s_ego;
  const double braking_d = std::max(d - stop_margin, 0.0);
  return std::min(v_set, std::sqrt(2.0 * a_ref * braking_d));
}

inline constexpr double kComfortDecel = 2.5; ///< a_ref of the profile [m/s^2]

} // namespace vve
