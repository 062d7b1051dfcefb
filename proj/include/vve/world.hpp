#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <string>
#include <vector>

#include "vve/config.hpp"
#include "vve/observation.hpp"
#include "vve/plant.hpp"
#include "vve/pursuit.hpp"
#include "vve/safety.hpp"
#include "vve/scenario.hpp"

namespace vve {

/// Discrete longitudinal action set of the agent.  Indices are part of the
/// model contract (a saved network's outputs are ordered this way).
enum class Action : int {
  kHardBrake = 0,    // -6.0 m/s^2
  kSoftBrake = 1,    // -2.5 m/s^2
  kCoast = 2,        //  0.0 m/s^2 (no torque; road load decelerates)
  kSoftThrottle = 3, // +1.0 m/s^2
  kHoldSpeed = 4,    // proportional controller toward the set speed
};
inline constexpr int kActionCount = 5;

inline const char* action_name(int a) {
  switch (a) {
    case 0: return "hard_brake";
    case 1: return "soft_brake";
    case 2: return "coast";
    case 3: return "soft_throttle";
    case 4: return "hold_speed";
    default: return "?";
  }
}

/// How an episode ended.
enum class Terminal : int {
  kNone = 0,
  kCollision,
  kStopped,    ///< sustained standstill (compliant or not)
  kOvershoot,  ///< drove past the zone
  kTimeout,
};

inline const char* terminal_name(Terminal t) {
  switch (t) {
    case Terminal::kCollision: return "collision";
    case Terminal::kStopped: return "stopped";
    case Terminal::kOvershoot: return "overshoot";
    case Terminal::kTimeout: return "timeout";
    default: return "running";
  }
}

/// Everything produced by one decision step.
struct StepResult {
  Observation obs;        ///< observation of the post-step state
  double reward = 0.0;
  Terminal terminal = Terminal::kNone;
  SafetyMetrics safety;   ///< post-step threat metrics
  double v_ref = 0.0;     ///< post-step reference speed
  double accel_demand = 0.0;
  double steer = 0.0;
  bool stopped_compliant = false;
};

/// Pure reward function over one transition's context.
struct RewardContext {
  double v = 0.0;
  double v_ref = 0.0;
  double v_set = 1.0;
  double accel_demand = 0.0;
  double prev_accel_demand = 0.0;
  bool collision = false;
  bool stopped_compliant = false;
  bool near_red = false; ///< both times-to-zone under the penalty threshold
};

inline double step_reward(const RewardContext& c, const AgentParams& ap) {
  double r = ap.w_v * (1.0 - std::abs(c.v - c.v_ref) / c.v_set);
  r -= ap.w_j * std::abs(c.accel_demand - c.prev_accel_demand) / 7.0;
  if (c.near_red) r -= ap.w_ttz;
  if (c.collision) r -= ap.p_collision;
  if (c.stopped_compliant) r += ap.b_stop;
  return r;
}

inline constexpr double kStopSpeedEps = 0.05; ///< standstill threshold [m/s]
inline constexpr int kStopHoldSteps = 40;     ///< steps of standstill to latch
inline constexpr double kStopWindow = 30.0;   ///< compliant-stop distance [m]
inline constexpr double kOvershootMargin = 10.0; ///< past-zone terminal [m]

/// The crosswalk episode: plant, scenario, tracker, reward, terminals.
class World {
public:
  World(const Config& cfg)
      : cfg_(cfg), model_(cfg.vehicle, cfg.tire, cfg.wheel) {}

  /// Start a fresh episode.  The seed shuffles pedestrian phases.
  Observation reset(std::uint64_t seed) {
    scenario_ = build_scenario(cfg_.scenario, seed);
    state_ = PlantState{};
    state_.chassis.v = cfg_.scenario.v0;
    state_.chassis.x = 0.0;
    state_.chassis.y = 0.0;
    state_.chassis.psi = 0.0;
    t_ = 0.0;
    steps_ = 0;
    prev_demand_ = 0.0;
    rest_steps_ = 0;
    terminal_ = Terminal::kNone;
    collision_ = false;
    return observe();
  }

  bool done() const { return terminal_ != Terminal::kNone; }
  Terminal terminal() const { return terminal_; }
  double time() const { return t_; }
  int steps() const { return steps_; }
  const PlantState& plant_state() const { return state_; }
  const Scenario& scenario() const { return scenario_; }
  const Config& config() const { return cfg_; }
  double prev_demand() const { return prev_demand_; }

  /// Override the mirrored chassis/actor state (cooperating-process mode:
  /// the plant lives elsewhere and streams its state in).
  void mirror(const VehicleState& chassis, const std::vector<Actor>& actors) {
    state_.chassis = chassis;
    for (std::size_t i = 0;
         i < actors.size() && i < scenario_.actors.size(); ++i) {
      Actor& dst = scenario_.actors[i];
      dst.x = actors[i].x;
      dst.y = actors[i].y;
      dst.heading = actors[i].heading;
      dst.speed = actors[i].speed;
    }
  }

  Observation observe() const {
    return build_observation(state_.chassis, scenario_, cfg_.agent,
                             cfg_.vehicle.v_eps);
  }

  /// Acceleration demand for an action at the current speed.
  double action_accel(int action) const {
    switch (static_cast<Action>(action)) {
      case Action::kHardBrake: return -6.0;
      case Action::kSoftBrake: return -2.5;
      case Action::kCoast: return 0.0;
      case Action::kSoftThrottle: return 1.0;
      case Action::kHoldSpeed: {
        const double v = state_.chassis.v;
        const double ff = road_load(v, cfg_.vehicle) / cfg_.vehicle.m;
        return std::clamp(0.5 * (cfg_.scenario.v_set - v) + ff, -2.5, 1.5);
      }
      default:
        throw InvalidInputError("action index out of range: " +
                                std::to_string(action));
    }
  }

  /// Steering command from the path tracker at the current state.
  PursuitResult steering() const {
    return pure_pursuit(state_.chassis.x, state_.chassis.y, state_.chassis.psi,
                        state_.chassis.v, scenario_.centerline,
                        cfg_.vehicle.wheelbase(), cfg_.scenario.lookahead_min,
                        cfg_.scenario.lookahead_gain, cfg_.scenario.steer_max);
  }

  /// Advance one decision period under the given action.
  StepResult step(int action) {
    const PursuitResult steer = steering();
    const double demand = action_accel(action);
    return step_with(demand, steer.delta);
  }

  /// Advance one decision period under explicit low-level commands
  /// (cooperating-process mode sends these over the wire).
  StepResult step_with(double accel_demand, double steer) {
    if (done()) throw InvalidInputError("step on a finished episode");
    ControlInput u;
    u.delta_f = steer;
    // Demand to per-axle torque: half the required force on each axle.
    const double torque =
        accel_demand * cfg_.vehicle.m * cfg_.wheel.radius / 2.0;
    u.m_f = torque;
    u.m_r = torque;

    const bool rk4 = cfg_.agent.integrator == "rk4";
    const int n = cfg_.agent.substeps();
    const double dt = cfg_.agent.dt_dynamics;
    for (int i = 0; i < n; ++i) {
      const PlantState before = state_;
      state_ = step_plant(model_, state_, u, dt, rk4);
      for (Actor& a : scenario_.actors) advance_actor(a, dt);
      check_faults(before);
      if (!collision_) collision_ = any_collision();
    }
    t_ += cfg_.agent.dt_agent;
    ++steps_;

    StepResult res;
    res.accel_demand = accel_demand;
    res.steer = steer;

    const double s_ego = arc_length_projection(
        scenario_.centerline, state_.chassis.x, state_.chassis.y);
    res.safety = compute_safety(s_ego, state_.chassis.v, scenario_,
                                cfg_.vehicle.v_eps);
    res.v_ref = reference_speed(s_ego, cfg_.scenario.v_set, res.safety,
                                scenario_, cfg_.scenario.stop_margin,
                                kComfortDecel);

    // Terminal detection.
    if (collision_) {
      terminal_ = Terminal::kCollision;
    } else {
      if (state_.chassis.v < kStopSpeedEps) ++rest_steps_; else rest_steps_ = 0;
      const double front_d =
          scenario_.zone_entry_s - (s_ego + cfg_.scenario.ego_half_length);
      if (rest_steps_ >= kStopHoldSteps) {
        terminal_ = Terminal::kStopped;
        res.stopped_compliant = front_d >= 0.0 && front_d <= kStopWindow;
      } else if (s_ego > scenario_.zone_exit_s + kOvershootMargin) {
        terminal_ = Terminal::kOvershoot;
      } else if (t_ >= cfg_.scenario.duration_max - 1e-9) {
        terminal_ = Terminal::kTimeout;
      }
    }

    RewardContext rc;
    rc.v = state_.chassis.v;
    rc.v_ref = res.v_ref;
    rc.v_set = cfg_.scenario.v_set;
    rc.accel_demand = accel_demand;
    rc.prev_accel_demand = prev_demand_;
    rc.collision = collision_;
    rc.stopped_compliant = res.stopped_compliant;
    rc.near_red = false;
    for (const auto& th : res.safety.threats)
      if (th.ttz_vehicle < cfg_.agent.ttz_penalty_threshold &&
          th.ttz_actor < cfg_.agent.ttz_penalty_threshold)
        rc.near_red = true;
    res.reward = step_reward(rc, cfg_.agent);
    res.terminal = terminal_;
    prev_demand_ = accel_demand;

    res.obs = observe();
    return res;
  }

private:
  bool any_collision() const {
    for (const Actor& a : scenario_.actors)
      if (footprint_overlaps(state_.chassis.x, state_.chassis.y,
                             state_.chassis.psi,
                             cfg_.scenario.ego_half_length,
                             cfg_.scenario.ego_half_width, a))
        return true;
    return false;
  }

  void check_faults(const PlantState& last_good) const {
    const auto& s = state_.chassis;
    const bool ok = std::isfinite(s.beta) && std::isfinite(s.v) &&
                    std::isfinite(s.r) && std::isfinite(s.x) &&
                    std::isfinite(s.y) && std::isfinite(s.psi) &&
                    std::isfinite(state_.wheels.d_omega_f) &&
                    std::isfinite(state_.wheels.d_omega_r);
    if (!ok) {
      const auto& g = last_good.chassis;
      std::ostringstream os;
      os << "t=" << t_ << " x=" << g.x << " y=" << g.y << " psi=" << g.psi
         << " v=" << g.v << " beta=" << g.beta << " r=" << g.r;
      throw SimulationFaultError("non-finite state during integration",
                                 os.str());
    }
  }

  Config cfg_;
  PlantModel model_;
  Scenario scenario_;
  PlantState state_;
  double t_ = 0.0;
  int steps_ = 0;
  double prev_demand_ = 0.0;
  int rest_steps_ = 0;
  Terminal terminal_ = Terminal::kNone;
  bool collision_ = false;
};

} // namespace vve
