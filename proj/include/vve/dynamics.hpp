#pragma once

#include <cmath>
#include <string>
#include <utility>

#include "vve/config.hpp"
#include "vve/errors.hpp"

namespace vve {

inline constexpr double kGravity = 9.81;

/// Planar single-track chassis state.
struct VehicleState {
  double beta = 0.0; ///< sideslip angle at the CG [rad]
  double v = 0.0;    ///< CG speed [m/s], >= 0
  double r = 0.0;    ///< yaw rate [rad/s]
  double x = 0.0;    ///< position, inertial frame [m]
  double y = 0.0;
  double psi = 0.0;  ///< heading [rad]
};

/// Axle-level commands acting on the chassis.
struct ControlInput {
  double delta_f = 0.0; ///< front steering angle [rad]
  double delta_r = 0.0; ///< rear steering angle [rad]
  double m_f = 0.0;     ///< front axle drive/brake torque [N m]
  double m_r = 0.0;     ///< rear axle drive/brake torque [N m]
  double m_zd = 0.0;    ///< direct yaw moment [N m]
};

/// Tire forces in each axle's wheel frame.
struct TireForces {
  double f_xf = 0.0;
  double f_xr = 0.0;
  double f_yf = 0.0;
  double f_yr = 0.0;
};

/// Body-frame force/moment sums produced by projecting the axle forces
/// through the steering angles.
struct ResultantLoads {
  double sum_fx = 0.0;
  double sum_fy = 0.0;
  double sum_mz = 0.0;
};

/// Rates of the velocity-level states.
struct StateRates {
  double dbeta = 0.0;
  double dv = 0.0;
  double dr = 0.0;
};

/// Rates of the pose states.
struct PoseRates {
  double dx = 0.0;
  double dy = 0.0;
  double dpsi = 0.0;
};

/// Speeds and slip angles seen by each axle.
struct AxleKinematics {
  double alpha_f = 0.0; ///< front tire slip angle [rad]
  double alpha_r = 0.0;
  double v_xf = 0.0;    ///< wheel-frame longitudinal speed at the axle [m/s]
  double v_xr = 0.0;
};

namespace detail {
inline void check_finite(double v, const char* name) {
  if (!std::isfinite(v))
    throw InvalidInputError(std::string("non-finite input: ") + name);
}
} // namespace detail

/// Speed-dependent resistive force along the body x axis:
/// aerodynamic drag plus rolling resistance.
inline double road_load(double v, const VehicleParams& p) {
  detail::check_finite(v, "v");
  return p.drag_coeff * v * v + p.roll_coeff * p.m * kGravity;
}

/// Static axle vertical loads {front, rear} from the lever rule.
inline std::pair<double, double> vertical_loads(const VehicleParams& p) {
  const double wb = p.wheelbase();
  return {p.m * kGravity * p.l_r / wb, p.m * kGravity * p.l_f / wb};
}

/// Project the wheel-frame tire forces through the steering angles into
/// body-frame force and yaw-moment sums, including the resistive road load
/// (acting along -x) and the direct yaw moment.
inline ResultantLoads resultant_loads(const TireForces& f,
                                      const ControlInput& u, double f_load,
                                      const VehicleParams& p) {
  detail::check_finite(f.f_xf, "f_xf");
  detail::check_finite(f.f_xr, "f_xr");
  detail::check_finite(f.f_yf, "f_yf");
  detail::check_finite(f.f_yr, "f_yr");
  detail::check_finite(u.delta_f, "delta_f");
  detail::check_finite(u.delta_r, "delta_r");
  detail::check_finite(f_load, "f_load");
  const double cf = std::cos(u.delta_f), sf = std::sin(u.delta_f);
  const double cr = std::cos(u.delta_r), sr = std::sin(u.delta_r);
  ResultantLoads out;
  out.sum_fx = cf * f.f_xf + cr * f.f_xr - sf * f.f_yf - sr * f.f_yr - f_load;
  out.sum_fy = sf * f.f_xf + sr * f.f_xr + cf * f.f_yf + cr * f.f_yr;
  out.sum_mz = p.l_f * sf * f.f_xf - p.l_r * sr * f.f_xr +
               p.l_f * cf * f.f_yf - p.l_r * cr * f.f_yr + u.m_zd;
  return out;
}

/// Velocity-level chassis dynamics (sideslip, speed, yaw rate), with the
/// tire forces already resolved per axle.  The sideslip row divides by the
/// vehicle speed, so this is only valid above `v_eps`; below it a caller
/// must switch to a degenerate longitudinal model.
inline StateRates state_derivative(const VehicleState& s, const TireForces& f,
                                   const ControlInput& u, double f_load,
                                   const VehicleParams& p) {
  detail::check_finite(s.beta, "beta");
  detail::check_finite(s.v, "v");
  detail::check_finite(s.r, "r");
  if (s.v < p.v_eps)
    throw SingularSpeedError("state_derivative requires v >= v_eps (v=" +
                             std::to_string(s.v) + ")");
  const double cfb = std::cos(u.delta_f - s.beta);
  const double sfb = std::sin(u.delta_f - s.beta);
  const double crb = std::cos(u.delta_r - s.beta);
  const double srb = std::sin(u.delta_r - s.beta);
  StateRates out;
  out.dbeta = (sfb * f.f_xf + srb * f.f_xr + cfb * f.f_yf + crb * f.f_yr +
               std::sin(s.beta) * f_load) /
                  (p.m * s.v) -
              s.r;
  out.dv = (cfb * f.f_xf + crb * f.f_xr - sfb * f.f_yf - srb * f.f_yr -
            std::cos(s.beta) * f_load) /
           p.m;
  out.dr = (p.l_f * std::sin(u.delta_f) * f.f_xf -
            p.l_r * std::sin(u.delta_r) * f.f_xr +
            p.l_f * std::cos(u.delta_f) * f.f_yf -
            p.l_r * std::cos(u.delta_r) * f.f_yr + u.m_zd) /
           p.i_z;
  return out;
}

/// Pose kinematics: the CG velocity vector points along psi + beta.
inline PoseRates pose_rates(const VehicleState& s) {
  PoseRates out;
  out.dx = s.v * std::cos(s.psi + s.beta);
  out.dy = s.v * std::sin(s.psi + s.beta);
  out.dpsi = s.r;
  return out;
}

/// Slip angles and wheel-frame longitudinal speeds at both axles.
/// Valid above `v_eps` only (atan of lateral/longitudinal axle velocity).
inline AxleKinematics axle_kinematics(const VehicleState& s,
                                      const ControlInput& u,
                                      const VehicleParams& p) {
  if (s.v < p.v_eps)
    throw SingularSpeedError("axle_kinematics requires v >= v_eps (v=" +
                             std::to_string(s.v) + ")");
  // Axle velocities in the body frame.
  const double vx = s.v * std::cos(s.beta);
  const double vy = s.v * std::sin(s.beta);
  const double vyf = vy + p.l_f * s.r;
  const double vyr = vy - p.l_r * s.r;
  // Course angle of each axle's velocity, relative to the wheel heading.
  const double theta_f = std::atan2(vyf, vx);
  const double theta_r = std::atan2(vyr, vx);
  AxleKinematics out;
  out.alpha_f = u.delta_f - theta_f;
  out.alpha_r = u.delta_r - theta_r;
  const double v_f = std::hypot(vx, vyf);
  const double v_r = std::hypot(vx, vyr);
  out.v_xf = v_f * std::cos(out.alpha_f);
  out.v_xr = v_r * std::cos(out.alpha_r);
  return out;
}

} // namespace vve
