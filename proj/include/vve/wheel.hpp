#pragma once

#include <algorithm>
#include <cmath>
#include <utility>

#include "vve/config.hpp"
#include "vve/dynamics.hpp"
#include "vve/errors.hpp"

namespace vve {

/// Wheel spin states, stored as the deviation of angular velocity from
/// free rolling (so straight driving at any speed is the zero state).
struct WheelState {
  double d_omega_f = 0.0; ///< front axle angular-velocity deviation [rad/s]
  double d_omega_r = 0.0; ///< rear axle angular-velocity deviation [rad/s]
};

/// Absolute angular velocities {front, rear}: deviation plus the
/// free-rolling rate implied by the axle's longitudinal speed.
inline std::pair<double, double> absolute_omega(const WheelState& w,
                                                const AxleKinematics& k,
                                                const WheelParams& p) {
  return {w.d_omega_f + k.v_xf / p.radius, w.d_omega_r + k.v_xr / p.radius};
}

/// Spin dynamics: net torque minus tire reaction, per axle.
///   d(d_omega)/dt = (M - F_x * R) / I
inline std::pair<double, double> wheel_derivative(double m_f, double m_r,
                                                  double f_xf, double f_xr,
                                                  const WheelParams& p) {
  return {(m_f - f_xf * p.radius) / p.inertia,
          (m_r - f_xr * p.radius) / p.inertia};
}

/// Effective torque reaching the wheel.  Drive torque passes through;
/// brake torque always opposes the wheel's spin direction and tapers
/// linearly to zero through +-brake_taper_omega, so a braked wheel settles
/// at rest instead of being driven backwards.
inline double brake_effective_torque(double m_cmd, double omega,
                                     const WheelParams& p) {
  if (m_cmd >= 0.0) return m_cmd;
  const double sat = std::clamp(omega / p.brake_taper_omega, -1.0, 1.0);
  return -std::abs(m_cmd) * sat;
}

/// Slip ratios {front, rear}.  The denominator is floored by
/// `v_slip_eps` so the ratio stays defined (and the spin dynamics stay
/// integrable at a fixed step) down to standstill.
inline std::pair<double, double> slip_ratios(const WheelState& w,
                                             const AxleKinematics& k,
                                             const WheelParams& p) {
  auto [omega_f, omega_r] = absolute_omega(w, k, p);
  auto one = [&p](double d_omega, double omega, double v_x) {
    const double denom = std::max({std::abs(omega * p.radius), std::abs(v_x),
                                   p.v_slip_eps});
    return std::clamp(d_omega * p.radius / denom, -1.0, 1.0);
  };
  return {one(w.d_omega_f, omega_f, k.v_xf), one(w.d_omega_r, omega_r, k.v_xr)};
}

} // namespace vve
