#pragma once

#include <array>
#include <cmath>

#include "vve/config.hpp"
#include "vve/dynamics.hpp"
#include "vve/tire.hpp"
#include "vve/wheel.hpp"

namespace vve {

/// Full simulated plant state: chassis plus wheel spin deviations.
struct PlantState {
  VehicleState chassis;
  WheelState wheels;
};

/// Time derivative of every plant state.
struct PlantRates {
  StateRates chassis;
  PoseRates pose;
  double d_omega_f = 0.0;
  double d_omega_r = 0.0;
};

/// The assembled vehicle model: chassis, tires, and wheels closed into
/// one ODE.  Negative axle torques are treated as brake commands and pass
/// through the zero-speed taper; positive torques drive directly.
class PlantModel {
public:
  PlantModel(const VehicleParams& vp, const TireParams& tp,
             const WheelParams& wp)
      : vp_(vp), tp_(tp), wp_(wp) {
    const auto loads = vertical_loads(vp_);
    f_zf_ = loads.first;
    f_zr_ = loads.second;
  }

  const VehicleParams& vehicle() const { return vp_; }
  const TireParams& tire() const { return tp_; }
  const WheelParams& wheel() const { return wp_; }

  PlantRates derivative(const PlantState& x, const ControlInput& u) const {
    const VehicleState& s = x.chassis;
    PlantRates out;
    AxleKinematics kin;
    if (s.v >= vp_.v_eps) {
      kin = axle_kinematics(s, u, vp_);
      const auto [s_f, s_r] = slip_ratios(x.wheels, kin, wp_);
      const TireResult front = tire_forces({s_f, kin.alpha_f, f_zf_}, tp_);
      const TireResult rear = tire_forces({s_r, kin.alpha_r, f_zr_}, tp_);
      const TireForces forces{front.f_x, rear.f_x, front.f_y, rear.f_y};
      const double f_load = road_load(s.v, vp_);
      out.chassis = state_derivative(s, forces, u, f_load, vp_);
      out.pose = pose_rates(s);
      fill_wheel_rates(x, u, kin, front.f_x, rear.f_x, out);
    } else {
      // Low-speed degenerate mode: slip angles are meaningless, so the
      // model collapses to a longitudinal force balance.  Sideslip is
      // frozen; yaw responds to the direct moment only.
      kin.alpha_f = kin.alpha_r = 0.0;
      kin.v_xf = kin.v_xr = s.v;
      const auto [s_f, s_r] = slip_ratios(x.wheels, kin, wp_);
      const TireResult front = tire_forces({s_f, 0.0, f_zf_}, tp_);
      const TireResult rear = tire_forces({s_r, 0.0, f_zr_}, tp_);
      const double f_load = road_load(s.v, vp_);
      out.chassis.dbeta = 0.0;
      out.chassis.dv = (front.f_x + rear.f_x - f_load) / vp_.m;
      out.chassis.dr = u.m_zd / vp_.i_z;
      out.pose = pose_rates(s);
      fill_wheel_rates(x, u, kin, front.f_x, rear.f_x, out);
    }
    return out;
  }

private:
  void fill_wheel_rates(const PlantState& x, const ControlInput& u,
                        const AxleKinematics& kin, double f_xf, double f_xr,
                        PlantRates& out) const {
    const auto [omega_f, omega_r] = absolute_omega(x.wheels, kin, wp_);
    const double m_f = brake_effective_torque(u.m_f, omega_f, wp_);
    const double m_r = brake_effective_torque(u.m_r, omega_r, wp_);
    const auto [dwf, dwr] = wheel_derivative(m_f, m_r, f_xf, f_xr, wp_);
    out.d_omega_f = dwf;
    out.d_omega_r = dwr;
  }

  VehicleParams vp_;
  TireParams tp_;
  WheelParams wp_;
  double f_zf_ = 0.0;
  double f_zr_ = 0.0;
};

namespace detail {

inline std::array<double, 8> pack(const PlantState& x) {
  return {x.chassis.beta, x.chassis.v,   x.chassis.r,      x.chassis.x,
          x.chassis.y,    x.chassis.psi, x.wheels.d_omega_f,
          x.wheels.d_omega_r};
}

inline PlantState unpack(const std::array<double, 8>& a) {
  PlantState x;
  x.chassis.beta = a[0];
  x.chassis.v = a[1];
  x.chassis.r = a[2];
  x.chassis.x = a[3];
  x.chassis.y = a[4];
  x.chassis.psi = a[5];
  x.wheels.d_omega_f = a[6];
  x.wheels.d_omega_r = a[7];
  return x;
}

inline std::array<double, 8> rates_vec(const PlantRates& r) {
  return {r.chassis.dbeta, r.chassis.dv, r.chassis.dr, r.pose.dx,
          r.pose.dy,       r.pose.dpsi,  r.d_omega_f,  r.d_omega_r};
}

} // namespace detail

/// One forward-Euler step.  Speed is clamped at zero afterwards so the
/// resistive road load cannot integrate the vehicle into reverse.
inline PlantState step_euler(const PlantModel& model, const PlantState& x,
                             const ControlInput& u, double dt) {
  const auto k1 = detail::rates_vec(model.derivative(x, u));
  auto a = detail::pack(x);
  for (int i = 0; i < 8; ++i) a[i] += dt * k1[i];
  a[1] = std::max(a[1], 0.0);
  return detail::unpack(a);
}

/// One classical fourth-order Runge-Kutta step with the same zero-speed
/// clamp.  Intermediate stage states may dip below `v_eps`; the plant
/// model switches branch per stage evaluation, so no stage can throw.
inline PlantState step_rk4(const PlantModel& model, const PlantState& x,
                           const ControlInput& u, double dt) {
  const auto x0 = detail::pack(x);
  auto eval = [&](const std::array<double, 8>& a) {
    auto st = detail::unpack(a);
    st.chassis.v = std::max(st.chassis.v, 0.0);
    return detail::rates_vec(model.derivative(st, u));
  };
  const auto k1 = eval(x0);
  std::array<double, 8> tmp;
  for (int i = 0; i < 8; ++i) tmp[i] = x0[i] + 0.5 * dt * k1[i];
  const auto k2 = eval(tmp);
  for (int i = 0; i < 8; ++i) tmp[i] = x0[i] + 0.5 * dt * k2[i];
  const auto k3 = eval(tmp);
  for (int i = 0; i < 8; ++i) tmp[i] = x0[i] + dt * k3[i];
  const auto k4 = eval(tmp);
  std::array<double, 8> out;
  for (int i = 0; i < 8; ++i)
    out[i] = x0[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
  out[1] = std::max(out[1], 0.0);
  return detail::unpack(out);
}

/// Dispatch on the configured integrator name ("rk4" or "euler").
inline PlantState step_plant(const PlantModel& model, const PlantState& x,
                             const ControlInput& u, double dt, bool use_rk4) {
  return use_rk4 ? step_rk4(model, x, u, dt) : step_euler(model, x, u, dt);
}

} // namespace vve
