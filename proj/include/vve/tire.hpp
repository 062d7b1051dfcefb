#pragma once

#include <algorithm>
#include <cmath>
#include <limits>

#include "vve/config.hpp"
#include "vve/errors.hpp"

namespace vve {

/// Inputs to the combined-slip force computation for one tire.
struct SlipState {
  double s = 0.0;     ///< longitudinal slip ratio [-], in [-1, 1]
  double alpha = 0.0; ///< slip angle [rad]
  double f_z = 0.0;   ///< vertical load [N], >= 0
};

/// Intermediate quantities of the force computation, exposed for
/// diagnostics and testing.
struct TireDiag {
  double z = 0.0;   ///< saturation variable
  double f = 0.0;   ///< saturation function value, in (0, 1]
  double g_x = 0.0; ///< longitudinal weighting polynomial
  double g_y = 0.0; ///< lateral weighting polynomial
};

/// Tire forces in the wheel frame plus diagnostics.
struct TireResult {
  double f_x = 0.0;
  double f_y = 0.0;
  TireDiag diag;
};

/// Combined-slip tire force model.
///
/// A saturation variable
///   Z = mu*F_z*(1-s) / (2*sqrt((C_x s)^2 + (C_y tan a)^2))
/// drives the friction-limit function f(Z) = Z(2-Z) for Z < 1 and 1
/// otherwise; empirical weighting polynomials g_x(s), g_y(tan a) shape the
/// transition region:
///   F_x = C_x * s/(1-s) * f(Z) * g_x
///   F_y = C_y * tan(a)/(1-s) * f(Z) * g_y
///
/// By default all magnitude factors are evaluated on |s| and |tan a| and the
/// slip signs are reapplied to the outputs, which makes F_x exactly odd in s
/// and F_y exactly odd in alpha (braking mirrors driving).  Setting
/// `literal_g` evaluates the published asymmetric form with signed slips.
inline TireResult tire_forces(const SlipState& in, const TireParams& p) {
  if (!std::isfinite(in.s) || !std::isfinite(in.alpha) || !std::isfinite(in.f_z))
    throw InvalidInputError("tire_forces: non-finite input");
  if (in.f_z < 0.0)
    throw InvalidInputError("tire_forces: negative vertical load");
  if (!(p.mu > 0.0) || p.mu > 1.5)
    throw InvalidInputError("tire_forces: mu outside (0, 1.5]");

  const double s_signed = std::clamp(in.s, -p.s_clamp, p.s_clamp);
  const double t_signed = std::tan(in.alpha);

  TireResult out;
  const double norm = std::hypot(p.c_x * s_signed, p.c_y * t_signed);
  if (norm < p.slip_eps * p.mu * in.f_z) {
    // Dead zone: slip too small to produce meaningful force; avoids the
    // 0/0 in Z and keeps derivatives quiet around straight rolling.
    out.diag.z = std::numeric_limits<double>::infinity();
    out.diag.f = 1.0;
    out.diag.g_x = 1.5;
    out.diag.g_y = 1.5;
    return out;
  }

  // Magnitude form (default): evaluate on |s|, |tan a|, reapply signs.
  const double s_mag = p.literal_g ? s_signed : std::abs(s_signed);
  const double t_mag = p.literal_g ? t_signed : std::abs(t_signed);

  const double z = p.mu * in.f_z * (1.0 - s_mag) / (2.0 * norm);
  const double f = z < 1.0 ? z * (2.0 - z) : 1.0;
  const double g_x = (1.15 - 0.75 * p.mu) * s_mag * s_mag -
                     (1.63 - 0.75 * p.mu) * s_mag + 1.5;
  const double g_y = (p.mu - 1.6) * t_mag + 1.5;

  out.diag = {z, f, g_x, g_y};
  if (p.literal_g) {
    out.f_x = p.c_x * s_signed / (1.0 - s_signed) * f * g_x;
    out.f_y = p.c_y * t_signed / (1.0 - s_signed) * f * g_y;
  } else {
    const double denom = 1.0 - s_mag;
    const double sgn_s = s_signed < 0.0 ? -1.0 : 1.0;
    const double sgn_t = t_signed < 0.0 ? -1.0 : 1.0;
    out.f_x = sgn_s * p.c_x * s_mag / denom * f * g_x;
    out.f_y = sgn_t * p.c_y * t_mag / denom * f * g_y;
  }
  return out;
}

} // namespace vve
