#pragma once

// Discrete unicycle kinematics, first-order linearization around a
// reference, and control/acceleration box checks.

#include <Eigen/Dense>

#include <cmath>
#include <span>
#include <vector>

#include "mpcom/geometry.hpp"

namespace mpcom::dyn {

struct Control
{
  double v = 0.0;  ///< linear velocity, m/s
  double w = 0.0;  ///< angular velocity, rad/s
};

struct Limits
{
  Control u_min{-0.2, -1.0};
  Control u_max{1.0, 1.0};
  Control a_min{-0.5, -0.5};  ///< per-slot rate bounds
  Control a_max{0.5, 0.5};
};

struct LinearizedDynamics
{
  Eigen::Matrix3d A;
  Eigen::Matrix<double, 3, 2> B;
  Eigen::Vector3d c;
};

/// One slot of the nonlinear model; heading renormalized to (-pi, pi].
inline geom::Pose step_nonlinear(const geom::Pose & s, const Control & u, double tau)
{
  return geom::Pose(
    s.position.x + tau * u.v * std::cos(s.heading),
    s.position.y + tau * u.v * std::sin(s.heading),
    s.heading + tau * u.w);
}

/// First-order expansion of step_nonlinear at (s_ref, u_ref):
/// s_next ~ A s + B u + c, exact at the expansion point. The heading in
/// c is left unwrapped so the affine model stays continuous.
inline LinearizedDynamics linearize(const geom::Pose & s_ref, const Control & u_ref, double tau)
{
  const double ct = std::cos(s_ref.heading);
  const double st = std::sin(s_ref.heading);
  LinearizedDynamics lin;
  lin.A << 1.0, 0.0, -tau * u_ref.v * st,
           0.0, 1.0,  tau * u_ref.v * ct,
           0.0, 0.0,  1.0;
  lin.B << tau * ct, 0.0,
           tau * st, 0.0,
           0.0,      tau;
  const Eigen::Vector3d s(s_ref.position.x, s_ref.position.y, s_ref.heading);
  const Eigen::Vector2d u(u_ref.v, u_ref.w);
  const Eigen::Vector3d next(
    s_ref.position.x + tau * u_ref.v * ct,
    s_ref.position.y + tau * u_ref.v * st,
    s_ref.heading + tau * u_ref.w);
  lin.c = next - lin.A * s - lin.B * u;
  return lin;
}

struct LimitViolation
{
  enum class Kind { Velocity, Acceleration };
  int step = 0;
  Kind kind = Kind::Velocity;
};

/// Empty iff every control is inside [u_min, u_max] and every consecutive
/// difference is inside [a_min, a_max] (bounds inclusive).
inline std::vector<LimitViolation> check_limits(
  std::span<const Control> controls, const Limits & limits)
{
  std::vector<LimitViolation> out;
  for (std::size_t i = 0; i < controls.size(); ++i) {
    const Control & u = controls[i];
    if (u.v < limits.u_min.v || u.v > limits.u_max.v ||
        u.w < limits.u_min.w || u.w > limits.u_max.w) {
      out.push_back({static_cast<int>(i), LimitViolation::Kind::Velocity});
    }
    if (i + 1 < controls.size()) {
      const double dv = controls[i + 1].v - u.v;
      const double dw = controls[i + 1].w - u.w;
      if (dv < limits.a_min.v || dv > limits.a_max.v ||
          dw < limits.a_min.w || dw > limits.a_max.w) {
        out.push_back({static_cast<int>(i + 1), LimitViolation::Kind::Acceleration});
      }
    }
  }
  return out;
}

}  // namespace mpcom::dyn
