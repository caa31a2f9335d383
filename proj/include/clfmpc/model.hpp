#pragma once

#include <cmath>
#include <utility>

#include <Eigen/Core>

#include "clfmpc/dual.hpp"

namespace clfmpc {

template <typename Scalar>
using Vector4 = Eigen::Matrix<Scalar, 4, 1>;
template <typename Scalar>
using Vector2 = Eigen::Matrix<Scalar, 2, 1>;

/// Planar Segway state [r, theta, r_dot, theta_dot].
using State = Vector4<double>;

enum StateIndex : int { kPosition = 0, kPitch = 1, kVelocity = 2, kPitchRate = 3 };

/// Physical constants of the planar asymmetric two-wheeled inverted pendulum.
///
/// The body's center of mass sits `com_distance` from the axle at angle
/// `theta + com_angle_offset` from vertical; the unforced equilibrium is
/// therefore at theta = -com_angle_offset. Wheels are modelled as uniform
/// disks. The motor applies torque `motor_torque_constant * current` between
/// body and wheels.
struct SegwayParams {
  double wheel_mass = 4.0;              // kg, both wheels
  double body_mass = 40.0;              // kg
  double body_inertia = 2.0;            // kg m^2 about the body CoM
  double wheel_radius = 0.2;            // m
  double com_distance = 0.35;           // m
  double com_angle_offset = -0.138;     // rad
  double motor_torque_constant = 7.0;   // N m / A
  double gravity = 9.81;                // m / s^2
  double friction_coeff = 0.0;          // N m s / rad, viscous on wheel-body rotation

  /// Throws InvalidParams when a mass, inertia or length is not positive.
  void validate() const;
};

struct InputBounds {
  double lo = -20.0;  // A
  double hi = 20.0;   // A

  bool admissible(double u) const { return u >= lo && u <= hi; }
  double clamp(double u) const { return u < lo ? lo : (u > hi ? hi : u); }
};

enum class Integrator { ForwardEuler, RK4 };

struct DiscretizationConfig {
  double dt = 0.01;
  Integrator method = Integrator::ForwardEuler;
};

namespace detail {

// Generalized mass matrix entries and forces of the Newton-Euler model.
template <typename Scalar>
struct SegwayTerms {
  Scalar m11, m12, m22, det;
  Scalar force_r, force_theta;
};

template <typename Scalar>
SegwayTerms<Scalar> segway_terms(const SegwayParams& p, const Vector4<Scalar>& x) {
  using std::cos;
  using std::sin;
  const Scalar psi = x(kPitch) + p.com_angle_offset;
  const Scalar s = sin(psi);
  const Scalar c = cos(psi);
  const double wheel_inertia = 0.5 * p.wheel_mass * p.wheel_radius * p.wheel_radius;
  const double ml = p.body_mass * p.com_distance;

  SegwayTerms<Scalar> t;
  t.m11 = Scalar(p.wheel_mass + wheel_inertia / (p.wheel_radius * p.wheel_radius) + p.body_mass);
  t.m12 = ml * c;
  t.m22 = Scalar(ml * p.com_distance + p.body_inertia);
  t.det = t.m11 * t.m22 - t.m12 * t.m12;

  const Scalar slip_rate = x(kVelocity) / p.wheel_radius - x(kPitchRate);
  t.force_r = ml * s * x(kPitchRate) * x(kPitchRate) - p.friction_coeff * slip_rate / p.wheel_radius;
  t.force_theta = ml * p.gravity * s + p.friction_coeff * slip_rate;
  return t;
}

}  // namespace detail

/// Drift vector field f(x) of x_dot = f(x) + g(x) u.
template <typename Scalar>
Vector4<Scalar> drift(const SegwayParams& p, const Vector4<Scalar>& x) {
  const auto t = detail::segway_terms(p, x);
  Vector4<Scalar> f;
  f(kPosition) = x(kVelocity);
  f(kPitch) = x(kPitchRate);
  f(kVelocity) = (t.m22 * t.force_r - t.m12 * t.force_theta) / t.det;
  f(kPitchRate) = (t.m11 * t.force_theta - t.m12 * t.force_r) / t.det;
  return f;
}

/// Input column g(x); the kinematic rows are identically zero.
template <typename Scalar>
Vector4<Scalar> input_matrix(const SegwayParams& p, const Vector4<Scalar>& x) {
  const auto t = detail::segway_terms(p, x);
  const double torque_r = p.motor_torque_constant / p.wheel_radius;
  const double torque_theta = -p.motor_torque_constant;
  Vector4<Scalar> g;
  g(kPosition) = Scalar(0.0);
  g(kPitch) = Scalar(0.0);
  g(kVelocity) = (t.m22 * torque_r - t.m12 * torque_theta) / t.det;
  g(kPitchRate) = (t.m11 * torque_theta - t.m12 * torque_r) / t.det;
  return g;
}

template <typename Scalar>
Vector4<Scalar> dynamics(const SegwayParams& p, const Vector4<Scalar>& x, const Scalar& u) {
  return drift(p, x) + input_matrix(p, x) * u;
}

/// One step of `method` for x_dot = rhs(x) over dt. Works for any state type
/// closed under addition and scaling by a scalar.
template <typename StateT, typename Rhs>
StateT integrate_step(Rhs&& rhs, const StateT& x, double dt, Integrator method) {
  if (method == Integrator::ForwardEuler) {
    return x + rhs(x) * dt;
  }
  const StateT k1 = rhs(x);
  const StateT k2 = rhs(StateT(x + k1 * (0.5 * dt)));
  const StateT k3 = rhs(StateT(x + k2 * (0.5 * dt)));
  const StateT k4 = rhs(StateT(x + k3 * dt));
  return x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
}

/// Zero-order-hold step of length cfg.dt.
template <typename Scalar>
Vector4<Scalar> discrete_step(const SegwayParams& p, const Vector4<Scalar>& x, const Scalar& u,
                              const DiscretizationConfig& cfg) {
  auto rhs = [&](const Vector4<Scalar>& xs) -> Vector4<Scalar> { return dynamics<Scalar>(p, xs, u); };
  return integrate_step(rhs, x, cfg.dt, cfg.method);
}

/// Pitch acceleration of the unforced, motionless Segway at pitch `theta`.
double static_pitch_acceleration(const SegwayParams& p, double theta);

/// Unforced equilibrium [0, theta_e, 0, 0]; throws NoEquilibrium when the
/// pitch acceleration does not change sign on (-pi/2, pi/2).
State equilibrium(const SegwayParams& p);

/// (d x+ / d x, d x+ / d u) of discrete_step.
std::pair<Eigen::Matrix4d, Eigen::Vector4d> discrete_jacobians(const SegwayParams& p, const State& x,
                                                                double u,
                                                                const DiscretizationConfig& cfg);

/// Kinetic plus potential energy, zero potential at the axle height.
double mechanical_energy(const SegwayParams& p, const State& x);

}  // namespace clfmpc
