#include "clfmpc/model.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "clfmpc/errors.hpp"

namespace clfmpc {

void SegwayParams::validate() const {
  auto require_positive = [](double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw InvalidParams(std::string("segway parameter '") + name + "' must be positive, got " +
                          std::to_string(v));
    }
  };
  require_positive(wheel_mass, "wheel_mass");
  require_positive(body_mass, "body_mass");
  require_positive(body_inertia, "body_inertia");
  require_positive(wheel_radius, "wheel_radius");
  require_positive(com_distance, "com_distance");
  require_positive(motor_torque_constant, "motor_torque_constant");
  require_positive(gravity, "gravity");
  if (!std::isfinite(com_angle_offset)) throw InvalidParams("com_angle_offset must be finite");
  if (!(friction_coeff >= 0.0)) throw InvalidParams("friction_coeff must be non-negative");
}

double static_pitch_acceleration(const SegwayParams& p, double theta) {
  const State x(0.0, theta, 0.0, 0.0);
  return drift(p, x)(kPitchRate);
}

State equilibrium(const SegwayParams& p) {
  p.validate();
  constexpr double kTol = 1e-12;
  const double edge = std::numbers::pi / 2.0 - 1e-9;

  double lo = -edge;
  double hi = edge;
  double f_lo = static_pitch_acceleration(p, lo);
  const double f_hi = static_pitch_acceleration(p, hi);
  if (f_lo * f_hi > 0.0) {
    throw NoEquilibrium("pitch acceleration does not change sign on (-pi/2, pi/2)");
  }

  double theta = 0.5 * (lo + hi);
  for (int i = 0; i < 200 && hi - lo > 1e-15; ++i) {
    theta = 0.5 * (lo + hi);
    const double f_mid = static_pitch_acceleration(p, theta);
    if (f_mid == 0.0) break;
    if ((f_mid < 0.0) == (f_lo < 0.0)) {
      lo = theta;
      f_lo = f_mid;
    } else {
      hi = theta;
    }
  }

  // Newton polish with an exact derivative.
  for (int i = 0; i < 5; ++i) {
    using D = Dual<double, 1>;
    const Vector4<D> x(D(0.0), D::variable(theta, 0), D(0.0), D(0.0));
    const D acc = drift(p, x)(kPitchRate);
    if (std::abs(acc.value) <= kTol || acc.partials[0] == 0.0) break;
    theta -= acc.value / acc.partials[0];
  }

  const State xe(0.0, theta, 0.0, 0.0);
  if (drift(p, xe).cwiseAbs().maxCoeff() > 1e-10) {
    throw NoEquilibrium("equilibrium root solve did not reach tolerance");
  }
  return xe;
}

std::pair<Eigen::Matrix4d, Eigen::Vector4d> discrete_jacobians(const SegwayParams& p, const State& x,
                                                                double u,
                                                                const DiscretizationConfig& cfg) {
  Eigen::Matrix<double, 5, 1> xu;
  xu << x, u;
  const auto jac = jacobian<5>(
      [&](const auto& w) {
        using S = typename std::decay_t<decltype(w)>::Scalar;
        const Vector4<S> xs = w.template head<4>();
        return discrete_step<S>(p, xs, w(4), cfg);
      },
      xu);
  return {jac.template leftCols<4>(), jac.col(4)};
}

double mechanical_energy(const SegwayParams& p, const State& x) {
  const double psi = x(kPitch) + p.com_angle_offset;
  const double v = x(kVelocity);
  const double w = x(kPitchRate);
  const double l = p.com_distance;
  const double wheel = 0.5 * (1.5 * p.wheel_mass) * v * v;
  const double body = 0.5 * p.body_mass * (v * v + 2.0 * l * std::cos(psi) * v * w + l * l * w * w) +
                      0.5 * p.body_inertia * w * w;
  const double potential = p.body_mass * p.gravity * l * std::cos(psi);
  return wheel + body + potential;
}

}  // namespace clfmpc
