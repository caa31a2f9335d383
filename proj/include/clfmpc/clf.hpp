#pragma once

#include <cmath>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "clfmpc/dual.hpp"
#include "clfmpc/model.hpp"

namespace clfmpc {

/// Error coordinates eta = [e, e_dot].
using ErrorState = Vector2<double>;

/// Piecewise-constant commanded wheel velocity. Each segment holds its value
/// from its start time (inclusive) until the next segment begins; before the
/// first segment the command is zero.
class VelocityProfile {
 public:
  VelocityProfile() = default;
  explicit VelocityProfile(std::vector<std::pair<double, double>> segments);

  double operator()(double t) const;
  double max_abs() const;
  const std::vector<std::pair<double, double>>& segments() const { return segments_; }

 private:
  std::vector<std::pair<double, double>> segments_;  // (start time, velocity), sorted
};

/// Output reference the CLF is built around.
///
/// FixedPoint regulates the pitch to `target(kPitch)`. VelocityTracking
/// regulates the pitch to theta_d = pitch_offset - kv * (r_dot - r_dot_d(t)).
struct ReferenceSignal {
  enum class Mode { FixedPoint, VelocityTracking };

  Mode mode = Mode::FixedPoint;
  State target = State::Zero();
  double pitch_offset = 0.0;
  VelocityProfile velocity;
  double kv = 0.025;

  static ReferenceSignal fixed_point(const State& target);
  static ReferenceSignal velocity_tracking(double pitch_offset, VelocityProfile profile, double kv = 0.025);

  /// Desired pitch at (x, t).
  double desired_pitch(const State& x, double t) const;
  /// Throws InvalidConfig when kv < 0 or the target is not finite.
  void validate() const;
};

struct ClfData {
  Eigen::Matrix2d A_cl = Eigen::Matrix2d::Zero();  // closed-loop error dynamics
  Eigen::Matrix2d Q = Eigen::Matrix2d::Identity();
  Eigen::Matrix2d P = Eigen::Matrix2d::Zero();
  double gamma = 0.0;  // exponential decay rate of V
  double c3 = 0.0;     // class-K coefficient on ||eta||^2
};

struct PdGains {
  double kp = 12.0;
  double kd = 12.0;
};

/// Solves A^T P + P A = -Q. Throws NotHurwitz when A has an eigenvalue with
/// non-negative real part, InvalidConfig when Q is not symmetric positive definite.
Eigen::Matrix2d solve_ctle(const Eigen::Matrix2d& A, const Eigen::Matrix2d& Q);

ClfData synthesize_clf(const PdGains& gains, const Eigen::Matrix2d& Q);

/// eta(x, t). For velocity tracking e_dot is the drift-only derivative of e,
/// so input terms first appear in the derivative of e_dot.
template <typename Scalar>
Vector2<Scalar> error_state(const SegwayParams& params, const Vector4<Scalar>& x, double t,
                            const ReferenceSignal& ref) {
  Vector2<Scalar> eta;
  if (ref.mode == ReferenceSignal::Mode::FixedPoint) {
    eta(0) = x(kPitch) - ref.target(kPitch);
    eta(1) = x(kPitchRate);
    return eta;
  }
  const double rd = ref.velocity(t);
  eta(0) = x(kPitch) - ref.pitch_offset + (x(kVelocity) - rd) * ref.kv;
  eta(1) = x(kPitchRate) + drift(params, x)(kVelocity) * ref.kv;
  return eta;
}

template <typename Scalar>
Scalar quadratic_form(const Eigen::Matrix2d& M, const Vector2<Scalar>& v) {
  return v(0) * v(0) * M(0, 0) + v(0) * v(1) * (M(0, 1) + M(1, 0)) + v(1) * v(1) * M(1, 1);
}

inline double lyapunov_value(const ClfData& clf, const ErrorState& eta) {
  return quadratic_form<double>(clf.P, eta);
}

template <typename Scalar>
Scalar lyapunov_value(const ClfData& clf, const SegwayParams& params, const Vector4<Scalar>& x, double t,
                      const ReferenceSignal& ref) {
  return quadratic_form<Scalar>(clf.P, error_state<Scalar>(params, x, t, ref));
}

/// eta(x, t) together with d eta / d x.
template <typename Scalar>
std::pair<Vector2<Scalar>, Eigen::Matrix<Scalar, 2, 4>> error_state_jacobian(
    const SegwayParams& params, const Vector4<Scalar>& x, double t, const ReferenceSignal& ref) {
  using Inner = Dual<Scalar, 4>;
  Vector4<Inner> xs;
  for (int i = 0; i < 4; ++i) xs(i) = Inner::variable(x(i), i);
  const Vector2<Inner> eta_d = error_state<Inner>(params, xs, t, ref);
  Vector2<Scalar> eta;
  Eigen::Matrix<Scalar, 2, 4> H;
  for (int r = 0; r < 2; ++r) {
    eta(r) = eta_d(r).value;
    for (int c = 0; c < 4; ++c) H(r, c) = eta_d(r).partials[c];
  }
  return {eta, H};
}

/// Time derivative of V along x_dot = f(x) + g(x) u with e_dot taken as
/// eta(1), which drops the direct input coupling of e. The references
/// are piecewise constant in time, so dV/dt vanishes between switches and
/// the right limit is used at switch instants.
template <typename Scalar>
Scalar lyapunov_rate(const ClfData& clf, const Vector4<Scalar>& x, double t, const Scalar& u,
                     const ReferenceSignal& ref, const SegwayParams& params) {
  const auto [eta, H] = error_state_jacobian<Scalar>(params, x, t, ref);
  const Vector4<Scalar> xdot = dynamics<Scalar>(params, x, u);
  Vector2<Scalar> eta_dot;
  eta_dot(0) = eta(1);
  eta_dot(1) = H(1, 0) * xdot(0);
  for (int c = 1; c < 4; ++c) eta_dot(1) += H(1, c) * xdot(c);
  const Scalar pe0 = eta(0) * clf.P(0, 0) + eta(1) * clf.P(1, 0);
  const Scalar pe1 = eta(0) * clf.P(0, 1) + eta(1) * clf.P(1, 1);
  return (pe0 * eta_dot(0) + pe1 * eta_dot(1)) * 2.0;
}

/// h_CLF = V_dot + c3 ||eta||^2; non-positive when the decrease condition holds.
template <typename Scalar>
Scalar h_clf(const ClfData& clf, const Vector4<Scalar>& x, double t, const Scalar& u,
             const ReferenceSignal& ref, const SegwayParams& params) {
  const Vector2<Scalar> eta = error_state<Scalar>(params, x, t, ref);
  return lyapunov_rate<Scalar>(clf, x, t, u, ref, params) + (eta(0) * eta(0) + eta(1) * eta(1)) * clf.c3;
}

/// h_LLS at node k: V(x_k, t_k) - V(x_hat, t_k - k dt) exp(-gamma k dt).
template <typename Scalar>
Scalar h_lls(const ClfData& clf, const Vector4<Scalar>& x_k, double t_k, const State& x_hat, int k,
             double dt, const ReferenceSignal& ref, const SegwayParams& params) {
  const double t0 = t_k - k * dt;
  const double bound = lyapunov_value<double>(clf, params, x_hat, t0, ref) * std::exp(-clf.gamma * k * dt);
  return lyapunov_value<Scalar>(clf, params, x_k, t_k, ref) - bound;
}

/// dV/dx at (x, t).
Eigen::RowVector4d lyapunov_gradient(const ClfData& clf, const State& x, double t, const ReferenceSignal& ref,
                                     const SegwayParams& params);

/// h_CLF(x, t, u) = intercept + slope * u for fixed (x, t).
struct AffineInU {
  double intercept = 0.0;
  double slope = 0.0;
};

AffineInU h_clf_affine(const ClfData& clf, const State& x, double t, const ReferenceSignal& ref,
                       const SegwayParams& params);

}  // namespace clfmpc
