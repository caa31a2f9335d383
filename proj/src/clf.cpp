#include "clfmpc/clf.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include <Eigen/Dense>

#include "clfmpc/errors.hpp"

namespace clfmpc {

VelocityProfile::VelocityProfile(std::vector<std::pair<double, double>> segments)
    : segments_(std::move(segments)) {
  std::stable_sort(segments_.begin(), segments_.end(),
                   [](const auto& a, const auto& b) { return a.first < b.first; });
  for (const auto& [t, v] : segments_) {
    if (!std::isfinite(t) || !std::isfinite(v)) throw InvalidConfig("velocity profile entries must be finite");
  }
}

double VelocityProfile::operator()(double t) const {
  double v = 0.0;
  for (const auto& [start, value] : segments_) {
    if (start > t) break;
    v = value;
  }
  return v;
}

double VelocityProfile::max_abs() const {
  double m = 0.0;
  for (const auto& seg : segments_) m = std::max(m, std::abs(seg.second));
  return m;
}

ReferenceSignal ReferenceSignal::fixed_point(const State& target) {
  ReferenceSignal ref;
  ref.mode = Mode::FixedPoint;
  ref.target = target;
  ref.pitch_offset = target(kPitch);
  return ref;
}

ReferenceSignal ReferenceSignal::velocity_tracking(double pitch_offset, VelocityProfile profile, double kv) {
  ReferenceSignal ref;
  ref.mode = Mode::VelocityTracking;
  ref.target = State(0.0, pitch_offset, 0.0, 0.0);
  ref.pitch_offset = pitch_offset;
  ref.velocity = std::move(profile);
  ref.kv = kv;
  return ref;
}

double ReferenceSignal::desired_pitch(const State& x, double t) const {
  if (mode == Mode::FixedPoint) return target(kPitch);
  return pitch_offset - kv * (x(kVelocity) - velocity(t));
}

void ReferenceSignal::validate() const {
  if (!target.allFinite() || !std::isfinite(pitch_offset)) throw InvalidConfig("reference target must be finite");
  if (!(kv >= 0.0)) throw InvalidConfig("velocity feedback gain kv must be non-negative");
}

Eigen::Matrix2d solve_ctle(const Eigen::Matrix2d& A, const Eigen::Matrix2d& Q) {
  // For 2x2 matrices both eigenvalues lie in the open left half plane iff
  // trace < 0 and det > 0.
  if (!(A.trace() < 0.0 && A.determinant() > 0.0)) {
    throw NotHurwitz("closed-loop error matrix is not Hurwitz");
  }
  if ((Q - Q.transpose()).cwiseAbs().maxCoeff() > 1e-12 * std::max(1.0, Q.cwiseAbs().maxCoeff()) ||
      !(Q(0, 0) > 0.0 && Q.determinant() > 0.0)) {
    throw InvalidConfig("CTLE weight Q must be symmetric positive definite");
  }

  // Unknowns (p11, p12, p22) of the symmetric solution.
  Eigen::Matrix3d M;
  M << 2.0 * A(0, 0), 2.0 * A(1, 0), 0.0,
       A(0, 1), A(0, 0) + A(1, 1), A(1, 0),
       0.0, 2.0 * A(0, 1), 2.0 * A(1, 1);
  const Eigen::Vector3d rhs(-Q(0, 0), -0.5 * (Q(0, 1) + Q(1, 0)), -Q(1, 1));
  const Eigen::Vector3d p = M.fullPivLu().solve(rhs);

  Eigen::Matrix2d P;
  P << p(0), p(1), p(1), p(2);
  return P;
}

ClfData synthesize_clf(const PdGains& gains, const Eigen::Matrix2d& Q) {
  ClfData clf;
  clf.A_cl << 0.0, 1.0, -gains.kp, -gains.kd;
  clf.Q = Q;
  clf.P = solve_ctle(clf.A_cl, Q);
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> eq(Q);
  const Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d> ep(clf.P);
  clf.c3 = eq.eigenvalues().minCoeff();
  clf.gamma = clf.c3 / ep.eigenvalues().maxCoeff();
  return clf;
}

Eigen::RowVector4d lyapunov_gradient(const ClfData& clf, const State& x, double t, const ReferenceSignal& ref,
                                     const SegwayParams& params) {
  const auto [eta, H] = error_state_jacobian<double>(params, x, t, ref);
  const Eigen::RowVector2d etaP = eta.transpose() * (clf.P + clf.P.transpose());
  return etaP * H;
}

AffineInU h_clf_affine(const ClfData& clf, const State& x, double t, const ReferenceSignal& ref,
                       const SegwayParams& params) {
  const auto [eta, H] = error_state_jacobian<double>(params, x, t, ref);
  AffineInU a;
  a.intercept = h_clf<double>(clf, x, t, 0.0, ref, params);
  a.slope = 2.0 * clf.P.row(1).dot(eta) * H.row(1).dot(input_matrix<double>(params, x));
  return a;
}

}  // namespace clfmpc
