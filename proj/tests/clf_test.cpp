#include "clfmpc/clf.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "clfmpc/errors.hpp"
#include "oracles.hpp"

namespace clfmpc {
namespace {

const SegwayParams kParams{};

using test::kronecker_ctle;
using test::random_hurwitz;
using test::random_spd;

double ctle_residual(const Eigen::Matrix2d& A, const Eigen::Matrix2d& P, const Eigen::Matrix2d& Q) {
  return (A.transpose() * P + P * A + Q).norm();
}

ClfData default_clf() { return synthesize_clf(PdGains{}, Eigen::Matrix2d::Identity()); }

ReferenceSignal tracking_ref() {
  return ReferenceSignal::velocity_tracking(equilibrium(kParams)(kPitch),
                                            VelocityProfile({{0.0, 0.2}, {1.0, 0.5}, {3.0, 0.0}}));
}

TEST(Ctle, NegativeIdentity) {
  const Eigen::Matrix2d P = solve_ctle(-Eigen::Matrix2d::Identity(), 2.0 * Eigen::Matrix2d::Identity());
  EXPECT_LE((P - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff(), 1e-15);
}

TEST(Ctle, MatchesKroneckerOracle) {
  Eigen::Matrix2d A;
  A << 0.0, 1.0, -2.0, -3.0;
  const Eigen::Matrix2d P = solve_ctle(A, Eigen::Matrix2d::Identity());
  EXPECT_LE((P - kronecker_ctle(A, Eigen::Matrix2d::Identity())).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LE(ctle_residual(A, P, Eigen::Matrix2d::Identity()), 1e-10);
}

TEST(Ctle, RejectsUnstableMatrix) {
  Eigen::Matrix2d A;
  A << 0.0, 1.0, 1.0, 0.0;
  EXPECT_THROW(solve_ctle(A, Eigen::Matrix2d::Identity()), NotHurwitz);
  EXPECT_THROW(synthesize_clf(PdGains{-1.0, 1.0}, Eigen::Matrix2d::Identity()), NotHurwitz);
  EXPECT_THROW(synthesize_clf(PdGains{1.0, 0.0}, Eigen::Matrix2d::Identity()), NotHurwitz);
}

TEST(Ctle, RejectsIndefiniteWeight) {
  Eigen::Matrix2d Q;
  Q << 1.0, 0.0, 0.0, -1.0;
  EXPECT_THROW(solve_ctle(-Eigen::Matrix2d::Identity(), Q), InvalidConfig);
}

TEST(Ctle, RandomHurwitzInstances) {
  std::mt19937 rng(42);
  for (int i = 0; i < 100; ++i) {
    const Eigen::Matrix2d A = random_hurwitz(rng);
    const Eigen::Matrix2d Q = random_spd(rng);
    const Eigen::Matrix2d P = solve_ctle(A, Q);
    EXPECT_LE(ctle_residual(A, P, Q), 1e-10);
    EXPECT_EQ(P(0, 1), P(1, 0));
    EXPECT_GT(Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(P).eigenvalues().minCoeff(), 0.0);
    EXPECT_LE(test::rel_error(P, kronecker_ctle(A, Q)), 1e-9);
  }
}

TEST(Synthesis, UnitGains) {
  const ClfData clf = synthesize_clf(PdGains{1.0, 1.0}, Eigen::Matrix2d::Identity());
  Eigen::Matrix2d A;
  A << 0.0, 1.0, -1.0, -1.0;
  const Eigen::Matrix2d P = kronecker_ctle(A, Eigen::Matrix2d::Identity());
  const double lmax = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(P).eigenvalues().maxCoeff();
  EXPECT_NEAR(clf.gamma, 1.0 / lmax, 1e-12);
  EXPECT_EQ(clf.c3, 1.0);
  EXPECT_EQ(clf.A_cl, A);
}

TEST(Synthesis, WeightScalingLeavesDecayRate) {
  const ClfData a = synthesize_clf(PdGains{}, Eigen::Matrix2d::Identity());
  const ClfData b = synthesize_clf(PdGains{}, 7.5 * Eigen::Matrix2d::Identity());
  EXPECT_NEAR(a.gamma, b.gamma, 1e-12);
  EXPECT_LE((7.5 * a.P - b.P).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Synthesis, DefaultsSatisfyInvariants) {
  const ClfData clf = default_clf();
  EXPECT_LE(ctle_residual(clf.A_cl, clf.P, clf.Q), 1e-10);
  const Eigen::Vector2d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(clf.P).eigenvalues();
  EXPECT_GT(ev.minCoeff(), 0.0);
  EXPECT_NEAR(clf.gamma, 1.0 / ev.maxCoeff(), 1e-14);
  EXPECT_GT(clf.gamma, 0.0);
}

TEST(ErrorState, ZeroAtTarget) {
  const State xe = equilibrium(kParams);
  const auto eta = error_state<double>(kParams, xe, 0.0, ReferenceSignal::fixed_point(xe));
  EXPECT_EQ(eta, ErrorState::Zero());
}

TEST(ErrorState, TrackingOnReference) {
  const ReferenceSignal ref = tracking_ref();
  const double t = 1.5;
  State x = equilibrium(kParams);
  x(kVelocity) = ref.velocity(t);
  EXPECT_EQ(error_state<double>(kParams, x, t, ref)(0), 0.0);
  EXPECT_EQ(ref.desired_pitch(x, t), ref.pitch_offset);
}

TEST(ErrorState, ProfileIsPiecewiseConstantRightContinuous) {
  const VelocityProfile prof({{1.0, 0.5}, {0.0, 0.2}});
  EXPECT_EQ(prof(-1.0), 0.0);
  EXPECT_EQ(prof(0.0), 0.2);
  EXPECT_EQ(prof(0.999), 0.2);
  EXPECT_EQ(prof(1.0), 0.5);
  EXPECT_EQ(prof.max_abs(), 0.5);
}

TEST(ErrorState, JacobianMatchesFiniteDifferences) {
  std::mt19937 rng(9);
  const State xe = equilibrium(kParams);
  for (const ReferenceSignal& ref : {ReferenceSignal::fixed_point(xe), tracking_ref()}) {
    for (int i = 0; i < 50; ++i) {
      const State x = test::uniform_vector(rng, 4, -2.0, 2.0);
      const double t = 0.7;
      const auto [eta, H] = error_state_jacobian<double>(kParams, x, t, ref);
      const Eigen::MatrixXd fd = test::fd_jacobian(
          [&](const Eigen::VectorXd& xs) -> Eigen::VectorXd {
            return error_state<double>(kParams, State(xs), t, ref);
          },
          x);
      EXPECT_LE(test::rel_error(H, fd), 1e-6);
      EXPECT_EQ(eta, error_state<double>(kParams, x, t, ref));
    }
  }
}

TEST(LyapunovValue, HandValues) {
  ClfData clf;
  clf.P = Eigen::Matrix2d::Identity();
  EXPECT_EQ(lyapunov_value(clf, ErrorState::Zero()), 0.0);
  EXPECT_EQ(lyapunov_value(clf, ErrorState(3.0, 4.0)), 25.0);
  const ClfData d = default_clf();
  EXPECT_EQ(lyapunov_value(d, ErrorState(0.3, -1.2)), lyapunov_value(d, ErrorState(-0.3, 1.2)));
}

TEST(LyapunovValue, EigenvalueSandwich) {
  std::mt19937 rng(1);
  const ClfData clf = default_clf();
  const Eigen::Vector2d ev = Eigen::SelfAdjointEigenSolver<Eigen::Matrix2d>(clf.P).eigenvalues();
  for (int i = 0; i < 1000; ++i) {
    const ErrorState eta = test::uniform_vector(rng, 2, -3.0, 3.0);
    const double v = lyapunov_value(clf, eta);
    const double n2 = eta.squaredNorm();
    EXPECT_LE(ev.minCoeff() * n2, v * (1.0 + 1e-14));
    EXPECT_LE(v, ev.maxCoeff() * n2 * (1.0 + 1e-14));
  }
}

TEST(LyapunovRate, ZeroAtTarget) {
  const State xe = equilibrium(kParams);
  const ReferenceSignal ref = ReferenceSignal::fixed_point(xe);
  EXPECT_EQ(lyapunov_rate<double>(default_clf(), xe, 0.0, 0.0, ref, kParams), 0.0);
  EXPECT_EQ(h_clf<double>(default_clf(), xe, 0.0, 0.0, ref, kParams), 0.0);
}

TEST(LyapunovRate, AffineInInput) {
  std::mt19937 rng(2);
  const ClfData clf = default_clf();
  for (const ReferenceSignal& ref : {ReferenceSignal::fixed_point(equilibrium(kParams)), tracking_ref()}) {
    for (int i = 0; i < 50; ++i) {
      const State x = test::uniform_vector(rng, 4, -1.0, 1.0);
      const double v0 = lyapunov_rate<double>(clf, x, 0.5, 0.0, ref, kParams);
      const double v1 = lyapunov_rate<double>(clf, x, 0.5, 1.0, ref, kParams);
      const double v2 = lyapunov_rate<double>(clf, x, 0.5, 2.0, ref, kParams);
      EXPECT_NEAR(v2 - v1, v1 - v0, 1e-10 * std::max(1.0, std::abs(v1)));
      const AffineInU a = h_clf_affine(clf, x, 0.5, ref, kParams);
      EXPECT_NEAR(v1 - v0, a.slope, 1e-10 * std::max(1.0, std::abs(a.slope)));
    }
  }
}

// e_dot is the drift-only derivative, so only the second row is differentiated.
TEST(LyapunovRate, MatchesTrajectoryFiniteDifference) {
  std::mt19937 rng(4);
  const ClfData clf = default_clf();
  const double h = 1e-6;
  for (const ReferenceSignal& ref : {ReferenceSignal::fixed_point(equilibrium(kParams)), tracking_ref()}) {
    for (int i = 0; i < 50; ++i) {
      const State x = test::uniform_vector(rng, 4, -1.0, 1.0);
      const double u = std::uniform_real_distribution<double>(-20.0, 20.0)(rng);
      const double t = 0.5;
      const State xp = discrete_step<double>(kParams, x, u, {h, Integrator::RK4});
      const State xm = discrete_step<double>(kParams, x, u, {-h, Integrator::RK4});
      const ErrorState eta = error_state<double>(kParams, x, t, ref);
      ErrorState eta_dot;
      eta_dot(0) = eta(1);
      eta_dot(1) = (error_state<double>(kParams, xp, t, ref)(1) - error_state<double>(kParams, xm, t, ref)(1)) /
                   (2.0 * h);
      const double fd = 2.0 * eta.dot(clf.P * eta_dot);
      const double rate = lyapunov_rate<double>(clf, x, t, u, ref, kParams);
      EXPECT_LE(std::abs(rate - fd), 1e-4 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST(HClf, MinimumOverInputsMatchesGrid) {
  std::mt19937 rng(6);
  const ClfData clf = default_clf();
  const ReferenceSignal ref = ReferenceSignal::fixed_point(equilibrium(kParams));
  const InputBounds bounds;
  for (int i = 0; i < 20; ++i) {
    const State x = test::uniform_vector(rng, 4, -1.0, 1.0);
    const AffineInU a = h_clf_affine(clf, x, 0.0, ref, kParams);
    const double analytic = a.intercept + std::min(a.slope * bounds.lo, a.slope * bounds.hi);
    double grid = INFINITY;
    const int n = 100000;
    for (int j = 0; j <= n; ++j) {
      const double u = bounds.lo + (bounds.hi - bounds.lo) * j / n;
      grid = std::min(grid, h_clf<double>(clf, x, 0.0, u, ref, kParams));
    }
    EXPECT_LE(std::abs(analytic - grid), 1e-3 * std::max(1.0, std::abs(grid)));
  }
}

TEST(HClf, InterceptIsValueAtZeroInput) {
  const ClfData clf = default_clf();
  const ReferenceSignal ref = ReferenceSignal::fixed_point(equilibrium(kParams));
  const State x(0.0, std::numbers::pi / 8, 0.0, 0.0);
  const AffineInU a = h_clf_affine(clf, x, 0.0, ref, kParams);
  EXPECT_EQ(a.intercept, h_clf<double>(clf, x, 0.0, 0.0, ref, kParams));
  EXPECT_GT(a.intercept, 0.0);  // falling away from the target without input
  EXPECT_NE(a.slope, 0.0);
}

TEST(HLls, ZeroAtInitialNode) {
  const ClfData clf = default_clf();
  const ReferenceSignal ref = ReferenceSignal::fixed_point(equilibrium(kParams));
  const State xh(0.0, 0.3, 0.1, -0.2);
  EXPECT_EQ(h_lls<double>(clf, xh, 0.0, xh, 0, 0.01, ref, kParams), 0.0);
}

TEST(HLls, ZeroDecayRateLimit) {
  ClfData clf = default_clf();
  clf.gamma = 0.0;
  const ReferenceSignal ref = ReferenceSignal::fixed_point(equilibrium(kParams));
  const State xh(0.0, 0.3, 0.1, -0.2);
  const State xk(0.2, 0.2, 0.0, 0.1);
  EXPECT_EQ(h_lls<double>(clf, xk, 0.05, xh, 5, 0.01, ref, kParams),
            lyapunov_value<double>(clf, kParams, xk, 0.05, ref) - lyapunov_value<double>(clf, kParams, xh, 0.0, ref));
}

TEST(HLls, NondecreasingInNodeIndex) {
  const ClfData clf = default_clf();
  const ReferenceSignal ref = ReferenceSignal::fixed_point(equilibrium(kParams));
  const State xh(0.0, 0.3, 0.1, -0.2);
  const State xk(0.2, 0.2, 0.0, 0.1);
  double prev = -INFINITY;
  for (int k = 0; k <= 50; ++k) {
    const double h = h_lls<double>(clf, xk, k * 0.01, xh, k, 0.01, ref, kParams);
    EXPECT_GE(h, prev);
    prev = h;
  }
}

TEST(Reference, Validation) {
  ReferenceSignal ref = tracking_ref();
  ref.kv = -0.1;
  EXPECT_THROW(ref.validate(), InvalidConfig);
  EXPECT_THROW(VelocityProfile({{0.0, NAN}}), InvalidConfig);
}

}  // namespace
}  // namespace clfmpc
