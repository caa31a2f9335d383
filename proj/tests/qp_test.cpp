#include "clfmpc/qp.hpp"

#include <cmath>
#include <limits>
#include <optional>
#include <random>
#include <sstream>
#include <vector>

#include <Eigen/Dense>
#include <gtest/gtest.h>

#include "clfmpc/errors.hpp"
#include "oracles.hpp"

namespace clfmpc {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using test::enumerate_active_sets;
using test::make_qp;
using test::objective;
using test::random_qp;
using test::sparse;

TEST(Qp, UnconstrainedScalar) {
  const QpData d = make_qp(Eigen::MatrixXd::Ones(1, 1), -Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Zero(0, 1),
                           Eigen::VectorXd(0), Eigen::VectorXd(0));
  const QpSolution sol = solve_qp(d);
  ASSERT_EQ(sol.status, QpStatus::Solved);
  EXPECT_NEAR(sol.primal(0), 1.0, 1e-10);
}

TEST(Qp, BoxProjection) {
  const QpData d = make_qp(Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Ones(1, 1),
                           Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 2.0));
  const QpSolution sol = solve_qp(d);
  ASSERT_EQ(sol.status, QpStatus::Solved);
  EXPECT_NEAR(sol.primal(0), 1.0, 1e-10);
  EXPECT_NEAR(sol.dual(0), -1.0, 1e-10);
}

TEST(Qp, KktResidualOfAnalyticSolutions) {
  const QpData box = make_qp(Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Ones(1, 1),
                             Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, 2.0));
  const KktResidual r = kkt_residual(box, Eigen::VectorXd::Constant(1, 1.0), Eigen::VectorXd::Constant(1, -1.0));
  EXPECT_LE(r.primal, 1e-12);
  EXPECT_LE(r.dual, 1e-12);
  EXPECT_LE(r.complementarity, 1e-12);

  Eigen::MatrixXd B(2, 2);
  B << 4.0, 1.0, 1.0, 2.0;
  const QpData free = make_qp(B, Eigen::Vector2d(1.0, -1.0), Eigen::MatrixXd::Zero(0, 2), Eigen::VectorXd(0),
                              Eigen::VectorXd(0));
  const Eigen::VectorXd xs = B.ldlt().solve(-Eigen::Vector2d(1.0, -1.0));
  EXPECT_LE(kkt_residual(free, xs, Eigen::VectorXd(0)).dual, 1e-12);
  // A primal perturbation moves the dual residual linearly through B.
  const Eigen::Vector2d delta(1e-3, 0.0);
  EXPECT_NEAR(kkt_residual(free, xs + delta, Eigen::VectorXd(0)).dual, (B * delta).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Qp, MatchesActiveSetEnumeration) {
  std::mt19937 rng(2024);
  QpSolver solver;
  for (int trial = 0; trial < 50; ++trial) {
    const QpData d = random_qp(rng);
    const auto oracle = enumerate_active_sets(d);
    ASSERT_TRUE(oracle.has_value()) << "trial " << trial;
    const QpSolution sol = solver.solve(d);
    ASSERT_EQ(sol.status, QpStatus::Solved) << "trial " << trial;
    EXPECT_LE((sol.primal - *oracle).cwiseAbs().maxCoeff(), 1e-5) << "trial " << trial;

    const KktResidual r = kkt_residual(d, sol);
    const KktTolerance t = kkt_tolerance(d, sol.primal, sol.dual, 1e-8, 1e-8);
    EXPECT_LE(r.primal, t.primal);
    EXPECT_LE(r.dual, t.dual);
    EXPECT_LE(r.complementarity, t.complementarity);
  }
}

TEST(Qp, ObjectiveBeatsFeasibleSamples) {
  std::mt19937 rng(77);
  for (int trial = 0; trial < 10; ++trial) {
    QpData d = random_qp(rng);
    for (Eigen::Index i = 0; i < d.lo.size(); ++i) {
      if (d.lo(i) == d.hi(i)) d.lo(i) = -kInf;  // keep the feasible set full-dimensional
    }
    const QpSolution sol = solve_qp(d);
    ASSERT_EQ(sol.status, QpStatus::Solved);
    const double best = objective(d, sol.primal);
    for (int s = 0; s < 10000; ++s) {
      const Eigen::VectorXd x = test::uniform_vector(rng, d.q.size(), -3.0, 3.0);
      const Eigen::VectorXd Ax = d.A * x;
      if (((Ax - d.lo).array() >= 0.0).all() && ((d.hi - Ax).array() >= 0.0).all()) {
        EXPECT_LE(best, objective(d, x) + 1e-6);
      }
    }
  }
}

TEST(Qp, WarmStartFromSolutionTerminatesImmediately) {
  std::mt19937 rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    const QpData d = random_qp(rng);
    const QpSolution cold = solve_qp(d);
    ASSERT_EQ(cold.status, QpStatus::Solved);
    const QpSolution warm = solve_qp(d, WarmStart{cold.primal, cold.dual});
    ASSERT_EQ(warm.status, QpStatus::Solved);
    EXPECT_LE(warm.iterations, 2);
    EXPECT_LE((warm.primal - cold.primal).cwiseAbs().maxCoeff(), 1e-10);
  }
}

TEST(Qp, Deterministic) {
  std::mt19937 rng(6);
  const QpData d = random_qp(rng);
  const QpSolution a = solve_qp(d);
  const QpSolution b = solve_qp(d);
  EXPECT_EQ(a.primal, b.primal);
  EXPECT_EQ(a.dual, b.dual);
  EXPECT_EQ(a.iterations, b.iterations);
}

TEST(Qp, DetectsPrimalInfeasibility) {
  Eigen::MatrixXd A(2, 1);
  A << 1.0, 1.0;
  const QpData d = make_qp(Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1), A, Eigen::Vector2d(2.0, -kInf),
                           Eigen::Vector2d(kInf, 1.0));
  EXPECT_EQ(solve_qp(d).status, QpStatus::PrimalInfeasible);
}

TEST(Qp, DetectsUnboundedObjective) {
  const QpData d = make_qp(Eigen::MatrixXd::Zero(1, 1), -Eigen::VectorXd::Ones(1), Eigen::MatrixXd::Ones(1, 1),
                           Eigen::VectorXd::Constant(1, 0.0), Eigen::VectorXd::Constant(1, kInf));
  EXPECT_EQ(solve_qp(d).status, QpStatus::DualInfeasible);
}

TEST(Qp, ValidationErrors) {
  QpData d = make_qp(Eigen::MatrixXd::Ones(1, 1), Eigen::VectorXd::Zero(1), Eigen::MatrixXd::Ones(1, 1),
                     Eigen::VectorXd::Constant(1, 2.0), Eigen::VectorXd::Constant(1, 1.0));
  EXPECT_THROW(solve_qp(d), InvalidConfig);
  d.hi = Eigen::VectorXd::Constant(2, 3.0);
  EXPECT_THROW(solve_qp(d), DimensionMismatch);
}

TEST(Qp, DumpListsEveryBlock) {
  const QpData d = make_qp(Eigen::MatrixXd::Identity(2, 2), Eigen::Vector2d(1.0, 2.0), Eigen::MatrixXd::Ones(1, 2),
                           Eigen::VectorXd::Constant(1, -1.0), Eigen::VectorXd::Constant(1, 1.0));
  std::ostringstream os;
  write_qp_dump(os, d);
  const std::string text = os.str();
  for (const char* tag : {"B", "q", "A", "lo", "hi"}) {
    EXPECT_NE(text.find(std::string("%% ") + tag + " "), std::string::npos) << tag;
  }
}

}  // namespace
}  // namespace clfmpc
