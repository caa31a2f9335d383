#pragma once

#include <iosfwd>
#include <vector>

#include <Eigen/Core>

#include "clfmpc/nlp.hpp"
#include "clfmpc/qp.hpp"

namespace clfmpc {

/// Primal-dual SQP iterate. lambda pairs with eval_eq, mu with eval_ineq.
struct SqpState {
  Eigen::VectorXd w;
  Eigen::VectorXd lambda;
  Eigen::VectorXd mu;
  int iteration = 0;
};

struct SqpConfig {
  HessianMode hessian_mode = HessianMode::GaussNewton;
  double tol_constraint = 1e-6;  // on ||c(w)||_1
  double tol_cost = 1e-6;        // on |F_i - F_{i-1}|
  double tol_stationarity = 1e-4;  // on ||grad L||_1
  int max_iterations = 100;
  double step_scale = 1.0;
  QpSettings qp;
};

struct IterationRecord {
  int iter = 0;
  double step_norm = 0.0;
  double constraint_violation = 0.0;
  double stationarity = 0.0;
  double cost = 0.0;
  int qp_iterations = 0;
};

struct IterationLog {
  std::vector<IterationRecord> records;

  /// Columns: iter,step_norm,constraint_violation,stationarity,cost.
  void write_csv(std::ostream& os) const;
};

enum class SqpStatus { Converged, MaxIter };

struct SqpResult {
  SqpState state;
  IterationLog log;
  SqpStatus status = SqpStatus::MaxIter;
};

/// All-zero primal-dual point of the right size.
SqpState zero_state(const HorizonProblem& prob);

/// States held at x_hat, zero inputs and slacks, zero multipliers.
SqpState constant_guess(const HorizonProblem& prob, const NlpParameters& p);

/// ||G(w)||_1 + sum of positive parts of H(w).
double constraint_violation(const HorizonProblem& prob, const Eigen::VectorXd& w, const NlpParameters& p);

/// ||grad F + grad G^T lambda + grad H^T mu||_1.
double stationarity(const HorizonProblem& prob, const NlpParameters& p, const SqpState& state);

/// Full-step SQP until ||c||_1 <= tol_constraint, |dF| <= tol_cost and
/// ||grad L||_1 <= tol_stationarity.
/// Throws QpFailure when a subproblem is infeasible or unbounded.
SqpResult sqp_solve(const HorizonProblem& prob, const NlpParameters& p, const SqpState& init, const SqpConfig& cfg);

struct RtiDiagnostics {
  QpStatus qp_status = QpStatus::Solved;
  int qp_iterations = 0;
  double step_norm = 0.0;
  double first_slack = 0.0;  // s_0 after the step, 0 without CLF rows
};

struct RtiStep {
  double u0 = 0.0;
  SqpState next;
  RtiDiagnostics diagnostics;
};

/// One linearization, one QP, one full step. u0 is clamped to the input bounds.
/// Throws QpFailure when the QP is infeasible or unbounded.
RtiStep rti_controller_step(const HorizonProblem& prob, const NlpParameters& p, const SqpState& state,
                            const SqpConfig& cfg);

/// Moves every node-indexed block forward by one node and repeats the last one.
SqpState shift_warm_start(const SqpState& state, const HorizonProblem& prob);

}  // namespace clfmpc
