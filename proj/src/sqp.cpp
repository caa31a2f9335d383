#include "clfmpc/sqp.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>

#include "clfmpc/errors.hpp"

namespace clfmpc {

namespace {

using Eigen::Index;
using Eigen::VectorXd;

void check_state(const HorizonProblem& prob, const SqpState& s) {
  if (s.w.size() != prob.num_variables() || s.lambda.size() != prob.num_eq() || s.mu.size() != prob.num_ineq()) {
    throw DimensionMismatch("SQP state does not match the horizon problem");
  }
}

struct StepOutcome {
  SqpState next;
  QpSolution qp;
  double step_norm = 0.0;
};

StepOutcome sqp_step(const HorizonProblem& prob, const NlpParameters& p, const SqpState& state, const SqpConfig& cfg) {
  const Linearization lin = linearize(prob, state.w, p, cfg.hessian_mode, state.mu.cwiseMax(0.0));
  const Index neq = prob.num_eq();
  WarmStart warm;
  warm.primal = VectorXd::Zero(prob.num_variables());
  warm.dual.resize(neq + prob.num_ineq());
  warm.dual << state.lambda, state.mu;

  StepOutcome out;
  out.qp = QpSolver(cfg.qp).solve(lin.qp, warm);
  if (out.qp.status == QpStatus::PrimalInfeasible || out.qp.status == QpStatus::DualInfeasible) {
    throw QpFailure("QP subproblem " + to_string(out.qp.status), state.iteration);
  }
  const VectorXd dw = cfg.step_scale * out.qp.primal;
  out.step_norm = dw.norm();
  out.next.w = state.w + dw;
  out.next.lambda = out.qp.dual.head(neq);
  out.next.mu = out.qp.dual.tail(prob.num_ineq()).cwiseMax(0.0);
  out.next.iteration = state.iteration + 1;
  return out;
}

// Index of the soft row of the same kind one node later, or j itself.
int successor_row(const HorizonProblem& prob, int j) {
  const SoftRow& row = prob.soft_rows[j];
  for (int i = 0; i < static_cast<int>(prob.soft_rows.size()); ++i) {
    if (prob.soft_rows[i].kind == row.kind && prob.soft_rows[i].node == row.node + 1) return i;
  }
  return j;
}

}  // namespace

void IterationLog::write_csv(std::ostream& os) const {
  const auto old = os.precision(17);
  os << "iter,step_norm,constraint_violation,stationarity,cost\n";
  for (const IterationRecord& r : records) {
    os << r.iter << ',' << r.step_norm << ',' << r.constraint_violation << ',' << r.stationarity << ',' << r.cost
       << '\n';
  }
  os.precision(old);
}

SqpState zero_state(const HorizonProblem& prob) {
  SqpState s;
  s.w = VectorXd::Zero(prob.num_variables());
  s.lambda = VectorXd::Zero(prob.num_eq());
  s.mu = VectorXd::Zero(prob.num_ineq());
  return s;
}

SqpState constant_guess(const HorizonProblem& prob, const NlpParameters& p) {
  SqpState s = zero_state(prob);
  for (int k = 0; k <= prob.N; ++k) s.w.segment<4>(prob.layout.state(k)) = p.x_hat;
  return s;
}

double constraint_violation(const HorizonProblem& prob, const VectorXd& w, const NlpParameters& p) {
  return eval_eq(prob, w, p).lpNorm<1>() + eval_ineq(prob, w, p).cwiseMax(0.0).sum();
}

double stationarity(const HorizonProblem& prob, const NlpParameters& p, const SqpState& state) {
  check_state(prob, state);
  const Linearization lin = linearize(prob, state.w, p, HessianMode::GaussNewton, VectorXd::Zero(prob.num_ineq()));
  VectorXd y(prob.num_eq() + prob.num_ineq());
  y << state.lambda, state.mu;
  return (lin.qp.q + lin.qp.A.transpose() * y).lpNorm<1>();
}

SqpResult sqp_solve(const HorizonProblem& prob, const NlpParameters& p, const SqpState& init, const SqpConfig& cfg) {
  check_state(prob, init);
  SqpResult result;
  result.state = init;
  double previous_cost = eval_cost(prob, init.w, p);
  for (int i = 1; i <= cfg.max_iterations; ++i) {
    StepOutcome step = sqp_step(prob, p, result.state, cfg);
    result.state = std::move(step.next);

    IterationRecord rec;
    rec.iter = i;
    rec.step_norm = step.step_norm;
    rec.constraint_violation = constraint_violation(prob, result.state.w, p);
    rec.stationarity = stationarity(prob, p, result.state);
    rec.cost = eval_cost(prob, result.state.w, p);
    rec.qp_iterations = step.qp.iterations;
    result.log.records.push_back(rec);

    const bool converged = rec.constraint_violation <= cfg.tol_constraint &&
                           std::abs(rec.cost - previous_cost) <= cfg.tol_cost &&
                           rec.stationarity <= cfg.tol_stationarity;
    previous_cost = rec.cost;
    if (converged) {
      result.status = SqpStatus::Converged;
      return result;
    }
  }
  result.status = SqpStatus::MaxIter;
  return result;
}

RtiStep rti_controller_step(const HorizonProblem& prob, const NlpParameters& p, const SqpState& state,
                            const SqpConfig& cfg) {
  check_state(prob, state);
  StepOutcome step = sqp_step(prob, p, state, cfg);
  RtiStep out;
  out.next = std::move(step.next);
  out.u0 = prob.u_bounds.clamp(out.next.w(prob.layout.input(0)));
  out.diagnostics.qp_status = step.qp.status;
  out.diagnostics.qp_iterations = step.qp.iterations;
  out.diagnostics.step_norm = step.step_norm;
  if (!prob.soft_rows.empty()) out.diagnostics.first_slack = out.next.w(prob.layout.slack(0));
  return out;
}

SqpState shift_warm_start(const SqpState& state, const HorizonProblem& prob) {
  check_state(prob, state);
  const Layout& L = prob.layout;
  const int N = prob.N;
  const int ns = L.num_slacks;
  SqpState out = state;

  for (int k = 0; k < N; ++k) out.w.segment<4>(L.state(k)) = state.w.segment<4>(L.state(k + 1));
  for (int k = 0; k + 1 < N; ++k) out.w(L.input(k)) = state.w(L.input(k + 1));
  for (int b = 0; b < N; ++b) out.lambda.segment<4>(4 * b) = state.lambda.segment<4>(4 * (b + 1));

  for (int j = 0; j < ns; ++j) {
    const int src = successor_row(prob, j);
    out.w(L.slack(j)) = state.w(L.slack(src));
    out.mu(j) = state.mu(src);
    out.mu(ns + j) = state.mu(ns + src);
  }
  for (int k = 0; k + 1 < N; ++k) {
    out.mu(2 * ns + k) = state.mu(2 * ns + k + 1);
    out.mu(2 * ns + N + k) = state.mu(2 * ns + N + k + 1);
  }
  return out;
}

}  // namespace clfmpc
