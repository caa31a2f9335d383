#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "clfmpc/clf.hpp"
#include "clfmpc/model.hpp"
#include "clfmpc/qp.hpp"

namespace clfmpc {

enum class FormulationKind { ClfQp, Clf0, ClfAll, LlsN, LlsAll, NmpcBeta };

enum class HessianMode { GaussNewton, GaussNewtonPlusLls };

std::string to_string(HessianMode mode);

/// Controller formulation together with the Hessian strategy used to solve it.
///
/// Names: clf-qp, clf-0, clf-all, lls-n, lls-all, nmpc-<beta>, and the plain
/// Gauss-Newton LLS variants lls-n-gn, lls-all-gn.
struct Formulation {
  FormulationKind kind = FormulationKind::Clf0;
  double beta = 0.0;  // terminal weight, NmpcBeta only
  HessianMode hessian = HessianMode::GaussNewton;

  static Formulation make(FormulationKind kind, double beta = 0.0);
  static Formulation parse(const std::string& name);
  std::string name() const;
  bool uses_clf() const { return kind != FormulationKind::NmpcBeta; }
  bool is_lls() const { return kind == FormulationKind::LlsN || kind == FormulationKind::LlsAll; }
};

/// phi(s) = linear * s + 0.5 * quadratic * s^2 per slack.
struct SlackWeights {
  double linear = 1e5;
  double quadratic = 1e4;
};

struct NlpConfig {
  SlackWeights slack;
  InputBounds u_bounds;
  Integrator method = Integrator::ForwardEuler;
};

/// Parameters of one NLP instance: measured state and its time stamp.
struct NlpParameters {
  State x_hat = State::Zero();
  double t0 = 0.0;
};

enum class VarRole { State, Input, Slack };

struct VarLocation {
  VarRole role = VarRole::State;
  int index = 0;      // node for states and inputs, slack number for slacks
  int component = 0;  // state component, 0 otherwise
  bool operator==(const VarLocation&) const = default;
};

/// w = [x_0 .. x_N, u_0 .. u_{N-1}, s_0 .. s_{m-1}].
struct Layout {
  int N = 0;
  int num_slacks = 0;

  Eigen::Index state(int k, int component = 0) const { return 4 * k + component; }
  Eigen::Index input(int k) const { return 4 * (N + 1) + k; }
  Eigen::Index slack(int j) const { return 4 * (N + 1) + N + j; }
  Eigen::Index size() const { return 4 * (N + 1) + N + num_slacks; }
  VarLocation locate(Eigen::Index flat) const;
};

enum class SoftKind { Clf, Lls };

/// One slacked stability row: h(node) - s_slack <= 0.
struct SoftRow {
  SoftKind kind = SoftKind::Clf;
  int node = 0;
};

/// Parametric NLP for one formulation and horizon.
///
/// Equalities: [x_0 - x_hat; x_{k+1} - f_d(x_k, u_k)].
/// Inequalities in <= 0 form: [h_j - s_j; -s_j; u_k - u_hi; u_lo - u_k].
struct HorizonProblem {
  Formulation formulation;
  int N = 0;
  double dt = 0.01;
  ClfData clf;
  SegwayParams params;
  ReferenceSignal ref;
  InputBounds u_bounds;
  SlackWeights slack;
  Integrator method = Integrator::ForwardEuler;
  Layout layout;
  std::vector<SoftRow> soft_rows;  // slack j belongs to soft_rows[j]

  Eigen::Index num_variables() const { return layout.size(); }
  Eigen::Index num_eq() const { return 4 * (N + 1); }
  Eigen::Index num_ineq() const { return 2 * static_cast<Eigen::Index>(soft_rows.size()) + 2 * N; }
  double node_time(const NlpParameters& p, int k) const { return p.t0 + k * dt; }
  DiscretizationConfig discretization() const { return {dt, method}; }
};

/// Throws InvalidConfig for N < 1, dt <= 0, negative slack weights, or the
/// point-wise ClfQp kind (which has no horizon; see clf_qp_pointwise).
HorizonProblem build(const Formulation& formulation, int N, double dt, const ClfData& clf,
                     const SegwayParams& params, const ReferenceSignal& ref, const NlpConfig& config = {});

double eval_cost(const HorizonProblem& prob, const Eigen::VectorXd& w, const NlpParameters& p);
Eigen::VectorXd eval_eq(const HorizonProblem& prob, const Eigen::VectorXd& w, const NlpParameters& p);
Eigen::VectorXd eval_ineq(const HorizonProblem& prob, const Eigen::VectorXd& w, const NlpParameters& p);

/// Value of soft row j without its slack.
double eval_soft_row(const HorizonProblem& prob, const Eigen::VectorXd& w, const NlpParameters& p, int j);

/// Quadratic model of the NLP at w together with the values it was built from.
///
/// qp.A stacks the equality Jacobian over the inequality Jacobian, so the QP
/// row multipliers split directly into (lambda, mu).
struct Linearization {
  QpData qp;
  double cost = 0.0;
  Eigen::VectorXd eq;
  Eigen::VectorXd ineq;
};

/// `mu` are inequality multipliers; only the LLS rows are read, and only
/// under GaussNewtonPlusLls. Negative entries are treated as zero.
Linearization linearize(const HorizonProblem& prob, const Eigen::VectorXd& w, const NlpParameters& p,
                        HessianMode mode, const Eigen::VectorXd& mu);

struct ClfQpResult {
  double u = 0.0;
  double slack = 0.0;
  QpSolution qp;
};

/// Point-wise min-norm CLF-QP: min 1/2 u^2 + phi(s) s.t. h_CLF(x, t, u) <= s, s >= 0, u in bounds.
ClfQpResult clf_qp_pointwise(const ClfData& clf, const State& x_hat, double t, const ReferenceSignal& ref,
                             const SegwayParams& params, const SlackWeights& slack, const InputBounds& bounds,
                             const QpSettings& settings = {});

}  // namespace clfmpc
