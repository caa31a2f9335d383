#include "clfmpc/nlp.hpp"

#include <cmath>
#include <cstdio>
#include <limits>

#include "clfmpc/diff.hpp"
#include "clfmpc/errors.hpp"

namespace clfmpc {

namespace {

using Eigen::Index;
using Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

constexpr double kInf = std::numeric_limits<double>::infinity();

State node_state(const HorizonProblem& prob, const VectorXd& w, int k) {
  return w.segment<4>(prob.layout.state(k));
}

void check_dims(const HorizonProblem& prob, const VectorXd& w) {
  if (w.size() != prob.num_variables()) {
    throw DimensionMismatch("decision vector has " + std::to_string(w.size()) + " entries, layout needs " +
                            std::to_string(prob.num_variables()));
  }
}

// The first node always uses the measured state, which makes the row affine in u_0.
State clf_row_state(const HorizonProblem& prob, const VectorXd& w, const NlpParameters& p, int k) {
  return k == 0 ? p.x_hat : node_state(prob, w, k);
}

void add_block(std::vector<Triplet>& out, Index r0, Index c0, const Eigen::MatrixXd& block) {
  for (Index i = 0; i < block.rows(); ++i) {
    for (Index j = 0; j < block.cols(); ++j) {
      if (block(i, j) != 0.0) out.emplace_back(r0 + i, c0 + j, block(i, j));
    }
  }
}

}  // namespace

std::string to_string(HessianMode mode) {
  return mode == HessianMode::GaussNewton ? "gauss-newton" : "gauss-newton+lls";
}

Formulation Formulation::make(FormulationKind kind, double beta) {
  Formulation f;
  f.kind = kind;
  f.beta = beta;
  f.hessian = (kind == FormulationKind::LlsN || kind == FormulationKind::LlsAll) ? HessianMode::GaussNewtonPlusLls
                                                                                  : HessianMode::GaussNewton;
  if (kind == FormulationKind::NmpcBeta && !(beta > 0.0)) throw InvalidConfig("nmpc terminal weight must be > 0");
  return f;
}

Formulation Formulation::parse(const std::string& name) {
  if (name == "clf-qp") return make(FormulationKind::ClfQp);
  if (name == "clf-0") return make(FormulationKind::Clf0);
  if (name == "clf-all") return make(FormulationKind::ClfAll);
  if (name == "lls-n") return make(FormulationKind::LlsN);
  if (name == "lls-all") return make(FormulationKind::LlsAll);
  if (name == "lls-n-gn" || name == "lls-all-gn") {
    Formulation f = make(name == "lls-n-gn" ? FormulationKind::LlsN : FormulationKind::LlsAll);
    f.hessian = HessianMode::GaussNewton;
    return f;
  }
  if (name.rfind("nmpc-", 0) == 0) {
    const std::string tail = name.substr(5);
    std::size_t used = 0;
    double beta = 0.0;
    try {
      beta = std::stod(tail, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == tail.size() && used > 0) return make(FormulationKind::NmpcBeta, beta);
  }
  throw InvalidConfig("unknown formulation '" + name + "'");
}

std::string Formulation::name() const {
  switch (kind) {
    case FormulationKind::ClfQp:
      return "clf-qp";
    case FormulationKind::Clf0:
      return "clf-0";
    case FormulationKind::ClfAll:
      return "clf-all";
    case FormulationKind::LlsN:
      return hessian == HessianMode::GaussNewton ? "lls-n-gn" : "lls-n";
    case FormulationKind::LlsAll:
      return hessian == HessianMode::GaussNewton ? "lls-all-gn" : "lls-all";
    case FormulationKind::NmpcBeta: {
      char buf[32];
      std::snprintf(buf, sizeof buf, "nmpc-%g", beta);
      return buf;
    }
  }
  return "unknown";
}

VarLocation Layout::locate(Index flat) const {
  if (flat < 0 || flat >= size()) throw DimensionMismatch("flat index outside the layout");
  const Index nx = 4 * (N + 1);
  if (flat < nx) return {VarRole::State, static_cast<int>(flat / 4), static_cast<int>(flat % 4)};
  if (flat < nx + N) return {VarRole::Input, static_cast<int>(flat - nx), 0};
  return {VarRole::Slack, static_cast<int>(flat - nx - N), 0};
}

HorizonProblem build(const Formulation& formulation, int N, double dt, const ClfData& clf,
                     const SegwayParams& params, const ReferenceSignal& ref, const NlpConfig& config) {
  if (formulation.kind == FormulationKind::ClfQp) {
    throw InvalidConfig("clf-qp is point-wise and has no horizon problem");
  }
  if (N < 1) throw InvalidConfig("horizon N must be at least 1");
  if (!(dt > 0.0)) throw InvalidConfig("dt must be positive");
  if (!(config.slack.linear >= 0.0) || !(config.slack.quadratic >= 0.0)) {
    throw InvalidConfig("slack weights must be non-negative");
  }
  if (!(config.u_bounds.lo <= config.u_bounds.hi)) throw InvalidConfig("input bounds must satisfy lo <= hi");
  params.validate();
  ref.validate();

  HorizonProblem prob;
  prob.formulation = formulation;
  prob.N = N;
  prob.dt = dt;
  prob.clf = clf;
  prob.params = params;
  prob.ref = ref;
  prob.u_bounds = config.u_bounds;
  prob.slack = config.slack;
  prob.method = config.method;

  switch (formulation.kind) {
    case FormulationKind::Clf0:
      prob.soft_rows.push_back({SoftKind::Clf, 0});
      break;
    case FormulationKind::ClfAll:
      for (int k = 0; k < N; ++k) prob.soft_rows.push_back({SoftKind::Clf, k});
      break;
    case FormulationKind::LlsN:
      prob.soft_rows.push_back({SoftKind::Clf, 0});
      prob.soft_rows.push_back({SoftKind::Lls, N});
      break;
    case FormulationKind::LlsAll:
      prob.soft_rows.push_back({SoftKind::Clf, 0});
      for (int k = 1; k <= N; ++k) prob.soft_rows.push_back({SoftKind::Lls, k});
      break;
    default:
      break;
  }
  prob.layout.N = N;
  prob.layout.num_slacks = static_cast<int>(prob.soft_rows.size());
  return prob;
}

double eval_cost(const HorizonProblem& prob, const VectorXd& w, const NlpParameters& p) {
  check_dims(prob, w);
  const Layout& L = prob.layout;
  double cost = 0.0;
  if (prob.formulation.kind == FormulationKind::NmpcBeta) {
    for (int k = 0; k < prob.N; ++k) {
      const Vector2<double> eta = error_state<double>(prob.params, node_state(prob, w, k), prob.node_time(p, k), prob.ref);
      cost += quadratic_form<double>(prob.clf.Q, eta);
    }
    cost += prob.formulation.beta *
            lyapunov_value<double>(prob.clf, prob.params, node_state(prob, w, prob.N), prob.node_time(p, prob.N), prob.ref);
  }
  for (int k = 0; k < prob.N; ++k) cost += 0.5 * w(L.input(k)) * w(L.input(k));
  for (int j = 0; j < L.num_slacks; ++j) {
    const double s = w(L.slack(j));
    cost += prob.slack.linear * s + 0.5 * prob.slack.quadratic * s * s;
  }
  return cost;
}

VectorXd eval_eq(const HorizonProblem& prob, const VectorXd& w, const NlpParameters& p) {
  check_dims(prob, w);
  VectorXd g(prob.num_eq());
  g.head<4>() = node_state(prob, w, 0) - p.x_hat;
  const DiscretizationConfig cfg = prob.discretization();
  for (int k = 0; k < prob.N; ++k) {
    const State next = discrete_step<double>(prob.params, node_state(prob, w, k), w(prob.layout.input(k)), cfg);
    g.segment<4>(4 * (k + 1)) = node_state(prob, w, k + 1) - next;
  }
  return g;
}

double eval_soft_row(const HorizonProblem& prob, const VectorXd& w, const NlpParameters& p, int j) {
  const SoftRow& row = prob.soft_rows.at(j);
  const double t = prob.node_time(p, row.node);
  if (row.kind == SoftKind::Clf) {
    const State x = clf_row_state(prob, w, p, row.node);
    return h_clf<double>(prob.clf, x, t, w(prob.layout.input(row.node)), prob.ref, prob.params);
  }
  return h_lls<double>(prob.clf, node_state(prob, w, row.node), t, p.x_hat, row.node, prob.dt, prob.ref,
                       prob.params);
}

VectorXd eval_ineq(const HorizonProblem& prob, const VectorXd& w, const NlpParameters& p) {
  check_dims(prob, w);
  const Layout& L = prob.layout;
  const Index ns = L.num_slacks;
  VectorXd h(prob.num_ineq());
  for (int j = 0; j < ns; ++j) {
    h(j) = eval_soft_row(prob, w, p, j) - w(L.slack(j));
    h(ns + j) = -w(L.slack(j));
  }
  for (int k = 0; k < prob.N; ++k) {
    h(2 * ns + k) = w(L.input(k)) - prob.u_bounds.hi;
    h(2 * ns + prob.N + k) = prob.u_bounds.lo - w(L.input(k));
  }
  return h;
}

Linearization linearize(const HorizonProblem& prob, const VectorXd& w, const NlpParameters& p, HessianMode mode,
                        const VectorXd& mu) {
  check_dims(prob, w);
  if (mu.size() != prob.num_ineq()) throw DimensionMismatch("inequality multipliers have the wrong length");
  const Layout& L = prob.layout;
  const Index n = prob.num_variables();
  const Index neq = prob.num_eq();
  const Index ns = L.num_slacks;
  const int N = prob.N;
  const DiscretizationConfig cfg = prob.discretization();

  Linearization lin;
  lin.cost = eval_cost(prob, w, p);
  lin.eq.resize(neq);
  lin.ineq.resize(prob.num_ineq());

  std::vector<Triplet> bt;
  std::vector<Triplet> at;
  VectorXd grad = VectorXd::Zero(n);

  // Dynamics rows.
  lin.eq.head<4>() = node_state(prob, w, 0) - p.x_hat;
  for (int i = 0; i < 4; ++i) at.emplace_back(i, L.state(0, i), 1.0);
  for (int k = 0; k < N; ++k) {
    Eigen::Matrix<double, 5, 1> xu;
    xu << node_state(prob, w, k), w(L.input(k));
    const auto [next, J] = value_and_jacobian<5>(
        [&](const auto& s) {
          using S = typename std::decay_t<decltype(s)>::Scalar;
          const Vector4<S> xs = s.template head<4>();
          return discrete_step<S>(prob.params, xs, s(4), cfg);
        },
        xu);
    const Index r0 = 4 * (k + 1);
    lin.eq.segment<4>(r0) = node_state(prob, w, k + 1) - next;
    for (int i = 0; i < 4; ++i) at.emplace_back(r0 + i, L.state(k + 1, i), 1.0);
    add_block(at, r0, L.state(k), -J.leftCols<4>());
    add_block(at, r0, L.input(k), -J.col(4));
  }

  // Soft stability rows and their slacks.
  for (int j = 0; j < ns; ++j) {
    const SoftRow& row = prob.soft_rows[j];
    const double t = prob.node_time(p, row.node);
    const Index r = neq + j;
    double value = 0.0;
    if (row.kind == SoftKind::Clf && row.node == 0) {
      const AffineInU a = h_clf_affine(prob.clf, p.x_hat, t, prob.ref, prob.params);
      value = h_clf<double>(prob.clf, p.x_hat, t, w(L.input(0)), prob.ref, prob.params);
      at.emplace_back(r, L.input(0), a.slope);
    } else if (row.kind == SoftKind::Clf) {
      Eigen::Matrix<double, 5, 1> xu;
      xu << node_state(prob, w, row.node), w(L.input(row.node));
      const auto J = jacobian<5>(
          [&](const auto& s) {
            using S = typename std::decay_t<decltype(s)>::Scalar;
            const Vector4<S> xs = s.template head<4>();
            Eigen::Matrix<S, 1, 1> out;
            out(0) = h_clf<S>(prob.clf, xs, t, s(4), prob.ref, prob.params);
            return out;
          },
          xu);
      value = eval_soft_row(prob, w, p, j);
      add_block(at, r, L.state(row.node), J.leftCols<4>());
      at.emplace_back(r, L.input(row.node), J(0, 4));
    } else {
      const State xk = node_state(prob, w, row.node);
      value = eval_soft_row(prob, w, p, j);
      const Eigen::RowVector4d dV = lyapunov_gradient(prob.clf, xk, t, prob.ref, prob.params);
      add_block(at, r, L.state(row.node), dV);
      if (mode == HessianMode::GaussNewtonPlusLls && mu(j) > 0.0) {
        const auto [eta, H] = error_state_jacobian<double>(prob.params, xk, t, prob.ref);
        add_block(bt, L.state(row.node), L.state(row.node), mu(j) * lls_hessian_block(prob.clf.P, H));
      }
    }
    lin.ineq(j) = value - w(L.slack(j));
    at.emplace_back(r, L.slack(j), -1.0);
    lin.ineq(ns + j) = -w(L.slack(j));
    at.emplace_back(neq + ns + j, L.slack(j), -1.0);
  }

  // Input bounds.
  for (int k = 0; k < N; ++k) {
    lin.ineq(2 * ns + k) = w(L.input(k)) - prob.u_bounds.hi;
    lin.ineq(2 * ns + N + k) = prob.u_bounds.lo - w(L.input(k));
    at.emplace_back(neq + 2 * ns + k, L.input(k), 1.0);
    at.emplace_back(neq + 2 * ns + N + k, L.input(k), -1.0);
  }

  // Least-squares cost: Gauss-Newton Hessian and exact gradient.
  for (int k = 0; k < N; ++k) {
    bt.emplace_back(L.input(k), L.input(k), 1.0);
    grad(L.input(k)) = w(L.input(k));
  }
  for (int j = 0; j < ns; ++j) {
    bt.emplace_back(L.slack(j), L.slack(j), prob.slack.quadratic);
    grad(L.slack(j)) = prob.slack.linear + prob.slack.quadratic * w(L.slack(j));
  }
  if (prob.formulation.kind == FormulationKind::NmpcBeta) {
    const Eigen::Matrix2d Qs = prob.clf.Q + prob.clf.Q.transpose();
    const Eigen::Matrix2d Ps = prob.clf.P + prob.clf.P.transpose();
    for (int k = 0; k <= N; ++k) {
      const auto [eta, H] = error_state_jacobian<double>(prob.params, node_state(prob, w, k), prob.node_time(p, k), prob.ref);
      const Eigen::Matrix2d W = k < N ? Qs : Eigen::Matrix2d(prob.formulation.beta * Ps);
      grad.segment<4>(L.state(k)) = (eta.transpose() * W * H).transpose();
      add_block(bt, L.state(k), L.state(k), H.transpose() * W * H);
    }
  }

  const Index m = neq + prob.num_ineq();
  lin.qp.B.resize(n, n);
  lin.qp.B.setFromTriplets(bt.begin(), bt.end());
  lin.qp.A.resize(m, n);
  lin.qp.A.setFromTriplets(at.begin(), at.end());
  lin.qp.q = grad;
  lin.qp.lo.resize(m);
  lin.qp.hi.resize(m);
  lin.qp.lo.head(neq) = -lin.eq;
  lin.qp.hi.head(neq) = -lin.eq;
  lin.qp.lo.tail(prob.num_ineq()).setConstant(-kInf);
  lin.qp.hi.tail(prob.num_ineq()) = -lin.ineq;
  return lin;
}

ClfQpResult clf_qp_pointwise(const ClfData& clf, const State& x_hat, double t, const ReferenceSignal& ref,
                             const SegwayParams& params, const SlackWeights& slack, const InputBounds& bounds,
                             const QpSettings& settings) {
  const AffineInU a = h_clf_affine(clf, x_hat, t, ref, params);
  QpData qp;
  qp.B.resize(2, 2);
  qp.B.insert(0, 0) = 1.0;
  qp.B.insert(1, 1) = slack.quadratic;
  qp.q = Eigen::Vector2d(0.0, slack.linear);
  std::vector<Triplet> at{{0, 0, a.slope}, {0, 1, -1.0}, {1, 1, -1.0}, {2, 0, 1.0}};
  qp.A.resize(3, 2);
  qp.A.setFromTriplets(at.begin(), at.end());
  qp.lo = Eigen::Vector3d(-kInf, -kInf, bounds.lo);
  qp.hi = Eigen::Vector3d(-a.intercept, 0.0, bounds.hi);

  ClfQpResult out;
  out.qp = QpSolver(settings).solve(qp);
  if (out.qp.status != QpStatus::Solved) {
    throw SolverFailure("point-wise CLF-QP returned " + to_string(out.qp.status));
  }
  out.u = out.qp.primal(0);
  out.slack = out.qp.primal(1);
  return out;
}

}  // namespace clfmpc
