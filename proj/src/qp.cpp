#include "clfmpc/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <vector>

#include <Eigen/SparseLU>
#include <Eigen/SparseCholesky>

#include "clfmpc/errors.hpp"

namespace clfmpc {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

using Eigen::Index;
using Eigen::VectorXd;
using Triplet = Eigen::Triplet<double>;

double inf_norm(const VectorXd& v) { return v.size() == 0 ? 0.0 : v.cwiseAbs().maxCoeff(); }

VectorXd clamp(const VectorXd& v, const VectorXd& lo, const VectorXd& hi) {
  return v.cwiseMax(lo).cwiseMin(hi);
}

// Column-wise infinity norms of a sparse matrix.
VectorXd col_norms(const SparseMatrix& M) {
  VectorXd out = VectorXd::Zero(M.cols());
  for (Index j = 0; j < M.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(M, j); it; ++it) out(j) = std::max(out(j), std::abs(it.value()));
  }
  return out;
}

VectorXd row_norms(const SparseMatrix& M) {
  VectorXd out = VectorXd::Zero(M.rows());
  for (Index j = 0; j < M.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(M, j); it; ++it) {
      out(it.row()) = std::max(out(it.row()), std::abs(it.value()));
    }
  }
  return out;
}

double limit_scaling(double v) {
  constexpr double kMin = 1e-4;
  constexpr double kMax = 1e4;
  if (v < kMin) return 1.0;
  return std::min(v, kMax);
}

// Quasi-definite KKT matrix [[P + sigma I, A'], [A, -diag(inv_rho)]].
SparseMatrix kkt_matrix(const SparseMatrix& P, const SparseMatrix& A, double sigma, const VectorXd& inv_rho) {
  const Index n = P.rows();
  const Index m = A.rows();
  std::vector<Triplet> trips;
  trips.reserve(P.nonZeros() + 2 * A.nonZeros() + n + m);
  for (Index j = 0; j < P.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(P, j); it; ++it) trips.emplace_back(it.row(), it.col(), it.value());
  }
  for (Index i = 0; i < n; ++i) trips.emplace_back(i, i, sigma);
  for (Index j = 0; j < A.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(A, j); it; ++it) {
      trips.emplace_back(n + it.row(), it.col(), it.value());
      trips.emplace_back(it.col(), n + it.row(), it.value());
    }
  }
  for (Index i = 0; i < m; ++i) trips.emplace_back(n + i, n + i, -inv_rho(i));
  SparseMatrix K(n + m, n + m);
  K.setFromTriplets(trips.begin(), trips.end());
  return K;
}

struct Scaled {
  SparseMatrix P;
  VectorXd q;
  SparseMatrix A;
  VectorXd lo;
  VectorXd hi;
  VectorXd D;   // variable scaling
  VectorXd E;   // row scaling
  double c = 1.0;  // cost scaling
};

Scaled equilibrate(const QpData& data, int iterations) {
  Scaled s;
  const Index n = data.num_variables();
  const Index m = data.num_rows();
  s.P = data.B;
  s.q = data.q;
  s.A = data.A;
  s.D = VectorXd::Ones(n);
  s.E = VectorXd::Ones(m);

  for (int it = 0; it < iterations; ++it) {
    const VectorXd cp = col_norms(s.P);
    const VectorXd ca = col_norms(s.A);
    const VectorXd ra = row_norms(s.A);
    VectorXd d(n);
    VectorXd e(m);
    for (Index j = 0; j < n; ++j) d(j) = 1.0 / std::sqrt(limit_scaling(std::max(cp(j), ca(j))));
    for (Index i = 0; i < m; ++i) e(i) = 1.0 / std::sqrt(limit_scaling(ra(i)));

    s.P = d.asDiagonal() * s.P * d.asDiagonal();
    s.A = e.asDiagonal() * s.A * d.asDiagonal();
    s.q = d.cwiseProduct(s.q);
    s.D = s.D.cwiseProduct(d);
    s.E = s.E.cwiseProduct(e);

    const VectorXd cpn = col_norms(s.P);
    const double mean_col = n > 0 ? cpn.mean() : 0.0;
    const double gamma = limit_scaling(std::max(mean_col, inf_norm(s.q)));
    const double c = 1.0 / gamma;
    s.P *= c;
    s.q *= c;
    s.c *= c;
  }
  s.lo = s.E.cwiseProduct(data.lo);
  s.hi = s.E.cwiseProduct(data.hi);
  return s;
}

bool is_equality(double lo, double hi) { return lo == hi; }

// Sign-consistent multipliers: y >= 0 on upper-only rows, y <= 0 on lower-only rows.
bool dual_signs_consistent(const QpData& data, const VectorXd& y, double tol) {
  for (Index i = 0; i < y.size(); ++i) {
    if (is_equality(data.lo(i), data.hi(i))) continue;
    if (data.hi(i) == kInf && y(i) > tol) return false;
    if (data.lo(i) == -kInf && y(i) < -tol) return false;
  }
  return true;
}

bool meets(const KktResidual& r, const KktTolerance& t) {
  return r.primal <= t.primal && r.dual <= t.dual && r.complementarity <= t.complementarity;
}

// Per row: -1 at the lower bound, +1 at the upper bound, 0 inactive.
std::vector<signed char> active_guess(const QpData& data, const VectorXd& z, const VectorXd& y) {
  std::vector<signed char> side(data.num_rows(), 0);
  for (Index i = 0; i < data.num_rows(); ++i) {
    const double lo = data.lo(i);
    const double hi = data.hi(i);
    if (is_equality(lo, hi)) {
      side[i] = -1;
    } else if (lo > -kInf && z(i) - lo < -y(i)) {
      side[i] = -1;
    } else if (hi < kInf && hi - z(i) < y(i)) {
      side[i] = 1;
    }
  }
  return side;
}

// Equality-constrained QP with the rows marked in `side` held at their bounds.
std::optional<QpSolution> solve_on_active_set(const QpData& data, const std::vector<signed char>& side,
                                              const QpSettings& settings) {
  const Index n = data.num_variables();
  const Index m = data.num_rows();
  std::vector<Index> active;
  std::vector<double> target;
  for (Index i = 0; i < m; ++i) {
    if (side[i] == 0) continue;
    active.push_back(i);
    target.push_back(side[i] < 0 ? data.lo(i) : data.hi(i));
  }
  const Index na = static_cast<Index>(active.size());

  std::vector<Index> slot(m, -1);
  for (Index k = 0; k < na; ++k) slot[active[k]] = k;
  VectorXd row_norm = VectorXd::Zero(na);
  for (Index j = 0; j < data.A.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(data.A, j); it; ++it) {
      if (slot[it.row()] >= 0) row_norm(slot[it.row()]) = std::max(row_norm(slot[it.row()]), std::abs(it.value()));
    }
  }
  const VectorXd row_scale = row_norm.unaryExpr([](double v) { return v > 0.0 ? 1.0 / v : 1.0; });
  std::vector<Triplet> red;
  for (Index j = 0; j < data.A.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(data.A, j); it; ++it) {
      const Index k = slot[it.row()];
      if (k >= 0) red.emplace_back(k, it.col(), row_scale(k) * it.value());
    }
  }
  SparseMatrix Ared(na, n);
  Ared.setFromTriplets(red.begin(), red.end());
  const VectorXd b = Eigen::Map<const VectorXd>(target.data(), na).cwiseProduct(row_scale);

  VectorXd rhs(n + na);
  rhs << -data.q, b;
  VectorXd sol;
  bool solved = false;
  {
    SparseMatrix K0 = kkt_matrix(data.B, Ared, 0.0, VectorXd::Zero(na));
    K0.prune(0.0);
    K0.makeCompressed();
    Eigen::SparseLU<SparseMatrix> lu;
    lu.compute(K0);
    if (lu.info() == Eigen::Success) {
      sol = lu.solve(rhs);
      solved = sol.allFinite() && inf_norm(K0 * sol - rhs) <= 1e-12 * std::max(1.0, inf_norm(rhs));
    }
  }
  if (!solved) {
    constexpr double kDelta = 1e-7;
    const SparseMatrix K = kkt_matrix(data.B, Ared, kDelta, VectorXd::Constant(na, kDelta));
    Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower> ldlt(K);
    if (ldlt.info() != Eigen::Success) return std::nullopt;
    sol = ldlt.solve(rhs);
    for (int it = 0; it < settings.polish_refine_iterations; ++it) {
      const VectorXd xs = sol.head(n);
      const VectorXd ys = sol.tail(na);
      VectorXd res(n + na);
      res.head(n) = -data.q - data.B * xs - Ared.transpose() * ys;
      res.tail(na) = b - Ared * xs;
      sol += ldlt.solve(res);
    }
  }
  if (!sol.allFinite()) return std::nullopt;

  QpSolution out;
  out.primal = sol.head(n);
  out.dual = VectorXd::Zero(m);
  for (Index k = 0; k < na; ++k) out.dual(active[k]) = row_scale(k) * sol(n + k);
  return out;
}

// Active-set polish with a few primal-dual corrections of the guess: rows
// whose multiplier has the wrong sign are released, violated rows are added.
std::optional<QpSolution> polish(const QpData& data, std::vector<signed char> side, const QpSettings& settings) {
  constexpr int kMaxCorrections = 10;
  constexpr double kSignTol = 1e-10;
  const Index m = data.num_rows();
  for (int pass = 0; pass <= kMaxCorrections; ++pass) {
    auto out = solve_on_active_set(data, side, settings);
    if (!out) return std::nullopt;
    const VectorXd Ax = data.A * out->primal;
    const double feas_tol = settings.eps_abs + settings.eps_rel * inf_norm(Ax);
    bool changed = false;
    for (Index i = 0; i < m; ++i) {
      if (is_equality(data.lo(i), data.hi(i))) continue;
      double& y = out->dual(i);
      if (side[i] != 0) {
        const bool wrong = side[i] > 0 ? y < 0.0 : y > 0.0;
        if (wrong && std::abs(y) > kSignTol) {
          side[i] = 0;
          changed = true;
        } else if (wrong) {
          y = 0.0;
        }
      } else if (Ax(i) > data.hi(i) + feas_tol) {
        side[i] = 1;
        changed = true;
      } else if (Ax(i) < data.lo(i) - feas_tol) {
        side[i] = -1;
        changed = true;
      }
    }
    if (!changed) {
      out->status = QpStatus::Solved;
      out->polished = true;
      return out;
    }
  }
  return std::nullopt;
}

}  // namespace

std::string to_string(QpStatus status) {
  switch (status) {
    case QpStatus::Solved:
      return "solved";
    case QpStatus::MaxIter:
      return "max_iter";
    case QpStatus::PrimalInfeasible:
      return "primal_infeasible";
    case QpStatus::DualInfeasible:
      return "dual_infeasible";
  }
  return "unknown";
}

void QpData::validate() const {
  const Index n = q.size();
  const Index m = lo.size();
  if (B.rows() != n || B.cols() != n) throw DimensionMismatch("QP Hessian must be n x n");
  if (A.cols() != n || A.rows() != m || hi.size() != m) throw DimensionMismatch("QP constraint sizes disagree");
  for (Index i = 0; i < m; ++i) {
    if (lo(i) > hi(i)) throw InvalidConfig("QP row " + std::to_string(i) + " has lo > hi");
  }
  const SparseMatrix asym = SparseMatrix(B.transpose()) - B;
  for (Index j = 0; j < asym.outerSize(); ++j) {
    for (SparseMatrix::InnerIterator it(asym, j); it; ++it) {
      if (std::abs(it.value()) > 1e-9 * (1.0 + std::abs(B.coeff(it.row(), it.col())))) {
        throw InvalidConfig("QP Hessian is not symmetric");
      }
    }
  }
}

KktResidual kkt_residual(const QpData& data, const VectorXd& primal, const VectorXd& dual) {
  KktResidual r;
  const VectorXd Ax = data.A * primal;
  r.primal = inf_norm(Ax - clamp(Ax, data.lo, data.hi));
  r.dual = inf_norm(data.B * primal + data.q + data.A.transpose() * dual);
  for (Index i = 0; i < dual.size(); ++i) {
    const double y = dual(i);
    double gap = 0.0;
    if (y > 0.0) {
      gap = data.hi(i) == kInf ? kInf : std::abs(data.hi(i) - Ax(i));
    } else if (y < 0.0) {
      gap = data.lo(i) == -kInf ? kInf : std::abs(Ax(i) - data.lo(i));
    }
    if (y != 0.0) r.complementarity = std::max(r.complementarity, std::abs(y) * gap);
  }
  return r;
}

KktTolerance kkt_tolerance(const QpData& data, const VectorXd& primal, const VectorXd& dual, double eps_abs,
                           double eps_rel) {
  const VectorXd Ax = data.A * primal;
  const VectorXd z = clamp(Ax, data.lo, data.hi);
  const VectorXd Bx = data.B * primal;
  const VectorXd Aty = data.A.transpose() * dual;
  KktTolerance t;
  t.primal = eps_abs + eps_rel * std::max(inf_norm(Ax), inf_norm(z));
  t.dual = eps_abs + eps_rel * std::max({inf_norm(Bx), inf_norm(Aty), inf_norm(data.q)});
  t.complementarity = eps_abs;
  return t;
}

QpSolution QpSolver::solve(const QpData& data, const std::optional<WarmStart>& warm) {
  data.validate();
  const QpSettings& st = settings_;
  const Index n = data.num_variables();
  const Index m = data.num_rows();

  const Scaled s = equilibrate(data, st.scaling_iterations);

  VectorXd rho(m);
  for (Index i = 0; i < m; ++i) {
    if (is_equality(data.lo(i), data.hi(i))) {
      rho(i) = st.rho_eq;
    } else if (data.lo(i) == -kInf && data.hi(i) == kInf) {
      rho(i) = 1e-6;
    } else {
      rho(i) = st.rho;
    }
  }
  double rho_scale = 1.0;  // adaptive multiplier on every row's penalty

  auto factor = [&](Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower>& ldlt) {
    const VectorXd inv_rho = (rho * rho_scale).cwiseInverse();
    ldlt.compute(kkt_matrix(s.P, s.A, st.sigma, inv_rho));
    if (ldlt.info() != Eigen::Success) throw SolverFailure("KKT factorization failed");
  };
  Eigen::SimplicialLDLT<SparseMatrix, Eigen::Lower> ldlt;
  factor(ldlt);

  VectorXd x = VectorXd::Zero(n);
  VectorXd z = VectorXd::Zero(m);
  VectorXd y = VectorXd::Zero(m);
  if (warm) {
    if (warm->primal.size() != n || warm->dual.size() != m) {
      throw DimensionMismatch("warm start dimensions do not match the QP");
    }
    x = warm->primal.cwiseQuotient(s.D);
    y = s.c * warm->dual.cwiseQuotient(s.E);
    z = clamp(s.A * x, s.lo, s.hi);
  }

  auto unscaled = [&](const VectorXd& xs, const VectorXd& ys) {
    QpSolution out;
    out.primal = s.D.cwiseProduct(xs);
    out.dual = s.E.cwiseProduct(ys) / s.c;
    return out;
  };

  QpData scaled_data;
  scaled_data.B = s.P;
  scaled_data.q = s.q;
  scaled_data.A = s.A;
  scaled_data.lo = s.lo;
  scaled_data.hi = s.hi;
  std::optional<std::vector<signed char>> last_guess;
  auto try_polish = [&](const VectorXd& zs, const VectorXd& ys) -> std::optional<QpSolution> {
    if (!st.polish) return std::nullopt;
    auto side = active_guess(scaled_data, zs, ys);
    if (side == last_guess) return std::nullopt;
    last_guess = std::move(side);
    auto scaled_pol = polish(scaled_data, *last_guess, st);
    if (!scaled_pol) return std::nullopt;
    auto pol = std::optional<QpSolution>(unscaled(scaled_pol->primal, scaled_pol->dual));
    pol->status = QpStatus::Solved;
    pol->polished = true;
    const KktResidual r = kkt_residual(data, *pol);
    const KktTolerance tol = kkt_tolerance(data, pol->primal, pol->dual, st.eps_abs, st.eps_rel);
    if (!meets(r, tol) || !dual_signs_consistent(data, pol->dual, 0.0)) return std::nullopt;
    return pol;
  };

  QpSolution result;
  result.status = QpStatus::MaxIter;
  int iter = 0;
  for (iter = 1; iter <= st.max_iter; ++iter) {
    const VectorXd rho_vec = rho * rho_scale;
    VectorXd rhs(n + m);
    rhs.head(n) = st.sigma * x - s.q;
    rhs.tail(m) = z - y.cwiseQuotient(rho_vec);
    const VectorXd sol = ldlt.solve(rhs);
    const VectorXd x_tilde = sol.head(n);
    const VectorXd nu = sol.tail(m);
    const VectorXd z_tilde = z + (nu - y).cwiseQuotient(rho_vec);

    const VectorXd x_new = st.alpha * x_tilde + (1.0 - st.alpha) * x;
    const VectorXd v = st.alpha * z_tilde + (1.0 - st.alpha) * z;
    const VectorXd z_new = clamp(v + y.cwiseQuotient(rho_vec), s.lo, s.hi);
    const VectorXd y_new = y + rho_vec.cwiseProduct(v - z_new);

    const VectorXd dx = x_new - x;
    const VectorXd dy = y_new - y;
    x = x_new;
    z = z_new;
    y = y_new;

    // Convergence in the original units.
    const VectorXd Ax_s = s.A * x;
    const VectorXd Px_s = s.P * x;
    const VectorXd Aty_s = s.A.transpose() * y;
    const double r_prim = inf_norm((Ax_s - z).cwiseQuotient(s.E));
    const double r_dual = inf_norm((Px_s + s.q + Aty_s).cwiseQuotient(s.D)) / s.c;
    const double tol_prim =
        st.eps_abs + st.eps_rel * std::max(inf_norm(Ax_s.cwiseQuotient(s.E)), inf_norm(z.cwiseQuotient(s.E)));
    const double tol_dual =
        st.eps_abs + st.eps_rel * std::max({inf_norm(Px_s.cwiseQuotient(s.D)), inf_norm(Aty_s.cwiseQuotient(s.D)),
                                            inf_norm(s.q.cwiseQuotient(s.D))}) / s.c;

    if (r_prim <= tol_prim && r_dual <= tol_dual) {
      QpSolution cand = unscaled(x, y);
      const KktResidual kr = kkt_residual(data, cand);
      const KktTolerance kt = kkt_tolerance(data, cand.primal, cand.dual, st.eps_abs, st.eps_rel);
      if (auto pol = try_polish(z, y)) {
        result = *pol;
        break;
      }
      if (kr.complementarity <= kt.complementarity) {
        result = cand;
        result.status = QpStatus::Solved;
        break;
      }
    } else if (iter == 1 || iter % 10 == 0) {
      if (auto pol = try_polish(z, y)) {
        result = *pol;
        break;
      }
    }

    // Primal infeasibility certificate from the multiplier increment.
    {
      const VectorXd dy_u = s.E.cwiseProduct(dy);
      const double ndy = inf_norm(dy_u);
      if (ndy > 1e-12) {
        const double at_dy = inf_norm(data.A.transpose() * dy_u);
        double support = 0.0;
        for (Index i = 0; i < m; ++i) {
          if (dy_u(i) > 0.0) support += data.hi(i) == kInf ? kInf : data.hi(i) * dy_u(i);
          if (dy_u(i) < 0.0) support += data.lo(i) == -kInf ? kInf : data.lo(i) * dy_u(i);
        }
        if (at_dy <= st.eps_prim_inf * ndy && support < -st.eps_prim_inf * ndy) {
          result = unscaled(x, y);
          result.status = QpStatus::PrimalInfeasible;
          break;
        }
      }
    }
    // Dual infeasibility (unbounded objective) certificate.
    {
      const VectorXd dx_u = s.D.cwiseProduct(dx);
      const double ndx = inf_norm(dx_u);
      if (ndx > 1e-12) {
        const double eps = st.eps_dual_inf * ndx;
        bool unbounded = inf_norm(data.B * dx_u) <= eps && data.q.dot(dx_u) < -eps;
        if (unbounded) {
          const VectorXd adx = data.A * dx_u;
          for (Index i = 0; i < m && unbounded; ++i) {
            const bool lo_fin = data.lo(i) > -kInf;
            const bool hi_fin = data.hi(i) < kInf;
            if (hi_fin && adx(i) > eps) unbounded = false;
            if (lo_fin && adx(i) < -eps) unbounded = false;
          }
        }
        if (unbounded) {
          result = unscaled(x, y);
          result.status = QpStatus::DualInfeasible;
          break;
        }
      }
    }

    if (st.adaptive_rho && iter % st.adaptive_rho_interval == 0) {
      const double prim_norm = r_prim / std::max(tol_prim - st.eps_abs + 1e-30, 1e-30);
      const double dual_norm = r_dual / std::max(tol_dual - st.eps_abs + 1e-30, 1e-30);
      const double ratio = std::sqrt(prim_norm / std::max(dual_norm, 1e-30));
      const double proposed = std::clamp(rho_scale * ratio, 1e-6, 1e6);
      if (proposed > 5.0 * rho_scale || proposed < 0.2 * rho_scale) {
        rho_scale = proposed;
        factor(ldlt);
      }
    }
  }

  if (result.primal.size() == 0) {
    result = unscaled(x, y);
    result.status = QpStatus::MaxIter;
    if (auto pol = try_polish(z, y)) result = *pol;
  }
  result.iterations = std::min(iter, st.max_iter);
  return result;
}

void write_qp_dump(std::ostream& os, const QpData& data) {
  auto dump_matrix = [&](const char* name, const SparseMatrix& M) {
    os << "%% " << name << " coordinate real general\n";
    os << M.rows() << ' ' << M.cols() << ' ' << M.nonZeros() << '\n';
    for (Index j = 0; j < M.outerSize(); ++j) {
      for (SparseMatrix::InnerIterator it(M, j); it; ++it) {
        os << it.row() + 1 << ' ' << it.col() + 1 << ' ' << it.value() << '\n';
      }
    }
  };
  auto dump_vector = [&](const char* name, const VectorXd& v) {
    os << "%% " << name << " array real\n" << v.size() << '\n';
    for (Index i = 0; i < v.size(); ++i) os << v(i) << '\n';
  };
  const auto old_precision = os.precision(17);
  dump_matrix("B", data.B);
  dump_vector("q", data.q);
  dump_matrix("A", data.A);
  dump_vector("lo", data.lo);
  dump_vector("hi", data.hi);
  os.precision(old_precision);
}

}  // namespace clfmpc
