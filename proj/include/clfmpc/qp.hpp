#pragma once

#include <iosfwd>
#include <optional>
#include <string>

#include <Eigen/Core>
#include <Eigen/SparseCore>

namespace clfmpc {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Convex QP  min 1/2 x'Bx + q'x  s.t.  lo <= A x <= hi.
///
/// Equality rows have lo == hi; one-sided rows use +/- infinity.
struct QpData {
  SparseMatrix B;  // symmetric psd, full storage
  Eigen::VectorXd q;
  SparseMatrix A;
  Eigen::VectorXd lo;
  Eigen::VectorXd hi;

  Eigen::Index num_variables() const { return q.size(); }
  Eigen::Index num_rows() const { return lo.size(); }

  /// Throws DimensionMismatch on inconsistent sizes, InvalidConfig when
  /// lo > hi somewhere or B is not symmetric.
  void validate() const;
};

enum class QpStatus { Solved, MaxIter, PrimalInfeasible, DualInfeasible };

std::string to_string(QpStatus status);

/// Row multipliers follow the convention y >= 0 on active upper bounds and
/// y <= 0 on active lower bounds.
struct QpSolution {
  Eigen::VectorXd primal;
  Eigen::VectorXd dual;
  QpStatus status = QpStatus::MaxIter;
  int iterations = 0;
  bool polished = false;
};

struct WarmStart {
  Eigen::VectorXd primal;
  Eigen::VectorXd dual;
};

struct QpSettings {
  double rho = 0.1;
  double rho_eq = 1e3;
  double sigma = 1e-6;
  double alpha = 1.6;
  double eps_abs = 1e-8;
  double eps_rel = 1e-8;
  double eps_prim_inf = 1e-5;
  double eps_dual_inf = 1e-5;
  int max_iter = 20000;
  int scaling_iterations = 10;
  bool adaptive_rho = true;
  int adaptive_rho_interval = 25;
  bool polish = true;
  int polish_refine_iterations = 10;
};

struct KktResidual {
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
};

KktResidual kkt_residual(const QpData& data, const Eigen::VectorXd& primal, const Eigen::VectorXd& dual);

inline KktResidual kkt_residual(const QpData& data, const QpSolution& sol) {
  return kkt_residual(data, sol.primal, sol.dual);
}

/// Tolerances a solution must meet to count as Solved.
struct KktTolerance {
  double primal = 0.0;
  double dual = 0.0;
  double complementarity = 0.0;
};

KktTolerance kkt_tolerance(const QpData& data, const Eigen::VectorXd& primal, const Eigen::VectorXd& dual,
                           double eps_abs, double eps_rel);

/// Operator-splitting (ADMM) QP solver with Ruiz equilibration, a single
/// KKT factorization per penalty value, infeasibility certificates and
/// active-set polishing.
class QpSolver {
 public:
  explicit QpSolver(QpSettings settings = {}) : settings_(settings) {}

  const QpSettings& settings() const { return settings_; }

  QpSolution solve(const QpData& data, const std::optional<WarmStart>& warm = std::nullopt);

 private:
  QpSettings settings_;
};

inline QpSolution solve_qp(const QpData& data, const std::optional<WarmStart>& warm = std::nullopt,
                           const QpSettings& settings = {}) {
  return QpSolver(settings).solve(data, warm);
}

/// Plain-text dump of (B, q, A, lo, hi): one coordinate-format section per
/// matrix and one value per line for vectors.
void write_qp_dump(std::ostream& os, const QpData& data);

}  // namespace clfmpc
