#pragma once

#include <Eigen/Core>

#include "clfmpc/dual.hpp"

namespace clfmpc {

/// Hessian of h_LLS in x for an error map that is affine at the evaluation
/// point: 2 H^T P H with H = d eta / d x. Positive semidefinite whenever P is.
inline Eigen::Matrix4d lls_hessian_block(const Eigen::Matrix2d& P, const Eigen::Matrix<double, 2, 4>& H) {
  const Eigen::Matrix2d Ps = 0.5 * (P + P.transpose());
  Eigen::Matrix4d out = 2.0 * H.transpose() * Ps * H;
  return 0.5 * (out + out.transpose());
}

}  // namespace clfmpc
