#pragma once

#include <Eigen/Dense>

#include "manyiv/dataset.hpp"

namespace manyiv {

/// Orthonormal basis Q of col(Z). QQ' realizes the projection onto the
/// instrument space without ever forming an n x n matrix.
struct ProjectionBasis {
  Eigen::MatrixXd Q;  // n x K
  Eigen::Index n = 0;
  Eigen::Index K = 0;
};

/// Quadratic forms and leverage statistics of a dataset under QQ'.
struct ProjectionSummary {
  Eigen::MatrixXd YPY;  // p x p, Y' P_Z Y
  Eigen::MatrixXd YMY;  // p x p, Y' M_Z Y
  Eigen::VectorXd YPy;  // p, Y' P_Z y
  Eigen::VectorXd YMy;  // p, Y' M_Z y
  double yPy = 0.0;
  double yMy = 0.0;
  Eigen::VectorXd leverages;  // n, P_ii
  double alpha_hat = 0.0;     // K / n
  double omega_hat = 0.0;     // (1/n) sum P_ii^2
  Eigen::Index n = 0;
  Eigen::Index K = 0;
  Eigen::Index p = 0;
};

/// One thin, rank-revealing QR per dataset; throws RankError below full rank.
ProjectionBasis decompose(const IVDataset& ds);

/// All quadratic forms via Q'Y products (O(nKp)); leverages are the squared
/// row norms of Q.
ProjectionSummary summarize(const ProjectionBasis& basis, const IVDataset& ds);

}  // namespace manyiv
