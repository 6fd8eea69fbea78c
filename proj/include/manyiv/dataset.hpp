#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>

namespace manyiv {

/// Observations for a linear IV regression: outcome y (n), endogenous
/// regressors Y (n x p), instruments Z (n x K). Immutable after
/// construction; construction verifies finiteness, n > K >= 1, n > p >= 1
/// and full column rank of Z.
class IVDataset {
public:
  IVDataset(Eigen::VectorXd y, Eigen::MatrixXd Y, Eigen::MatrixXd Z);

  const Eigen::VectorXd& y() const noexcept { return y_; }
  const Eigen::MatrixXd& Y() const noexcept { return Y_; }
  const Eigen::MatrixXd& Z() const noexcept { return Z_; }

  Eigen::Index n() const noexcept { return Z_.rows(); }
  Eigen::Index K() const noexcept { return Z_.cols(); }
  Eigen::Index p() const noexcept { return Y_.cols(); }

private:
  Eigen::VectorXd y_;
  Eigen::MatrixXd Y_;
  Eigen::MatrixXd Z_;
};

struct DatasetMeta {
  Eigen::Index n = 0;
  Eigen::Index K = 0;
  Eigen::Index p = 0;
  double alpha_hat = 0.0;
  bool many_iv_flag = false;  // K/n >= 0.05
};

/// Numerical rank of Z from a column-pivoted QR with pivot cutoff
/// n * eps * (largest column norm).
Eigen::Index instrument_rank(const Eigen::MatrixXd& Z);

/// Reads a dataset from CSV with header y,Y1..Yp,Z1..ZK. The caller-supplied
/// p must agree with the header.
IVDataset load_csv(const std::string& path, Eigen::Index p);

/// Writes the same schema load_csv reads; values at 17 significant digits so
/// a round trip reproduces every double exactly.
void write_csv(const IVDataset& ds, const std::string& path);

/// Re-checks the rank invariant and reports dimension metadata.
DatasetMeta validate(const IVDataset& ds);

}  // namespace manyiv
