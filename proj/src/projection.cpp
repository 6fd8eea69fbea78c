#include "manyiv/projection.hpp"

#include <limits>
#include <sstream>

#include "manyiv/errors.hpp"

namespace manyiv {

ProjectionBasis decompose(const IVDataset& ds) {
  const Eigen::Index n = ds.n();
  const Eigen::Index K = ds.K();

  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(ds.Z());
  qr.setThreshold(static_cast<double>(n) * std::numeric_limits<double>::epsilon());
  const Eigen::Index rank = qr.rank();
  if (rank < K) {
    std::ostringstream msg;
    msg << "decompose: instrument matrix is rank deficient, numerical rank "
        << rank << " < K = " << K;
    throw RankError(msg.str(), static_cast<long>(rank));
  }

  ProjectionBasis basis;
  basis.Q = qr.householderQ() * Eigen::MatrixXd::Identity(n, K);
  basis.n = n;
  basis.K = K;
  return basis;
}

ProjectionSummary summarize(const ProjectionBasis& basis, const IVDataset& ds) {
  if (basis.n != ds.n() || basis.K != ds.K()) {
    throw DimensionError("summarize: basis does not match dataset dimensions");
  }
  const Eigen::Index n = ds.n();
  const Eigen::Index K = ds.K();
  const Eigen::Index p = ds.p();

  ProjectionSummary s;
  s.n = n;
  s.K = K;
  s.p = p;

  const Eigen::MatrixXd QtY = basis.Q.transpose() * ds.Y();
  const Eigen::VectorXd Qty = basis.Q.transpose() * ds.y();

  s.YPY = QtY.transpose() * QtY;
  s.YPY = 0.5 * (s.YPY + s.YPY.transpose()).eval();
  Eigen::MatrixXd YtY = ds.Y().transpose() * ds.Y();
  YtY = 0.5 * (YtY + YtY.transpose()).eval();
  s.YMY = YtY - s.YPY;

  s.YPy = QtY.transpose() * Qty;
  s.YMy = ds.Y().transpose() * ds.y() - s.YPy;

  s.yPy = Qty.squaredNorm();
  s.yMy = ds.y().squaredNorm() - s.yPy;

  s.leverages = basis.Q.rowwise().squaredNorm();
  s.alpha_hat = static_cast<double>(K) / static_cast<double>(n);
  s.omega_hat = s.leverages.squaredNorm() / static_cast<double>(n);
  return s;
}

}  // namespace manyiv
