#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "manyiv/dataset.hpp"
#include "manyiv/errors.hpp"
#include "manyiv/projection.hpp"
#include "oracles.hpp"

using namespace manyiv;

namespace {

IVDataset make_dataset(const Eigen::MatrixXd& Y, const Eigen::MatrixXd& Z) {
  // outcome is irrelevant for these tests; any finite vector works
  Eigen::VectorXd y = Eigen::VectorXd::LinSpaced(Z.rows(), 0.0, 1.0);
  return IVDataset(y, Y, Z);
}

}  // namespace

TEST_CASE("constant instrument column yields the normalized constant basis") {
  Eigen::MatrixXd Z = Eigen::MatrixXd::Ones(4, 1);
  Eigen::MatrixXd Y(4, 1);
  Y << 1, 2, 3, 4;
  const ProjectionBasis basis = decompose(make_dataset(Y, Z));
  for (int i = 0; i < 4; ++i) {
    CHECK(std::abs(basis.Q(i, 0)) == doctest::Approx(0.5).epsilon(1e-12));
  }
}

TEST_CASE("orthonormal instruments reproduce themselves under the projection") {
  Eigen::MatrixXd raw = oracles::random_matrix(30, 6, 17);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(raw);
  const Eigen::MatrixXd Z = qr.householderQ() * Eigen::MatrixXd::Identity(30, 6);
  Eigen::MatrixXd Y = oracles::random_matrix(30, 1, 18);

  const ProjectionBasis basis = decompose(make_dataset(Y, Z));
  // col(Q) = col(Z): projecting Z onto Q changes nothing
  const Eigen::MatrixXd back = basis.Q * (basis.Q.transpose() * Z);
  CHECK((back - Z).norm() <= 1e-12 * Z.norm());
  // Q equals Z up to column rotation/sign: same Gram matrix with identity
  CHECK((basis.Q.transpose() * basis.Q - Eigen::MatrixXd::Identity(6, 6)).cwiseAbs().maxCoeff() <=
        1e-10);
}

TEST_CASE("implicit projection matches the dense brute-force oracle") {
  const Eigen::MatrixXd Z = oracles::random_matrix(50, 10, 23);
  const Eigen::MatrixXd Y = oracles::random_matrix(50, 1, 24);
  const ProjectionBasis basis = decompose(make_dataset(Y, Z));

  const Eigen::MatrixXd P_dense = oracles::dense_projection(Z);
  const Eigen::MatrixXd P_impl = basis.Q * basis.Q.transpose();
  CHECK((P_dense - P_impl).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("summarize on the mean projection matches the hand computation") {
  Eigen::MatrixXd Z = Eigen::MatrixXd::Ones(4, 1);
  Eigen::MatrixXd Y(4, 1);
  Y << 1, 2, 3, 4;
  const IVDataset ds = make_dataset(Y, Z);
  const ProjectionSummary s = summarize(decompose(ds), ds);

  CHECK(s.YPY(0, 0) == doctest::Approx(25.0).epsilon(1e-12));
  CHECK(s.YMY(0, 0) == doctest::Approx(5.0).epsilon(1e-12));
  for (int i = 0; i < 4; ++i) {
    CHECK(s.leverages(i) == doctest::Approx(0.25).epsilon(1e-12));
  }
  CHECK(s.omega_hat == doctest::Approx(0.0625).epsilon(1e-12));
  CHECK(s.alpha_hat == 0.25);
}

TEST_CASE("outcome orthogonal to the instrument space has zero explained form") {
  Eigen::MatrixXd Z = Eigen::MatrixXd::Ones(4, 1);
  Eigen::MatrixXd Y(4, 1);
  Y << 1, -1, 1, -1;  // orthogonal to the constant column
  const IVDataset ds = make_dataset(Y, Z);
  const ProjectionSummary s = summarize(decompose(ds), ds);
  CHECK(std::abs(s.YPY(0, 0)) <= 1e-12);
}

TEST_CASE("wide random shape matches the dense oracle to 1e-8 relative") {
  const Eigen::MatrixXd Z = oracles::random_matrix(200, 40, 31);
  const Eigen::MatrixXd Y = oracles::random_matrix(200, 2, 32);
  const IVDataset ds = make_dataset(Y, Z);
  const ProjectionSummary s = summarize(decompose(ds), ds);

  const Eigen::MatrixXd P = oracles::dense_projection(Z);
  const Eigen::MatrixXd YPY_oracle = Y.transpose() * P * Y;
  const Eigen::MatrixXd YMY_oracle = Y.transpose() * Y - YPY_oracle;
  CHECK((s.YPY - YPY_oracle).norm() <= 1e-8 * YPY_oracle.norm());
  CHECK((s.YMY - YMY_oracle).norm() <= 1e-8 * YMY_oracle.norm());
  for (int i = 0; i < 200; ++i) {
    CHECK(s.leverages(i) == doctest::Approx(P(i, i)).epsilon(1e-8));
  }
}

TEST_CASE("summary invariants hold on random designs") {
  for (unsigned seed = 1; seed <= 5; ++seed) {
    const Eigen::MatrixXd Z = oracles::random_matrix(120, 30, seed);
    const Eigen::MatrixXd Y = oracles::random_matrix(120, 2, seed + 100);
    const IVDataset ds = make_dataset(Y, Z);
    const ProjectionSummary s = summarize(decompose(ds), ds);

    CHECK(std::abs(s.leverages.sum() - 30.0) <= 1e-8 * 30.0);
    CHECK(s.leverages.minCoeff() >= 0.0);
    CHECK(s.leverages.maxCoeff() <= 1.0 + 1e-12);
    CHECK(s.alpha_hat * s.alpha_hat <= s.omega_hat + 1e-12);
    CHECK(s.omega_hat <= s.alpha_hat + 1e-12);

    const Eigen::MatrixXd sum = s.YPY + s.YMY;
    const Eigen::MatrixXd YtY = Y.transpose() * Y;
    CHECK((sum - YtY).norm() <= 1e-8 * YtY.norm());

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> ep(s.YPY);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> em(s.YMY);
    CHECK(ep.eigenvalues().minCoeff() >= -1e-8 * YtY.norm());
    CHECK(em.eigenvalues().minCoeff() >= -1e-8 * YtY.norm());
  }
}

TEST_CASE("summary is invariant to instrument reparameterization") {
  const Eigen::MatrixXd Z = oracles::random_matrix(80, 12, 51);
  const Eigen::MatrixXd Y = oracles::random_matrix(80, 1, 52);
  Eigen::MatrixXd A = oracles::random_matrix(12, 12, 53);
  A += 12.0 * Eigen::MatrixXd::Identity(12, 12);  // keep it invertible

  const IVDataset ds1 = make_dataset(Y, Z);
  const IVDataset ds2 = make_dataset(Y, Z * A);
  const ProjectionSummary s1 = summarize(decompose(ds1), ds1);
  const ProjectionSummary s2 = summarize(decompose(ds2), ds2);

  CHECK(s1.YPY(0, 0) == doctest::Approx(s2.YPY(0, 0)).epsilon(1e-8));
  CHECK(s1.YMY(0, 0) == doctest::Approx(s2.YMY(0, 0)).epsilon(1e-8));
  CHECK(s1.omega_hat == doctest::Approx(s2.omega_hat).epsilon(1e-8));
  for (int i = 0; i < 80; ++i) {
    CHECK(s1.leverages(i) == doctest::Approx(s2.leverages(i)).epsilon(1e-8));
  }
}

TEST_CASE("scaling the endogenous block scales the forms quadratically") {
  const Eigen::MatrixXd Z = oracles::random_matrix(60, 8, 61);
  const Eigen::MatrixXd Y = oracles::random_matrix(60, 1, 62);
  const double c = -2.5;

  const IVDataset ds1 = make_dataset(Y, Z);
  const IVDataset ds2 = make_dataset(c * Y, Z);
  const ProjectionSummary s1 = summarize(decompose(ds1), ds1);
  const ProjectionSummary s2 = summarize(decompose(ds2), ds2);

  CHECK(s2.YPY(0, 0) == doctest::Approx(c * c * s1.YPY(0, 0)).epsilon(1e-14));
  CHECK(s2.YMY(0, 0) == doctest::Approx(c * c * s1.YMY(0, 0)).epsilon(1e-14));
}

TEST_CASE("the implicit projection is idempotent") {
  const Eigen::MatrixXd Z = oracles::random_matrix(90, 15, 71);
  const Eigen::MatrixXd Y = oracles::random_matrix(90, 1, 72);
  const ProjectionBasis basis = decompose(make_dataset(Y, Z));

  for (unsigned seed = 0; seed < 5; ++seed) {
    const Eigen::VectorXd x = oracles::random_matrix(90, 1, 80 + seed);
    const Eigen::VectorXd once = basis.Q * (basis.Q.transpose() * x);
    const Eigen::VectorXd twice = basis.Q * (basis.Q.transpose() * once);
    CHECK((twice - once).norm() <= 1e-10);
  }
}

TEST_CASE("basis invariants: orthonormal columns spanning col(Z)") {
  const Eigen::MatrixXd Z = oracles::random_matrix(100, 20, 91);
  const Eigen::MatrixXd Y = oracles::random_matrix(100, 1, 92);
  const ProjectionBasis basis = decompose(make_dataset(Y, Z));

  const Eigen::MatrixXd gram = basis.Q.transpose() * basis.Q;
  CHECK((gram - Eigen::MatrixXd::Identity(20, 20)).cwiseAbs().maxCoeff() <= 1e-10);
  const Eigen::MatrixXd resid = Z - basis.Q * (basis.Q.transpose() * Z);
  CHECK(resid.norm() <= 1e-8 * Z.norm());
}
