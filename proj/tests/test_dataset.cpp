#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>
#include <string>

#include "manyiv/dataset.hpp"
#include "manyiv/errors.hpp"
#include "manyiv/montecarlo.hpp"
#include "manyiv/projection.hpp"

using namespace manyiv;

namespace {

std::string temp_path(const std::string& name) {
  return std::string("/tmp/manyiv_test_") + name;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path);
  out << text;
}

}  // namespace

TEST_CASE("hand-written four-row file round trips") {
  const std::string path = temp_path("tiny.csv");
  write_text(path,
             "y,Y1,Z1\n"
             "1.5,1,0.3\n"
             "2,2,-0.4\n"
             "0.25,3,1.1\n"
             "-1,4,0.9\n");
  const IVDataset ds = load_csv(path, 1);
  CHECK(ds.n() == 4);
  CHECK(ds.K() == 1);
  CHECK(ds.p() == 1);
  CHECK(ds.y()(0) == 1.5);
  CHECK(ds.Y()(3, 0) == 4.0);
  CHECK(ds.Z()(2, 0) == 1.1);
  std::remove(path.c_str());
}

TEST_CASE("duplicate instrument direction raises RankError with the rank") {
  const std::string path = temp_path("collinear.csv");
  write_text(path,
             "y,Y1,Z1,Z2\n"
             "1,1,0.5,1.0\n"
             "2,2,-0.3,-0.6\n"
             "3,3,0.8,1.6\n"
             "4,4,0.1,0.2\n");
  try {
    load_csv(path, 1);
    FAIL("expected RankError");
  } catch (const RankError& e) {
    CHECK(e.numerical_rank() == 1);
  }
  std::remove(path.c_str());
}

TEST_CASE("parse errors carry the offending location") {
  const std::string path = temp_path("badcell.csv");
  write_text(path,
             "y,Y1,Z1\n"
             "1,2,0.5\n"
             "1,zap,0.5\n"
             "3,4,0.5\n");
  CHECK_THROWS_WITH_AS(load_csv(path, 1), doctest::Contains("line 3"), ParseError);
  std::remove(path.c_str());

  const std::string ragged = temp_path("ragged.csv");
  write_text(ragged,
             "y,Y1,Z1\n"
             "1,2,0.5\n"
             "1,2\n");
  CHECK_THROWS_AS(load_csv(ragged, 1), ParseError);
  std::remove(ragged.c_str());

  const std::string header = temp_path("badheader.csv");
  write_text(header, "y,X1,Z1\n1,2,3\n");
  CHECK_THROWS_AS(load_csv(header, 1), ParseError);
  std::remove(header.c_str());
}

TEST_CASE("p mismatch against the header is rejected") {
  const std::string path = temp_path("pmismatch.csv");
  write_text(path,
             "y,Y1,Y2,Z1\n"
             "1,2,3,0.5\n"
             "2,1,0,-0.1\n"
             "0,1,2,0.7\n"
             "1,0,1,0.2\n");
  CHECK_THROWS_AS(load_csv(path, 1), DimensionError);
  CHECK_NOTHROW(load_csv(path, 2));
  std::remove(path.c_str());
}

TEST_CASE("too few rows for the instrument count") {
  const std::string path = temp_path("short.csv");
  write_text(path,
             "y,Y1,Z1,Z2\n"
             "1,2,0.5,0.25\n"
             "2,1,-0.1,0.6\n");
  CHECK_THROWS_AS(load_csv(path, 1), DimensionError);
  std::remove(path.c_str());
}

TEST_CASE("non-finite cells are rejected") {
  const std::string path = temp_path("nonfinite.csv");
  write_text(path,
             "y,Y1,Z1\n"
             "1,2,0.5\n"
             "inf,1,0.2\n"
             "3,4,-0.5\n"
             "2,2,0.8\n");
  CHECK_THROWS_AS(load_csv(path, 1), ParseError);
  std::remove(path.c_str());
}

TEST_CASE("validate reports exact ratios and the many-instrument flag") {
  DGPSpec spec;
  spec.n = 1000;
  spec.K = 300;
  const DatasetMeta meta_many = validate(generate(spec, 1));
  CHECK(meta_many.alpha_hat == 0.3);
  CHECK(meta_many.many_iv_flag);

  spec.K = 5;
  const DatasetMeta meta_few = validate(generate(spec, 2));
  CHECK(meta_few.alpha_hat == 0.005);
  CHECK_FALSE(meta_few.many_iv_flag);

  spec.n = 330;
  spec.K = 180;
  const DatasetMeta meta_ak = validate(generate(spec, 3));
  CHECK(meta_ak.alpha_hat == doctest::Approx(0.5455).epsilon(1e-3));
  CHECK(meta_ak.many_iv_flag);
}

TEST_CASE("write then load reproduces the quadratic forms bit for bit") {
  DGPSpec spec;
  spec.n = 1000;
  spec.K = 300;
  spec.mu0_sq = 50.0;
  spec.rho = 0.4;
  const IVDataset mem = generate(spec, 77);

  const std::string path = temp_path("roundtrip.csv");
  write_csv(mem, path);
  const IVDataset disk = load_csv(path, 1);
  std::remove(path.c_str());

  REQUIRE(disk.n() == mem.n());
  CHECK(disk.y() == mem.y());
  CHECK(disk.Y() == mem.Y());
  CHECK(disk.Z() == mem.Z());

  const ProjectionSummary s_mem = summarize(decompose(mem), mem);
  const ProjectionSummary s_disk = summarize(decompose(disk), disk);
  CHECK(s_mem.YPY(0, 0) == s_disk.YPY(0, 0));
  CHECK(s_mem.YMY(0, 0) == s_disk.YMY(0, 0));
  CHECK(s_mem.yPy == s_disk.yPy);
  CHECK(s_mem.omega_hat == s_disk.omega_hat);
}

TEST_CASE("in-memory construction checks dimensions and finiteness") {
  Eigen::VectorXd y = Eigen::VectorXd::Ones(4);
  Eigen::MatrixXd Y = Eigen::MatrixXd::Ones(4, 1);
  Eigen::MatrixXd Z(4, 1);
  Z << 0.3, -0.4, 1.1, 0.9;
  CHECK_NOTHROW(IVDataset(y, Y, Z));

  Eigen::MatrixXd Zbad = Z;
  Zbad(2, 0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(IVDataset(y, Y, Zbad), DomainError);

  Eigen::VectorXd yshort = Eigen::VectorXd::Ones(3);
  CHECK_THROWS_AS(IVDataset(yshort, Y, Z), DimensionError);
}
