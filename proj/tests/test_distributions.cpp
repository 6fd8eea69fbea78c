#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "manyiv/distributions.hpp"
#include "manyiv/errors.hpp"
#include "oracles.hpp"

using namespace manyiv;

TEST_CASE("normal cdf basics") {
  CHECK(normal_cdf(0.0) == doctest::Approx(0.5).epsilon(1e-15));
  for (const double x : {0.1, 0.7, 1.3, 2.9, 4.2, 7.0}) {
    CHECK(normal_cdf(-x) + normal_cdf(x) == doctest::Approx(1.0).epsilon(1e-14));
  }
  // quadrature oracle
  for (const double x : {-2.5, -1.0, -0.3, 0.4, 1.7, 3.1}) {
    CHECK(normal_cdf(x) == doctest::Approx(oracles::normal_cdf(x)).epsilon(1e-11));
  }
}

TEST_CASE("normal quantile inverts the cdf to 1e-12") {
  const double q95 = normal_quantile(0.95);
  CHECK(q95 == doctest::Approx(1.6449).epsilon(1e-4));
  // independent oracle: bisection against the quadrature CDF
  const double oracle = oracles::bisect(
      [](double x) { return oracles::normal_cdf(x) - 0.95; }, 0.0, 3.0);
  CHECK(q95 == doctest::Approx(oracle).epsilon(1e-9));

  for (double q = 0.0005; q < 1.0; q += 0.0173) {
    CHECK(std::abs(normal_cdf(normal_quantile(q)) - q) <= 1e-12);
  }
  CHECK_THROWS_AS(normal_quantile(0.0), DomainError);
  CHECK_THROWS_AS(normal_quantile(1.0), DomainError);
  CHECK_THROWS_AS(normal_quantile(-0.2), DomainError);
}

TEST_CASE("noncentral chi-squared quantile anchors") {
  const double q1 = noncentral_chisq_quantile(1, 0.0, 0.05);
  CHECK(q1 == doctest::Approx(3.8415).epsilon(1e-4));
  const double z = normal_quantile(0.975);
  CHECK(q1 == doctest::Approx(z * z).epsilon(1e-10));

  const double q5 = noncentral_chisq_quantile(5, 0.0, 0.05);
  CHECK(std::abs(q5 - 11.0705) < 1e-3);

  // cross-check the K=5 central quantile against the quadrature-CDF oracle
  const double oracle5 = oracles::bisect(
      [](double x) { return oracles::chisq_cdf(x, 5.0) - 0.95; }, 0.0, 40.0);
  CHECK(q5 == doctest::Approx(oracle5).epsilon(1e-8));
}

TEST_CASE("central quantiles match the independent quadrature oracle") {
  for (const double k : {1.0, 2.0, 3.0, 10.0, 50.0, 200.0}) {
    for (const double tau : {0.05, 0.5}) {
      const double q = noncentral_chisq_quantile(k, 0.0, tau);
      const double oracle = oracles::bisect(
          [&](double x) { return oracles::chisq_cdf(x, k) - (1.0 - tau); }, 0.0,
          std::max(4.0 * k, 30.0));
      CHECK(q == doctest::Approx(oracle).epsilon(1e-6));
    }
  }
}

TEST_CASE("large-K large-lambda quantile sits inside the MC bracket") {
  const auto bracket =
      oracles::mc_noncentral_chisq_quantile(300.0, 500.0, 0.05, 1000000, 911);
  const double q = noncentral_chisq_quantile(300.0, 500.0, 0.05);
  CHECK(q >= bracket.lo);
  CHECK(q <= bracket.hi);
}

TEST_CASE("cdf and quantile are mutual inverses over the parameter grid") {
  const double ks[] = {1, 2, 5, 20, 100};
  const double lambdas[] = {0.0, 1.0, 10.0, 100.0};
  const double taus[] = {0.01, 0.05, 0.2, 0.5, 0.9};
  for (const double k : ks) {
    for (const double lam : lambdas) {
      for (const double tau : taus) {
        const double q = noncentral_chisq_quantile(k, lam, tau);
        CHECK(std::abs(noncentral_chisq_cdf(q, k, lam) - (1.0 - tau)) <= 1e-6);
      }
    }
  }
}

TEST_CASE("noncentral cdf domain errors") {
  CHECK_THROWS_AS(noncentral_chisq_quantile(0.5, 0.0, 0.05), DomainError);
  CHECK_THROWS_AS(noncentral_chisq_quantile(5, -1.0, 0.05), DomainError);
  CHECK_THROWS_AS(noncentral_chisq_quantile(5, 0.0, 1.5), DomainError);
}

TEST_CASE("wald mixture degenerates to chi-squared at infinite strength") {
  const auto est = wald_limit_rejection({1000.0, 0.6}, 0.05, 200000, 2024);
  CHECK(std::abs(est.rate - 0.05) <= 3.0 * est.mc_se + 0.001);
}

TEST_CASE("wald mixture regression constants") {
  // At m = 0, rho = 1 the mixture denominator vanishes almost surely, so the
  // rejection rate is exactly one.
  const auto degenerate = wald_limit_rejection({0.0, 1.0}, 0.05, 1000000, 20240501);
  CHECK(degenerate.rate == 1.0);

  // Frozen Monte Carlo value at the reference boundary point (seed 20240501).
  const auto boundary = wald_limit_rejection({2.5, 1.0}, 0.05, 1000000, 20240501);
  CHECK(boundary.rate == doctest::Approx(0.0981375).epsilon(1e-6));
}

TEST_CASE("worst case over rho sits at the boundary") {
  for (const double m : {0.0, 2.0}) {
    const auto at_one = wald_limit_rejection({m, 1.0}, 0.05, 200000, 7);
    for (const double rho : {0.0, 0.5, -0.5, 0.9, -0.9}) {
      const auto est = wald_limit_rejection({m, rho}, 0.05, 200000, 7);
      CHECK(at_one.rate >= est.rate - 3.0 * (est.mc_se + at_one.mc_se));
    }
  }
}

TEST_CASE("rejection is even in rho by construction") {
  const auto plus = wald_limit_rejection({1.5, 0.75}, 0.05, 50000, 31);
  const auto minus = wald_limit_rejection({1.5, -0.75}, 0.05, 50000, 31);
  CHECK(plus.rate == minus.rate);
}

TEST_CASE("rejection is nonincreasing in the strength m at rho = 1") {
  double previous = 2.0;
  double prev_se = 0.0;
  for (const double m : {0.0, 1.0, 2.0, 4.0, 8.0}) {
    const auto est = wald_limit_rejection({m, 1.0}, 0.05, 200000, 99);
    CHECK(est.rate <= previous + 3.0 * (est.mc_se + prev_se));
    previous = est.rate;
    prev_se = est.mc_se;
  }
}

TEST_CASE("c_from_c0 anchors and limits") {
  CHECK(c_from_c0(100, 1000, 2.5) == doctest::Approx(3.727).epsilon(2e-4));
  CHECK(c_from_c0(180, 330, 2.5) == doctest::Approx(5.244).epsilon(2e-4));
  CHECK(c_from_c0(180, 660, 2.5) == doctest::Approx(4.146).epsilon(2e-4));
  // alpha -> 0 limit
  CHECK(c_from_c0(10, 2000000000LL, 2.5) ==
        doctest::Approx(std::sqrt(2.0) * 2.5).epsilon(1e-6));
  CHECK_THROWS_AS(c_from_c0(1000, 1000, 2.5), DomainError);
  CHECK_THROWS_AS(c_from_c0(1001, 1000, 2.5), DomainError);
  CHECK_THROWS_AS(c_from_c0(10, 100, -1.0), DomainError);
}

TEST_CASE("calibration tracks the closed-form cutoff") {
  const auto res = calibrate_C(0.10, 0.05, 0.1, 50000, 5150);
  CHECK(std::abs(res.C - c_from_c0(100, 1000, 2.5)) <= 0.3);
  CHECK(res.worst_rho == 1.0);
  CHECK(res.rejections.size() == res.rho_grid.size());
  // worst-case rejection at the solution respects the tolerance up to noise
  double worst = 0.0;
  for (const double r : res.rejections) worst = std::max(worst, r);
  CHECK(worst <= 0.10 + 4.0 * res.mc_se + 0.004);
}

TEST_CASE("looser tolerances shrink the cutoff toward the lower bound") {
  const auto tight = calibrate_C(0.10, 0.05, 0.3, 20000, 88);
  const auto loose = calibrate_C(0.30, 0.05, 0.3, 20000, 88);
  const auto vacuous = calibrate_C(0.995, 0.05, 0.3, 20000, 88);
  CHECK(loose.C < tight.C);
  CHECK(vacuous.C < loose.C);
  CHECK(vacuous.C < 0.5);
  CHECK(vacuous.C >= 0.0);
}

TEST_CASE("calibrate_C validates inputs") {
  CHECK_THROWS_AS(calibrate_C(0.05, 0.10, 0.3, 20000, 1), DomainError);
  CHECK_THROWS_AS(calibrate_C(0.10, 0.05, 1.2, 20000, 1), DomainError);
  CHECK_THROWS_AS(calibrate_C(0.10, 0.05, 0.3, 100, 1), DomainError);
}

TEST_CASE("calibration result survives a JSON round trip") {
  CalibrationResult res;
  res.C = 3.85;
  res.T = 0.10;
  res.tau = 0.05;
  res.reps = 200000;
  res.rho_grid = {-1.0, 0.0, 1.0};
  res.rejections = {0.999, 0.04, 0.999};
  res.worst_rho = 1.0;
  res.mc_se = 0.00066;
  res.seed = 99;
  const auto back = CalibrationResult::from_json(res.to_json());
  CHECK(back.C == res.C);
  CHECK(back.T == res.T);
  CHECK(back.tau == res.tau);
  CHECK(back.reps == res.reps);
  CHECK(back.rho_grid == res.rho_grid);
  CHECK(back.rejections == res.rejections);
  CHECK(back.worst_rho == res.worst_rho);
  CHECK(back.seed == res.seed);
  CHECK_THROWS_AS(CalibrationResult::from_json("{"), ParseError);
  CHECK_THROWS_AS(CalibrationResult::from_json("{}"), ParseError);
}
