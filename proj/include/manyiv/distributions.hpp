#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace manyiv {

double normal_pdf(double x);
double normal_cdf(double x);

/// Inverse of normal_cdf; throws DomainError unless 0 < q < 1.
double normal_quantile(double q);

/// Regularized lower incomplete gamma P(a, x).
double regularized_gamma_p(double a, double x);

/// Central chi-squared CDF with k degrees of freedom.
double chisq_cdf(double x, double k);

/// Noncentral chi-squared CDF, evaluated as a Poisson(lambda/2)-weighted
/// mixture of central chi-squared CDFs. Terms outside a 1e-14 Poisson tail
/// are dropped.
double noncentral_chisq_cdf(double x, double k, double lambda);

/// (1 - tau)-quantile of the noncentral chi-squared distribution, by
/// bracketed bisection seeded with the large-K normal approximation
/// q ~ (k+lambda)/(2k+4lambda) * (z_{1-tau} + sqrt(2k+4lambda))^2.
double noncentral_chisq_quantile(double k, double lambda, double tau);

/// Parameters of the limiting Wald mixture xi^2 / (1 - 2 rho xi/nu + xi^2/nu^2):
/// (xi, nu) are bivariate normal with unit variances, means (0, m) and
/// correlation rho.
struct MixtureParams {
  double m = 0.0;
  double rho = 0.0;
};

struct MixtureRejection {
  double rate = 0.0;
  double mc_se = 0.0;
};

/// Monte Carlo rejection rate of the limiting Wald statistic against the
/// central chi-squared(1) critical value at level tau. Deterministic given
/// seed, for any thread count. Draws are antithetic in xi, which makes the
/// estimate exactly symmetric in rho.
MixtureRejection wald_limit_rejection(const MixtureParams& params, double tau,
                                      std::int64_t reps, std::uint64_t seed,
                                      int threads = 0);

struct CalibrationResult {
  double C = 0.0;
  double T = 0.0;
  double tau = 0.0;
  std::int64_t reps = 0;
  std::vector<double> rho_grid;
  std::vector<double> rejections;  // worst-case curve evaluated at C
  double worst_rho = 0.0;
  double mc_se = 0.0;
  std::uint64_t seed = 0;

  std::string to_json() const;
  static CalibrationResult from_json(const std::string& text);
};

/// Smallest rescaled-strength cutoff C such that the worst-case (over rho)
/// rejection rate of the limiting Wald mixture stays at or below tolerance T.
/// Bisection on C over [0, 50]; Monte Carlo rejection curves are smoothed by
/// isotonic (nonincreasing in C) regression before each bracketing decision.
CalibrationResult calibrate_C(double T, double tau, double alpha,
                              std::int64_t reps = 200000, std::uint64_t seed = 0,
                              int threads = 0);

/// C = sqrt(2 / (1 - K/n)) * C0.
double c_from_c0(std::int64_t K, std::int64_t n, double C0);

}  // namespace manyiv
