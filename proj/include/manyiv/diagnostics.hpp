#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "manyiv/projection.hpp"

namespace manyiv {

/// First-stage test statistics for a single dataset.
struct FStatistics {
  double F = 0.0;
  double Fc = 0.0;
  double Fl = 0.0;
  double C = 0.0;             // cutoff used in Fc and Fl
  double sigma_L2_hat = 0.0;  // lower-bound variance estimate behind Fl
};

enum class ResidualDdof { N, NMinusOne };

struct B2SLSResult {
  Eigen::VectorXd beta_hat;
  double V_hat = 0.0;
  double W = 0.0;
  double sigma_uu_hat = 0.0;  // residual variance estimate used in V_hat
};

struct CDStatistics {
  double trace = 0.0;
  double CDc = 0.0;
  Eigen::Index p = 0;
};

/// Population inputs of the many-instrument relative-bias limit.
struct BiasInputs {
  Eigen::MatrixXd Theta;     // p x p PSD limit of Pi' Z'Z Pi / n
  Eigen::MatrixXd Sigma_VV;  // p x p PD
  Eigen::VectorXd Sigma_Vu;  // p
  double alpha = 0.0;
};

struct BiasLimits {
  double B2 = 0.0;
  double Bmax2 = 0.0;
};

/// F = (Y'P_Z Y / K) / (Y'M_Z Y / (n-K)); requires p = 1.
double first_stage_F(const ProjectionSummary& s);

struct SYTestResult {
  double F = 0.0;
  double critical_value = 0.0;
  bool reject_weak = false;  // true: declare the instruments not weak
  std::vector<std::string> warnings;
};

/// The two-step test of the fixed-K theory: compare F against the scaled
/// noncentral chi-squared quantile. Warns about its many-instrument size
/// distortion whenever K/n >= 0.05.
SYTestResult classical_sy_test(double F, Eigen::Index K, Eigen::Index n,
                               double mu0_sq, double tau);

struct CorrectedFResult {
  double Fc = 0.0;
  double critical_value = 0.0;  // standard normal (1-tau) quantile
  bool strong = false;
};

/// Fc = sqrt(K(n-K)/(2n)) * (F - 1 - C/sqrt(K)); strong iff Fc exceeds the
/// standard normal (1-tau) quantile.
CorrectedFResult corrected_F_test(double F, Eigen::Index K, Eigen::Index n,
                                  double C, double tau);

struct FlResult {
  double Fl = 0.0;
  double sigma_L2_hat = 0.0;
  double critical_value = 0.0;
  bool strong = false;
};

/// Lower-bound-variance variant Fl = sqrt(n) (F - 1 - C/sqrt(K)) / sigma_L,
/// with sigma_L^2 = (2a - 3w + a^2) / (a^2 (1-a)^2) estimated from leverages.
FlResult f_l_test(double F, const ProjectionSummary& s, double C, double tau);

/// Limiting variance of sqrt(n)(F - 1 - mu^2/K):
/// ((w - a^2) kurt + (2a - 3w + a^2)) / (a^2 (1-a)^2), kurt = E v^4 / s_vv^4.
double sigma_F2(double alpha, double omega, double kurt_ratio);

/// (2a - 3w + a^2) / (a^2 (1-a)^2); equals 2/(a(1-a)) under balance.
double sigma_L2(double alpha, double omega);

/// Signed residual (w - a^2) kurt + (5a^2 - 3w - 2a^3); zero iff the
/// classical F test is asymptotically size-correct.
double exact_size_condition(double alpha, double omega, double kurt_ratio);

/// Limiting size of the classical F test: Phi(sqrt(2/(a * sigma_F^2)) *
/// Phi^{-1}(tau)); reduces to Phi(sqrt(1-a) Phi^{-1}(tau)) when w = a^2 or
/// kurt = 3.
double theoretical_classical_size(double alpha, double omega, double kurt_ratio,
                                  double tau);

/// Limiting size of the Fc test under general (w, kurt):
/// Phi((sigma_Fc / sigma_F) Phi^{-1}(tau)) with sigma_Fc^2 = 2/(a(1-a)).
double fc_asymptotic_size(double alpha, double omega, double kurt_ratio, double tau);

/// Limiting size of the Fl test: Phi((sigma_L / sigma_F) Phi^{-1}(tau)).
double fl_asymptotic_size(double alpha, double omega, double kurt_ratio, double tau);

/// Bias-corrected 2SLS point estimate, variance and Wald statistic for
/// H0: beta = beta0 (p = 1), with P_b = P_Z - (K/n) I applied implicitly.
B2SLSResult b2sls_wald(const IVDataset& ds, const ProjectionSummary& s,
                       double beta0, ResidualDdof ddof = ResidualDdof::N);

/// ((n-K)/K) tr(YMY^{-1} YPY), via a linear solve.
double cd_trace(const ProjectionSummary& s);

struct CDcResult {
  double CDc = 0.0;
  double critical_value = 0.0;
  bool strong = false;
};

/// CDc = sqrt(K(n-K)/(4n)) * (trace - 2 - C/sqrt(K)); only p = 2 has a known
/// limiting variance.
CDcResult cd_c_test(double trace, Eigen::Index K, Eigen::Index n, double C,
                    Eigen::Index p, double tau);

/// Many-instrument limits of the squared 2SLS/OLS relative bias and its
/// worst case over the direction of simultaneity.
BiasLimits relative_bias_limit(const BiasInputs& in);

namespace forms {

/// p = 1 quadratic forms, enough to evaluate every scalar statistic without
/// touching the raw data again. Used by the Monte Carlo engine.
struct ScalarForms {
  double YPY = 0.0;
  double YMY = 0.0;
  double YPy = 0.0;
  double YMy = 0.0;
  double yPy = 0.0;
  double yMy = 0.0;
};

double f_statistic(double YPY, double YMY, Eigen::Index K, Eigen::Index n);

B2SLSResult b2sls_wald_forms(const ScalarForms& f, Eigen::Index K, Eigen::Index n,
                             double beta0, ResidualDdof ddof = ResidualDdof::N);

}  // namespace forms

}  // namespace manyiv
