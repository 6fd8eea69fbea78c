#include "manyiv/diagnostics.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include "manyiv/distributions.hpp"
#include "manyiv/errors.hpp"

namespace manyiv {

namespace {

void check_variance_inputs(double alpha, double omega, double kurt_ratio) {
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw DomainError("variance inputs: need 0 < alpha < 1");
  }
  const double slack = 1e-12;
  if (omega < alpha * alpha - slack || omega > alpha + slack) {
    std::ostringstream msg;
    msg << "variance inputs: need alpha^2 <= omega <= alpha, got alpha = " << alpha
        << ", omega = " << omega;
    throw DomainError(msg.str());
  }
  if (kurt_ratio < 1.0) {
    throw DomainError("variance inputs: kurtosis ratio cannot be below 1");
  }
}

}  // namespace

namespace forms {

double f_statistic(double YPY, double YMY, Eigen::Index K, Eigen::Index n) {
  return (YPY / static_cast<double>(K)) / (YMY / static_cast<double>(n - K));
}

B2SLSResult b2sls_wald_forms(const ScalarForms& f, Eigen::Index K, Eigen::Index n,
                             double beta0, ResidualDdof ddof) {
  const double nd = static_cast<double>(n);
  const double Kd = static_cast<double>(K);
  const double alpha = Kd / nd;

  const double YY = f.YPY + f.YMY;
  const double Yy = f.YPy + f.YMy;
  const double yy = f.yPy + f.yMy;

  const double YPbY = f.YPY - alpha * YY;
  const double YPby = f.YPy - alpha * Yy;

  const double cancel_scale = std::abs(f.YPY) + alpha * std::abs(YY);
  if (std::abs(YPbY) <= nd * std::numeric_limits<double>::epsilon() * cancel_scale) {
    throw DegenerateFitError("b2sls_wald: Y' P_b Y is numerically zero");
  }

  const double beta = YPby / YPbY;

  const double uu = yy - 2.0 * beta * Yy + beta * beta * YY;
  const double uMu = f.yMy - 2.0 * beta * f.YMy + beta * beta * f.YMY;
  const double YMu = f.YMy - beta * f.YMY;

  const double ddof_n = ddof == ResidualDdof::N ? nd : nd - 1.0;
  const double sigma_uu = std::max(0.0, uu) / ddof_n;

  const double V = (nd - Kd) / YPbY * sigma_uu +
                   Kd / (nd - Kd) * (uMu * f.YMY + YMu * YMu) / (YPbY * YPbY);

  const double dev = beta - beta0;
  double W;
  if (dev == 0.0) {
    W = 0.0;
  } else if (V <= 0.0) {
    W = std::numeric_limits<double>::infinity();
  } else {
    W = nd * dev * dev / V;
  }

  B2SLSResult out;
  out.beta_hat = Eigen::VectorXd::Constant(1, beta);
  out.V_hat = V;
  out.W = W;
  out.sigma_uu_hat = sigma_uu;
  return out;
}

}  // namespace forms

double first_stage_F(const ProjectionSummary& s) {
  if (s.p != 1) throw DomainError("first_stage_F: requires p = 1");
  const double YPY = s.YPY(0, 0);
  const double YMY = s.YMY(0, 0);
  const double YY = YPY + YMY;
  if (YMY <= static_cast<double>(s.n) * std::numeric_limits<double>::epsilon() * YY) {
    throw DegenerateFitError(
        "first_stage_F: Y' M_Z Y is numerically zero (Y lies in col(Z))");
  }
  return forms::f_statistic(YPY, YMY, s.K, s.n);
}

SYTestResult classical_sy_test(double F, Eigen::Index K, Eigen::Index n,
                               double mu0_sq, double tau) {
  if (F < 0.0) throw DomainError("classical_sy_test: need F >= 0");
  if (K < 1 || n <= K) throw DomainError("classical_sy_test: need 0 < K < n");
  if (mu0_sq < 0.0) throw DomainError("classical_sy_test: need mu0_sq >= 0");
  if (!(tau > 0.0 && tau < 1.0)) {
    throw DomainError("classical_sy_test: need 0 < tau < 1");
  }

  SYTestResult out;
  out.F = F;
  out.critical_value =
      noncentral_chisq_quantile(static_cast<double>(K), mu0_sq, tau) /
      static_cast<double>(K);
  out.reject_weak = F > out.critical_value;

  const double alpha = static_cast<double>(K) / static_cast<double>(n);
  if (alpha >= 0.05) {
    const double size = normal_cdf(std::sqrt(1.0 - alpha) * normal_quantile(tau));
    char buf[196];
    std::snprintf(buf, sizeof(buf),
                  "many instruments: K/n = %.4f >= 0.05; the chi-squared critical "
                  "value over-rejects, predicted asymptotic size %.1f%% at "
                  "nominal %.1f%% (balanced design, mesokurtic errors)",
                  alpha, 100.0 * size, 100.0 * tau);
    out.warnings.emplace_back(buf);
  }
  return out;
}

CorrectedFResult corrected_F_test(double F, Eigen::Index K, Eigen::Index n,
                                  double C, double tau) {
  if (K < 1 || n <= K) throw DomainError("corrected_F_test: need 0 < K < n");
  if (C < 0.0) throw DomainError("corrected_F_test: need C >= 0");
  if (!(tau > 0.0 && tau < 1.0)) {
    throw DomainError("corrected_F_test: need 0 < tau < 1");
  }
  const double Kd = static_cast<double>(K);
  const double nd = static_cast<double>(n);
  CorrectedFResult out;
  out.Fc = std::sqrt(Kd * (nd - Kd) / (2.0 * nd)) * (F - 1.0 - C / std::sqrt(Kd));
  out.critical_value = normal_quantile(1.0 - tau);
  out.strong = out.Fc > out.critical_value;
  return out;
}

FlResult f_l_test(double F, const ProjectionSummary& s, double C, double tau) {
  if (C < 0.0) throw DomainError("f_l_test: need C >= 0");
  if (!(tau > 0.0 && tau < 1.0)) throw DomainError("f_l_test: need 0 < tau < 1");

  const double sL2 = sigma_L2(s.alpha_hat, s.omega_hat);
  if (sL2 <= 0.0) {
    std::ostringstream msg;
    msg << "f_l_test: sigma_L^2 = " << sL2
        << " <= 0 under extreme leverage imbalance (alpha_hat = " << s.alpha_hat
        << ", omega_hat = " << s.omega_hat << ")";
    throw DomainError(msg.str());
  }

  FlResult out;
  out.sigma_L2_hat = sL2;
  const double Kd = static_cast<double>(s.K);
  out.Fl = std::sqrt(static_cast<double>(s.n)) *
           (F - 1.0 - C / std::sqrt(Kd)) / std::sqrt(sL2);
  out.critical_value = normal_quantile(1.0 - tau);
  out.strong = out.Fl > out.critical_value;
  return out;
}

double sigma_F2(double alpha, double omega, double kurt_ratio) {
  check_variance_inputs(alpha, omega, kurt_ratio);
  const double a2 = alpha * alpha;
  const double one_m = 1.0 - alpha;
  return ((omega - a2) * kurt_ratio + (2.0 * alpha - 3.0 * omega + a2)) /
         (a2 * one_m * one_m);
}

double sigma_L2(double alpha, double omega) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("sigma_L2: need 0 < alpha < 1");
  const double a2 = alpha * alpha;
  const double one_m = 1.0 - alpha;
  return (2.0 * alpha - 3.0 * omega + a2) / (a2 * one_m * one_m);
}

double exact_size_condition(double alpha, double omega, double kurt_ratio) {
  check_variance_inputs(alpha, omega, kurt_ratio);
  const double a2 = alpha * alpha;
  return (omega - a2) * kurt_ratio + (5.0 * a2 - 3.0 * omega - 2.0 * a2 * alpha);
}

double theoretical_classical_size(double alpha, double omega, double kurt_ratio,
                                  double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw DomainError("theoretical_classical_size: need 0 < tau < 1");
  }
  const double sF2 = sigma_F2(alpha, omega, kurt_ratio);
  if (sF2 <= 0.0) throw DomainError("theoretical_classical_size: sigma_F^2 <= 0");
  return normal_cdf(std::sqrt(2.0 / (alpha * sF2)) * normal_quantile(tau));
}

double fc_asymptotic_size(double alpha, double omega, double kurt_ratio, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw DomainError("fc_asymptotic_size: need 0 < tau < 1");
  }
  const double sF2 = sigma_F2(alpha, omega, kurt_ratio);
  if (sF2 <= 0.0) throw DomainError("fc_asymptotic_size: sigma_F^2 <= 0");
  const double sFc2 = 2.0 / (alpha * (1.0 - alpha));
  return normal_cdf(std::sqrt(sFc2 / sF2) * normal_quantile(tau));
}

double fl_asymptotic_size(double alpha, double omega, double kurt_ratio, double tau) {
  if (!(tau > 0.0 && tau < 1.0)) {
    throw DomainError("fl_asymptotic_size: need 0 < tau < 1");
  }
  const double sF2 = sigma_F2(alpha, omega, kurt_ratio);
  const double sL2 = sigma_L2(alpha, omega);
  if (sF2 <= 0.0 || sL2 <= 0.0) {
    throw DomainError("fl_asymptotic_size: nonpositive variance");
  }
  return normal_cdf(std::sqrt(sL2 / sF2) * normal_quantile(tau));
}

B2SLSResult b2sls_wald(const IVDataset& ds, const ProjectionSummary& s,
                       double beta0, ResidualDdof ddof) {
  if (s.p != 1 || ds.p() != 1) throw DomainError("b2sls_wald: requires p = 1");
  forms::ScalarForms f;
  f.YPY = s.YPY(0, 0);
  f.YMY = s.YMY(0, 0);
  f.YPy = s.YPy(0);
  f.YMy = s.YMy(0);
  f.yPy = s.yPy;
  f.yMy = s.yMy;
  return forms::b2sls_wald_forms(f, s.K, s.n, beta0, ddof);
}

double cd_trace(const ProjectionSummary& s) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(s.YMY);
  const double lmin = eig.eigenvalues().minCoeff();
  const double lmax = eig.eigenvalues().maxCoeff();
  if (lmin <= 0.0 || lmax / lmin > 1e12) {
    std::ostringstream msg;
    msg << "cd_trace: Y' M_Z Y is ill-conditioned (eigenvalue range [" << lmin
        << ", " << lmax << "])";
    throw DegenerateFitError(msg.str());
  }
  const Eigen::MatrixXd solved = s.YMY.llt().solve(s.YPY);
  return static_cast<double>(s.n - s.K) / static_cast<double>(s.K) * solved.trace();
}

CDcResult cd_c_test(double trace, Eigen::Index K, Eigen::Index n, double C,
                    Eigen::Index p, double tau) {
  if (p == 1) {
    throw UnsupportedError(
        "cd_c_test: for p = 1 the trace equals the first-stage F; use "
        "corrected_F_test");
  }
  if (p != 2) {
    throw UnsupportedError(
        "cd_c_test: only p = 2 has an accessible limiting variance; for p >= 3 "
        "it depends on unobservable fourth-order error moments");
  }
  if (K < 1 || n <= K) throw DomainError("cd_c_test: need 0 < K < n");
  if (C < 0.0) throw DomainError("cd_c_test: need C >= 0");
  if (!(tau > 0.0 && tau < 1.0)) throw DomainError("cd_c_test: need 0 < tau < 1");

  const double Kd = static_cast<double>(K);
  const double nd = static_cast<double>(n);
  CDcResult out;
  out.CDc = std::sqrt(Kd * (nd - Kd) / (4.0 * nd)) *
            (trace - 2.0 - C / std::sqrt(Kd));
  out.critical_value = normal_quantile(1.0 - tau);
  out.strong = out.CDc > out.critical_value;
  return out;
}

BiasLimits relative_bias_limit(const BiasInputs& in) {
  const Eigen::Index p = in.Theta.rows();
  if (in.Theta.cols() != p || in.Sigma_VV.rows() != p || in.Sigma_VV.cols() != p ||
      in.Sigma_Vu.size() != p) {
    throw DimensionError("relative_bias_limit: inconsistent dimensions");
  }
  if (!(in.alpha > 0.0 && in.alpha <= 1.0)) {
    throw DomainError("relative_bias_limit: need 0 < alpha <= 1");
  }

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> theta_eig(in.Theta);
  if (theta_eig.eigenvalues().minCoeff() < -1e-10 * (1.0 + std::abs(theta_eig.eigenvalues().maxCoeff()))) {
    throw DomainError("relative_bias_limit: Theta must be positive semidefinite");
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> vv_eig(in.Sigma_VV);
  if (vv_eig.eigenvalues().minCoeff() <= 0.0) {
    throw DomainError("relative_bias_limit: Sigma_VV must be positive definite");
  }
  if (in.Sigma_Vu.isZero(0.0)) {
    throw SingularityError(
        "relative_bias_limit: Sigma_Vu = 0 makes the relative bias a 0/0 "
        "expression; B^2 is undefined without endogeneity");
  }

  const Eigen::MatrixXd theta1 = in.Theta + in.alpha * in.Sigma_VV;
  const Eigen::MatrixXd theta2 = in.Theta + in.Sigma_VV;

  const Eigen::LDLT<Eigen::MatrixXd> theta1_f(theta1);
  const Eigen::LDLT<Eigen::MatrixXd> theta2_f(theta2);

  const Eigen::VectorXd x = theta1_f.solve(in.Sigma_Vu);
  const double numer = in.alpha * in.alpha * x.dot(theta2 * x);
  const double denom = in.Sigma_Vu.dot(theta2_f.solve(in.Sigma_Vu));

  BiasLimits out;
  out.B2 = numer / denom;

  // Worst case over the simultaneity direction: largest eigenvalue of
  // alpha^2 T2^{1/2} T1^{-1} T2 T1^{-1} T2^{1/2}.
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> t2_eig(theta2);
  const Eigen::MatrixXd sqrt_t2 = t2_eig.operatorSqrt();
  const Eigen::MatrixXd G = theta1_f.solve(sqrt_t2);
  Eigen::MatrixXd M = in.alpha * in.alpha * G.transpose() * theta2 * G;
  M = 0.5 * (M + M.transpose()).eval();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> m_eig(M);
  out.Bmax2 = m_eig.eigenvalues().maxCoeff();
  return out;
}

}  // namespace manyiv
