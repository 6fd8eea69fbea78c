// Test-side oracles, kept independent of the library's computational paths:
// dense projection matrices, quadrature-based CDFs, and simple Monte Carlo
// quantile brackets built on the standard <random> generators.
#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

namespace oracles {

/// Dense P_Z = Z (Z'Z)^{-1} Z' by brute force.
inline Eigen::MatrixXd dense_projection(const Eigen::MatrixXd& Z) {
  const Eigen::MatrixXd ZtZ = Z.transpose() * Z;
  return Z * ZtZ.ldlt().solve(Z.transpose());
}

/// Adaptive Simpson quadrature.
inline double simpson_step(const std::function<double(double)>& f, double a,
                           double b, double fa, double fb, double fm,
                           double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m);
  const double rm = 0.5 * (m + b);
  const double flm = f(lm);
  const double frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  if (depth <= 0 || std::abs(left + right - whole) <= 15.0 * tol) {
    return left + right + (left + right - whole) / 15.0;
  }
  return simpson_step(f, a, m, fa, fm, flm, left, 0.5 * tol, depth - 1) +
         simpson_step(f, m, b, fm, fb, frm, right, 0.5 * tol, depth - 1);
}

inline double integrate(const std::function<double(double)>& f, double a, double b,
                        double tol = 1e-13) {
  const double fa = f(a);
  const double fb = f(b);
  const double fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return simpson_step(f, a, b, fa, fb, fm, whole, tol, 60);
}

/// Standard normal CDF via quadrature of the density from 0.
inline double normal_cdf(double x) {
  const auto pdf = [](double t) {
    return std::exp(-0.5 * t * t) / 2.5066282746310005024;
  };
  if (x < 0.0) return 0.5 - integrate(pdf, x, 0.0);
  return 0.5 + integrate(pdf, 0.0, x);
}

/// Central chi-squared CDF via quadrature of the density.
inline double chisq_cdf(double x, double k) {
  if (x <= 0.0) return 0.0;
  const double lognorm = -0.5 * k * std::log(2.0) - std::lgamma(0.5 * k);
  const auto pdf = [&](double t) {
    if (t <= 0.0) return 0.0;
    return std::exp(lognorm + (0.5 * k - 1.0) * std::log(t) - 0.5 * t);
  };
  return integrate(pdf, std::min(x, 1e-9), x, 1e-12);
}

/// Root of f on [lo, hi] by bisection (f(lo) < 0 < f(hi) assumed monotone).
inline double bisect(const std::function<double(double)>& f, double lo, double hi,
                     int iters = 200) {
  for (int i = 0; i < iters; ++i) {
    const double mid = 0.5 * (lo + hi);
    if (f(mid) < 0.0) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return 0.5 * (lo + hi);
}

struct QuantileBracket {
  double lo = 0.0;
  double hi = 0.0;
  double point = 0.0;
};

/// Monte Carlo (1-tau)-quantile of the noncentral chi-squared distribution
/// with an order-statistic bracket at +-z_width standard errors.
inline QuantileBracket mc_noncentral_chisq_quantile(double k, double lambda,
                                                    double tau, std::int64_t draws,
                                                    unsigned seed,
                                                    double z_width = 3.0) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> xs(static_cast<std::size_t>(draws));
  const double shift = std::sqrt(lambda);
  if (k > 1.0) {
    std::gamma_distribution<double> gamma(0.5 * (k - 1.0), 2.0);
    for (auto& x : xs) {
      const double z = normal(gen) + shift;
      x = z * z + gamma(gen);
    }
  } else {
    for (auto& x : xs) {
      const double z = normal(gen) + shift;
      x = z * z;
    }
  }
  std::sort(xs.begin(), xs.end());
  const double target = (1.0 - tau) * static_cast<double>(draws);
  const double spread = z_width * std::sqrt(tau * (1.0 - tau) * static_cast<double>(draws));
  const auto clamp_idx = [&](double v) {
    return static_cast<std::size_t>(
        std::min<double>(std::max(0.0, v), static_cast<double>(draws - 1)));
  };
  QuantileBracket out;
  out.lo = xs[clamp_idx(target - spread)];
  out.hi = xs[clamp_idx(target + spread)];
  out.point = xs[clamp_idx(target)];
  return out;
}

/// Deterministic pseudo-random matrix for shape tests.
inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols,
                                     unsigned seed) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd M(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j) {
    for (Eigen::Index i = 0; i < rows; ++i) M(i, j) = normal(gen);
  }
  return M;
}

}  // namespace oracles
