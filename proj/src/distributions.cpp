#include "manyiv/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "manyiv/errors.hpp"
#include "manyiv/parallel.hpp"
#include "manyiv/rng.hpp"

namespace manyiv {

namespace {

constexpr double kSqrt2 = 1.4142135623730950488016887242097;
constexpr double kSqrt2Pi = 2.5066282746310005024157652848110;

}  // namespace

double normal_pdf(double x) {
  return std::exp(-0.5 * x * x) / kSqrt2Pi;
}

double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / kSqrt2);
}

double normal_quantile(double q) {
  if (!(q > 0.0 && q < 1.0)) {
    std::ostringstream msg;
    msg << "normal_quantile: q must lie in (0,1), got " << q;
    throw DomainError(msg.str());
  }

  // Acklam's rational approximation, then one Halley refinement step against
  // the erfc-based CDF.
  static const double a[6] = {-3.969683028665376e+01, 2.209460984245205e+02,
                              -2.759285104469687e+02, 1.383577518672690e+02,
                              -3.066479806614716e+01, 2.506628277459239e+00};
  static const double b[5] = {-5.447609879822406e+01, 1.615858368580409e+02,
                              -1.556989798598866e+02, 6.680131188771972e+01,
                              -1.328068155288572e+01};
  static const double c[6] = {-7.784894002430293e-03, -3.223964580411365e-01,
                              -2.400758277161838e+00, -2.549732539343734e+00,
                              4.374664141464968e+00,  2.938163982698783e+00};
  static const double d[4] = {7.784695709041462e-03, 3.224671290700398e-01,
                              2.445134137142996e+00, 3.754408661907416e+00};
  const double plow = 0.02425;

  double x;
  if (q < plow) {
    const double t = std::sqrt(-2.0 * std::log(q));
    x = (((((c[0] * t + c[1]) * t + c[2]) * t + c[3]) * t + c[4]) * t + c[5]) /
        ((((d[0] * t + d[1]) * t + d[2]) * t + d[3]) * t + 1.0);
  } else if (q <= 1.0 - plow) {
    const double t = q - 0.5;
    const double r = t * t;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * t /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double t = std::sqrt(-2.0 * std::log(1.0 - q));
    x = -(((((c[0] * t + c[1]) * t + c[2]) * t + c[3]) * t + c[4]) * t + c[5]) /
        ((((d[0] * t + d[1]) * t + d[2]) * t + d[3]) * t + 1.0);
  }

  const double err = normal_cdf(x) - q;
  const double u = err * kSqrt2Pi * std::exp(0.5 * x * x);
  x -= u / (1.0 + 0.5 * x * u);
  return x;
}

double regularized_gamma_p(double a, double x) {
  if (a <= 0.0 || x < 0.0) throw DomainError("regularized_gamma_p: need a > 0, x >= 0");
  if (x == 0.0) return 0.0;

  if (x < a + 1.0) {
    // Series representation.
    double ap = a;
    double del = 1.0 / a;
    double sum = del;
    for (int i = 0; i < 10000; ++i) {
      ap += 1.0;
      del *= x / ap;
      sum += del;
      if (std::abs(del) < std::abs(sum) * 1e-16) {
        return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
      }
    }
    throw ConvergenceError("regularized_gamma_p: series did not converge");
  }

  // Continued fraction for Q(a, x), modified Lentz.
  const double fpmin = std::numeric_limits<double>::min() / 1e-30;
  double bq = x + 1.0 - a;
  double cq = 1.0 / fpmin;
  double dq = 1.0 / bq;
  double h = dq;
  for (int i = 1; i <= 10000; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    bq += 2.0;
    dq = an * dq + bq;
    if (std::abs(dq) < fpmin) dq = fpmin;
    cq = bq + an / cq;
    if (std::abs(cq) < fpmin) cq = fpmin;
    dq = 1.0 / dq;
    const double del = dq * cq;
    h *= del;
    if (std::abs(del - 1.0) < 1e-16) {
      const double q = std::exp(-x + a * std::log(x) - std::lgamma(a)) * h;
      return 1.0 - q;
    }
  }
  throw ConvergenceError("regularized_gamma_p: continued fraction did not converge");
}

double chisq_cdf(double x, double k) {
  if (k <= 0.0) throw DomainError("chisq_cdf: need k > 0");
  if (x <= 0.0) return 0.0;
  return regularized_gamma_p(0.5 * k, 0.5 * x);
}

double noncentral_chisq_cdf(double x, double k, double lambda) {
  if (k < 1.0) throw DomainError("noncentral_chisq_cdf: need k >= 1");
  if (lambda < 0.0) throw DomainError("noncentral_chisq_cdf: need lambda >= 0");
  if (x <= 0.0) return 0.0;
  if (lambda == 0.0) return chisq_cdf(x, k);

  const double hl = 0.5 * lambda;
  const double hx = 0.5 * x;
  const double loghx = std::log(hx);
  const std::int64_t j0 = static_cast<std::int64_t>(std::floor(hl));

  // Center the Poisson sum at its mode and expand outward until the
  // remaining mixture weight is below 1e-14 (central CDF terms are <= 1).
  const double w0 =
      std::exp(-hl + static_cast<double>(j0) * std::log(hl) - std::lgamma(static_cast<double>(j0) + 1.0));
  const double g0 = regularized_gamma_p(0.5 * k + static_cast<double>(j0), hx);
  // t(a) = x^a e^{-x} / Gamma(a+1) links successive central CDFs:
  // P(a+1, x) = P(a, x) - t(a).
  double t_up = std::exp((0.5 * k + static_cast<double>(j0)) * loghx - hx -
                         std::lgamma(0.5 * k + static_cast<double>(j0) + 1.0));

  double sum = w0 * g0;
  double wsum = w0;

  double w = w0;
  double g = g0;
  double t = t_up;
  for (std::int64_t j = j0; wsum < 1.0 - 1e-14; ++j) {
    w *= hl / static_cast<double>(j + 1);
    g = std::max(0.0, g - t);
    t *= hx / (0.5 * k + static_cast<double>(j) + 1.0);
    sum += w * g;
    wsum += w;
    if (w < 1e-300 || j - j0 > 100000) break;
  }

  w = w0;
  g = g0;
  t = t_up;
  for (std::int64_t j = j0; j > 0 && wsum < 1.0 - 1e-14; --j) {
    w *= static_cast<double>(j) / hl;
    t *= (0.5 * k + static_cast<double>(j)) / hx;
    g = std::min(1.0, g + t);
    sum += w * g;
    wsum += w;
    if (w < 1e-300) break;
  }

  return std::min(1.0, std::max(0.0, sum));
}

double noncentral_chisq_quantile(double k, double lambda, double tau) {
  if (k < 1.0) throw DomainError("noncentral_chisq_quantile: need k >= 1");
  if (lambda < 0.0) throw DomainError("noncentral_chisq_quantile: need lambda >= 0");
  if (!(tau > 0.0 && tau < 1.0)) {
    throw DomainError("noncentral_chisq_quantile: need 0 < tau < 1");
  }

  const double target = 1.0 - tau;
  const double z = normal_quantile(target);
  const double s = std::sqrt(2.0 * k + 4.0 * lambda);
  const double seedpt = (k + lambda) / (2.0 * k + 4.0 * lambda) * (z + s) * (z + s);

  double lo = 0.0;
  double hi = std::max({seedpt, k + lambda, 1.0});
  int expansions = 0;
  while (noncentral_chisq_cdf(hi, k, lambda) < target) {
    hi *= 2.0;
    if (++expansions > 300) {
      std::ostringstream msg;
      msg << "noncentral_chisq_quantile: failed to bracket the " << target
          << " quantile; bracket [" << lo << ", " << hi << "]";
      throw ConvergenceError(msg.str());
    }
  }

  for (int iter = 0; iter < 400; ++iter) {
    const double mid = 0.5 * (lo + hi);
    if (noncentral_chisq_cdf(mid, k, lambda) < target) {
      lo = mid;
    } else {
      hi = mid;
    }
    if (hi - lo <= 1e-13 * (1.0 + hi)) break;
  }
  return 0.5 * (lo + hi);
}

namespace detail {

// One antithetic pair of mixture draws; returns 0, 1 or 2 rejections.
// W > q  <=>  xi^2 nu^2 > q * [(nu - rho xi)^2 + (1 - rho^2) xi^2],
// with a zero denominator read as W = +infinity.
inline int mixture_pair_rejections(double z1, double z2, double m, double rho,
                                   double qcrit) {
  const double root = std::sqrt(std::max(0.0, 1.0 - rho * rho));
  int count = 0;
  for (int sign = 0; sign < 2; ++sign) {
    const double xi = sign == 0 ? z1 : -z1;
    const double nu = m + rho * xi + root * z2;
    const double num = xi * xi * nu * nu;
    const double dev = nu - rho * xi;
    const double den = dev * dev + root * root * xi * xi;
    if (den <= 0.0 || num > qcrit * den) ++count;
  }
  return count;
}

struct RejectionCounts {
  std::int64_t pairs = 0;
  std::int64_t singles = 0;  // pairs with exactly one rejection
  std::int64_t doubles_ = 0;  // pairs with two rejections
};

MixtureRejection mixture_rejection(double m, double rho, double qcrit,
                                   std::int64_t reps, std::uint64_t seed,
                                   std::uint64_t stream, int threads) {
  const std::int64_t block = 8192;
  auto partials = blocked_map<RejectionCounts>(
      reps, block, threads, [&](std::int64_t, std::int64_t lo, std::int64_t hi) {
        RejectionCounts acc;
        CounterRng rng(seed, stream);
        for (std::int64_t i = lo; i < hi; ++i) {
          rng.jump_to_block(static_cast<std::uint64_t>(i));
          const double u1 = rng.uniform();
          const double u2 = rng.uniform();
          const double r = std::sqrt(-2.0 * std::log(u1));
          const double z1 = r * std::cos(6.283185307179586476925286766559 * u2);
          const double z2 = r * std::sin(6.283185307179586476925286766559 * u2);
          const int c = mixture_pair_rejections(z1, z2, m, rho, qcrit);
          ++acc.pairs;
          if (c == 1) ++acc.singles;
          if (c == 2) ++acc.doubles_;
        }
        return acc;
      });

  RejectionCounts total;
  for (const auto& p : partials) {
    total.pairs += p.pairs;
    total.singles += p.singles;
    total.doubles_ += p.doubles_;
  }

  const double n = static_cast<double>(total.pairs);
  const double rate = (0.5 * total.singles + total.doubles_) / n;
  const double m2 = (0.25 * total.singles + total.doubles_) / n;
  const double var = std::max(0.0, m2 - rate * rate);
  MixtureRejection out;
  out.rate = rate;
  out.mc_se = n > 1.0 ? std::sqrt(var / (n - 1.0)) : 0.0;
  return out;
}

}  // namespace detail

MixtureRejection wald_limit_rejection(const MixtureParams& params, double tau,
                                      std::int64_t reps, std::uint64_t seed,
                                      int threads) {
  if (params.m < 0.0) throw DomainError("wald_limit_rejection: need m >= 0");
  if (std::abs(params.rho) > 1.0) {
    throw DomainError("wald_limit_rejection: need |rho| <= 1");
  }
  if (reps < 10000) throw DomainError("wald_limit_rejection: need reps >= 10^4");
  const double qcrit = noncentral_chisq_quantile(1.0, 0.0, tau);
  return detail::mixture_rejection(params.m, params.rho, qcrit, reps, seed,
                                   /*stream=*/0, threads);
}

namespace {

// Nonincreasing isotonic fit (pool adjacent violators), unit weights.
std::vector<double> isotonic_nonincreasing(const std::vector<double>& y) {
  const std::size_t n = y.size();
  std::vector<double> level;
  std::vector<double> weight;
  level.reserve(n);
  weight.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    double lv = y[i];
    double w = 1.0;
    while (!level.empty() && level.back() < lv) {
      lv = (lv * w + level.back() * weight.back()) / (w + weight.back());
      w += weight.back();
      level.pop_back();
      weight.pop_back();
    }
    level.push_back(lv);
    weight.push_back(w);
  }
  std::vector<double> fit;
  fit.reserve(n);
  for (std::size_t b = 0; b < level.size(); ++b) {
    for (double c = 0; c < weight[b]; c += 1.0) fit.push_back(level[b]);
  }
  return fit;
}

// Worst-case rejection over the signed rho grid. The antithetic estimator is
// exactly even in rho, so each |rho| is evaluated once and mirrored.
const double kRhoAbsGrid[] = {0.0, 0.25, 0.5, 0.75, 0.9, 0.95, 0.99, 1.0};
constexpr int kRhoAbsCount = 8;

struct WorstCase {
  double rate = 0.0;
  double mc_se = 0.0;
  double worst_rho = 0.0;
  std::vector<double> signed_grid;
  std::vector<double> signed_rejections;
};

WorstCase worst_case_rejection(double m, double qcrit, std::int64_t reps,
                               std::uint64_t seed, std::uint64_t stream_base,
                               int threads) {
  double rates[kRhoAbsCount];
  double ses[kRhoAbsCount];
  for (int i = 0; i < kRhoAbsCount; ++i) {
    const auto est = detail::mixture_rejection(m, kRhoAbsGrid[i], qcrit, reps, seed,
                                               stream_base + static_cast<std::uint64_t>(i),
                                               threads);
    rates[i] = est.rate;
    ses[i] = est.mc_se;
  }

  int imax = 0;
  for (int i = 1; i < kRhoAbsCount; ++i) {
    if (rates[i] > rates[imax]) imax = i;
  }
  WorstCase out;
  out.rate = rates[imax];
  out.mc_se = ses[imax];
  // The true maximum sits on the boundary |rho| = 1; report the boundary as
  // argmax whenever its estimate is statistically indistinguishable from the
  // grid max.
  const int ibound = kRhoAbsCount - 1;
  out.worst_rho = rates[ibound] >= rates[imax] - 2.0 * ses[imax]
                      ? kRhoAbsGrid[ibound]
                      : kRhoAbsGrid[imax];
  for (int i = kRhoAbsCount - 1; i >= 1; --i) {
    out.signed_grid.push_back(-kRhoAbsGrid[i]);
    out.signed_rejections.push_back(rates[i]);
  }
  for (int i = 0; i < kRhoAbsCount; ++i) {
    out.signed_grid.push_back(kRhoAbsGrid[i]);
    out.signed_rejections.push_back(rates[i]);
  }
  return out;
}

}  // namespace

CalibrationResult calibrate_C(double T, double tau, double alpha, std::int64_t reps,
                              std::uint64_t seed, int threads) {
  if (!(tau > 0.0 && tau < T && T < 1.0)) {
    throw DomainError("calibrate_C: need 0 < tau < T < 1");
  }
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw DomainError("calibrate_C: need 0 < alpha < 1");
  }
  if (reps < 10000) throw DomainError("calibrate_C: need reps >= 10^4");

  const double qcrit = noncentral_chisq_quantile(1.0, 0.0, tau);
  const double mean_scale = std::sqrt(0.5 * (1.0 - alpha));
  const double c_lo_bound = 0.0;
  const double c_hi_bound = 50.0;

  auto worst_at = [&](double C, int iteration) {
    const std::uint64_t stream_base =
        (static_cast<std::uint64_t>(iteration) + 1) << 32;
    return worst_case_rejection(mean_scale * C, qcrit, reps, seed, stream_base,
                                threads);
  };

  // Evaluation history for the isotonic smoothing, sorted by C.
  std::vector<double> cs;
  std::vector<double> rs;
  auto record = [&](double C, double rate) {
    const auto pos = std::lower_bound(cs.begin(), cs.end(), C);
    rs.insert(rs.begin() + (pos - cs.begin()), rate);
    cs.insert(pos, C);
  };
  auto smoothed_at = [&](double C) {
    const auto fit = isotonic_nonincreasing(rs);
    const auto pos = std::lower_bound(cs.begin(), cs.end(), C);
    return fit[static_cast<std::size_t>(pos - cs.begin())];
  };

  const WorstCase at_hi = worst_at(c_hi_bound, 0);
  if (at_hi.rate > T) {
    std::ostringstream msg;
    msg << "calibrate_C: worst-case rejection " << at_hi.rate << " at C = "
        << c_hi_bound << " still exceeds T = " << T;
    throw InfeasibleError(msg.str());
  }
  record(c_hi_bound, at_hi.rate);

  const WorstCase at_lo = worst_at(c_lo_bound, 1);
  record(c_lo_bound, at_lo.rate);

  double lo = c_lo_bound;
  double hi = c_hi_bound;
  if (at_lo.rate <= T) {
    // Even zero strength satisfies the tolerance: the cutoff collapses to the
    // lower search bound.
    hi = c_lo_bound;
  } else {
    for (int iter = 2; iter < 32; ++iter) {
      const double mid = 0.5 * (lo + hi);
      const WorstCase at_mid = worst_at(mid, iter);
      record(mid, at_mid.rate);
      if (smoothed_at(mid) <= T) {
        hi = mid;
      } else {
        lo = mid;
      }
    }
  }

  const WorstCase final_eval = worst_at(hi, 64);
  CalibrationResult out;
  out.C = hi;
  out.T = T;
  out.tau = tau;
  out.reps = reps;
  out.rho_grid = final_eval.signed_grid;
  out.rejections = final_eval.signed_rejections;
  out.worst_rho = final_eval.worst_rho;
  out.mc_se = final_eval.mc_se;
  out.seed = seed;
  return out;
}

double c_from_c0(std::int64_t K, std::int64_t n, double C0) {
  if (K <= 0 || n <= 0 || K >= n) {
    throw DomainError("c_from_c0: need 0 < K < n");
  }
  if (C0 < 0.0) throw DomainError("c_from_c0: need C0 >= 0");
  const double ratio = static_cast<double>(K) / static_cast<double>(n);
  return std::sqrt(2.0 / (1.0 - ratio)) * C0;
}

std::string CalibrationResult::to_json() const {
  nlohmann::ordered_json j;
  j["C"] = C;
  j["T"] = T;
  j["tau"] = tau;
  j["reps"] = reps;
  j["rho_grid"] = rho_grid;
  j["rejections"] = rejections;
  j["worst_rho"] = worst_rho;
  j["mc_se"] = mc_se;
  j["seed"] = seed;
  return j.dump(2);
}

CalibrationResult CalibrationResult::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("CalibrationResult: invalid JSON: ") + e.what());
  }
  CalibrationResult out;
  try {
    out.C = j.at("C").get<double>();
    out.T = j.at("T").get<double>();
    out.tau = j.at("tau").get<double>();
    out.reps = j.at("reps").get<std::int64_t>();
    out.rho_grid = j.at("rho_grid").get<std::vector<double>>();
    out.rejections = j.at("rejections").get<std::vector<double>>();
    out.worst_rho = j.at("worst_rho").get<double>();
    out.mc_se = j.at("mc_se").get<double>();
    out.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("CalibrationResult: missing field: ") + e.what());
  }
  return out;
}

}  // namespace manyiv
