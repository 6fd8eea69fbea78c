#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "manyiv/dataset.hpp"

namespace manyiv {

/// Error distribution for the disturbances; every family is normalized to
/// zero mean and unit variance. ScaledT needs df > 4 so fourth moments
/// exist; TwoPoint is the symmetric +/-1 mixture (kurtosis ratio 1).
enum class ErrorFamily { Normal, ScaledT, CenteredChiSq, TwoPoint };

struct ErrorSpec {
  ErrorFamily family = ErrorFamily::Normal;
  int df = 0;  // ScaledT: integer > 4; CenteredChiSq: integer >= 1

  double kurt_ratio() const;
  void validate() const;
};

enum class ZDesignKind { GaussianIid, FixedMatrix, GroupDummies };

struct ZDesign {
  ZDesignKind kind = ZDesignKind::GaussianIid;
  std::string path;               // FixedMatrix: headerless numeric CSV
  Eigen::Index groups = 0;        // GroupDummies: number of dummies (= K)
  double singleton_fraction = 0;  // GroupDummies: share of size-1 groups
};

/// Full description of a simulated data-generating process. The first-stage
/// coefficient matrix is c * D for fixed unit directions D, with c rescaled
/// per realized Z so the concentration parameter hits mu0_sq exactly.
struct DGPSpec {
  Eigen::Index n = 0;
  Eigen::Index K = 0;
  Eigen::Index p = 1;
  double mu0_sq = 0.0;   // theta0_sq when p >= 2
  double rho = 0.0;      // corr(u_i, v_i1)
  Eigen::VectorXd beta;  // empty means ones(p)
  ErrorSpec errors;
  ZDesign z_design;
  bool redraw_Z = true;

  void validate() const;
  Eigen::VectorXd effective_beta() const;
};

enum class Statistic { ClassicalF, Fc, Fl, CDc, W };

std::string statistic_name(Statistic s);
std::optional<Statistic> statistic_from_name(const std::string& name);

struct ExperimentConfig {
  DGPSpec dgp;
  std::int64_t reps = 2000;
  double tau = 0.05;
  std::vector<Statistic> statistics;
  std::uint64_t seed = 0;
  int threads = 0;

  // Optional grids; empty means the single value from dgp.
  std::vector<Eigen::Index> K_grid;
  std::vector<double> mu0_grid;

  // Cutoff chain for the corrected statistics.
  double C0 = 2.5;
  std::optional<double> C_override;

  // run_bias_curve: K for the many-instrument limit curve (0 = dgp.K).
  Eigen::Index bias_limit_K = 0;

  void validate() const;
};

struct SizeRow {
  Eigen::Index K = 0;
  double mu0_sq = 0.0;       // grid cell label
  Statistic stat = Statistic::ClassicalF;
  std::int64_t reps = 0;
  std::int64_t failures = 0;
  double boundary_mu_sq = 0.0;  // concentration the DGP was held at
  double C = 0.0;               // cutoff used (NaN for classical_F and W)
  double rate = 0.0;
  double mc_se = 0.0;
  double theoretical = 0.0;  // limiting size under the design's omega/kurtosis
};

struct SizeTable {
  std::vector<SizeRow> rows;

  std::string to_csv() const;
  std::string to_json() const;
};

struct BiasCurveRow {
  double mu_sq = 0.0;
  double b_sy = 0.0;        // fixed-K relative bias, Monte Carlo
  double b_limit_sq = 0.0;  // many-K squared limit along Theta = mu^2 / n
};

struct BiasCurve {
  std::vector<BiasCurveRow> rows;
  Eigen::Index K_sy = 0;
  Eigen::Index K_limit = 0;
  Eigen::Index n = 0;

  std::string to_csv() const;
  std::string to_json() const;
  std::string to_gnuplot() const;
};

struct WaldSizeResult {
  double rate = 0.0;
  double mc_se = 0.0;
  double limit_rate = 0.0;  // wald_limit_rejection at the implied mixture
  double limit_mc_se = 0.0;
};

/// Draws one dataset from the DGP. Deterministic given seed. A rank-deficient
/// draw is regenerated once from a fresh substream before failing. When
/// pi_out is non-null it receives the realized first-stage coefficients.
IVDataset generate(const DGPSpec& spec, std::uint64_t seed,
                   Eigen::MatrixXd* pi_out = nullptr);

/// Rejection rates at the null boundary for every requested statistic over
/// the (K, mu0_sq) grid: classical_F and W run at mu^2 = mu0_sq, the
/// corrected statistics at mu^2 = C sqrt(K). Bit-identical output for any
/// thread count.
SizeTable run_size_experiment(const ExperimentConfig& config);

/// Fixed-K relative bias (Monte Carlo over the noncentral ratio) next to the
/// many-K limit evaluated along Theta = mu^2 / n.
BiasCurve run_bias_curve(const ExperimentConfig& config,
                         const std::vector<double>& mu_grid);

/// Finite-sample rejection rate of the B2SLS Wald test of the true beta0,
/// next to the limiting mixture prediction.
WaldSizeResult run_wald_size(const ExperimentConfig& config, double beta0);

/// Deterministic group sizes for the GroupDummies design (exposed for tests).
std::vector<Eigen::Index> group_sizes(Eigen::Index n, Eigen::Index groups,
                                      double singleton_fraction);

}  // namespace manyiv
