#pragma once

#include <cstdint>
#include <iosfwd>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "manyiv/dataset.hpp"
#include "manyiv/montecarlo.hpp"

namespace manyiv {

enum class OutputFormat { Json, Csv, Text };

/// Parsed command-line options shared by the subcommands.
struct CliConfig {
  std::string data_path;
  Eigen::Index p = 1;
  double tau = 0.05;
  double T = 0.10;
  std::optional<double> C_override;
  double C0 = 2.5;
  double mu0_sq = 0.0;         // sy-test
  double alpha = 0.0;          // calibrate
  std::int64_t reps = 200000;  // calibrate
  std::uint64_t seed = 0;
  int threads = 0;
  OutputFormat format = OutputFormat::Text;
  std::string config_path;  // simulate
  std::string out_dir;      // simulate
};

// Exit-code contract of every subcommand.
inline constexpr int kExitStrong = 0;
inline constexpr int kExitWeak = 1;
inline constexpr int kExitError = 2;
inline constexpr int kExitNonInferential = 3;

struct DiagnosticReport {
  Eigen::Index n = 0;
  Eigen::Index K = 0;
  Eigen::Index p = 0;
  double alpha_hat = 0.0;
  double omega_hat = 0.0;
  double F = std::numeric_limits<double>::quiet_NaN();
  double Fc = std::numeric_limits<double>::quiet_NaN();
  double Fl = std::numeric_limits<double>::quiet_NaN();
  double sigma_L2_hat = std::numeric_limits<double>::quiet_NaN();
  double cd_trace = std::numeric_limits<double>::quiet_NaN();
  double CDc = std::numeric_limits<double>::quiet_NaN();
  double C = std::numeric_limits<double>::quiet_NaN();
  std::string C_source;  // "flag" | "cache" | "c_from_c0"
  double tau = 0.0;
  double T = 0.0;
  std::string decision;  // "strong" | "weak" | "non-inferential"
  std::vector<std::string> warnings;

  std::string to_json() const;
  std::string to_csv() const;
  std::string to_text() const;
};

/// Full diagnosis pipeline on an in-memory dataset. The cutoff chain is
/// --C flag, then a cached calibration under cache_dir, then c_from_c0.
DiagnosticReport diagnose_dataset(const IVDataset& ds, double tau, double T,
                                  std::optional<double> C_override, double C0,
                                  const std::string& cache_dir);

int run_diagnose(const CliConfig& cfg, std::ostream& out, std::ostream& err);
int run_sy_test(const CliConfig& cfg, std::ostream& out, std::ostream& err);
int run_calibrate(const CliConfig& cfg, std::ostream& out, std::ostream& err);
int run_simulate(const CliConfig& cfg, std::ostream& out, std::ostream& err);

/// Calibration cache directory: $MANYIV_CACHE, else ~/.manyiv/calibrations.
std::string calibration_cache_dir();

/// File name keyed by (alpha rounded to 1e-3, T, tau, reps).
std::string calibration_cache_key(double alpha, double T, double tau,
                                  std::int64_t reps);

}  // namespace manyiv
