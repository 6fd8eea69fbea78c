#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "manyiv/cli.hpp"

namespace {

manyiv::OutputFormat parse_format(const std::string& name) {
  if (name == "json") return manyiv::OutputFormat::Json;
  if (name == "csv") return manyiv::OutputFormat::Csv;
  return manyiv::OutputFormat::Text;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weak-instrument diagnostics under many instruments"};
  app.require_subcommand(1);

  manyiv::CliConfig cfg;
  std::string format = "text";

  auto* diagnose = app.add_subcommand(
      "diagnose", "Run the corrected first-stage diagnosis on a CSV dataset");
  diagnose->add_option("--data", cfg.data_path, "Dataset CSV (y,Y1..Yp,Z1..ZK)")
      ->required();
  diagnose->add_option("--p", cfg.p, "Number of endogenous regressors")->required();
  diagnose->add_option("--tau", cfg.tau, "Significance level (default 0.05)");
  diagnose->add_option("--T", cfg.T, "Wald tolerance level (default 0.10)");
  double c_flag = -1.0;
  auto* c_opt = diagnose->add_option("--C", c_flag, "Cutoff override for mu^2/sqrt(K)");
  diagnose->add_option("--C0", cfg.C0, "Reference cutoff (default 2.5)");
  diagnose->add_option("--format", format, "Output format: json|csv|text");

  auto* calibrate = app.add_subcommand(
      "calibrate", "Simulate the worst-case Wald rejection and solve for C");
  calibrate->add_option("--alpha", cfg.alpha, "Instrument ratio K/n")->required();
  calibrate->add_option("--T", cfg.T, "Tolerance level (default 0.10)");
  calibrate->add_option("--tau", cfg.tau, "Significance level (default 0.05)");
  calibrate->add_option("--reps", cfg.reps, "Replications per grid point");
  calibrate->add_option("--seed", cfg.seed, "Random seed");
  calibrate->add_option("--threads", cfg.threads, "Worker threads (0 = auto)");
  calibrate->add_option("--format", format, "Output format: json|csv|text");

  auto* simulate = app.add_subcommand(
      "simulate", "Run a Monte Carlo experiment described by a JSON config");
  simulate->add_option("--config", cfg.config_path, "Experiment config JSON")
      ->required();
  simulate->add_option("--out", cfg.out_dir, "Output directory")->required();
  simulate->add_option("--threads", cfg.threads, "Worker threads override");

  auto* sy = app.add_subcommand(
      "sy-test", "Classical fixed-K first-stage F test (with distortion warning)");
  sy->add_option("--data", cfg.data_path, "Dataset CSV")->required();
  sy->add_option("--p", cfg.p, "Number of endogenous regressors (must be 1)");
  sy->add_option("--mu0sq", cfg.mu0_sq, "Null concentration parameter")->required();
  sy->add_option("--tau", cfg.tau, "Significance level (default 0.05)");
  sy->add_option("--format", format, "Output format: json|csv|text");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    std::cerr << "error: " << e.what() << "\n";
    return manyiv::kExitError;
  }

  cfg.format = parse_format(format);
  if (*c_opt) cfg.C_override = c_flag;

  if (*diagnose) return manyiv::run_diagnose(cfg, std::cout, std::cerr);
  if (*calibrate) return manyiv::run_calibrate(cfg, std::cout, std::cerr);
  if (*simulate) return manyiv::run_simulate(cfg, std::cout, std::cerr);
  if (*sy) return manyiv::run_sy_test(cfg, std::cout, std::cerr);
  return manyiv::kExitError;
}
