#include "manyiv/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include <nlohmann/json.hpp>

#include "manyiv/diagnostics.hpp"
#include "manyiv/distributions.hpp"
#include "manyiv/errors.hpp"
#include "manyiv/parallel.hpp"
#include "manyiv/rng.hpp"

namespace manyiv {

double ErrorSpec::kurt_ratio() const {
  switch (family) {
    case ErrorFamily::Normal:
      return 3.0;
    case ErrorFamily::ScaledT:
      return 3.0 * (df - 2.0) / (df - 4.0);
    case ErrorFamily::CenteredChiSq:
      return 3.0 + 12.0 / df;
    case ErrorFamily::TwoPoint:
      return 1.0;
  }
  return 3.0;
}

void ErrorSpec::validate() const {
  if (family == ErrorFamily::ScaledT && df <= 4) {
    throw DomainError("ErrorSpec: scaled-t needs integer df > 4 for finite fourth moments");
  }
  if (family == ErrorFamily::CenteredChiSq && df < 1) {
    throw DomainError("ErrorSpec: centered chi-squared needs integer df >= 1");
  }
}

void DGPSpec::validate() const {
  if (K < 1 || n <= K) throw DimensionError("DGPSpec: need n > K >= 1");
  if (p < 1 || n <= p) throw DimensionError("DGPSpec: need n > p >= 1");
  if (mu0_sq < 0.0) throw DomainError("DGPSpec: need mu0_sq >= 0");
  if (std::abs(rho) > 1.0) throw DomainError("DGPSpec: need |rho| <= 1");
  if (beta.size() != 0 && beta.size() != p) {
    throw DimensionError("DGPSpec: beta must have length p");
  }
  errors.validate();
  if (z_design.kind == ZDesignKind::GroupDummies) {
    if (z_design.groups != K) {
      throw DimensionError("DGPSpec: group-dummies design needs groups == K");
    }
    group_sizes(n, z_design.groups, z_design.singleton_fraction);  // feasibility
  }
  if (z_design.kind == ZDesignKind::FixedMatrix && z_design.path.empty()) {
    throw DomainError("DGPSpec: fixed-matrix design needs a path");
  }
}

Eigen::VectorXd DGPSpec::effective_beta() const {
  if (beta.size() == p) return beta;
  return Eigen::VectorXd::Ones(p);
}

std::string statistic_name(Statistic s) {
  switch (s) {
    case Statistic::ClassicalF:
      return "classical_F";
    case Statistic::Fc:
      return "Fc";
    case Statistic::Fl:
      return "Fl";
    case Statistic::CDc:
      return "CDc";
    case Statistic::W:
      return "W";
  }
  return "?";
}

std::optional<Statistic> statistic_from_name(const std::string& name) {
  if (name == "classical_F") return Statistic::ClassicalF;
  if (name == "Fc") return Statistic::Fc;
  if (name == "Fl") return Statistic::Fl;
  if (name == "CDc") return Statistic::CDc;
  if (name == "W") return Statistic::W;
  return std::nullopt;
}

void ExperimentConfig::validate() const {
  dgp.validate();
  if (reps < 100) throw DomainError("ExperimentConfig: need reps >= 100");
  if (!(tau > 0.0 && tau < 1.0)) throw DomainError("ExperimentConfig: need 0 < tau < 1");
  if (C0 < 0.0) throw DomainError("ExperimentConfig: need C0 >= 0");
  if (C_override && *C_override < 0.0) {
    throw DomainError("ExperimentConfig: need C >= 0");
  }
  for (const Statistic s : statistics) {
    if (s == Statistic::CDc) {
      if (dgp.p != 2) throw DomainError("ExperimentConfig: CDc needs p = 2");
    } else if (dgp.p != 1) {
      throw DomainError("ExperimentConfig: " + statistic_name(s) + " needs p = 1");
    }
  }
  for (const Eigen::Index k : K_grid) {
    if (k < 1 || k >= dgp.n) throw DimensionError("ExperimentConfig: K grid value out of range");
  }
  for (const double m : mu0_grid) {
    if (m < 0.0) throw DomainError("ExperimentConfig: mu0 grid value must be >= 0");
  }
}

std::vector<Eigen::Index> group_sizes(Eigen::Index n, Eigen::Index groups,
                                      double singleton_fraction) {
  if (groups < 1 || groups > n) throw DimensionError("group_sizes: need 1 <= groups <= n");
  if (singleton_fraction < 0.0 || singleton_fraction >= 1.0) {
    throw DomainError("group_sizes: singleton fraction must lie in [0, 1)");
  }
  const Eigen::Index singles =
      std::min<Eigen::Index>(groups - 1, static_cast<Eigen::Index>(
                                             std::llround(singleton_fraction * groups)));
  const Eigen::Index rest_groups = groups - singles;
  const Eigen::Index rest_obs = n - singles;
  if (rest_obs < rest_groups) {
    throw DimensionError("group_sizes: not enough observations for nonempty groups");
  }
  std::vector<Eigen::Index> sizes;
  sizes.reserve(static_cast<std::size_t>(groups));
  for (Eigen::Index g = 0; g < singles; ++g) sizes.push_back(1);
  const Eigen::Index base = rest_obs / rest_groups;
  const Eigen::Index extra = rest_obs % rest_groups;
  for (Eigen::Index g = 0; g < rest_groups; ++g) {
    sizes.push_back(base + (g < extra ? 1 : 0));
  }
  return sizes;
}

namespace {

double draw_error(CounterRng& rng, const ErrorSpec& e) {
  switch (e.family) {
    case ErrorFamily::Normal:
      return rng.normal();
    case ErrorFamily::ScaledT: {
      const double z = rng.normal();
      double s = 0.0;
      for (int i = 0; i < e.df; ++i) {
        const double w = rng.normal();
        s += w * w;
      }
      return z * std::sqrt((e.df - 2.0) / s);
    }
    case ErrorFamily::CenteredChiSq: {
      double s = 0.0;
      for (int i = 0; i < e.df; ++i) {
        const double w = rng.normal();
        s += w * w;
      }
      return (s - e.df) / std::sqrt(2.0 * e.df);
    }
    case ErrorFamily::TwoPoint:
      return rng.uniform() < 0.5 ? -1.0 : 1.0;
  }
  return 0.0;
}

void fill_errors(CounterRng& rng, const ErrorSpec& e, Eigen::VectorXd& out) {
  for (Eigen::Index i = 0; i < out.size(); ++i) out(i) = draw_error(rng, e);
}

Eigen::MatrixXd build_group_dummies(Eigen::Index n, Eigen::Index groups,
                                    double singleton_fraction) {
  const auto sizes = group_sizes(n, groups, singleton_fraction);
  Eigen::MatrixXd Z = Eigen::MatrixXd::Zero(n, groups);
  Eigen::Index row = 0;
  for (Eigen::Index g = 0; g < groups; ++g) {
    for (Eigen::Index r = 0; r < sizes[static_cast<std::size_t>(g)]; ++r) {
      Z(row++, g) = 1.0;
    }
  }
  return Z;
}

Eigen::MatrixXd load_matrix_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("fixed-matrix design: cannot open " + path);
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    std::vector<double> row;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) {
      try {
        row.push_back(std::stod(field));
      } catch (const std::exception&) {
        std::ostringstream msg;
        msg << "fixed-matrix design: non-numeric cell at line " << line_no;
        throw ParseError(msg.str());
      }
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      std::ostringstream msg;
      msg << "fixed-matrix design: ragged row at line " << line_no;
      throw ParseError(msg.str());
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw ParseError("fixed-matrix design: empty file " + path);
  Eigen::MatrixXd Z(static_cast<Eigen::Index>(rows.size()),
                    static_cast<Eigen::Index>(rows.front().size()));
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    for (Eigen::Index j = 0; j < Z.cols(); ++j) {
      Z(i, j) = rows[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
    }
  }
  return Z;
}

Eigen::MatrixXd draw_Z(const DGPSpec& spec, CounterRng& rng) {
  switch (spec.z_design.kind) {
    case ZDesignKind::GaussianIid: {
      Eigen::MatrixXd Z(spec.n, spec.K);
      for (Eigen::Index j = 0; j < spec.K; ++j) {
        for (Eigen::Index i = 0; i < spec.n; ++i) Z(i, j) = rng.normal();
      }
      return Z;
    }
    case ZDesignKind::FixedMatrix: {
      Eigen::MatrixXd Z = load_matrix_csv(spec.z_design.path);
      if (Z.rows() != spec.n || Z.cols() != spec.K) {
        std::ostringstream msg;
        msg << "fixed-matrix design: file is " << Z.rows() << "x" << Z.cols()
            << " but the spec needs " << spec.n << "x" << spec.K;
        throw DimensionError(msg.str());
      }
      return Z;
    }
    case ZDesignKind::GroupDummies:
      return build_group_dummies(spec.n, spec.z_design.groups,
                                 spec.z_design.singleton_fraction);
  }
  throw Error("draw_Z: unknown design");
}

// Fixed unit-length sign patterns; column 0 is 1_K / sqrt(K), later columns
// flip sign over successively halved blocks.
Eigen::MatrixXd direction_matrix(Eigen::Index K, Eigen::Index p) {
  Eigen::MatrixXd D(K, p);
  const double scale = 1.0 / std::sqrt(static_cast<double>(K));
  for (Eigen::Index j = 0; j < p; ++j) {
    const Eigen::Index period = std::max<Eigen::Index>(1, K >> j);
    for (Eigen::Index i = 0; i < K; ++i) {
      D(i, j) = ((i / period) % 2 == 0 ? scale : -scale);
    }
  }
  return D;
}

struct PreparedDesign {
  Eigen::MatrixXd Q;     // n x K
  Eigen::MatrixXd ZD;    // n x p
  Eigen::MatrixXd QtZD;  // K x p
  Eigen::MatrixXd DZZD;  // p x p
  double alpha_hat = 0.0;
  double omega_hat = 0.0;
};

PreparedDesign prepare_design(const Eigen::MatrixXd& Z, Eigen::Index p) {
  const Eigen::Index n = Z.rows();
  const Eigen::Index K = Z.cols();
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
  qr.setThreshold(static_cast<double>(n) * std::numeric_limits<double>::epsilon());
  if (qr.rank() < K) {
    std::ostringstream msg;
    msg << "design matrix rank " << qr.rank() << " < K = " << K;
    throw RankError(msg.str(), static_cast<long>(qr.rank()));
  }
  PreparedDesign d;
  d.Q = qr.householderQ() * Eigen::MatrixXd::Identity(n, K);
  const Eigen::MatrixXd D = direction_matrix(K, p);
  d.ZD = Z * D;
  d.QtZD = d.Q.transpose() * d.ZD;
  d.DZZD = d.ZD.transpose() * d.ZD;
  d.alpha_hat = static_cast<double>(K) / static_cast<double>(n);
  d.omega_hat = d.Q.rowwise().squaredNorm().squaredNorm() / static_cast<double>(n);
  return d;
}

double strength_scale(const PreparedDesign& d, double strength) {
  if (strength == 0.0) return 0.0;
  const double tq = d.DZZD.trace();
  if (tq <= 0.0) throw RankError("strength scaling: Z D has zero norm", 0);
  return std::sqrt(strength / tq);
}

// p = 1 quadratic forms from one error draw; the outcome parts are filled
// only when needed.
forms::ScalarForms p1_forms(const PreparedDesign& d, double c, double beta,
                            const Eigen::VectorXd& v, const Eigen::VectorXd* u) {
  const auto zd = d.ZD.col(0);
  const auto qzd = d.QtZD.col(0);
  const double zz = d.DZZD(0, 0);

  const Eigen::VectorXd Qv = d.Q.transpose() * v;
  const Eigen::VectorXd qY = c * qzd + Qv;
  const double YPY = qY.squaredNorm();
  const double YY = c * c * zz + 2.0 * c * zd.dot(v) + v.squaredNorm();

  forms::ScalarForms f;
  f.YPY = YPY;
  f.YMY = YY - YPY;
  if (u != nullptr) {
    const Eigen::VectorXd Qu = d.Q.transpose() * (*u);
    const double YPu = qY.dot(Qu);
    const double Yu = c * zd.dot(*u) + v.dot(*u);
    const double uPu = Qu.squaredNorm();
    const double uu = u->squaredNorm();
    f.YPy = beta * YPY + YPu;
    f.YMy = (beta * YY + Yu) - f.YPy;
    f.yPy = beta * beta * YPY + 2.0 * beta * YPu + uPu;
    f.yMy = (beta * beta * YY + 2.0 * beta * Yu + uu) - f.yPy;
  }
  return f;
}

// tr(CD) for p >= 2 from one error-matrix draw; throws DegenerateFitError
// when the residual second-moment matrix is not positive definite.
double cd_trace_forms(const PreparedDesign& d, double c, const Eigen::MatrixXd& V,
                      Eigen::Index K, Eigen::Index n) {
  const Eigen::MatrixXd QtV = d.Q.transpose() * V;
  const Eigen::MatrixXd qY = c * d.QtZD + QtV;
  Eigen::MatrixXd YPY = qY.transpose() * qY;
  const Eigen::MatrixXd ZDtV = d.ZD.transpose() * V;
  Eigen::MatrixXd YY =
      c * c * d.DZZD + c * (ZDtV + ZDtV.transpose()) + V.transpose() * V;
  Eigen::MatrixXd YMY = YY - YPY;
  Eigen::LLT<Eigen::MatrixXd> llt(YMY);
  if (llt.info() != Eigen::Success) {
    throw DegenerateFitError("cd trace: Y' M_Z Y not positive definite");
  }
  return static_cast<double>(n - K) / static_cast<double>(K) *
         llt.solve(YPY).trace();
}

struct CellCounts {
  std::int64_t rejected = 0;
  std::int64_t used = 0;
  std::int64_t failures = 0;
};

struct CellTask {
  DGPSpec spec;          // cell-adjusted (K, groups)
  Statistic stat = Statistic::ClassicalF;
  double strength = 0.0;  // concentration held by the DGP
  double C = 0.0;         // cutoff for corrected statistics
  double mu0 = 0.0;       // noncentrality of the classical critical value
  double tau = 0.05;
};

// One replication; the caller supplies the design (fixed mode) or lets the
// replication draw its own Z from its substream (redraw mode).
bool replicate_once(const CellTask& task, const PreparedDesign* fixed_design,
                    std::uint64_t seed, std::int64_t rep, double cv_classical,
                    double z_crit, double q_chi1) {
  const DGPSpec& spec = task.spec;
  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::uint64_t stream =
        attempt == 0 ? static_cast<std::uint64_t>(rep)
                     : (1ull << 61) + static_cast<std::uint64_t>(rep);
    CounterRng rng(seed, stream);
    try {
      PreparedDesign local;
      const PreparedDesign* d = fixed_design;
      if (d == nullptr) {
        local = prepare_design(draw_Z(spec, rng), spec.p);
        d = &local;
      }
      const double c = strength_scale(*d, task.strength);

      if (spec.p == 1) {
        Eigen::VectorXd v(spec.n);
        fill_errors(rng, spec.errors, v);
        const double beta = spec.effective_beta()(0);

        if (task.stat == Statistic::W) {
          Eigen::VectorXd e(spec.n);
          fill_errors(rng, spec.errors, e);
          const Eigen::VectorXd u =
              spec.rho * v + std::sqrt(1.0 - spec.rho * spec.rho) * e;
          const auto f = p1_forms(*d, c, beta, v, &u);
          const auto res = forms::b2sls_wald_forms(f, spec.K, spec.n, beta);
          return res.W > q_chi1;
        }

        const auto f = p1_forms(*d, c, beta, v, nullptr);
        const double F = forms::f_statistic(f.YPY, f.YMY, spec.K, spec.n);
        switch (task.stat) {
          case Statistic::ClassicalF:
            return F > cv_classical;
          case Statistic::Fc: {
            const auto r = corrected_F_test(F, spec.K, spec.n, task.C, task.tau);
            return r.strong;
          }
          case Statistic::Fl: {
            const double sL2 = sigma_L2(d->alpha_hat, d->omega_hat);
            if (sL2 <= 0.0) throw DomainError("Fl: sigma_L^2 <= 0");
            const double Fl = std::sqrt(static_cast<double>(spec.n)) *
                              (F - 1.0 - task.C / std::sqrt(static_cast<double>(spec.K))) /
                              std::sqrt(sL2);
            return Fl > z_crit;
          }
          default:
            throw Error("replicate_once: unexpected statistic");
        }
      }

      // p >= 2: trace-based statistic.
      Eigen::MatrixXd V(spec.n, spec.p);
      for (Eigen::Index j = 0; j < spec.p; ++j) {
        for (Eigen::Index i = 0; i < spec.n; ++i) V(i, j) = draw_error(rng, spec.errors);
      }
      const double trace = cd_trace_forms(*d, c, V, spec.K, spec.n);
      const auto r = cd_c_test(trace, spec.K, spec.n, task.C, spec.p, task.tau);
      return r.strong;
    } catch (const RankError&) {
      if (attempt == 1 || fixed_design != nullptr) throw;
      // redraw once from a fresh substream
    }
  }
  throw Error("replicate_once: unreachable");
}

CellCounts run_cell(const CellTask& task, const PreparedDesign* fixed_design,
                    std::int64_t reps, std::uint64_t seed, int threads) {
  const double cv_classical =
      task.stat == Statistic::ClassicalF
          ? noncentral_chisq_quantile(static_cast<double>(task.spec.K), task.mu0,
                                      task.tau) /
                static_cast<double>(task.spec.K)
          : 0.0;
  const double z_crit = normal_quantile(1.0 - task.tau);
  const double q_chi1 = noncentral_chisq_quantile(1.0, 0.0, task.tau);

  const std::int64_t block = 16;
  auto partials = blocked_map<CellCounts>(
      reps, block, threads, [&](std::int64_t, std::int64_t lo, std::int64_t hi) {
        CellCounts acc;
        for (std::int64_t rep = lo; rep < hi; ++rep) {
          try {
            const bool rejected = replicate_once(task, fixed_design, seed, rep,
                                                 cv_classical, z_crit, q_chi1);
            ++acc.used;
            if (rejected) ++acc.rejected;
          } catch (const RankError&) {
            ++acc.failures;
          } catch (const DegenerateFitError&) {
            ++acc.failures;
          } catch (const DomainError&) {
            ++acc.failures;
          }
        }
        return acc;
      });

  CellCounts total;
  for (const auto& p : partials) {
    total.rejected += p.rejected;
    total.used += p.used;
    total.failures += p.failures;
  }
  if (100 * total.failures > reps) {
    std::ostringstream msg;
    msg << "run_size_experiment: " << total.failures << " of " << reps
        << " replications failed";
    throw Error(msg.str());
  }
  return total;
}

double theoretical_size(Statistic stat, double alpha, double omega, double kurt,
                        double tau) {
  switch (stat) {
    case Statistic::ClassicalF:
      return theoretical_classical_size(alpha, omega, kurt, tau);
    case Statistic::Fc:
      return fc_asymptotic_size(alpha, omega, kurt, tau);
    case Statistic::Fl:
      return fl_asymptotic_size(alpha, omega, kurt, tau);
    case Statistic::CDc:
      return tau;
    case Statistic::W:
      return std::numeric_limits<double>::quiet_NaN();
  }
  return std::numeric_limits<double>::quiet_NaN();
}

std::uint64_t design_stream(std::size_t cell_index) {
  return (1ull << 62) + static_cast<std::uint64_t>(cell_index);
}

}  // namespace

IVDataset generate(const DGPSpec& spec, std::uint64_t seed, Eigen::MatrixXd* pi_out) {
  spec.validate();
  for (int attempt = 0; attempt < 2; ++attempt) {
    const std::uint64_t stream = attempt == 0 ? 0ull : (1ull << 61);
    CounterRng rng(seed, stream);
    const Eigen::MatrixXd Z = draw_Z(spec, rng);
    const Eigen::MatrixXd D = direction_matrix(spec.K, spec.p);
    const Eigen::MatrixXd ZD = Z * D;
    const double tq = (ZD.transpose() * ZD).trace();

    double c = 0.0;
    if (spec.mu0_sq > 0.0) {
      if (tq <= 0.0) {
        if (attempt == 1) throw RankError("generate: Z D has zero norm", 0);
        continue;
      }
      c = std::sqrt(spec.mu0_sq / tq);
    }

    Eigen::MatrixXd V(spec.n, spec.p);
    for (Eigen::Index j = 0; j < spec.p; ++j) {
      for (Eigen::Index i = 0; i < spec.n; ++i) V(i, j) = draw_error(rng, spec.errors);
    }
    Eigen::VectorXd e(spec.n);
    fill_errors(rng, spec.errors, e);
    const Eigen::VectorXd u =
        spec.rho * V.col(0) + std::sqrt(1.0 - spec.rho * spec.rho) * e;

    const Eigen::MatrixXd Y = c * ZD + V;
    const Eigen::VectorXd y = Y * spec.effective_beta() + u;
    try {
      IVDataset ds(y, Y, Z);
      if (pi_out != nullptr) *pi_out = c * D;
      return ds;
    } catch (const RankError&) {
      if (attempt == 1) throw;
    }
  }
  throw Error("generate: unreachable");
}

SizeTable run_size_experiment(const ExperimentConfig& config) {
  config.validate();
  if (config.statistics.empty()) {
    throw DomainError("run_size_experiment: statistics list is empty");
  }

  const std::vector<Eigen::Index> Ks =
      config.K_grid.empty() ? std::vector<Eigen::Index>{config.dgp.K} : config.K_grid;
  const std::vector<double> mus =
      config.mu0_grid.empty() ? std::vector<double>{config.dgp.mu0_sq} : config.mu0_grid;

  SizeTable table;
  std::size_t cell_index = 0;
  for (const Eigen::Index K : Ks) {
    DGPSpec cell_spec = config.dgp;
    cell_spec.K = K;
    if (cell_spec.z_design.kind == ZDesignKind::GroupDummies) {
      cell_spec.z_design.groups = K;
    }
    cell_spec.validate();

    const double C_cell =
        config.C_override ? *config.C_override
                          : c_from_c0(K, cell_spec.n, config.C0);

    // Reference design: the cell's fixed Z, also the plug-in for the
    // theoretical size column in redraw mode.
    PreparedDesign design;
    {
      CounterRng zrng(config.seed, design_stream(cell_index));
      design = prepare_design(draw_Z(cell_spec, zrng), cell_spec.p);
    }
    const double kurt = cell_spec.errors.kurt_ratio();

    for (const double mu0 : mus) {
      for (const Statistic stat : config.statistics) {
        CellTask task;
        task.spec = cell_spec;
        task.stat = stat;
        task.tau = config.tau;
        task.C = C_cell;
        task.mu0 = mu0;
        const bool at_mu0 = stat == Statistic::ClassicalF || stat == Statistic::W;
        task.strength =
            at_mu0 ? mu0 : C_cell * std::sqrt(static_cast<double>(K));

        const PreparedDesign* fixed = cell_spec.redraw_Z ? nullptr : &design;
        const CellCounts counts =
            run_cell(task, fixed, config.reps, config.seed, config.threads);

        SizeRow row;
        row.K = K;
        row.mu0_sq = mu0;
        row.stat = stat;
        row.reps = config.reps;
        row.failures = counts.failures;
        row.boundary_mu_sq = task.strength;
        row.C = at_mu0 ? std::numeric_limits<double>::quiet_NaN() : C_cell;
        row.rate = counts.used > 0
                       ? static_cast<double>(counts.rejected) /
                             static_cast<double>(counts.used)
                       : std::numeric_limits<double>::quiet_NaN();
        row.mc_se = counts.used > 0
                        ? std::sqrt(std::max(0.0, row.rate * (1.0 - row.rate)) /
                                    static_cast<double>(counts.used))
                        : std::numeric_limits<double>::quiet_NaN();
        row.theoretical = theoretical_size(stat, design.alpha_hat,
                                           design.omega_hat, kurt, config.tau);
        table.rows.push_back(row);
      }
    }
    ++cell_index;
  }
  return table;
}

BiasCurve run_bias_curve(const ExperimentConfig& config,
                         const std::vector<double>& mu_grid) {
  config.dgp.validate();
  if (config.dgp.p != 1) throw DomainError("run_bias_curve: needs p = 1");
  if (mu_grid.empty()) throw DomainError("run_bias_curve: empty grid");
  if (config.reps < 100) throw DomainError("run_bias_curve: need reps >= 100");

  BiasCurve curve;
  curve.K_sy = config.dgp.K;
  curve.K_limit = config.bias_limit_K > 0 ? config.bias_limit_K : config.dgp.K;
  curve.n = config.dgp.n;
  if (curve.K_limit >= curve.n) {
    throw DimensionError("run_bias_curve: limit-curve K must be below n");
  }

  const Eigen::Index K = curve.K_sy;
  for (std::size_t point = 0; point < mu_grid.size(); ++point) {
    const double mu_sq = mu_grid[point];
    if (mu_sq < 0.0) throw DomainError("run_bias_curve: mu^2 must be >= 0");
    const double lam = std::sqrt(mu_sq);

    const std::int64_t block = 1024;
    auto partials = blocked_map<double>(
        config.reps, block, config.threads,
        [&](std::int64_t, std::int64_t lo, std::int64_t hi) {
          double sum = 0.0;
          for (std::int64_t rep = lo; rep < hi; ++rep) {
            CounterRng rng(config.seed,
                           (static_cast<std::uint64_t>(point) << 40) +
                               static_cast<std::uint64_t>(rep));
            double num = 0.0;
            double den = 0.0;
            for (Eigen::Index i = 0; i < K; ++i) {
              const double xi = rng.normal();
              const double shifted = (i == 0 ? lam : 0.0) + xi;
              num += shifted * xi;
              den += shifted * shifted;
            }
            sum += num / den;
          }
          return sum;
        });
    double total = 0.0;
    for (const double s : partials) total += s;

    BiasCurveRow row;
    row.mu_sq = mu_sq;
    row.b_sy = std::abs(total / static_cast<double>(config.reps));

    BiasInputs inputs;
    inputs.Theta = Eigen::MatrixXd::Constant(1, 1, mu_sq / static_cast<double>(curve.n));
    inputs.Sigma_VV = Eigen::MatrixXd::Identity(1, 1);
    inputs.Sigma_Vu = Eigen::VectorXd::Constant(1, 0.5);
    inputs.alpha = static_cast<double>(curve.K_limit) / static_cast<double>(curve.n);
    row.b_limit_sq = relative_bias_limit(inputs).B2;

    curve.rows.push_back(row);
  }
  return curve;
}

WaldSizeResult run_wald_size(const ExperimentConfig& config, double beta0) {
  config.dgp.validate();
  if (config.dgp.p != 1) throw DomainError("run_wald_size: needs p = 1");
  if (config.reps < 100) throw DomainError("run_wald_size: need reps >= 100");

  DGPSpec spec = config.dgp;
  CellTask task;
  task.spec = spec;
  task.stat = Statistic::W;
  task.tau = config.tau;
  task.strength = spec.mu0_sq;
  task.mu0 = spec.mu0_sq;

  PreparedDesign design;
  {
    CounterRng zrng(config.seed, design_stream(0));
    design = prepare_design(draw_Z(spec, zrng), spec.p);
  }
  const PreparedDesign* fixed = spec.redraw_Z ? nullptr : &design;
  const CellCounts counts =
      run_cell(task, fixed, config.reps, config.seed, config.threads);

  WaldSizeResult out;
  out.rate = static_cast<double>(counts.rejected) / static_cast<double>(counts.used);
  out.mc_se = std::sqrt(std::max(0.0, out.rate * (1.0 - out.rate)) /
                        static_cast<double>(counts.used));

  const double alpha = static_cast<double>(spec.K) / static_cast<double>(spec.n);
  MixtureParams params;
  params.m = std::sqrt(0.5 * (1.0 - alpha)) * spec.mu0_sq /
             std::sqrt(static_cast<double>(spec.K));
  // The limiting pair correlation follows from the joint CLT of the
  // bilinear forms: sqrt(2) sigma_vu / sqrt(sigma_vv^2 sigma_uu^2 + sigma_vu^2),
  // which maps corr(u, v) = r to sqrt(2) r / sqrt(1 + r^2).
  params.rho = std::clamp(
      std::sqrt(2.0) * spec.rho / std::sqrt(1.0 + spec.rho * spec.rho), -1.0, 1.0);

  const std::int64_t limit_reps = std::max<std::int64_t>(config.reps, 200000);
  const auto limit = wald_limit_rejection(params, config.tau, limit_reps,
                                          config.seed ^ 0x57A1Dull, config.threads);
  out.limit_rate = limit.rate;
  out.limit_mc_se = limit.mc_se;
  return out;
}

namespace {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

}  // namespace

std::string SizeTable::to_csv() const {
  std::ostringstream out;
  out << "K,mu0_sq,statistic,reps,failures,boundary_mu_sq,C,rejection_rate,mc_se,"
         "theoretical\n";
  for (const auto& r : rows) {
    out << r.K << ',' << format_double(r.mu0_sq) << ',' << statistic_name(r.stat)
        << ',' << r.reps << ',' << r.failures << ','
        << format_double(r.boundary_mu_sq) << ',' << format_double(r.C) << ','
        << format_double(r.rate) << ',' << format_double(r.mc_se) << ','
        << format_double(r.theoretical) << "\n";
  }
  return out.str();
}

std::string SizeTable::to_json() const {
  nlohmann::ordered_json rows_json = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["K"] = r.K;
    j["mu0_sq"] = r.mu0_sq;
    j["statistic"] = statistic_name(r.stat);
    j["reps"] = r.reps;
    j["failures"] = r.failures;
    j["boundary_mu_sq"] = r.boundary_mu_sq;
    if (std::isnan(r.C)) {
      j["C"] = nullptr;
    } else {
      j["C"] = r.C;
    }
    j["rejection_rate"] = r.rate;
    j["mc_se"] = r.mc_se;
    if (std::isnan(r.theoretical)) {
      j["theoretical"] = nullptr;
    } else {
      j["theoretical"] = r.theoretical;
    }
    rows_json.push_back(j);
  }
  nlohmann::ordered_json out;
  out["rows"] = rows_json;
  return out.dump(2);
}

std::string BiasCurve::to_csv() const {
  std::ostringstream out;
  out << "mu_sq,b_sy,b_limit_sq\n";
  for (const auto& r : rows) {
    out << format_double(r.mu_sq) << ',' << format_double(r.b_sy) << ','
        << format_double(r.b_limit_sq) << "\n";
  }
  return out.str();
}

std::string BiasCurve::to_json() const {
  nlohmann::ordered_json rows_json = nlohmann::ordered_json::array();
  for (const auto& r : rows) {
    nlohmann::ordered_json j;
    j["mu_sq"] = r.mu_sq;
    j["b_sy"] = r.b_sy;
    j["b_limit_sq"] = r.b_limit_sq;
    rows_json.push_back(j);
  }
  nlohmann::ordered_json out;
  out["K_sy"] = K_sy;
  out["K_limit"] = K_limit;
  out["n"] = n;
  out["rows"] = rows_json;
  return out.dump(2);
}

std::string BiasCurve::to_gnuplot() const {
  std::ostringstream out;
  out << "# mu_sq b_sy b_limit_sq\n";
  for (const auto& r : rows) {
    out << format_double(r.mu_sq) << ' ' << format_double(r.b_sy) << ' '
        << format_double(r.b_limit_sq) << "\n";
  }
  return out.str();
}

}  // namespace manyiv
