#include "manyiv/dataset.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <vector>

#include "manyiv/errors.hpp"

namespace manyiv {

namespace {

void check_dimensions(Eigen::Index n, Eigen::Index K, Eigen::Index p) {
  if (K < 1) throw DimensionError("IVDataset: need at least one instrument");
  if (p < 1) throw DimensionError("IVDataset: need at least one endogenous regressor");
  if (n <= K) {
    std::ostringstream msg;
    msg << "IVDataset: need n > K, got n = " << n << ", K = " << K;
    throw DimensionError(msg.str());
  }
  if (n <= p) {
    std::ostringstream msg;
    msg << "IVDataset: need n > p, got n = " << n << ", p = " << p;
    throw DimensionError(msg.str());
  }
}

void check_finite(const Eigen::VectorXd& y, const Eigen::MatrixXd& Y,
                  const Eigen::MatrixXd& Z) {
  if (!y.allFinite() || !Y.allFinite() || !Z.allFinite()) {
    throw DomainError("IVDataset: all entries must be finite");
  }
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  for (;;) {
    const std::size_t comma = line.find(',', start);
    std::string field = comma == std::string::npos
                            ? line.substr(start)
                            : line.substr(start, comma - start);
    while (!field.empty() && (field.back() == '\r' || field.back() == ' ' || field.back() == '\t')) {
      field.pop_back();
    }
    std::size_t lead = 0;
    while (lead < field.size() && (field[lead] == ' ' || field[lead] == '\t')) ++lead;
    fields.push_back(field.substr(lead));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return fields;
}

double parse_cell(const std::string& field, std::size_t line_no, std::size_t col) {
  double value = 0.0;
  const char* first = field.data();
  const char* last = field.data() + field.size();
  const auto res = std::from_chars(first, last, value);
  if (res.ec != std::errc{} || res.ptr != last || !std::isfinite(value)) {
    std::ostringstream msg;
    msg << "load_csv: non-numeric cell '" << field << "' at line " << line_no
        << ", column " << (col + 1);
    throw ParseError(msg.str());
  }
  return value;
}

}  // namespace

Eigen::Index instrument_rank(const Eigen::MatrixXd& Z) {
  Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(Z);
  qr.setThreshold(static_cast<double>(Z.rows()) *
                  std::numeric_limits<double>::epsilon());
  return qr.rank();
}

IVDataset::IVDataset(Eigen::VectorXd y, Eigen::MatrixXd Y, Eigen::MatrixXd Z)
    : y_(std::move(y)), Y_(std::move(Y)), Z_(std::move(Z)) {
  const Eigen::Index n = Z_.rows();
  if (y_.size() != n || Y_.rows() != n) {
    throw DimensionError("IVDataset: y, Y and Z must have the same number of rows");
  }
  check_dimensions(n, Z_.cols(), Y_.cols());
  check_finite(y_, Y_, Z_);
  const Eigen::Index rank = instrument_rank(Z_);
  if (rank < Z_.cols()) {
    std::ostringstream msg;
    msg << "IVDataset: instrument matrix is rank deficient, numerical rank "
        << rank << " < K = " << Z_.cols();
    throw RankError(msg.str(), static_cast<long>(rank));
  }
}

IVDataset load_csv(const std::string& path, Eigen::Index p) {
  std::ifstream in(path);
  if (!in) throw ParseError("load_csv: cannot open file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw ParseError("load_csv: empty file: " + path);

  const auto header = split_csv_line(line);
  if (header.empty() || header[0] != "y") {
    throw ParseError("load_csv: header must start with column 'y'");
  }
  Eigen::Index p_file = 0;
  std::size_t idx = 1;
  while (idx < header.size() && header[idx] == "Y" + std::to_string(p_file + 1)) {
    ++p_file;
    ++idx;
  }
  Eigen::Index K_file = 0;
  while (idx < header.size() && header[idx] == "Z" + std::to_string(K_file + 1)) {
    ++K_file;
    ++idx;
  }
  if (idx != header.size()) {
    throw ParseError("load_csv: unexpected header column '" + header[idx] + "'");
  }
  if (p_file == 0 || K_file == 0) {
    throw ParseError("load_csv: header must name columns y,Y1..Yp,Z1..ZK");
  }
  if (p_file != p) {
    std::ostringstream msg;
    msg << "load_csv: header names " << p_file << " endogenous column(s) but p = "
        << p << " was requested";
    throw DimensionError(msg.str());
  }

  const std::size_t ncols = 1 + static_cast<std::size_t>(p_file + K_file);
  std::vector<double> values;
  std::size_t nrows = 0;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    const auto fields = split_csv_line(line);
    if (fields.size() != ncols) {
      std::ostringstream msg;
      msg << "load_csv: line " << line_no << " has " << fields.size()
          << " fields, expected " << ncols;
      throw ParseError(msg.str());
    }
    for (std::size_t c = 0; c < ncols; ++c) {
      values.push_back(parse_cell(fields[c], line_no, c));
    }
    ++nrows;
  }

  const Eigen::Index n = static_cast<Eigen::Index>(nrows);
  if (n <= K_file) {
    std::ostringstream msg;
    msg << "load_csv: need n > K, got n = " << n << ", K = " << K_file;
    throw DimensionError(msg.str());
  }

  Eigen::VectorXd y(n);
  Eigen::MatrixXd Y(n, p_file);
  Eigen::MatrixXd Z(n, K_file);
  for (Eigen::Index i = 0; i < n; ++i) {
    const std::size_t base = static_cast<std::size_t>(i) * ncols;
    y(i) = values[base];
    for (Eigen::Index j = 0; j < p_file; ++j) {
      Y(i, j) = values[base + 1 + static_cast<std::size_t>(j)];
    }
    for (Eigen::Index j = 0; j < K_file; ++j) {
      Z(i, j) = values[base + 1 + static_cast<std::size_t>(p_file + j)];
    }
  }
  return IVDataset(std::move(y), std::move(Y), std::move(Z));
}

void write_csv(const IVDataset& ds, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("write_csv: cannot open file for writing: " + path);

  out << "y";
  for (Eigen::Index j = 0; j < ds.p(); ++j) out << ",Y" << (j + 1);
  for (Eigen::Index j = 0; j < ds.K(); ++j) out << ",Z" << (j + 1);
  out << "\n";

  char buf[64];
  auto emit = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
  };
  for (Eigen::Index i = 0; i < ds.n(); ++i) {
    emit(ds.y()(i));
    for (Eigen::Index j = 0; j < ds.p(); ++j) {
      out << ',';
      emit(ds.Y()(i, j));
    }
    for (Eigen::Index j = 0; j < ds.K(); ++j) {
      out << ',';
      emit(ds.Z()(i, j));
    }
    out << "\n";
  }
  if (!out) throw Error("write_csv: write failed: " + path);
}

DatasetMeta validate(const IVDataset& ds) {
  const Eigen::Index rank = instrument_rank(ds.Z());
  if (rank < ds.K()) {
    std::ostringstream msg;
    msg << "validate: instrument matrix is rank deficient, numerical rank "
        << rank << " < K = " << ds.K();
    throw RankError(msg.str(), static_cast<long>(rank));
  }
  DatasetMeta meta;
  meta.n = ds.n();
  meta.K = ds.K();
  meta.p = ds.p();
  meta.alpha_hat = static_cast<double>(ds.K()) / static_cast<double>(ds.n());
  meta.many_iv_flag = meta.alpha_hat >= 0.05;
  return meta;
}

}  // namespace manyiv
