#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cstonet/errors.hpp"
#include "cstonet/network.hpp"

namespace cstonet {

// Ground truth attached to simulated data. Covariate indices are 0-based.
struct Truth {
  std::optional<double> ate;
  std::vector<double> cate;        // per sample
  std::vector<double> propensity;  // per sample
  std::vector<int> treatment_set;
  std::vector<int> outcome_set;
};

using ObservedMask = Eigen::Matrix<std::uint8_t, Eigen::Dynamic, Eigen::Dynamic>;

struct Dataset {
  Eigen::MatrixXd covariates;  // n x p; missing cells hold NaN
  ObservedMask observed;       // n x p; 1 = observed
  std::vector<int> treatment;  // 0/1
  Eigen::VectorXd outcome;
  std::optional<Truth> truth;

  Eigen::Index n() const { return covariates.rows(); }
  Eigen::Index p() const { return covariates.cols(); }

  bool has_missing() const { return (observed.array() == 0).any(); }

  Eigen::Index missing_count() const { return (observed.array() == 0).count(); }

  std::vector<int> missing_indices(Eigen::Index row) const {
    std::vector<int> out;
    for (Eigen::Index j = 0; j < p(); ++j) {
      if (observed(row, j) == 0) out.push_back(static_cast<int>(j));
    }
    return out;
  }

  // Row as a network sample; missing entries stay NaN until imputed.
  Sample sample(Eigen::Index row) const {
    Sample s;
    s.x = covariates.row(row).transpose();
    s.treatment = treatment[static_cast<std::size_t>(row)];
    s.outcome = Eigen::VectorXd::Constant(1, outcome(row));
    return s;
  }

  void validate() const {
    if (observed.rows() != covariates.rows() || observed.cols() != covariates.cols()) {
      throw InputError("missingness mask shape does not match the covariates");
    }
    if (static_cast<Eigen::Index>(treatment.size()) != n() || outcome.size() != n()) {
      throw InputError("treatment/outcome length does not match the covariate rows");
    }
    for (int a : treatment) {
      if (a != 0 && a != 1) throw InputError("treatment entries must be 0 or 1");
    }
    for (Eigen::Index i = 0; i < n(); ++i) {
      if (!std::isfinite(outcome(i))) throw InputError("outcome row " + std::to_string(i + 1) + " is not finite");
      for (Eigen::Index j = 0; j < p(); ++j) {
        if (observed(i, j) != 0 && !std::isfinite(covariates(i, j))) {
          throw InputError("observed covariate at row " + std::to_string(i + 1) + " is not finite");
        }
      }
    }
    if (truth) {
      const auto nn = static_cast<std::size_t>(n());
      if (!truth->cate.empty() && truth->cate.size() != nn) throw InputError("truth CATE length mismatch");
      if (!truth->propensity.empty() && truth->propensity.size() != nn) {
        throw InputError("truth propensity length mismatch");
      }
    }
  }

  // Rows [begin, end) as a new dataset (truth vectors sliced alongside).
  Dataset slice(Eigen::Index begin, Eigen::Index end) const {
    Dataset d;
    d.covariates = covariates.middleRows(begin, end - begin);
    d.observed = observed.middleRows(begin, end - begin);
    d.treatment.assign(treatment.begin() + begin, treatment.begin() + end);
    d.outcome = outcome.segment(begin, end - begin);
    if (truth) {
      Truth t = *truth;
      if (!t.cate.empty()) t.cate.assign(truth->cate.begin() + begin, truth->cate.begin() + end);
      if (!t.propensity.empty()) {
        t.propensity.assign(truth->propensity.begin() + begin, truth->propensity.begin() + end);
      }
      d.truth = std::move(t);
    }
    return d;
  }
};

inline Dataset make_dataset(Eigen::MatrixXd covariates, std::vector<int> treatment, Eigen::VectorXd outcome) {
  Dataset d;
  d.observed = ObservedMask::Ones(covariates.rows(), covariates.cols());
  d.covariates = std::move(covariates);
  d.treatment = std::move(treatment);
  d.outcome = std::move(outcome);
  return d;
}

// Shortest text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

// CSV layout: header x1..xp,A,Y; missing covariates are empty cells.
inline void write_csv(std::ostream& out, const Dataset& d) {
  for (Eigen::Index j = 0; j < d.p(); ++j) out << 'x' << (j + 1) << ',';
  out << "A,Y\n";
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    for (Eigen::Index j = 0; j < d.p(); ++j) {
      if (d.observed(i, j) != 0) out << format_double(d.covariates(i, j));
      out << ',';
    }
    out << d.treatment[static_cast<std::size_t>(i)] << ',' << format_double(d.outcome(i)) << '\n';
  }
}

inline void write_csv(const std::string& path, const Dataset& d) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  write_csv(out, d);
  if (!out) throw IoError("write failed for '" + path + "'");
}

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.emplace_back();
  return cells;
}

inline double parse_cell(const std::string& s, std::size_t row, const std::string& col) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw InputError("row " + std::to_string(row) + ", column " + col + ": cannot parse '" + s + "'");
  }
  return v;
}

}  // namespace detail

inline Dataset read_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw InputError("empty CSV");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_csv_line(line);
  const std::size_t cols = header.size();
  if (cols < 3 || header[cols - 2] != "A" || header[cols - 1] != "Y") {
    throw InputError("CSV header must be x1..xp,A,Y");
  }
  for (std::size_t j = 0; j + 2 < cols; ++j) {
    if (header[j] != "x" + std::to_string(j + 1)) throw InputError("unexpected column name '" + header[j] + "'");
  }
  const std::size_t p = cols - 2;
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (cells.size() != cols) {
      throw InputError("row " + std::to_string(rows.size() + 1) + " has " + std::to_string(cells.size()) +
                       " cells, expected " + std::to_string(cols));
    }
    rows.push_back(std::move(cells));
  }
  const auto n = static_cast<Eigen::Index>(rows.size());
  Dataset d;
  d.covariates.resize(n, static_cast<Eigen::Index>(p));
  d.observed = ObservedMask::Ones(n, static_cast<Eigen::Index>(p));
  d.outcome.resize(n);
  d.treatment.resize(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    for (std::size_t j = 0; j < p; ++j) {
      const auto c = static_cast<Eigen::Index>(j);
      if (rows[i][j].empty()) {
        d.covariates(r, c) = std::numeric_limits<double>::quiet_NaN();
        d.observed(r, c) = 0;
      } else {
        d.covariates(r, c) = detail::parse_cell(rows[i][j], i + 1, header[j]);
      }
    }
    const double a = detail::parse_cell(rows[i][p], i + 1, "A");
    if (a != 0.0 && a != 1.0) throw InputError("row " + std::to_string(i + 1) + ": treatment must be 0 or 1");
    d.treatment[i] = static_cast<int>(a);
    d.outcome(r) = detail::parse_cell(rows[i][p + 1], i + 1, "Y");
  }
  d.validate();
  return d;
}

inline Dataset read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return read_csv(in);
}

}  // namespace cstonet
