#pragma once

// Gaussian model for the covariates, used to impute missing entries under MAR:
// x ~ N(mean, precision^{-1}). The sampler only needs the gradient of the log
// density, -precision (x - mean), and a starting point.

#include <Eigen/Dense>

#include <cmath>
#include <vector>

#include "cstonet/dataset.hpp"
#include "cstonet/errors.hpp"

namespace cstonet {

// Neighbour lists of a banded graph: j ~ k iff 0 < |j - k| <= bandwidth.
inline std::vector<std::vector<int>> band_neighbors(int p, int bandwidth) {
  std::vector<std::vector<int>> nb(static_cast<std::size_t>(p));
  for (int j = 0; j < p; ++j) {
    for (int k = std::max(0, j - bandwidth); k <= std::min(p - 1, j + bandwidth); ++k) {
      if (k != j) nb[static_cast<std::size_t>(j)].push_back(k);
    }
  }
  return nb;
}

struct CovariateModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd precision;

  Eigen::Index dim() const { return mean.size(); }

  void validate() const {
    if (precision.rows() != mean.size() || precision.cols() != mean.size()) {
      throw StructuralError("covariate model precision has the wrong shape");
    }
    if (!precision.isApprox(precision.transpose(), 1e-12)) {
      throw ParameterError("covariate precision matrix is not symmetric");
    }
    Eigen::LLT<Eigen::MatrixXd> llt(precision);
    if (llt.info() != Eigen::Success) throw ParameterError("covariate precision matrix is not positive definite");
  }

  // d/dx_j log N(x; mean, precision^{-1})
  double log_density_gradient(const Eigen::VectorXd& x, int j) const {
    return -precision.row(j).dot(x - mean);
  }

  // Fills the missing entries of `x` with E[x_mis | x_obs].
  void conditional_mean(Eigen::VectorXd& x, const std::vector<int>& missing) const {
    if (missing.empty()) return;
    const auto m = static_cast<Eigen::Index>(missing.size());
    std::vector<char> is_missing(static_cast<std::size_t>(dim()), 0);
    for (int j : missing) is_missing[static_cast<std::size_t>(j)] = 1;
    Eigen::MatrixXd pmm(m, m);
    Eigen::VectorXd rhs(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      const int ja = missing[static_cast<std::size_t>(a)];
      for (Eigen::Index b = 0; b < m; ++b) pmm(a, b) = precision(ja, missing[static_cast<std::size_t>(b)]);
      double s = 0.0;
      for (Eigen::Index k = 0; k < dim(); ++k) {
        if (!is_missing[static_cast<std::size_t>(k)]) s += precision(ja, k) * (x(k) - mean(k));
      }
      rhs(a) = -s;
    }
    const Eigen::VectorXd delta = pmm.llt().solve(rhs);
    for (Eigen::Index a = 0; a < m; ++a) {
      const int ja = missing[static_cast<std::size_t>(a)];
      x(ja) = mean(ja) + delta(a);
    }
  }

  // Independent coordinates with the observed marginal moments.
  static CovariateModel fit_diagonal(const Dataset& d) {
    return fit(d, std::vector<std::vector<int>>(static_cast<std::size_t>(d.p())));
  }

  // Nodewise regression of each covariate on its known neighbours, using rows
  // where the covariate and all its neighbours are observed. The regression
  // coefficients and residual variances give the precision rows; the result
  // is symmetrised and nudged to positive definiteness if needed.
  static CovariateModel fit(const Dataset& d, const std::vector<std::vector<int>>& neighbors) {
    const Eigen::Index p = d.p();
    if (static_cast<Eigen::Index>(neighbors.size()) != p) throw StructuralError("neighbour list size != p");
    CovariateModel model;
    model.mean.resize(p);
    for (Eigen::Index j = 0; j < p; ++j) {
      double s = 0.0;
      Eigen::Index cnt = 0;
      for (Eigen::Index i = 0; i < d.n(); ++i) {
        if (d.observed(i, j) != 0) {
          s += d.covariates(i, j);
          ++cnt;
        }
      }
      if (cnt < 2) throw InputError("covariate x" + std::to_string(j + 1) + " has fewer than two observed values");
      model.mean(j) = s / static_cast<double>(cnt);
    }
    model.precision = Eigen::MatrixXd::Zero(p, p);
    for (Eigen::Index j = 0; j < p; ++j) {
      const auto& nb = neighbors[static_cast<std::size_t>(j)];
      const auto k = static_cast<Eigen::Index>(nb.size());
      std::vector<Eigen::Index> rows;
      for (Eigen::Index i = 0; i < d.n(); ++i) {
        bool ok = d.observed(i, j) != 0;
        for (int c : nb) ok = ok && d.observed(i, c) != 0;
        if (ok) rows.push_back(i);
      }
      if (static_cast<Eigen::Index>(rows.size()) <= k + 1) {
        throw InputError("too few complete rows to fit covariate x" + std::to_string(j + 1));
      }
      const auto m = static_cast<Eigen::Index>(rows.size());
      Eigen::MatrixXd z(m, k);
      Eigen::VectorXd t(m);
      for (Eigen::Index r = 0; r < m; ++r) {
        t(r) = d.covariates(rows[static_cast<std::size_t>(r)], j) - model.mean(j);
        for (Eigen::Index c = 0; c < k; ++c) {
          const int col = nb[static_cast<std::size_t>(c)];
          z(r, c) = d.covariates(rows[static_cast<std::size_t>(r)], col) - model.mean(col);
        }
      }
      Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
      if (k > 0) beta = (z.transpose() * z).ldlt().solve(z.transpose() * t);
      const Eigen::VectorXd resid = t - z * beta;
      const double var = resid.squaredNorm() / static_cast<double>(m - k);
      if (!(var > 0.0)) throw NumericError("degenerate residual variance for covariate x" + std::to_string(j + 1));
      model.precision(j, j) = 1.0 / var;
      for (Eigen::Index c = 0; c < k; ++c) model.precision(j, nb[static_cast<std::size_t>(c)]) = -beta(c) / var;
    }
    model.precision = 0.5 * (model.precision + model.precision.transpose()).eval();
    double ridge = 1e-8 * model.precision.diagonal().mean();
    for (int attempt = 0; attempt < 60; ++attempt) {
      Eigen::LLT<Eigen::MatrixXd> llt(model.precision);
      if (llt.info() == Eigen::Success) return model;
      model.precision.diagonal().array() += ridge;
      ridge *= 4.0;
    }
    throw NumericError("could not make the fitted covariate precision positive definite");
  }
};

}  // namespace cstonet
