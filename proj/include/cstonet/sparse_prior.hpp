#pragma once

// Spike-and-slab mixture Gaussian prior on every network parameter:
//   theta ~ lambda N(0, sigma1^2) + (1 - lambda) N(0, sigma0^2)
// All responsibility math stays in log space; with lambda around 1e-6 and a
// tiny spike variance the raw densities underflow.

#include <cmath>

#include "cstonet/errors.hpp"
#include "cstonet/network.hpp"

namespace cstonet {

struct PriorHyperparameters {
  double lambda = 1e-6;
  double sigma0_sq = 1e-5;  // spike
  double sigma1_sq = 1e-2;  // slab
  bool on_biases = true;    // biases share the prior (and pruning) with weights

  void validate() const {
    if (!(lambda > 0.0 && lambda < 1.0)) throw ParameterError("prior lambda must lie in (0,1)");
    if (!(sigma0_sq > 0.0) || !(sigma1_sq > 0.0)) throw ParameterError("prior variances must be positive");
    if (!(sigma0_sq < sigma1_sq)) throw ParameterError("spike variance must be below the slab variance");
  }
};

inline double normal_log_density(double x, double variance) {
  return -0.5 * (kLogTwoPi + std::log(variance)) - 0.5 * x * x / variance;
}

// log[lambda N(theta; 0, s1^2)] - log[(1-lambda) N(theta; 0, s0^2)]
inline double slab_log_odds(double theta, const PriorHyperparameters& h) {
  return std::log(h.lambda) - std::log1p(-h.lambda) + normal_log_density(theta, h.sigma1_sq) -
         normal_log_density(theta, h.sigma0_sq);
}

inline double slab_responsibility(double theta, const PriorHyperparameters& h) {
  return sigmoid(slab_log_odds(theta, h));
}

inline double log_prior_scalar(double theta, const PriorHyperparameters& h) {
  const double a = std::log(h.lambda) + normal_log_density(theta, h.sigma1_sq);
  const double b = std::log1p(-h.lambda) + normal_log_density(theta, h.sigma0_sq);
  const double m = std::max(a, b);
  return m + std::log(std::exp(a - m) + std::exp(b - m));
}

inline double grad_log_prior_scalar(double theta, const PriorHyperparameters& h) {
  const double r = slab_responsibility(theta, h);
  return -theta * (r / h.sigma1_sq + (1.0 - r) / h.sigma0_sq);
}

inline double log_prior(const NetworkParameters& params, const PriorHyperparameters& h) {
  h.validate();
  double total = 0.0;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    for (double v : params.weights[i].reshaped()) total += log_prior_scalar(v, h);
    if (h.on_biases) {
      for (double v : params.biases[i]) total += log_prior_scalar(v, h);
    }
  }
  return total;
}

inline NetworkParameters grad_log_prior(const NetworkParameters& params, const PriorHyperparameters& h) {
  h.validate();
  NetworkParameters g = params;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    g.weights[i] = params.weights[i].unaryExpr([&](double v) { return grad_log_prior_scalar(v, h); });
    if (h.on_biases) {
      g.biases[i] = params.biases[i].unaryExpr([&](double v) { return grad_log_prior_scalar(v, h); });
    } else {
      g.biases[i].setZero();
    }
  }
  return g;
}

// |theta| above which the slab responsibility exceeds 1/2.
inline double sparsify_threshold(const PriorHyperparameters& h) {
  h.validate();
  const double s0 = std::sqrt(h.sigma0_sq);
  const double s1 = std::sqrt(h.sigma1_sq);
  const double ratio = (1.0 - h.lambda) / h.lambda * (s1 / s0);
  if (!(ratio > 1.0)) {
    throw ParameterError("no sparsification threshold: (1-lambda) sigma1 must exceed lambda sigma0");
  }
  return std::sqrt(2.0) * s0 * s1 / std::sqrt(h.sigma1_sq - h.sigma0_sq) * std::sqrt(std::log(ratio));
}

// 1 iff |theta| > threshold (ties prune). Biases stay active when the prior
// does not cover them.
inline SparsityMask build_mask(const NetworkParameters& params, const PriorHyperparameters& h) {
  const double thr = sparsify_threshold(h);
  SparsityMask m;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    m.weights.push_back(params.weights[i].unaryExpr([thr](double v) { return std::abs(v) > thr ? 1.0 : 0.0; }));
    if (h.on_biases) {
      m.biases.push_back(params.biases[i].unaryExpr([thr](double v) { return std::abs(v) > thr ? 1.0 : 0.0; }));
    } else {
      m.biases.push_back(Eigen::VectorXd::Ones(params.biases[i].size()));
    }
  }
  return m;
}

}  // namespace cstonet
