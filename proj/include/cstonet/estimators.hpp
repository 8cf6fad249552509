#pragma once

// Causal quantities read off a fitted network: propensity, potential outcomes,
// the AIPW average treatment effect with its variance and Wald interval, CATE
// and the covariate sets feeding the treatment and outcome units.

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <optional>
#include <ostream>
#include <string>
#include <tuple>
#include <vector>

#include "cstonet/dataset.hpp"
#include "cstonet/errors.hpp"
#include "cstonet/network.hpp"
#include "cstonet/trainer.hpp"

namespace cstonet {

inline constexpr double kDefaultClip = 0.01;

// A network with its mask already applied.
struct Predictor {
  NetworkConfig config;
  NetworkParameters params;

  static Predictor from(const FittedModel& f) { return {f.config, f.masked_params()}; }
};

inline double propensity_unclipped(const Predictor& m, const Eigen::VectorXd& x) {
  if (!m.config.treatment) throw StructuralError("network has no treatment unit");
  const ForwardPass fp = forward_unchecked(m.config, m.params, x, 0);
  return sigmoid(fp.propensity_logit);
}

inline double clip_propensity(double p, double kappa) {
  if (!(kappa >= 0.0 && kappa < 0.5)) throw ParameterError("clip constant must lie in [0, 0.5)");
  return std::clamp(p, kappa, 1.0 - kappa);
}

inline double propensity(const Predictor& m, const Eigen::VectorXd& x, double kappa = kDefaultClip) {
  return clip_propensity(propensity_unclipped(m, x), kappa);
}

inline double propensity(const FittedModel& f, const Eigen::VectorXd& x, double kappa = kDefaultClip) {
  return propensity(Predictor::from(f), x, kappa);
}

// Network mean for (x, a); a probability for logistic outputs.
inline double outcome(const Predictor& m, const Eigen::VectorXd& x, int a) {
  if (a != 0 && a != 1) throw InputError("treatment must be 0 or 1");
  if (x.size() != m.config.input_dim()) throw StructuralError("covariate vector has the wrong length");
  const ForwardPass fp = forward_unchecked(m.config, m.params, x, a);
  const double out = fp.output(0);
  if (m.config.output_kind == OutputKind::logistic) {
    return sigmoid(out);
  }
  return out;
}

inline double outcome(const FittedModel& f, const Eigen::VectorXd& x, int a) {
  return outcome(Predictor::from(f), x, a);
}

inline double cate(const Predictor& m, const Eigen::VectorXd& x) { return outcome(m, x, 1) - outcome(m, x, 0); }

inline double cate(const FittedModel& f, const Eigen::VectorXd& x) { return cate(Predictor::from(f), x); }

// Per-sample model outputs used by the AIPW formulas.
struct NuisancePredictions {
  Eigen::VectorXd p1;   // clipped P(A=1 | x)
  Eigen::VectorXd mu1;  // mu_hat(x, 1)
  Eigen::VectorXd mu0;  // mu_hat(x, 0)
};

inline NuisancePredictions predict_nuisances(const Predictor& m, const Dataset& d, double kappa) {
  if (d.n() == 0) throw InputError("empty dataset");
  if (d.has_missing()) throw InputError("dataset has missing covariates; impute them first");
  if (d.p() != m.config.input_dim()) throw InputError("dataset covariate count does not match the network");
  NuisancePredictions out;
  out.p1.resize(d.n());
  out.mu1.resize(d.n());
  out.mu0.resize(d.n());
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    const Eigen::VectorXd x = d.covariates.row(i).transpose();
    out.p1(i) = propensity(m, x, kappa);
    out.mu1(i) = outcome(m, x, 1);
    out.mu0(i) = outcome(m, x, 0);
  }
  return out;
}

struct AteEstimate {
  double tau_hat = 0.0;
  double v_hat = 0.0;
  long n = 0;
  double ci_lower = 0.0;
  double ci_upper = 0.0;
  double alpha = 0.05;
  double kappa = kDefaultClip;
  Eigen::VectorXd influence;  // bracketed AIPW term per sample; tau_hat is its mean
  // Diagnostics.
  double mu1_aipw = 0.0;      // AIPW mean of Y(1)
  double mu0_aipw = 0.0;      // AIPW mean of Y(0)
  double treated_fraction = 0.0;
  double plugin = 0.0;        // mean(mu_hat(x,1) - mu_hat(x,0))
  int completions = 1;        // imputation draws averaged over
};

// tau_hat = (1/n) sum [ A y / p - (A - p)/p mu1 - (1-A) y/(1-p) - (A - p)/(1-p) mu0 ]
inline Eigen::VectorXd aipw_terms(const NuisancePredictions& nu, const std::vector<int>& a, const Eigen::VectorXd& y) {
  const Eigen::Index n = y.size();
  if (nu.p1.size() != n || static_cast<Eigen::Index>(a.size()) != n) throw InputError("length mismatch in AIPW inputs");
  Eigen::VectorXd t(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ai = a[static_cast<std::size_t>(i)];
    const double p = nu.p1(i);
    t(i) = ai * y(i) / p - (ai - p) / p * nu.mu1(i) - (1.0 - ai) * y(i) / (1.0 - p) - (ai - p) / (1.0 - p) * nu.mu0(i);
  }
  return t;
}

// E_n[ 1(A=1)(y-mu1)^2/p1^2 + 1(A=0)(y-mu0)^2/p0^2 ] + E_n[ ((mu1(x)-mu1) - (mu0(x)-mu0))^2 ]
// where mu_a are the AIPW means E_n[ 1(A=a)(y-mu_a(x))/p_a(x) + mu_a(x) ].
inline double variance_from_predictions(const NuisancePredictions& nu, const std::vector<int>& a,
                                        const Eigen::VectorXd& y, double* mu1_out = nullptr,
                                        double* mu0_out = nullptr) {
  const Eigen::Index n = y.size();
  if (n == 0) throw InputError("empty dataset");
  double m1 = 0.0, m0 = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool t = a[static_cast<std::size_t>(i)] == 1;
    const double p1 = nu.p1(i), p0 = 1.0 - nu.p1(i);
    m1 += (t ? (y(i) - nu.mu1(i)) / p1 : 0.0) + nu.mu1(i);
    m0 += (!t ? (y(i) - nu.mu0(i)) / p0 : 0.0) + nu.mu0(i);
  }
  m1 /= static_cast<double>(n);
  m0 /= static_cast<double>(n);
  double first = 0.0, second = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const bool t = a[static_cast<std::size_t>(i)] == 1;
    const double p1 = nu.p1(i), p0 = 1.0 - nu.p1(i);
    if (t) {
      const double r = y(i) - nu.mu1(i);
      first += r * r / (p1 * p1);
    } else {
      const double r = y(i) - nu.mu0(i);
      first += r * r / (p0 * p0);
    }
    const double c = (nu.mu1(i) - m1) - (nu.mu0(i) - m0);
    second += c * c;
  }
  if (mu1_out) *mu1_out = m1;
  if (mu0_out) *mu0_out = m0;
  return (first + second) / static_cast<double>(n);
}

inline double normal_quantile(double p) {
  return boost::math::quantile(boost::math::normal_distribution<double>(0.0, 1.0), p);
}

// tau_hat +/- z_{1-alpha/2} sqrt(v_hat / n)
inline std::pair<double, double> confidence_interval(double tau_hat, double v_hat, long n, double alpha) {
  if (n < 1) throw InputError("confidence interval needs n >= 1");
  if (!(v_hat >= 0.0)) throw ParameterError("variance estimate must be nonnegative");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ParameterError("alpha must lie in (0, 1]");
  const double c = alpha == 1.0 ? 0.0 : normal_quantile(1.0 - alpha / 2.0);
  const double half = c * std::sqrt(v_hat / static_cast<double>(n));
  return {tau_hat - half, tau_hat + half};
}

inline AteEstimate ate_from_predictions(const NuisancePredictions& nu, const std::vector<int>& a,
                                        const Eigen::VectorXd& y, double kappa, double alpha) {
  AteEstimate e;
  e.n = static_cast<long>(y.size());
  if (e.n == 0) throw InputError("empty dataset");
  e.kappa = kappa;
  e.alpha = alpha;
  e.influence = aipw_terms(nu, a, y);
  e.tau_hat = e.influence.mean();
  e.v_hat = variance_from_predictions(nu, a, y, &e.mu1_aipw, &e.mu0_aipw);
  e.treated_fraction = static_cast<double>(std::count(a.begin(), a.end(), 1)) / static_cast<double>(e.n);
  e.plugin = (nu.mu1 - nu.mu0).mean();
  std::tie(e.ci_lower, e.ci_upper) = confidence_interval(e.tau_hat, e.v_hat, e.n, alpha);
  if (!std::isfinite(e.tau_hat) || !std::isfinite(e.v_hat)) throw NumericError("non-finite ATE estimate");
  return e;
}

inline AteEstimate aipw_ate(const Predictor& m, const Dataset& d, double kappa = kDefaultClip, double alpha = 0.05) {
  return ate_from_predictions(predict_nuisances(m, d, kappa), d.treatment, d.outcome, kappa, alpha);
}

inline double variance_estimate(const Predictor& m, const Dataset& d, double kappa = kDefaultClip) {
  return variance_from_predictions(predict_nuisances(m, d, kappa), d.treatment, d.outcome);
}

struct ImputationOptions {
  int draws = 30;
  int burn_in = 20;
  std::uint64_t seed = 1;
};

// Complete-data datasets go straight through. With missing covariates, tau_hat,
// V_hat and the influence terms are averaged over imputation draws, each made
// with a trajectory parameter set.
inline AteEstimate aipw_ate(const FittedModel& f, const Dataset& d, double kappa = kDefaultClip,
                            double alpha = 0.05, const ImputationOptions& imp = {}) {
  if (!d.has_missing()) return aipw_ate(Predictor::from(f), d, kappa, alpha);
  const auto completions = impute_completions(f, d, imp.draws, imp.burn_in, imp.seed);
  AteEstimate acc;
  Eigen::VectorXd infl = Eigen::VectorXd::Zero(d.n());
  double tau = 0, v = 0, m1 = 0, m0 = 0, plug = 0;
  for (const auto& [theta, comp] : completions) {
    const AteEstimate e = aipw_ate(Predictor{f.config, theta}, comp, kappa, alpha);
    tau += e.tau_hat;
    v += e.v_hat;
    m1 += e.mu1_aipw;
    m0 += e.mu0_aipw;
    plug += e.plugin;
    infl += e.influence;
    acc.treated_fraction = e.treated_fraction;
  }
  const double k = static_cast<double>(completions.size());
  acc.n = static_cast<long>(d.n());
  acc.kappa = kappa;
  acc.alpha = alpha;
  acc.tau_hat = tau / k;
  acc.v_hat = v / k;
  acc.mu1_aipw = m1 / k;
  acc.mu0_aipw = m0 / k;
  acc.plugin = plug / k;
  acc.influence = infl / k;
  acc.completions = static_cast<int>(completions.size());
  std::tie(acc.ci_lower, acc.ci_upper) = confidence_interval(acc.tau_hat, acc.v_hat, acc.n, alpha);
  return acc;
}

inline double variance_estimate(const FittedModel& f, const Dataset& d, double kappa = kDefaultClip) {
  return aipw_ate(f, d, kappa).v_hat;
}

// Covariates (0-based) feeding the treatment and outcome units.
struct SelectionReport {
  std::vector<int> treatment_model_covariates;
  std::vector<int> outcome_model_covariates;
};

namespace detail {

// reach[l][k]: node k of layer l has an unmasked path to one of the targets in
// layer `top`. Weight (l, k <- l-1, j) is an edge when its mask entry is set.
inline std::vector<std::vector<char>> backward_reach(const NetworkConfig& c, const SparsityMask& mask, int top,
                                                     const std::vector<int>& targets) {
  std::vector<std::vector<char>> reach(static_cast<std::size_t>(top + 1));
  for (int l = 0; l <= top; ++l) reach[static_cast<std::size_t>(l)].assign(static_cast<std::size_t>(c.width(l)), 0);
  for (int k : targets) reach[static_cast<std::size_t>(top)][static_cast<std::size_t>(k)] = 1;
  for (int l = top; l >= 1; --l) {
    const auto& w = mask.weights[static_cast<std::size_t>(l - 1)];
    const auto& above = reach[static_cast<std::size_t>(l)];
    auto& below = reach[static_cast<std::size_t>(l - 1)];
    for (Eigen::Index k = 0; k < w.rows(); ++k) {
      if (!above[static_cast<std::size_t>(k)]) continue;
      for (Eigen::Index j = 0; j < w.cols(); ++j) {
        if (w(k, j) != 0.0) below[static_cast<std::size_t>(j)] = 1;
      }
    }
  }
  return reach;
}

inline std::vector<int> reached_inputs(const std::vector<std::vector<char>>& reach) {
  std::vector<int> out;
  for (std::size_t j = 0; j < reach[0].size(); ++j) {
    if (reach[0][j]) out.push_back(static_cast<int>(j));
  }
  return out;
}

}  // namespace detail

inline SelectionReport selected_covariates(const NetworkConfig& c, const SparsityMask& mask) {
  mask.check_shape(c, "mask");
  SelectionReport r;
  if (c.treatment) {
    r.treatment_model_covariates =
        detail::reached_inputs(detail::backward_reach(c, mask, c.treatment->layer, {c.treatment->position}));
  }
  std::vector<int> outputs(static_cast<std::size_t>(c.output_dim()));
  for (int k = 0; k < c.output_dim(); ++k) outputs[static_cast<std::size_t>(k)] = k;
  r.outcome_model_covariates = detail::reached_inputs(detail::backward_reach(c, mask, c.num_layers(), outputs));
  return r;
}

inline SelectionReport selected_covariates(const FittedModel& f) { return selected_covariates(f.config, f.mask); }

// True when some unmasked path leads from the treatment unit to the output.
inline bool treatment_reaches_output(const NetworkConfig& c, const SparsityMask& mask) {
  if (!c.treatment) return false;
  std::vector<int> outputs(static_cast<std::size_t>(c.output_dim()));
  for (int k = 0; k < c.output_dim(); ++k) outputs[static_cast<std::size_t>(k)] = k;
  const auto reach = detail::backward_reach(c, mask, c.num_layers(), outputs);
  return reach[static_cast<std::size_t>(c.treatment->layer)][static_cast<std::size_t>(c.treatment->position)] != 0;
}

inline std::string format_index_set(const std::vector<int>& s) {
  std::string out;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += ' ';
    out += std::to_string(s[i] + 1);
  }
  return out;
}

// key=value lines in a fixed order; covariate sets are 1-based.
inline void write_estimate_report(std::ostream& out, const AteEstimate& e, const SelectionReport& s) {
  auto kv = [&](const char* k, const std::string& v) { out << k << '=' << v << '\n'; };
  kv("tau_hat", format_double(e.tau_hat));
  kv("v_hat", format_double(e.v_hat));
  kv("n", std::to_string(e.n));
  kv("alpha", format_double(e.alpha));
  kv("ci_lower", format_double(e.ci_lower));
  kv("ci_upper", format_double(e.ci_upper));
  kv("ci_half_width", format_double(0.5 * (e.ci_upper - e.ci_lower)));
  kv("kappa", format_double(e.kappa));
  kv("mu1_aipw", format_double(e.mu1_aipw));
  kv("mu0_aipw", format_double(e.mu0_aipw));
  kv("treated_fraction", format_double(e.treated_fraction));
  kv("plugin_ate", format_double(e.plugin));
  kv("completions", std::to_string(e.completions));
  if (e.influence.size() > 0) {
    const double mean = e.influence.mean();
    const double sd = e.influence.size() > 1
                          ? std::sqrt((e.influence.array() - mean).square().sum() / static_cast<double>(e.influence.size() - 1))
                          : 0.0;
    kv("influence_mean", format_double(mean));
    kv("influence_sd", format_double(sd));
    kv("influence_min", format_double(e.influence.minCoeff()));
    kv("influence_max", format_double(e.influence.maxCoeff()));
  }
  kv("treatment_covariates", format_index_set(s.treatment_model_covariates));
  kv("outcome_covariates", format_index_set(s.outcome_model_covariates));
}

}  // namespace cstonet
