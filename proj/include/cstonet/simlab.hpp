#pragma once

// Synthetic benchmarks and evaluation metrics.
//
//   gen_varying_size   p = 1000 correlated covariates, bounded propensity,
//                      heterogeneous effect tau + eta(x)
//   gen_ar2_missing    p = 100 AR(2) covariates with nonlinear treatment and
//                      outcome; optional MAR / MNAR deletion in x1 and x4
//   gen_linear_gaussian  linear calibration data with a known constant effect

#include <Eigen/Dense>
#include <boost/math/distributions/normal.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iterator>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cstonet/dataset.hpp"
#include "cstonet/errors.hpp"
#include "cstonet/network.hpp"
#include "cstonet/rng.hpp"

namespace cstonet {

// E[f(x1) f(x2)] under the balanced covariate law of gen_varying_size, with
// f(x) = 2 / (1 + exp(-x + 0.5)). Gauss-Hermite quadrature (60^4 nodes); a
// 1e7-draw Monte Carlo check lives in the tests.
inline constexpr double kVaryingSizeEtaCentre = 0.72208866826839579;
inline constexpr double kVaryingSizeTau = 3.0;

// E[Y(1) - Y(0)] for gen_ar2_missing, 1e7 weighted Monte Carlo draws.
inline constexpr double kAr2Ate = 3.16017;
inline constexpr double kAr2AteStandardError = 7.8e-4;

struct SimSplits {
  Dataset train, val, test;
};

namespace detail {

inline double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

// Beta(2, 4) CDF: sum_{j=2}^{5} C(5, j) u^j (1-u)^{5-j}.
inline double beta24_cdf(double u) {
  if (u <= 0.0) return 0.0;
  if (u >= 1.0) return 1.0;
  const double v = 1.0 - u;
  return 10.0 * u * u * v * v * v + 10.0 * u * u * u * v * v + 5.0 * u * u * u * u * v + u * u * u * u * u;
}

template <class Rng>
double truncated_normal(Rng& rng, double lo, double hi) {
  std::normal_distribution<double> n(0.0, 1.0);
  for (;;) {
    const double z = n(rng);
    if (z >= lo && z <= hi) return z;
  }
}

inline void check_sizes(long n_train, long n_val, long n_test) {
  if (n_train < 2 || n_val < 0 || n_test < 0) throw InputError("split sizes must be n_train >= 2, n_val >= 0, n_test >= 0");
}

// Draws rows until each arm holds its half. `draw` fills x and returns the
// treatment probability; `finish` then produces (y, cate) for the accepted row.
template <class Rng>
Dataset balanced_draw(long n, int p, Rng& rng, const std::function<double(Rng&, Eigen::VectorXd&)>& draw,
                      const std::function<std::pair<double, double>(Rng&, const Eigen::VectorXd&, int)>& finish) {
  Dataset d;
  d.covariates.resize(n, p);
  d.observed = ObservedMask::Ones(n, p);
  d.outcome.resize(n);
  d.treatment.resize(static_cast<std::size_t>(n));
  Truth t;
  t.cate.resize(static_cast<std::size_t>(n));
  t.propensity.resize(static_cast<std::size_t>(n));
  long want1 = n / 2, want0 = n - n / 2;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Eigen::VectorXd x(p);
  long row = 0;
  while (row < n) {
    const double ps = draw(rng, x);
    const int a = unif(rng) < ps ? 1 : 0;
    long& room = a == 1 ? want1 : want0;
    if (room == 0) continue;
    --room;
    const auto [y, tau] = finish(rng, x, a);
    d.covariates.row(row) = x.transpose();
    d.treatment[static_cast<std::size_t>(row)] = a;
    d.outcome(row) = y;
    t.cate[static_cast<std::size_t>(row)] = tau;
    t.propensity[static_cast<std::size_t>(row)] = ps;
    ++row;
  }
  d.truth = std::move(t);
  return d;
}

}  // namespace detail

inline double varying_size_f(double x) { return 2.0 / (1.0 + std::exp(-x + 0.5)); }

inline double varying_size_propensity(const Eigen::VectorXd& x) {
  const double u = (detail::std_normal_cdf(x(0)) + detail::std_normal_cdf(x(2)) + detail::std_normal_cdf(x(4))) / 3.0;
  return 0.25 * (1.0 + detail::beta24_cdf(u));
}

inline double varying_size_cate(const Eigen::VectorXd& x) {
  return kVaryingSizeTau + varying_size_f(x(0)) * varying_size_f(x(1)) - kVaryingSizeEtaCentre;
}

inline SimSplits gen_varying_size(long n_train, long n_val, long n_test, std::uint64_t seed, int p = 1000) {
  detail::check_sizes(n_train, n_val, n_test);
  if (p < 5) throw InputError("gen_varying_size needs p >= 5");
  using Rng = SplitMix64;
  auto draw = [p](Rng& rng, Eigen::VectorXd& x) {
    const double e = detail::truncated_normal(rng, -10.0, 10.0);
    for (int j = 0; j < p; ++j) x(j) = (e + detail::truncated_normal(rng, -10.0, 10.0)) / std::sqrt(2.0);
    return varying_size_propensity(x);
  };
  auto finish = [](Rng& rng, const Eigen::VectorXd& x, int a) {
    std::normal_distribution<double> n(0.0, 1.0);
    const double tau = varying_size_cate(x);
    const double y = 5.0 * x(2) / (1.0 + x(3) * x(3)) + 2.0 * x(4) + tau * a + 0.25 * n(rng);
    return std::make_pair(y, tau);
  };
  SimSplits s;
  Dataset* parts[3] = {&s.train, &s.val, &s.test};
  const long sizes[3] = {n_train, n_val, n_test};
  for (std::uint64_t k = 0; k < 3; ++k) {
    Rng rng = make_stream(seed, {stream::kData, 1, k});
    *parts[k] = detail::balanced_draw<Rng>(sizes[k], p, rng, draw, finish);
    parts[k]->truth->ate = kVaryingSizeTau;
    parts[k]->truth->treatment_set = {0, 2, 4};
    parts[k]->truth->outcome_set = {0, 1, 2, 3, 4};
  }
  return s;
}

enum class MissingScenario { complete, mar, mnar };

inline MissingScenario parse_missing_scenario(const std::string& s) {
  if (s == "complete") return MissingScenario::complete;
  if (s == "mar") return MissingScenario::mar;
  if (s == "mnar") return MissingScenario::mnar;
  throw InputError("unknown scenario '" + s + "' (complete, mar, mnar)");
}

inline std::string to_string(MissingScenario s) {
  return s == MissingScenario::complete ? "complete" : s == MissingScenario::mar ? "mar" : "mnar";
}

// Banded AR(2) precision: 1 on the diagonal, 0.5 at |i-j| = 1, 0.25 at |i-j| = 2.
inline Eigen::MatrixXd ar2_precision(int p) {
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(p, p);
  for (int i = 0; i < p; ++i) {
    c(i, i) = 1.0;
    if (i + 1 < p) c(i, i + 1) = c(i + 1, i) = 0.5;
    if (i + 2 < p) c(i, i + 2) = c(i + 2, i) = 0.25;
  }
  return c;
}

inline double ar2_treatment_logit(const Eigen::VectorXd& x) {
  return std::tanh(-x(0) - 2.0 * x(4)) - std::tanh(2.0 * x(1) - 2.0 * x(2));
}

inline double ar2_mean_outcome(const Eigen::VectorXd& x, int a) {
  const double x1 = x(0), x2 = x(1), x3 = x(2), x4 = x(3), x5 = x(4);
  const double t23 = std::tanh(2.0 * x2 - 2.0 * x3);
  return -4.0 * std::tanh(std::tanh(-2.0 * std::tanh(2.0 * x1 + x4) + t23) - 2.0 * a) +
         2.0 * std::tanh(-a + 2.0 * std::tanh(t23 - 2.0 * std::tanh(-2.0 * x4 + x5)));
}

inline double ar2_cate(const Eigen::VectorXd& x) { return ar2_mean_outcome(x, 1) - ar2_mean_outcome(x, 0); }

// MNAR success logits for keeping x1 and x4:
//   4 - 2A + sum_{j=1}^{50} (-0.1)^{j-1} x_{2j-1}   and   4 - 2A + sum_{j=1}^{50} (-0.1)^j x_{2j}
inline std::pair<double, double> ar2_mnar_logits(const Eigen::VectorXd& x, int a) {
  double s1 = 4.0 - 2.0 * a, s4 = 4.0 - 2.0 * a;
  double pw = 1.0;  // (-0.1)^{j-1}
  for (int j = 1; 2 * j <= x.size(); ++j) {
    s1 += pw * x(2 * j - 2);
    s4 += -0.1 * pw * x(2 * j - 1);
    pw *= -0.1;
  }
  return {s1, s4};
}

inline SimSplits gen_ar2_missing(long n_train, long n_val, long n_test, std::uint64_t seed,
                                 MissingScenario scenario, int p = 100) {
  detail::check_sizes(n_train, n_val, n_test);
  if (p < 5) throw InputError("gen_ar2_missing needs p >= 5");
  if (scenario == MissingScenario::mnar && p % 2 != 0) throw InputError("the MNAR scenario needs an even p");
  using Rng = SplitMix64;
  // x = L^{-T} u with C = L L^T gives cov(x) = C^{-1}.
  const Eigen::LLT<Eigen::MatrixXd> llt(ar2_precision(p));
  const Eigen::MatrixXd upper = llt.matrixU();
  auto draw = [&upper, p](Rng& rng, Eigen::VectorXd& x) {
    std::normal_distribution<double> n(0.0, 1.0);
    for (int j = 0; j < p; ++j) x(j) = n(rng);
    upper.triangularView<Eigen::Upper>().solveInPlace(x);
    return sigmoid(ar2_treatment_logit(x));
  };
  auto finish = [](Rng& rng, const Eigen::VectorXd& x, int a) {
    std::normal_distribution<double> n(0.0, 1.0);
    return std::make_pair(ar2_mean_outcome(x, a) + n(rng), ar2_cate(x));
  };
  SimSplits s;
  Dataset* parts[3] = {&s.train, &s.val, &s.test};
  const long sizes[3] = {n_train, n_val, n_test};
  for (std::uint64_t k = 0; k < 3; ++k) {
    Rng rng = make_stream(seed, {stream::kData, 2, k});
    *parts[k] = detail::balanced_draw<Rng>(sizes[k], p, rng, draw, finish);
    parts[k]->truth->ate = kAr2Ate;
    parts[k]->truth->treatment_set = {0, 1, 2, 4};
    parts[k]->truth->outcome_set = {0, 1, 2, 3, 4};
  }

  Dataset& tr = s.train;
  Rng mrng = make_stream(seed, {stream::kMissing});
  auto erase = [&tr](Eigen::Index i, Eigen::Index j) {
    tr.observed(i, j) = 0;
    tr.covariates(i, j) = std::numeric_limits<double>::quiet_NaN();
  };
  if (scenario == MissingScenario::mar) {
    const long k = n_train / 10;
    for (int col : {0, 3}) {
      std::vector<long> rows(static_cast<std::size_t>(n_train));
      std::iota(rows.begin(), rows.end(), 0L);
      // Partial Fisher-Yates: the first k entries are a uniform subset.
      for (long i = 0; i < k; ++i) {
        std::uniform_int_distribution<long> pick(i, n_train - 1);
        std::swap(rows[static_cast<std::size_t>(i)], rows[static_cast<std::size_t>(pick(mrng))]);
        erase(rows[static_cast<std::size_t>(i)], col);
      }
    }
  } else if (scenario == MissingScenario::mnar) {
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    for (Eigen::Index i = 0; i < tr.n(); ++i) {
      const Eigen::VectorXd x = tr.covariates.row(i).transpose();
      const auto [s1, s4] = ar2_mnar_logits(x, tr.treatment[static_cast<std::size_t>(i)]);
      const bool keep1 = unif(mrng) < sigmoid(s1);
      const bool keep4 = unif(mrng) < sigmoid(s4);
      if (!keep1) erase(i, 0);
      if (!keep4) erase(i, 3);
    }
  }
  return s;
}

struct LinearGaussianOptions {
  std::vector<double> beta_a;  // propensity logit coefficients; empty = default
  std::vector<double> beta_y;  // outcome coefficients; empty = default
  double tau = 1.0;
};

// Default coefficients: x1, x2 confound, x3 drives treatment only, x4 the
// outcome only; remaining covariates are noise.
inline std::vector<double> default_linear_beta_a(int p) {
  std::vector<double> b(static_cast<std::size_t>(p), 0.0);
  const double v[3] = {0.5, -0.5, 0.5};
  for (int j = 0; j < std::min(p, 3); ++j) b[static_cast<std::size_t>(j)] = v[j];
  return b;
}

inline std::vector<double> default_linear_beta_y(int p) {
  std::vector<double> b(static_cast<std::size_t>(p), 0.0);
  if (p > 0) b[0] = 1.0;
  if (p > 1) b[1] = 1.0;
  if (p > 3) b[3] = -1.0;
  return b;
}

inline Dataset gen_linear_gaussian(long n, int p, std::uint64_t seed, LinearGaussianOptions opt = {}) {
  if (n < 1 || p < 1) throw InputError("gen_linear_gaussian needs n >= 1 and p >= 1");
  if (opt.beta_a.empty()) opt.beta_a = default_linear_beta_a(p);
  if (opt.beta_y.empty()) opt.beta_y = default_linear_beta_y(p);
  if (static_cast<int>(opt.beta_a.size()) != p || static_cast<int>(opt.beta_y.size()) != p) {
    throw InputError("coefficient vectors must have length p");
  }
  const Eigen::Map<const Eigen::VectorXd> ba(opt.beta_a.data(), p), by(opt.beta_y.data(), p);
  SplitMix64 rng = make_stream(seed, {stream::kData, 3});
  std::normal_distribution<double> nrm(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Dataset d;
  d.covariates.resize(n, p);
  d.observed = ObservedMask::Ones(n, p);
  d.outcome.resize(n);
  d.treatment.resize(static_cast<std::size_t>(n));
  Truth t;
  t.ate = opt.tau;
  t.cate.assign(static_cast<std::size_t>(n), opt.tau);
  t.propensity.resize(static_cast<std::size_t>(n));
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::VectorXd x(p);
    for (int j = 0; j < p; ++j) x(j) = nrm(rng);
    const double ps = sigmoid(x.dot(ba));
    const int a = unif(rng) < ps ? 1 : 0;
    d.covariates.row(i) = x.transpose();
    d.treatment[static_cast<std::size_t>(i)] = a;
    d.outcome(i) = x.dot(by) + opt.tau * a + nrm(rng);
    t.propensity[static_cast<std::size_t>(i)] = ps;
  }
  for (int j = 0; j < p; ++j) {
    if (opt.beta_a[static_cast<std::size_t>(j)] != 0.0) t.treatment_set.push_back(j);
    if (opt.beta_y[static_cast<std::size_t>(j)] != 0.0) t.outcome_set.push_back(j);
  }
  d.truth = std::move(t);
  return d;
}

// ---- metrics ----

inline double mae_ate(const std::vector<double>& estimates, double truth) {
  if (estimates.empty()) throw InputError("no estimates");
  double s = 0.0;
  for (double e : estimates) s += std::abs(e - truth);
  return s / static_cast<double>(estimates.size());
}

inline double pehe(const std::vector<double>& cate_hat, const std::vector<double>& cate_true) {
  if (cate_hat.size() != cate_true.size()) throw InputError("CATE vectors differ in length");
  if (cate_hat.empty()) throw InputError("no CATE values");
  double s = 0.0;
  for (std::size_t i = 0; i < cate_hat.size(); ++i) s += (cate_hat[i] - cate_true[i]) * (cate_hat[i] - cate_true[i]);
  return std::sqrt(s / static_cast<double>(cate_hat.size()));
}

struct SelectionRates {
  double fsr = 0.0;
  double nsr = 0.0;
};

// FSR = sum |S_i \ S| / sum |S_i| (0 when nothing is selected),
// NSR = sum |S \ S_i| / (m |S|) (0 when S is empty).
inline SelectionRates fsr_nsr(const std::vector<std::vector<int>>& selected, const std::vector<int>& truth) {
  if (selected.empty()) throw InputError("need at least one selected set");
  std::vector<int> s = truth;
  std::sort(s.begin(), s.end());
  s.erase(std::unique(s.begin(), s.end()), s.end());
  double false_sel = 0, total_sel = 0, missed = 0;
  for (auto si : selected) {
    std::sort(si.begin(), si.end());
    si.erase(std::unique(si.begin(), si.end()), si.end());
    std::vector<int> diff;
    std::set_difference(si.begin(), si.end(), s.begin(), s.end(), std::back_inserter(diff));
    false_sel += static_cast<double>(diff.size());
    total_sel += static_cast<double>(si.size());
    diff.clear();
    std::set_difference(s.begin(), s.end(), si.begin(), si.end(), std::back_inserter(diff));
    missed += static_cast<double>(diff.size());
  }
  SelectionRates r;
  r.fsr = total_sel > 0 ? false_sel / total_sel : 0.0;
  const double total_true = static_cast<double>(s.size() * selected.size());
  r.nsr = total_true > 0 ? missed / total_true : 0.0;
  return r;
}

inline double ci_coverage(const std::vector<std::pair<double, double>>& intervals, double truth) {
  if (intervals.empty()) throw InputError("no intervals");
  long hit = 0;
  for (const auto& [lo, hi] : intervals) hit += (lo <= truth && truth <= hi) ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(intervals.size());
}

struct MetricsReport {
  std::optional<double> mae_ate;
  std::optional<double> mae_ate_sample;  // against the evaluation set's mean true CATE
  std::optional<double> pehe;
  std::optional<double> fsr_treatment, nsr_treatment;
  std::optional<double> fsr_outcome, nsr_outcome;
  std::optional<double> ci_coverage;
};

inline void write_metrics_report(std::ostream& out, const MetricsReport& m) {
  auto kv = [&](const char* k, const std::optional<double>& v) {
    if (v) out << k << '=' << format_double(*v) << '\n';
  };
  kv("mae_ate", m.mae_ate);
  kv("mae_ate_sample", m.mae_ate_sample);
  kv("pehe", m.pehe);
  kv("fsr_treatment", m.fsr_treatment);
  kv("nsr_treatment", m.nsr_treatment);
  kv("fsr_outcome", m.fsr_outcome);
  kv("nsr_outcome", m.nsr_outcome);
  kv("ci_coverage", m.ci_coverage);
}

// ---- truth sidecars ----
//
// truth.txt holds the scalar truth (key=value, sets 1-based); each split gets
// <split>_truth.csv with columns cate,propensity.

inline void write_truth_summary(std::ostream& out, const Truth& t) {
  if (t.ate) out << "ate=" << format_double(*t.ate) << '\n';
  auto set = [&](const char* k, const std::vector<int>& s) {
    out << k << '=';
    for (std::size_t i = 0; i < s.size(); ++i) out << (i ? " " : "") << s[i] + 1;
    out << '\n';
  };
  set("treatment_set", t.treatment_set);
  set("outcome_set", t.outcome_set);
}

inline void write_truth_rows(std::ostream& out, const Truth& t) {
  out << "cate,propensity\n";
  for (std::size_t i = 0; i < t.cate.size(); ++i) {
    out << format_double(t.cate[i]) << ',' << (i < t.propensity.size() ? format_double(t.propensity[i]) : "") << '\n';
  }
}

inline std::map<std::string, std::string> read_key_values(std::istream& in, const std::string& what) {
  std::map<std::string, std::string> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw IoError(what + " line " + std::to_string(lineno) + ": expected key=value");
    kv[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return kv;
}

inline std::vector<int> parse_index_set(const std::string& s) {
  std::vector<int> out;
  std::istringstream ss(s);
  int v = 0;
  while (ss >> v) {
    if (v < 1) throw InputError("covariate indices are 1-based");
    out.push_back(v - 1);
  }
  if (!ss.eof()) throw InputError("malformed index set '" + s + "'");
  return out;
}

inline Truth read_truth(const std::string& summary_path, const std::string& rows_path = "") {
  std::ifstream in(summary_path);
  if (!in) throw IoError("cannot open '" + summary_path + "'");
  const auto kv = read_key_values(in, summary_path);
  Truth t;
  if (auto it = kv.find("ate"); it != kv.end()) t.ate = std::stod(it->second);
  if (auto it = kv.find("treatment_set"); it != kv.end()) t.treatment_set = parse_index_set(it->second);
  if (auto it = kv.find("outcome_set"); it != kv.end()) t.outcome_set = parse_index_set(it->second);
  if (!rows_path.empty()) {
    std::ifstream rows(rows_path);
    if (!rows) throw IoError("cannot open '" + rows_path + "'");
    std::string line;
    std::getline(rows, line);
    if (line.rfind("cate", 0) != 0) throw IoError("'" + rows_path + "' must start with a cate,propensity header");
    while (std::getline(rows, line)) {
      if (line.empty()) continue;
      const auto comma = line.find(',');
      t.cate.push_back(std::stod(line.substr(0, comma)));
      if (comma != std::string::npos && comma + 1 < line.size()) t.propensity.push_back(std::stod(line.substr(comma + 1)));
    }
  }
  return t;
}

}  // namespace cstonet
