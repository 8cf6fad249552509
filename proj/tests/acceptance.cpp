// Acceptance suite. One criterion per invocation:
//   cstonet_acceptance --criterion N [--cli PATH] [--work DIR]
// prints "criterion N: PASS|FAIL ..." and exits nonzero on failure.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include "acceptance_setups.hpp"
#include "test_util.hpp"

using namespace cstonet;
namespace fs = std::filesystem;

namespace {

// Tolerances and budgets.
constexpr double kGradRelTol = 1e-5;
constexpr double kGradBudgetSec = 10;
constexpr double kSamplerSe = 3.0;
constexpr double kSamplerVarTol = 0.10;
constexpr double kSamplerBudgetSec = 30;
constexpr double kAipwTol = 1e-12;
constexpr double kCoverageLo = 0.90, kCoverageHi = 0.99;
constexpr double kCoverageBudgetSec = 20 * 60;
constexpr double kCompleteMae = 0.05;
constexpr int kCompleteExact = 4;
constexpr double kCompleteBudgetSec = 2 * 3600;
constexpr double kMarMae = 0.20;
constexpr int kMarExact = 3;
constexpr double kMarBudgetSec = 3 * 3600;
constexpr double kTrendBudgetSec = 4 * 3600;
constexpr double kMaskBudgetSec = 5;

struct Outcome {
  bool pass = true;
  std::ostringstream detail;
  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail << " [failed: " << what << "]";
    }
  }
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double norm_rel(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

// ---- 1: gradients ----

void gradients(Outcome& o) {
  double worst_lat = 0, worst_par = 0, worst_prior = 0;
  int instance = 0;
  const double h = 1e-5;
  for (auto act : {Activation::tanh, Activation::relu}) {
    for (bool treat : {false, true}) {
      for (int rep = 0; rep < 5; ++rep, ++instance) {
        SplitMix64 rng(9000 + instance);
        auto c = testutil::make_config({4, 5, 3, 1}, act, treat);
        auto p = NetworkParameters::random(c, rng);
        const auto m = SparsityMask::dense(c);
        Sample s{testutil::normal_vector(4, rng), rep % 2, testutil::normal_vector(1, rng)};
        auto lat = testutil::jittered_latents(c, p, s.x, s.treatment, rng, 0.4);

        const auto gl = grad_latents(c, p, m, s, lat);
        std::vector<double> a, b;
        for (int l = 1; l <= c.num_hidden(); ++l) {
          auto& y = lat.hidden[static_cast<std::size_t>(l - 1)];
          for (Eigen::Index k = 0; k < c.width(l); ++k) {
            if (k == c.treatment_slot(l)) continue;
            const double y0 = y(k);
            y(k) = y0 + h;
            const double up = complete_data_log_likelihood(c, p, m, s, lat);
            y(k) = y0 - h;
            const double dn = complete_data_log_likelihood(c, p, m, s, lat);
            y(k) = y0;
            a.push_back(gl.hidden[static_cast<std::size_t>(l - 1)](k));
            b.push_back((up - dn) / (2 * h));
          }
        }
        worst_lat = std::max(worst_lat, norm_rel(a, b));

        const auto gp = grad_params(c, p, m, s, lat);
        PriorHyperparameters hyper;
        hyper.lambda = 0.1;
        hyper.sigma0_sq = 0.05;
        hyper.sigma1_sq = 1.0;
        const auto gpr = grad_log_prior(p, hyper);
        std::vector<double> pa, pb, qa, qb;
        for (std::size_t l = 0; l < p.weights.size(); ++l) {
          auto probe = [&](double& e, double g_lik, double g_prior) {
            const double e0 = e;
            e = e0 + h;
            const double up = complete_data_log_likelihood(c, p, m, s, lat), pu = log_prior(p, hyper);
            e = e0 - h;
            const double dn = complete_data_log_likelihood(c, p, m, s, lat), pd = log_prior(p, hyper);
            e = e0;
            pa.push_back(g_lik);
            pb.push_back((up - dn) / (2 * h));
            qa.push_back(g_prior);
            qb.push_back((pu - pd) / (2 * h));
          };
          for (Eigen::Index i = 0; i < p.weights[l].size(); ++i) {
            probe(p.weights[l].data()[i], gp.weights[l].data()[i], gpr.weights[l].data()[i]);
          }
          for (Eigen::Index i = 0; i < p.biases[l].size(); ++i) probe(p.biases[l](i), gp.biases[l](i), gpr.biases[l](i));
        }
        worst_par = std::max(worst_par, norm_rel(pa, pb));
        worst_prior = std::max(worst_prior, norm_rel(qa, qb));
      }
    }
  }
  o.detail << "instances=" << instance << " max_rel_err latents=" << worst_lat << " params=" << worst_par
           << " prior=" << worst_prior;
  o.require(instance == 20, "20 instances");
  o.require(worst_lat < kGradRelTol, "latent gradient");
  o.require(worst_par < kGradRelTol, "parameter gradient");
  o.require(worst_prior < kGradRelTol, "prior gradient");
}

// ---- 2: conjugate 1-1-1 sampler check ----

void sampler(Outcome& o) {
  // Y1 | x, y ~ N(m, v): 1/v = 1/s1 + w2^2/s2, m = v ((w1 x + b1)/s1 + w2 (y - b2)/s2).
  const double s1 = 0.5, s2 = 0.8, w1 = 0.7, b1 = 0.2, w2 = 1.3, b2 = -0.4, x = 1.5, y = 2.0;
  NetworkConfig c;
  c.layer_widths = {1, 1, 1};
  c.noise_variances = {s1, s2};
  c.activation = Activation::identity;
  auto p = NetworkParameters::zeros(c);
  p.weights[0](0, 0) = w1;
  p.biases[0](0) = b1;
  p.weights[1](0, 0) = w2;
  p.biases[1](0) = b2;
  const double v = 1.0 / (1.0 / s1 + w2 * w2 / s2);
  const double m = v * ((w1 * x + b1) / s1 + w2 * (y - b2) / s2);

  ImputeSettings st;
  st.lr = {0.1};
  st.friction = 2.0;
  const int chains = 8, sweeps = 5000, burn = 500, thin = 10;
  std::vector<double> draws;
  std::vector<double> chain_means;
  for (int ch = 0; ch < chains; ++ch) {
    SplitMix64 rng = make_stream(31, {static_cast<std::uint64_t>(ch)});
    LatentState lat;
    lat.hidden = {Eigen::VectorXd::Constant(1, w1 * x + b1)};
    lat.momentum = {Eigen::VectorXd::Zero(1)};
    detail::SweepWorkspace ws;
    Eigen::VectorXd xx = Eigen::VectorXd::Constant(1, x), yy = Eigen::VectorXd::Constant(1, y);
    double cm = 0;
    int cn = 0;
    for (int it = 0; it < sweeps; ++it) {
      sghmc_sweep(c, p, nullptr, yy, xx, lat, st, rng, ws);
      if (it >= burn && it % thin == 0) {
        draws.push_back(lat.hidden[0](0));
        cm += lat.hidden[0](0);
        ++cn;
      }
    }
    chain_means.push_back(cm / cn);
  }
  double mean = 0, var = 0;
  for (double d : draws) mean += d;
  mean /= static_cast<double>(draws.size());
  for (double d : draws) var += (d - mean) * (d - mean);
  var /= static_cast<double>(draws.size() - 1);
  // Standard error from the spread of independent chain means.
  double between = 0;
  for (double cm : chain_means) between += (cm - mean) * (cm - mean);
  const double se = std::sqrt(between / (chains - 1) / chains);
  o.detail << "mean=" << mean << " closed_form=" << m << " se=" << se << " var_ratio=" << var / v;
  o.require(std::abs(mean - m) <= kSamplerSe * se, "mean within 3 SE");
  o.require(std::abs(var / v - 1.0) <= kSamplerVarTol, "variance within 10%");
}

// ---- 3: AIPW ----

void aipw(Outcome& o) {
  double worst_zero = 0, worst_oracle = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    SplitMix64 rng(seed);
    std::uniform_real_distribution<double> u(0.05, 0.95);
    std::normal_distribution<double> nd(0.0, 1.0);
    const Eigen::Index n = 40 + static_cast<Eigen::Index>(seed);
    NuisancePredictions nu;
    nu.p1.resize(n);
    nu.mu1.resize(n);
    nu.mu0.resize(n);
    std::vector<int> a;
    Eigen::VectorXd y(n), yz(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      nu.p1(i) = u(rng);
      nu.mu1(i) = 1 + nd(rng);
      nu.mu0(i) = nd(rng);
      a.push_back(static_cast<int>(rng() & 1));
      y(i) = 2 * nd(rng);
      yz(i) = a.back() ? nu.mu1(i) : nu.mu0(i);
    }
    const auto ez = ate_from_predictions(nu, a, yz, 0.01, 0.05);
    worst_zero = std::max(worst_zero, std::abs(ez.tau_hat - (nu.mu1 - nu.mu0).mean()));

    long double s = 0;
    for (Eigen::Index i = 0; i < n; ++i) {
      const long double A = a[static_cast<std::size_t>(i)], P = nu.p1(i), Y = y(i), M1 = nu.mu1(i), M0 = nu.mu0(i);
      s += A * Y / P - (A - P) / P * M1 - (1 - A) * Y / (1 - P) - (A - P) / (1 - P) * M0;
    }
    const auto e = ate_from_predictions(nu, a, y, 0.01, 0.05);
    worst_oracle = std::max(worst_oracle, std::abs(e.tau_hat - static_cast<double>(s / n)));
  }
  o.detail << "datasets=100 zero_residual_err=" << worst_zero << " oracle_err=" << worst_oracle;
  o.require(worst_zero <= kAipwTol, "zero-residual identity");
  o.require(worst_oracle <= kAipwTol, "transcription oracle");
}

// ---- 4: coverage ----

void coverage(Outcome& o) {
  const int reps = 200, n = 500, p = 10;
  const double tau = 1.0;
  std::vector<std::pair<double, double>> cis;
  double width = 0;
  for (int r = 0; r < reps; ++r) {
    const auto d = gen_linear_gaussian(n, p, derive_seed(4, {static_cast<std::uint64_t>(r)}));
    const auto s = setups::linear(p, derive_seed(40, {static_cast<std::uint64_t>(r)}));
    const FittedModel f = train(d, s.net, s.prior, s.schedule);
    const auto e = aipw_ate(f, d);
    cis.emplace_back(e.ci_lower, e.ci_upper);
    width += (e.ci_upper - e.ci_lower) / reps;
  }
  const double cov = ci_coverage(cis, tau);
  o.detail << "replications=" << reps << " coverage=" << cov << " mean_width=" << width;
  o.require(cov >= kCoverageLo && cov <= kCoverageHi, "coverage in [0.90, 0.99]");
}

// ---- 5, 6: AR(2) study ----

struct Ar2Result {
  bool exact;
  double err_aipw, err_plugin;
  std::string sets;
};

Ar2Result ar2_seed(std::uint64_t seed, MissingScenario scenario) {
  const auto s = gen_ar2_missing(10000, 1000, 1000, seed, scenario);
  const auto setup = setups::ar2(seed, scenario != MissingScenario::complete);
  std::optional<CovariateModel> cov;
  if (s.train.has_missing()) cov = CovariateModel::fit(s.train, band_neighbors(100, 2));
  const FittedModel f = train(s.train, setup.net, setup.prior, setup.schedule, cov ? &*cov : nullptr);
  const auto sel = selected_covariates(f);
  const auto e = aipw_ate(f, s.test);
  const auto& c = s.test.truth->cate;
  const double sample_ate = std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(c.size());
  const auto ra = fsr_nsr({sel.treatment_model_covariates}, s.train.truth->treatment_set);
  const auto ry = fsr_nsr({sel.outcome_model_covariates}, s.train.truth->outcome_set);
  Ar2Result r;
  r.exact = ra.fsr == 0 && ra.nsr == 0 && ry.fsr == 0 && ry.nsr == 0;
  r.err_aipw = std::abs(e.tau_hat - sample_ate);
  r.err_plugin = std::abs(e.plugin - sample_ate);
  r.sets = "A={" + format_index_set(sel.treatment_model_covariates) + "} Y={" + format_index_set(sel.outcome_model_covariates) + "}";
  return r;
}

void ar2_study(Outcome& o, MissingScenario scenario, double mae_max, int exact_min) {
  std::vector<double> errs, plug;
  int exact = 0;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto r = ar2_seed(seed, scenario);
    std::cerr << "  seed " << seed << ": " << r.sets << " |aipw err|=" << r.err_aipw << " |plugin err|=" << r.err_plugin << '\n';
    exact += r.exact;
    errs.push_back(r.err_aipw);
    plug.push_back(r.err_plugin);
  }
  const double mae = std::accumulate(errs.begin(), errs.end(), 0.0) / 5;
  const double mae_plugin = std::accumulate(plug.begin(), plug.end(), 0.0) / 5;
  o.detail << "exact_selection=" << exact << "/5 ate_mae=" << mae << " (plug-in " << mae_plugin << ")";
  o.require(exact >= exact_min, "selection");
  o.require(mae <= mae_max, "ATE MAE");
}

// ---- 7: varying sample size ----
// Validation and test sets are a quarter of the training size.

void trend(Outcome& o) {
  std::vector<double> medians;
  for (long n : {800L, 1600L, 3200L}) {
    std::vector<double> errs;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto s = gen_varying_size(n, n / 4, n / 4, seed);
      const auto setup = setups::varying_size(seed);
      const FittedModel f = train(s.train, setup.net, setup.prior, setup.schedule);
      const auto e = aipw_ate(f, s.test);
      const auto& c = s.test.truth->cate;
      const double sample_ate = std::accumulate(c.begin(), c.end(), 0.0) / static_cast<double>(c.size());
      errs.push_back(std::abs(e.tau_hat - sample_ate));
      std::cerr << "  n " << n << " seed " << seed << ": |err|=" << errs.back() << " A={"
                << format_index_set(selected_covariates(f).treatment_model_covariates) << "}\n";
    }
    std::sort(errs.begin(), errs.end());
    medians.push_back(errs[1]);
  }
  o.detail << "median_mae n=800:" << medians[0] << " n=1600:" << medians[1] << " n=3200:" << medians[2];
  o.require(medians[1] <= medians[0] && medians[2] <= medians[1], "non-increasing medians");
}

// ---- 8: mask vs responsibility ----

void mask(Outcome& o) {
  const double settings[10][3] = {{1e-6, 1e-5, 1e-2}, {1e-6, 3e-3, 0.3},  {0.5, 0.01, 1.0},  {0.1, 1e-4, 0.1},
                                  {1e-3, 1e-6, 1e-2}, {0.9, 1e-3, 0.5},  {1e-8, 1e-7, 1.0}, {0.3, 2e-2, 0.2},
                                  {1e-4, 1e-5, 5.0},  {0.05, 5e-4, 5e-2}};
  long checked = 0, disagree = 0;
  for (int k = 0; k < 10; ++k) {
    PriorHyperparameters h;
    h.lambda = settings[k][0];
    h.sigma0_sq = settings[k][1];
    h.sigma1_sq = settings[k][2];
    // 100 x 1000 weight matrix plus biases; values spread around the threshold.
    NetworkConfig c;
    c.layer_widths = {999, 100, 1};
    c.noise_variances = {1, 1};
    auto p = NetworkParameters::zeros(c);
    SplitMix64 rng(800 + k);
    const double scale = 3.0 * sparsify_threshold(h);
    std::uniform_real_distribution<double> u(-scale, scale);
    for (auto& w : p.weights) w = w.unaryExpr([&](double) { return u(rng); });
    for (auto& b : p.biases) b = b.unaryExpr([&](double) { return u(rng); });
    const auto m = build_mask(p, h);
    auto oracle = [&](double t) {
      // log lambda N(t; 0, s1) > log (1 - lambda) N(t; 0, s0)
      const double slab = std::log(h.lambda) - 0.5 * std::log(2 * M_PI * h.sigma1_sq) - t * t / (2 * h.sigma1_sq);
      const double spike = std::log1p(-h.lambda) - 0.5 * std::log(2 * M_PI * h.sigma0_sq) - t * t / (2 * h.sigma0_sq);
      return slab > spike;
    };
    for (std::size_t l = 0; l < p.weights.size(); ++l) {
      for (Eigen::Index i = 0; i < p.weights[l].size(); ++i, ++checked) {
        disagree += (m.weights[l].data()[i] == 1.0) != oracle(p.weights[l].data()[i]);
      }
      for (Eigen::Index i = 0; i < p.biases[l].size(); ++i, ++checked) disagree += (m.biases[l](i) == 1.0) != oracle(p.biases[l](i));
    }
  }
  o.detail << "settings=10 parameters_per_setting=" << checked / 10 << " disagreements=" << disagree;
  o.require(checked / 10 >= 100000, "1e5 parameters per setting");
  o.require(disagree == 0, "agreement");
}

// ---- 9: CLI determinism ----

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int shell(const std::string& cmd) {
  const int st = std::system(cmd.c_str());
  return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
}

void determinism(Outcome& o, const std::string& cli, const fs::path& work) {
  const fs::path dir = work / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string quiet = " >/dev/null 2>&1";
  const int sim = shell(cli + " simulate --generator ar2 --n-train 600 --n-val 0 --n-test 0 --p 20 --scenario mar --seed 9 --out " +
                        (dir / "data").string() + quiet);
  o.require(sim == 0, "simulate");
  {
    std::ofstream c(dir / "config.txt");
    c << "seed=13\nnet.widths=20 6 4 1\nnet.treatment_layer=1\nnet.treatment_position=2\nnet.noise_variances=1e-3 1e-3 1\n"
      << "train.epochs_pretrain=2\ntrain.epochs_train=6\ntrain.epochs_refine=2\ntrain.batch_size=50\ntrain.t_mc=2\n"
      << "train.impute_lr=0.002 0.002\ntrain.impute_lr_missing=0.002\ntrain.step=1e-4 1e-4 1e-3\ntrain.num_runs=2\n"
      << "covariates.model=band\ndata.train=" << (dir / "data" / "train.csv").string() << '\n';
  }
  std::vector<std::string> ckpts;
  for (const auto& [tag, threads] : std::vector<std::pair<std::string, int>>{{"a", 1}, {"b", 1}, {"c", 8}, {"d", 8}}) {
    const int rc = shell(cli + " train --config " + (dir / "config.txt").string() + " --threads " + std::to_string(threads) +
                         " --out " + (dir / tag).string() + quiet);
    o.require(rc == 0, "train run " + tag);
    ckpts.push_back(slurp(dir / tag / "checkpoint.txt"));
  }
  const bool same = !ckpts[0].empty() && std::all_of(ckpts.begin(), ckpts.end(), [&](const std::string& s) { return s == ckpts[0]; });
  o.detail << "runs=4 (threads 1,1,8,8) checkpoint_bytes=" << ckpts[0].size() << " identical=" << (same ? "yes" : "no");
  o.require(same, "bitwise identical checkpoints");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"acceptance suite"};
  int criterion = 0;
  std::string cli_path = "cstonet", work = "acceptance_work";
  app.add_option("--criterion", criterion)->required()->check(CLI::Range(1, 9));
  app.add_option("--cli", cli_path);
  app.add_option("--work", work);
  CLI11_PARSE(app, argc, argv);

  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  double budget = 0;
  try {
    switch (criterion) {
      case 1: gradients(o); budget = kGradBudgetSec; break;
      case 2: sampler(o); budget = kSamplerBudgetSec; break;
      case 3: aipw(o); break;
      case 4: coverage(o); budget = kCoverageBudgetSec; break;
      case 5: ar2_study(o, MissingScenario::complete, kCompleteMae, kCompleteExact); budget = kCompleteBudgetSec; break;
      case 6: ar2_study(o, MissingScenario::mar, kMarMae, kMarExact); budget = kMarBudgetSec; break;
      case 7: trend(o); budget = kTrendBudgetSec; break;
      case 8: mask(o); budget = kMaskBudgetSec; break;
      case 9: determinism(o, cli_path, work); break;
    }
  } catch (const std::exception& e) {
    o.require(false, std::string("exception: ") + e.what());
  }
  const double secs = seconds_since(t0);
  if (budget > 0) o.require(secs < budget, "runtime budget");
  std::printf("criterion %d: %s %s (%.1fs)\n", criterion, o.pass ? "PASS" : "FAIL", o.detail.str().c_str(), secs);
  return o.pass ? 0 : 1;
}
