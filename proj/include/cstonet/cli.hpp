#pragma once

// Command-line front end: simulate | train | estimate | evaluate.
//
// Exit codes: 0 ok, 1 usage, 2 configuration, 3 input/output, 4 numeric
// failure, 5 anything else.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cstonet/checkpoint.hpp"
#include "cstonet/config.hpp"
#include "cstonet/covariate_model.hpp"
#include "cstonet/dataset.hpp"
#include "cstonet/errors.hpp"
#include "cstonet/estimators.hpp"
#include "cstonet/simlab.hpp"
#include "cstonet/trainer.hpp"

namespace cstonet::cli {

enum ExitCode { kOk = 0, kUsage = 1, kConfig = 2, kIo = 3, kNumeric = 4, kOther = 5 };

inline constexpr const char* kThreadsEnv = "CSTONET_THREADS";

struct CommonOptions {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  std::optional<int> threads;
};

inline RunConfig load_config(const CommonOptions& o, bool required) {
  RunConfig c;
  if (!o.config.empty()) {
    c = RunConfig::load(o.config);
  } else if (required) {
    throw ConfigError("--config is required for this command");
  }
  if (o.seed) c.set("seed", std::to_string(*o.seed));
  if (!o.out.empty()) c.set("output.dir", o.out);
  return c;
}

inline int resolve_threads(const std::optional<int>& flag) {
  if (flag) {
    if (*flag < 1) throw ConfigError("--threads must be >= 1");
    return *flag;
  }
  if (const char* env = std::getenv(kThreadsEnv)) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*env == '\0' || *end != '\0' || v < 1) throw ConfigError(std::string(kThreadsEnv) + " must be a positive integer");
    return static_cast<int>(v);
  }
  return 0;  // runtime default
}

inline std::filesystem::path output_dir(const RunConfig& c) {
  std::filesystem::path dir = c.str("output.dir");
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create '" + dir.string() + "': " + ec.message());
  return dir;
}

template <class Fn>
void write_file(const std::filesystem::path& path, Fn&& fn) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  fn(out);
  if (!out) throw IoError("write failed for '" + path.string() + "'");
}

struct SimulateOptions {
  std::string generator, scenario;
  std::optional<long> n_train, n_val, n_test;
  std::optional<int> p;
  std::optional<double> tau;
};

inline int cmd_simulate(const CommonOptions& o, const SimulateOptions& so, std::ostream& log) {
  RunConfig c = load_config(o, false);
  if (!so.generator.empty()) c.set("simulate.generator", so.generator);
  if (!so.scenario.empty()) c.set("simulate.scenario", so.scenario);
  if (so.n_train) c.set("simulate.n_train", std::to_string(*so.n_train));
  if (so.n_val) c.set("simulate.n_val", std::to_string(*so.n_val));
  if (so.n_test) c.set("simulate.n_test", std::to_string(*so.n_test));
  if (so.p) c.set("simulate.p", std::to_string(*so.p));
  if (so.tau) c.set("simulate.tau", format_double(*so.tau));

  const std::string gen = c.str("simulate.generator");
  const std::uint64_t seed = c.unsigned_integer("seed");
  const long ntr = c.integer("simulate.n_train"), nva = c.integer("simulate.n_val"), nte = c.integer("simulate.n_test");
  const int p = static_cast<int>(c.integer("simulate.p"));
  SimSplits s;
  if (gen == "varying_size") {
    s = gen_varying_size(ntr, nva, nte, seed, p > 0 ? p : 1000);
  } else if (gen == "ar2") {
    s = gen_ar2_missing(ntr, nva, nte, seed, parse_missing_scenario(c.str("simulate.scenario")), p > 0 ? p : 100);
  } else if (gen == "linear_gaussian") {
    LinearGaussianOptions lo;
    lo.tau = c.real("simulate.tau");
    const int pp = p > 0 ? p : 10;
    s.train = gen_linear_gaussian(ntr, pp, derive_seed(seed, {0}), lo);
    if (nva > 0) s.val = gen_linear_gaussian(nva, pp, derive_seed(seed, {1}), lo);
    if (nte > 0) s.test = gen_linear_gaussian(nte, pp, derive_seed(seed, {2}), lo);
  } else {
    throw ConfigError("simulate.generator must be varying_size, ar2 or linear_gaussian");
  }
  const auto dir = output_dir(c);
  const std::pair<const char*, const Dataset*> parts[] = {{"train", &s.train}, {"val", &s.val}, {"test", &s.test}};
  for (const auto& [name, d] : parts) {
    if (d->n() == 0) continue;
    write_csv((dir / (std::string(name) + ".csv")).string(), *d);
    write_file(dir / (std::string(name) + "_truth.csv"), [&](std::ostream& out) { write_truth_rows(out, *d->truth); });
  }
  write_file(dir / "truth.txt", [&](std::ostream& out) { write_truth_summary(out, *s.train.truth); });
  log << "wrote " << gen << " data to " << dir.string() << '\n';
  return kOk;
}

inline std::optional<CovariateModel> covariate_model_for(const RunConfig& c, const Dataset& d) {
  if (!d.has_missing()) return std::nullopt;
  const std::string kind = c.str("covariates.model");
  if (kind == "diagonal") return CovariateModel::fit_diagonal(d);
  if (kind == "band") {
    return CovariateModel::fit(d, band_neighbors(static_cast<int>(d.p()), static_cast<int>(c.integer("covariates.bandwidth"))));
  }
  throw ConfigError("covariates.model must be diagonal or band");
}

inline void write_train_report(std::ostream& out, const FittedModel& m) {
  const SelectionReport sel = selected_covariates(m);
  out << "selected_run=" << m.selected_run << '\n';
  out << "run_bic=";
  for (std::size_t i = 0; i < m.run_bic.size(); ++i) out << (i ? " " : "") << format_double(m.run_bic[i]);
  out << '\n';
  out << "active_parameters=" << m.mask.active_count() << '\n';
  out << "total_parameters=" << m.mask.size() << '\n';
  out << "sparsify_threshold=" << format_double(sparsify_threshold(m.hyper)) << '\n';
  out << "treatment_covariates=" << format_index_set(sel.treatment_model_covariates) << '\n';
  out << "outcome_covariates=" << format_index_set(sel.outcome_model_covariates) << '\n';
  out << "trajectory_length=" << m.trajectory.size() << '\n';
  out << "missing_cells=" << m.missing_cells.size() << '\n';
}

inline int cmd_train(const CommonOptions& o, std::ostream& log) {
  const RunConfig c = load_config(o, true);
  const NetworkConfig net = c.network();
  const PriorHyperparameters hyper = c.prior();
  const TrainingSchedule sched = c.schedule(net);
  const std::string train_path = c.str("data.train");
  const auto dir = output_dir(c);
  set_num_threads(resolve_threads(o.threads));
  for (const auto& w : net.warnings()) log << "warning: " << w << '\n';

  const Dataset d = read_csv(train_path);
  const auto cov = covariate_model_for(c, d);
  const FittedModel m = train(d, net, hyper, sched, cov ? &*cov : nullptr);

  save_checkpoint((dir / "checkpoint.txt").string(), m);
  write_file(dir / "diagnostics.csv", [&](std::ostream& out) {
    out << "run,epoch,stage,log_posterior,kinetic_energy\n";
    for (const auto& e : m.diagnostics) {
      out << e.run << ',' << e.epoch << ',' << e.stage << ',' << format_double(e.log_posterior) << ','
          << format_double(e.kinetic_energy) << '\n';
    }
  });
  write_file(dir / "train_report.txt", [&](std::ostream& out) { write_train_report(out, m); });
  log << "trained on " << d.n() << " rows; checkpoint in " << (dir / "checkpoint.txt").string() << '\n';
  return kOk;
}

inline int cmd_estimate(const CommonOptions& o, std::ostream& log) {
  const RunConfig c = load_config(o, true);
  const auto dir = output_dir(c);
  std::string ckpt = c.str("estimate.checkpoint");
  if (ckpt.empty()) ckpt = (dir / "checkpoint.txt").string();
  const double kappa = c.real("estimate.kappa");
  const double alpha = c.real("estimate.alpha");
  if (!(kappa >= 0.0 && kappa < 0.5)) throw ConfigError("estimate.kappa must lie in [0, 0.5)");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("estimate.alpha must lie in (0, 1]");
  ImputationOptions imp;
  imp.draws = static_cast<int>(c.integer("estimate.imputation_draws"));
  imp.burn_in = static_cast<int>(c.integer("estimate.imputation_burn_in"));
  imp.seed = derive_seed(c.unsigned_integer("seed"), {stream::kImpute});
  set_num_threads(resolve_threads(o.threads));

  const FittedModel m = load_checkpoint(ckpt);
  const Dataset d = read_csv(c.str("data.eval"));
  const AteEstimate e = aipw_ate(m, d, kappa, alpha, imp);
  const SelectionReport sel = selected_covariates(m);

  std::vector<double> cates(static_cast<std::size_t>(d.n()), 0.0);
  if (d.has_missing()) {
    const auto comps = impute_completions(m, d, imp.draws, imp.burn_in, imp.seed);
    for (const auto& [theta, comp] : comps) {
      const Predictor pr{m.config, theta};
      for (Eigen::Index i = 0; i < d.n(); ++i) {
        cates[static_cast<std::size_t>(i)] += cate(pr, comp.covariates.row(i).transpose()) / static_cast<double>(comps.size());
      }
    }
  } else {
    const Predictor pr = Predictor::from(m);
    for (Eigen::Index i = 0; i < d.n(); ++i) cates[static_cast<std::size_t>(i)] = cate(pr, d.covariates.row(i).transpose());
  }
  write_file(dir / "estimate.txt", [&](std::ostream& out) { write_estimate_report(out, e, sel); });
  write_file(dir / "cate.csv", [&](std::ostream& out) {
    out << "cate\n";
    for (double v : cates) out << format_double(v) << '\n';
  });
  log << "tau_hat=" << format_double(e.tau_hat) << " ci=[" << format_double(e.ci_lower) << ", "
      << format_double(e.ci_upper) << "]\n";
  return kOk;
}

inline std::vector<double> read_cate_column(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::string line;
  std::getline(in, line);
  if (trim(line) != "cate") throw IoError("'" + path + "' must start with a cate header");
  std::vector<double> v;
  while (std::getline(in, line)) {
    line = trim(line);
    if (line.empty()) continue;
    char* end = nullptr;
    const double x = std::strtod(line.c_str(), &end);
    if (*end != '\0') throw IoError("'" + path + "': bad value '" + line + "'");
    v.push_back(x);
  }
  return v;
}

inline int cmd_evaluate(const CommonOptions& o, std::ostream& log) {
  const RunConfig c = load_config(o, true);
  const auto dir = output_dir(c);
  const auto reports = c.words("evaluate.reports");
  const auto cate_files = c.words("evaluate.cate");
  const std::string rows = c.str("evaluate.truth_rows");
  const Truth truth = read_truth(c.str("evaluate.truth"), rows);
  const auto wanted = c.words("evaluate.metrics");
  auto want = [&](const std::string& m) { return std::find(wanted.begin(), wanted.end(), m) != wanted.end(); };
  for (const auto& m : wanted) {
    if (m != "mae_ate" && m != "mae_ate_sample" && m != "pehe" && m != "selection" && m != "ci_coverage") {
      throw ConfigError("unknown metric '" + m + "'");
    }
  }
  if (reports.empty()) throw ConfigError("evaluate.reports lists no files");

  std::vector<double> taus;
  std::vector<std::pair<double, double>> cis;
  std::vector<std::vector<int>> sel_a, sel_y;
  for (const auto& path : reports) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open '" + path + "'");
    const auto kv = read_key_values(in, path);
    auto get = [&](const char* k) {
      auto it = kv.find(k);
      if (it == kv.end()) throw IoError("'" + path + "' lacks " + k);
      return it->second;
    };
    taus.push_back(std::stod(get("tau_hat")));
    cis.emplace_back(std::stod(get("ci_lower")), std::stod(get("ci_upper")));
    sel_a.push_back(parse_index_set(get("treatment_covariates")));
    sel_y.push_back(parse_index_set(get("outcome_covariates")));
  }

  MetricsReport m;
  if (truth.ate) {
    if (want("mae_ate")) m.mae_ate = mae_ate(taus, *truth.ate);
    if (want("ci_coverage")) m.ci_coverage = ci_coverage(cis, *truth.ate);
  }
  if (!truth.cate.empty() && want("mae_ate_sample")) {
    double s = 0.0;
    for (double v : truth.cate) s += v;
    m.mae_ate_sample = mae_ate(taus, s / static_cast<double>(truth.cate.size()));
  }
  if (want("pehe") && !cate_files.empty()) {
    if (truth.cate.empty()) throw ConfigError("PEHE needs evaluate.truth_rows");
    double acc = 0.0;
    for (const auto& f : cate_files) {
      const auto v = read_cate_column(f);
      if (v.size() != truth.cate.size()) {
        throw InputError("'" + f + "' has " + std::to_string(v.size()) + " rows but the truth has " +
                         std::to_string(truth.cate.size()));
      }
      acc += pehe(v, truth.cate);
    }
    m.pehe = acc / static_cast<double>(cate_files.size());
  }
  if (want("selection")) {
    if (!truth.treatment_set.empty()) {
      const auto r = fsr_nsr(sel_a, truth.treatment_set);
      m.fsr_treatment = r.fsr;
      m.nsr_treatment = r.nsr;
    }
    if (!truth.outcome_set.empty()) {
      const auto r = fsr_nsr(sel_y, truth.outcome_set);
      m.fsr_outcome = r.fsr;
      m.nsr_outcome = r.nsr;
    }
  }
  write_file(dir / "metrics.txt", [&](std::ostream& out) { write_metrics_report(out, m); });
  write_metrics_report(log, m);
  return kOk;
}

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParameterError*>(&e) ||
      dynamic_cast<const StructuralError*>(&e)) {
    return kConfig;
  }
  if (dynamic_cast<const IoError*>(&e) || dynamic_cast<const InputError*>(&e)) return kIo;
  if (dynamic_cast<const NumericError*>(&e)) return kNumeric;
  return kOther;
}

inline int run(int argc, char** argv, std::ostream& log = std::cout, std::ostream& err = std::cerr) {
  CLI::App app{"cstonet: sparse stochastic networks for treatment-effect estimation"};
  app.require_subcommand(1);
  bool schema = false;
  app.add_flag("--print-schema", schema, "print every configuration key with its default and exit");

  CommonOptions common;
  SimulateOptions so;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", common.config, "key=value configuration file");
    sub->add_option("--seed", common.seed, "override the config seed");
    sub->add_option("--out", common.out, "override output.dir");
    sub->add_option("--threads", common.threads, std::string("worker threads (default: $") + kThreadsEnv + ")");
  };
  auto* sim = app.add_subcommand("simulate", "write synthetic train/val/test CSVs and truth files");
  add_common(sim);
  sim->add_option("--generator", so.generator, "varying_size | ar2 | linear_gaussian");
  sim->add_option("--scenario", so.scenario, "complete | mar | mnar");
  sim->add_option("--n-train", so.n_train);
  sim->add_option("--n-val", so.n_val);
  sim->add_option("--n-test", so.n_test);
  sim->add_option("--p", so.p);
  sim->add_option("--tau", so.tau);
  auto* tr = app.add_subcommand("train", "fit a sparse stochastic network and write a checkpoint");
  add_common(tr);
  auto* est = app.add_subcommand("estimate", "AIPW ATE, confidence interval, CATE and selected covariates");
  add_common(est);
  auto* ev = app.add_subcommand("evaluate", "score estimate reports against simulation truth");
  add_common(ev);

  // --print-schema needs no subcommand.
  for (int i = 1; i < argc; ++i) {
    if (std::string(argv[i]) == "--print-schema") {
      print_schema(log);
      return kOk;
    }
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e, log, err);
    return rc == 0 ? kOk : kUsage;
  }
  try {
    if (*sim) return cmd_simulate(common, so, log);
    if (*tr) return cmd_train(common, log);
    if (*est) return cmd_estimate(common, log);
    if (*ev) return cmd_evaluate(common, log);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return exit_code_for(e);
  }
  return kUsage;
}

}  // namespace cstonet::cli
