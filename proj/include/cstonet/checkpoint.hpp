#pragma once

// Plain-text checkpoint of a FittedModel. One record per line:
//
//   <key> <token> <token> ...
//
// Reals are written as C99 hex floats (%a) so a load reproduces every bit.
// Matrices are "rows cols" followed by the entries in column-major order.
// Field order is fixed by save_checkpoint; load_checkpoint looks records up by
// key, so readers never depend on position.
//
//   format             cstonet-checkpoint 1
//   net.*              widths, treatment (layer position | none), noise
//                      variances, activation, output, treatment temperature
//   prior.*            lambda sigma0_sq sigma1_sq on_biases
//   train.*            every TrainingSchedule field
//   params.w<i>/b<i>   final parameters (i = 1..h+1)
//   mask.w<i>/b<i>     sparsity mask
//   cov.mean/cov.prec  covariate model (absent when none)
//   impute.*           final imputation rates
//   run.bic, run.selected, missing.cells
//   traj.count, traj.<t>.w<i>/b<i>/xmis, traj.<t>.h<s>.<i>
//   diag.count, diag.<e>  run epoch stage log_posterior kinetic_energy

#include <Eigen/Dense>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cstonet/errors.hpp"
#include "cstonet/trainer.hpp"

namespace cstonet {

inline std::string hex_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

namespace detail {

class RecordWriter {
 public:
  explicit RecordWriter(std::ostream& out) : out_(out) {}

  void line(const std::string& key, const std::string& rest) { out_ << key << ' ' << rest << '\n'; }

  void real(const std::string& key, double v) { line(key, hex_double(v)); }

  template <class Int>
  void integer(const std::string& key, Int v) { line(key, std::to_string(v)); }

  void reals(const std::string& key, const std::vector<double>& v) {
    std::string s = std::to_string(v.size());
    for (double x : v) s += ' ' + hex_double(x);
    line(key, s);
  }

  void ints(const std::string& key, const std::vector<int>& v) {
    std::string s = std::to_string(v.size());
    for (int x : v) s += ' ' + std::to_string(x);
    line(key, s);
  }

  void matrix(const std::string& key, const Eigen::MatrixXd& m) {
    std::string s = std::to_string(m.rows()) + ' ' + std::to_string(m.cols());
    for (double x : m.reshaped()) s += ' ' + hex_double(x);
    line(key, s);
  }

  void vector(const std::string& key, const Eigen::VectorXd& v) { matrix(key, v); }

  void blocks(const std::string& prefix, const LayerBlocks& b) {
    for (std::size_t i = 0; i < b.weights.size(); ++i) {
      matrix(prefix + ".w" + std::to_string(i + 1), b.weights[i]);
      vector(prefix + ".b" + std::to_string(i + 1), b.biases[i]);
    }
  }

 private:
  std::ostream& out_;
};

class RecordReader {
 public:
  explicit RecordReader(std::istream& in) {
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty()) continue;
      std::istringstream ss(line);
      std::string key, tok;
      ss >> key;
      std::vector<std::string> toks;
      while (ss >> tok) toks.push_back(tok);
      if (!records_.emplace(key, std::move(toks)).second) {
        throw IoError("checkpoint line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
      }
    }
  }

  bool has(const std::string& key) const { return records_.count(key) != 0; }

  const std::vector<std::string>& tokens(const std::string& key) const {
    auto it = records_.find(key);
    if (it == records_.end()) throw IoError("checkpoint is missing '" + key + "'");
    return it->second;
  }

  std::string word(const std::string& key) const {
    const auto& t = tokens(key);
    if (t.size() != 1) throw IoError("checkpoint key '" + key + "' expects one value");
    return t[0];
  }

  double real(const std::string& key) const { return parse_real(word(key), key); }

  long long integer(const std::string& key) const { return parse_int(word(key), key); }

  std::vector<double> reals(const std::string& key) const {
    const auto& t = tokens(key);
    const auto n = counted(t, key);
    std::vector<double> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(parse_real(t[i + 1], key));
    return v;
  }

  std::vector<int> ints(const std::string& key) const {
    const auto& t = tokens(key);
    const auto n = counted(t, key);
    std::vector<int> v;
    for (std::size_t i = 0; i < n; ++i) v.push_back(static_cast<int>(parse_int(t[i + 1], key)));
    return v;
  }

  Eigen::MatrixXd matrix(const std::string& key) const {
    const auto& t = tokens(key);
    if (t.size() < 2) throw IoError("checkpoint key '" + key + "' lacks a shape");
    const long long r = parse_int(t[0], key), c = parse_int(t[1], key);
    if (r < 0 || c < 0 || static_cast<std::size_t>(r * c) + 2 != t.size()) {
      throw IoError("checkpoint key '" + key + "' has a malformed matrix");
    }
    Eigen::MatrixXd m(r, c);
    for (long long i = 0; i < r * c; ++i) m.reshaped()(i) = parse_real(t[static_cast<std::size_t>(i) + 2], key);
    return m;
  }

  Eigen::VectorXd vector(const std::string& key) const {
    Eigen::MatrixXd m = matrix(key);
    if (m.cols() != 1) throw IoError("checkpoint key '" + key + "' is not a vector");
    return m.col(0);
  }

  template <class Blocks>
  Blocks blocks(const std::string& prefix, int layers) const {
    Blocks b;
    for (int i = 1; i <= layers; ++i) {
      b.weights.push_back(matrix(prefix + ".w" + std::to_string(i)));
      b.biases.push_back(vector(prefix + ".b" + std::to_string(i)));
    }
    return b;
  }

 private:
  static std::size_t counted(const std::vector<std::string>& t, const std::string& key) {
    if (t.empty()) throw IoError("checkpoint key '" + key + "' lacks a count");
    const long long n = parse_int(t[0], key);
    if (n < 0 || static_cast<std::size_t>(n) + 1 != t.size()) {
      throw IoError("checkpoint key '" + key + "' has the wrong number of values");
    }
    return static_cast<std::size_t>(n);
  }

  static double parse_real(const std::string& s, const std::string& key) {
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end == s.c_str() || *end != '\0') throw IoError("checkpoint key '" + key + "': bad real '" + s + "'");
    return v;
  }

  static long long parse_int(const std::string& s, const std::string& key) {
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (end == s.c_str() || *end != '\0') throw IoError("checkpoint key '" + key + "': bad integer '" + s + "'");
    return v;
  }

  std::map<std::string, std::vector<std::string>> records_;
};

}  // namespace detail

inline void save_checkpoint(std::ostream& out, const FittedModel& m) {
  detail::RecordWriter w(out);
  const auto& c = m.config;
  const auto& s = m.schedule;
  w.line("format", "cstonet-checkpoint 1");
  w.ints("net.widths", c.layer_widths);
  w.line("net.treatment", c.treatment ? std::to_string(c.treatment->layer) + ' ' + std::to_string(c.treatment->position)
                                      : std::string("none"));
  w.reals("net.noise_variances", c.noise_variances);
  w.line("net.activation", to_string(c.activation));
  w.line("net.output", to_string(c.output_kind));
  w.real("net.treatment_temperature", c.treatment_temperature);

  w.real("prior.lambda", m.hyper.lambda);
  w.real("prior.sigma0_sq", m.hyper.sigma0_sq);
  w.real("prior.sigma1_sq", m.hyper.sigma1_sq);
  w.integer("prior.on_biases", m.hyper.on_biases ? 1 : 0);

  w.integer("train.epochs_pretrain", s.epochs_pretrain);
  w.integer("train.epochs_train", s.epochs_train);
  w.integer("train.epochs_refine", s.epochs_refine);
  w.integer("train.batch_size", s.batch_size);
  w.integer("train.t_mc", s.t_mc);
  w.real("train.friction", s.friction);
  w.reals("train.impute_lr", s.impute_lr);
  w.real("train.impute_lr_missing", s.impute_lr_missing);
  w.real("train.impute_decay", s.impute_decay);
  w.reals("train.step", s.step);
  w.reals("train.refine_step", s.refine_step);
  w.real("train.step_decay", s.step_decay);
  w.real("train.treatment_step", s.treatment_step);
  w.real("train.refine_treatment_step", s.refine_treatment_step);
  w.line("train.schedule_form", to_string(s.form));
  w.real("train.lemma1_offset", s.lemma1_offset);
  w.ints("train.prune_epochs", s.prune_epochs);
  w.real("train.clip_norm", s.clip_norm);
  w.integer("train.tail_length", s.tail_length);
  w.integer("train.store_latents", s.store_latents ? 1 : 0);
  w.integer("train.seed", s.seed);
  w.integer("train.num_runs", s.num_runs);

  w.blocks("params", m.params);
  w.blocks("mask", m.mask);
  if (m.covariate_model) {
    w.vector("cov.mean", m.covariate_model->mean);
    w.matrix("cov.prec", m.covariate_model->precision);
  }
  w.reals("impute.lr", m.final_impute.lr);
  w.real("impute.lr_missing", m.final_impute.lr_missing);
  w.real("impute.friction", m.final_impute.friction);
  w.integer("impute.t_mc", m.final_impute.t_mc);

  w.reals("run.bic", m.run_bic);
  w.integer("run.selected", m.selected_run);
  std::vector<int> cells;
  for (const auto& [r, col] : m.missing_cells) {
    cells.push_back(r);
    cells.push_back(col);
  }
  w.ints("missing.cells", cells);

  w.integer("traj.count", m.trajectory.size());
  for (std::size_t t = 0; t < m.trajectory.size(); ++t) {
    const auto& pt = m.trajectory[t];
    const std::string p = "traj." + std::to_string(t);
    w.blocks(p, pt.params);
    w.vector(p + ".xmis", pt.x_missing);
    w.integer(p + ".hcount", pt.hidden.size());
    for (std::size_t si = 0; si < pt.hidden.size(); ++si) {
      for (std::size_t l = 0; l < pt.hidden[si].size(); ++l) {
        w.vector(p + ".h" + std::to_string(si) + "." + std::to_string(l + 1), pt.hidden[si][l]);
      }
    }
  }

  w.integer("diag.count", m.diagnostics.size());
  for (std::size_t e = 0; e < m.diagnostics.size(); ++e) {
    const auto& d = m.diagnostics[e];
    w.line("diag." + std::to_string(e), std::to_string(d.run) + ' ' + std::to_string(d.epoch) + ' ' + d.stage + ' ' +
                                            hex_double(d.log_posterior) + ' ' + hex_double(d.kinetic_energy));
  }
}

inline void save_checkpoint(const std::string& path, const FittedModel& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  save_checkpoint(out, m);
  if (!out) throw IoError("write failed for '" + path + "'");
}

inline FittedModel load_checkpoint(std::istream& in) {
  detail::RecordReader r(in);
  if (r.tokens("format") != std::vector<std::string>{"cstonet-checkpoint", "1"}) {
    throw IoError("not a version-1 checkpoint");
  }
  FittedModel m;
  auto& c = m.config;
  c.layer_widths = r.ints("net.widths");
  const auto& tr = r.tokens("net.treatment");
  if (tr.size() == 2) {
    c.treatment = TreatmentSlot{std::stoi(tr[0]), std::stoi(tr[1])};
  } else if (tr != std::vector<std::string>{"none"}) {
    throw IoError("checkpoint key 'net.treatment' is malformed");
  }
  c.noise_variances = r.reals("net.noise_variances");
  c.activation = parse_activation(r.word("net.activation"));
  c.output_kind = parse_output_kind(r.word("net.output"));
  c.treatment_temperature = r.real("net.treatment_temperature");
  try {
    c.validate();
  } catch (const Error& e) {
    throw IoError(std::string("checkpoint network is invalid: ") + e.what());
  }

  m.hyper.lambda = r.real("prior.lambda");
  m.hyper.sigma0_sq = r.real("prior.sigma0_sq");
  m.hyper.sigma1_sq = r.real("prior.sigma1_sq");
  m.hyper.on_biases = r.integer("prior.on_biases") != 0;

  auto& s = m.schedule;
  s.epochs_pretrain = static_cast<int>(r.integer("train.epochs_pretrain"));
  s.epochs_train = static_cast<int>(r.integer("train.epochs_train"));
  s.epochs_refine = static_cast<int>(r.integer("train.epochs_refine"));
  s.batch_size = static_cast<int>(r.integer("train.batch_size"));
  s.t_mc = static_cast<int>(r.integer("train.t_mc"));
  s.friction = r.real("train.friction");
  s.impute_lr = r.reals("train.impute_lr");
  s.impute_lr_missing = r.real("train.impute_lr_missing");
  s.impute_decay = r.real("train.impute_decay");
  s.step = r.reals("train.step");
  s.refine_step = r.reals("train.refine_step");
  s.step_decay = r.real("train.step_decay");
  s.treatment_step = r.real("train.treatment_step");
  s.refine_treatment_step = r.real("train.refine_treatment_step");
  s.form = parse_schedule_form(r.word("train.schedule_form"));
  s.lemma1_offset = r.real("train.lemma1_offset");
  s.prune_epochs = r.ints("train.prune_epochs");
  s.clip_norm = r.real("train.clip_norm");
  s.tail_length = static_cast<int>(r.integer("train.tail_length"));
  s.store_latents = r.integer("train.store_latents") != 0;
  s.seed = static_cast<std::uint64_t>(std::stoull(r.word("train.seed")));
  s.num_runs = static_cast<int>(r.integer("train.num_runs"));

  const int L = c.num_layers();
  m.params = r.blocks<NetworkParameters>("params", L);
  m.mask = r.blocks<SparsityMask>("mask", L);
  m.params.check_shape(c, "checkpoint parameter");
  m.mask.check_shape(c, "checkpoint mask");
  if (r.has("cov.mean")) m.covariate_model = CovariateModel{r.vector("cov.mean"), r.matrix("cov.prec")};

  m.final_impute.lr = r.reals("impute.lr");
  m.final_impute.lr_missing = r.real("impute.lr_missing");
  m.final_impute.friction = r.real("impute.friction");
  m.final_impute.t_mc = static_cast<int>(r.integer("impute.t_mc"));

  m.run_bic = r.reals("run.bic");
  m.selected_run = static_cast<int>(r.integer("run.selected"));
  const auto cells = r.ints("missing.cells");
  if (cells.size() % 2 != 0) throw IoError("checkpoint key 'missing.cells' needs (row, column) pairs");
  for (std::size_t i = 0; i < cells.size(); i += 2) m.missing_cells.emplace_back(cells[i], cells[i + 1]);

  const long long nt = r.integer("traj.count");
  for (long long t = 0; t < nt; ++t) {
    const std::string p = "traj." + std::to_string(t);
    TrajectoryPoint pt;
    pt.params = r.blocks<NetworkParameters>(p, L);
    pt.x_missing = r.vector(p + ".xmis");
    const long long hc = r.integer(p + ".hcount");
    for (long long si = 0; si < hc; ++si) {
      std::vector<Eigen::VectorXd> layers;
      for (int l = 1; l <= c.num_hidden(); ++l) {
        layers.push_back(r.vector(p + ".h" + std::to_string(si) + "." + std::to_string(l)));
      }
      pt.hidden.push_back(std::move(layers));
    }
    m.trajectory.push_back(std::move(pt));
  }

  const long long nd = r.integer("diag.count");
  for (long long e = 0; e < nd; ++e) {
    const auto& t = r.tokens("diag." + std::to_string(e));
    if (t.size() != 5) throw IoError("checkpoint diagnostics record " + std::to_string(e) + " is malformed");
    EpochDiagnostics d;
    d.run = std::stoi(t[0]);
    d.epoch = std::stoi(t[1]);
    d.stage = t[2];
    d.log_posterior = std::strtod(t[3].c_str(), nullptr);
    d.kinetic_energy = std::strtod(t[4].c_str(), nullptr);
    m.diagnostics.push_back(d);
  }
  return m;
}

inline FittedModel load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  return load_checkpoint(in);
}

}  // namespace cstonet
