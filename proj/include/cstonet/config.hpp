#pragma once

// Flat key=value run configuration. Blank lines and '#' comments are ignored;
// lists are whitespace- or comma-separated. Every key must appear in the
// schema below, and keys a command needs but that carry no default must be
// present.

#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "cstonet/errors.hpp"
#include "cstonet/network.hpp"
#include "cstonet/schedule.hpp"
#include "cstonet/sparse_prior.hpp"

namespace cstonet {

struct ConfigKey {
  const char* key;
  const char* fallback;  // nullptr = no default
  const char* doc;
};

inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> schema = {
      {"seed", "1", "root seed; every random stream derives from it"},
      {"net.widths", nullptr, "layer widths p d1 .. dh d_out"},
      {"net.treatment_layer", "1", "hidden layer hosting the treatment unit (1..h); 0 = no treatment unit"},
      {"net.treatment_position", "1", "1-based neuron index of the treatment unit within its layer"},
      {"net.noise_variances", nullptr, "sigma^2_1 .. sigma^2_{h+1}"},
      {"net.activation", "tanh", "tanh | sigmoid | relu | identity"},
      {"net.output", "gaussian", "gaussian | logistic"},
      {"net.treatment_temperature", "1", "temperature of the treatment unit's Bernoulli term"},
      {"prior.lambda", "1e-6", "slab weight lambda"},
      {"prior.sigma0_sq", "1e-5", "spike variance"},
      {"prior.sigma1_sq", "1e-2", "slab variance"},
      {"prior.on_biases", "true", "biases share the prior and are pruned"},
      {"train.epochs_pretrain", "0", "dense epochs at the initial rates"},
      {"train.epochs_train", "100", "dense epochs with decaying rates"},
      {"train.epochs_refine", "0", "epochs after pruning, masked entries held at 0"},
      {"train.batch_size", "100", "mini-batch size"},
      {"train.t_mc", "1", "SGHMC sweeps per imputation"},
      {"train.friction", "1", "SGHMC friction eta"},
      {"train.impute_lr", nullptr, "SGHMC step per hidden layer"},
      {"train.impute_lr_missing", "0", "SGHMC step for missing covariates"},
      {"train.impute_decay", "1.2", "decay exponent of the SGHMC steps"},
      {"train.step", nullptr, "parameter step size per layer"},
      {"train.refine_step", "", "refine-stage step per layer; empty = step/10"},
      {"train.step_decay", "1.2", "decay exponent of the parameter steps"},
      {"train.treatment_step", "0", "step for the propensity row; 0 = the layer's step"},
      {"train.refine_treatment_step", "0", "refine-stage propensity step; 0 = treatment_step/10"},
      {"train.schedule_form", "a8", "a8: b/(1+b k^e) | lemma1: b/(offset+k^e)"},
      {"train.lemma1_offset", "1", "offset of the lemma1 form"},
      {"train.prune_epochs", "", "extra pruning events at these train-stage epochs"},
      {"train.clip_norm", "0", "per-layer gradient clipping norm; 0 = off"},
      {"train.tail_length", "30", "stored trajectory iterates"},
      {"train.store_latents", "false", "keep hidden latents in the trajectory"},
      {"train.num_runs", "1", "independent runs; the lowest BIC wins"},
      {"covariates.model", "diagonal", "diagonal | band (Gaussian covariate model for missing values)"},
      {"covariates.bandwidth", "2", "neighbourhood half-width for covariates.model = band"},
      {"data.train", nullptr, "training CSV"},
      {"data.eval", nullptr, "CSV to estimate on"},
      {"output.dir", nullptr, "directory for checkpoints and reports"},
      {"estimate.checkpoint", "", "checkpoint to load; empty = <output.dir>/checkpoint.txt"},
      {"estimate.kappa", "0.01", "propensity clip"},
      {"estimate.alpha", "0.05", "1 - confidence level"},
      {"estimate.imputation_draws", "30", "completions averaged when the data has missing covariates"},
      {"estimate.imputation_burn_in", "20", "discarded imputation sweeps"},
      {"simulate.generator", "ar2", "varying_size | ar2 | linear_gaussian"},
      {"simulate.scenario", "complete", "complete | mar | mnar (ar2 only)"},
      {"simulate.n_train", "10000", "training rows"},
      {"simulate.n_val", "1000", "validation rows"},
      {"simulate.n_test", "1000", "test rows"},
      {"simulate.p", "0", "covariate count; 0 = generator default"},
      {"simulate.tau", "1", "treatment effect (linear_gaussian)"},
      {"evaluate.reports", nullptr, "estimate reports to score"},
      {"evaluate.cate", "", "CATE CSVs matching evaluate.reports (for PEHE)"},
      {"evaluate.truth", nullptr, "truth summary (truth.txt)"},
      {"evaluate.truth_rows", "", "per-row truth CSV for PEHE"},
      {"evaluate.metrics", "mae_ate mae_ate_sample pehe selection ci_coverage", "metrics to report"},
  };
  return schema;
}

inline void print_schema(std::ostream& out) {
  for (const auto& k : config_schema()) {
    out << k.key << '=' << (k.fallback ? k.fallback : "<required>") << "  # " << k.doc << '\n';
  }
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

class RunConfig {
 public:
  static RunConfig parse(std::istream& in, const std::string& origin = "config") {
    RunConfig c;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
      }
      const std::string key = trim(line.substr(0, eq));
      if (!known(key)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": unknown key '" + key + "'");
      if (c.values_.count(key)) throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
      c.values_[key] = trim(line.substr(eq + 1));
    }
    return c;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config '" + path + "'");
    return parse(in, path);
  }

  static bool known(const std::string& key) {
    for (const auto& k : config_schema()) {
      if (key == k.key) return true;
    }
    return false;
  }

  void set(const std::string& key, const std::string& value) {
    if (!known(key)) throw ConfigError("unknown key '" + key + "'");
    values_[key] = value;
  }

  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string str(const std::string& key) const {
    if (auto it = values_.find(key); it != values_.end()) return it->second;
    for (const auto& k : config_schema()) {
      if (key == k.key) {
        if (!k.fallback) throw ConfigError("missing required key '" + key + "'");
        return k.fallback;
      }
    }
    throw ConfigError("unknown key '" + key + "'");
  }

  double real(const std::string& key) const {
    const std::string s = str(key);
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (s.empty() || *end != '\0') throw ConfigError("key '" + key + "': expected a number, got '" + s + "'");
    return v;
  }

  long long integer(const std::string& key) const {
    const std::string s = str(key);
    char* end = nullptr;
    const long long v = std::strtoll(s.c_str(), &end, 10);
    if (s.empty() || *end != '\0') throw ConfigError("key '" + key + "': expected an integer, got '" + s + "'");
    return v;
  }

  std::uint64_t unsigned_integer(const std::string& key) const {
    const std::string s = str(key);
    char* end = nullptr;
    const unsigned long long v = std::strtoull(s.c_str(), &end, 10);
    if (s.empty() || s[0] == '-' || *end != '\0') {
      throw ConfigError("key '" + key + "': expected a nonnegative integer, got '" + s + "'");
    }
    return v;
  }

  bool boolean(const std::string& key) const {
    const std::string s = str(key);
    if (s == "true" || s == "1" || s == "yes") return true;
    if (s == "false" || s == "0" || s == "no") return false;
    throw ConfigError("key '" + key + "': expected true/false, got '" + s + "'");
  }

  std::vector<std::string> words(const std::string& key) const {
    std::string s = str(key);
    for (char& ch : s) {
      if (ch == ',') ch = ' ';
    }
    std::istringstream ss(s);
    std::vector<std::string> out;
    std::string w;
    while (ss >> w) out.push_back(w);
    return out;
  }

  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& w : words(key)) {
      char* end = nullptr;
      const double v = std::strtod(w.c_str(), &end);
      if (*end != '\0') throw ConfigError("key '" + key + "': bad number '" + w + "'");
      out.push_back(v);
    }
    return out;
  }

  std::vector<int> ints(const std::string& key) const {
    std::vector<int> out;
    for (const auto& w : words(key)) {
      char* end = nullptr;
      const long v = std::strtol(w.c_str(), &end, 10);
      if (*end != '\0') throw ConfigError("key '" + key + "': bad integer '" + w + "'");
      out.push_back(static_cast<int>(v));
    }
    return out;
  }

  NetworkConfig network() const {
    NetworkConfig c;
    c.layer_widths = ints("net.widths");
    c.noise_variances = reals("net.noise_variances");
    const long long tl = integer("net.treatment_layer");
    if (tl > 0) c.treatment = TreatmentSlot{static_cast<int>(tl), static_cast<int>(integer("net.treatment_position")) - 1};
    c.activation = parse_activation(str("net.activation"));
    c.output_kind = parse_output_kind(str("net.output"));
    c.treatment_temperature = real("net.treatment_temperature");
    try {
      c.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("network: ") + e.what());
    }
    return c;
  }

  PriorHyperparameters prior() const {
    PriorHyperparameters h;
    h.lambda = real("prior.lambda");
    h.sigma0_sq = real("prior.sigma0_sq");
    h.sigma1_sq = real("prior.sigma1_sq");
    h.on_biases = boolean("prior.on_biases");
    try {
      h.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("prior: ") + e.what());
    }
    return h;
  }

  TrainingSchedule schedule(const NetworkConfig& net) const {
    TrainingSchedule s;
    s.epochs_pretrain = static_cast<int>(integer("train.epochs_pretrain"));
    s.epochs_train = static_cast<int>(integer("train.epochs_train"));
    s.epochs_refine = static_cast<int>(integer("train.epochs_refine"));
    s.batch_size = static_cast<int>(integer("train.batch_size"));
    s.t_mc = static_cast<int>(integer("train.t_mc"));
    s.friction = real("train.friction");
    s.impute_lr = reals("train.impute_lr");
    s.impute_lr_missing = real("train.impute_lr_missing");
    s.impute_decay = real("train.impute_decay");
    s.step = reals("train.step");
    s.refine_step = reals("train.refine_step");
    s.step_decay = real("train.step_decay");
    s.treatment_step = real("train.treatment_step");
    s.refine_treatment_step = real("train.refine_treatment_step");
    s.form = parse_schedule_form(str("train.schedule_form"));
    s.lemma1_offset = real("train.lemma1_offset");
    s.prune_epochs = ints("train.prune_epochs");
    s.clip_norm = real("train.clip_norm");
    s.tail_length = static_cast<int>(integer("train.tail_length"));
    s.store_latents = boolean("train.store_latents");
    s.seed = unsigned_integer("seed");
    s.num_runs = static_cast<int>(integer("train.num_runs"));
    try {
      s.validate(net);
    } catch (const Error& e) {
      throw ConfigError(std::string("train: ") + e.what());
    }
    return s;
  }

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace cstonet
