#pragma once

// Causal-StoNet topology, deterministic forward pass, per-layer conditional
// log-densities and their analytic gradients.
//
// Layers are numbered 1..h+1 as in the model: layer 1 reads the covariates,
// layers 1..h are hidden (latent), layer h+1 is the observed outcome. One
// hidden neuron may be replaced by the visible treatment unit; its incoming
// weights define the propensity logit and its value is clamped to A.

#include <Eigen/Dense>

#include <cmath>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cstonet/errors.hpp"

namespace cstonet {

enum class Activation { tanh, sigmoid, relu, identity };
enum class OutputKind { gaussian, logistic };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::sigmoid: return "sigmoid";
    case Activation::relu: return "relu";
    case Activation::identity: return "identity";
  }
  return "?";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "sigmoid") return Activation::sigmoid;
  if (s == "relu") return Activation::relu;
  if (s == "identity") return Activation::identity;
  throw ParameterError("unknown activation '" + s + "'");
}

inline std::string to_string(OutputKind k) {
  return k == OutputKind::gaussian ? "gaussian" : "logistic";
}

inline OutputKind parse_output_kind(const std::string& s) {
  if (s == "gaussian" || s == "continuous") return OutputKind::gaussian;
  if (s == "logistic" || s == "binary") return OutputKind::logistic;
  throw ParameterError("unknown output kind '" + s + "'");
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

// log(sigmoid(z)) without overflow for large |z|.
inline double log_sigmoid(double z) {
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

inline double activate(Activation act, double v) {
  switch (act) {
    case Activation::tanh: return std::tanh(v);
    case Activation::sigmoid: return sigmoid(v);
    case Activation::relu: return v > 0.0 ? v : 0.0;
    case Activation::identity: return v;
  }
  return v;
}

// Derivative with respect to the preactivation. ReLU uses 0 at the kink.
inline double activate_derivative(Activation act, double v) {
  switch (act) {
    case Activation::tanh: {
      const double t = std::tanh(v);
      return 1.0 - t * t;
    }
    case Activation::sigmoid: {
      const double s = sigmoid(v);
      return s * (1.0 - s);
    }
    case Activation::relu: return v > 0.0 ? 1.0 : 0.0;
    case Activation::identity: return 1.0;
  }
  return 1.0;
}

struct TreatmentSlot {
  int layer = 1;     // hidden layer hosting the unit, 1..h
  int position = 0;  // neuron index within that layer, 0-based
};

struct NetworkConfig {
  std::vector<int> layer_widths;  // d_0 = p, d_1..d_h hidden, d_{h+1} output
  std::optional<TreatmentSlot> treatment;
  std::vector<double> noise_variances;  // sigma^2_1 .. sigma^2_{h+1}
  Activation activation = Activation::tanh;
  OutputKind output_kind = OutputKind::gaussian;
  // Temperature of the treatment unit's Bernoulli term.
  double treatment_temperature = 1.0;

  int num_hidden() const { return static_cast<int>(layer_widths.size()) - 2; }
  int num_layers() const { return static_cast<int>(layer_widths.size()) - 1; }
  int input_dim() const { return layer_widths.front(); }
  int output_dim() const { return layer_widths.back(); }
  int width(int layer) const { return layer_widths[static_cast<std::size_t>(layer)]; }
  double noise_variance(int layer) const {
    return noise_variances[static_cast<std::size_t>(layer - 1)];
  }

  // Position of the clamped treatment unit in `layer`, or -1.
  int treatment_slot(int layer) const {
    return treatment && treatment->layer == layer ? treatment->position : -1;
  }

  void validate() const {
    if (layer_widths.size() < 3) {
      throw StructuralError("network needs an input, at least one hidden layer and an output");
    }
    for (int w : layer_widths) {
      if (w < 1) throw StructuralError("layer widths must be >= 1");
    }
    if (static_cast<int>(noise_variances.size()) != num_layers()) {
      throw StructuralError("expected " + std::to_string(num_layers()) + " noise variances, got " +
                            std::to_string(noise_variances.size()));
    }
    for (double v : noise_variances) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ParameterError("noise variances must be positive");
    }
    if (treatment) {
      if (treatment->layer < 1 || treatment->layer > num_hidden()) {
        throw StructuralError("treatment layer must be a hidden layer (1.." +
                              std::to_string(num_hidden()) + ")");
      }
      if (treatment->position < 0 || treatment->position >= width(treatment->layer)) {
        throw StructuralError("treatment position outside layer " + std::to_string(treatment->layer));
      }
    }
    if (!(treatment_temperature > 0.0)) throw ParameterError("treatment temperature must be positive");
  }

  // Soft checks; the network is still usable when these fire.
  std::vector<std::string> warnings() const {
    std::vector<std::string> out;
    for (std::size_t i = 1; i < noise_variances.size(); ++i) {
      if (noise_variances[i] < noise_variances[i - 1]) {
        out.push_back("noise variances decrease between layers " + std::to_string(i) + " and " +
                      std::to_string(i + 1));
        break;
      }
    }
    return out;
  }
};

// Weight and bias blocks shaped after a NetworkConfig; index i holds layer i+1.
struct LayerBlocks {
  std::vector<Eigen::MatrixXd> weights;  // d_i x d_{i-1}
  std::vector<Eigen::VectorXd> biases;   // d_i

  int num_layers() const { return static_cast<int>(weights.size()); }

  Eigen::Index size() const {
    Eigen::Index n = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) n += weights[i].size() + biases[i].size();
    return n;
  }

  bool matches(const NetworkConfig& config) const {
    if (num_layers() != config.num_layers() || biases.size() != weights.size()) return false;
    for (int i = 1; i <= config.num_layers(); ++i) {
      const auto& w = weights[static_cast<std::size_t>(i - 1)];
      if (w.rows() != config.width(i) || w.cols() != config.width(i - 1)) return false;
      if (biases[static_cast<std::size_t>(i - 1)].size() != config.width(i)) return false;
    }
    return true;
  }

  void check_shape(const NetworkConfig& config, const char* what) const {
    if (!matches(config)) throw StructuralError(std::string(what) + " shape does not match the network configuration");
  }

  bool all_finite() const {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (!weights[i].allFinite() || !biases[i].allFinite()) return false;
    }
    return true;
  }

 protected:
  void resize_like(const NetworkConfig& config, double fill) {
    weights.clear();
    biases.clear();
    for (int i = 1; i <= config.num_layers(); ++i) {
      weights.push_back(Eigen::MatrixXd::Constant(config.width(i), config.width(i - 1), fill));
      biases.push_back(Eigen::VectorXd::Constant(config.width(i), fill));
    }
  }
};

struct NetworkParameters : LayerBlocks {
  static NetworkParameters zeros(const NetworkConfig& config) {
    NetworkParameters p;
    p.resize_like(config, 0.0);
    return p;
  }

  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and biases.
  template <class Rng>
  static NetworkParameters random(const NetworkConfig& config, Rng& rng) {
    NetworkParameters p = zeros(config);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    for (int i = 0; i < p.num_layers(); ++i) {
      const double bound = 1.0 / std::sqrt(static_cast<double>(p.weights[i].cols()));
      for (Eigen::Index c = 0; c < p.weights[i].cols(); ++c)
        for (Eigen::Index r = 0; r < p.weights[i].rows(); ++r) p.weights[i](r, c) = bound * unit(rng);
      for (Eigen::Index r = 0; r < p.biases[i].size(); ++r) p.biases[i](r) = bound * unit(rng);
    }
    return p;
  }

  NetworkParameters& operator+=(const NetworkParameters& o) {
    for (std::size_t i = 0; i < weights.size(); ++i) {
      weights[i] += o.weights[i];
      biases[i] += o.biases[i];
    }
    return *this;
  }
};

using ParameterGradient = NetworkParameters;

// Binary indicator per parameter entry (stored as 0.0 / 1.0).
struct SparsityMask : LayerBlocks {
  static SparsityMask dense(const NetworkConfig& config) {
    SparsityMask m;
    m.resize_like(config, 1.0);
    return m;
  }

  Eigen::Index active_count() const {
    Eigen::Index n = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      n += (weights[i].array() != 0.0).count() + (biases[i].array() != 0.0).count();
    }
    return n;
  }

  bool is_dense() const { return active_count() == size(); }
};

// Parameters with masked-out entries physically zeroed.
inline NetworkParameters apply_mask(const NetworkParameters& params, const SparsityMask& mask) {
  NetworkParameters out = params;
  for (std::size_t i = 0; i < params.weights.size(); ++i) {
    out.weights[i] = params.weights[i].cwiseProduct(mask.weights[i]);
    out.biases[i] = params.biases[i].cwiseProduct(mask.biases[i]);
  }
  return out;
}

inline void mask_in_place(NetworkParameters& g, const SparsityMask& mask) {
  for (std::size_t i = 0; i < g.weights.size(); ++i) {
    g.weights[i].array() *= mask.weights[i].array();
    g.biases[i].array() *= mask.biases[i].array();
  }
}

// One observation. `outcome` has d_{h+1} entries (0/1 for logistic outputs).
struct Sample {
  Eigen::VectorXd x;
  int treatment = 0;
  Eigen::VectorXd outcome;
};

struct LatentState {
  std::vector<Eigen::VectorXd> hidden;    // Y_1..Y_h, treatment slot clamped to A
  std::vector<Eigen::VectorXd> momentum;  // SGHMC momenta, one per hidden layer
  std::vector<int> missing;               // covariate indices imputed by the sampler
  Eigen::VectorXd x_missing;              // current imputed values at `missing`
  Eigen::VectorXd x_momentum;
};

inline Eigen::VectorXd complete_covariates(const Sample& sample, const LatentState& latents) {
  Eigen::VectorXd x = sample.x;
  for (std::size_t j = 0; j < latents.missing.size(); ++j) {
    x(latents.missing[j]) = latents.x_missing(static_cast<Eigen::Index>(j));
  }
  return x;
}

inline void check_latents(const NetworkConfig& config, const Sample& sample, const LatentState& latents) {
  if (static_cast<int>(latents.hidden.size()) != config.num_hidden()) {
    throw StructuralError("latent state has the wrong number of hidden layers");
  }
  for (int i = 1; i <= config.num_hidden(); ++i) {
    if (latents.hidden[static_cast<std::size_t>(i - 1)].size() != config.width(i)) {
      throw StructuralError("latent layer " + std::to_string(i) + " has the wrong width");
    }
  }
  if (latents.x_missing.size() != static_cast<Eigen::Index>(latents.missing.size())) {
    throw StructuralError("imputed covariate block does not match its index list");
  }
  if (sample.x.size() != config.input_dim()) throw StructuralError("covariate vector has the wrong length");
  if (sample.outcome.size() != config.output_dim()) throw StructuralError("outcome has the wrong length");
  if (config.treatment) {
    const auto& slot = *config.treatment;
    if (latents.hidden[static_cast<std::size_t>(slot.layer - 1)](slot.position) !=
        static_cast<double>(sample.treatment)) {
      throw StructuralError("clamped treatment slot differs from the observed treatment");
    }
  }
}

// Input to `layer` given the value of the previous layer. Layer 1 reads the
// covariates directly; later layers read the activated latent values, except
// the treatment slot which passes the observed A through unchanged.
inline void layer_input(const NetworkConfig& config, int layer, const Eigen::VectorXd& prev,
                        Eigen::VectorXd& out) {
  if (layer == 1) {
    out = prev;
    return;
  }
  out.resize(prev.size());
  for (Eigen::Index k = 0; k < prev.size(); ++k) out(k) = activate(config.activation, prev(k));
  const int slot = config.treatment_slot(layer - 1);
  if (slot >= 0) out(slot) = prev(slot);
}

inline void layer_mean(const NetworkParameters& params, int layer, const Eigen::VectorXd& input,
                       Eigen::VectorXd& out) {
  const auto idx = static_cast<std::size_t>(layer - 1);
  out.noalias() = params.weights[idx] * input;
  out += params.biases[idx];
}

struct ForwardPass {
  std::vector<Eigen::VectorXd> preactivations;  // Y~_1 .. Y~_{h+1}
  double propensity_logit = 0.0;                // 0 when the net has no treatment unit
  Eigen::VectorXd output;                       // Y~_{h+1}
};

// Forward pass on already-masked parameters. No noise is injected.
inline ForwardPass forward_unchecked(const NetworkConfig& config, const NetworkParameters& params,
                                     const Eigen::VectorXd& x, int a) {
  ForwardPass fp;
  fp.preactivations.resize(static_cast<std::size_t>(config.num_layers()));
  Eigen::VectorXd prev = x;
  Eigen::VectorXd input;
  for (int i = 1; i <= config.num_layers(); ++i) {
    layer_input(config, i, prev, input);
    auto& pre = fp.preactivations[static_cast<std::size_t>(i - 1)];
    layer_mean(params, i, input, pre);
    if (!pre.allFinite()) throw NumericError("non-finite preactivation in layer " + std::to_string(i));
    prev = pre;
    const int slot = config.treatment_slot(i);
    if (slot >= 0) {
      fp.propensity_logit = pre(slot);
      prev(slot) = static_cast<double>(a);
    }
  }
  fp.output = fp.preactivations.back();
  return fp;
}

inline ForwardPass dnn_forward(const NetworkConfig& config, const NetworkParameters& params,
                               const SparsityMask& mask, const Eigen::VectorXd& x, int a) {
  params.check_shape(config, "parameter");
  mask.check_shape(config, "mask");
  if (x.size() != config.input_dim()) throw StructuralError("covariate vector has the wrong length");
  if (a != 0 && a != 1) throw InputError("treatment must be 0 or 1");
  return forward_unchecked(config, apply_mask(params, mask), x, a);
}

// Latent state seeded with the deterministic forward values; momenta zero.
inline LatentState latents_from_forward(const NetworkConfig& config, const ForwardPass& fp, int a) {
  LatentState s;
  for (int i = 1; i <= config.num_hidden(); ++i) {
    Eigen::VectorXd y = fp.preactivations[static_cast<std::size_t>(i - 1)];
    const int slot = config.treatment_slot(i);
    if (slot >= 0) y(slot) = static_cast<double>(a);
    s.momentum.push_back(Eigen::VectorXd::Zero(y.size()));
    s.hidden.push_back(std::move(y));
  }
  return s;
}

inline constexpr double kLogTwoPi = 1.8378770664093454836;  // log(2*pi)

// Sum of independent N(mean_k, variance) log-densities, skipping index `skip`.
inline double gaussian_log_density(const Eigen::VectorXd& y, const Eigen::VectorXd& mean, double variance,
                                   int skip = -1) {
  if (!(variance > 0.0)) throw ParameterError("noise variance must be positive");
  double sq = 0.0;
  Eigen::Index n = 0;
  for (Eigen::Index k = 0; k < y.size(); ++k) {
    if (k == skip) continue;
    const double r = y(k) - mean(k);
    sq += r * r;
    ++n;
  }
  return -0.5 * static_cast<double>(n) * (kLogTwoPi + std::log(variance)) - 0.5 * sq / variance;
}

// Tempered Bernoulli log-mass: [a log s(z) + (1 - a) log s(-z)] / temperature.
// The link stays sigmoid(z); the temperature only rescales the term.
inline double bernoulli_log_mass(double logit, double a, double temperature) {
  if (!(temperature > 0.0)) throw ParameterError("temperature must be positive");
  return (a * log_sigmoid(logit) + (1.0 - a) * log_sigmoid(-logit)) / temperature;
}

inline double layer_log_density_from_mean(const NetworkConfig& config, int layer, const Eigen::VectorXd& y_cur,
                                          const Eigen::VectorXd& mean) {
  const double var = config.noise_variance(layer);
  if (layer == config.num_layers() && config.output_kind == OutputKind::logistic) {
    double total = 0.0;
    for (Eigen::Index k = 0; k < y_cur.size(); ++k) total += bernoulli_log_mass(mean(k), y_cur(k), var);
    return total;
  }
  const int slot = config.treatment_slot(layer);
  double total = gaussian_log_density(y_cur, mean, var, slot);
  if (slot >= 0) total += bernoulli_log_mass(mean(slot), y_cur(slot), config.treatment_temperature);
  return total;
}

// log pi(Y_layer | Y_{layer-1}, theta_layer). `y_prev` is the raw previous
// layer (covariates for layer 1), `y_cur` the layer's values with the treatment
// slot holding A.
inline double layer_log_density(const NetworkConfig& config, const NetworkParameters& params, int layer,
                                const Eigen::VectorXd& y_prev, const Eigen::VectorXd& y_cur) {
  if (layer < 1 || layer > config.num_layers()) throw StructuralError("layer index out of range");
  if (y_prev.size() != config.width(layer - 1) || y_cur.size() != config.width(layer)) {
    throw StructuralError("layer " + std::to_string(layer) + " values have the wrong width");
  }
  Eigen::VectorXd input, mean;
  layer_input(config, layer, y_prev, input);
  layer_mean(params, layer, input, mean);
  return layer_log_density_from_mean(config, layer, y_cur, mean);
}

// Gaussian layers include every normalizing constant.
inline double complete_data_log_likelihood(const NetworkConfig& config, const NetworkParameters& params,
                                           const SparsityMask& mask, const Sample& sample,
                                           const LatentState& latents) {
  params.check_shape(config, "parameter");
  mask.check_shape(config, "mask");
  check_latents(config, sample, latents);
  const NetworkParameters eff = apply_mask(params, mask);
  Eigen::VectorXd prev = complete_covariates(sample, latents);
  double total = 0.0;
  for (int i = 1; i <= config.num_layers(); ++i) {
    const Eigen::VectorXd& cur =
        i <= config.num_hidden() ? latents.hidden[static_cast<std::size_t>(i - 1)] : sample.outcome;
    total += layer_log_density(config, eff, i, prev, cur);
    prev = cur;
  }
  if (!std::isfinite(total)) throw NumericError("non-finite complete-data log-likelihood");
  return total;
}

// d log pi(Y_layer | mean) / d mean, entry by entry.
inline void layer_score(const NetworkConfig& config, int layer, const Eigen::VectorXd& y_cur,
                        const Eigen::VectorXd& mean, Eigen::VectorXd& score) {
  const double var = config.noise_variance(layer);
  if (layer == config.num_layers() && config.output_kind == OutputKind::logistic) {
    score.resize(y_cur.size());
    for (Eigen::Index k = 0; k < y_cur.size(); ++k) score(k) = (y_cur(k) - sigmoid(mean(k))) / var;
    return;
  }
  score = (y_cur - mean) / var;
  const int slot = config.treatment_slot(layer);
  if (slot >= 0) {
    const double t = config.treatment_temperature;
    score(slot) = (y_cur(slot) - sigmoid(mean(slot))) / t;
  }
}

// Inputs, means and scores of every layer at a fixed latent state.
struct LayerTrace {
  std::vector<Eigen::VectorXd> inputs;
  std::vector<Eigen::VectorXd> means;
  std::vector<Eigen::VectorXd> scores;
};

inline LayerTrace trace_layers(const NetworkConfig& config, const NetworkParameters& eff,
                               const Eigen::VectorXd& x, const std::vector<Eigen::VectorXd>& hidden,
                               const Eigen::VectorXd& outcome) {
  LayerTrace t;
  const auto L = static_cast<std::size_t>(config.num_layers());
  t.inputs.resize(L);
  t.means.resize(L);
  t.scores.resize(L);
  for (int i = 1; i <= config.num_layers(); ++i) {
    const auto idx = static_cast<std::size_t>(i - 1);
    const Eigen::VectorXd& prev = i == 1 ? x : hidden[idx - 1];
    const Eigen::VectorXd& cur = i <= config.num_hidden() ? hidden[idx] : outcome;
    layer_input(config, i, prev, t.inputs[idx]);
    layer_mean(eff, i, t.inputs[idx], t.means[idx]);
    layer_score(config, i, cur, t.means[idx], t.scores[idx]);
  }
  return t;
}

struct LatentGradient {
  std::vector<Eigen::VectorXd> hidden;  // one per hidden layer
  Eigen::VectorXd x_missing;            // matches LatentState::missing
};

// Gradient of the complete-data log-likelihood with respect to each latent
// block. Each hidden value collects its own layer's term and the next layer's
// term; the clamped treatment slot always gets 0.
inline LatentGradient grad_latents(const NetworkConfig& config, const NetworkParameters& params,
                                   const SparsityMask& mask, const Sample& sample, const LatentState& latents) {
  params.check_shape(config, "parameter");
  mask.check_shape(config, "mask");
  check_latents(config, sample, latents);
  const NetworkParameters eff = apply_mask(params, mask);
  const Eigen::VectorXd x = complete_covariates(sample, latents);
  const LayerTrace t = trace_layers(config, eff, x, latents.hidden, sample.outcome);

  LatentGradient g;
  for (int i = 1; i <= config.num_hidden(); ++i) {
    const auto idx = static_cast<std::size_t>(i - 1);
    const Eigen::VectorXd& y = latents.hidden[idx];
    Eigen::VectorXd upstream = eff.weights[idx + 1].transpose() * t.scores[idx + 1];
    Eigen::VectorXd gi(y.size());
    for (Eigen::Index k = 0; k < y.size(); ++k) {
      gi(k) = -t.scores[idx](k) + activate_derivative(config.activation, y(k)) * upstream(k);
    }
    const int slot = config.treatment_slot(i);
    if (slot >= 0) gi(slot) = 0.0;
    if (!gi.allFinite()) throw NumericError("non-finite latent gradient in layer " + std::to_string(i));
    g.hidden.push_back(std::move(gi));
  }
  g.x_missing.resize(static_cast<Eigen::Index>(latents.missing.size()));
  for (std::size_t j = 0; j < latents.missing.size(); ++j) {
    g.x_missing(static_cast<Eigen::Index>(j)) = eff.weights[0].col(latents.missing[j]).dot(t.scores[0]);
  }
  return g;
}

// Gradient with respect to (w_i, b_i). Layer i only touches (Y_{i-1}, Y_i).
inline ParameterGradient grad_params(const NetworkConfig& config, const NetworkParameters& params,
                                     const SparsityMask& mask, const Sample& sample, const LatentState& latents) {
  params.check_shape(config, "parameter");
  mask.check_shape(config, "mask");
  check_latents(config, sample, latents);
  const NetworkParameters eff = apply_mask(params, mask);
  const Eigen::VectorXd x = complete_covariates(sample, latents);
  const LayerTrace t = trace_layers(config, eff, x, latents.hidden, sample.outcome);
  ParameterGradient g = ParameterGradient::zeros(config);
  for (std::size_t i = 0; i < g.weights.size(); ++i) {
    g.weights[i].noalias() = t.scores[i] * t.inputs[i].transpose();
    g.biases[i] = t.scores[i];
  }
  mask_in_place(g, mask);
  if (!g.all_finite()) throw NumericError("non-finite parameter gradient");
  return g;
}

}  // namespace cstonet
