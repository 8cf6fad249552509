#pragma once

// Adaptive SGHMC training of a (sparse) Causal-StoNet.
//
// Each epoch walks the data in shuffled mini-batches. For every sample in a
// batch the hidden latents are re-initialised at the forward values, moved by
// t_mc backward SGHMC sweeps (layer h down to 1, then the missing-covariate
// block), and the resulting complete-data scores drive one stochastic
// approximation step on the parameters. Pretrain and train run dense; the
// mixture-prior threshold then prunes the network and the refine stage keeps
// the pruned entries at zero.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "cstonet/covariate_model.hpp"
#include "cstonet/dataset.hpp"
#include "cstonet/errors.hpp"
#include "cstonet/network.hpp"
#include "cstonet/rng.hpp"
#include "cstonet/schedule.hpp"
#include "cstonet/sparse_prior.hpp"

namespace cstonet {

inline void set_num_threads(int n) {
#ifdef _OPENMP
  if (n > 0) omp_set_num_threads(n);
#else
  (void)n;
#endif
}

// Learning rates for one imputation call.
struct ImputeSettings {
  std::vector<double> lr;  // one per hidden layer
  double lr_missing = 0.0;
  double friction = 1.0;
  int t_mc = 1;
};

struct EpochDiagnostics {
  int run = 0;
  int epoch = 0;  // global, 1-based
  std::string stage;
  double log_posterior = 0.0;   // sum of complete-data log-likelihoods + log prior
  double kinetic_energy = 0.0;  // mean 0.5 |v|^2 after imputation
};

struct TrajectoryPoint {
  NetworkParameters params;
  Eigen::VectorXd x_missing;                // imputed values in FittedModel::missing_cells order
  std::vector<std::vector<Eigen::VectorXd>> hidden;  // [sample][layer], only with store_latents
};

// Called after every epoch with the epoch's diagnostics and current parameters.
using EpochObserver = std::function<void(const EpochDiagnostics&, const NetworkParameters&, const SparsityMask&)>;

struct FittedModel {
  NetworkConfig config;
  NetworkParameters params;
  SparsityMask mask;
  PriorHyperparameters hyper;
  TrainingSchedule schedule;
  std::optional<CovariateModel> covariate_model;
  ImputeSettings final_impute;  // imputation rates in effect at the last epoch
  std::vector<EpochDiagnostics> diagnostics;
  std::vector<double> run_bic;
  int selected_run = 0;
  std::vector<std::pair<int, int>> missing_cells;  // (row, column) of the training data
  std::vector<TrajectoryPoint> trajectory;

  NetworkParameters masked_params() const { return apply_mask(params, mask); }
};

namespace detail {

// Per-thread scratch vectors so the hot loop never allocates.
struct SweepWorkspace {
  Eigen::VectorXd input, mean_above, score_above, upstream, mean_cur, score1, grad_x;
};

}  // namespace detail

// One backward SGHMC sweep over a single sample. `x` is the sample's full
// covariate vector (missing entries filled from `lat.x_missing`) and is kept in
// sync with it. Layer i sees the already-updated layer i+1.
template <class Rng>
void sghmc_sweep(const NetworkConfig& c, const NetworkParameters& eff, const CovariateModel* cov,
                 const Eigen::VectorXd& outcome, Eigen::VectorXd& x, LatentState& lat, const ImputeSettings& st,
                 Rng& rng, detail::SweepWorkspace& ws, long sample_id = -1) {
  const int h = c.num_hidden();
  std::normal_distribution<double> normal(0.0, 1.0);

  layer_input(c, h + 1, lat.hidden[static_cast<std::size_t>(h - 1)], ws.input);
  layer_mean(eff, h + 1, ws.input, ws.mean_above);

  for (int i = h; i >= 1; --i) {
    const auto idx = static_cast<std::size_t>(i - 1);
    const Eigen::VectorXd& above = i == h ? outcome : lat.hidden[idx + 1];
    layer_score(c, i + 1, above, ws.mean_above, ws.score_above);
    ws.upstream.noalias() = eff.weights[idx + 1].transpose() * ws.score_above;

    if (i == 1) {
      layer_mean(eff, 1, x, ws.mean_cur);
    } else {
      layer_input(c, i, lat.hidden[idx - 1], ws.input);
      layer_mean(eff, i, ws.input, ws.mean_cur);
    }

    Eigen::VectorXd& y = lat.hidden[idx];
    Eigen::VectorXd& v = lat.momentum[idx];
    const double eps = st.lr[idx];
    const double decay = 1.0 - eps * st.friction;
    const double noise_sd = std::sqrt(2.0 * eps * st.friction);
    const double inv_var = 1.0 / c.noise_variance(i);
    const int slot = c.treatment_slot(i);
    for (Eigen::Index k = 0; k < y.size(); ++k) {
      if (k == slot) continue;
      const double g = -(y(k) - ws.mean_cur(k)) * inv_var + activate_derivative(c.activation, y(k)) * ws.upstream(k);
      v(k) = decay * v(k) + eps * g + noise_sd * normal(rng);
      y(k) += eps * v(k);
    }
    if (!y.allFinite()) {
      throw NumericError("non-finite latent at sample " + std::to_string(sample_id) + ", layer " + std::to_string(i));
    }
    std::swap(ws.mean_above, ws.mean_cur);  // mean of layer i given the (unchanged) layer i-1
  }

  if (!lat.missing.empty()) {
    if (cov == nullptr) throw InputError("missing covariates present but no covariate model supplied");
    layer_score(c, 1, lat.hidden[0], ws.mean_above, ws.score1);
    const auto m = static_cast<Eigen::Index>(lat.missing.size());
    ws.grad_x.resize(m);
    for (Eigen::Index a = 0; a < m; ++a) {
      const int j = lat.missing[static_cast<std::size_t>(a)];
      ws.grad_x(a) = cov->log_density_gradient(x, j) + eff.weights[0].col(j).dot(ws.score1);
    }
    const double eps = st.lr_missing;
    const double decay = 1.0 - eps * st.friction;
    const double noise_sd = std::sqrt(2.0 * eps * st.friction);
    for (Eigen::Index a = 0; a < m; ++a) {
      const int j = lat.missing[static_cast<std::size_t>(a)];
      lat.x_momentum(a) = decay * lat.x_momentum(a) + eps * ws.grad_x(a) + noise_sd * normal(rng);
      x(j) += eps * lat.x_momentum(a);
      lat.x_missing(a) = x(j);
    }
    if (!lat.x_missing.allFinite()) {
      throw NumericError("non-finite imputed covariate at sample " + std::to_string(sample_id) + ", layer 0");
    }
  }
}

// Re-initialises the hidden latents of one sample at the forward values,
// zeroes the momenta and runs t_mc sweeps. Observed covariates are never
// written; imputed ones continue from `lat.x_missing`.
inline void impute_sample(const NetworkConfig& c, const NetworkParameters& eff, const CovariateModel* cov,
                          const Sample& s, LatentState& lat, const ImputeSettings& st, std::uint64_t seed,
                          std::uint64_t sample_index, std::uint64_t epoch, detail::SweepWorkspace& ws,
                          Eigen::VectorXd* x_out = nullptr) {
  Eigen::VectorXd x = complete_covariates(s, lat);
  const ForwardPass fp = forward_unchecked(c, eff, x, s.treatment);
  LatentState fresh = latents_from_forward(c, fp, s.treatment);
  lat.hidden = std::move(fresh.hidden);
  lat.momentum = std::move(fresh.momentum);
  lat.x_momentum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(lat.missing.size()));
  for (int l = 0; l < st.t_mc; ++l) {
    SplitMix64 rng = make_stream(seed, {stream::kImpute, sample_index, epoch, static_cast<std::uint64_t>(l)});
    sghmc_sweep(c, eff, cov, s.outcome, x, lat, st, rng, ws, static_cast<long>(sample_index));
  }
  if (x_out) *x_out = std::move(x);
}

// Backward imputation for a batch. latents[b] must carry the sample's missing
// index list and current imputed values; hidden blocks and momenta are reset.
inline void backward_impute(const NetworkConfig& c, const NetworkParameters& params, const SparsityMask& mask,
                            const CovariateModel* cov, const std::vector<Sample>& batch,
                            const std::vector<std::uint64_t>& sample_ids, std::vector<LatentState>& latents,
                            const ImputeSettings& st, std::uint64_t seed, std::uint64_t epoch) {
  if (batch.size() != latents.size() || batch.size() != sample_ids.size()) {
    throw StructuralError("batch, sample ids and latents must have the same length");
  }
  if (static_cast<int>(st.lr.size()) != c.num_hidden()) throw ParameterError("one imputation rate per hidden layer");
  const NetworkParameters eff = apply_mask(params, mask);
  detail::SweepWorkspace ws;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    impute_sample(c, eff, cov, batch[b], latents[b], st, seed, sample_ids[b], epoch, ws);
  }
}

// Sum over a batch of d log pi(Y_i | Y_{i-1}, theta_i) / d theta_i, masked.
inline ParameterGradient batch_likelihood_gradient(const NetworkConfig& c, const NetworkParameters& params,
                                                   const SparsityMask& mask, const std::vector<Sample>& batch,
                                                   const std::vector<LatentState>& latents) {
  ParameterGradient total = ParameterGradient::zeros(c);
  for (std::size_t b = 0; b < batch.size(); ++b) total += grad_params(c, params, mask, batch[b], latents[b]);
  return total;
}

struct SaStep {
  std::vector<double> gamma;     // per layer
  double treatment_gamma = 0.0;  // propensity row; 0 = use the layer's gamma
  std::size_t batch_size = 1;
  std::size_t n = 1;
  bool project = false;  // keep masked entries at zero
  double clip_norm = 0.0;
};

// theta_i += gamma_i * (sum_s grad log pi(Y_i | theta_i, Y_{i-1}) + |S|/n grad log pi(theta))
inline void sa_update(const NetworkConfig& c, NetworkParameters& params, const SparsityMask& mask,
                      const PriorHyperparameters& hyper, ParameterGradient likelihood_grad, const SaStep& step) {
  if (static_cast<int>(step.gamma.size()) != c.num_layers()) throw ParameterError("one step size per layer");
  if (step.clip_norm > 0.0) {
    for (std::size_t i = 0; i < likelihood_grad.weights.size(); ++i) {
      const double norm = std::sqrt(likelihood_grad.weights[i].squaredNorm() + likelihood_grad.biases[i].squaredNorm());
      if (norm > step.clip_norm) {
        likelihood_grad.weights[i] *= step.clip_norm / norm;
        likelihood_grad.biases[i] *= step.clip_norm / norm;
      }
    }
  }
  const NetworkParameters prior = grad_log_prior(params, hyper);
  const double prior_scale = static_cast<double>(step.batch_size) / static_cast<double>(step.n);
  for (int i = 1; i <= c.num_layers(); ++i) {
    const auto idx = static_cast<std::size_t>(i - 1);
    const double gamma = step.gamma[idx];
    const int slot = c.treatment_slot(i);
    if (slot >= 0 && step.treatment_gamma > 0.0) {
      Eigen::VectorXd scale = Eigen::VectorXd::Constant(c.width(i), gamma);
      scale(slot) = step.treatment_gamma;
      params.weights[idx] += scale.asDiagonal() * (likelihood_grad.weights[idx] + prior_scale * prior.weights[idx]);
      params.biases[idx] += scale.cwiseProduct(likelihood_grad.biases[idx] + prior_scale * prior.biases[idx]);
    } else {
      params.weights[idx] += gamma * (likelihood_grad.weights[idx] + prior_scale * prior.weights[idx]);
      params.biases[idx] += gamma * (likelihood_grad.biases[idx] + prior_scale * prior.biases[idx]);
    }
  }
  if (step.project) params = apply_mask(params, mask);
  if (!params.all_finite()) throw NumericError("non-finite parameter after stochastic-approximation update");
}

// -2 sum log pi_DNN(y | x, a, theta masked) + |gamma| log n, with the output
// layer's own density (variance sigma^2_{h+1}, or temperature for logistic).
inline double bic_score(const FittedModel& fitted, const Dataset& d) {
  if (d.n() == 0) throw InputError("empty dataset");
  const NetworkParameters eff = fitted.masked_params();
  const auto& c = fitted.config;
  double ll = 0.0;
  for (Eigen::Index i = 0; i < d.n(); ++i) {
    Sample s = d.sample(i);
    const auto missing = d.missing_indices(i);
    if (!missing.empty()) {
      if (!fitted.covariate_model) throw InputError("dataset has missing covariates but the model has no covariate model");
      fitted.covariate_model->conditional_mean(s.x, missing);
    }
    const ForwardPass fp = forward_unchecked(c, eff, s.x, s.treatment);
    ll += layer_log_density_from_mean(c, c.num_layers(), s.outcome, fp.output);
  }
  return -2.0 * ll + static_cast<double>(fitted.mask.active_count()) * std::log(static_cast<double>(d.n()));
}

// Trajectory average of phi over the stored (theta, z) iterates.
inline double posterior_average(const FittedModel& fitted,
                                const std::function<double(const NetworkParameters&, const TrajectoryPoint&)>& phi) {
  if (fitted.trajectory.empty()) {
    TrajectoryPoint only{fitted.masked_params(), {}, {}};
    return phi(only.params, only);
  }
  double sum = 0.0;
  for (const auto& pt : fitted.trajectory) sum += phi(pt.params, pt);
  return sum / static_cast<double>(fitted.trajectory.size());
}

namespace detail {

enum class Stage { pretrain, train, refine };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::pretrain: return "pretrain";
    case Stage::train: return "train";
    case Stage::refine: return "refine";
  }
  return "?";
}

// One run of the training loop with a fixed seed.
class SingleRun {
 public:
  SingleRun(const Dataset& d, const NetworkConfig& c, const PriorHyperparameters& hyper,
            const TrainingSchedule& sched, const CovariateModel* cov, std::uint64_t seed, int run_index,
            const EpochObserver* observer = nullptr)
      : data_(d), c_(c), hyper_(hyper), sched_(sched), cov_(cov), seed_(seed), run_(run_index), observer_(observer) {}

  FittedModel run() {
    const auto n = static_cast<std::size_t>(data_.n());
    SplitMix64 init_rng = make_stream(seed_, {stream::kInit});
    params_ = NetworkParameters::random(c_, init_rng);
    mask_ = SparsityMask::dense(c_);

    samples_.reserve(n);
    latents_.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      Sample s = data_.sample(static_cast<Eigen::Index>(i));
      LatentState& lat = latents_[i];
      lat.missing = data_.missing_indices(static_cast<Eigen::Index>(i));
      if (!lat.missing.empty()) {
        cov_->conditional_mean(s.x, lat.missing);
        lat.x_missing.resize(static_cast<Eigen::Index>(lat.missing.size()));
        for (std::size_t a = 0; a < lat.missing.size(); ++a) {
          lat.x_missing(static_cast<Eigen::Index>(a)) = s.x(lat.missing[a]);
        }
        for (int j : lat.missing) missing_cells_.emplace_back(static_cast<int>(i), j);
      }
      samples_.push_back(std::move(s));
    }

    int global_epoch = 0;
    const int tail_from_refine = sched_.epochs_refine;
    for (int e = 1; e <= sched_.epochs_pretrain; ++e) run_epoch(Stage::pretrain, 0, ++global_epoch, false);
    for (int e = 1; e <= sched_.epochs_train; ++e) {
      const bool record = tail_from_refine == 0 && e > sched_.epochs_train - sched_.tail_length;
      run_epoch(Stage::train, e, ++global_epoch, record);
      if (std::find(sched_.prune_epochs.begin(), sched_.prune_epochs.end(), e) != sched_.prune_epochs.end()) prune();
    }
    prune();
    for (int e = 1; e <= sched_.epochs_refine; ++e) {
      const bool record = e > sched_.epochs_refine - sched_.tail_length;
      run_epoch(Stage::refine, e, ++global_epoch, record);
    }

    FittedModel fm;
    fm.config = c_;
    fm.params = params_;
    fm.mask = mask_;
    fm.hyper = hyper_;
    fm.schedule = sched_;
    if (cov_) fm.covariate_model = *cov_;
    fm.final_impute = last_impute_;
    fm.diagnostics = std::move(diag_);
    fm.missing_cells = missing_cells_;
    fm.trajectory = std::move(trajectory_);
    return fm;
  }

 private:
  void prune() {
    mask_ = build_mask(params_, hyper_);
    params_ = apply_mask(params_, mask_);
    pruned_ = true;
  }

  ImputeSettings impute_settings(Stage stage, int k) const {
    ImputeSettings st;
    st.friction = sched_.friction;
    st.t_mc = sched_.t_mc;
    const double kk = stage == Stage::pretrain ? 0.0 : static_cast<double>(k);
    for (double base : sched_.impute_lr) {
      st.lr.push_back(lr_schedule(kk, base, sched_.form, sched_.impute_decay, sched_.lemma1_offset));
    }
    st.lr_missing = sched_.impute_lr_missing > 0.0
                        ? lr_schedule(kk, sched_.impute_lr_missing, sched_.form, sched_.impute_decay, sched_.lemma1_offset)
                        : 0.0;
    return st;
  }

  SaStep sa_step(Stage stage, int k, std::size_t batch) const {
    SaStep st;
    const double kk = stage == Stage::pretrain ? 0.0 : static_cast<double>(k);
    const bool refine = stage == Stage::refine;
    for (int i = 1; i <= c_.num_layers(); ++i) {
      const double base = refine ? sched_.refine_base(i) : sched_.step[static_cast<std::size_t>(i - 1)];
      st.gamma.push_back(lr_schedule(kk, base, sched_.form, sched_.step_decay, sched_.lemma1_offset));
    }
    const double tb = sched_.treatment_base(refine);
    st.treatment_gamma = tb > 0.0 ? lr_schedule(kk, tb, sched_.form, sched_.step_decay, sched_.lemma1_offset) : 0.0;
    st.batch_size = batch;
    st.n = samples_.size();
    st.project = pruned_;
    st.clip_norm = sched_.clip_norm;
    return st;
  }

  void run_epoch(Stage stage, int k, int global_epoch, bool record) {
    const std::size_t n = samples_.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    SplitMix64 shuffle_rng = make_stream(seed_, {stream::kShuffle, static_cast<std::uint64_t>(global_epoch)});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    const ImputeSettings ist = impute_settings(stage, k);
    last_impute_ = ist;
    const int L = c_.num_layers();
    const auto B = static_cast<std::size_t>(sched_.batch_size);
    std::vector<Eigen::MatrixXd> inputs(static_cast<std::size_t>(L)), scores(static_cast<std::size_t>(L));
    std::vector<double> loglik(n, 0.0), kinetic(n, 0.0);

    for (std::size_t start = 0; start < n; start += B) {
      const std::size_t nb = std::min(B, n - start);
      for (int i = 1; i <= L; ++i) {
        inputs[static_cast<std::size_t>(i - 1)].resize(c_.width(i - 1), static_cast<Eigen::Index>(nb));
        scores[static_cast<std::size_t>(i - 1)].resize(c_.width(i), static_cast<Eigen::Index>(nb));
      }
      impute_batch(order, start, nb, ist, global_epoch, inputs, scores, loglik, kinetic);

      ParameterGradient g = ParameterGradient::zeros(c_);
      for (std::size_t i = 0; i < static_cast<std::size_t>(L); ++i) {
        g.weights[i].noalias() = scores[i] * inputs[i].transpose();
        g.biases[i] = scores[i].rowwise().sum();
      }
      if (pruned_) mask_in_place(g, mask_);
      sa_update(c_, params_, mask_, hyper_, std::move(g), sa_step(stage, k, nb));
    }

    EpochDiagnostics dg;
    dg.run = run_;
    dg.epoch = global_epoch;
    dg.stage = stage_name(stage);
    double ll = 0.0, ke = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      ll += loglik[i];
      ke += kinetic[i];
    }
    dg.log_posterior = ll + log_prior(params_, hyper_);
    dg.kinetic_energy = n > 0 ? ke / static_cast<double>(n) : 0.0;
    diag_.push_back(dg);
    if (observer_ && *observer_) (*observer_)(dg, params_, mask_);

    if (record) {
      TrajectoryPoint pt;
      pt.params = params_;
      pt.x_missing.resize(static_cast<Eigen::Index>(missing_cells_.size()));
      Eigen::Index pos = 0;
      for (const auto& lat : latents_) {
        for (Eigen::Index a = 0; a < lat.x_missing.size(); ++a) pt.x_missing(pos++) = lat.x_missing(a);
      }
      if (sched_.store_latents) {
        for (const auto& lat : latents_) pt.hidden.push_back(lat.hidden);
      }
      trajectory_.push_back(std::move(pt));
    }
  }

  void impute_batch(const std::vector<std::size_t>& order, std::size_t start, std::size_t nb,
                    const ImputeSettings& ist, int global_epoch, std::vector<Eigen::MatrixXd>& inputs,
                    std::vector<Eigen::MatrixXd>& scores, std::vector<double>& loglik, std::vector<double>& kinetic) {
    const int L = c_.num_layers();
    std::vector<std::string> errors(nb);
    bool failed = false;
#pragma omp parallel
    {
      detail::SweepWorkspace ws;
      Eigen::VectorXd x, mean, score, input;
#pragma omp for schedule(static)
      for (long bl = 0; bl < static_cast<long>(nb); ++bl) {
        const auto b = static_cast<std::size_t>(bl);
        const std::size_t si = order[start + b];
        try {
          LatentState& lat = latents_[si];
          impute_sample(c_, params_, cov_, samples_[si], lat, ist, seed_, si, static_cast<std::uint64_t>(global_epoch),
                        ws, &x);
          double ll = 0.0;
          for (int i = 1; i <= L; ++i) {
            const auto idx = static_cast<std::size_t>(i - 1);
            const Eigen::VectorXd& cur = i <= c_.num_hidden() ? lat.hidden[idx] : samples_[si].outcome;
            if (i == 1) {
              inputs[0].col(static_cast<Eigen::Index>(b)) = x;
              layer_mean(params_, 1, x, mean);
            } else {
              layer_input(c_, i, lat.hidden[idx - 1], input);
              inputs[idx].col(static_cast<Eigen::Index>(b)) = input;
              layer_mean(params_, i, input, mean);
            }
            layer_score(c_, i, cur, mean, score);
            scores[idx].col(static_cast<Eigen::Index>(b)) = score;
            ll += layer_log_density_from_mean(c_, i, cur, mean);
          }
          loglik[si] = ll;
          double ke = 0.0;
          for (const auto& v : lat.momentum) ke += 0.5 * v.squaredNorm();
          kinetic[si] = ke;
        } catch (const std::exception& ex) {
          errors[b] = ex.what();
#pragma omp atomic write
          failed = true;
        }
      }
    }
    if (failed) {
      for (const auto& e : errors) {
        if (!e.empty()) throw NumericError(e + " (epoch " + std::to_string(global_epoch) + ")");
      }
    }
  }

  const Dataset& data_;
  const NetworkConfig& c_;
  const PriorHyperparameters& hyper_;
  const TrainingSchedule& sched_;
  const CovariateModel* cov_;
  std::uint64_t seed_;
  int run_;
  const EpochObserver* observer_;

  NetworkParameters params_;
  SparsityMask mask_;
  bool pruned_ = false;
  std::vector<Sample> samples_;
  std::vector<LatentState> latents_;
  std::vector<std::pair<int, int>> missing_cells_;
  ImputeSettings last_impute_;
  std::vector<EpochDiagnostics> diag_;
  std::vector<TrajectoryPoint> trajectory_;
};

}  // namespace detail

// Runs the full pretrain -> train -> prune -> refine pipeline num_runs times
// with derived seeds and keeps the run with the smallest BIC on `d`.
inline FittedModel train(const Dataset& d, const NetworkConfig& config, const PriorHyperparameters& hyper,
                         const TrainingSchedule& schedule, const CovariateModel* covariate_model = nullptr,
                         const EpochObserver& observer = {}) {
  config.validate();
  hyper.validate();
  schedule.validate(config);
  d.validate();
  if (d.n() == 0) throw InputError("empty dataset");
  if (d.p() != config.input_dim()) throw InputError("dataset has " + std::to_string(d.p()) + " covariates, network expects " + std::to_string(config.input_dim()));
  if (config.output_dim() != 1) throw InputError("datasets carry a single outcome column");
  if (d.has_missing()) {
    if (covariate_model == nullptr) throw InputError("dataset has missing covariates; a covariate model is required");
    if (schedule.impute_lr_missing <= 0.0) throw ParameterError("impute_lr_missing must be positive with missing data");
  }
  if (covariate_model) {
    covariate_model->validate();
    if (covariate_model->dim() != d.p()) throw StructuralError("covariate model dimension != p");
  }

  std::optional<FittedModel> best;
  double best_bic = std::numeric_limits<double>::infinity();
  std::vector<double> bics;
  std::vector<EpochDiagnostics> all_diag;
  for (int r = 0; r < schedule.num_runs; ++r) {
    const std::uint64_t run_seed = derive_seed(schedule.seed, {stream::kRun, static_cast<std::uint64_t>(r)});
    detail::SingleRun runner(d, config, hyper, schedule, covariate_model, run_seed, r, &observer);
    FittedModel fm = runner.run();
    const double bic = bic_score(fm, d);
    bics.push_back(bic);
    all_diag.insert(all_diag.end(), fm.diagnostics.begin(), fm.diagnostics.end());
    if (bic < best_bic || !best) {
      best_bic = bic;
      fm.selected_run = r;
      best = std::move(fm);
    }
  }
  best->run_bic = std::move(bics);
  best->diagnostics = std::move(all_diag);
  return std::move(*best);
}

// Draws completions of a dataset's missing covariates with the fitted
// parameters frozen, cycling through the stored trajectory parameters. Returns
// one (parameters, completed dataset) pair per draw.
inline std::vector<std::pair<NetworkParameters, Dataset>> impute_completions(const FittedModel& fitted,
                                                                              const Dataset& d, int draws,
                                                                              int burn_in, std::uint64_t seed) {
  if (!d.has_missing()) return {{fitted.masked_params(), d}};
  if (!fitted.covariate_model) throw InputError("dataset has missing covariates but the model has no covariate model");
  if (draws < 1) throw ParameterError("need at least one imputation draw");
  const auto& c = fitted.config;
  ImputeSettings st = fitted.final_impute;
  if (st.lr.empty() || !(st.lr_missing > 0.0)) {
    throw ParameterError("fitted model carries no missing-covariate imputation rate");
  }
  std::vector<NetworkParameters> thetas;
  for (const auto& pt : fitted.trajectory) thetas.push_back(apply_mask(pt.params, fitted.mask));
  if (thetas.empty()) thetas.push_back(fitted.masked_params());

  const auto n = static_cast<std::size_t>(d.n());
  std::vector<Sample> samples;
  std::vector<LatentState> lats(n);
  for (std::size_t i = 0; i < n; ++i) {
    Sample s = d.sample(static_cast<Eigen::Index>(i));
    lats[i].missing = d.missing_indices(static_cast<Eigen::Index>(i));
    if (!lats[i].missing.empty()) {
      fitted.covariate_model->conditional_mean(s.x, lats[i].missing);
      lats[i].x_missing.resize(static_cast<Eigen::Index>(lats[i].missing.size()));
      for (std::size_t a = 0; a < lats[i].missing.size(); ++a) {
        lats[i].x_missing(static_cast<Eigen::Index>(a)) = s.x(lats[i].missing[a]);
      }
    }
    samples.push_back(std::move(s));
  }
  std::vector<std::pair<NetworkParameters, Dataset>> out;
  const int total = burn_in + draws;
  for (int it = 0; it < total; ++it) {
    const NetworkParameters& theta = thetas[static_cast<std::size_t>(it) % thetas.size()];
    std::vector<std::string> errors(n);
#pragma omp parallel
    {
      detail::SweepWorkspace ws;
#pragma omp for schedule(static)
      for (long il = 0; il < static_cast<long>(n); ++il) {
        const auto i = static_cast<std::size_t>(il);
        if (lats[i].missing.empty()) continue;
        try {
          impute_sample(c, theta, &*fitted.covariate_model, samples[i], lats[i], st, seed, i,
                        static_cast<std::uint64_t>(it), ws);
        } catch (const std::exception& ex) {
          errors[i] = ex.what();
        }
      }
    }
    for (const auto& e : errors) {
      if (!e.empty()) throw NumericError(e);
    }
    if (it >= burn_in) {
      Dataset completed = d;
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t a = 0; a < lats[i].missing.size(); ++a) {
          completed.covariates(static_cast<Eigen::Index>(i), lats[i].missing[a]) =
              lats[i].x_missing(static_cast<Eigen::Index>(a));
        }
      }
      completed.observed.setOnes();
      out.emplace_back(theta, std::move(completed));
    }
  }
  return out;
}

}  // namespace cstonet
