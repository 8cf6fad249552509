#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "cstonet/errors.hpp"
#include "cstonet/network.hpp"

namespace cstonet {

// lemma1: base / (offset + k^exponent)
// a8:     base / (1 + base * k^exponent)
enum class ScheduleForm { lemma1, a8 };

inline std::string to_string(ScheduleForm f) { return f == ScheduleForm::lemma1 ? "lemma1" : "a8"; }

inline ScheduleForm parse_schedule_form(const std::string& s) {
  if (s == "lemma1") return ScheduleForm::lemma1;
  if (s == "a8") return ScheduleForm::a8;
  throw ParameterError("unknown schedule form '" + s + "'");
}

inline double lr_schedule(double k, double base, ScheduleForm form, double exponent, double offset = 1.0) {
  if (!(base > 0.0)) throw ParameterError("learning-rate base must be positive");
  if (k < 0.0) throw ParameterError("epoch index must be nonnegative");
  const double kp = std::pow(k, exponent);
  const double denom = form == ScheduleForm::lemma1 ? offset + kp : 1.0 + base * kp;
  if (!(denom > 0.0)) throw ParameterError("learning-rate schedule denominator is not positive");
  return base / denom;
}

struct TrainingSchedule {
  int epochs_pretrain = 0;
  int epochs_train = 100;
  int epochs_refine = 0;
  int batch_size = 100;
  int t_mc = 1;                    // SGHMC sweeps per imputation
  double friction = 1.0;           // eta
  std::vector<double> impute_lr;   // epsilon_i, one per hidden layer
  double impute_lr_missing = 0.0;  // epsilon for the missing-covariate block
  double impute_decay = 1.2;
  std::vector<double> step;         // gamma_i for pretrain/train, one per layer
  std::vector<double> refine_step;  // gamma_i after pruning; empty = step / 10
  double step_decay = 1.2;
  double treatment_step = 0.0;         // propensity row; 0 = use the layer's step
  double refine_treatment_step = 0.0;  // 0 = treatment_step / 10
  ScheduleForm form = ScheduleForm::a8;
  double lemma1_offset = 1.0;
  std::vector<int> prune_epochs;  // extra prunes at these train-stage epochs
  double clip_norm = 0.0;         // 0 disables gradient clipping
  int tail_length = 30;           // stored trajectory iterates
  bool store_latents = false;     // keep hidden latents in the trajectory
  std::uint64_t seed = 1;
  int num_runs = 1;

  double refine_base(int layer) const {
    const auto i = static_cast<std::size_t>(layer - 1);
    return refine_step.empty() ? step[i] / 10.0 : refine_step[i];
  }
  double treatment_base(bool refine) const {
    if (refine) {
      if (refine_treatment_step > 0.0) return refine_treatment_step;
      if (treatment_step > 0.0) return treatment_step / 10.0;
      return 0.0;
    }
    return treatment_step;
  }

  void validate(const NetworkConfig& config) const {
    if (epochs_pretrain < 0 || epochs_train < 0 || epochs_refine < 0) {
      throw ParameterError("epoch counts must be nonnegative");
    }
    if (epochs_pretrain + epochs_train + epochs_refine == 0) throw ParameterError("no training epochs");
    if (batch_size < 1) throw ParameterError("batch size must be positive");
    if (t_mc < 1) throw ParameterError("t_mc must be >= 1");
    if (!(friction > 0.0)) throw ParameterError("friction must be positive");
    if (static_cast<int>(impute_lr.size()) != config.num_hidden()) {
      throw ParameterError("need one imputation learning rate per hidden layer");
    }
    if (static_cast<int>(step.size()) != config.num_layers()) {
      throw ParameterError("need one parameter step size per layer");
    }
    if (!refine_step.empty() && refine_step.size() != step.size()) {
      throw ParameterError("refine step sizes must match the layer count");
    }
    auto positive = [](const std::vector<double>& v) {
      for (double x : v) {
        if (!(x > 0.0)) return false;
      }
      return true;
    };
    if (!positive(impute_lr) || !positive(step) || !positive(refine_step)) {
      throw ParameterError("step sizes must be positive");
    }
    if (impute_lr_missing < 0.0 || treatment_step < 0.0 || refine_treatment_step < 0.0) {
      throw ParameterError("step sizes must be positive");
    }
    for (double e : {impute_decay, step_decay}) {
      if (!(e > 0.0 && e <= 2.0)) throw ParameterError("decay exponents must lie in (0, 2]");
    }
    // The schedules peak at epoch 0.
    auto peak = [&](double base) { return base > 0.0 ? lr_schedule(0, base, form, impute_decay, lemma1_offset) : 0.0; };
    for (double eps : impute_lr) {
      if (peak(eps) * friction >= 1.0) throw ParameterError("impute_lr * friction must stay below 1");
    }
    if (peak(impute_lr_missing) * friction >= 1.0) throw ParameterError("impute_lr_missing * friction must stay below 1");
    for (int e : prune_epochs) {
      if (e < 1 || e > epochs_train) throw ParameterError("prune epochs must fall inside the train stage");
    }
    if (clip_norm < 0.0) throw ParameterError("clip norm must be nonnegative");
    if (tail_length < 1) throw ParameterError("trajectory tail length must be >= 1");
    if (num_runs < 1) throw ParameterError("num_runs must be >= 1");
  }
};

}  // namespace cstonet
