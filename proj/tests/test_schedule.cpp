#include <gtest/gtest.h>

#include "cstonet/cstonet.hpp"

using namespace cstonet;

TEST(Schedule, Lemma1Example) { EXPECT_DOUBLE_EQ(lr_schedule(4, 1.0, ScheduleForm::lemma1, 0.5, 0.0), 0.5); }

TEST(Schedule, A8Examples) {
  EXPECT_DOUBLE_EQ(lr_schedule(0, 3e-3, ScheduleForm::a8, 1.2), 3e-3);
  EXPECT_NEAR(lr_schedule(100, 3e-3, ScheduleForm::a8, 1.2), 3e-3 / (1 + 3e-3 * std::pow(100.0, 1.2)), 1e-18);
}

TEST(Schedule, StrictlyDecreasing) {
  for (auto form : {ScheduleForm::lemma1, ScheduleForm::a8}) {
    for (double e : {0.3, 0.5, 1.0, 1.2}) {
      double prev = lr_schedule(1, 0.1, form, e, 10.0);
      for (int k = 2; k < 2000; ++k) {
        const double v = lr_schedule(k, 0.1, form, e, 10.0);
        EXPECT_LT(v, prev);
        prev = v;
      }
    }
  }
}

TEST(Schedule, Lemma1SumKeepsGrowing) {
  // sum_k 1/(1 + k^0.7) diverges; each decade adds more than the last.
  auto partial = [](int n) {
    double s = 0.0;
    for (int k = 0; k < n; ++k) s += lr_schedule(k, 1.0, ScheduleForm::lemma1, 0.7, 1.0);
    return s;
  };
  const double a = partial(1000), b = partial(10000), c = partial(100000);
  EXPECT_GT(b - a, a);
  EXPECT_GT(c - b, b - a);
}

TEST(Schedule, RejectsBadArguments) {
  EXPECT_THROW(lr_schedule(1, 0.0, ScheduleForm::a8, 1.0), ParameterError);
  EXPECT_THROW(lr_schedule(-1, 1.0, ScheduleForm::a8, 1.0), ParameterError);
  EXPECT_THROW(lr_schedule(0, 1.0, ScheduleForm::lemma1, 1.0, 0.0), ParameterError);
  EXPECT_THROW(parse_schedule_form("cosine"), ParameterError);
}

TEST(Schedule, TrainingScheduleValidation) {
  NetworkConfig c;
  c.layer_widths = {2, 3, 1};
  c.noise_variances = {1, 1};
  TrainingSchedule s;
  s.impute_lr = {0.01};
  s.step = {0.01, 0.01};
  EXPECT_NO_THROW(s.validate(c));
  s.step = {0.01};
  EXPECT_THROW(s.validate(c), ParameterError);
  s.step = {0.01, 0.01};
  s.impute_lr = {2.0};
  EXPECT_THROW(s.validate(c), ParameterError);
  s.impute_lr = {0.01};
  s.prune_epochs = {500};
  EXPECT_THROW(s.validate(c), ParameterError);
  s.prune_epochs = {};
  s.epochs_train = 0;
  EXPECT_THROW(s.validate(c), ParameterError);
}
