#include <gtest/gtest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "cstonet/cli.hpp"
#include "test_util.hpp"

using namespace cstonet;
namespace fs = std::filesystem;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result cli_run(std::vector<std::string> args) {
  args.insert(args.begin(), "cstonet");
  std::vector<char*> argv;
  for (auto& a : args) argv.push_back(a.data());
  std::ostringstream out, err;
  const int code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void put(const fs::path& p, const std::string& s) {
  std::ofstream out(p, std::ios::binary);
  out << s;
}

class Cli : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / ("cstonet_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  void TearDown() override { fs::remove_all(dir); }

  // 50-row linear data and a 2-2-1 network trained for three epochs.
  std::string small_config() {
    const auto r = cli_run({"simulate", "--generator", "linear_gaussian", "--n-train", "50", "--n-val", "0", "--n-test", "40",
                            "--p", "2", "--seed", "3", "--out", (dir / "data").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    std::ostringstream c;
    c << "seed=5\n"
      << "net.widths=2 2 1\n"
      << "net.noise_variances=0.01 1\n"
      << "train.epochs_train=3\n"
      << "train.batch_size=10\n"
      << "train.impute_lr=0.001\n"
      << "train.step=0.001 0.001\n"
      << "data.train=" << (dir / "data" / "train.csv").string() << '\n'
      << "data.eval=" << (dir / "data" / "test.csv").string() << '\n'
      << "output.dir=" << (dir / "run").string() << '\n';
    return c.str();
  }

  fs::path dir;
};

}  // namespace

TEST_F(Cli, MissingRequiredKeyNamesIt) {
  put(dir / "c.txt", "net.widths=2 2 1\nnet.noise_variances=1 1\n");
  const auto r = cli_run({"train", "--config", (dir / "c.txt").string()});
  EXPECT_EQ(r.code, cli::kConfig);
  EXPECT_NE(r.err.find("train.impute_lr"), std::string::npos) << r.err;
}

TEST_F(Cli, UnknownKeyRejected) {
  put(dir / "c.txt", small_config() + "train.epochz=3\n");
  const auto r = cli_run({"train", "--config", (dir / "c.txt").string()});
  EXPECT_EQ(r.code, cli::kConfig);
  EXPECT_NE(r.err.find("train.epochz"), std::string::npos);
}

TEST_F(Cli, PrintSchemaListsKeys) {
  const auto r = cli_run({"--print-schema"});
  EXPECT_EQ(r.code, 0);
  for (const char* k : {"net.widths", "prior.sigma0_sq", "train.step", "estimate.kappa", "simulate.generator"}) {
    EXPECT_NE(r.out.find(k), std::string::npos) << k;
  }
}

TEST_F(Cli, UsageErrors) {
  EXPECT_EQ(cli_run({}).code, cli::kUsage);
  EXPECT_EQ(cli_run({"frobnicate"}).code, cli::kUsage);
  EXPECT_EQ(cli_run({"train", "--threads", "x"}).code, cli::kUsage);
}

TEST_F(Cli, MissingInputFileIsAnIoError) {
  std::string c = small_config();
  c.replace(c.find("train.csv"), 9, "nope.csv");
  put(dir / "c.txt", c);
  EXPECT_EQ(cli_run({"train", "--config", (dir / "c.txt").string()}).code, cli::kIo);
}

TEST_F(Cli, SmokeTrainAndCheckpointRoundTrip) {
  put(dir / "c.txt", small_config());
  const auto t0 = std::chrono::steady_clock::now();
  const auto r = cli_run({"train", "--config", (dir / "c.txt").string(), "--threads", "1"});
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_LT(secs, 5.0);
  for (const char* f : {"checkpoint.txt", "diagnostics.csv", "train_report.txt"}) EXPECT_TRUE(fs::exists(dir / "run" / f)) << f;

  const FittedModel m = load_checkpoint((dir / "run" / "checkpoint.txt").string());
  std::ostringstream again;
  save_checkpoint(again, m);
  EXPECT_EQ(again.str(), slurp(dir / "run" / "checkpoint.txt"));
  EXPECT_EQ(m.config.layer_widths, (std::vector<int>{2, 2, 1}));
}

TEST_F(Cli, EstimateMatchesLibrary) {
  put(dir / "c.txt", small_config() + "estimate.kappa=0.05\nestimate.alpha=0.1\n");
  ASSERT_EQ(cli_run({"train", "--config", (dir / "c.txt").string()}).code, 0);
  const auto r = cli_run({"estimate", "--config", (dir / "c.txt").string()});
  ASSERT_EQ(r.code, 0) << r.err;

  std::ifstream in(dir / "run" / "estimate.txt");
  const auto kv = read_key_values(in, "estimate");
  const FittedModel m = load_checkpoint((dir / "run" / "checkpoint.txt").string());
  const Dataset d = read_csv((dir / "data" / "test.csv").string());
  const AteEstimate e = aipw_ate(m, d, 0.05, 0.1);
  EXPECT_EQ(std::stod(kv.at("tau_hat")), e.tau_hat);
  EXPECT_EQ(std::stod(kv.at("v_hat")), e.v_hat);
  EXPECT_EQ(std::stod(kv.at("kappa")), 0.05);
  EXPECT_EQ(std::stod(kv.at("alpha")), 0.1);
  const double half = 0.5 * (e.ci_upper - e.ci_lower);
  EXPECT_NEAR(std::stod(kv.at("ci_half_width")), half, 1e-15 * std::max(1.0, half));
  EXPECT_NEAR(half, normal_quantile(0.95) * std::sqrt(e.v_hat / d.n()), 1e-12 * std::max(1.0, half));
  EXPECT_TRUE(kv.count("treatment_covariates") && kv.count("outcome_covariates"));

  std::ifstream cates(dir / "run" / "cate.csv");
  std::string line;
  std::getline(cates, line);
  EXPECT_EQ(line, "cate");
  long rows = 0;
  while (std::getline(cates, line)) rows += !line.empty();
  EXPECT_EQ(rows, d.n());
}

TEST_F(Cli, EstimateRejectsBadKappa) {
  put(dir / "c.txt", small_config() + "estimate.kappa=0.5\n");
  ASSERT_EQ(cli_run({"train", "--config", (dir / "c.txt").string()}).code, 0);
  EXPECT_EQ(cli_run({"estimate", "--config", (dir / "c.txt").string()}).code, cli::kConfig);
}

TEST_F(Cli, EvaluatePerfectEstimatesGiveZeros) {
  put(dir / "truth.txt", "ate=2\ntreatment_set=1 3\noutcome_set=2\n");
  put(dir / "rows.csv", "cate,propensity\n2,0.5\n2,0.5\n");
  put(dir / "r1.txt", "tau_hat=2\nci_lower=1.5\nci_upper=2.5\ntreatment_covariates=1 3\noutcome_covariates=2\n");
  put(dir / "c1.csv", "cate\n2\n2\n");
  std::ostringstream c;
  c << "evaluate.reports=" << (dir / "r1.txt").string() << '\n'
    << "evaluate.cate=" << (dir / "c1.csv").string() << '\n'
    << "evaluate.truth=" << (dir / "truth.txt").string() << '\n'
    << "evaluate.truth_rows=" << (dir / "rows.csv").string() << '\n'
    << "output.dir=" << (dir / "ev").string() << '\n';
  put(dir / "c.txt", c.str());
  const auto r = cli_run({"evaluate", "--config", (dir / "c.txt").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::ifstream in(dir / "ev" / "metrics.txt");
  const auto kv = read_key_values(in, "metrics");
  for (const char* k : {"mae_ate", "mae_ate_sample", "pehe", "fsr_treatment", "nsr_treatment", "fsr_outcome", "nsr_outcome"}) {
    ASSERT_TRUE(kv.count(k)) << k;
    EXPECT_EQ(std::stod(kv.at(k)), 0.0) << k;
  }
  EXPECT_EQ(std::stod(kv.at("ci_coverage")), 1.0);

  put(dir / "c1.csv", "cate\n2\n2\n2\n");
  EXPECT_EQ(cli_run({"evaluate", "--config", (dir / "c.txt").string()}).code, cli::kIo);
}

TEST_F(Cli, SimulateIsByteIdentical) {
  for (const char* sub : {"a", "b"}) {
    const auto r = cli_run({"simulate", "--generator", "ar2", "--scenario", "mar", "--n-train", "200", "--n-val", "20",
                            "--n-test", "20", "--p", "12", "--seed", "17", "--out", (dir / sub).string()});
    ASSERT_EQ(r.code, 0) << r.err;
  }
  for (const char* f : {"train.csv", "val.csv", "test.csv", "train_truth.csv", "truth.txt"}) {
    EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
  }
}

TEST_F(Cli, MarCsvLeavesExactlyTheDeletedCellsEmpty) {
  ASSERT_EQ(cli_run({"simulate", "--generator", "ar2", "--scenario", "mar", "--n-train", "200", "--n-val", "0", "--n-test",
                     "0", "--p", "10", "--seed", "2", "--out", (dir / "d").string()})
                .code,
            0);
  const auto s = gen_ar2_missing(200, 0, 0, 2, MissingScenario::mar, 10);
  std::ifstream in(dir / "d" / "train.csv");
  std::string line;
  std::getline(in, line);
  long row = 0, empties = 0;
  while (std::getline(in, line)) {
    const auto cells = detail::split_csv_line(line);
    for (Eigen::Index j = 0; j < s.train.p(); ++j) {
      const bool empty = cells[static_cast<std::size_t>(j)].empty();
      EXPECT_EQ(empty, s.train.observed(row, j) == 0);
      empties += empty;
    }
    ++row;
  }
  EXPECT_EQ(row, 200);
  EXPECT_EQ(empties, 2 * 20);
}

TEST_F(Cli, SubprocessExitCodes) {
  const std::string exe = CSTONET_CLI_PATH;
  auto code = [](const std::string& cmd) {
    const int st = std::system((cmd + " >/dev/null 2>&1").c_str());
    return WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  };
  EXPECT_EQ(code(exe + " --print-schema"), 0);
  EXPECT_EQ(code(exe), cli::kUsage);
  put(dir / "bad.txt", "net.widths=2 2 1\nnot a key value line\n");
  EXPECT_EQ(code(exe + " train --config " + (dir / "bad.txt").string()), cli::kConfig);
  EXPECT_EQ(code(exe + " train --config " + (dir / "absent.txt").string()), cli::kIo);
}
