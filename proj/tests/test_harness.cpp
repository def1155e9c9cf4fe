#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include "ebmlab/harness.hpp"
#include "ebmlab/io.hpp"

using namespace ebmlab;

namespace {

struct CliRun {
  int code;
  std::string out;
  std::string err;
  nlohmann::json line() const { return nlohmann::json::parse(out); }
};

CliRun cli(std::vector<std::string> args) {
  args.insert(args.begin(), "ebmlab");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

class Harness : public ::testing::Test {
 protected:
  std::filesystem::path dir;
  std::vector<std::string> common;

  void SetUp() override {
    dir = std::filesystem::temp_directory_path() / "ebmlab_harness_test" /
          ::testing::UnitTest::GetInstance()->current_test_info()->name();
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    common = {"--data", "synth:two_gaussians", "--data-size", "400", "--out", dir.string()};
  }

  std::vector<std::string> with(std::vector<std::string> args) const {
    args.insert(args.end(), common.begin(), common.end());
    return args;
  }

  std::string model() const { return (dir / "model.ckpt").string(); }

  void train() {
    const CliRun r = cli(with({"train", "--arch", "mlp:2:16:2", "--epochs", "3", "--lr", "0.01"}));
    ASSERT_EQ(r.code, 0) << r.err;
  }
};

}  // namespace

TEST_F(Harness, UsageErrorsExitWithTwo) {
  EXPECT_EQ(cli({"train", "--bogus"}).code, 2);
  EXPECT_EQ(cli({"frobnicate"}).code, 2);
  EXPECT_EQ(cli({"reproduce"}).code, 2);
  EXPECT_EQ(cli(with({"sweep", "--steps", "1,x"})).code, 2);
  EXPECT_EQ(cli(with({"attack", "--attack", "cw"})).code, 2);
}

TEST_F(Harness, ModuleFailuresExitWithOne) {
  const CliRun r = cli(with({"detect", "--model", model()}));
  EXPECT_EQ(r.code, 1);
  EXPECT_EQ(r.line()["status"], "error");
  EXPECT_EQ(r.line()["module"], "detector");
  EXPECT_NE(r.err.find("does not exist"), std::string::npos) << r.err;
  const CliRun m = cli(with({"attack", "--model", model()}));
  EXPECT_EQ(m.code, 1);
  EXPECT_EQ(m.line()["module"], "model-zoo");
}

TEST_F(Harness, TrainWritesCheckpointAndLoss) {
  train();
  EXPECT_TRUE(std::filesystem::exists(model()));
  const std::string loss = read_file(dir / "train_loss.csv");
  EXPECT_EQ(loss.rfind("# ebmlab train_loss v1 seed=0 config=", 0), 0u);
}

TEST_F(Harness, SweepWritesOneRowPerStepCount) {
  train();
  const CliRun r = cli(with({"sweep", "--model", model(), "--eps", "1/2", "--alpha", "1/10", "--steps",
                          "1,2,4,8,16"}));
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.line()["records"].size(), 5u);
  const std::string csv = read_file(dir / "sweep_pgd.csv");
  // Preamble, header, five rows.
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 7);
}

TEST_F(Harness, RerunsAreByteIdentical) {
  train();
  const auto args = with({"attack", "--model", model(), "--eps", "1/2", "--alpha", "1/10", "--steps", "5"});
  ASSERT_EQ(cli(args).code, 0);
  const std::string first = read_file(dir / "attack_pgd.csv");
  ASSERT_EQ(cli(args).code, 0);
  EXPECT_EQ(read_file(dir / "attack_pgd.csv"), first);
}

TEST_F(Harness, DetectAgreesWithLibraryEvaluation) {
  train();
  const auto attack = std::vector<std::string>{"--eps", "1/2", "--alpha", "1/10", "--steps", "10"};
  auto fit = with({"fit-detector", "--model", model()});
  fit.insert(fit.end(), attack.begin(), attack.end());
  ASSERT_EQ(cli(fit).code, 0);
  auto det = with({"detect", "--model", model()});
  det.insert(det.end(), attack.begin(), attack.end());
  const CliRun r = cli(det);
  ASSERT_EQ(r.code, 0) << r.err;

  LabConfig c;
  c.data = "synth:two_gaussians";
  c.data_size = 400;
  c.eps = "1/2";
  c.alpha = "1/10";
  c.steps = {10};
  const Splits splits = load_splits(c);
  const Model m = load_checkpoint(model());
  const EnergyDetector d = load_detector(dir / "detector.json");
  const auto results = attack_dataset(AttackKind::kPgd, m, splits.test, attack_config(c, splits.test));
  const auto report = evaluate_detector(m, d, splits.test, adversarial_dataset(splits.test, results));
  EXPECT_EQ(r.line()["true_positives"], report.true_positives);
  EXPECT_EQ(r.line()["false_positives"], report.false_positives);
  EXPECT_DOUBLE_EQ(r.line()["detection_rate"].get<double>(), report.detection_rate());
}

TEST_F(Harness, DetectorForAnotherModelIsRejected) {
  train();
  ASSERT_EQ(cli(with({"fit-detector", "--model", model(), "--steps", "2", "--eps", "1/2"})).code, 0);
  const std::string other = (dir / "other.ckpt").string();
  ASSERT_EQ(cli(with({"train", "--arch", "mlp:2:16:2", "--epochs", "1", "--model", other})).code, 0);
  const CliRun r = cli(with({"detect", "--model", other, "--steps", "2", "--eps", "1/2"}));
  EXPECT_EQ(r.code, 1);
  EXPECT_NE(r.err.find("was fitted for model"), std::string::npos);
}

TEST_F(Harness, SampleAndGradviz) {
  train();
  const CliRun s = cli(with({"sample", "--model", model(), "--chains", "4", "--sgld-steps", "10"}));
  ASSERT_EQ(s.code, 0) << s.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "sgld_samples.csv"));
}

TEST_F(Harness, ConfigFileAndOverrides) {
  LabConfig c;
  c.data = "synth:two_gaussians";
  c.data_size = 400;
  c.arch = "mlp:2:8:2";
  c.epochs = 1;
  c.out = dir.string();
  write_file_atomic(dir / "config.json", c.to_json().dump());
  const CliRun r = cli({"train", "--config", (dir / "config.json").string(), "--epochs", "2"});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(r.line()["epochs"], 2);
  EXPECT_EQ(LabConfig::from_json(c.to_json()).to_json(), c.to_json());
  nlohmann::json bad = c.to_json();
  bad["epohcs"] = 3;
  EXPECT_THROW(LabConfig::from_json(bad), Error);
  EXPECT_EQ(cli({"train", "--config", (dir / "missing.json").string()}).code, 1);
}

TEST(HarnessConfig, HashIgnoresOutputLocation) {
  LabConfig a, b;
  b.out = "/elsewhere";
  EXPECT_EQ(a.hash(), b.hash());
  b.seed = 1;
  EXPECT_NE(a.hash(), b.hash());
}
