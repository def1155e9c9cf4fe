#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "ebmlab/attacks.hpp"
#include "ebmlab/data.hpp"
#include "ebmlab/detector.hpp"
#include "ebmlab/energy.hpp"
#include "ebmlab/model.hpp"
#include "ebmlab/training.hpp"

namespace ebmlab {

// Everything a command needs; the JSON config file mirrors these fields
// one-to-one and flags override it.
struct LabConfig {
  std::string model;                     // checkpoint path, or model directory for `reproduce`
  std::string data = "synth:glyphs";
  std::size_t data_size = 5000;
  std::uint64_t data_seed = 7;
  std::uint64_t split_seed = 11;
  std::string attack = "pgd";
  std::string eps = "8/255";
  std::string alpha = "1/255";
  std::vector<std::size_t> steps{40};
  double lambda = kDefaultHighEnergyLambda;
  std::uint64_t seed = 0;
  std::string out = ".";
  std::string split = "test";            // split attacked by attack/sweep/detect/gradviz
  std::size_t limit = 0;                 // attack at most this many samples (0 = all)

  // train
  std::string arch = "smallconv:1:28x28:10";
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 0.002;
  std::string at_eps;                    // adversarial training budget; empty = standard

  // fit-detector / detect
  std::string detector;                  // defaults to <out>/detector.json

  // sample
  std::size_t chains = 16;
  std::size_t sgld_steps = 200;
  double step_size = 0.01;
  bool record_trajectory = false;

  // gradviz
  std::size_t images = 8;

  // reproduce
  std::string profile;
  bool train_missing = false;

  nlohmann::json to_json() const;
  static LabConfig from_json(const nlohmann::json& j);
  // Hash of the canonical JSON form, embedded in every artifact.
  std::string hash() const;
};

// Data shared by the commands: the dataset named by the config, split
// 80/4/16 (train/val/test) by class with the config's split seed.
Splits load_splits(const LabConfig& config);
const Dataset& select_split(const Splits& splits, const std::string& name);
AttackConfig attack_config(const LabConfig& config, const Dataset& data);

// "# ebmlab <kind> v1 seed=<s> config=<hash> model=<checksum>" followed by
// the column header.
std::string csv_preamble(const std::string& kind, const LabConfig& config,
                         const std::string& model_checksum, const std::string& columns);
std::string sweep_csv(const SweepResult& sweep, const LabConfig& config,
                      const std::string& model_checksum);
nlohmann::json record_to_json(const ExperimentRecord& record);

// Checkpoints expected by `reproduce` inside the model directory.
inline constexpr const char* kStandardCheckpoint = "standard.ckpt";
inline constexpr const char* kRobustCheckpoint = "robust.ckpt";
inline constexpr const char* kQuasiRobustCheckpoint = "quasi_robust.ckpt";
inline constexpr const char* kRobustEps = "8/255";
inline constexpr const char* kQuasiRobustEps = "0.5/255";

// Loads (or, with train_missing, trains and saves) one checkpoint of the set.
Model require_model(const LabConfig& config, const Splits& splits, const std::string& file,
                    const std::string& at_eps);

struct Fig2Result {
  SweepResult sweep;
  Histogram natural;
  Histogram adversarial;  // at the largest step count
  double clean_accuracy = 0.0;
};

struct Fig3Result {
  SweepResult pgd;
  SweepResult he_pgd;
  EnergyDetector detector;       // fitted on PGD validation energies
  DetectionReport pgd_report;    // test split
  DetectionReport he_report;     // test split, same threshold
  Histogram natural;
  Histogram he_adversarial;
  double overlap = 0.0;
};

struct Table1Row {
  std::string attack;
  double epsilon = 0.0;
  EnergyDetector detector;
  DetectionReport report;
};

struct Fig4Image {
  std::size_t index = 0;
  double gini_standard = 0.0;
  double gini_robust = 0.0;
  double gini_quasi_robust = 0.0;
};

struct Fig4Result {
  double accuracy_standard = 0.0;
  double accuracy_robust = 0.0;
  double accuracy_quasi_robust = 0.0;
  std::vector<Fig4Image> images;
};

// Each profile writes its artifacts into config.out.
Fig2Result reproduce_fig2(const LabConfig& config, const Splits& splits, const Model& model);
Fig3Result reproduce_fig3(const LabConfig& config, const Splits& splits, const Model& model);
std::vector<Table1Row> reproduce_table1(const LabConfig& config, const Splits& splits,
                                        const Model& model);
Fig4Result reproduce_fig4(const LabConfig& config, const Splits& splits, const Model& standard,
                          const Model& robust, const Model& quasi_robust);

// Full command-line entry point. Exit codes: 0 success, 1 module failure
// (message prefixed with the module name), 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace ebmlab
