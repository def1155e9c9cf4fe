#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ebmlab/data.hpp"
#include "ebmlab/energy.hpp"
#include "ebmlab/model.hpp"

namespace ebmlab {

struct AttackConfig {
  Norm norm = Norm::kLinf;
  double epsilon = 8.0 / 255.0;
  double alpha = 1.0 / 255.0;
  std::size_t steps = 40;
  // Weight of the energy term in the ascended objective; 0 gives plain PGD.
  double lambda = 0.0;
  bool random_start = true;
  std::uint64_t seed = 0;
  std::optional<std::pair<double, double>> domain_bounds;

  void validate() const;
};

inline constexpr double kDefaultHighEnergyLambda = 1.2;

enum class AttackKind { kFgsm, kPgd, kHePgd };

std::string to_string(AttackKind kind);
AttackKind parse_attack_kind(std::string_view text);

struct AttackResult {
  Tensor x_star;
  std::size_t prediction = 0;
  bool success = false;  // prediction != true label
  EnergyValue energy_before;
  EnergyValue energy_after;
  std::size_t steps_taken = 0;
  std::uint64_t seed = 0;
  // Set when some iteration met an all-zero input gradient.
  bool degenerate_gradient = false;
};

// x* = clip(x + eps * sign(grad_x CE(f(x), y))). L-infinity only.
AttackResult fgsm(const Model& model, const Tensor& x, std::size_t y, const AttackConfig& config);

// Untargeted PGD ascending CE(f(x*), y). config.lambda is ignored.
AttackResult pgd(const Model& model, const Tensor& x, std::size_t y, const AttackConfig& config);

// PGD ascending CE(f(x*), y) + lambda * E(x*), which steers the adversarial
// point toward the energy level of natural data.
AttackResult he_pgd(const Model& model, const Tensor& x, std::size_t y, const AttackConfig& config);

AttackResult run_attack(AttackKind kind, const Model& model, const Tensor& x, std::size_t y,
                        const AttackConfig& config);

// Seed used for sample `index` when a whole dataset is attacked.
inline std::uint64_t sample_seed(std::uint64_t seed, std::size_t index) {
  return seed ^ static_cast<std::uint64_t>(index);
}

// Invoked after `step` iterations with the [N, ...] batch of current iterates.
using SnapshotFn = std::function<void(std::size_t step, const Tensor& iterates)>;

// Batched PGD/HE-PGD over independent samples: row i starts from
// seeds[i] and follows exactly the trajectory the single-sample attack with
// config.seed = seeds[i] would follow. `lambda` is taken from the config.
// `snapshot_steps` (ascending, each <= config.steps) receive the iterates.
std::vector<AttackResult> pgd_batch(const Model& model, const Tensor& xs,
                                    std::span<const std::size_t> ys, const AttackConfig& config,
                                    std::span<const std::uint64_t> seeds,
                                    std::span<const std::size_t> snapshot_steps = {},
                                    const SnapshotFn& on_snapshot = {});

// Attacks every sample of `data` with per-sample seeds sample_seed(config.seed, i).
std::vector<AttackResult> attack_dataset(AttackKind kind, const Model& model, const Dataset& data,
                                         const AttackConfig& config,
                                         std::size_t batch_size = 100);

// Dataset whose inputs are the attack outputs, labels unchanged.
Dataset adversarial_dataset(const Dataset& natural, const std::vector<AttackResult>& results);

double accuracy(const Model& model, const Dataset& data, std::size_t batch_size = 256);

struct ExperimentRecord {
  std::string experiment_id;
  AttackKind attack = AttackKind::kPgd;
  std::size_t steps = 0;
  double epsilon = 0.0;
  double lambda = 0.0;
  double natural_mean_energy = 0.0;
  double natural_std_energy = 0.0;
  double adversarial_mean_energy = 0.0;
  double adversarial_std_energy = 0.0;
  double accuracy = 0.0;  // on the adversarial set
  std::optional<double> detection_rate;
  std::optional<double> false_positive_rate;
  std::uint64_t seed = 0;
  std::string model_checksum;
};

struct SweepResult {
  std::vector<ExperimentRecord> records;
  std::vector<double> natural_energies;
  // adversarial_energies[i] belongs to records[i].
  std::vector<std::vector<double>> adversarial_energies;
};

// One attack run to max(steps_list), snapshotting at each listed step count.
// Equivalent to separate runs per count because a shorter run is a prefix of
// the longer trajectory under the same seeds.
SweepResult strength_sweep(const Model& model, const Dataset& data, AttackKind kind,
                           const AttackConfig& config, std::span<const std::size_t> steps_list,
                           std::size_t batch_size = 100);

}  // namespace ebmlab
