#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ebmlab/data.hpp"
#include "ebmlab/model.hpp"
#include "ebmlab/training.hpp"

namespace ebmlab {

// Energies and input gradients of every row of an [N, ...] batch.
using EnergyFn =
    std::function<void(const Tensor& batch, std::vector<double>& energies, std::vector<double>& grads)>;

// E(x) = -logsumexp(f(x)) of a classifier.
EnergyFn model_energy(const Model& model);
// E(x) = |x|^2 / 2, whose Boltzmann density is the standard normal.
EnergyFn quadratic_energy();
EnergyFn constant_energy(double value = 0.0);

enum class NoiseScale {
  kSqrtAlpha,          // x' = x - (a/2) dE/dx + sqrt(a) * xi  (Langevin-consistent)
  kPaperLiteralAlpha,  // x' = x - (a/2) dE/dx + a * xi
};

struct SGLDConfig {
  double step_size = 0.01;
  std::size_t steps = 100;
  std::size_t chains = 1;
  NoiseScale noise = NoiseScale::kSqrtAlpha;
  std::uint64_t seed = 0;
  // Exactly one initialization: a uniform box (lo, hi per component) or an
  // explicit [chains, ...] tensor.
  std::optional<std::pair<std::vector<double>, std::vector<double>>> init_box;
  std::optional<Tensor> init;
  // Per-chain sample shape; required with init_box.
  Shape sample_shape;
  // Iterates are clamped to this box after each step when set.
  std::optional<std::pair<std::vector<double>, std::vector<double>>> clamp_box;
  bool record_trajectory = false;

  void validate() const;
};

struct SGLDChains {
  Tensor samples;                 // [chains, ...]
  std::vector<double> energies;   // energies of the final samples
  std::vector<Tensor> trajectory; // iterates 0..steps when recorded
};

// All chains share one engine seeded by config.seed, drawn step-major then
// chain-minor, so results are reproducible for a fixed chain count.
SGLDChains sgld_sample(const EnergyFn& energy_fn, const SGLDConfig& config);
// Runs config.steps updates from `start` ([chains, ...]) drawing noise from `rng`;
// initialization fields of the config are ignored.
Tensor sgld_run(const EnergyFn& energy_fn, Tensor start, const SGLDConfig& config,
                std::mt19937_64& rng, std::vector<Tensor>* trajectory = nullptr);

// sum_i weights[i] * dE(x_i)/dtheta for each parameter; `energies` receives E(x_i).
std::vector<std::vector<double>> weighted_energy_gradient(const Model& energy_model,
                                                          const Tensor& batch,
                                                          std::span<const double> weights,
                                                          std::vector<double>* energies = nullptr);

// mean over positives of dE/dtheta minus mean over negatives of dE/dtheta,
// with E(x) = -logsumexp(f(x)). One vector per model parameter.
std::vector<std::vector<double>> ml_gradient(const Model& energy_model, const Tensor& positive_batch,
                                             const Tensor& negative_batch);
// mean E(positive) - mean E(negative); its parameter gradient is ml_gradient.
double contrastive_loss(const Model& energy_model, const Tensor& positive_batch,
                        const Tensor& negative_batch);

struct EBMTrainConfig {
  std::size_t iterations = 2000;
  std::size_t batch_size = 128;
  double learning_rate = 0.01;
  OptimizerKind optimizer = OptimizerKind::kMomentum;
  double momentum = 0.9;
  std::size_t buffer_size = 4096;
  double reinit_fraction = 0.05;
  // Weight of mean(E+^2 + E-^2) added to the loss to keep energies bounded.
  double energy_l2 = 0.1;
  std::uint64_t seed = 0;
};

struct EBMTrainState {
  Model model;
  std::vector<Tensor> replay_buffer;
  std::size_t iteration = 0;
  std::vector<double> loss_trace;  // contrastive loss per iteration
  std::pair<std::vector<double>, std::vector<double>> box;  // uniform p0 support
};

// Persistent contrastive divergence: negatives come from a replay buffer
// refreshed by SGLD (with a fraction of fresh uniform restarts), positives
// from the data, parameters follow ml_gradient.
EBMTrainState train_toy_ebm(Model model, const Dataset& data, const SGLDConfig& sgld,
                            const EBMTrainConfig& config);

// "chain,step,x0,x1,...,energy" rows.
std::string chains_to_csv(const SGLDChains& chains, const EnergyFn& energy_fn);

}  // namespace ebmlab
