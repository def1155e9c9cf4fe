#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ebmlab/attacks.hpp"
#include "ebmlab/data.hpp"
#include "ebmlab/model.hpp"

namespace ebmlab {

enum class OptimizerKind { kSgd, kMomentum };

struct TrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 32;
  double learning_rate = 0.002;
  OptimizerKind optimizer = OptimizerKind::kMomentum;
  double momentum = 0.9;
  // Adversarial training: each batch is replaced by PGD counterparts built
  // with `inner` before the gradient step.
  bool adversarial = false;
  AttackConfig inner;
  // Epoch e < warmup_epochs attacks with budget and step scaled by
  // e / warmup_epochs (clean inputs in epoch 0). Without a warmup, faint
  // image data can stall at chance level under a large budget.
  std::size_t warmup_epochs = 0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Inner attack used for adversarial training: 7 PGD steps of eps/4 with a
// random start.
AttackConfig adversarial_training_attack(Norm norm, double epsilon,
                                         std::optional<std::pair<double, double>> bounds);

struct LossPoint {
  std::size_t epoch = 0;
  std::size_t batch = 0;
  double loss = 0.0;
};

using LossTrace = std::vector<LossPoint>;

Model train_standard(Model model, const Dataset& data, const TrainConfig& config,
                     LossTrace* trace = nullptr);
Model train_adversarial(Model model, const Dataset& data, const TrainConfig& config,
                        LossTrace* trace = nullptr);

// Momentum SGD over a parameter list; shared by the classifier and EBM loops.
class SgdOptimizer {
 public:
  SgdOptimizer(OptimizerKind kind, double learning_rate, double momentum);
  void step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads);

 private:
  OptimizerKind kind_;
  double lr_;
  double momentum_;
  std::vector<std::vector<double>> velocity_;
};

// d CE(f(x), y) / dx, unnormalized.
Tensor input_gradient(const Model& model, const Tensor& x, std::size_t y);
// input_gradient min-max normalized to [0,1]; all-zero when the gradient is
// constant.
Tensor input_gradient_map(const Model& model, const Tensor& x, std::size_t y);

// Gini coefficient of |values|: 0 for perfectly even mass, approaching 1 when
// the mass sits on a single entry.
double gini_coefficient(std::span<const double> values);

// Binary 8-bit PGM (P5) of a [0,1] map shaped [..., H, W].
std::string to_pgm(const Tensor& map);

}  // namespace ebmlab
