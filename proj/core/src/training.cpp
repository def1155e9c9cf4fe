#include "ebmlab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "ebmlab/graph.hpp"

namespace ebmlab {

namespace {

constexpr const char* kModule = "training";

[[noreturn]] void fail(const std::string& what) { throw Error(kModule, what); }

// Mean cross-entropy of one batch and its parameter gradients.
double batch_gradient(const Model& model, const Tensor& xs, std::span<const std::size_t> ys,
                      std::vector<std::vector<double>>& grads) {
  Graph g;
  const NodeId x = g.input("x", xs.shape(), false);
  const NodeId logits = model.emit(g, x, true);
  const NodeId loss = g.scale(g.sum(g.softmax_cross_entropy(logits, {ys.begin(), ys.end()})),
                              1.0 / static_cast<double>(ys.size()));
  g.set_output(loss);
  Graph::Bindings b{{"x", &xs}};
  model.bind_parameters(b);
  const double value = g.evaluate(b)[0];
  g.backward(Tensor({1}, 1.0));
  grads.resize(model.parameters().size());
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto gi = g.gradient(Model::parameter_name(i));
    grads[i].assign(gi.begin(), gi.end());
  }
  return value;
}

Model train(Model model, const Dataset& data, const TrainConfig& config, LossTrace* trace) {
  config.validate();
  if (data.empty()) fail("cannot train on an empty dataset");
  if (data.input_shape != model.input_shape()) {
    fail("dataset input shape " + shape_to_string(data.input_shape) + " does not match model " +
         shape_to_string(model.input_shape()));
  }
  if (data.classes > model.classes()) fail("dataset has more classes than the model");

  std::mt19937_64 rng(config.seed);
  SgdOptimizer optimizer(config.optimizer, config.learning_rate, config.momentum);
  std::vector<std::size_t> order(data.size());
  std::vector<std::vector<double>> grads;

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + config.batch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      std::vector<std::size_t> ys;
      for (auto i : idx) ys.push_back(data.labels[i]);
      Tensor xs = data.batch(idx);
      // The first warmup epoch trains on clean inputs; the budget then grows
      // linearly and reaches its full value at epoch warmup_epochs.
      const double ramp = epoch < config.warmup_epochs
                              ? static_cast<double>(epoch) / static_cast<double>(config.warmup_epochs)
                              : 1.0;
      if (config.adversarial && ramp > 0.0) {
        std::vector<std::uint64_t> seeds;
        const std::uint64_t epoch_seed = config.seed + 0x9e3779b97f4a7c15ULL * (epoch + 1);
        for (std::size_t k = start; k < end; ++k) seeds.push_back(sample_seed(epoch_seed, k));
        AttackConfig inner = config.inner;
        inner.epsilon *= ramp;
        inner.alpha *= ramp;
        auto adv = pgd_batch(model, xs, ys, inner, seeds);
        std::vector<Tensor> rows;
        rows.reserve(adv.size());
        for (auto& r : adv) rows.push_back(std::move(r.x_star));
        xs = stack(rows);
      }
      double loss = 0.0;
      try {
        loss = batch_gradient(model, xs, ys, grads);
      } catch (const Error& e) {
        fail("epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index) + ": " +
             e.what());
      }
      if (!std::isfinite(loss)) {
        fail("non-finite loss at epoch " + std::to_string(epoch) + " batch " +
             std::to_string(batch_index));
      }
      optimizer.step(model.parameters(), grads);
      if (trace) trace->push_back({epoch, batch_index, loss});
    }
  }
  return model;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) fail("batch size must be positive");
  if (!(learning_rate > 0.0)) fail("learning rate must be positive");
  if (optimizer == OptimizerKind::kMomentum && !(momentum >= 0.0 && momentum < 1.0)) {
    fail("momentum must lie in [0, 1)");
  }
  if (adversarial) inner.validate();
}

AttackConfig adversarial_training_attack(Norm norm, double epsilon,
                                         std::optional<std::pair<double, double>> bounds) {
  AttackConfig c;
  c.norm = norm;
  c.epsilon = epsilon;
  c.alpha = epsilon > 0.0 ? epsilon / 4.0 : 1.0 / 255.0;
  c.steps = 7;
  c.lambda = 0.0;
  c.random_start = true;
  c.domain_bounds = bounds;
  return c;
}

Model train_standard(Model model, const Dataset& data, const TrainConfig& config, LossTrace* trace) {
  TrainConfig c = config;
  c.adversarial = false;
  model = train(std::move(model), data, c, trace);
  if (config.epochs > 0) model.set_provenance({Regime::kStandard});
  return model;
}

Model train_adversarial(Model model, const Dataset& data, const TrainConfig& config,
                        LossTrace* trace) {
  if (!config.adversarial) fail("adversarial training requested without an inner attack");
  model = train(std::move(model), data, config, trace);
  if (config.epochs > 0) {
    model.set_provenance({Regime::kAdversarial, config.inner.norm, config.inner.epsilon});
  }
  return model;
}

SgdOptimizer::SgdOptimizer(OptimizerKind kind, double learning_rate, double momentum)
    : kind_(kind), lr_(learning_rate), momentum_(momentum) {}

void SgdOptimizer::step(std::vector<Tensor>& params, const std::vector<std::vector<double>>& grads) {
  if (grads.size() != params.size()) fail("gradient list does not match parameters");
  if (kind_ == OptimizerKind::kMomentum && velocity_.empty()) {
    for (const auto& p : params) velocity_.emplace_back(p.size(), 0.0);
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i].values();
    const auto& g = grads[i];
    if (g.size() != p.size()) fail("gradient size does not match parameter " + std::to_string(i));
    if (kind_ == OptimizerKind::kSgd) {
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr_ * g[j];
    } else {
      auto& v = velocity_[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        v[j] = momentum_ * v[j] + g[j];
        p[j] -= lr_ * v[j];
      }
    }
  }
}

Tensor input_gradient(const Model& model, const Tensor& x, std::size_t y) {
  if (y >= model.classes()) fail("label out of range");
  const Tensor xs = x.reshaped(batch_shape(model, 1));
  Graph g;
  const NodeId in = g.input("x", xs.shape(), true);
  g.set_output(g.softmax_cross_entropy(model.emit(g, in, false), {y}));
  Graph::Bindings b{{"x", &xs}};
  model.bind_parameters(b);
  g.evaluate(b);
  g.backward(Tensor({1}, 1.0));
  auto grad = g.gradient("x");
  return Tensor(x.shape(), std::vector<double>(grad.begin(), grad.end()));
}

Tensor input_gradient_map(const Model& model, const Tensor& x, std::size_t y) {
  Tensor g = input_gradient(model, x, y);
  const auto [lo, hi] = std::minmax_element(g.values().begin(), g.values().end());
  const double min = *lo, range = *hi - *lo;
  for (auto& v : g.values()) v = range > 0.0 ? (v - min) / range : 0.0;
  return g;
}

double gini_coefficient(std::span<const double> values) {
  if (values.empty()) fail("gini coefficient of an empty vector");
  std::vector<double> a;
  a.reserve(values.size());
  for (double v : values) a.push_back(std::abs(v));
  std::sort(a.begin(), a.end());
  const double total = std::accumulate(a.begin(), a.end(), 0.0);
  if (total == 0.0) return 0.0;
  const double n = static_cast<double>(a.size());
  double weighted = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    weighted += (2.0 * static_cast<double>(i + 1) - n - 1.0) * a[i];
  }
  return weighted / (n * total);
}

std::string to_pgm(const Tensor& map) {
  if (map.rank() < 2) fail("PGM export needs at least two axes");
  const std::size_t h = map.dim(map.rank() - 2), w = map.dim(map.rank() - 1);
  if (map.size() != h * w) fail("PGM export needs a single-channel map");
  std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
  for (double v : map.values()) {
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  }
  return out;
}

}  // namespace ebmlab
