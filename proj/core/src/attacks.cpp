#include "ebmlab/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include "ebmlab/graph.hpp"

namespace ebmlab {

namespace {

constexpr const char* kModule = "attacks";

[[noreturn]] void fail(const std::string& what) { throw Error(kModule, what); }

double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

void check_batch(const Model& model, const Tensor& xs, std::size_t labels) {
  const Shape& in = model.input_shape();
  if (xs.rank() != in.size() + 1 || !std::equal(in.begin(), in.end(), xs.shape().begin() + 1)) {
    fail("input batch " + shape_to_string(xs.shape()) + " does not match model input " +
         shape_to_string(in));
  }
  if (labels != xs.dim(0)) fail("label count differs from batch size");
}

void clamp_domain(std::span<double> v, const AttackConfig& config) {
  if (!config.domain_bounds) return;
  const auto [lo, hi] = *config.domain_bounds;
  for (double& x : v) x = std::clamp(x, lo, hi);
}

// Projects row `cur` onto the epsilon ball around `origin`, then the domain.
void project(std::span<double> cur, std::span<const double> origin, const AttackConfig& config) {
  if (config.norm == Norm::kLinf) {
    for (std::size_t j = 0; j < cur.size(); ++j) {
      cur[j] = std::clamp(cur[j], origin[j] - config.epsilon, origin[j] + config.epsilon);
    }
  } else {
    double norm2 = 0.0;
    for (std::size_t j = 0; j < cur.size(); ++j) {
      const double d = cur[j] - origin[j];
      norm2 += d * d;
    }
    const double norm = std::sqrt(norm2);
    if (norm > config.epsilon) {
      const double s = config.epsilon / norm;
      for (std::size_t j = 0; j < cur.size(); ++j) cur[j] = origin[j] + s * (cur[j] - origin[j]);
    }
  }
  clamp_domain(cur, config);
}

std::vector<AttackResult> finish(const Model& model, const Tensor& xs, const Tensor& adv,
                                 std::span<const std::size_t> ys,
                                 std::span<const std::uint64_t> seeds, std::size_t steps,
                                 const std::vector<bool>& degenerate) {
  const std::size_t n = xs.dim(0), k = model.classes();
  const Tensor before = model.batch_logits(xs);
  const Tensor after = model.batch_logits(adv);
  std::vector<AttackResult> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    std::span<const double> lb(before.values().data() + i * k, k);
    std::span<const double> la(after.values().data() + i * k, k);
    AttackResult& r = out[i];
    r.x_star = unstack_row(adv, i);
    r.prediction = static_cast<std::size_t>(std::max_element(la.begin(), la.end()) - la.begin());
    r.success = r.prediction != ys[i];
    r.energy_before = energy_from_logits(lb);
    r.energy_after = energy_from_logits(la);
    r.steps_taken = steps;
    r.seed = seeds[i];
    r.degenerate_gradient = degenerate[i];
  }
  return out;
}

// Gradient of the per-sample objective CE (+ lambda * E) with respect to the
// inputs, for every row of `xs` at once.
class ObjectiveGradient {
 public:
  ObjectiveGradient(const Model& model, const Shape& batch, std::span<const std::size_t> ys,
                    double lambda)
      : seed_(Shape{batch[0]}, 1.0) {
    const NodeId x = graph_.input("x", batch, true);
    const NodeId logits = model.emit(graph_, x, false);
    NodeId objective = graph_.softmax_cross_entropy(logits, {ys.begin(), ys.end()});
    if (lambda != 0.0) {
      // E = -logsumexp, so lambda * E = (-lambda) * logsumexp.
      objective = graph_.add(objective, graph_.scale(graph_.logsumexp(logits), -lambda));
    }
    graph_.set_output(objective);
    model.bind_parameters(bindings_);
  }

  std::span<const double> operator()(const Tensor& xs) {
    bindings_["x"] = &xs;
    graph_.evaluate(bindings_);
    graph_.backward(seed_);
    return graph_.gradient("x");
  }

 private:
  Graph graph_;
  Graph::Bindings bindings_;
  Tensor seed_;
};

std::vector<AttackResult> fgsm_batch(const Model& model, const Tensor& xs,
                                     std::span<const std::size_t> ys, const AttackConfig& config,
                                     std::span<const std::uint64_t> seeds) {
  if (config.norm != Norm::kLinf) fail("fgsm is defined for the L-infinity norm only");
  check_batch(model, xs, ys.size());
  const std::size_t n = xs.dim(0), per = xs.size() / n;
  Tensor adv = xs;
  std::vector<bool> degenerate(n, false);
  if (config.epsilon > 0.0) {
    ObjectiveGradient objective(model, xs.shape(), ys, 0.0);
    auto grad = objective(xs);
    for (std::size_t i = 0; i < n; ++i) {
      std::span<double> row(adv.values().data() + i * per, per);
      bool zero = true;
      for (std::size_t j = 0; j < per; ++j) {
        const double g = grad[i * per + j];
        if (!std::isfinite(g)) fail("non-finite gradient in fgsm");
        zero = zero && g == 0.0;
        row[j] += config.epsilon * sign(g);
      }
      degenerate[i] = zero;
      clamp_domain(row, config);
    }
  }
  return finish(model, xs, adv, ys, seeds, 1, degenerate);
}

}  // namespace

void AttackConfig::validate() const {
  if (!(epsilon >= 0.0) || !std::isfinite(epsilon)) fail("epsilon must be finite and >= 0");
  if (steps > 0 && !(alpha > 0.0)) fail("alpha must be > 0 when steps > 0");
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) fail("lambda must be finite and >= 0");
  if (domain_bounds && !(domain_bounds->first < domain_bounds->second)) {
    fail("domain bounds must satisfy lo < hi");
  }
}

std::string to_string(AttackKind kind) {
  switch (kind) {
    case AttackKind::kFgsm: return "fgsm";
    case AttackKind::kPgd: return "pgd";
    case AttackKind::kHePgd: return "hepgd";
  }
  return "pgd";
}

AttackKind parse_attack_kind(std::string_view text) {
  if (text == "fgsm") return AttackKind::kFgsm;
  if (text == "pgd") return AttackKind::kPgd;
  if (text == "hepgd" || text == "he-pgd" || text == "he_pgd") return AttackKind::kHePgd;
  fail("unknown attack '" + std::string(text) + "'");
}

std::vector<AttackResult> pgd_batch(const Model& model, const Tensor& xs,
                                    std::span<const std::size_t> ys, const AttackConfig& config,
                                    std::span<const std::uint64_t> seeds,
                                    std::span<const std::size_t> snapshot_steps,
                                    const SnapshotFn& on_snapshot) {
  config.validate();
  check_batch(model, xs, ys.size());
  if (seeds.size() != ys.size()) fail("seed count differs from batch size");
  if (!std::is_sorted(snapshot_steps.begin(), snapshot_steps.end()) ||
      (!snapshot_steps.empty() && snapshot_steps.back() > config.steps)) {
    fail("snapshot steps must be ascending and within the step budget");
  }
  const std::size_t n = xs.dim(0), per = xs.size() / n;
  std::vector<bool> degenerate(n, false);
  Tensor cur = xs;
  auto snap_it = snapshot_steps.begin();
  auto maybe_snapshot = [&](std::size_t step) {
    while (snap_it != snapshot_steps.end() && *snap_it == step) {
      if (on_snapshot) on_snapshot(step, step == 0 ? xs : cur);
      ++snap_it;
    }
  };
  maybe_snapshot(0);
  if (config.steps == 0) return finish(model, xs, xs, ys, seeds, 0, degenerate);

  if (config.random_start) {
    for (std::size_t i = 0; i < n; ++i) {
      std::mt19937_64 rng(seeds[i]);
      std::uniform_real_distribution<double> start(-config.epsilon, config.epsilon);
      std::span<double> row(cur.values().data() + i * per, per);
      for (double& v : row) v += start(rng);
      project(row, std::span<const double>(xs.values().data() + i * per, per), config);
    }
  }

  ObjectiveGradient objective(model, xs.shape(), ys, config.lambda);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    std::span<const double> grad;
    try {
      grad = objective(cur);
    } catch (const Error& e) {
      fail("iteration " + std::to_string(step) + ": " + e.what());
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::span<double> row(cur.values().data() + i * per, per);
      std::span<const double> g = grad.subspan(i * per, per);
      std::span<const double> origin(xs.values().data() + i * per, per);
      double norm2 = 0.0;
      for (double v : g) {
        if (!std::isfinite(v)) fail("non-finite gradient at iteration " + std::to_string(step));
        norm2 += v * v;
      }
      if (norm2 == 0.0) {
        degenerate[i] = true;
        continue;
      }
      if (config.norm == Norm::kLinf) {
        for (std::size_t j = 0; j < per; ++j) row[j] += config.alpha * sign(g[j]);
      } else {
        const double s = config.alpha / std::sqrt(norm2);
        for (std::size_t j = 0; j < per; ++j) row[j] += s * g[j];
      }
      project(row, origin, config);
    }
    maybe_snapshot(step);
  }
  return finish(model, xs, cur, ys, seeds, config.steps, degenerate);
}

AttackResult fgsm(const Model& model, const Tensor& x, std::size_t y, const AttackConfig& config) {
  config.validate();
  const std::size_t ys[1] = {y};
  const std::uint64_t seeds[1] = {config.seed};
  return fgsm_batch(model, x.reshaped(batch_shape(model, 1)), ys, config, seeds).front();
}

AttackResult pgd(const Model& model, const Tensor& x, std::size_t y, const AttackConfig& config) {
  AttackConfig plain = config;
  plain.lambda = 0.0;
  const std::size_t ys[1] = {y};
  const std::uint64_t seeds[1] = {config.seed};
  return pgd_batch(model, x.reshaped(batch_shape(model, 1)), ys, plain, seeds).front();
}

AttackResult he_pgd(const Model& model, const Tensor& x, std::size_t y, const AttackConfig& config) {
  const std::size_t ys[1] = {y};
  const std::uint64_t seeds[1] = {config.seed};
  return pgd_batch(model, x.reshaped(batch_shape(model, 1)), ys, config, seeds).front();
}

AttackResult run_attack(AttackKind kind, const Model& model, const Tensor& x, std::size_t y,
                        const AttackConfig& config) {
  switch (kind) {
    case AttackKind::kFgsm: return fgsm(model, x, y, config);
    case AttackKind::kPgd: return pgd(model, x, y, config);
    case AttackKind::kHePgd: return he_pgd(model, x, y, config);
  }
  fail("unknown attack kind");
}

std::vector<AttackResult> attack_dataset(AttackKind kind, const Model& model, const Dataset& data,
                                         const AttackConfig& config, std::size_t batch_size) {
  if (data.empty()) fail("cannot attack an empty dataset");
  AttackConfig cfg = config;
  if (kind == AttackKind::kPgd) cfg.lambda = 0.0;
  std::vector<AttackResult> out;
  out.reserve(data.size());
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<std::size_t> idx, ys;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = start; i < end; ++i) {
      idx.push_back(i);
      ys.push_back(data.labels[i]);
      seeds.push_back(sample_seed(config.seed, i));
    }
    const Tensor xs = data.batch(idx);
    auto part = kind == AttackKind::kFgsm ? (cfg.validate(), fgsm_batch(model, xs, ys, cfg, seeds))
                                          : pgd_batch(model, xs, ys, cfg, seeds);
    std::move(part.begin(), part.end(), std::back_inserter(out));
  }
  return out;
}

Dataset adversarial_dataset(const Dataset& natural, const std::vector<AttackResult>& results) {
  if (results.size() != natural.size()) fail("attack results do not match the dataset");
  Dataset adv = natural;
  for (std::size_t i = 0; i < results.size(); ++i) adv.inputs[i] = results[i].x_star;
  adv.split = natural.split + "-adversarial";
  return adv;
}

double accuracy(const Model& model, const Dataset& data, std::size_t batch_size) {
  if (data.empty()) fail("accuracy of an empty dataset");
  const std::size_t k = model.classes();
  std::size_t correct = 0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    Tensor logits = model.batch_logits(
        stack(std::span<const Tensor>(data.inputs).subspan(start, end - start)));
    for (std::size_t r = 0; r < end - start; ++r) {
      const double* row = logits.values().data() + r * k;
      const auto pred = static_cast<std::size_t>(std::max_element(row, row + k) - row);
      correct += pred == data.labels[start + r] ? 1 : 0;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(data.size());
}

SweepResult strength_sweep(const Model& model, const Dataset& data, AttackKind kind,
                           const AttackConfig& config, std::span<const std::size_t> steps_list,
                           std::size_t batch_size) {
  if (kind == AttackKind::kFgsm) fail("strength sweep applies to iterative attacks only");
  if (data.empty()) fail("cannot sweep an empty dataset");
  if (steps_list.empty()) fail("steps list must be non-empty");
  if (!std::is_sorted(steps_list.begin(), steps_list.end()) ||
      std::adjacent_find(steps_list.begin(), steps_list.end()) != steps_list.end()) {
    fail("steps list must be strictly ascending");
  }
  AttackConfig cfg = config;
  cfg.steps = steps_list.back();
  if (kind == AttackKind::kPgd) cfg.lambda = 0.0;
  cfg.validate();

  const std::size_t k = model.classes();
  SweepResult result;
  result.natural_energies = energies(model, data.inputs);
  result.adversarial_energies.assign(steps_list.size(), {});
  std::vector<std::size_t> correct(steps_list.size(), 0);

  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    std::vector<std::size_t> idx, ys;
    std::vector<std::uint64_t> seeds;
    for (std::size_t i = start; i < end; ++i) {
      idx.push_back(i);
      ys.push_back(data.labels[i]);
      seeds.push_back(sample_seed(config.seed, i));
    }
    std::size_t slot = 0;
    pgd_batch(model, data.batch(idx), ys, cfg, seeds, steps_list,
              [&](std::size_t, const Tensor& iterates) {
                const Tensor logits = model.batch_logits(iterates);
                for (std::size_t r = 0; r < ys.size(); ++r) {
                  std::span<const double> row(logits.values().data() + r * k, k);
                  result.adversarial_energies[slot].push_back(energy_from_logits(row).value);
                  const auto pred =
                      static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
                  correct[slot] += pred == ys[r] ? 1 : 0;
                }
                ++slot;
              });
  }

  const EnergyStats nat = summarize_energies(result.natural_energies);
  const std::string checksum = model.checksum();
  for (std::size_t s = 0; s < steps_list.size(); ++s) {
    const EnergyStats adv = summarize_energies(result.adversarial_energies[s]);
    ExperimentRecord r;
    r.experiment_id = to_string(kind) + "-steps" + std::to_string(steps_list[s]);
    r.attack = kind;
    r.steps = steps_list[s];
    r.epsilon = cfg.epsilon;
    r.lambda = cfg.lambda;
    r.natural_mean_energy = nat.mean;
    r.natural_std_energy = nat.stddev;
    r.adversarial_mean_energy = adv.mean;
    r.adversarial_std_energy = adv.stddev;
    r.accuracy = static_cast<double>(correct[s]) / static_cast<double>(data.size());
    r.seed = config.seed;
    r.model_checksum = checksum;
    result.records.push_back(std::move(r));
  }
  return result;
}

}  // namespace ebmlab
