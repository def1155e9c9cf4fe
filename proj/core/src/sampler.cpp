#include "ebmlab/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "ebmlab/graph.hpp"

namespace ebmlab {

namespace {

constexpr const char* kModule = "ebm-sampler";

[[noreturn]] void fail(const std::string& what) { throw Error(kModule, what); }

Tensor uniform_box(const std::pair<std::vector<double>, std::vector<double>>& box,
                   const Shape& batch, std::mt19937_64& rng) {
  Tensor t(batch);
  const std::size_t per = box.first.size();
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (std::size_t i = 0; i < t.size(); ++i) {
    const std::size_t j = i % per;
    t[i] = box.first[j] + (box.second[j] - box.first[j]) * unit(rng);
  }
  return t;
}

}  // namespace

EnergyFn model_energy(const Model& model) {
  return [&model](const Tensor& batch, std::vector<double>& energies, std::vector<double>& grads) {
    Graph g;
    const NodeId x = g.input("x", batch.shape(), true);
    g.set_output(g.logsumexp(model.emit(g, x, false)));
    Graph::Bindings b{{"x", &batch}};
    model.bind_parameters(b);
    const Tensor& lse = g.evaluate(b);
    energies.resize(lse.size());
    for (std::size_t i = 0; i < lse.size(); ++i) energies[i] = -lse[i];
    g.backward(Tensor(lse.shape(), -1.0));
    auto gx = g.gradient("x");
    grads.assign(gx.begin(), gx.end());
  };
}

EnergyFn quadratic_energy() {
  return [](const Tensor& batch, std::vector<double>& energies, std::vector<double>& grads) {
    const std::size_t n = batch.dim(0), per = batch.size() / n;
    energies.assign(n, 0.0);
    grads.assign(batch.values().begin(), batch.values().end());
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < per; ++j) energies[i] += 0.5 * batch[i * per + j] * batch[i * per + j];
    }
  };
}

EnergyFn constant_energy(double value) {
  return [value](const Tensor& batch, std::vector<double>& energies, std::vector<double>& grads) {
    energies.assign(batch.dim(0), value);
    grads.assign(batch.size(), 0.0);
  };
}

void SGLDConfig::validate() const {
  if (!(step_size > 0.0) || !std::isfinite(step_size)) fail("SGLD step size must be positive");
  if (chains == 0) fail("SGLD needs at least one chain");
  if (init_box.has_value() == init.has_value()) {
    fail("SGLD needs exactly one of a uniform box or an initial tensor");
  }
  auto check_box = [](const auto& box, const char* what) {
    if (box.first.size() != box.second.size() || box.first.empty()) {
      fail(std::string(what) + " bounds must be non-empty and equally sized");
    }
    for (std::size_t j = 0; j < box.first.size(); ++j) {
      if (!std::isfinite(box.first[j]) || !std::isfinite(box.second[j]) ||
          box.first[j] > box.second[j]) {
        fail(std::string(what) + " bounds must be finite with lo <= hi");
      }
    }
  };
  if (init_box) {
    check_box(*init_box, "init box");
    if (shape_size(sample_shape) != init_box->first.size()) {
      fail("sample shape does not match the init box dimension");
    }
  }
  if (init && (init->rank() < 2 || init->dim(0) != chains)) {
    fail("initial tensor must be shaped [chains, ...]");
  }
  if (clamp_box) check_box(*clamp_box, "clamp box");
}

Tensor sgld_run(const EnergyFn& energy_fn, Tensor x, const SGLDConfig& config,
                std::mt19937_64& rng, std::vector<Tensor>* trajectory) {
  const double drift = 0.5 * config.step_size;
  const double noise = config.noise == NoiseScale::kSqrtAlpha ? std::sqrt(config.step_size)
                                                              : config.step_size;
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::vector<double> energies, grads;
  if (trajectory) trajectory->push_back(x);
  const std::size_t per = x.size() / x.dim(0);
  for (std::size_t step = 1; step <= config.steps; ++step) {
    try {
      energy_fn(x, energies, grads);
    } catch (const Error& e) {
      fail("step " + std::to_string(step) + ": " + e.what());
    }
    if (grads.size() != x.size()) fail("energy gradient has the wrong size");
    for (std::size_t i = 0; i < x.size(); ++i) {
      if (!std::isfinite(grads[i])) fail("non-finite energy gradient at step " + std::to_string(step));
      x[i] += -drift * grads[i] + noise * gauss(rng);
      if (!std::isfinite(x[i])) fail("non-finite iterate at step " + std::to_string(step));
    }
    if (config.clamp_box) {
      const auto& [lo, hi] = *config.clamp_box;
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::clamp(x[i], lo[i % per], hi[i % per]);
    }
    if (trajectory) trajectory->push_back(x);
  }
  return x;
}

SGLDChains sgld_sample(const EnergyFn& energy_fn, const SGLDConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  Tensor start;
  if (config.init) {
    start = *config.init;
  } else {
    Shape batch{config.chains};
    batch.insert(batch.end(), config.sample_shape.begin(), config.sample_shape.end());
    start = uniform_box(*config.init_box, batch, rng);
  }
  SGLDChains out;
  out.samples = sgld_run(energy_fn, std::move(start), config, rng,
                         config.record_trajectory ? &out.trajectory : nullptr);
  std::vector<double> grads;
  energy_fn(out.samples, out.energies, grads);
  return out;
}

std::vector<std::vector<double>> weighted_energy_gradient(const Model& energy_model,
                                                          const Tensor& batch,
                                                          std::span<const double> weights,
                                                          std::vector<double>* energies) {
  const Shape& in = energy_model.input_shape();
  if (batch.rank() != in.size() + 1 || !std::equal(in.begin(), in.end(), batch.shape().begin() + 1)) {
    fail("batch shape " + shape_to_string(batch.shape()) + " does not match model input " +
         shape_to_string(in));
  }
  if (weights.size() != batch.dim(0)) fail("one weight per sample is required");
  Graph g;
  const NodeId x = g.input("x", batch.shape(), false);
  g.set_output(g.logsumexp(energy_model.emit(g, x, true)));
  Graph::Bindings b{{"x", &batch}};
  energy_model.bind_parameters(b);
  const Tensor& lse = g.evaluate(b);
  if (energies) {
    energies->resize(lse.size());
    for (std::size_t i = 0; i < lse.size(); ++i) (*energies)[i] = -lse[i];
  }
  // E = -lse, so d(sum w_i E_i) = sum (-w_i) d lse_i.
  Tensor seed(lse.shape());
  for (std::size_t i = 0; i < weights.size(); ++i) seed[i] = -weights[i];
  g.backward(seed);
  std::vector<std::vector<double>> grads;
  for (std::size_t p = 0; p < energy_model.parameters().size(); ++p) {
    auto gp = g.gradient(Model::parameter_name(p));
    grads.emplace_back(gp.begin(), gp.end());
  }
  return grads;
}

std::vector<std::vector<double>> ml_gradient(const Model& energy_model, const Tensor& positive_batch,
                                             const Tensor& negative_batch) {
  if (positive_batch.rank() == 0 || negative_batch.rank() == 0) fail("batches must be non-empty");
  const std::vector<double> wp(positive_batch.dim(0), 1.0 / static_cast<double>(positive_batch.dim(0)));
  const std::vector<double> wn(negative_batch.dim(0), 1.0 / static_cast<double>(negative_batch.dim(0)));
  auto gp = weighted_energy_gradient(energy_model, positive_batch, wp);
  const auto gn = weighted_energy_gradient(energy_model, negative_batch, wn);
  for (std::size_t p = 0; p < gp.size(); ++p) {
    for (std::size_t j = 0; j < gp[p].size(); ++j) gp[p][j] -= gn[p][j];
  }
  return gp;
}

double contrastive_loss(const Model& energy_model, const Tensor& positive_batch,
                        const Tensor& negative_batch) {
  auto mean_energy = [&](const Tensor& batch) {
    const Tensor logits = energy_model.batch_logits(batch);
    const std::size_t k = energy_model.classes();
    double s = 0.0;
    for (std::size_t i = 0; i < batch.dim(0); ++i) {
      s -= logsumexp(std::span<const double>(logits.values().data() + i * k, k));
    }
    return s / static_cast<double>(batch.dim(0));
  };
  return mean_energy(positive_batch) - mean_energy(negative_batch);
}

EBMTrainState train_toy_ebm(Model model, const Dataset& data, const SGLDConfig& sgld,
                            const EBMTrainConfig& config) {
  if (data.size() < 2) fail("EBM training needs data");
  if (data.input_shape != model.input_shape()) fail("dataset does not match the energy model input");
  if (config.batch_size == 0 || config.buffer_size == 0) fail("batch and buffer sizes must be positive");
  if (!(config.reinit_fraction >= 0.0 && config.reinit_fraction <= 1.0)) {
    fail("reinit fraction must lie in [0, 1]");
  }
  if (!(sgld.step_size > 0.0)) fail("SGLD step size must be positive");

  EBMTrainState state{std::move(model)};
  state.box = data.bounding_box();
  std::mt19937_64 rng(config.seed);
  std::uniform_int_distribution<std::size_t> pick_buffer(0, config.buffer_size - 1);
  std::uniform_int_distribution<std::size_t> pick_data(0, data.size() - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const Shape per = data.input_shape;
  Shape one{1};
  one.insert(one.end(), per.begin(), per.end());
  for (std::size_t i = 0; i < config.buffer_size; ++i) {
    state.replay_buffer.push_back(uniform_box(state.box, one, rng).reshaped(per));
  }

  SgdOptimizer optimizer(config.optimizer, config.learning_rate, config.momentum);
  const EnergyFn energy_fn = model_energy(state.model);
  const double inv_b = 1.0 / static_cast<double>(config.batch_size);

  for (std::size_t it = 0; it < config.iterations; ++it) {
    std::vector<std::size_t> slots(config.batch_size);
    std::vector<Tensor> neg, pos;
    for (auto& s : slots) {
      s = pick_buffer(rng);
      if (unit(rng) < config.reinit_fraction) {
        neg.push_back(uniform_box(state.box, one, rng).reshaped(per));
      } else {
        neg.push_back(state.replay_buffer[s]);
      }
      pos.push_back(data.inputs[pick_data(rng)]);
    }
    Tensor negatives = sgld_run(energy_fn, stack(neg), sgld, rng);
    for (std::size_t i = 0; i < slots.size(); ++i) state.replay_buffer[slots[i]] = unstack_row(negatives, i);
    const Tensor positives = stack(pos);

    std::vector<double> ep, en;
    // Energies first, so the L2 term can weight each sample's gradient.
    const std::vector<double> ones(config.batch_size, 0.0);
    weighted_energy_gradient(state.model, positives, ones, &ep);
    weighted_energy_gradient(state.model, negatives, ones, &en);
    std::vector<double> wp(config.batch_size), wn(config.batch_size);
    for (std::size_t i = 0; i < config.batch_size; ++i) {
      wp[i] = inv_b * (1.0 + 2.0 * config.energy_l2 * ep[i]);
      wn[i] = inv_b * (-1.0 + 2.0 * config.energy_l2 * en[i]);
    }
    auto grads = weighted_energy_gradient(state.model, positives, wp);
    const auto gn = weighted_energy_gradient(state.model, negatives, wn);
    for (std::size_t p = 0; p < grads.size(); ++p) {
      for (std::size_t j = 0; j < grads[p].size(); ++j) grads[p][j] += gn[p][j];
    }
    const double mean_pos = std::accumulate(ep.begin(), ep.end(), 0.0) * inv_b;
    const double mean_neg = std::accumulate(en.begin(), en.end(), 0.0) * inv_b;
    if (mean_pos < -1e6 || !std::isfinite(mean_pos)) {
      fail("EBM training diverged at iteration " + std::to_string(it) +
           " (mean positive energy " + std::to_string(mean_pos) + ")");
    }
    state.loss_trace.push_back(mean_pos - mean_neg);
    optimizer.step(state.model.parameters(), grads);
    state.iteration = it + 1;
  }
  return state;
}

std::string chains_to_csv(const SGLDChains& chains, const EnergyFn& energy_fn) {
  std::ostringstream os;
  os.precision(17);
  const Tensor& final = chains.samples;
  const std::size_t n = final.dim(0), per = final.size() / n;
  os << "chain,step";
  for (std::size_t j = 0; j < per; ++j) os << ",x" << j;
  os << ",energy\n";
  std::vector<const Tensor*> frames;
  if (chains.trajectory.empty()) {
    frames.push_back(&final);
  } else {
    for (const auto& t : chains.trajectory) frames.push_back(&t);
  }
  std::vector<double> energies, grads;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    energy_fn(*frames[f], energies, grads);
    const std::size_t step = chains.trajectory.empty() ? 0 : f;
    for (std::size_t c = 0; c < n; ++c) {
      os << c << ',' << (chains.trajectory.empty() ? std::string("final") : std::to_string(step));
      for (std::size_t j = 0; j < per; ++j) os << ',' << (*frames[f])[c * per + j];
      os << ',' << energies[c] << '\n';
    }
  }
  return os.str();
}

}  // namespace ebmlab
