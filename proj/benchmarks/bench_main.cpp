#include <benchmark/benchmark.h>

#include "ebmlab/attacks.hpp"
#include "ebmlab/data.hpp"
#include "ebmlab/detector.hpp"
#include "ebmlab/energy.hpp"
#include "ebmlab/sampler.hpp"
#include "ebmlab/training.hpp"

using namespace ebmlab;

namespace {

const Dataset& glyphs() {
  static const Dataset d = synth_glyphs(256, 1);
  return d;
}

const Model& conv_model() {
  static const Model m = Model::build(SmallConvSpec{}, 1);
  return m;
}

void BM_BatchLogits(benchmark::State& state) {
  const auto n = static_cast<std::size_t>(state.range(0));
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  const Tensor batch = glyphs().batch(idx);
  for (auto _ : state) benchmark::DoNotOptimize(conv_model().batch_logits(batch));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_BatchLogits)->Arg(1)->Arg(32)->Arg(128);

void BM_InputGradient(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(input_gradient(conv_model(), glyphs().inputs[0], glyphs().labels[0]));
  }
}
BENCHMARK(BM_InputGradient);

// One PGD iteration over a batch of 100 images.
void BM_PgdStep(benchmark::State& state) {
  std::vector<std::size_t> idx(100);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const Dataset data = glyphs().subset(idx);
  AttackConfig c;
  c.steps = 1;
  c.lambda = static_cast<double>(state.range(0)) / 10.0;
  c.domain_bounds = data.bounds;
  const AttackKind kind = state.range(0) == 0 ? AttackKind::kPgd : AttackKind::kHePgd;
  for (auto _ : state) benchmark::DoNotOptimize(attack_dataset(kind, conv_model(), data, c));
  state.SetItemsProcessed(state.iterations() * 100);
}
BENCHMARK(BM_PgdStep)->Arg(0)->Arg(12)->Unit(benchmark::kMillisecond);

void BM_SgldStep(benchmark::State& state) {
  SGLDConfig c;
  c.steps = 1;
  c.chains = static_cast<std::size_t>(state.range(0));
  c.sample_shape = {1, 28, 28};
  c.init_box = std::pair{std::vector<double>(784, 0.0), std::vector<double>(784, 1.0)};
  const EnergyFn e = model_energy(conv_model());
  for (auto _ : state) benchmark::DoNotOptimize(sgld_sample(e, c));
  state.SetItemsProcessed(state.iterations() * state.range(0));
}
BENCHMARK(BM_SgldStep)->Arg(16)->Arg(64)->Unit(benchmark::kMillisecond);

void BM_TrainEpochMlp(benchmark::State& state) {
  const Dataset data = synth_2d("two_moons", 1024, 1);
  TrainConfig c;
  c.epochs = 1;
  for (auto _ : state) {
    benchmark::DoNotOptimize(train_standard(Model::build(MlpSpec{2, {64, 64}, 2}, 1), data, c));
  }
}
BENCHMARK(BM_TrainEpochMlp)->Unit(benchmark::kMillisecond);

void BM_FitThreshold(benchmark::State& state) {
  std::vector<double> nat(800), adv(800);
  for (std::size_t i = 0; i < nat.size(); ++i) {
    nat[i] = -10.0 - 0.003 * static_cast<double>(i);
    adv[i] = -12.0 - 0.002 * static_cast<double>(i);
  }
  for (auto _ : state) benchmark::DoNotOptimize(fit_threshold(nat, adv));
}
BENCHMARK(BM_FitThreshold);

}  // namespace
BENCHMARK_MAIN();
