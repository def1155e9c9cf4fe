#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "ebmlab/data.hpp"
#include "ebmlab/sampler.hpp"

using namespace ebmlab;

namespace {

SGLDConfig box_config(std::size_t chains, std::size_t steps, double alpha) {
  SGLDConfig c;
  c.chains = chains;
  c.steps = steps;
  c.step_size = alpha;
  c.sample_shape = {2};
  c.init_box = std::make_pair(std::vector<double>{-1, -1}, std::vector<double>{1, 1});
  return c;
}

Tensor gaussian_batch(std::size_t n, double mean, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(mean, 1.0);
  Tensor t({n, 2});
  for (auto& v : t.values()) v = g(rng);
  return t;
}

}  // namespace

TEST(Sgld, ZeroStepsKeepInitialization) {
  SGLDConfig c = box_config(4, 0, 0.1);
  c.init_box.reset();
  c.init = gaussian_batch(4, 0.0, 1);
  const auto r = sgld_sample(quadratic_energy(), c);
  EXPECT_EQ(r.samples, *c.init);
  for (std::size_t i = 0; i < 4; ++i) {
    const double x = (*c.init)[2 * i], y = (*c.init)[2 * i + 1];
    EXPECT_DOUBLE_EQ(r.energies[i], 0.5 * (x * x + y * y));
  }
}

TEST(Sgld, FlatEnergyIsARandomWalk) {
  // With no drift each step adds N(0, alpha); after T steps the displacement
  // variance is T * alpha.
  const std::size_t chains = 10000, steps = 25;
  const double alpha = 0.04;
  SGLDConfig c = box_config(chains, steps, alpha);
  c.init_box.reset();
  c.init = Tensor({chains, 2}, 0.0);
  const auto r = sgld_sample(constant_energy(), c);
  double s = 0.0;
  for (double v : r.samples.values()) s += v * v;
  EXPECT_NEAR(s / (2.0 * chains), steps * alpha, 0.05 * steps * alpha);

  c.noise = NoiseScale::kPaperLiteralAlpha;
  const auto lit = sgld_sample(constant_energy(), c);
  s = 0.0;
  for (double v : lit.samples.values()) s += v * v;
  EXPECT_NEAR(s / (2.0 * chains), steps * alpha * alpha, 0.05 * steps * alpha * alpha);
}

TEST(Sgld, QuadraticEnergyReachesStandardNormal) {
  const std::size_t chains = 4000;
  SGLDConfig c = box_config(chains, 400, 0.02);
  c.seed = 5;
  const auto r = sgld_sample(quadratic_energy(), c);
  double m = 0.0, s = 0.0;
  for (double v : r.samples.values()) {
    m += v;
    s += v * v;
  }
  m /= 2.0 * chains;
  s /= 2.0 * chains;
  EXPECT_NEAR(m, 0.0, 0.05);
  // The discretized chain's stationary variance is 1 / (1 - alpha/4).
  EXPECT_NEAR(s - m * m, 1.0 / (1.0 - 0.02 / 4.0), 0.05);
}

TEST(Sgld, ReproducibleAndClamped) {
  SGLDConfig c = box_config(8, 30, 0.5);
  c.seed = 9;
  c.clamp_box = std::make_pair(std::vector<double>{-0.5, -2}, std::vector<double>{0.5, 2});
  c.record_trajectory = true;
  const auto a = sgld_sample(quadratic_energy(), c);
  const auto b = sgld_sample(quadratic_energy(), c);
  EXPECT_EQ(a.samples, b.samples);
  EXPECT_EQ(a.trajectory.size(), 31u);
  for (std::size_t i = 0; i < 8; ++i) {
    EXPECT_LE(std::abs(a.samples[2 * i]), 0.5);
    EXPECT_LE(std::abs(a.samples[2 * i + 1]), 2.0);
  }
}

TEST(Sgld, ConfigValidation) {
  SGLDConfig c = box_config(2, 5, 0.1);
  c.init = Tensor({2, 2});
  EXPECT_THROW(sgld_sample(quadratic_energy(), c), Error);
  c.init.reset();
  c.init_box.reset();
  EXPECT_THROW(sgld_sample(quadratic_energy(), c), Error);
  c = box_config(2, 5, 0.1);
  c.init_box->first[0] = 2.0;
  EXPECT_THROW(sgld_sample(quadratic_energy(), c), Error);
}

TEST(Sgld, FailureNamesTheStep) {
  SGLDConfig c = box_config(1, 10, 0.1);
  int calls = 0;
  EnergyFn explode = [&](const Tensor& x, std::vector<double>& e, std::vector<double>& g) {
    e.assign(x.dim(0), 0.0);
    g.assign(x.size(), ++calls >= 3 ? std::nan("") : 0.0);
  };
  try {
    sgld_sample(explode, c);
    FAIL() << "expected failure";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("step 3"), std::string::npos) << e.what();
  }
}

TEST(MlGradient, VanishesForIdenticalBatches) {
  const Model m = Model::build(MlpSpec{2, {8}, 3}, 2);
  const Tensor x = gaussian_batch(6, 0.0, 1);
  for (const auto& g : ml_gradient(m, x, x)) {
    for (double v : g) EXPECT_EQ(v, 0.0);
  }
  EXPECT_EQ(contrastive_loss(m, x, x), 0.0);
}

TEST(MlGradient, IsAntisymmetric) {
  const Model m = Model::build(MlpSpec{2, {8}, 3}, 2);
  const Tensor a = gaussian_batch(5, 0.0, 1), b = gaussian_batch(7, 1.0, 2);
  const auto ab = ml_gradient(m, a, b), ba = ml_gradient(m, b, a);
  for (std::size_t p = 0; p < ab.size(); ++p) {
    for (std::size_t i = 0; i < ab[p].size(); ++i) EXPECT_NEAR(ab[p][i], -ba[p][i], 1e-13);
  }
}

TEST(MlGradient, MatchesFiniteDifferencesOfContrastiveLoss) {
  Model m = Model::build(MlpSpec{2, {6}, 3}, 4);
  std::mt19937_64 rng(3);
  for (auto& v : m.parameters()[1].values()) v = std::uniform_real_distribution<double>(0.1, 0.5)(rng);
  const Tensor a = gaussian_batch(5, 0.0, 1), b = gaussian_batch(4, 1.5, 2);
  const auto g = ml_gradient(m, a, b);
  const double h = 1e-6;
  for (std::size_t p = 0; p < m.parameters().size(); ++p) {
    for (std::size_t i = 0; i < m.parameters()[p].size(); ++i) {
      const double orig = m.parameters()[p][i];
      m.parameters()[p][i] = orig + h;
      const double fp = contrastive_loss(m, a, b);
      m.parameters()[p][i] = orig - h;
      const double fm = contrastive_loss(m, a, b);
      m.parameters()[p][i] = orig;
      const double numeric = (fp - fm) / (2 * h);
      EXPECT_NEAR(g[p][i], numeric, 1e-6 + 1e-5 * std::abs(numeric)) << p << "," << i;
    }
  }
}

TEST(ToyEbm, ZeroIterationsLeaveModelUnchanged) {
  const Dataset data = synth_2d("two_gaussians", 64, 1);
  const Model m = Model::build(MlpSpec{2, {16}, 2}, 3);
  SGLDConfig s;
  s.steps = 5;
  EBMTrainConfig c;
  c.iterations = 0;
  c.buffer_size = 32;
  const auto state = train_toy_ebm(m, data, s, c);
  EXPECT_EQ(state.model.parameters(), m.parameters());
  EXPECT_EQ(state.replay_buffer.size(), 32u);
  EXPECT_TRUE(state.loss_trace.empty());
}

TEST(ToyEbm, LearnsLowerEnergyOnData) {
  const Dataset data = synth_2d("two_gaussians", 256, 1);
  SGLDConfig s;
  s.steps = 20;
  s.step_size = 0.05;
  EBMTrainConfig c;
  c.iterations = 150;
  c.batch_size = 32;
  c.buffer_size = 256;
  c.seed = 2;
  const auto state = train_toy_ebm(Model::build(MlpSpec{2, {32}, 2}, 3), data, s, c);
  ASSERT_EQ(state.loss_trace.size(), 150u);
  // Data points should sit lower in energy than far-away points of the box.
  const auto e = model_energy(state.model);
  std::vector<double> on, off, grads;
  e(Tensor({2, 2}, {2.0, 0.0, -2.0, 0.0}), on, grads);
  e(Tensor({2, 2}, {0.0, 3.5, 0.0, -3.5}), off, grads);
  EXPECT_LT(on[0] + on[1], off[0] + off[1]);
}

TEST(Sgld, CsvHasOneRowPerChain) {
  SGLDConfig c = box_config(3, 4, 0.1);
  const auto r = sgld_sample(quadratic_energy(), c);
  const std::string csv = chains_to_csv(r, quadratic_energy());
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "chain,step,x0,x1,energy");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
}
