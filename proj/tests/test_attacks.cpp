#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "ebmlab/attacks.hpp"
#include "ebmlab/data.hpp"

using namespace ebmlab;

namespace {

// Untrained conv net on 8x8 images in [0,1]; attacks do not need accuracy.
struct ImageFixture {
  Model model = Model::build(SmallConvSpec{1, 8, 8, 3, 3, 4, 3, Padding::kSame}, 21);
  Dataset data;

  ImageFixture() {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (std::size_t i = 0; i < 12; ++i) {
      Tensor x({1, 8, 8});
      for (auto& v : x.values()) v = u(rng);
      data.inputs.push_back(x);
      data.labels.push_back(i % 3);
      data.origin.push_back(i);
    }
    data.classes = 3;
    data.input_shape = {1, 8, 8};
    data.bounds = std::make_pair(0.0, 1.0);
  }

  AttackConfig config(double eps = 0.1) const {
    AttackConfig c;
    c.epsilon = eps;
    c.alpha = eps / 4;
    c.steps = 10;
    c.seed = 3;
    c.domain_bounds = data.bounds;
    return c;
  }
};

double linf(const Tensor& a, const Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST(Attacks, FgsmLinearClosedForm) {
  // Logits are x W with W = [[1,-1],[-1,1]]; at x = 0 the posterior is
  // uniform, so d CE / dx = W (p - e_0) = (-1, 1).
  Model m = Model::build(MlpSpec{2, {}, 2}, 0);
  m.parameters()[0] = Tensor({2, 2}, {1.0, -1.0, -1.0, 1.0});
  AttackConfig c;
  c.epsilon = 0.1;
  const auto r = fgsm(m, Tensor({2}, 0.0), 0, c);
  EXPECT_DOUBLE_EQ(r.x_star[0], -0.1);
  EXPECT_DOUBLE_EQ(r.x_star[1], 0.1);
  EXPECT_EQ(r.steps_taken, 1u);
}

TEST(Attacks, FgsmIsOneFullStepOfPgd) {
  ImageFixture f;
  AttackConfig c = f.config(0.05);
  AttackConfig p = c;
  p.steps = 1;
  p.alpha = c.epsilon;
  p.random_start = false;
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    EXPECT_EQ(fgsm(f.model, f.data.inputs[i], f.data.labels[i], c).x_star,
              pgd(f.model, f.data.inputs[i], f.data.labels[i], p).x_star);
  }
  AttackConfig l2 = c;
  l2.norm = Norm::kL2;
  EXPECT_THROW(fgsm(f.model, f.data.inputs[0], 0, l2), Error);
}

TEST(Attacks, StayInsideBudgetAndDomain) {
  ImageFixture f;
  for (AttackKind kind : {AttackKind::kFgsm, AttackKind::kPgd, AttackKind::kHePgd}) {
    AttackConfig c = f.config(0.1);
    c.lambda = kind == AttackKind::kHePgd ? kDefaultHighEnergyLambda : 0.0;
    for (std::size_t i = 0; i < f.data.size(); ++i) {
      const auto r = run_attack(kind, f.model, f.data.inputs[i], f.data.labels[i], c);
      EXPECT_LE(linf(r.x_star, f.data.inputs[i]), c.epsilon + 1e-12);
      for (double v : r.x_star.values()) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
      EXPECT_EQ(r.success, r.prediction != f.data.labels[i]);
      EXPECT_EQ(r.prediction, f.model.predict(r.x_star));
    }
  }
}

TEST(Attacks, L2BudgetHolds) {
  ImageFixture f;
  AttackConfig c = f.config(0.5);
  c.norm = Norm::kL2;
  c.alpha = 0.2;
  for (std::size_t i = 0; i < 4; ++i) {
    const auto r = pgd(f.model, f.data.inputs[i], f.data.labels[i], c);
    double s = 0.0;
    for (std::size_t k = 0; k < r.x_star.size(); ++k) {
      s += (r.x_star[k] - f.data.inputs[i][k]) * (r.x_star[k] - f.data.inputs[i][k]);
    }
    EXPECT_LE(std::sqrt(s), 0.5 + 1e-12);
  }
}

TEST(Attacks, PgdIncreasesLossOverFgsmStart) {
  ImageFixture f;
  const AttackConfig c = f.config(0.1);
  std::size_t raised = 0;
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    const auto& x = f.data.inputs[i];
    const auto y = f.data.labels[i];
    const auto before = f.model.logits(x);
    const auto after = f.model.logits(pgd(f.model, x, y, c).x_star);
    auto ce = [&](const std::vector<double>& l) {
      double m = *std::max_element(l.begin(), l.end()), s = 0;
      for (double v : l) s += std::exp(v - m);
      return m + std::log(s) - l[y];
    };
    if (ce(after) > ce(before)) ++raised;
  }
  EXPECT_EQ(raised, f.data.size());
}

TEST(Attacks, ZeroLambdaHighEnergyIsPgd) {
  ImageFixture f;
  AttackConfig c = f.config();
  c.lambda = 0.0;
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_EQ(he_pgd(f.model, f.data.inputs[i], f.data.labels[i], c).x_star,
              pgd(f.model, f.data.inputs[i], f.data.labels[i], c).x_star);
  }
  c.lambda = 1.2;
  EXPECT_FALSE(he_pgd(f.model, f.data.inputs[0], f.data.labels[0], c).x_star ==
               pgd(f.model, f.data.inputs[0], f.data.labels[0], c).x_star);
}

TEST(Attacks, HighEnergyEndsLowerInEnergyThanPgd) {
  // The extra term ascends E, so HE-PGD iterates end at higher energy.
  ImageFixture f;
  AttackConfig c = f.config(0.2);
  c.steps = 20;
  double pgd_sum = 0.0, he_sum = 0.0;
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    pgd_sum += pgd(f.model, f.data.inputs[i], f.data.labels[i], c).energy_after.value;
    c.lambda = 1.2;
    he_sum += he_pgd(f.model, f.data.inputs[i], f.data.labels[i], c).energy_after.value;
    c.lambda = 0.0;
  }
  EXPECT_GT(he_sum, pgd_sum);
}

TEST(Attacks, ZeroStepsReturnsInput) {
  ImageFixture f;
  AttackConfig c = f.config();
  c.steps = 0;
  const auto r = pgd(f.model, f.data.inputs[0], f.data.labels[0], c);
  EXPECT_EQ(r.x_star, f.data.inputs[0]);
  EXPECT_EQ(r.energy_before.value, r.energy_after.value);
  EXPECT_EQ(r.steps_taken, 0u);
}

TEST(Attacks, SeedsAreReproducible) {
  ImageFixture f;
  AttackConfig c = f.config();
  const auto a = pgd(f.model, f.data.inputs[0], f.data.labels[0], c);
  const auto b = pgd(f.model, f.data.inputs[0], f.data.labels[0], c);
  EXPECT_EQ(a.x_star, b.x_star);
  c.seed = 4;
  EXPECT_FALSE(pgd(f.model, f.data.inputs[0], f.data.labels[0], c).x_star == a.x_star);
}

TEST(Attacks, BatchMatchesSingleSample) {
  ImageFixture f;
  AttackConfig c = f.config();
  c.lambda = 0.7;
  const auto results = attack_dataset(AttackKind::kHePgd, f.model, f.data, c, 5);
  ASSERT_EQ(results.size(), f.data.size());
  for (std::size_t i = 0; i < f.data.size(); ++i) {
    AttackConfig single = c;
    single.seed = sample_seed(c.seed, i);
    const auto r = he_pgd(f.model, f.data.inputs[i], f.data.labels[i], single);
    EXPECT_EQ(results[i].x_star, r.x_star) << i;
    EXPECT_EQ(results[i].seed, single.seed);
  }
}

TEST(Attacks, SweepSnapshotsArePrefixRuns) {
  ImageFixture f;
  AttackConfig c = f.config();
  const std::vector<std::size_t> steps{1, 3, 10};
  const auto sweep = strength_sweep(f.model, f.data, AttackKind::kPgd, c, steps, 5);
  ASSERT_EQ(sweep.records.size(), 3u);
  for (std::size_t s = 0; s < steps.size(); ++s) {
    AttackConfig single = c;
    single.steps = steps[s];
    const auto runs = attack_dataset(AttackKind::kPgd, f.model, f.data, single);
    double sum = 0.0, correct = 0.0;
    for (std::size_t i = 0; i < runs.size(); ++i) {
      EXPECT_EQ(sweep.adversarial_energies[s][i], runs[i].energy_after.value);
      sum += runs[i].energy_after.value;
      correct += runs[i].success ? 0.0 : 1.0;
    }
    EXPECT_NEAR(sweep.records[s].adversarial_mean_energy, sum / runs.size(), 1e-12);
    EXPECT_DOUBLE_EQ(sweep.records[s].accuracy, correct / runs.size());
    EXPECT_EQ(sweep.records[s].steps, steps[s]);
  }
  EXPECT_THROW(strength_sweep(f.model, f.data, AttackKind::kFgsm, c, steps), Error);
  const std::vector<std::size_t> unsorted{3, 1};
  EXPECT_THROW(strength_sweep(f.model, f.data, AttackKind::kPgd, c, unsorted), Error);
}

TEST(Attacks, ConfigValidation) {
  AttackConfig c;
  c.epsilon = -1;
  EXPECT_THROW(c.validate(), Error);
  c = {};
  c.alpha = 0;
  EXPECT_THROW(c.validate(), Error);
  c.steps = 0;
  EXPECT_NO_THROW(c.validate());
  c = {};
  c.lambda = std::nan("");
  EXPECT_THROW(c.validate(), Error);
  EXPECT_EQ(parse_attack_kind("he-pgd"), AttackKind::kHePgd);
  EXPECT_THROW(parse_attack_kind("cw"), Error);
}
