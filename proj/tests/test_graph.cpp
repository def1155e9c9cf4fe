#include <gtest/gtest.h>

#include <cmath>
#include <limits>

#include "ebmlab/graph.hpp"
#include "oracles.hpp"

using namespace ebmlab;

TEST(Graph, IdentityAndRelu) {
  Graph g;
  const NodeId x = g.input("x", {2});
  g.set_output(x);
  Tensor xv({2}, std::vector<double>{1, 2});
  EXPECT_EQ(g.evaluate({{"x", &xv}}).values(), (std::vector<double>{1, 2}));

  Graph r;
  r.set_output(r.relu(r.input("x", {3})));
  Tensor v({3}, std::vector<double>{-1, 0, 2});
  EXPECT_EQ(r.evaluate({{"x", &v}}).values(), (std::vector<double>{0, 0, 2}));
}

TEST(Graph, MlpMatchesStraightLineForward) {
  std::mt19937_64 rng(3);
  std::normal_distribution<double> n;
  Tensor x({1, 3}), w1({3, 4}), b1({4}), w2({4, 2}), b2({2});
  for (auto* t : {&x, &w1, &b1, &w2, &b2}) {
    for (auto& v : t->values()) v = n(rng);
  }
  Graph g;
  NodeId h = g.relu(g.bias_add(g.matmul(g.input("x", {1, 3}), g.input("w1", {3, 4})), g.input("b1", {4})));
  g.set_output(g.bias_add(g.matmul(h, g.input("w2", {4, 2})), g.input("b2", {2})));
  const Tensor& y = g.evaluate({{"x", &x}, {"w1", &w1}, {"b1", &b1}, {"w2", &w2}, {"b2", &b2}});
  for (std::size_t k = 0; k < 2; ++k) {
    double out = b2[k];
    for (std::size_t j = 0; j < 4; ++j) {
      double a = b1[j];
      for (std::size_t i = 0; i < 3; ++i) a += x[i] * w1[i * 4 + j];
      out += std::max(a, 0.0) * w2[j * 2 + k];
    }
    EXPECT_NEAR(y[k], out, 1e-12);
  }
}

TEST(Graph, SumGradientIsOnes) {
  Graph g;
  g.set_output(g.sum(g.input("x", {2, 3})));
  Tensor x({2, 3}, 0.7);
  g.evaluate({{"x", &x}});
  g.backward(Tensor({1}, 1.0));
  for (double v : g.gradient("x")) EXPECT_EQ(v, 1.0);
}

TEST(Graph, LogSumExpGradientOfZerosIsUniform) {
  Graph g;
  g.set_output(g.sum(g.logsumexp(g.input("x", {1, 5}))));
  Tensor x({1, 5}, 0.0);
  g.evaluate({{"x", &x}});
  g.backward(Tensor({1}, 1.0));
  for (double v : g.gradient("x")) EXPECT_NEAR(v, 0.2, 1e-15);
}

TEST(Graph, LogSumExpValues) {
  EXPECT_NEAR(logsumexp(std::vector<double>(10, 0.0)), std::log(10.0), 1e-15);
  EXPECT_EQ(logsumexp(std::vector<double>{4.25}), 4.25);
  const double v = logsumexp(std::vector<double>{1, 2, 3});
  EXPECT_NEAR(v, static_cast<double>(oracle::lse({1, 2, 3})), 1e-14);
  EXPECT_NEAR(v, 3.407606, 5e-7);
  EXPECT_THROW(logsumexp(std::vector<double>{}), Error);
  // Max shift keeps large logits finite.
  EXPECT_NEAR(logsumexp(std::vector<double>{1000, 1000}), 1000 + std::log(2.0), 1e-12);
}

TEST(Graph, LogSumExpShiftIdentity) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-100, 100);
  for (int t = 0; t < 1000; ++t) {
    std::vector<double> v(4), s(4);
    const double c = u(rng);
    for (std::size_t i = 0; i < 4; ++i) {
      v[i] = u(rng) / 10;
      s[i] = v[i] + c;
    }
    EXPECT_NEAR(logsumexp(s), logsumexp(v) + c, 1e-9);
  }
}

TEST(Graph, CrossEntropyValues) {
  EXPECT_NEAR(softmax_cross_entropy(std::vector<double>(10, 0.0), 7), std::log(10.0), 1e-15);
  const double ce = softmax_cross_entropy(std::vector<double>{2, -1, 0}, 0);
  EXPECT_NEAR(ce, static_cast<double>(oracle::cross_entropy({2, -1, 0}, 0)), 1e-15);
  EXPECT_NEAR(ce, 0.1698460, 5e-7);
  EXPECT_NEAR(softmax_cross_entropy(std::vector<double>{2 + 3.5, -1 + 3.5, 0 + 3.5}, 0), ce, 1e-15);
  EXPECT_THROW(softmax_cross_entropy(std::vector<double>{1, 2}, 2), Error);
}

TEST(Graph, ErrorsNameTheProblem) {
  Graph g;
  const NodeId a = g.input("a", {2, 3});
  EXPECT_THROW(g.matmul(a, g.input("b", {2, 3})), Error);
  g.set_output(g.sum(a));
  EXPECT_THROW(g.backward(Tensor({1}, 1.0)), Error);
  Tensor av({2, 3}, 1.0);
  EXPECT_THROW(g.evaluate({}), Error);
  g.evaluate({{"a", &av}, {"b", &av}});
  EXPECT_THROW(g.backward(Tensor({2}, 1.0)), Error);
}

TEST(Graph, NonFiniteValueNamesNode) {
  Graph g;
  g.set_output(g.scale(g.input("x", {1}), 1e308));
  Tensor x({1}, 1e10);
  try {
    g.evaluate({{"x", &x}});
    FAIL() << "expected failure";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("scale"), std::string::npos) << e.what();
  }
}

TEST(Graph, RandomGraphsMatchFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto g = oracle::make_random_graph(seed);
    const auto r = oracle::check_gradients(g);
    EXPECT_EQ(r.failures, 0u) << "seed " << seed << ": " << r.first_failure;
    EXPECT_GT(r.checked, 10 * r.skipped) << "seed " << seed;
  }
}

TEST(Graph, ConvolutionMatchesDirectSum) {
  for (Padding pad : {Padding::kValid, Padding::kSame}) {
    std::mt19937_64 rng(9);
    std::normal_distribution<double> n;
    Tensor x({1, 2, 5, 6}), w({3, 2, 3, 3});
    for (auto& v : x.values()) v = n(rng);
    for (auto& v : w.values()) v = n(rng);
    Graph g;
    g.set_output(g.conv2d(g.input("x", x.shape()), g.input("w", w.shape()), pad));
    const Tensor& y = g.evaluate({{"x", &x}, {"w", &w}});
    const long off = pad == Padding::kSame ? 1 : 0;
    const long oh = static_cast<long>(y.dim(2)), ow = static_cast<long>(y.dim(3));
    EXPECT_EQ(oh, pad == Padding::kSame ? 5 : 3);
    for (long o = 0; o < 3; ++o) {
      for (long r = 0; r < oh; ++r) {
        for (long c = 0; c < ow; ++c) {
          double s = 0.0;
          for (long ci = 0; ci < 2; ++ci) {
            for (long ky = 0; ky < 3; ++ky) {
              for (long kx = 0; kx < 3; ++kx) {
                const long iy = r + ky - off, ix = c + kx - off;
                if (iy < 0 || iy >= 5 || ix < 0 || ix >= 6) continue;
                s += w[((o * 2 + ci) * 3 + ky) * 3 + kx] * x[(ci * 5 + iy) * 6 + ix];
              }
            }
          }
          EXPECT_NEAR(y[(o * oh + r) * ow + c], s, 1e-12);
        }
      }
    }
  }
}

TEST(Graph, DeterministicAcrossRuns) {
  auto a = oracle::make_random_graph(4);
  auto b = oracle::make_random_graph(4);
  EXPECT_EQ(a.graph.evaluate(a.bindings()), b.graph.evaluate(b.bindings()));
}
