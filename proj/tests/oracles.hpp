#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary. Nothing here calls into the library's math: sums are
// done directly in long double, derivatives by central differences.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <set>
#include <random>
#include <string>
#include <vector>

#include "ebmlab/graph.hpp"
#include "ebmlab/model.hpp"

namespace oracle {

inline long double lse(const std::vector<long double>& v) {
  long double s = 0.0L;
  for (long double x : v) s += std::exp(x);
  return std::log(s);
}

inline long double cross_entropy(const std::vector<long double>& logits, std::size_t y) {
  return lse(logits) - logits[y];
}

inline std::vector<long double> softmax(const std::vector<long double>& v) {
  long double s = 0.0L;
  for (long double x : v) s += std::exp(x);
  std::vector<long double> p;
  for (long double x : v) p.push_back(std::exp(x) / s);
  return p;
}

struct GradCheck {
  std::size_t checked = 0;
  std::size_t skipped = 0;  // coordinates whose stencil crosses a ReLU kink
  double worst_rel = 0.0;  // over coordinates with a derivative of at least 1e-6
  double worst_abs = 0.0;
  std::size_t failures = 0;
  std::string first_failure;
};

// Relative error with an absolute floor for near-zero derivatives.
inline bool grad_close(double analytic, double numeric, double rel = 1e-5, double abs = 1e-8) {
  const double diff = std::abs(analytic - numeric);
  if (diff <= abs) return true;
  return diff <= rel * std::max(std::abs(analytic), std::abs(numeric));
}

// A small seeded network built directly from graph primitives, with the
// pre-activation node of every ReLU recorded so stencils straddling a kink can
// be recognized.
struct RandomGraph {
  ebmlab::Graph graph;
  std::vector<std::string> names;
  std::vector<ebmlab::Tensor> values;
  std::vector<ebmlab::NodeId> kinks;
  std::string label;

  ebmlab::Graph::Bindings bindings() const {
    ebmlab::Graph::Bindings b;
    for (std::size_t i = 0; i < names.size(); ++i) b[names[i]] = &values[i];
    return b;
  }
};

inline RandomGraph make_random_graph(std::uint64_t seed) {
  using ebmlab::NodeId;
  using ebmlab::Padding;
  using ebmlab::Tensor;
  std::mt19937_64 rng(seed);
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  std::normal_distribution<double> normal(0.0, 1.0);
  RandomGraph r;
  auto add_input = [&](const std::string& name, ebmlab::Shape shape, double scale) {
    Tensor t(shape);
    for (auto& v : t.values()) v = scale * normal(rng);
    r.names.push_back(name);
    r.values.push_back(t);
    return r.graph.input(name, shape, true);
  };
  auto relu = [&](NodeId pre) {
    r.kinks.push_back(pre);
    return r.graph.relu(pre);
  };

  const std::size_t batch = pick(1, 3);
  const std::size_t classes = pick(2, 5);
  NodeId logits;
  if (seed % 2 == 0) {
    const std::size_t d = pick(2, 6);
    NodeId h = add_input("x", {batch, d}, 1.0);
    std::size_t width = d;
    const std::size_t layers = pick(1, 2);
    for (std::size_t l = 0; l < layers; ++l) {
      const std::size_t next = pick(3, 8);
      const NodeId w = add_input("w" + std::to_string(l), {width, next}, 1.0 / std::sqrt(double(width)));
      const NodeId b = add_input("b" + std::to_string(l), {next}, 0.5);
      h = relu(r.graph.bias_add(r.graph.matmul(h, w), b));
      width = next;
    }
    const NodeId w = add_input("wout", {width, classes}, 1.0 / std::sqrt(double(width)));
    const NodeId b = add_input("bout", {classes}, 0.5);
    logits = r.graph.bias_add(r.graph.matmul(h, w), b);
    r.label = "mlp";
  } else {
    const std::size_t c = pick(1, 2), hgt = pick(5, 7), wid = pick(5, 7);
    const std::size_t k = pick(0, 1) ? 3 : 5;
    const Padding pad = (k == 5 || pick(0, 1)) ? Padding::kSame : Padding::kValid;
    const std::size_t c1 = pick(2, 3);
    NodeId x = add_input("x", {batch, c, hgt, wid}, 1.0);
    const NodeId w1 = add_input("w1", {c1, c, k, k}, 1.0 / std::sqrt(double(c * k * k)));
    const NodeId b1 = add_input("b1", {c1}, 0.5);
    NodeId h = relu(r.graph.bias_add(r.graph.conv2d(x, w1, pad), b1));
    const NodeId w2 = add_input("w2", {2, c1, 3, 3}, 1.0 / std::sqrt(double(c1 * 9)));
    const NodeId b2 = add_input("b2", {2}, 0.5);
    h = r.graph.bias_add(r.graph.conv2d(h, w2, Padding::kSame), b2);
    const std::size_t flat = ebmlab::shape_size(r.graph.shape(h)) / batch;
    h = r.graph.reshape(relu(h), {batch, flat});
    const NodeId w = add_input("wout", {flat, classes}, 1.0 / std::sqrt(double(flat)));
    logits = r.graph.matmul(h, w);
    r.label = "conv" + std::to_string(k) + (pad == Padding::kSame ? "same" : "valid");
  }
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < batch; ++i) labels.push_back(pick(0, classes - 1));
  // Mix every scalar head so each primitive is exercised.
  const NodeId ce = r.graph.sum(r.graph.softmax_cross_entropy(logits, labels));
  const NodeId energy = r.graph.scale(r.graph.sum(r.graph.logsumexp(logits)), -0.7);
  r.graph.set_output(r.graph.add(ce, energy));
  return r;
}

// Compares every gradient coordinate of every input of `g` to central
// differences with step h.
inline GradCheck check_gradients(RandomGraph& g, double h = 1e-5) {
  GradCheck out;
  auto kink_signature = [&]() {
    std::vector<bool> sig;
    for (auto id : g.kinks) {
      for (double v : g.graph.value(id).values()) sig.push_back(v > 0.0);
    }
    return sig;
  };
  g.graph.evaluate(g.bindings());
  g.graph.backward(ebmlab::Tensor({1}, 1.0));
  std::vector<std::vector<double>> analytic;
  for (const auto& name : g.names) {
    auto s = g.graph.gradient(name);
    analytic.emplace_back(s.begin(), s.end());
  }
  const auto base_sig = kink_signature();
  for (std::size_t t = 0; t < g.names.size(); ++t) {
    for (std::size_t i = 0; i < g.values[t].size(); ++i) {
      const double orig = g.values[t][i];
      g.values[t][i] = orig + h;
      const double fp = g.graph.evaluate(g.bindings())[0];
      const bool same_p = kink_signature() == base_sig;
      g.values[t][i] = orig - h;
      const double fm = g.graph.evaluate(g.bindings())[0];
      const bool same_m = kink_signature() == base_sig;
      g.values[t][i] = orig;
      if (!same_p || !same_m) {
        ++out.skipped;
        continue;
      }
      const double numeric = (fp - fm) / (2.0 * h);
      const double a = analytic[t][i];
      ++out.checked;
      const double diff = std::abs(a - numeric);
      const double scale = std::max(std::abs(a), std::abs(numeric));
      out.worst_abs = std::max(out.worst_abs, diff);
      if (scale >= 1e-6) out.worst_rel = std::max(out.worst_rel, diff / scale);
      if (!grad_close(a, numeric)) {
        if (out.failures++ == 0) {
          out.first_failure = g.label + " " + g.names[t] + "[" + std::to_string(i) +
                              "] analytic " + std::to_string(a) + " numeric " + std::to_string(numeric);
        }
      }
    }
  }
  return out;
}

struct ThresholdChoice {
  double threshold = 0.0;
  double g_mean = -1.0;
};

// Scores every threshold that yields a distinct split of the pooled energies
// (midpoints plus both infinities) under the rule "flag when E <= t", keeping
// the best G-mean, then fewer false positives, then the lower threshold.
inline ThresholdChoice best_threshold(const std::vector<double>& nat, const std::vector<double>& adv) {
  std::set<double> pooled(nat.begin(), nat.end());
  pooled.insert(adv.begin(), adv.end());
  const std::vector<double> u(pooled.begin(), pooled.end());
  std::vector<double> cands{-std::numeric_limits<double>::infinity(),
                            std::numeric_limits<double>::infinity()};
  for (std::size_t i = 0; i + 1 < u.size(); ++i) cands.push_back(0.5 * (u[i] + u[i + 1]));
  ThresholdChoice best;
  double best_fp = 0.0;
  for (double t : cands) {
    double tp = 0, fp = 0;
    for (double e : adv) tp += e <= t;
    for (double e : nat) fp += e <= t;
    const double n = static_cast<double>(nat.size());
    const double g = std::sqrt((tp / static_cast<double>(adv.size())) * ((n - fp) / n));
    const bool better = g > best.g_mean || (g == best.g_mean && fp < best_fp) ||
                        (g == best.g_mean && fp == best_fp && t < best.threshold);
    if (better) {
      best = {t, g};
      best_fp = fp;
    }
  }
  return best;
}

}  // namespace oracle
