#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "ebmlab/model.hpp"
#include "ebmlab/tensor.hpp"

namespace ebmlab {

// E(x) = -log sum_k exp(f(x)[k]), in nats. Lower energy means higher
// unnormalized density under the classifier's implicit EBM.
struct EnergyValue {
  double value = 0.0;
};

// E(x, y) = -f(x)[y].
struct JointEnergyValue {
  double value = 0.0;
  std::size_t label = 0;
};

EnergyValue energy_from_logits(std::span<const double> logits);
JointEnergyValue joint_energy_from_logits(std::span<const double> logits, std::size_t label);

EnergyValue energy(const Model& model, const Tensor& x);
JointEnergyValue joint_energy(const Model& model, const Tensor& x, std::size_t label);
std::vector<double> class_posterior(const Model& model, const Tensor& x);

// -E(x), i.e. log p(x) + log Z(theta). Z is intractable and never computed;
// only differences and orderings of this quantity are meaningful.
double unnormalized_log_density(const Model& model, const Tensor& x);

// Energies of many samples, evaluated in batches of `batch_size`.
std::vector<double> energies(const Model& model, std::span<const Tensor> xs,
                             std::size_t batch_size = 256);

struct Histogram {
  std::vector<double> edges;  // bins + 1 ascending edges
  std::vector<std::size_t> counts;

  std::size_t total() const;
  // Index of the most populated bin (first on ties).
  std::size_t mode_bin() const;
};

struct EnergyStats {
  std::vector<double> energies;
  double mean = 0.0;
  double stddev = 0.0;  // population standard deviation
  Histogram histogram;
};

inline constexpr std::size_t kHistogramBins = 50;

// Uniform bins over [min - 1, max + 1] of the pooled values.
std::vector<double> histogram_edges(std::span<const double> a, std::span<const double> b = {},
                                    std::size_t bins = kHistogramBins);
Histogram histogram(std::span<const double> values, std::span<const double> edges);

// Summary over given energies; bins are computed from the values alone unless
// `edges` is supplied (shared bins for side-by-side comparisons).
EnergyStats summarize_energies(std::vector<double> values, std::span<const double> edges = {});
EnergyStats energy_stats(const Model& model, std::span<const Tensor> xs);

// Sum over bins of min(p_a, p_b) with counts normalized per histogram. Both
// histograms must share edges.
double overlap_coefficient(const Histogram& a, const Histogram& b);

}  // namespace ebmlab
