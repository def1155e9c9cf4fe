#include "ebmlab/energy.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "ebmlab/graph.hpp"

namespace ebmlab {

namespace {
constexpr const char* kModule = "energy-lens";
}

EnergyValue energy_from_logits(std::span<const double> logits) {
  return {-logsumexp(logits)};
}

JointEnergyValue joint_energy_from_logits(std::span<const double> logits, std::size_t label) {
  if (label >= logits.size()) {
    throw Error(kModule, "label " + std::to_string(label) + " out of range for " +
                             std::to_string(logits.size()) + " classes");
  }
  return {-logits[label], label};
}

EnergyValue energy(const Model& model, const Tensor& x) {
  return energy_from_logits(model.logits(x));
}

JointEnergyValue joint_energy(const Model& model, const Tensor& x, std::size_t label) {
  if (label >= model.classes()) {
    throw Error(kModule, "label " + std::to_string(label) + " out of range for " +
                             std::to_string(model.classes()) + " classes");
  }
  return joint_energy_from_logits(model.logits(x), label);
}

std::vector<double> class_posterior(const Model& model, const Tensor& x) {
  return softmax(model.logits(x));
}

double unnormalized_log_density(const Model& model, const Tensor& x) {
  return -energy(model, x).value;
}

std::vector<double> energies(const Model& model, std::span<const Tensor> xs,
                             std::size_t batch_size) {
  std::vector<double> out;
  out.reserve(xs.size());
  const std::size_t k = model.classes();
  for (std::size_t start = 0; start < xs.size(); start += batch_size) {
    const std::size_t end = std::min(xs.size(), start + batch_size);
    Tensor logits = model.batch_logits(stack(xs.subspan(start, end - start)));
    for (std::size_t r = 0; r < end - start; ++r) {
      out.push_back(-logsumexp(std::span<const double>(logits.values().data() + r * k, k)));
    }
  }
  return out;
}

std::size_t Histogram::total() const {
  return std::accumulate(counts.begin(), counts.end(), std::size_t{0});
}

std::size_t Histogram::mode_bin() const {
  return static_cast<std::size_t>(std::max_element(counts.begin(), counts.end()) - counts.begin());
}

std::vector<double> histogram_edges(std::span<const double> a, std::span<const double> b,
                                    std::size_t bins) {
  if (a.empty() && b.empty()) throw Error(kModule, "histogram of no values");
  if (bins == 0) throw Error(kModule, "histogram needs at least one bin");
  double lo = INFINITY, hi = -INFINITY;
  for (auto span : {a, b}) {
    for (double v : span) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  }
  lo -= 1.0;
  hi += 1.0;
  std::vector<double> edges(bins + 1);
  for (std::size_t i = 0; i <= bins; ++i) {
    edges[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins);
  }
  return edges;
}

Histogram histogram(std::span<const double> values, std::span<const double> edges) {
  if (edges.size() < 2) throw Error(kModule, "histogram needs at least two edges");
  Histogram h;
  h.edges.assign(edges.begin(), edges.end());
  h.counts.assign(edges.size() - 1, 0);
  for (double v : values) {
    if (v < edges.front() || v > edges.back()) continue;
    auto it = std::upper_bound(edges.begin(), edges.end(), v);
    std::size_t bin = static_cast<std::size_t>(it - edges.begin());
    bin = bin == 0 ? 0 : std::min(bin - 1, h.counts.size() - 1);
    ++h.counts[bin];
  }
  return h;
}

EnergyStats summarize_energies(std::vector<double> values, std::span<const double> edges) {
  if (values.empty()) throw Error(kModule, "energy statistics of an empty dataset");
  EnergyStats s;
  const double n = static_cast<double>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  s.stddev = std::sqrt(ss / n);
  if (edges.empty()) {
    s.histogram = histogram(values, histogram_edges(values));
  } else {
    s.histogram = histogram(values, edges);
  }
  s.energies = std::move(values);
  return s;
}

EnergyStats energy_stats(const Model& model, std::span<const Tensor> xs) {
  if (xs.empty()) throw Error(kModule, "energy statistics of an empty dataset");
  return summarize_energies(energies(model, xs));
}

double overlap_coefficient(const Histogram& a, const Histogram& b) {
  if (a.edges != b.edges) throw Error(kModule, "overlap of histograms with different bins");
  const double ta = static_cast<double>(a.total()), tb = static_cast<double>(b.total());
  if (ta == 0.0 || tb == 0.0) throw Error(kModule, "overlap of an empty histogram");
  double s = 0.0;
  for (std::size_t i = 0; i < a.counts.size(); ++i) {
    s += std::min(static_cast<double>(a.counts[i]) / ta, static_cast<double>(b.counts[i]) / tb);
  }
  return s;
}

}  // namespace ebmlab
