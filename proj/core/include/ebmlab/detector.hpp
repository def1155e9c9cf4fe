#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>

#include <nlohmann/json.hpp>

#include "ebmlab/data.hpp"
#include "ebmlab/model.hpp"

namespace ebmlab {

// Flags an input as adversarial when its energy is at or below `threshold`.
// Needs no training beyond choosing the threshold.
struct EnergyDetector {
  double threshold = 0.0;
  std::size_t natural_count = 0;
  std::size_t adversarial_count = 0;
  double g_mean = 0.0;
  double tpr = 0.0;
  double tnr = 0.0;
  // Bookkeeping carried into the persisted document.
  std::string model_checksum;
  std::string attack_family;
};

struct DetectionReport {
  std::size_t true_positives = 0;   // adversarial, flagged
  std::size_t false_negatives = 0;  // adversarial, missed
  std::size_t false_positives = 0;  // natural, flagged
  std::size_t true_negatives = 0;   // natural, passed

  double detection_rate() const;
  double false_positive_rate() const;
};

// Candidate thresholds are the midpoints between consecutive sorted unique
// pooled energies plus -inf/+inf; the one maximizing sqrt(TPR * TNR) wins,
// ties broken by lower FPR, then lower threshold.
EnergyDetector fit_threshold(std::span<const double> natural_energies,
                             std::span<const double> adversarial_energies);

// True positive rate / true negative rate of the rule energy <= t.
std::pair<double, double> rates_at(double threshold, std::span<const double> natural_energies,
                                   std::span<const double> adversarial_energies);

inline bool flags(const EnergyDetector& detector, double energy) {
  return energy <= detector.threshold;
}

// One forward pass; 1 means adversarial.
int detect(const Model& model, const Tensor& x, const EnergyDetector& detector);

DetectionReport evaluate_energies(const EnergyDetector& detector,
                                  std::span<const double> natural_energies,
                                  std::span<const double> adversarial_energies);
DetectionReport evaluate_detector(const Model& model, const EnergyDetector& detector,
                                  const Dataset& natural_set, const Dataset& adversarial_set);

nlohmann::json detector_to_json(const EnergyDetector& detector);
EnergyDetector detector_from_json(const nlohmann::json& j);
void save_detector(const EnergyDetector& detector, const std::filesystem::path& path);
EnergyDetector load_detector(const std::filesystem::path& path);

}  // namespace ebmlab
