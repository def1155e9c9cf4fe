#include "ebmlab/detector.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "ebmlab/energy.hpp"
#include "ebmlab/io.hpp"

namespace ebmlab {

namespace {

constexpr const char* kModule = "detector";

[[noreturn]] void fail(const std::string& what) { throw Error(kModule, what); }

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::json encode_real(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double decode_real(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    fail("bad real '" + s + "'");
  }
  return j.get<double>();
}

}  // namespace

double DetectionReport::detection_rate() const {
  return ratio(true_positives, true_positives + false_negatives);
}

double DetectionReport::false_positive_rate() const {
  return ratio(false_positives, false_positives + true_negatives);
}

std::pair<double, double> rates_at(double threshold, std::span<const double> natural_energies,
                                   std::span<const double> adversarial_energies) {
  std::size_t tp = 0, tn = 0;
  for (double e : adversarial_energies) tp += e <= threshold ? 1 : 0;
  for (double e : natural_energies) tn += e <= threshold ? 0 : 1;
  return {ratio(tp, adversarial_energies.size()), ratio(tn, natural_energies.size())};
}

EnergyDetector fit_threshold(std::span<const double> natural_energies,
                             std::span<const double> adversarial_energies) {
  if (natural_energies.empty() || adversarial_energies.empty()) {
    fail("threshold fitting needs non-empty natural and adversarial energies");
  }
  std::vector<double> nat(natural_energies.begin(), natural_energies.end());
  std::vector<double> adv(adversarial_energies.begin(), adversarial_energies.end());
  for (double e : nat) {
    if (!std::isfinite(e)) fail("non-finite natural energy");
  }
  for (double e : adv) {
    if (!std::isfinite(e)) fail("non-finite adversarial energy");
  }
  std::sort(nat.begin(), nat.end());
  std::sort(adv.begin(), adv.end());

  std::vector<double> pooled(nat);
  pooled.insert(pooled.end(), adv.begin(), adv.end());
  std::sort(pooled.begin(), pooled.end());
  pooled.erase(std::unique(pooled.begin(), pooled.end()), pooled.end());

  std::vector<double> candidates;
  candidates.reserve(pooled.size() + 1);
  candidates.push_back(-std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i + 1 < pooled.size(); ++i) {
    candidates.push_back(0.5 * (pooled[i] + pooled[i + 1]));
  }
  candidates.push_back(std::numeric_limits<double>::infinity());

  EnergyDetector best;
  bool have = false;
  double best_fpr = 0.0;
  for (double t : candidates) {
    const auto flagged_adv = static_cast<std::size_t>(std::upper_bound(adv.begin(), adv.end(), t) - adv.begin());
    const auto flagged_nat = static_cast<std::size_t>(std::upper_bound(nat.begin(), nat.end(), t) - nat.begin());
    const double tpr = ratio(flagged_adv, adv.size());
    const double tnr = ratio(nat.size() - flagged_nat, nat.size());
    const double g = std::sqrt(tpr * tnr);
    const double fpr = 1.0 - tnr;
    // Candidates ascend, so keeping the first of equal (g, fpr) keeps the lower t.
    if (!have || g > best.g_mean || (g == best.g_mean && fpr < best_fpr)) {
      best.threshold = t;
      best.g_mean = g;
      best.tpr = tpr;
      best.tnr = tnr;
      best_fpr = fpr;
      have = true;
    }
  }
  best.natural_count = nat.size();
  best.adversarial_count = adv.size();
  return best;
}

int detect(const Model& model, const Tensor& x, const EnergyDetector& detector) {
  return flags(detector, energy(model, x).value) ? 1 : 0;
}

DetectionReport evaluate_energies(const EnergyDetector& detector,
                                  std::span<const double> natural_energies,
                                  std::span<const double> adversarial_energies) {
  if (natural_energies.empty() || adversarial_energies.empty()) {
    fail("detector evaluation needs non-empty natural and adversarial sets");
  }
  DetectionReport r;
  for (double e : adversarial_energies) {
    (flags(detector, e) ? r.true_positives : r.false_negatives)++;
  }
  for (double e : natural_energies) {
    (flags(detector, e) ? r.false_positives : r.true_negatives)++;
  }
  return r;
}

DetectionReport evaluate_detector(const Model& model, const EnergyDetector& detector,
                                  const Dataset& natural_set, const Dataset& adversarial_set) {
  if (natural_set.empty() || adversarial_set.empty()) {
    fail("detector evaluation needs non-empty natural and adversarial sets");
  }
  return evaluate_energies(detector, energies(model, natural_set.inputs),
                           energies(model, adversarial_set.inputs));
}

nlohmann::json detector_to_json(const EnergyDetector& d) {
  return {{"format", "ebmlab-detector"},
          {"version", 1},
          {"threshold", encode_real(d.threshold)},
          {"natural_count", d.natural_count},
          {"adversarial_count", d.adversarial_count},
          {"g_mean", d.g_mean},
          {"tpr", d.tpr},
          {"tnr", d.tnr},
          {"model_checksum", d.model_checksum},
          {"attack_family", d.attack_family}};
}

EnergyDetector detector_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format").get<std::string>() != "ebmlab-detector") fail("not a detector document");
    if (j.at("version").get<int>() != 1) fail("unsupported detector version");
    EnergyDetector d;
    d.threshold = decode_real(j.at("threshold"));
    d.natural_count = j.at("natural_count").get<std::size_t>();
    d.adversarial_count = j.at("adversarial_count").get<std::size_t>();
    d.g_mean = j.at("g_mean").get<double>();
    d.tpr = j.at("tpr").get<double>();
    d.tnr = j.at("tnr").get<double>();
    d.model_checksum = j.value("model_checksum", std::string());
    d.attack_family = j.value("attack_family", std::string());
    return d;
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed detector document: ") + e.what());
  }
}

void save_detector(const EnergyDetector& detector, const std::filesystem::path& path) {
  write_file_atomic(path, detector_to_json(detector).dump(2) + "\n");
}

EnergyDetector load_detector(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) fail("detector file " + path.string() + " does not exist");
  try {
    return detector_from_json(nlohmann::json::parse(read_file(path)));
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("malformed detector document: ") + e.what());
  }
}

}  // namespace ebmlab
