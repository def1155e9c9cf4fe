#include "ebmlab/harness.hpp"

#include <algorithm>
#include <array>
#include <cstdio>
#include <functional>
#include <ostream>
#include <sstream>

#include <CLI11.hpp>

#include "ebmlab/io.hpp"
#include "ebmlab/sampler.hpp"

namespace ebmlab {

namespace {

constexpr const char* kModule = "harness-cli";
constexpr std::array<std::size_t, 5> kProfileSteps{1, 5, 10, 20, 40};
constexpr std::size_t kFig4Images = 100;
constexpr std::size_t kFig4Maps = 4;

[[noreturn]] void fail(const std::string& what) { throw Error(kModule, what); }

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string opt_num(const std::optional<double>& v) { return v ? num(*v) : std::string(); }

std::filesystem::path out_path(const LabConfig& c, const std::string& name) {
  std::filesystem::create_directories(c.out);
  return std::filesystem::path(c.out) / name;
}

std::vector<std::size_t> profile_steps(const LabConfig& c) {
  if (c.steps.size() > 1) return c.steps;
  return {kProfileSteps.begin(), kProfileSteps.end()};
}

Dataset limited(const Dataset& d, std::size_t limit) {
  if (limit == 0 || limit >= d.size()) return d;
  std::vector<std::size_t> idx(limit);
  for (std::size_t i = 0; i < limit; ++i) idx[i] = i;
  return d.subset(idx);
}

std::string histogram_csv(const std::string& kind, const LabConfig& c, const std::string& checksum,
                          const Histogram& a, const Histogram& b, const std::string& b_name) {
  std::string s = csv_preamble(kind, c, checksum, "bin_lo,bin_hi,natural," + b_name);
  for (std::size_t i = 0; i < a.counts.size(); ++i) {
    s += num(a.edges[i]) + "," + num(a.edges[i + 1]) + "," + std::to_string(a.counts[i]) + "," +
         std::to_string(b.counts[i]) + "\n";
  }
  return s;
}

Model load_model(const std::string& path) {
  if (path.empty()) fail("--model is required");
  return load_checkpoint(path);
}

nlohmann::json report_json(const DetectionReport& r) {
  return {{"detection_rate", r.detection_rate()},
          {"false_positive_rate", r.false_positive_rate()},
          {"true_positives", r.true_positives},
          {"false_negatives", r.false_negatives},
          {"false_positives", r.false_positives},
          {"true_negatives", r.true_negatives}};
}

Model train_from_config(const LabConfig& c, const Splits& splits, const std::string& at_eps,
                        LossTrace* trace) {
  Model model = Model::build(parse_architecture(c.arch), c.seed);
  TrainConfig tc;
  tc.epochs = c.epochs;
  tc.batch_size = c.batch_size;
  tc.learning_rate = c.learning_rate;
  tc.seed = c.seed;
  if (at_eps.empty()) return train_standard(std::move(model), splits.train, tc, trace);
  tc.adversarial = true;
  tc.inner = adversarial_training_attack(Norm::kLinf, parse_rational(at_eps), splits.train.bounds);
  tc.warmup_epochs = c.epochs / 2;
  return train_adversarial(std::move(model), splits.train, tc, trace);
}

// Energies of the natural split and its attacked counterpart at config.steps.back().
std::pair<std::vector<double>, std::vector<double>> attacked_energies(const LabConfig& c,
                                                                      const Model& model,
                                                                      const Dataset& data,
                                                                      AttackKind kind) {
  const AttackConfig ac = attack_config(c, data);
  const auto results = attack_dataset(kind, model, data, ac);
  std::vector<double> nat, adv;
  for (const auto& r : results) {
    nat.push_back(r.energy_before.value);
    adv.push_back(r.energy_after.value);
  }
  return {nat, adv};
}

// ---- commands --------------------------------------------------------------

nlohmann::json cmd_train(const LabConfig& c) {
  const Splits splits = load_splits(c);
  LossTrace trace;
  const Model model = train_from_config(c, splits, c.at_eps, &trace);
  const std::filesystem::path ckpt =
      c.model.empty() ? out_path(c, "model.ckpt") : std::filesystem::path(c.model);
  if (ckpt.has_parent_path()) std::filesystem::create_directories(ckpt.parent_path());
  save_checkpoint(model, ckpt);
  std::string csv = csv_preamble("train_loss", c, model.checksum(), "epoch,batch,loss");
  for (const auto& p : trace) {
    csv += std::to_string(p.epoch) + "," + std::to_string(p.batch) + "," + num(p.loss) + "\n";
  }
  write_file_atomic(out_path(c, "train_loss.csv"), csv);
  return {{"checkpoint", ckpt.string()},
          {"model_checksum", model.checksum()},
          {"regime", to_string(model.provenance().regime)},
          {"epochs", c.epochs},
          {"train_accuracy", accuracy(model, splits.train)},
          {"test_accuracy", accuracy(model, splits.test)}};
}

nlohmann::json cmd_attack(const LabConfig& c) {
  const Model model = load_model(c.model);
  const Splits splits = load_splits(c);
  const Dataset data = limited(select_split(splits, c.split), c.limit);
  const AttackKind kind = parse_attack_kind(c.attack);
  const AttackConfig ac = attack_config(c, data);
  const auto results = attack_dataset(kind, model, data, ac);
  std::string csv = csv_preamble("attack", c, model.checksum(),
                                 "index,label,prediction,success,energy_natural,energy_adversarial,linf");
  std::vector<double> nat, adv;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < results.size(); ++i) {
    const auto& r = results[i];
    double linf = 0.0;
    for (std::size_t j = 0; j < r.x_star.size(); ++j) {
      linf = std::max(linf, std::abs(r.x_star[j] - data.inputs[i][j]));
    }
    csv += std::to_string(data.origin[i]) + "," + std::to_string(data.labels[i]) + "," +
           std::to_string(r.prediction) + "," + (r.success ? "1" : "0") + "," + num(r.energy_before.value) +
           "," + num(r.energy_after.value) + "," + num(linf) + "\n";
    nat.push_back(r.energy_before.value);
    adv.push_back(r.energy_after.value);
    correct += r.prediction == data.labels[i] ? 1 : 0;
  }
  write_file_atomic(out_path(c, "attack_" + to_string(kind) + ".csv"), csv);
  const EnergyStats sn = summarize_energies(nat), sa = summarize_energies(adv);
  ExperimentRecord rec;
  rec.experiment_id = "attack-" + to_string(kind);
  rec.attack = kind;
  rec.steps = ac.steps;
  rec.epsilon = ac.epsilon;
  rec.lambda = kind == AttackKind::kHePgd ? ac.lambda : 0.0;
  rec.natural_mean_energy = sn.mean;
  rec.natural_std_energy = sn.stddev;
  rec.adversarial_mean_energy = sa.mean;
  rec.adversarial_std_energy = sa.stddev;
  rec.accuracy = static_cast<double>(correct) / static_cast<double>(results.size());
  rec.seed = c.seed;
  rec.model_checksum = model.checksum();
  return record_to_json(rec);
}

nlohmann::json cmd_sweep(const LabConfig& c) {
  const Model model = load_model(c.model);
  const Splits splits = load_splits(c);
  const Dataset data = limited(select_split(splits, c.split), c.limit);
  const AttackKind kind = parse_attack_kind(c.attack);
  const SweepResult sweep = strength_sweep(model, data, kind, attack_config(c, data), c.steps);
  write_file_atomic(out_path(c, "sweep_" + to_string(kind) + ".csv"),
                    sweep_csv(sweep, c, model.checksum()));
  nlohmann::json rows = nlohmann::json::array();
  for (const auto& r : sweep.records) rows.push_back(record_to_json(r));
  return {{"records", rows}};
}

nlohmann::json cmd_fit_detector(const LabConfig& c) {
  const Model model = load_model(c.model);
  const Splits splits = load_splits(c);
  const AttackKind kind = parse_attack_kind(c.attack);
  const auto [nat, adv] = attacked_energies(c, model, limited(splits.val, c.limit), kind);
  EnergyDetector det = fit_threshold(nat, adv);
  det.model_checksum = model.checksum();
  det.attack_family = to_string(kind);
  const std::filesystem::path path =
      c.detector.empty() ? out_path(c, "detector.json") : std::filesystem::path(c.detector);
  save_detector(det, path);
  nlohmann::json j = detector_to_json(det);
  j["detector"] = path.string();
  return j;
}

nlohmann::json cmd_detect(const LabConfig& c) {
  const std::filesystem::path path =
      c.detector.empty() ? std::filesystem::path(c.out) / "detector.json" : std::filesystem::path(c.detector);
  const EnergyDetector det = load_detector(path);
  const Model model = load_model(c.model);
  if (!det.model_checksum.empty() && det.model_checksum != model.checksum()) {
    fail("detector " + path.string() + " was fitted for model " + det.model_checksum + ", not " +
         model.checksum());
  }
  const Splits splits = load_splits(c);
  const Dataset data = limited(select_split(splits, c.split), c.limit);
  const AttackKind kind = parse_attack_kind(c.attack);
  const auto [nat, adv] = attacked_energies(c, model, data, kind);
  const DetectionReport report = evaluate_energies(det, nat, adv);
  std::string csv = csv_preamble("detect", c, model.checksum(),
                                 "index,label,energy_natural,flag_natural,energy_adversarial,flag_adversarial");
  for (std::size_t i = 0; i < nat.size(); ++i) {
    csv += std::to_string(data.origin[i]) + "," + std::to_string(data.labels[i]) + "," + num(nat[i]) +
           "," + (flags(det, nat[i]) ? "1" : "0") + "," + num(adv[i]) + "," +
           (flags(det, adv[i]) ? "1" : "0") + "\n";
  }
  write_file_atomic(out_path(c, "detect_" + to_string(kind) + ".csv"), csv);
  nlohmann::json j = report_json(report);
  j["threshold"] = detector_to_json(det)["threshold"];
  j["attack"] = to_string(kind);
  return j;
}

nlohmann::json cmd_sample(const LabConfig& c) {
  const Model model = load_model(c.model);
  const Splits splits = load_splits(c);
  SGLDConfig sc;
  sc.step_size = c.step_size;
  sc.steps = c.sgld_steps;
  sc.chains = c.chains;
  sc.seed = c.seed;
  sc.init_box = splits.train.bounding_box();
  sc.sample_shape = model.input_shape();
  if (splits.train.bounds) {
    const std::size_t d = shape_size(model.input_shape());
    sc.clamp_box = std::pair{std::vector<double>(d, splits.train.bounds->first),
                             std::vector<double>(d, splits.train.bounds->second)};
  }
  sc.record_trajectory = c.record_trajectory;
  const EnergyFn fn = model_energy(model);
  const SGLDChains chains = sgld_sample(fn, sc);
  write_file_atomic(out_path(c, "sgld_samples.csv"),
                    csv_preamble("sgld", c, model.checksum(), "") + chains_to_csv(chains, fn));
  const EnergyStats samples = summarize_energies(chains.energies);
  const EnergyStats data = energy_stats(model, splits.test.inputs);
  return {{"chains", c.chains},
          {"steps", c.sgld_steps},
          {"sample_mean_energy", samples.mean},
          {"data_mean_energy", data.mean}};
}

nlohmann::json cmd_gradviz(const LabConfig& c) {
  const Model model = load_model(c.model);
  const Splits splits = load_splits(c);
  const Dataset data = limited(select_split(splits, c.split), c.images);
  std::string csv = csv_preamble("gradviz", c, model.checksum(), "index,label,gini,map");
  double mean_gini = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor g = input_gradient(model, data.inputs[i], data.labels[i]);
    const double gini = gini_coefficient(g.values());
    const std::string name = "gradmap_" + std::to_string(data.origin[i]) + ".pgm";
    write_file_atomic(out_path(c, name), to_pgm(input_gradient_map(model, data.inputs[i], data.labels[i])));
    csv += std::to_string(data.origin[i]) + "," + std::to_string(data.labels[i]) + "," + num(gini) + "," +
           name + "\n";
    mean_gini += gini / static_cast<double>(data.size());
  }
  write_file_atomic(out_path(c, "gradviz.csv"), csv);
  return {{"images", data.size()}, {"mean_gini", mean_gini}};
}

nlohmann::json cmd_reproduce(const LabConfig& c) {
  const Splits splits = load_splits(c);
  LabConfig rc = c;
  if (rc.model.empty()) rc.model = c.out;
  if (c.profile == "fig2") {
    const Model m = require_model(rc, splits, kStandardCheckpoint, "");
    const Fig2Result r = reproduce_fig2(c, splits, m);
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& rec : r.sweep.records) rows.push_back(record_to_json(rec));
    return {{"profile", "fig2"},
            {"clean_accuracy", r.clean_accuracy},
            {"natural_mode_bin", r.natural.mode_bin()},
            {"adversarial_mode_bin", r.adversarial.mode_bin()},
            {"records", rows}};
  }
  if (c.profile == "fig3") {
    const Model m = require_model(rc, splits, kStandardCheckpoint, "");
    const Fig3Result r = reproduce_fig3(c, splits, m);
    return {{"profile", "fig3"},
            {"overlap", r.overlap},
            {"pgd", report_json(r.pgd_report)},
            {"he_pgd", report_json(r.he_report)}};
  }
  if (c.profile == "table1_protocol") {
    const Model m = require_model(rc, splits, kStandardCheckpoint, "");
    nlohmann::json rows = nlohmann::json::array();
    for (const auto& row : reproduce_table1(c, splits, m)) {
      nlohmann::json j = report_json(row.report);
      j["attack"] = row.attack;
      j["epsilon"] = row.epsilon;
      rows.push_back(j);
    }
    return {{"profile", "table1_protocol"}, {"rows", rows}};
  }
  if (c.profile == "fig4") {
    const Model s = require_model(rc, splits, kStandardCheckpoint, "");
    const Model r = require_model(rc, splits, kRobustCheckpoint, kRobustEps);
    const Model q = require_model(rc, splits, kQuasiRobustCheckpoint, kQuasiRobustEps);
    const Fig4Result f = reproduce_fig4(c, splits, s, r, q);
    std::size_t less_sparse = 0;
    for (const auto& im : f.images) less_sparse += im.gini_robust < im.gini_standard ? 1 : 0;
    return {{"profile", "fig4"},
            {"accuracy_standard", f.accuracy_standard},
            {"accuracy_robust", f.accuracy_robust},
            {"accuracy_quasi_robust", f.accuracy_quasi_robust},
            {"robust_less_sparse_fraction",
             static_cast<double>(less_sparse) / static_cast<double>(f.images.size())}};
  }
  fail("unknown profile '" + c.profile + "' (expected fig2, fig3, table1_protocol or fig4)");
}

}  // namespace

// ---- config ------------------------------------------------------------------

nlohmann::json LabConfig::to_json() const {
  return {{"model", model},
          {"data", data},
          {"data_size", data_size},
          {"data_seed", data_seed},
          {"split_seed", split_seed},
          {"attack", attack},
          {"eps", eps},
          {"alpha", alpha},
          {"steps", steps},
          {"lambda", lambda},
          {"seed", seed},
          {"out", out},
          {"split", split},
          {"limit", limit},
          {"arch", arch},
          {"epochs", epochs},
          {"batch_size", batch_size},
          {"learning_rate", learning_rate},
          {"at_eps", at_eps},
          {"detector", detector},
          {"chains", chains},
          {"sgld_steps", sgld_steps},
          {"step_size", step_size},
          {"record_trajectory", record_trajectory},
          {"images", images},
          {"profile", profile},
          {"train_missing", train_missing}};
}

LabConfig LabConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) fail("config must be a JSON object");
  const nlohmann::json known = LabConfig{}.to_json();
  for (const auto& [key, value] : j.items()) {
    if (!known.contains(key)) fail("unknown config key '" + key + "'");
  }
  nlohmann::json merged = known;
  merged.update(j);
  try {
    LabConfig c;
    c.model = merged["model"].get<std::string>();
    c.data = merged["data"].get<std::string>();
    c.data_size = merged["data_size"].get<std::size_t>();
    c.data_seed = merged["data_seed"].get<std::uint64_t>();
    c.split_seed = merged["split_seed"].get<std::uint64_t>();
    c.attack = merged["attack"].get<std::string>();
    c.eps = merged["eps"].get<std::string>();
    c.alpha = merged["alpha"].get<std::string>();
    c.steps = merged["steps"].get<std::vector<std::size_t>>();
    c.lambda = merged["lambda"].get<double>();
    c.seed = merged["seed"].get<std::uint64_t>();
    c.out = merged["out"].get<std::string>();
    c.split = merged["split"].get<std::string>();
    c.limit = merged["limit"].get<std::size_t>();
    c.arch = merged["arch"].get<std::string>();
    c.epochs = merged["epochs"].get<std::size_t>();
    c.batch_size = merged["batch_size"].get<std::size_t>();
    c.learning_rate = merged["learning_rate"].get<double>();
    c.at_eps = merged["at_eps"].get<std::string>();
    c.detector = merged["detector"].get<std::string>();
    c.chains = merged["chains"].get<std::size_t>();
    c.sgld_steps = merged["sgld_steps"].get<std::size_t>();
    c.step_size = merged["step_size"].get<double>();
    c.record_trajectory = merged["record_trajectory"].get<bool>();
    c.images = merged["images"].get<std::size_t>();
    c.profile = merged["profile"].get<std::string>();
    c.train_missing = merged["train_missing"].get<bool>();
    return c;
  } catch (const nlohmann::json::exception& e) {
    fail(std::string("bad config value: ") + e.what());
  }
}

std::string LabConfig::hash() const {
  // Output locations do not change results, so they stay out of the hash.
  nlohmann::json j = to_json();
  j.erase("out");
  j.erase("detector");
  j.erase("model");
  return to_hex(fnv1a64(j.dump()));
}

Splits load_splits(const LabConfig& c) {
  const Dataset all = load_dataset(c.data, c.data_size, c.data_seed);
  // Held-out pool = 20%; the detector validation split is 20% of that pool.
  return split(all, {0.8, 0.04, 0.16}, c.split_seed);
}

const Dataset& select_split(const Splits& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  if (name == "test") return s.test;
  fail("unknown split '" + name + "' (expected train, val or test)");
}

AttackConfig attack_config(const LabConfig& c, const Dataset& data) {
  if (c.steps.empty()) fail("--steps must list at least one step count");
  AttackConfig ac;
  ac.norm = Norm::kLinf;
  ac.epsilon = parse_rational(c.eps);
  ac.alpha = parse_rational(c.alpha);
  ac.steps = *std::max_element(c.steps.begin(), c.steps.end());
  ac.lambda = c.lambda;
  ac.random_start = true;
  ac.seed = c.seed;
  ac.domain_bounds = data.bounds;
  ac.validate();
  return ac;
}

std::string csv_preamble(const std::string& kind, const LabConfig& c, const std::string& checksum,
                         const std::string& columns) {
  std::string s = "# ebmlab " + kind + " v1 seed=" + std::to_string(c.seed) + " config=" + c.hash() +
                  " model=" + (checksum.empty() ? "none" : checksum) + "\n";
  if (!columns.empty()) s += columns + "\n";
  return s;
}

std::string sweep_csv(const SweepResult& sweep, const LabConfig& c, const std::string& checksum) {
  std::string s = csv_preamble(
      "sweep", c, checksum,
      "experiment_id,attack,steps,epsilon,lambda,natural_mean_energy,natural_std_energy,"
      "adversarial_mean_energy,adversarial_std_energy,accuracy,detection_rate,false_positive_rate,"
      "seed,model_checksum");
  for (const auto& r : sweep.records) {
    s += r.experiment_id + "," + to_string(r.attack) + "," + std::to_string(r.steps) + "," + num(r.epsilon) +
         "," + num(r.lambda) + "," + num(r.natural_mean_energy) + "," + num(r.natural_std_energy) + "," +
         num(r.adversarial_mean_energy) + "," + num(r.adversarial_std_energy) + "," + num(r.accuracy) + "," +
         opt_num(r.detection_rate) + "," + opt_num(r.false_positive_rate) + "," + std::to_string(r.seed) +
         "," + r.model_checksum + "\n";
  }
  return s;
}

nlohmann::json record_to_json(const ExperimentRecord& r) {
  nlohmann::json j{{"experiment_id", r.experiment_id},
                   {"attack", to_string(r.attack)},
                   {"steps", r.steps},
                   {"epsilon", r.epsilon},
                   {"lambda", r.lambda},
                   {"natural_mean_energy", r.natural_mean_energy},
                   {"natural_std_energy", r.natural_std_energy},
                   {"adversarial_mean_energy", r.adversarial_mean_energy},
                   {"adversarial_std_energy", r.adversarial_std_energy},
                   {"accuracy", r.accuracy},
                   {"seed", r.seed},
                   {"model_checksum", r.model_checksum}};
  if (r.detection_rate) j["detection_rate"] = *r.detection_rate;
  if (r.false_positive_rate) j["false_positive_rate"] = *r.false_positive_rate;
  return j;
}

Model require_model(const LabConfig& c, const Splits& splits, const std::string& file,
                    const std::string& at_eps) {
  const std::filesystem::path path = std::filesystem::path(c.model) / file;
  if (std::filesystem::exists(path)) return load_checkpoint(path);
  if (!c.train_missing) {
    std::string cmd = "ebmlab train --data " + c.data + " --seed " + std::to_string(c.seed) +
                      " --epochs " + std::to_string(c.epochs) + " --model " + path.string();
    if (!at_eps.empty()) cmd += " --at-eps " + at_eps;
    fail("missing checkpoint " + path.string() + "; create it with `" + cmd +
         "` or pass --train-missing");
  }
  const Model m = train_from_config(c, splits, at_eps, nullptr);
  std::filesystem::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  save_checkpoint(m, path);
  return m;
}

Fig2Result reproduce_fig2(const LabConfig& c, const Splits& splits, const Model& model) {
  const Dataset data = limited(splits.test, c.limit);
  const auto steps = profile_steps(c);
  Fig2Result r;
  r.clean_accuracy = accuracy(model, data);
  r.sweep = strength_sweep(model, data, AttackKind::kPgd, attack_config(c, data), steps);
  const auto edges = histogram_edges(r.sweep.natural_energies, r.sweep.adversarial_energies.back());
  r.natural = histogram(r.sweep.natural_energies, edges);
  r.adversarial = histogram(r.sweep.adversarial_energies.back(), edges);
  write_file_atomic(out_path(c, "fig2_histogram.csv"),
                    histogram_csv("fig2_histogram", c, model.checksum(), r.natural, r.adversarial, "pgd"));
  write_file_atomic(out_path(c, "fig2_sweep.csv"), sweep_csv(r.sweep, c, model.checksum()));
  return r;
}

Fig3Result reproduce_fig3(const LabConfig& c, const Splits& splits, const Model& model) {
  const Dataset val = limited(splits.val, c.limit);
  const Dataset test = limited(splits.test, c.limit);
  const auto steps = profile_steps(c);
  Fig3Result r;
  AttackConfig pgd = attack_config(c, test);
  pgd.lambda = 0.0;
  AttackConfig he = pgd;
  he.lambda = c.lambda;

  const SweepResult fit = strength_sweep(model, val, AttackKind::kPgd, pgd, std::vector{pgd.steps});
  r.detector = fit_threshold(fit.natural_energies, fit.adversarial_energies.back());
  r.detector.model_checksum = model.checksum();
  r.detector.attack_family = to_string(AttackKind::kPgd);

  r.pgd = strength_sweep(model, test, AttackKind::kPgd, pgd, steps);
  r.he_pgd = strength_sweep(model, test, AttackKind::kHePgd, he, steps);
  for (auto* sweep : {&r.pgd, &r.he_pgd}) {
    for (std::size_t i = 0; i < sweep->records.size(); ++i) {
      const auto rep = evaluate_energies(r.detector, sweep->natural_energies, sweep->adversarial_energies[i]);
      sweep->records[i].detection_rate = rep.detection_rate();
      sweep->records[i].false_positive_rate = rep.false_positive_rate();
    }
  }
  r.pgd_report = evaluate_energies(r.detector, r.pgd.natural_energies, r.pgd.adversarial_energies.back());
  r.he_report = evaluate_energies(r.detector, r.he_pgd.natural_energies, r.he_pgd.adversarial_energies.back());
  const auto edges = histogram_edges(r.he_pgd.natural_energies, r.he_pgd.adversarial_energies.back());
  r.natural = histogram(r.he_pgd.natural_energies, edges);
  r.he_adversarial = histogram(r.he_pgd.adversarial_energies.back(), edges);
  r.overlap = overlap_coefficient(r.natural, r.he_adversarial);

  const std::string ck = model.checksum();
  write_file_atomic(out_path(c, "fig3_histogram.csv"),
                    histogram_csv("fig3_histogram", c, ck, r.natural, r.he_adversarial, "hepgd"));
  SweepResult both = r.pgd;
  both.records.insert(both.records.end(), r.he_pgd.records.begin(), r.he_pgd.records.end());
  write_file_atomic(out_path(c, "fig3_sweep.csv"), sweep_csv(both, c, ck));
  std::string det = csv_preamble("fig3_detection", c, ck,
                                 "attack,threshold,detection_rate,false_positive_rate,tp,fn,fp,tn");
  for (const auto& [name, rep] : {std::pair{"pgd", r.pgd_report}, std::pair{"hepgd", r.he_report}}) {
    det += std::string(name) + "," + num(r.detector.threshold) + "," + num(rep.detection_rate()) + "," +
           num(rep.false_positive_rate()) + "," + std::to_string(rep.true_positives) + "," +
           std::to_string(rep.false_negatives) + "," + std::to_string(rep.false_positives) + "," +
           std::to_string(rep.true_negatives) + "\n";
  }
  write_file_atomic(out_path(c, "fig3_detection.csv"), det);
  return r;
}

std::vector<Table1Row> reproduce_table1(const LabConfig& c, const Splits& splits, const Model& model) {
  const Dataset val = limited(splits.val, c.limit);
  const Dataset test = limited(splits.test, c.limit);
  std::vector<Table1Row> rows;
  std::string csv = csv_preamble("table1_protocol", c, model.checksum(),
                                 "attack,epsilon,threshold,g_mean,detection_rate,false_positive_rate,tp,fn,fp,tn");
  for (const char* eps : {"8/255", "16/255"}) {
    LabConfig ec = c;
    ec.eps = eps;
    const auto [vn, va] = attacked_energies(ec, model, val, AttackKind::kPgd);
    const auto [tn, ta] = attacked_energies(ec, model, test, AttackKind::kPgd);
    Table1Row row;
    row.attack = std::string("pgd(") + eps + ")";
    row.epsilon = parse_rational(eps);
    row.detector = fit_threshold(vn, va);
    row.report = evaluate_energies(row.detector, tn, ta);
    const auto& r = row.report;
    csv += row.attack + "," + num(row.epsilon) + "," + num(row.detector.threshold) + "," +
           num(row.detector.g_mean) + "," + num(r.detection_rate()) + "," + num(r.false_positive_rate()) +
           "," + std::to_string(r.true_positives) + "," + std::to_string(r.false_negatives) + "," +
           std::to_string(r.false_positives) + "," + std::to_string(r.true_negatives) + "\n";
    rows.push_back(std::move(row));
  }
  write_file_atomic(out_path(c, "table1_protocol.csv"), csv);
  return rows;
}

Fig4Result reproduce_fig4(const LabConfig& c, const Splits& splits, const Model& standard,
                          const Model& robust, const Model& quasi_robust) {
  Fig4Result r;
  r.accuracy_standard = accuracy(standard, splits.test);
  r.accuracy_robust = accuracy(robust, splits.test);
  r.accuracy_quasi_robust = accuracy(quasi_robust, splits.test);
  const Dataset images = limited(splits.test, kFig4Images);
  const std::string ck = standard.checksum() + "+" + robust.checksum() + "+" + quasi_robust.checksum();
  std::string csv = csv_preamble("fig4_gini", c, ck, "index,label,gini_standard,gini_robust,gini_quasi_robust");
  const std::array<std::pair<const char*, const Model*>, 3> models{
      {{"standard", &standard}, {"robust", &robust}, {"quasi_robust", &quasi_robust}}};
  for (std::size_t i = 0; i < images.size(); ++i) {
    const Tensor& x = images.inputs[i];
    const std::size_t y = images.labels[i];
    Fig4Image im;
    im.index = images.origin[i];
    std::array<double, 3> g{};
    for (std::size_t m = 0; m < models.size(); ++m) {
      g[m] = gini_coefficient(input_gradient(*models[m].second, x, y).values());
      if (i < kFig4Maps) {
        write_file_atomic(out_path(c, "fig4_" + std::string(models[m].first) + "_" +
                                          std::to_string(im.index) + ".pgm"),
                          to_pgm(input_gradient_map(*models[m].second, x, y)));
      }
    }
    im.gini_standard = g[0];
    im.gini_robust = g[1];
    im.gini_quasi_robust = g[2];
    csv += std::to_string(im.index) + "," + std::to_string(y) + "," + num(g[0]) + "," + num(g[1]) + "," +
           num(g[2]) + "\n";
    r.images.push_back(im);
  }
  write_file_atomic(out_path(c, "fig4_gini.csv"), csv);
  std::string acc = csv_preamble("fig4_models", c, ck, "model,regime,epsilon,accuracy");
  acc += "standard,standard,0," + num(r.accuracy_standard) + "\n";
  acc += "robust,adversarial," + num(robust.provenance().epsilon) + "," + num(r.accuracy_robust) + "\n";
  acc += "quasi_robust,adversarial," + num(quasi_robust.provenance().epsilon) + "," +
         num(r.accuracy_quasi_robust) + "\n";
  write_file_atomic(out_path(c, "fig4_models.csv"), acc);
  return r;
}

// ---- command line ------------------------------------------------------------

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Energy lens on softmax classifiers: attacks, detection, sampling"};
  app.require_subcommand(1);
  app.fallthrough();

  LabConfig flags;
  std::string config_path;
  std::string steps_text;
  app.add_option("--config", config_path, "JSON config mirroring the flags");

  // Every flag is recorded so it can override the config file afterwards.
  std::vector<std::pair<CLI::Option*, std::function<void(LabConfig&)>>> overrides;
  auto flag = [&](const std::string& name, auto member, const std::string& help) {
    CLI::Option* o = app.add_option(name, flags.*member, help);
    overrides.emplace_back(o, [member, &flags](LabConfig& c) { c.*member = flags.*member; });
    return o;
  };
  flag("--model", &LabConfig::model, "checkpoint path (model directory for reproduce)");
  flag("--data", &LabConfig::data, "synth:<kind>, idx:<images>,<labels> or a CSV path");
  flag("--data-size", &LabConfig::data_size, "synthetic sample count");
  flag("--data-seed", &LabConfig::data_seed, "synthetic data seed");
  flag("--split-seed", &LabConfig::split_seed, "train/val/test split seed");
  flag("--attack", &LabConfig::attack, "fgsm | pgd | hepgd")->check(CLI::IsMember({"fgsm", "pgd", "hepgd", "he-pgd"}));
  flag("--eps", &LabConfig::eps, "budget as p/q");
  flag("--alpha", &LabConfig::alpha, "step size as p/q");
  CLI::Option* steps_opt = app.add_option("--steps", steps_text, "comma-separated step counts");
  flag("--lambda", &LabConfig::lambda, "energy weight of hepgd");
  flag("--seed", &LabConfig::seed, "seed");
  flag("--out", &LabConfig::out, "output directory");
  flag("--split", &LabConfig::split, "train | val | test")->check(CLI::IsMember({"train", "val", "test"}));
  flag("--limit", &LabConfig::limit, "attack at most this many samples");
  flag("--arch", &LabConfig::arch, "mlp:<d>:<h1,h2>:<k> or smallconv:<c>:<H>x<W>:<k>[:c1,c2]");
  flag("--epochs", &LabConfig::epochs, "training epochs");
  flag("--batch-size", &LabConfig::batch_size, "training batch size");
  flag("--lr", &LabConfig::learning_rate, "learning rate");
  flag("--at-eps", &LabConfig::at_eps, "adversarial training budget as p/q");
  flag("--detector", &LabConfig::detector, "detector JSON path");
  flag("--chains", &LabConfig::chains, "SGLD chains");
  flag("--sgld-steps", &LabConfig::sgld_steps, "SGLD steps");
  flag("--step-size", &LabConfig::step_size, "SGLD step size");
  flag("--images", &LabConfig::images, "gradient maps to export");
  CLI::Option* traj = app.add_flag("--trajectory", flags.record_trajectory, "record SGLD trajectories");
  CLI::Option* train_missing = app.add_flag("--train-missing", flags.train_missing,
                                            "train checkpoints reproduce cannot find");

  struct Command {
    std::string name;
    std::string help;
    std::function<nlohmann::json(const LabConfig&)> fn;
  };
  const std::vector<Command> commands{
      {"train", "train a classifier (adversarially with --at-eps)", cmd_train},
      {"attack", "attack one split and write adversarial energies", cmd_attack},
      {"sweep", "energy and accuracy per step count", cmd_sweep},
      {"fit-detector", "fit the energy threshold on the validation split", cmd_fit_detector},
      {"detect", "apply a fitted detector to natural and attacked samples", cmd_detect},
      {"sample", "SGLD chains on the classifier energy", cmd_sample},
      {"gradviz", "export input-gradient maps and their Gini values", cmd_gradviz},
      {"reproduce", "run one experiment profile end to end", cmd_reproduce}};
  std::vector<CLI::App*> subs;
  for (const auto& c : commands) subs.push_back(app.add_subcommand(c.name, c.help));
  subs.back()->add_option("profile", flags.profile, "fig2 | fig3 | table1_protocol | fig4")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 2;
  }

  try {
    LabConfig c;
    if (!config_path.empty()) {
      if (!std::filesystem::exists(config_path)) fail("config file " + config_path + " does not exist");
      try {
        c = LabConfig::from_json(nlohmann::json::parse(read_file(config_path)));
      } catch (const nlohmann::json::exception& e) {
        fail(std::string("malformed config: ") + e.what());
      }
    }
    for (const auto& [opt, apply] : overrides) {
      if (opt->count() > 0) apply(c);
    }
    if (traj->count() > 0) c.record_trajectory = true;
    if (train_missing->count() > 0) c.train_missing = true;
    if (steps_opt->count() > 0) {
      c.steps.clear();
      std::stringstream ss(steps_text);
      std::string item;
      while (std::getline(ss, item, ',')) {
        std::size_t v = 0;
        try {
          std::size_t pos = 0;
          v = std::stoul(item, &pos);
          if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
          err << "--steps: '" << item << "' is not a step count\n";
          return 2;
        }
        c.steps.push_back(v);
      }
    }
    for (std::size_t i = 0; i < commands.size(); ++i) {
      if (!subs[i]->parsed()) continue;
      if (commands[i].name == "reproduce") c.profile = flags.profile;
      nlohmann::json summary = commands[i].fn(c);
      nlohmann::json line{{"command", commands[i].name}, {"status", "ok"}};
      line.update(summary);
      out << line.dump() << "\n";
      return 0;
    }
    fail("no command given");
  } catch (const Error& e) {
    err << e.what() << "\n";
    nlohmann::json line{{"status", "error"}, {"module", e.module()}, {"message", e.what()}};
    out << line.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << kModule << ": " << e.what() << "\n";
    nlohmann::json line{{"status", "error"}, {"module", kModule}, {"message", e.what()}};
    out << line.dump() << "\n";
    return 1;
  }
}

}  // namespace ebmlab
