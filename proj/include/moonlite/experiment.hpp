#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <optional>
#include <string>
#include <thread>
#include <tuple>
#include <utility>
#include <vector>

#include <json.hpp>

#include "moonlite/errors.hpp"
#include "moonlite/serialize.hpp"
#include "moonlite/synthdata.hpp"
#include "moonlite/trainer.hpp"

namespace moonlite {

namespace detail {

inline void reject_unknown_keys(const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                                const std::string& context) {
  for (const auto& [key, _] : obj.items()) {
    bool known = false;
    for (const char* k : allowed)
      if (key == k) {
        known = true;
        break;
      }
    if (!known) throw config_error(context + ": unknown key \"" + key + "\"");
  }
}

template <typename T>
T json_get(const nlohmann::json& obj, const char* key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw config_error(std::string("key \"") + key + "\": " + e.what());
  }
}

}  // namespace detail

// Evenly spaced prevalences over [0.05, 0.95]; the stock biased profile.
inline std::vector<double> default_prevalences(std::size_t num_attributes) {
  std::vector<double> p(num_attributes);
  if (num_attributes == 1) {
    p[0] = 0.5;
    return p;
  }
  for (std::size_t i = 0; i < num_attributes; ++i)
    p[i] = 0.05 + 0.9 * static_cast<double>(i) / static_cast<double>(num_attributes - 1);
  return p;
}

inline GeneratorConfig parse_generator_config(const nlohmann::json& obj, bool allow_seed) {
  if (!obj.is_object()) throw config_error("generator: expected a JSON object");
  detail::reject_unknown_keys(obj,
                              {"latent_dim", "feature_dim", "attributes", "prevalences",
                               "label_noise", "feature_noise_sigma", "seed"},
                              "generator");
  if (!allow_seed && obj.contains("seed"))
    throw config_error("generator: \"seed\" is driven by the experiment seeds list");
  GeneratorConfig config;
  config.latent_dim = detail::json_get<std::size_t>(obj, "latent_dim", config.latent_dim);
  config.feature_dim = detail::json_get<std::size_t>(obj, "feature_dim", config.feature_dim);
  config.num_attributes = detail::json_get<std::size_t>(obj, "attributes", config.num_attributes);
  config.label_noise = detail::json_get<double>(obj, "label_noise", config.label_noise);
  config.feature_noise_sigma =
      detail::json_get<double>(obj, "feature_noise_sigma", config.feature_noise_sigma);
  config.seed = detail::json_get<std::uint64_t>(obj, "seed", config.seed);
  if (obj.contains("prevalences")) {
    config.prevalences = detail::json_get<std::vector<double>>(obj, "prevalences", {});
  } else {
    config.prevalences = default_prevalences(config.num_attributes);
  }
  config.validate();
  return config;
}

// Keys only meaningful for a standalone `train` run, not inside `compare`.
inline TrainConfig parse_train_config(const nlohmann::json& obj, bool allow_run_keys) {
  if (!obj.is_object()) throw config_error("train config: expected a JSON object");
  detail::reject_unknown_keys(obj,
                              {"batch_size", "max_epochs", "seed", "objective", "selection_metric",
                               "hidden_dims", "activation", "optimizer", "mode", "val_fraction"},
                              "train config");
  if (!allow_run_keys)
    for (const char* key : {"seed", "mode", "val_fraction"})
      if (obj.contains(key))
        throw config_error(std::string("train config: \"") + key +
                           "\" is driven by the experiment config");
  TrainConfig config;
  config.batch_size = detail::json_get<std::size_t>(obj, "batch_size", config.batch_size);
  config.max_epochs = detail::json_get<std::size_t>(obj, "max_epochs", config.max_epochs);
  config.seed = detail::json_get<std::uint64_t>(obj, "seed", config.seed);
  if (obj.contains("objective"))
    config.objective = objective_from_string(obj.at("objective").get<std::string>());
  if (obj.contains("selection_metric"))
    config.selection_metric =
        selection_metric_from_string(obj.at("selection_metric").get<std::string>());
  config.hidden_dims =
      detail::json_get<std::vector<std::size_t>>(obj, "hidden_dims", config.hidden_dims);
  if (obj.contains("activation"))
    config.activation = activation_from_string(obj.at("activation").get<std::string>());
  if (obj.contains("optimizer")) {
    const auto& opt = obj.at("optimizer");
    if (!opt.is_object()) throw config_error("optimizer: expected a JSON object");
    detail::reject_unknown_keys(
        opt, {"rho", "epsilon", "base_lr", "decay_gamma", "decay_power"}, "optimizer");
    config.optimizer.rho = detail::json_get<double>(opt, "rho", config.optimizer.rho);
    config.optimizer.epsilon = detail::json_get<double>(opt, "epsilon", config.optimizer.epsilon);
    config.optimizer.base_lr = detail::json_get<double>(opt, "base_lr", config.optimizer.base_lr);
    config.optimizer.decay_gamma =
        detail::json_get<double>(opt, "decay_gamma", config.optimizer.decay_gamma);
    config.optimizer.decay_power =
        detail::json_get<double>(opt, "decay_power", config.optimizer.decay_power);
  }
  return config;
}

enum class Arm { MoonBalanced, MoonUnbalanced, Separate, HingeSeparate };

inline std::string to_string(Arm arm) {
  switch (arm) {
    case Arm::MoonBalanced: return "moon-balanced";
    case Arm::MoonUnbalanced: return "moon-unbalanced";
    case Arm::Separate: return "separate";
    default: return "hinge-separate";
  }
}

inline Arm arm_from_string(const std::string& s) {
  if (s == "moon-balanced") return Arm::MoonBalanced;
  if (s == "moon-unbalanced") return Arm::MoonUnbalanced;
  if (s == "separate") return Arm::Separate;
  if (s == "hinge-separate") return Arm::HingeSeparate;
  throw config_error("unknown arm \"" + s + "\"");
}

// A controlled multi-seed comparison: per seed one shared dataset, a
// train/validation/test split, and one training run per arm.
struct ExperimentConfig {
  GeneratorConfig generator;
  std::size_t n_total = 10000;
  SplitFractions split_fractions;
  TrainConfig train;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::vector<Arm> arms = {Arm::MoonBalanced, Arm::MoonUnbalanced, Arm::Separate};
  std::optional<std::filesystem::path> out_dir;
};

inline ExperimentConfig parse_experiment_config(const nlohmann::json& doc) {
  if (!doc.is_object()) throw config_error("experiment config: expected a JSON object");
  detail::reject_unknown_keys(doc, {"generator", "n", "split", "seeds", "arms", "train", "out_dir"},
                              "experiment config");
  ExperimentConfig config;
  if (doc.contains("generator"))
    config.generator = parse_generator_config(doc.at("generator"), /*allow_seed=*/false);
  else
    config.generator.prevalences = default_prevalences(config.generator.num_attributes);
  config.n_total = detail::json_get<std::size_t>(doc, "n", config.n_total);
  if (doc.contains("split")) {
    const auto f = detail::json_get<std::vector<double>>(doc, "split", {});
    if (f.size() != 3) throw config_error("split: expected [train, validation, test]");
    config.split_fractions = {f[0], f[1], f[2]};
  }
  if (doc.contains("seeds")) {
    config.seeds = detail::json_get<std::vector<std::uint64_t>>(doc, "seeds", {});
    if (config.seeds.empty()) throw config_error("seeds: need at least one seed");
  }
  if (doc.contains("arms")) {
    config.arms.clear();
    for (const auto& a : doc.at("arms")) config.arms.push_back(arm_from_string(a.get<std::string>()));
    if (config.arms.empty()) throw config_error("arms: need at least one arm");
  }
  if (doc.contains("train")) config.train = parse_train_config(doc.at("train"), /*allow_run_keys=*/false);
  if (doc.contains("out_dir")) config.out_dir = doc.at("out_dir").get<std::string>();
  return config;
}

struct ArmRun {
  std::uint64_t seed = 0;
  Arm arm = Arm::MoonBalanced;
  double average_error = 0.0;    // plain classification error on the test set
  double balanced_error = 0.0;   // balanced error against the uniform target
  std::size_t parameter_count = 0;
};

struct ArmSummary {
  Arm arm = Arm::MoonBalanced;
  double mean_average_error = 0.0;
  double stddev_average_error = 0.0;
  double mean_balanced_error = 0.0;
  double stddev_balanced_error = 0.0;
  std::size_t parameter_count = 0;
};

struct CompareResult {
  std::vector<ArmRun> runs;        // seed-major, arm order within each seed
  std::vector<ArmSummary> arms;
};

namespace detail {

inline std::pair<double, double> mean_stddev(const std::vector<double>& values) {
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  if (values.size() < 2) return {mean, 0.0};
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / static_cast<double>(values.size() - 1))};
}

inline unsigned compare_thread_cap() {
  const char* env = std::getenv("MOONLITE_THREADS");
  if (env == nullptr || *env == '\0') return 1;
  char* end = nullptr;
  const long v = std::strtol(env, &end, 10);
  if (end == nullptr || *end != '\0' || v < 1)
    throw config_error("MOONLITE_THREADS: expected a positive integer, got \"" +
                       std::string(env) + "\"");
  return static_cast<unsigned>(v);
}

struct ArmJobOutput {
  ArmRun run;
  MetricsReport report;
  nlohmann::json manifest;
  std::vector<MlpModel> models;                 // one entry for joint arms
  std::vector<TrainHistory> histories;
};

inline ArmJobOutput run_arm(const ExperimentConfig& config, std::uint64_t seed, Arm arm,
                            const DatasetSplit& data, const std::string& dataset_hash) {
  TrainConfig train_config = config.train;
  train_config.seed = derive_seed(seed, 300);  // same init/shuffle for every arm
  const std::size_t m = data.train.num_attributes();
  if (arm == Arm::MoonBalanced) train_config.target = ClassDistribution::uniform(m);
  if (arm == Arm::HingeSeparate) train_config.objective = Objective::HingeSeparate;

  ArmJobOutput out;
  const ClassDistribution report_target = ClassDistribution::uniform(m);
  nlohmann::json weights_json;
  if (arm == Arm::MoonBalanced || arm == Arm::MoonUnbalanced) {
    TrainResult result = train_moon(train_config, data.train, data.validation);
    out.report = evaluate(result.model, data.test, report_target, /*skip_degenerate=*/true);
    out.run.parameter_count = result.model.parameter_count();
    weights_json = {{"p_pos", result.weights.p_pos}, {"p_neg", result.weights.p_neg}};
    out.histories.push_back(std::move(result.history));
    out.models.push_back(std::move(result.model));
  } else {
    SeparateResult result = train_separate(train_config, data.train, data.validation);
    std::vector<MlpModel> models;
    models.reserve(result.per_attribute.size());
    for (TrainResult& r : result.per_attribute) {
      out.run.parameter_count += r.model.parameter_count();
      out.histories.push_back(std::move(r.history));
      models.push_back(std::move(r.model));
    }
    out.report = evaluate(models, data.test, report_target, /*skip_degenerate=*/true);
    out.models = std::move(models);
  }
  out.run.seed = seed;
  out.run.arm = arm;
  out.run.average_error = out.report.average_error;
  out.run.balanced_error = out.report.average_balanced_error;
  out.manifest = {{"arm", to_string(arm)},
                  {"seed", seed},
                  {"dataset_hash", dataset_hash},
                  {"train_seed", train_config.seed},
                  {"objective", to_string(train_config.objective)},
                  {"target", arm == Arm::MoonBalanced ? "balanced" : "source"},
                  {"parameter_count", out.run.parameter_count},
                  {"average_error", out.run.average_error},
                  {"balanced_error", out.run.balanced_error}};
  if (!weights_json.is_null()) out.manifest["adaptation_weights"] = weights_json;
  return out;
}

inline void write_arm_outputs(const std::filesystem::path& arm_dir, const ArmJobOutput& out) {
  std::filesystem::create_directories(arm_dir);
  write_report(out.report, arm_dir / "report.csv", arm_dir / "report.json");
  write_file_atomic(arm_dir / "manifest.json", out.manifest.dump(2) + "\n");
  if (out.models.size() == 1) {
    save_model(out.models[0], arm_dir / "model.ckpt");
    write_history_csv(out.histories[0], arm_dir / "history.csv");
  } else {
    for (std::size_t i = 0; i < out.models.size(); ++i) {
      char suffix[16];
      std::snprintf(suffix, sizeof suffix, "%03zu", i);
      save_model(out.models[i], arm_dir / ("model_" + std::string(suffix) + ".ckpt"));
      write_history_csv(out.histories[i], arm_dir / ("history_" + std::string(suffix) + ".csv"));
    }
  }
}

}  // namespace detail

inline std::string comparison_to_csv(const CompareResult& result) {
  std::string out =
      "arm,seeds,mean_average_error,stddev_average_error,mean_balanced_error,"
      "stddev_balanced_error,parameters\n";
  for (const ArmSummary& s : result.arms) {
    std::size_t seeds = 0;
    for (const ArmRun& r : result.runs)
      if (r.arm == s.arm) ++seeds;
    out += to_string(s.arm) + "," + std::to_string(seeds) + "," +
           format_double(s.mean_average_error) + "," + format_double(s.stddev_average_error) +
           "," + format_double(s.mean_balanced_error) + "," +
           format_double(s.stddev_balanced_error) + "," + std::to_string(s.parameter_count) + "\n";
  }
  return out;
}

inline std::string per_seed_to_csv(const CompareResult& result) {
  std::string out = "seed,arm,average_error,balanced_error\n";
  for (const ArmRun& r : result.runs)
    out += std::to_string(r.seed) + "," + to_string(r.arm) + "," +
           format_double(r.average_error) + "," + format_double(r.balanced_error) + "\n";
  return out;
}

// Runs every (seed, arm) cell of the experiment. Arms of different seeds are
// independent; up to MOONLITE_THREADS of them run concurrently, each writing
// only inside its own subdirectory. Output files are byte-stable across runs.
inline CompareResult run_compare(const ExperimentConfig& config,
                                 const std::optional<std::filesystem::path>& out_override = {}) {
  const std::optional<std::filesystem::path> out_dir =
      out_override ? out_override : config.out_dir;

  // Stage 1: one dataset per seed, generated and split up front.
  std::vector<DatasetSplit> splits;
  std::vector<std::string> hashes;
  splits.reserve(config.seeds.size());
  for (std::uint64_t seed : config.seeds) {
    GeneratorConfig gen = config.generator;
    gen.seed = seed;
    AttributeDataset full = generate(gen, config.n_total);
    std::string hash;
    if (out_dir) {
      const std::filesystem::path seed_dir = *out_dir / ("seed" + std::to_string(seed));
      std::filesystem::create_directories(seed_dir);
      write_dataset(full, seed_dir / "data");
      hash = hash_files_hex({features_path(seed_dir / "data"), labels_path(seed_dir / "data")});
      nlohmann::json manifest{{"seed", seed},
                              {"n", config.n_total},
                              {"latent_dim", gen.latent_dim},
                              {"feature_dim", gen.feature_dim},
                              {"attributes", gen.num_attributes},
                              {"prevalences", gen.prevalences},
                              {"label_noise", gen.label_noise},
                              {"feature_noise_sigma", gen.feature_noise_sigma},
                              {"dataset_hash", hash}};
      write_file_atomic(seed_dir / "data.manifest.json", manifest.dump(2) + "\n");
    }
    splits.push_back(split(full, config.split_fractions, seed));
    hashes.push_back(hash);
  }

  // Stage 2: independent (seed, arm) jobs.
  struct Job {
    std::size_t seed_index;
    std::size_t arm_index;
  };
  std::vector<Job> jobs;
  for (std::size_t s = 0; s < config.seeds.size(); ++s)
    for (std::size_t a = 0; a < config.arms.size(); ++a) jobs.push_back({s, a});
  std::vector<detail::ArmJobOutput> outputs(jobs.size());
  std::vector<std::exception_ptr> failures(jobs.size());

  const auto run_job = [&](std::size_t j) {
    try {
      const Job& job = jobs[j];
      outputs[j] = detail::run_arm(config, config.seeds[job.seed_index],
                                   config.arms[job.arm_index], splits[job.seed_index],
                                   hashes[job.seed_index]);
      if (out_dir) {
        const std::filesystem::path arm_dir = *out_dir /
                                              ("seed" + std::to_string(config.seeds[job.seed_index])) /
                                              to_string(config.arms[job.arm_index]);
        detail::write_arm_outputs(arm_dir, outputs[j]);
      }
    } catch (...) {
      failures[j] = std::current_exception();
    }
  };

  const unsigned threads =
      std::min<unsigned>(detail::compare_thread_cap(), static_cast<unsigned>(jobs.size()));
  if (threads <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run_job(j);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t)
      pool.emplace_back([&] {
        for (std::size_t j = next.fetch_add(1); j < jobs.size(); j = next.fetch_add(1)) run_job(j);
      });
    for (std::thread& t : pool) t.join();
  }
  for (const std::exception_ptr& failure : failures)
    if (failure) std::rethrow_exception(failure);

  // Stage 3: deterministic aggregation in (seed, arm) order.
  CompareResult result;
  for (const detail::ArmJobOutput& out : outputs) result.runs.push_back(out.run);
  for (Arm arm : config.arms) {
    std::vector<double> avg, bal;
    std::size_t params = 0;
    for (const ArmRun& r : result.runs)
      if (r.arm == arm) {
        avg.push_back(r.average_error);
        bal.push_back(r.balanced_error);
        params = r.parameter_count;
      }
    ArmSummary summary;
    summary.arm = arm;
    std::tie(summary.mean_average_error, summary.stddev_average_error) =
        detail::mean_stddev(avg);
    std::tie(summary.mean_balanced_error, summary.stddev_balanced_error) =
        detail::mean_stddev(bal);
    summary.parameter_count = params;
    result.arms.push_back(summary);
  }
  if (out_dir) {
    write_file_atomic(*out_dir / "comparison.csv", comparison_to_csv(result));
    write_file_atomic(*out_dir / "per_seed.csv", per_seed_to_csv(result));
  }
  return result;
}

}  // namespace moonlite
