// moonlite: synthetic multi-attribute data, domain-adapted multi-label
// training, and balanced-error evaluation from one binary.
//
// Subcommands: gen-data, train, eval, weights, compare.
// Exit codes: 0 ok, 2 configuration error, 3 data-format error,
// 4 numeric abort. stdout carries machine-readable summaries only;
// diagnostics go to stderr.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "moonlite/moonlite.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json parse_json_file(const fs::path& path, const char* what) {
  try {
    return json::parse(moonlite::slurp_file(path));
  } catch (const moonlite::format_error& e) {
    throw moonlite::config_error(std::string(what) + ": " + e.what());
  } catch (const json::exception& e) {
    throw moonlite::config_error(std::string(what) + " " + path.string() + ": " + e.what());
  }
}

std::vector<double> parse_double_list(const std::string& text, const char* flag) {
  std::vector<double> values;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = text.find(',', start);
    const std::string tok = text.substr(start, comma - start);
    try {
      std::size_t used = 0;
      values.push_back(std::stod(tok, &used));
      if (used != tok.size()) throw std::invalid_argument(tok);
    } catch (const std::exception&) {
      throw moonlite::config_error(std::string(flag) + ": cannot parse \"" + tok +
                                   "\" as a number");
    }
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return values;
}

struct TargetSpec {
  std::string raw = "source";  // "source", "balanced", or a JSON file path
};

// Resolves a --target flag against a dataset's source distribution.
moonlite::ClassDistribution resolve_target(const TargetSpec& spec,
                                           const std::vector<std::string>& names,
                                           const moonlite::ClassDistribution& source) {
  if (spec.raw == "source") return source;
  if (spec.raw == "balanced") return moonlite::ClassDistribution::uniform(source.size());
  return moonlite::read_target_distribution(fs::path(spec.raw), names, source);
}

json target_json(const TargetSpec& spec, const moonlite::ClassDistribution& resolved) {
  return json{{"kind", spec.raw == "source" || spec.raw == "balanced" ? spec.raw : "file"},
              {"spec", spec.raw},
              {"positive", resolved.positive_mass()}};
}

std::string dataset_hash(const fs::path& stem) {
  return moonlite::hash_files_hex({moonlite::features_path(stem), moonlite::labels_path(stem)});
}

// ---------------------------------------------------------------- gen-data

struct GenDataArgs {
  std::size_t latent_dim = 8;
  std::size_t feature_dim = 16;
  std::size_t attributes = 10;
  std::string prevalence_list;
  std::string prevalence_file;
  double label_noise = 0.05;
  double feature_noise = 1.0;
  std::size_t n = 0;
  std::uint64_t seed = 0;
  std::string out;
};

int cmd_gen_data(const GenDataArgs& args) {
  moonlite::GeneratorConfig config;
  config.latent_dim = args.latent_dim;
  config.feature_dim = args.feature_dim;
  config.num_attributes = args.attributes;
  config.label_noise = args.label_noise;
  config.feature_noise_sigma = args.feature_noise;
  config.seed = args.seed;
  if (!args.prevalence_list.empty() && !args.prevalence_file.empty())
    throw moonlite::config_error("--prevalence and --prevalence-file are mutually exclusive");
  if (!args.prevalence_list.empty()) {
    config.prevalences = parse_double_list(args.prevalence_list, "--prevalence");
  } else if (!args.prevalence_file.empty()) {
    const json doc = parse_json_file(args.prevalence_file, "--prevalence-file");
    if (!doc.is_array())
      throw moonlite::config_error("--prevalence-file: expected a JSON array of numbers");
    config.prevalences = doc.get<std::vector<double>>();
  } else {
    config.prevalences = moonlite::default_prevalences(config.num_attributes);
  }
  if (config.prevalences.size() != config.num_attributes)
    throw moonlite::config_error("--attributes is " + std::to_string(config.num_attributes) +
                                 " but --prevalence lists " +
                                 std::to_string(config.prevalences.size()) + " values");
  config.validate();
  if (args.n == 0) throw moonlite::config_error("--n must be positive");

  const moonlite::AttributeDataset dataset = moonlite::generate(config, args.n);
  const fs::path stem(args.out);
  moonlite::write_dataset(dataset, stem);
  const std::string hash = dataset_hash(stem);
  json manifest{{"command", "gen-data"},
                {"n", args.n},
                {"latent_dim", config.latent_dim},
                {"feature_dim", config.feature_dim},
                {"attributes", config.num_attributes},
                {"prevalences", config.prevalences},
                {"label_noise", config.label_noise},
                {"feature_noise_sigma", config.feature_noise_sigma},
                {"seed", config.seed},
                {"attribute_names", dataset.attribute_names},
                {"files",
                 {{"features", moonlite::features_path(stem).string()},
                  {"labels", moonlite::labels_path(stem).string()}}},
                {"dataset_hash", hash}};
  moonlite::write_file_atomic(fs::path(args.out + ".manifest.json"), manifest.dump(2) + "\n");
  std::cout << json{{"command", "gen-data"}, {"out", args.out}, {"n", args.n},
                    {"dataset_hash", hash}}
                   .dump()
            << "\n";
  return 0;
}

// -------------------------------------------------------------------- train

struct TrainArgs {
  std::string data;
  std::string val;
  std::string config_path;
  std::string out;
  TargetSpec target;
};

struct LoadedTrainConfig {
  moonlite::TrainConfig config;
  std::string mode = "joint";
  double val_fraction = 0.1;
};

LoadedTrainConfig load_train_config(const fs::path& path) {
  const json doc = parse_json_file(path, "--config");
  LoadedTrainConfig loaded;
  loaded.config = moonlite::parse_train_config(doc, /*allow_run_keys=*/true);
  if (doc.contains("mode")) {
    loaded.mode = doc.at("mode").get<std::string>();
    if (loaded.mode != "joint" && loaded.mode != "separate")
      throw moonlite::config_error("mode: expected \"joint\" or \"separate\"");
  } else if (loaded.config.objective == moonlite::Objective::HingeSeparate) {
    loaded.mode = "separate";
  }
  if (loaded.config.objective == moonlite::Objective::HingeSeparate && loaded.mode == "joint")
    throw moonlite::config_error("objective hinge-separate requires mode \"separate\"");
  if (doc.contains("val_fraction")) {
    loaded.val_fraction = doc.at("val_fraction").get<double>();
    if (!(loaded.val_fraction > 0.0 && loaded.val_fraction < 1.0))
      throw moonlite::config_error("val_fraction: expected a value in (0,1)");
  }
  return loaded;
}

json optimizer_json(const moonlite::RmsPropConfig& opt) {
  return json{{"rho", opt.rho},
              {"epsilon", opt.epsilon},
              {"base_lr", opt.base_lr},
              {"decay_gamma", opt.decay_gamma},
              {"decay_power", opt.decay_power}};
}

// Deterministic train/validation carve used when no --val dataset is given.
std::pair<moonlite::AttributeDataset, moonlite::AttributeDataset> carve_validation(
    const moonlite::AttributeDataset& data, double val_fraction, std::uint64_t seed) {
  const std::size_t n = data.size();
  const auto n_val = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(n)));
  if (n_val == 0 || n_val >= n)
    throw moonlite::config_error("val_fraction " + moonlite::format_double(val_fraction) +
                                 " leaves no usable split at n=" + std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  moonlite::Rng rng = moonlite::make_rng(moonlite::derive_seed(seed, 3));
  moonlite::shuffle(order, rng);
  const auto take = [&](std::size_t begin, std::size_t count) {
    moonlite::AttributeDataset part;
    std::span<const std::size_t> idx(order.data() + begin, count);
    part.features = moonlite::gather_rows(data.features, idx);
    part.labels = moonlite::gather_rows(data.labels, idx);
    part.attribute_names = data.attribute_names;
    return part;
  };
  return {take(0, n - n_val), take(n - n_val, n_val)};
}

int cmd_train(const TrainArgs& args) {
  const LoadedTrainConfig loaded = load_train_config(args.config_path);
  moonlite::TrainConfig config = loaded.config;

  const moonlite::AttributeDataset full = moonlite::read_dataset(args.data);
  moonlite::AttributeDataset train_set, val_set;
  if (!args.val.empty()) {
    train_set = full;
    val_set = moonlite::read_dataset(args.val);
  } else {
    std::tie(train_set, val_set) = carve_validation(full, loaded.val_fraction, config.seed);
  }

  const moonlite::ClassDistribution source = moonlite::estimate_source(train_set.labels);
  const moonlite::ClassDistribution target =
      resolve_target(args.target, train_set.attribute_names, source);
  if (args.target.raw != "source") config.target = target;

  const fs::path out_dir(args.out);
  fs::create_directories(out_dir);
  json manifest{{"command", "train"},
                {"mode", loaded.mode},
                {"data", args.data},
                {"val", args.val.empty() ? json(nullptr) : json(args.val)},
                {"dataset_hash", dataset_hash(fs::path(args.data))},
                {"attributes", train_set.attribute_names},
                {"target", target_json(args.target, target)},
                {"source", {{"positive", source.positive_mass()}}},
                {"config",
                 {{"batch_size", config.batch_size},
                  {"max_epochs", config.max_epochs},
                  {"seed", config.seed},
                  {"objective", moonlite::to_string(config.objective)},
                  {"selection_metric", moonlite::to_string(config.selection_metric)},
                  {"hidden_dims", config.hidden_dims},
                  {"activation", moonlite::to_string(config.activation)},
                  {"optimizer", optimizer_json(config.optimizer)},
                  {"val_fraction", loaded.val_fraction}}}};

  json summary{{"command", "train"}, {"mode", loaded.mode}, {"out", args.out}};
  if (loaded.mode == "joint") {
    const moonlite::TrainResult result = moonlite::train_moon(config, train_set, val_set);
    moonlite::save_model(result.model, out_dir / "model.ckpt");
    moonlite::write_history_csv(result.history, out_dir / "history.csv");
    const auto& best = result.history.epochs[result.history.selected_epoch];
    manifest["adaptation_weights"] = {{"p_pos", result.weights.p_pos},
                                      {"p_neg", result.weights.p_neg}};
    manifest["selected_epoch"] = result.history.selected_epoch;
    manifest["val_average_error"] = best.val_average_error;
    manifest["val_balanced_error"] = best.val_balanced_error;
    manifest["parameter_count"] = result.model.parameter_count();
    summary["selected_epoch"] = result.history.selected_epoch;
    summary["val_average_error"] = best.val_average_error;
  } else {
    const moonlite::SeparateResult result = moonlite::train_separate(config, train_set, val_set);
    std::vector<double> p_pos, p_neg, val_avg;
    json selected = json::array();
    std::size_t params = 0;
    for (std::size_t i = 0; i < result.per_attribute.size(); ++i) {
      const moonlite::TrainResult& r = result.per_attribute[i];
      char suffix[16];
      std::snprintf(suffix, sizeof suffix, "%03zu", i);
      moonlite::save_model(r.model, out_dir / ("model_" + std::string(suffix) + ".ckpt"));
      moonlite::write_history_csv(r.history, out_dir / ("history_" + std::string(suffix) + ".csv"));
      p_pos.push_back(r.weights.p_pos[0]);
      p_neg.push_back(r.weights.p_neg[0]);
      selected.push_back(r.history.selected_epoch);
      val_avg.push_back(r.history.epochs[r.history.selected_epoch].val_average_error);
      params += r.model.parameter_count();
    }
    manifest["adaptation_weights"] = {{"p_pos", p_pos}, {"p_neg", p_neg}};
    manifest["selected_epochs"] = selected;
    manifest["val_average_errors"] = val_avg;
    manifest["parameter_count"] = params;
    summary["models"] = result.per_attribute.size();
  }
  moonlite::write_file_atomic(out_dir / "manifest.json", manifest.dump(2) + "\n");
  std::cout << summary.dump() << "\n";
  return 0;
}

// --------------------------------------------------------------------- eval

struct EvalArgs {
  std::vector<std::string> models;
  std::string data;
  TargetSpec target;
  std::string out;
  bool skip_degenerate = false;
};

std::vector<fs::path> resolve_model_paths(const std::vector<std::string>& args) {
  std::vector<fs::path> paths;
  if (args.size() == 1 && fs::is_directory(args[0])) {
    for (const auto& entry : fs::directory_iterator(args[0])) {
      const std::string name = entry.path().filename().string();
      if (name.starts_with("model") && name.ends_with(".ckpt")) paths.push_back(entry.path());
    }
    std::sort(paths.begin(), paths.end());
    if (paths.empty())
      throw moonlite::config_error("--model: no model*.ckpt files in " + args[0]);
  } else {
    for (const std::string& a : args) paths.emplace_back(a);
  }
  return paths;
}

int cmd_eval(const EvalArgs& args) {
  const moonlite::AttributeDataset data = moonlite::read_dataset(args.data);
  const moonlite::ClassDistribution source = moonlite::estimate_source(data.labels);
  const moonlite::ClassDistribution target =
      resolve_target(args.target, data.attribute_names, source);

  const std::vector<fs::path> paths = resolve_model_paths(args.models);
  moonlite::MetricsReport report;
  if (paths.size() == 1) {
    const moonlite::MlpModel model = moonlite::load_model(paths[0]);
    report = moonlite::evaluate(model, data, target, args.skip_degenerate);
  } else {
    std::vector<moonlite::MlpModel> models;
    models.reserve(paths.size());
    for (const fs::path& p : paths) models.push_back(moonlite::load_model(p));
    report = moonlite::evaluate(models, data, target, args.skip_degenerate);
  }
  const fs::path stem(args.out);
  moonlite::write_report(report, fs::path(args.out + ".report.csv"),
                         fs::path(args.out + ".report.json"));
  std::cout << json{{"command", "eval"},
                    {"average_error", report.average_error},
                    {"average_balanced_error", report.average_balanced_error},
                    {"out", args.out}}
                   .dump()
            << "\n";
  return 0;
}

// ------------------------------------------------------------------ weights

struct WeightsArgs {
  std::string data;
  TargetSpec target;
};

int cmd_weights(const WeightsArgs& args) {
  const moonlite::AttributeDataset data = moonlite::read_dataset(args.data);
  const moonlite::ClassDistribution source = moonlite::estimate_source(data.labels);
  const moonlite::ClassDistribution target =
      resolve_target(args.target, data.attribute_names, source);
  const moonlite::AdaptationWeights weights = moonlite::adaptation_weights(source, target);
  std::string out =
      "attribute,source_positive,source_negative,target_positive,target_negative,p_pos,p_neg\n";
  for (std::size_t i = 0; i < source.size(); ++i) {
    out += data.attribute_names[i] + "," + moonlite::format_double(source.positive(i)) + "," +
           moonlite::format_double(source.negative(i)) + "," +
           moonlite::format_double(target.positive(i)) + "," +
           moonlite::format_double(target.negative(i)) + "," +
           moonlite::format_double(weights.p_pos[i]) + "," +
           moonlite::format_double(weights.p_neg[i]) + "\n";
  }
  std::cout << out;
  return 0;
}

// ------------------------------------------------------------------ compare

struct CompareArgs {
  std::string config_path;
  std::string out;
  std::string arms;
};

int cmd_compare(const CompareArgs& args) {
  const json doc = parse_json_file(args.config_path, "--config");
  moonlite::ExperimentConfig config = moonlite::parse_experiment_config(doc);
  if (!args.arms.empty()) {
    config.arms.clear();
    std::size_t start = 0;
    const std::string& text = args.arms;
    while (start <= text.size()) {
      const std::size_t comma = text.find(',', start);
      config.arms.push_back(moonlite::arm_from_string(text.substr(start, comma - start)));
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
  }
  std::optional<fs::path> out_dir;
  if (!args.out.empty())
    out_dir = fs::path(args.out);
  else if (config.out_dir)
    out_dir = config.out_dir;
  else
    throw moonlite::config_error("compare: no output directory (--out or config out_dir)");
  const moonlite::CompareResult result = moonlite::run_compare(config, out_dir);
  std::cout << moonlite::comparison_to_csv(result);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic multi-attribute training and balanced evaluation"};
  app.require_subcommand(1);

  GenDataArgs gen_args;
  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic attribute dataset");
  gen->add_option("--latent-dim", gen_args.latent_dim, "latent dimension k");
  gen->add_option("--features", gen_args.feature_dim, "feature dimension d");
  gen->add_option("--attributes", gen_args.attributes, "number of attributes M");
  gen->add_option("--prevalence", gen_args.prevalence_list,
                  "comma-separated positive rates, one per attribute");
  gen->add_option("--prevalence-file", gen_args.prevalence_file,
                  "JSON array of positive rates");
  gen->add_option("--label-noise", gen_args.label_noise, "label flip probability");
  gen->add_option("--feature-noise", gen_args.feature_noise, "feature noise sigma");
  gen->add_option("--n", gen_args.n, "number of samples")->required();
  gen->add_option("--seed", gen_args.seed, "generator seed");
  gen->add_option("--out", gen_args.out, "output stem (writes <out>.features etc.)")->required();

  TrainArgs train_args;
  CLI::App* train = app.add_subcommand("train", "train a joint or per-attribute model");
  train->add_option("--data", train_args.data, "training dataset stem")->required();
  train->add_option("--val", train_args.val, "validation dataset stem");
  train->add_option("--config", train_args.config_path, "training config JSON")->required();
  train->add_option("--out", train_args.out, "output directory")->required();
  train->add_option("--target", train_args.target.raw,
                    "\"source\", \"balanced\", or a target-distribution JSON file");

  EvalArgs eval_args;
  CLI::App* eval = app.add_subcommand("eval", "evaluate checkpoints on a dataset");
  eval->add_option("--model", eval_args.models, "checkpoint path(s) or a directory")->required();
  eval->add_option("--data", eval_args.data, "dataset stem")->required();
  eval->add_option("--target", eval_args.target.raw, "target for the balanced error")->required();
  eval->add_option("--out", eval_args.out, "report stem")->required();
  eval->add_flag("--skip-degenerate", eval_args.skip_degenerate,
                 "skip single-class attributes instead of failing");

  WeightsArgs weights_args;
  CLI::App* weights = app.add_subcommand("weights", "print the adaptation-weight table");
  weights->add_option("--data", weights_args.data, "dataset stem")->required();
  weights->add_option("--target", weights_args.target.raw, "target distribution")->required();

  CompareArgs compare_args;
  CLI::App* compare = app.add_subcommand("compare", "run the multi-seed arm comparison");
  compare->add_option("--config", compare_args.config_path, "experiment config JSON")->required();
  compare->add_option("--out", compare_args.out, "output directory (overrides config)");
  compare->add_option("--arms", compare_args.arms, "comma-separated subset of arms");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);
    app.exit(e);
    return 2;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_args);
    if (train->parsed()) return cmd_train(train_args);
    if (eval->parsed()) return cmd_eval(eval_args);
    if (weights->parsed()) return cmd_weights(weights_args);
    if (compare->parsed()) return cmd_compare(compare_args);
  } catch (const moonlite::config_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const moonlite::format_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const moonlite::numeric_error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const moonlite::error& e) {
    // shape/value/degenerate problems all stem from the data on disk
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
