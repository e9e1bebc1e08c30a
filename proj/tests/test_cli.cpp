// End-to-end tests of the moonlite binary. MOONLITE_BIN points at the built
// executable (set by CTest); every test drives the real CLI through a shell.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "moonlite/distribution.hpp"
#include "moonlite/synthdata.hpp"
#include "support/helpers.hpp"

using namespace moonlite;
using json = nlohmann::json;
using testsupport::TempDir;
using testsupport::read_file;
using testsupport::run_cli;

namespace {

std::string js(const json& j) { return j.dump(); }

void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p);
  out << text;
}

const std::string kFastTrainConfig = js(json{{"batch_size", 32},
                                             {"max_epochs", 4},
                                             {"seed", 5},
                                             {"objective", "moon-weighted"},
                                             {"hidden_dims", {8}},
                                             {"optimizer", {{"base_lr", 0.005}}}});

std::vector<std::string> gen_args(const std::filesystem::path& stem, const std::string& prev,
                                  int attrs, int n, int seed = 1) {
  return {"gen-data",        "--latent-dim",        "2",
          "--features",      "4",
          "--attributes",    std::to_string(attrs),
          "--prevalence",    prev,
          "--label-noise",   "0",
          "--feature-noise", "0.25",
          "--n",             std::to_string(n),
          "--seed",          std::to_string(seed),
          "--out",           stem.string()};
}

}  // namespace

TEST_CASE("cli requires a known subcommand and flags") {
  REQUIRE_FALSE(testsupport::cli_binary().empty());
  CHECK(run_cli({"definitely-not-a-command"}).exit_code == 2);
  CHECK(run_cli({"train", "--config", "x.json", "--out", "o"}).exit_code == 2);  // missing --data
  CHECK(run_cli({"gen-data", "--n", "10", "--out", "x", "--bogus", "1"}).exit_code == 2);
}

TEST_CASE("gen-data writes dataset, manifest, and is idempotent") {
  TempDir dir("cli_gen");
  const auto stem = dir.path() / "toy";
  const auto result = run_cli(gen_args(stem, "0.3,0.7", 2, 500));
  REQUIRE(result.exit_code == 0);
  const json summary = json::parse(result.out);
  CHECK(summary.at("command") == "gen-data");

  REQUIRE(std::filesystem::exists(features_path(stem)));
  REQUIRE(std::filesystem::exists(labels_path(stem)));
  const json manifest = json::parse(read_file(dir.path() / "toy.manifest.json"));
  CHECK(manifest.at("attributes") == 2);
  CHECK(manifest.at("prevalences").size() == 2);

  // Byte-identical on a second run with the same flags.
  const std::string features_first = read_file(features_path(stem));
  const std::string labels_first = read_file(labels_path(stem));
  const std::string manifest_first = read_file(dir.path() / "toy.manifest.json");
  REQUIRE(run_cli(gen_args(stem, "0.3,0.7", 2, 500)).exit_code == 0);
  CHECK(read_file(features_path(stem)) == features_first);
  CHECK(read_file(labels_path(stem)) == labels_first);
  CHECK(read_file(dir.path() / "toy.manifest.json") == manifest_first);

  // Manifest prevalences agree with the emitted labels within 3 standard errors.
  const AttributeDataset ds = read_dataset(stem);
  const ClassDistribution source = estimate_source(ds.labels);
  for (std::size_t i = 0; i < 2; ++i) {
    const double p = manifest.at("prevalences")[i].get<double>();
    CHECK(std::fabs(source.positive(i) - p) <= 3.0 * std::sqrt(p * (1 - p) / 500.0));
  }
}

TEST_CASE("gen-data arity and config errors exit with code 2") {
  TempDir dir("cli_gen_bad");
  const auto stem = dir.path() / "x";
  CHECK(run_cli(gen_args(stem, "0.3,0.7,0.5,0.1", 5, 100)).exit_code == 2);
  CHECK(run_cli(gen_args(stem, "1.5", 1, 100)).exit_code == 2);
  CHECK(run_cli({"gen-data", "--out", stem.string()}).exit_code == 2);  // missing --n
}

TEST_CASE("train produces checkpoint, history, and a faithful manifest") {
  TempDir dir("cli_train");
  const auto stem = dir.path() / "data";
  REQUIRE(run_cli(gen_args(stem, "0.5,0.9", 2, 1200)).exit_code == 0);
  const auto cfg = dir.path() / "train.json";
  write_text(cfg, kFastTrainConfig);

  SECTION("source target records unit weights") {
    const auto out = dir.path() / "run";
    const auto result = run_cli({"train", "--data", stem.string(), "--config", cfg.string(),
                                 "--out", out.string(), "--target", "source"});
    REQUIRE(result.exit_code == 0);
    REQUIRE(std::filesystem::exists(out / "model.ckpt"));
    REQUIRE(std::filesystem::exists(out / "history.csv"));
    const json manifest = json::parse(read_file(out / "manifest.json"));
    for (double p : manifest.at("adaptation_weights").at("p_pos")) CHECK(p == 1.0);
    for (double p : manifest.at("adaptation_weights").at("p_neg")) CHECK(p == 1.0);
  }

  SECTION("balanced target downweights the majority class of a 90/10 attribute") {
    const auto out = dir.path() / "run_bal";
    REQUIRE(run_cli({"train", "--data", stem.string(), "--config", cfg.string(), "--out",
                     out.string(), "--target", "balanced"})
                .exit_code == 0);
    const json manifest = json::parse(read_file(out / "manifest.json"));
    const double source_pos = manifest.at("source").at("positive")[1].get<double>();
    const double expected = (1.0 - source_pos) / source_pos;  // about 1/9
    const double p_pos = manifest.at("adaptation_weights").at("p_pos")[1].get<double>();
    CHECK_THAT(p_pos, Catch::Matchers::WithinAbs(expected, 1e-12));
    CHECK_THAT(p_pos, Catch::Matchers::WithinAbs(1.0 / 9.0, 0.05));
    CHECK(manifest.at("adaptation_weights").at("p_neg")[1] == 1.0);
  }

  SECTION("idempotent outputs for identical flags") {
    const auto out = dir.path() / "run_idem";
    REQUIRE(run_cli({"train", "--data", stem.string(), "--config", cfg.string(), "--out",
                     out.string()})
                .exit_code == 0);
    const std::string model = read_file(out / "model.ckpt");
    const std::string history = read_file(out / "history.csv");
    const std::string manifest = read_file(out / "manifest.json");
    REQUIRE(run_cli({"train", "--data", stem.string(), "--config", cfg.string(), "--out",
                     out.string()})
                .exit_code == 0);
    CHECK(read_file(out / "model.ckpt") == model);
    CHECK(read_file(out / "history.csv") == history);
    CHECK(read_file(out / "manifest.json") == manifest);
  }

  SECTION("separate mode writes per-attribute artifacts") {
    const auto cfg_sep = dir.path() / "train_sep.json";
    write_text(cfg_sep, js(json{{"batch_size", 32},
                                {"max_epochs", 2},
                                {"seed", 5},
                                {"mode", "separate"},
                                {"hidden_dims", {8}}}));
    const auto out = dir.path() / "run_sep";
    REQUIRE(run_cli({"train", "--data", stem.string(), "--config", cfg_sep.string(), "--out",
                     out.string()})
                .exit_code == 0);
    CHECK(std::filesystem::exists(out / "model_000.ckpt"));
    CHECK(std::filesystem::exists(out / "model_001.ckpt"));
    CHECK(std::filesystem::exists(out / "history_001.csv"));
  }

  SECTION("config errors exit 2, data errors exit 3") {
    const auto bad_cfg = dir.path() / "bad.json";
    write_text(bad_cfg, R"({"batch_size": 32, "unknown_key": 1})");
    CHECK(run_cli({"train", "--data", stem.string(), "--config", bad_cfg.string(), "--out",
                   (dir.path() / "o1").string()})
              .exit_code == 2);
    CHECK(run_cli({"train", "--data", (dir.path() / "missing").string(), "--config",
                   cfg.string(), "--out", (dir.path() / "o2").string()})
              .exit_code == 3);
  }
}

TEST_CASE("eval writes reports and distinguishes targets") {
  TempDir dir("cli_eval");
  const auto stem = dir.path() / "data";
  // Noiseless features: the toy problem is exactly separable, so training
  // error should land near zero.
  auto args = gen_args(stem, "0.5,0.8", 2, 1000);
  args[12] = "0";  // --feature-noise value
  REQUIRE(run_cli(args).exit_code == 0);
  const auto cfg = dir.path() / "train.json";
  write_text(cfg, kFastTrainConfig);
  const auto run = dir.path() / "run";
  REQUIRE(run_cli({"train", "--data", stem.string(), "--config", cfg.string(), "--out",
                   run.string()})
              .exit_code == 0);
  const std::string model = (run / "model.ckpt").string();

  const auto rep_src = dir.path() / "rep_src";
  const auto rep_bal = dir.path() / "rep_bal";
  const auto a = run_cli({"eval", "--model", model, "--data", stem.string(), "--target", "source",
                          "--out", rep_src.string()});
  REQUIRE(a.exit_code == 0);
  CHECK(json::parse(a.out).contains("average_error"));
  REQUIRE(run_cli({"eval", "--model", model, "--data", stem.string(), "--target", "balanced",
                   "--out", rep_bal.string()})
              .exit_code == 0);

  const json src = json::parse(read_file(dir.path() / "rep_src.report.json"));
  const json bal = json::parse(read_file(dir.path() / "rep_bal.report.json"));
  for (std::size_t i = 0; i < 2; ++i) {
    CHECK(src.at("attributes")[i].at("error") == bal.at("attributes")[i].at("error"));
  }
  CHECK(src.at("average_error") == bal.at("average_error"));

  SECTION("near-zero training error on the separable toy run") {
    CHECK(src.at("average_error").get<double>() < 0.08);
  }

  SECTION("corrupt checkpoint exits 3") {
    std::string bytes = read_file(run / "model.ckpt");
    bytes.resize(bytes.size() / 2);
    write_text(dir.path() / "broken.ckpt", bytes);
    CHECK(run_cli({"eval", "--model", (dir.path() / "broken.ckpt").string(), "--data",
                   stem.string(), "--target", "source", "--out",
                   (dir.path() / "r").string()})
              .exit_code == 3);
  }

  SECTION("separate checkpoints evaluate from a directory") {
    const auto cfg_sep = dir.path() / "sep.json";
    write_text(cfg_sep,
               js(json{{"batch_size", 32}, {"max_epochs", 2}, {"mode", "separate"},
                       {"hidden_dims", {8}}}));
    const auto run_sep = dir.path() / "run_sep";
    REQUIRE(run_cli({"train", "--data", stem.string(), "--config", cfg_sep.string(), "--out",
                     run_sep.string()})
                .exit_code == 0);
    const auto rep = dir.path() / "rep_dir";
    CHECK(run_cli({"eval", "--model", run_sep.string(), "--data", stem.string(), "--target",
                   "balanced", "--out", rep.string()})
              .exit_code == 0);
  }
}

TEST_CASE("weights prints the adaptation table") {
  TempDir dir("cli_weights");
  AttributeDataset ds;
  ds.features = Matrix(10, 1);
  ds.labels = Matrix(10, 1, -1.0);
  for (std::size_t j = 0; j < 3; ++j) ds.labels(j, 0) = 1.0;  // 30% positive
  ds.attribute_names = {"young"};
  write_dataset(ds, dir.path() / "d");
  const auto result =
      run_cli({"weights", "--data", (dir.path() / "d").string(), "--target", "balanced"});
  REQUIRE(result.exit_code == 0);
  CHECK(result.out ==
        "attribute,source_positive,source_negative,target_positive,target_negative,p_pos,p_neg\n"
        "young,0.3,0.7,0.5,0.5,1,0.4285714285714286\n");
}

TEST_CASE("compare runs a restricted arm set on a tiny config") {
  TempDir dir("cli_compare");
  const json config{{"generator",
                     {{"latent_dim", 2},
                      {"feature_dim", 4},
                      {"attributes", 2},
                      {"prevalences", {0.4, 0.7}},
                      {"label_noise", 0.0},
                      {"feature_noise_sigma", 0.25}}},
                    {"n", 300},
                    {"split", {0.6, 0.2, 0.2}},
                    {"seeds", {1}},
                    {"arms", {"moon-unbalanced"}},
                    {"train",
                     {{"batch_size", 32},
                      {"max_epochs", 2},
                      {"objective", "moon-weighted"},
                      {"hidden_dims", {8}}}}};
  const auto cfg = dir.path() / "exp.json";
  write_text(cfg, js(config));
  const auto out = dir.path() / "cmp";
  const auto result = run_cli({"compare", "--config", cfg.string(), "--out", out.string()});
  REQUIRE(result.exit_code == 0);
  // stdout is the comparison table: header plus exactly one arm row.
  CHECK(result.out.find("arm,seeds,mean_average_error") == 0);
  CHECK(std::count(result.out.begin(), result.out.end(), '\n') == 2);
  CHECK(std::filesystem::exists(out / "comparison.csv"));
  CHECK(std::filesystem::exists(out / "per_seed.csv"));
  CHECK(std::filesystem::exists(out / "seed1" / "moon-unbalanced" / "report.csv"));

  // Arms share the identical dataset per seed: manifest hashes match.
  const json data_manifest = json::parse(read_file(out / "seed1" / "data.manifest.json"));
  const json arm_manifest =
      json::parse(read_file(out / "seed1" / "moon-unbalanced" / "manifest.json"));
  CHECK(data_manifest.at("dataset_hash") == arm_manifest.at("dataset_hash"));

  SECTION("unknown arm or config key exits 2") {
    CHECK(run_cli({"compare", "--config", cfg.string(), "--out", out.string(), "--arms",
                   "nonsense"})
              .exit_code == 2);
    json bad = config;
    bad["surprise"] = 1;
    write_text(dir.path() / "bad.json", js(bad));
    CHECK(run_cli({"compare", "--config", (dir.path() / "bad.json").string(), "--out",
                   out.string()})
              .exit_code == 2);
  }
}
