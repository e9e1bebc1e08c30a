#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>

#include "moonlite/distribution.hpp"
#include "moonlite/synthdata.hpp"
#include "support/helpers.hpp"

using namespace moonlite;
using Catch::Matchers::WithinAbs;

TEST_CASE("normal quantile against reference values") {
  // Reference values from an independent high-precision implementation.
  const std::pair<double, double> cases[] = {
      {0.001, -3.090232306167813},  {0.025, -1.9599639845400545}, {0.05, -1.6448536269514729},
      {0.15, -1.0364333894937898},  {0.5, 0.0},                   {0.77, 0.7388468491852137},
      {0.95, 1.6448536269514722},   {0.975, 1.959963984540054},   {0.999, 3.090232306167813},
  };
  for (const auto& [p, x] : cases) CHECK_THAT(normal_quantile(p), WithinAbs(x, 1.2e-9));
  // Deep tails stay within the stated absolute error after refinement.
  CHECK_THAT(normal_quantile(1e-10), WithinAbs(-6.361340902404056, 1.2e-9));
  CHECK_THROWS_AS(normal_quantile(0.0), value_error);
  CHECK_THROWS_AS(normal_quantile(1.0), value_error);
}

namespace {
GeneratorConfig small_config() {
  GeneratorConfig config;
  config.latent_dim = 4;
  config.feature_dim = 8;
  config.num_attributes = 5;
  config.prevalences = {0.1, 0.3, 0.5, 0.7, 0.9};
  config.label_noise = 0.0;
  config.feature_noise_sigma = 0.5;
  config.seed = 42;
  return config;
}
}  // namespace

TEST_CASE("generation is deterministic in the seed") {
  const GeneratorConfig config = small_config();
  const AttributeDataset a = generate(config, 50);
  const AttributeDataset b = generate(config, 50);
  CHECK(a.features == b.features);
  CHECK(a.labels == b.labels);
  CHECK(a.attribute_names == b.attribute_names);
  GeneratorConfig other = config;
  other.seed = 43;
  CHECK_FALSE(generate(other, 50).labels == a.labels);
}

TEST_CASE("empirical prevalence tracks the configured prevalence") {
  GeneratorConfig config = small_config();
  config.prevalences = {0.5, 0.9, 0.05, 0.3, 0.75};
  const std::size_t n = 10000;
  const AttributeDataset ds = generate(config, n);
  const ClassDistribution source = estimate_source(ds.labels);
  for (std::size_t i = 0; i < config.prevalences.size(); ++i) {
    const double p = config.prevalences[i];
    const double tolerance = 3.0 * std::sqrt(p * (1.0 - p) / static_cast<double>(n));
    CHECK_THAT(source.positive(i), WithinAbs(p, tolerance));
  }
}

TEST_CASE("identical score streams differ only through label noise") {
  // With a one-dimensional latent every attribute direction is +-1, so two
  // attributes with the same prevalence share scores up to sign; their labels
  // then agree (or disagree) except for independent flips.
  GeneratorConfig config;
  config.latent_dim = 1;
  config.feature_dim = 2;
  config.num_attributes = 2;
  config.prevalences = {0.5, 0.5};
  config.label_noise = 0.1;
  config.feature_noise_sigma = 0.0;
  config.seed = 7;
  const std::size_t n = 20000;
  const AttributeDataset ds = generate(config, n);
  std::size_t agree = 0;
  for (std::size_t j = 0; j < n; ++j)
    if (ds.labels(j, 0) == ds.labels(j, 1)) ++agree;
  const double rate = static_cast<double>(agree) / static_cast<double>(n);
  const double expected = 1.0 - 2.0 * 0.1 * 0.9;  // both flipped or neither
  CHECK_THAT(std::max(rate, 1.0 - rate), WithinAbs(expected, 0.012));
}

TEST_CASE("noiseless features determine labels up to a linear rule") {
  GeneratorConfig config;
  config.latent_dim = 4;
  config.feature_dim = 8;
  config.num_attributes = 2;
  config.prevalences = {0.5, 0.8};
  config.label_noise = 0.0;
  config.feature_noise_sigma = 0.0;
  config.seed = 5;
  const AttributeDataset ds = generate(config, 1000);
  for (std::size_t i = 0; i < 2; ++i)
    CHECK(testsupport::linear_probe_accuracy(ds.features, ds.labels, i) > 0.95);
}

TEST_CASE("generator configuration validation") {
  GeneratorConfig config = small_config();
  config.prevalences.pop_back();
  CHECK_THROWS_AS(generate(config, 10), config_error);
  config = small_config();
  config.prevalences[0] = 0.0;
  CHECK_THROWS_AS(generate(config, 10), config_error);
  config = small_config();
  config.label_noise = 0.5;
  CHECK_THROWS_AS(generate(config, 10), config_error);
  config = small_config();
  config.feature_noise_sigma = -1.0;
  CHECK_THROWS_AS(generate(config, 10), config_error);
  CHECK_THROWS_AS(generate(small_config(), 0), config_error);
}

TEST_CASE("split partitions the rows") {
  const AttributeDataset ds = generate(small_config(), 100);
  const DatasetSplit parts = split(ds, {0.8, 0.1, 0.1}, 3);
  CHECK(parts.train.size() == 80);
  CHECK(parts.validation.size() == 10);
  CHECK(parts.test.size() == 10);

  // Union of the three parts is a permutation of the input rows.
  const auto row_key = [](const AttributeDataset& d, std::size_t j) {
    std::string key;
    for (double v : d.features.row(j)) key += format_double(v) + ",";
    for (double v : d.labels.row(j)) key += format_double(v) + ",";
    return key;
  };
  std::vector<std::string> original, pieces;
  for (std::size_t j = 0; j < ds.size(); ++j) original.push_back(row_key(ds, j));
  for (const AttributeDataset* part : {&parts.train, &parts.validation, &parts.test})
    for (std::size_t j = 0; j < part->size(); ++j) pieces.push_back(row_key(*part, j));
  std::sort(original.begin(), original.end());
  std::sort(pieces.begin(), pieces.end());
  CHECK(original == pieces);

  const DatasetSplit again = split(ds, {0.8, 0.1, 0.1}, 3);
  CHECK(again.train.features == parts.train.features);
  CHECK(again.test.labels == parts.test.labels);
}

TEST_CASE("split validation") {
  const AttributeDataset ds = generate(small_config(), 30);
  CHECK_THROWS_AS(split(ds, {0.5, 0.3, 0.3}, 0), config_error);
  CHECK_THROWS_AS(split(ds, {0.99, 0.005, 0.005}, 0), config_error);
}

TEST_CASE("dataset round-trip is bit exact") {
  testsupport::TempDir dir("ds");
  GeneratorConfig config = small_config();
  config.feature_dim = 8;
  config.num_attributes = 5;
  const AttributeDataset ds = generate(config, 50);
  const auto stem = dir.path() / "toy";
  write_dataset(ds, stem);
  const AttributeDataset back = read_dataset(stem);
  CHECK(back.features == ds.features);
  CHECK(back.labels == ds.labels);
  CHECK(back.attribute_names == ds.attribute_names);
}

TEST_CASE("dataset corruption reports format errors with offsets") {
  testsupport::TempDir dir("ds_bad");
  const AttributeDataset ds = generate(small_config(), 10);
  const auto stem = dir.path() / "toy";
  write_dataset(ds, stem);

  SECTION("feature payload truncated by one value") {
    std::string data = testsupport::read_file(features_path(stem));
    data.resize(data.size() - 8);
    write_file_atomic(features_path(stem), data);
    CHECK_THROWS_MATCHES(read_dataset(stem), format_error,
                         Catch::Matchers::MessageMatches(
                             Catch::Matchers::ContainsSubstring("short by 8 bytes")));
  }
  SECTION("bad magic") {
    std::string data = testsupport::read_file(features_path(stem));
    data[0] = 'x';
    write_file_atomic(features_path(stem), data);
    CHECK_THROWS_MATCHES(
        read_dataset(stem), format_error,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("byte offset 0")));
  }
  SECTION("label outside {-1,+1}") {
    std::string data = testsupport::read_file(labels_path(stem));
    const std::size_t at = data.find("-1");
    data.replace(at, 2, "+2");
    write_file_atomic(labels_path(stem), data);
    CHECK_THROWS_MATCHES(
        read_dataset(stem), format_error,
        Catch::Matchers::MessageMatches(Catch::Matchers::ContainsSubstring("byte offset")));
  }
  SECTION("row count mismatch against the feature file") {
    std::string data = testsupport::read_file(labels_path(stem));
    data += "+1,+1,+1,+1,+1\n";
    write_file_atomic(labels_path(stem), data);
    CHECK_THROWS_AS(read_dataset(stem), format_error);
  }
}

TEST_CASE("empty datasets cannot be written") {
  AttributeDataset empty;
  empty.features = Matrix(0, 3);
  empty.labels = Matrix(0, 2);
  empty.attribute_names = {"a", "b"};
  testsupport::TempDir dir("ds_empty");
  CHECK_THROWS_AS(write_dataset(empty, dir.path() / "x"), value_error);
}

TEST_CASE("attribute names must be CSV safe") {
  AttributeDataset ds = generate(small_config(), 5);
  ds.attribute_names[0] = "has,comma";
  testsupport::TempDir dir("ds_names");
  CHECK_THROWS_AS(write_dataset(ds, dir.path() / "x"), value_error);
}
