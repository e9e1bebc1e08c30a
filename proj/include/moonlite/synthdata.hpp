#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include "moonlite/errors.hpp"
#include "moonlite/matrix.hpp"
#include "moonlite/rng.hpp"
#include "moonlite/serialize.hpp"

namespace moonlite {

// Standard normal quantile. Acklam's rational approximation polished with one
// Halley step against erfc, absolute error well under 1.2e-9 over (0,1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw value_error("normal_quantile: p outside (0,1)");
  static constexpr std::array<double, 6> a{-3.969683028665376e+01, 2.209460984245205e+02,
                                           -2.759285104469687e+02, 1.383577518672690e+02,
                                           -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr std::array<double, 5> b{-5.447609879822406e+01, 1.615858368580409e+02,
                                           -1.556989798598866e+02, 6.680131188771972e+01,
                                           -1.328068155288572e+01};
  static constexpr std::array<double, 6> c{-7.784894002430293e-03, -3.223964580411365e-01,
                                           -2.400758277161838e+00, -2.549732539343734e+00,
                                           4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr std::array<double, 4> d{7.784695709041462e-03, 3.224671290700398e-01,
                                           2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double low = 0.02425, high = 1.0 - low;
  double x;
  if (p < low) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= high) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log(1.0 - p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  const double err = 0.5 * std::erfc(-x / std::numbers::sqrt2) - p;
  const double u = err * std::numbers::sqrt2 * std::sqrt(std::numbers::pi) *
                   std::exp(x * x / 2.0);
  return x - u / (1.0 + x * u / 2.0);
}

// Latent-factor generator settings. Each attribute is a noisy linear
// threshold of a shared k-dimensional latent, so attributes are correlated
// and per-attribute prevalence is set exactly by the threshold offset.
struct GeneratorConfig {
  std::size_t latent_dim = 8;
  std::size_t feature_dim = 16;
  std::size_t num_attributes = 10;
  std::vector<double> prevalences;     // one value in (0,1) per attribute
  double label_noise = 0.05;           // independent flip probability, [0, 0.5)
  double feature_noise_sigma = 1.0;    // additive feature noise scale, >= 0
  std::uint64_t seed = 0;

  void validate() const {
    if (latent_dim == 0) throw config_error("generator: latent_dim must be positive");
    if (feature_dim == 0) throw config_error("generator: feature_dim must be positive");
    if (num_attributes == 0) throw config_error("generator: num_attributes must be positive");
    if (prevalences.size() != num_attributes)
      throw config_error("generator: " + std::to_string(num_attributes) + " attributes but " +
                         std::to_string(prevalences.size()) + " prevalences");
    for (double p : prevalences)
      if (!(p > 0.0 && p < 1.0))
        throw config_error("generator: prevalence " + format_double(p) + " outside (0,1)");
    if (!(label_noise >= 0.0 && label_noise < 0.5))
      throw config_error("generator: label_noise outside [0,0.5)");
    if (!(feature_noise_sigma >= 0.0))
      throw config_error("generator: feature_noise_sigma must be >= 0");
  }
};

struct AttributeDataset {
  Matrix features;                          // n x feature_dim
  Matrix labels;                            // n x num_attributes, entries +-1
  std::vector<std::string> attribute_names;

  std::size_t size() const { return features.rows(); }
  std::size_t num_attributes() const { return labels.cols(); }

  void validate() const {
    if (features.rows() == 0) throw value_error("dataset: empty");
    if (features.rows() != labels.rows()) throw shape_error("dataset: row counts differ");
    if (attribute_names.size() != labels.cols())
      throw shape_error("dataset: name count differs from label width");
    for (std::size_t j = 0; j < labels.rows(); ++j)
      for (double y : labels.row(j))
        if (y != 1.0 && y != -1.0) throw value_error("dataset: label not in {-1,+1}");
  }
};

// Draws n samples. Per sample: latent z ~ N(0, I_k); attribute i scores
// w_i.z + b_i with a fixed unit-norm direction w_i and b_i chosen so
// P(score > 0) equals the configured prevalence; the sign is then flipped
// with probability label_noise. Features are A.z plus isotropic noise.
// Everything is a pure function of the seed.
inline AttributeDataset generate(const GeneratorConfig& config, std::size_t n) {
  config.validate();
  if (n == 0) throw config_error("generate: n must be positive");
  const std::size_t k = config.latent_dim, d = config.feature_dim, m = config.num_attributes;
  Rng rng = make_rng(derive_seed(config.seed, 0));

  // Fixed structure: attribute directions, thresholds, mixing matrix.
  Matrix directions(m, k);
  for (std::size_t i = 0; i < m; ++i) {
    auto w = directions.row(i);
    double norm2 = 0.0;
    do {
      norm2 = 0.0;
      for (std::size_t t = 0; t < k; ++t) {
        w[t] = gaussian(rng);
        norm2 += w[t] * w[t];
      }
    } while (norm2 == 0.0);
    const double inv = 1.0 / std::sqrt(norm2);
    for (std::size_t t = 0; t < k; ++t) w[t] *= inv;
  }
  std::vector<double> thresholds(m);
  for (std::size_t i = 0; i < m; ++i) thresholds[i] = normal_quantile(config.prevalences[i]);
  // Mixing matrix scaled so features have unit signal variance.
  Matrix mixing(d, k);
  const double mix_scale = 1.0 / std::sqrt(static_cast<double>(k));
  for (double& v : mixing.flat()) v = gaussian(rng) * mix_scale;

  AttributeDataset ds;
  ds.features = Matrix(n, d);
  ds.labels = Matrix(n, m);
  ds.attribute_names.reserve(m);
  for (std::size_t i = 0; i < m; ++i) ds.attribute_names.push_back("attr" + std::to_string(i));

  std::vector<double> z(k);
  Rng sample_rng = make_rng(derive_seed(config.seed, 1));
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t t = 0; t < k; ++t) z[t] = gaussian(sample_rng);
    auto y = ds.labels.row(j);
    for (std::size_t i = 0; i < m; ++i) {
      auto w = directions.row(i);
      double score = thresholds[i];
      for (std::size_t t = 0; t < k; ++t) score += w[t] * z[t];
      double label = score > 0.0 ? 1.0 : -1.0;
      // Flip draw consumed unconditionally so the stream layout does not
      // depend on the noise level.
      if (bernoulli(sample_rng, config.label_noise)) label = -label;
      y[i] = label;
    }
    auto x = ds.features.row(j);
    for (std::size_t f = 0; f < d; ++f) {
      auto a = mixing.row(f);
      double v = 0.0;
      for (std::size_t t = 0; t < k; ++t) v += a[t] * z[t];
      x[f] = v + config.feature_noise_sigma * gaussian(sample_rng);
    }
  }
  return ds;
}

struct SplitFractions {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

struct DatasetSplit {
  AttributeDataset train;
  AttributeDataset validation;
  AttributeDataset test;
};

// Disjoint shuffled partition; the three parts together are a permutation of
// the input rows.
inline DatasetSplit split(const AttributeDataset& dataset, const SplitFractions& fractions,
                          std::uint64_t seed) {
  dataset.validate();
  const double total = fractions.train + fractions.validation + fractions.test;
  if (std::fabs(total - 1.0) > 1e-9)
    throw config_error("split: fractions sum to " + format_double(total) + ", expected 1");
  const std::size_t n = dataset.size();
  const auto n_train =
      static_cast<std::size_t>(std::llround(fractions.train * static_cast<double>(n)));
  const auto n_val =
      static_cast<std::size_t>(std::llround(fractions.validation * static_cast<double>(n)));
  if (n_train == 0 || n_val == 0 || n_train + n_val >= n)
    throw config_error("split: a part would be empty at n=" + std::to_string(n));
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng = make_rng(derive_seed(seed, 2));
  shuffle(order, rng);
  const auto take = [&](std::size_t begin, std::size_t count) {
    AttributeDataset part;
    std::span<const std::size_t> idx(order.data() + begin, count);
    part.features = gather_rows(dataset.features, idx);
    part.labels = gather_rows(dataset.labels, idx);
    part.attribute_names = dataset.attribute_names;
    return part;
  };
  DatasetSplit out;
  out.train = take(0, n_train);
  out.validation = take(n_train, n_val);
  out.test = take(n_train + n_val, n - n_train - n_val);
  return out;
}

// --- on-disk format ----------------------------------------------------------
// <stem>.features : 16-byte header (8-byte magic, u32 version, 4 zero bytes),
//                   then n and d as u64 LE, then n*d f64 LE row-major.
// <stem>.labels.csv : header row of attribute names, then rows of +1/-1.

inline constexpr char kFeatureMagic[8] = {'M', 'O', 'O', 'N', 'F', 'E', 'A', 'T'};
inline constexpr std::uint32_t kFeatureVersion = 1;

inline std::filesystem::path features_path(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".features");
}
inline std::filesystem::path labels_path(const std::filesystem::path& stem) {
  return std::filesystem::path(stem.string() + ".labels.csv");
}

inline void write_dataset(const AttributeDataset& dataset, const std::filesystem::path& stem) {
  dataset.validate();
  for (const std::string& name : dataset.attribute_names) {
    if (name.empty() || name.find_first_of(",\"\r\n") != std::string::npos)
      throw value_error("write_dataset: attribute name \"" + name + "\" not CSV-safe");
  }
  std::string feat;
  feat.append(kFeatureMagic, sizeof kFeatureMagic);
  append_u32_le(feat, kFeatureVersion);
  feat.append(4, '\0');
  append_u64_le(feat, dataset.features.rows());
  append_u64_le(feat, dataset.features.cols());
  for (double v : dataset.features.flat()) append_f64_le(feat, v);
  write_file_atomic(features_path(stem), feat);

  std::string csv;
  for (std::size_t i = 0; i < dataset.attribute_names.size(); ++i) {
    if (i) csv += ',';
    csv += dataset.attribute_names[i];
  }
  csv += '\n';
  for (std::size_t j = 0; j < dataset.labels.rows(); ++j) {
    auto y = dataset.labels.row(j);
    for (std::size_t i = 0; i < y.size(); ++i) {
      if (i) csv += ',';
      csv += y[i] == 1.0 ? "+1" : "-1";
    }
    csv += '\n';
  }
  write_file_atomic(labels_path(stem), csv);
}

namespace detail {

inline Matrix read_features_file(const std::filesystem::path& path) {
  const std::string data = slurp_file(path);
  const std::string where = path.string();
  if (data.size() < 32)
    throw format_error(where + ": header needs 32 bytes, file has " +
                       std::to_string(data.size()));
  if (std::memcmp(data.data(), kFeatureMagic, sizeof kFeatureMagic) != 0)
    throw format_error(where + ": bad magic at byte offset 0");
  const auto* bytes = reinterpret_cast<const unsigned char*>(data.data());
  if (read_u32_le(bytes + 8) != kFeatureVersion)
    throw format_error(where + ": unsupported version at byte offset 8");
  const std::uint64_t n = read_u64_le(bytes + 16);
  const std::uint64_t d = read_u64_le(bytes + 24);
  if (n == 0 || d == 0) throw format_error(where + ": zero dimension at byte offset 16");
  const std::uint64_t expected = 32 + n * d * 8;
  if (data.size() != expected)
    throw format_error(where + ": payload ends at byte offset " + std::to_string(data.size()) +
                       ", expected " + std::to_string(expected) + " (short by " +
                       std::to_string(expected > data.size() ? expected - data.size() : 0) +
                       " bytes)");
  Matrix features(n, d);
  const unsigned char* p = bytes + 32;
  for (double& v : features.flat()) {
    v = read_f64_le(p);
    p += 8;
  }
  return features;
}

struct LabelsFile {
  std::vector<std::string> names;
  Matrix labels;
};

inline LabelsFile read_labels_file(const std::filesystem::path& path) {
  const std::string data = slurp_file(path);
  const std::string where = path.string();
  LabelsFile out;
  std::size_t pos = 0;
  const auto next_line = [&](std::string& line) {
    if (pos >= data.size()) return false;
    const std::size_t eol = data.find('\n', pos);
    const std::size_t end = eol == std::string::npos ? data.size() : eol;
    line.assign(data, pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    pos = end == data.size() ? data.size() : end + 1;
    return true;
  };
  std::string line;
  if (!next_line(line) || line.empty())
    throw format_error(where + ": missing header row at byte offset 0");
  for (std::size_t start = 0;;) {
    const std::size_t comma = line.find(',', start);
    out.names.push_back(line.substr(start, comma - start));
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  std::vector<double> values;
  std::size_t rows = 0;
  while (true) {
    const std::size_t line_offset = pos;
    if (!next_line(line)) break;
    if (line.empty() && pos >= data.size()) break;  // trailing newline
    std::size_t start = 0, col = 0;
    for (;;) {
      const std::size_t comma = line.find(',', start);
      const std::string tok = line.substr(start, comma - start);
      double v;
      if (tok == "+1" || tok == "1")
        v = 1.0;
      else if (tok == "-1")
        v = -1.0;
      else
        throw format_error(where + ": label \"" + tok + "\" not in {-1,+1} at byte offset " +
                           std::to_string(line_offset + start));
      values.push_back(v);
      ++col;
      if (comma == std::string::npos) break;
      start = comma + 1;
    }
    if (col != out.names.size())
      throw format_error(where + ": row at byte offset " + std::to_string(line_offset) + " has " +
                         std::to_string(col) + " fields, header has " +
                         std::to_string(out.names.size()));
    ++rows;
  }
  if (rows == 0) throw format_error(where + ": no label rows");
  out.labels = Matrix(rows, out.names.size());
  auto flat = out.labels.flat();
  for (std::size_t i = 0; i < values.size(); ++i) flat[i] = values[i];
  return out;
}

}  // namespace detail

inline AttributeDataset read_dataset(const std::filesystem::path& stem) {
  AttributeDataset ds;
  ds.features = detail::read_features_file(features_path(stem));
  detail::LabelsFile labels = detail::read_labels_file(labels_path(stem));
  if (labels.labels.rows() != ds.features.rows())
    throw format_error(labels_path(stem).string() + ": " + std::to_string(labels.labels.rows()) +
                       " label rows but " + std::to_string(ds.features.rows()) +
                       " feature rows");
  ds.labels = std::move(labels.labels);
  ds.attribute_names = std::move(labels.names);
  ds.validate();
  return ds;
}

}  // namespace moonlite
