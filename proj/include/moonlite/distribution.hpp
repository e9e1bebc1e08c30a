#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "moonlite/errors.hpp"
#include "moonlite/matrix.hpp"
#include "moonlite/serialize.hpp"

namespace moonlite {

// Per-attribute positive/negative class mass. Holds either an empirical
// source distribution or a user-chosen target distribution; masses are
// fractions, so a target needs no sample backing.
class ClassDistribution {
 public:
  static ClassDistribution from_positive_mass(std::vector<double> positive) {
    ClassDistribution d;
    d.positive_ = std::move(positive);
    d.negative_.reserve(d.positive_.size());
    for (double p : d.positive_) d.negative_.push_back(1.0 - p);
    d.validate();
    return d;
  }

  static ClassDistribution from_masses(std::vector<double> positive, std::vector<double> negative) {
    ClassDistribution d;
    d.positive_ = std::move(positive);
    d.negative_ = std::move(negative);
    d.validate();
    return d;
  }

  // The rebalanced evaluation setting: equal mass on both classes.
  static ClassDistribution uniform(std::size_t num_attributes) {
    return from_positive_mass(std::vector<double>(num_attributes, 0.5));
  }

  std::size_t size() const { return positive_.size(); }
  double positive(std::size_t i) const { return positive_[i]; }
  double negative(std::size_t i) const { return negative_[i]; }
  const std::vector<double>& positive_mass() const { return positive_; }

  friend bool operator==(const ClassDistribution& a, const ClassDistribution& b) {
    return a.positive_ == b.positive_ && a.negative_ == b.negative_;
  }

 private:
  void validate() const {
    if (positive_.empty()) throw value_error("ClassDistribution: need at least one attribute");
    if (positive_.size() != negative_.size())
      throw shape_error("ClassDistribution: mass vectors differ in length");
    for (std::size_t i = 0; i < positive_.size(); ++i) {
      const double p = positive_[i], n = negative_[i];
      if (!(p >= 0.0 && p <= 1.0) || !(n >= 0.0 && n <= 1.0))
        throw value_error("ClassDistribution: mass out of [0,1] at attribute " + std::to_string(i));
      // Masses must sum to one, give or take one ulp.
      if (std::fabs(p + n - 1.0) > std::numeric_limits<double>::epsilon())
        throw value_error("ClassDistribution: masses do not sum to 1 at attribute " +
                          std::to_string(i));
    }
  }

  std::vector<double> positive_;
  std::vector<double> negative_;
};

// Per-attribute probabilities of backpropagating an error for the positive
// and for the negative class. At least one class per attribute is always kept
// at probability 1; the other is scaled down so the effective class masses
// seen during training match the target distribution.
struct AdaptationWeights {
  std::vector<double> p_pos;
  std::vector<double> p_neg;

  std::size_t size() const { return p_pos.size(); }

  double weight_for(std::size_t attribute, double label) const {
    return label > 0.0 ? p_pos[attribute] : p_neg[attribute];
  }

  void validate() const {
    if (p_pos.empty() || p_pos.size() != p_neg.size())
      throw shape_error("AdaptationWeights: bad vector sizes");
    for (std::size_t i = 0; i < p_pos.size(); ++i) {
      if (!(p_pos[i] >= 0.0 && p_pos[i] <= 1.0) || !(p_neg[i] >= 0.0 && p_neg[i] <= 1.0))
        throw value_error("AdaptationWeights: weight out of [0,1] at attribute " +
                          std::to_string(i));
      if (p_pos[i] != 1.0 && p_neg[i] != 1.0)
        throw value_error("AdaptationWeights: neither class unweighted at attribute " +
                          std::to_string(i));
    }
  }

  static AdaptationWeights ones(std::size_t num_attributes) {
    return {std::vector<double>(num_attributes, 1.0), std::vector<double>(num_attributes, 1.0)};
  }
};

// Empirical class frequencies of a +-1 label matrix, one pair per column.
inline ClassDistribution estimate_source(const Matrix& labels) {
  if (labels.rows() == 0 || labels.cols() == 0)
    throw value_error("estimate_source: empty label matrix");
  const std::size_t n = labels.rows(), m = labels.cols();
  std::vector<double> positive(m, 0.0);
  for (std::size_t j = 0; j < n; ++j) {
    auto row = labels.row(j);
    for (std::size_t i = 0; i < m; ++i) {
      if (row[i] == 1.0)
        positive[i] += 1.0;
      else if (row[i] != -1.0)
        throw value_error("estimate_source: label not in {-1,+1} at row " + std::to_string(j) +
                          ", column " + std::to_string(i));
    }
  }
  for (double& p : positive) p /= static_cast<double>(n);
  return ClassDistribution::from_positive_mass(std::move(positive));
}

// Backpropagation probabilities that re-balance a source-distributed stream
// of samples toward the target distribution. The surplus class of the source
// is kept with probability (S_other * T_this) / (S_this * T_other) < 1; the
// deficit class always keeps probability 1.
inline AdaptationWeights adaptation_weights(const ClassDistribution& source,
                                            const ClassDistribution& target) {
  if (source.size() != target.size())
    throw shape_error("adaptation_weights: source has " + std::to_string(source.size()) +
                      " attributes, target has " + std::to_string(target.size()));
  AdaptationWeights w;
  w.p_pos.resize(source.size());
  w.p_neg.resize(source.size());
  for (std::size_t i = 0; i < source.size(); ++i) {
    const double sp = source.positive(i), sn = source.negative(i);
    const double tp = target.positive(i), tn = target.negative(i);
    if (sp == 0.0 || sn == 0.0) {
      // A one-class attribute cannot be re-weighted toward a target that
      // wants mass on the missing class; there is nothing to upweight.
      if ((sp == 0.0 && tp != 0.0) || (sn == 0.0 && tn != 0.0))
        throw degenerate_error("adaptation_weights: attribute " + std::to_string(i) +
                               " has no samples of a class the target requires");
      w.p_pos[i] = 1.0;
      w.p_neg[i] = 1.0;
      continue;
    }
    // The min() guards the case where complement rounding makes the kept-class
    // ratio land a hair above 1.
    w.p_pos[i] = tp > sp ? 1.0 : std::min(1.0, (sn * tp) / (sp * tn));
    w.p_neg[i] = tn > sn ? 1.0 : std::min(1.0, (sp * tn) / (sn * tp));
  }
  w.validate();
  return w;
}

// Reads a target distribution from JSON: an array of {"name", "positive"}
// objects. Attributes not named keep their source mass (adaptation weight 1).
inline ClassDistribution read_target_distribution(const nlohmann::json& doc,
                                                  const std::vector<std::string>& attribute_names,
                                                  const ClassDistribution& source) {
  if (attribute_names.size() != source.size())
    throw shape_error("read_target_distribution: name count differs from source size");
  if (!doc.is_array()) throw config_error("target distribution: top-level JSON must be an array");
  std::vector<double> positive = source.positive_mass();
  std::vector<bool> seen(attribute_names.size(), false);
  for (const auto& entry : doc) {
    if (!entry.is_object() || !entry.contains("name") || !entry.contains("positive"))
      throw config_error("target distribution: each entry needs \"name\" and \"positive\"");
    for (const auto& [key, _] : entry.items())
      if (key != "name" && key != "positive")
        throw config_error("target distribution: unknown key \"" + key + "\"");
    const std::string name = entry.at("name").get<std::string>();
    const auto it = std::find(attribute_names.begin(), attribute_names.end(), name);
    if (it == attribute_names.end())
      throw config_error("target distribution: unknown attribute \"" + name + "\"");
    const std::size_t idx = static_cast<std::size_t>(it - attribute_names.begin());
    if (seen[idx]) throw config_error("target distribution: duplicate attribute \"" + name + "\"");
    seen[idx] = true;
    const double p = entry.at("positive").get<double>();
    if (!(p >= 0.0 && p <= 1.0))
      throw config_error("target distribution: positive mass for \"" + name +
                         "\" outside [0,1]");
    positive[idx] = p;
  }
  return ClassDistribution::from_positive_mass(std::move(positive));
}

inline ClassDistribution read_target_distribution(const std::filesystem::path& path,
                                                  const std::vector<std::string>& attribute_names,
                                                  const ClassDistribution& source) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(slurp_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw config_error("target distribution " + path.string() + ": " + e.what());
  }
  return read_target_distribution(doc, attribute_names, source);
}

}  // namespace moonlite
