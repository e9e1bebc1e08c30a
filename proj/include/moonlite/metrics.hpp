#pragma once

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "moonlite/distribution.hpp"
#include "moonlite/errors.hpp"
#include "moonlite/matrix.hpp"
#include "moonlite/serialize.hpp"

namespace moonlite {

// Decision rule: strictly positive scores predict the attribute present.
// A score of exactly 0 classifies as -1.
inline int classify(double score) {
  if (!std::isfinite(score)) throw numeric_error("classify: non-finite score");
  return score > 0.0 ? 1 : -1;
}

struct ErrorSummary {
  std::vector<double> per_attribute;
  double average = 0.0;
};

namespace detail {
inline void check_scores_labels(const Matrix& scores, const Matrix& labels) {
  if (scores.rows() == 0) throw value_error("metrics: empty test set");
  require_same_shape(scores, labels, "metrics");
  for (std::size_t j = 0; j < labels.rows(); ++j)
    for (double y : labels.row(j))
      if (y != 1.0 && y != -1.0) throw value_error("metrics: label not in {-1,+1}");
}
}  // namespace detail

// Fraction of test samples per attribute whose thresholded score disagrees
// with the label, plus the mean over attributes.
inline ErrorSummary classification_error(const Matrix& scores, const Matrix& labels) {
  detail::check_scores_labels(scores, labels);
  const std::size_t n = labels.rows(), m = labels.cols();
  std::vector<std::size_t> wrong(m, 0);
  for (std::size_t j = 0; j < n; ++j) {
    auto s = scores.row(j);
    auto y = labels.row(j);
    for (std::size_t i = 0; i < m; ++i)
      if (static_cast<double>(classify(s[i])) != y[i]) ++wrong[i];
  }
  ErrorSummary out;
  out.per_attribute.resize(m);
  double sum = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    out.per_attribute[i] = static_cast<double>(wrong[i]) / static_cast<double>(n);
    sum += out.per_attribute[i];
  }
  out.average = sum / static_cast<double>(m);
  return out;
}

// Error reweighted so each class contributes its target mass: every wrong
// positive adds T+/N+ and every wrong negative adds T-/N-, accumulated per
// sample in row order. With a uniform target this is the mean of the
// false-negative and false-positive rates.
//
// An attribute whose test column is single-class has no defined balanced
// error; by default that raises, with skip_degenerate the attribute gets NaN
// and the average is taken over the rest.
inline ErrorSummary balanced_error(const Matrix& scores, const Matrix& labels,
                                   const ClassDistribution& target,
                                   bool skip_degenerate = false) {
  detail::check_scores_labels(scores, labels);
  const std::size_t n = labels.rows(), m = labels.cols();
  if (target.size() != m)
    throw shape_error("balanced_error: target covers " + std::to_string(target.size()) +
                      " attributes, labels have " + std::to_string(m));
  std::vector<std::size_t> positives(m, 0);
  for (std::size_t j = 0; j < n; ++j) {
    auto y = labels.row(j);
    for (std::size_t i = 0; i < m; ++i)
      if (y[i] == 1.0) ++positives[i];
  }
  ErrorSummary out;
  out.per_attribute.assign(m, 0.0);
  std::vector<double> pos_weight(m), neg_weight(m);
  for (std::size_t i = 0; i < m; ++i) {
    const std::size_t npos = positives[i], nneg = n - npos;
    if (npos == 0 || nneg == 0) {
      if (!skip_degenerate)
        throw degenerate_error("balanced_error: attribute " + std::to_string(i) +
                               " has a single-class test column");
      out.per_attribute[i] = std::numeric_limits<double>::quiet_NaN();
      continue;
    }
    pos_weight[i] = target.positive(i) / static_cast<double>(npos);
    neg_weight[i] = target.negative(i) / static_cast<double>(nneg);
  }
  for (std::size_t j = 0; j < n; ++j) {
    auto s = scores.row(j);
    auto y = labels.row(j);
    for (std::size_t i = 0; i < m; ++i) {
      if (std::isnan(out.per_attribute[i])) continue;
      if (static_cast<double>(classify(s[i])) != y[i])
        out.per_attribute[i] += y[i] == 1.0 ? pos_weight[i] : neg_weight[i];
    }
  }
  double sum = 0.0;
  std::size_t counted = 0;
  for (std::size_t i = 0; i < m; ++i) {
    if (std::isnan(out.per_attribute[i])) continue;
    sum += out.per_attribute[i];
    ++counted;
  }
  if (counted == 0)
    throw degenerate_error("balanced_error: every attribute is single-class in the test set");
  out.average = sum / static_cast<double>(counted);
  return out;
}

// Full evaluation record: both error measures per attribute, class counts,
// and the target distribution the balanced column was computed against.
struct MetricsReport {
  std::vector<std::string> attribute_names;
  std::vector<double> error;                  // thresholded classification error
  std::vector<double> balanced;               // target-weighted balanced error (NaN = skipped)
  std::vector<std::size_t> positives;
  std::vector<std::size_t> negatives;
  double average_error = 0.0;
  double average_balanced_error = 0.0;
  ClassDistribution target;
};

inline MetricsReport make_report(const Matrix& scores, const Matrix& labels,
                                 std::vector<std::string> attribute_names,
                                 const ClassDistribution& target, bool skip_degenerate = false) {
  if (attribute_names.size() != labels.cols())
    throw shape_error("make_report: name count differs from label width");
  MetricsReport report;
  report.attribute_names = std::move(attribute_names);
  ErrorSummary err = classification_error(scores, labels);
  ErrorSummary bal = balanced_error(scores, labels, target, skip_degenerate);
  report.error = std::move(err.per_attribute);
  report.balanced = std::move(bal.per_attribute);
  report.average_error = err.average;
  report.average_balanced_error = bal.average;
  report.target = target;
  report.positives.assign(labels.cols(), 0);
  report.negatives.assign(labels.cols(), 0);
  for (std::size_t j = 0; j < labels.rows(); ++j) {
    auto y = labels.row(j);
    for (std::size_t i = 0; i < labels.cols(); ++i)
      ++(y[i] == 1.0 ? report.positives[i] : report.negatives[i]);
  }
  return report;
}

inline std::string report_to_csv(const MetricsReport& report) {
  std::string out = "attribute,error,balanced_error,positives,negatives\n";
  for (std::size_t i = 0; i < report.attribute_names.size(); ++i) {
    out += report.attribute_names[i];
    out += ',';
    out += format_double(report.error[i]);
    out += ',';
    out += format_double(report.balanced[i]);
    out += ',';
    out += std::to_string(report.positives[i]);
    out += ',';
    out += std::to_string(report.negatives[i]);
    out += '\n';
  }
  out += "average," + format_double(report.average_error) + "," +
         format_double(report.average_balanced_error) + ",,\n";
  return out;
}

inline nlohmann::json report_to_json(const MetricsReport& report) {
  nlohmann::json attrs = nlohmann::json::array();
  for (std::size_t i = 0; i < report.attribute_names.size(); ++i) {
    attrs.push_back({{"name", report.attribute_names[i]},
                     {"error", report.error[i]},
                     {"balanced_error", report.balanced[i]},
                     {"positives", report.positives[i]},
                     {"negatives", report.negatives[i]},
                     {"target_positive", report.target.positive(i)}});
  }
  return {{"attributes", attrs},
          {"average_error", report.average_error},
          {"average_balanced_error", report.average_balanced_error}};
}

inline void write_report(const MetricsReport& report, const std::filesystem::path& csv_path,
                         const std::filesystem::path& json_path) {
  write_file_atomic(csv_path, report_to_csv(report));
  write_file_atomic(json_path, report_to_json(report).dump(2) + "\n");
}

}  // namespace moonlite
