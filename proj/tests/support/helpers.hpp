#pragma once

// Shared test utilities: scratch directories, a subprocess runner for the CLI
// binary, and independent oracles (finite differences, brute-force metric
// counting, a least-squares probe). Oracles deliberately avoid the library
// code paths they are used to check.

#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "moonlite/matrix.hpp"
#include "moonlite/net.hpp"

namespace testsupport {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<unsigned> counter{0};
    path_ = fs::temp_directory_path() /
            ("moonlite_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter.fetch_add(1)));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

struct CliResult {
  int exit_code = -1;
  std::string out;
};

inline std::string cli_binary() {
  const char* env = std::getenv("MOONLITE_BIN");
  return env ? env : "";
}

inline std::string shell_quote(const std::string& s) {
  std::string q = "'";
  for (char c : s) {
    if (c == '\'')
      q += "'\\''";
    else
      q += c;
  }
  q += "'";
  return q;
}

// Runs the CLI with the given arguments, capturing stdout. stderr is passed
// through so failures stay visible in the test log.
inline CliResult run_cli(const std::vector<std::string>& args) {
  std::string cmd = shell_quote(cli_binary());
  for (const std::string& a : args) cmd += " " + shell_quote(a);
  CliResult result;
  FILE* pipe = ::popen(cmd.c_str(), "r");
  if (pipe == nullptr) return result;
  std::array<char, 4096> buf;
  std::size_t got;
  while ((got = std::fread(buf.data(), 1, buf.size(), pipe)) > 0) result.out.append(buf.data(), got);
  const int status = ::pclose(pipe);
  result.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return result;
}

inline std::string read_file(const fs::path& p) {
  FILE* f = std::fopen(p.string().c_str(), "rb");
  if (f == nullptr) return {};
  std::string data;
  std::array<char, 4096> buf;
  std::size_t got;
  while ((got = std::fread(buf.data(), 1, buf.size(), f)) > 0) data.append(buf.data(), got);
  std::fclose(f);
  return data;
}

// Central finite difference of `loss` with respect to every model parameter.
template <typename LossFn>
moonlite::Gradients numeric_gradients(moonlite::MlpModel& model, LossFn loss, double h = 1e-6) {
  moonlite::Gradients grads;
  const auto diff = [&](double& param) {
    const double saved = param;
    param = saved + h;
    const double up = loss();
    param = saved - h;
    const double down = loss();
    param = saved;
    return (up - down) / (2.0 * h);
  };
  for (auto& w : model.weights) {
    moonlite::Matrix g(w.rows(), w.cols());
    auto wf = w.flat();
    auto gf = g.flat();
    for (std::size_t i = 0; i < wf.size(); ++i) gf[i] = diff(wf[i]);
    grads.weights.push_back(std::move(g));
  }
  for (auto& b : model.biases) {
    std::vector<double> g(b.size());
    for (std::size_t i = 0; i < b.size(); ++i) g[i] = diff(b[i]);
    grads.biases.push_back(std::move(g));
  }
  return grads;
}

inline double relative_error(double analytic, double numeric) {
  const double denom = std::max({1.0, std::fabs(analytic), std::fabs(numeric)});
  return std::fabs(analytic - numeric) / denom;
}

// Brute-force metric oracles: per-entry counting straight off the decision
// rule, independent of the metrics module internals.
struct OracleErrors {
  std::vector<double> error;
  std::vector<double> balanced;
  double average_error = 0.0;
  double average_balanced = 0.0;
};

inline int oracle_classify(double s) { return s > 0.0 ? 1 : -1; }

inline OracleErrors counting_oracle(const moonlite::Matrix& scores,
                                    const moonlite::Matrix& labels,
                                    const std::vector<double>& target_positive) {
  const std::size_t n = labels.rows(), m = labels.cols();
  OracleErrors out;
  out.error.resize(m);
  out.balanced.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    std::size_t wrong = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (oracle_classify(scores(j, i)) != static_cast<int>(labels(j, i))) ++wrong;
    out.error[i] = static_cast<double>(wrong) / static_cast<double>(n);

    std::size_t npos = 0;
    for (std::size_t j = 0; j < n; ++j)
      if (labels(j, i) == 1.0) ++npos;
    const std::size_t nneg = n - npos;
    double eb = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      if (oracle_classify(scores(j, i)) == static_cast<int>(labels(j, i))) continue;
      if (labels(j, i) == 1.0)
        eb += target_positive[i] / static_cast<double>(npos);
      else
        eb += (1.0 - target_positive[i]) / static_cast<double>(nneg);
    }
    out.balanced[i] = eb;
  }
  double se = 0.0, sb = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    se += out.error[i];
    sb += out.balanced[i];
  }
  out.average_error = se / static_cast<double>(m);
  out.average_balanced = sb / static_cast<double>(m);
  return out;
}

// Least-squares linear probe (features + bias -> label), solved by Gaussian
// elimination on the normal equations. Returns sign-prediction accuracy.
inline double linear_probe_accuracy(const moonlite::Matrix& features,
                                    const moonlite::Matrix& labels, std::size_t column) {
  const std::size_t n = features.rows(), d = features.cols() + 1;
  std::vector<std::vector<double>> a(d, std::vector<double>(d, 0.0));
  std::vector<double> rhs(d, 0.0);
  const auto feat = [&](std::size_t j, std::size_t k) {
    return k < features.cols() ? features(j, k) : 1.0;
  };
  for (std::size_t j = 0; j < n; ++j) {
    for (std::size_t p = 0; p < d; ++p) {
      for (std::size_t q = 0; q < d; ++q) a[p][q] += feat(j, p) * feat(j, q);
      rhs[p] += feat(j, p) * labels(j, column);
    }
  }
  for (std::size_t p = 0; p < d; ++p) a[p][p] += 1e-8;  // ridge for stability
  // Gaussian elimination with partial pivoting.
  for (std::size_t p = 0; p < d; ++p) {
    std::size_t pivot = p;
    for (std::size_t r = p + 1; r < d; ++r)
      if (std::fabs(a[r][p]) > std::fabs(a[pivot][p])) pivot = r;
    std::swap(a[p], a[pivot]);
    std::swap(rhs[p], rhs[pivot]);
    for (std::size_t r = p + 1; r < d; ++r) {
      const double f = a[r][p] / a[p][p];
      for (std::size_t c = p; c < d; ++c) a[r][c] -= f * a[p][c];
      rhs[r] -= f * rhs[p];
    }
  }
  std::vector<double> w(d);
  for (std::size_t p = d; p-- > 0;) {
    double s = rhs[p];
    for (std::size_t c = p + 1; c < d; ++c) s -= a[p][c] * w[c];
    w[p] = s / a[p][p];
  }
  // Least squares fixes the direction; pick the intercept that minimizes
  // training error so class imbalance cannot sink an otherwise perfect fit.
  std::vector<std::pair<double, double>> scored(n);
  for (std::size_t j = 0; j < n; ++j) {
    double score = 0.0;
    for (std::size_t k = 0; k < d; ++k) score += w[k] * feat(j, k);
    scored[j] = {score, labels(j, column)};
  }
  std::sort(scored.begin(), scored.end());
  long long positives = 0;
  for (const auto& [_, y] : scored) positives += y == 1.0;
  // Threshold below every score: predict everything positive.
  long long correct = positives, best = positives;
  for (std::size_t j = 0; j < n; ++j) {
    // Move the threshold just above scored[j]: that sample flips to negative.
    correct += scored[j].second == 1.0 ? -1 : 1;
    best = std::max(best, correct);
  }
  return static_cast<double>(best) / static_cast<double>(n);
}

}  // namespace testsupport
