#pragma once

#include <cstddef>

#include "moonlite/distribution.hpp"
#include "moonlite/matrix.hpp"
#include "moonlite/rng.hpp"

namespace moonlite {

// One mini-batch as seen by the loss: network outputs, +-1 labels of the same
// shape, and the per-attribute class weights.
struct LossBatch {
  const Matrix& predictions;
  const Matrix& labels;
  const AdaptationWeights& weights;
};

namespace detail {
inline void check_loss_batch(const LossBatch& batch) {
  require_same_shape(batch.predictions, batch.labels, "loss batch");
  if (batch.weights.size() != batch.labels.cols())
    throw shape_error("loss batch: weights cover " + std::to_string(batch.weights.size()) +
                      " attributes, labels have " + std::to_string(batch.labels.cols()));
  for (std::size_t j = 0; j < batch.labels.rows(); ++j)
    for (double y : batch.labels.row(j))
      if (y != 1.0 && y != -1.0) throw value_error("loss batch: label not in {-1,+1}");
}
}  // namespace detail

// Sum over samples and attributes of p(i|y) * (f_i - y_i)^2. With all weights
// at 1 this is the plain squared error between outputs and labels.
inline double moon_loss(const LossBatch& batch) {
  detail::check_loss_batch(batch);
  double total = 0.0;
  for (std::size_t j = 0; j < batch.labels.rows(); ++j) {
    auto f = batch.predictions.row(j);
    auto y = batch.labels.row(j);
    for (std::size_t i = 0; i < batch.labels.cols(); ++i) {
      const double r = f[i] - y[i];
      total += batch.weights.weight_for(i, y[i]) * r * r;
    }
  }
  return total;
}

// Exact derivative of moon_loss with respect to each prediction:
// 2 * p(i|y) * (f_i - y_i).
inline Matrix moon_gradient_weighted(const LossBatch& batch) {
  detail::check_loss_batch(batch);
  Matrix grad(batch.labels.rows(), batch.labels.cols());
  for (std::size_t j = 0; j < batch.labels.rows(); ++j) {
    auto f = batch.predictions.row(j);
    auto y = batch.labels.row(j);
    auto g = grad.row(j);
    for (std::size_t i = 0; i < batch.labels.cols(); ++i)
      g[i] = 2.0 * batch.weights.weight_for(i, y[i]) * (f[i] - y[i]);
  }
  return grad;
}

// Sampling realization of the same gradient: each entry keeps the full
// unweighted value 2*(f - y) with probability p(i|y) and is zeroed otherwise.
// One independent draw per (sample, attribute), consumed in row-major order.
// The expectation over draws equals moon_gradient_weighted.
inline Matrix moon_gradient_sampled(const LossBatch& batch, Rng& rng) {
  detail::check_loss_batch(batch);
  Matrix grad(batch.labels.rows(), batch.labels.cols());
  for (std::size_t j = 0; j < batch.labels.rows(); ++j) {
    auto f = batch.predictions.row(j);
    auto y = batch.labels.row(j);
    auto g = grad.row(j);
    for (std::size_t i = 0; i < batch.labels.cols(); ++i) {
      const bool keep = bernoulli(rng, batch.weights.weight_for(i, y[i]));
      g[i] = keep ? 2.0 * (f[i] - y[i]) : 0.0;
    }
  }
  return grad;
}

// Margin loss for the single-attribute baseline: max(0, 1 - y*f). Never
// combined with adaptation weights.
inline double hinge_loss(double prediction, double label) {
  if (label != 1.0 && label != -1.0) throw value_error("hinge_loss: label not in {-1,+1}");
  const double margin = 1.0 - label * prediction;
  return margin > 0.0 ? margin : 0.0;
}

// Subgradient of hinge_loss with respect to the prediction.
inline double hinge_gradient(double prediction, double label) {
  if (label != 1.0 && label != -1.0) throw value_error("hinge_gradient: label not in {-1,+1}");
  return 1.0 - label * prediction > 0.0 ? -label : 0.0;
}

}  // namespace moonlite
