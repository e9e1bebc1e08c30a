#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "moonlite/errors.hpp"
#include "moonlite/matrix.hpp"
#include "moonlite/rng.hpp"
#include "moonlite/serialize.hpp"

namespace moonlite {

enum class Activation { Tanh, Relu };

inline std::string to_string(Activation a) { return a == Activation::Tanh ? "tanh" : "relu"; }

inline Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::Tanh;
  if (s == "relu") return Activation::Relu;
  throw config_error("unknown activation \"" + s + "\" (expected tanh or relu)");
}

// Fully connected multi-output net. Hidden layers apply the configured
// nonlinearity; the output layer stays linear so scores range over all reals
// and the sign threshold at 0 is meaningful.
struct MlpModel {
  std::vector<std::size_t> layer_dims;          // input, hidden..., output
  std::vector<Matrix> weights;                  // weights[l]: dims[l] x dims[l+1]
  std::vector<std::vector<double>> biases;      // biases[l]: dims[l+1]
  Activation activation = Activation::Tanh;

  std::size_t num_layers() const { return weights.size(); }
  std::size_t input_dim() const { return layer_dims.front(); }
  std::size_t output_dim() const { return layer_dims.back(); }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += weights[l].size() + biases[l].size();
    return n;
  }

  friend bool operator==(const MlpModel& a, const MlpModel& b) {
    return a.layer_dims == b.layer_dims && a.weights == b.weights && a.biases == b.biases &&
           a.activation == b.activation;
  }
};

// Glorot-uniform weights, zero biases. Bit-identical for a given seed.
inline MlpModel init_model(std::vector<std::size_t> layer_dims, Activation activation,
                           std::uint64_t seed) {
  if (layer_dims.size() < 2) throw config_error("init_model: need at least input and output dims");
  for (std::size_t d : layer_dims)
    if (d == 0) throw config_error("init_model: zero layer dimension");
  MlpModel model;
  model.layer_dims = std::move(layer_dims);
  model.activation = activation;
  Rng rng = make_rng(seed);
  for (std::size_t l = 0; l + 1 < model.layer_dims.size(); ++l) {
    const std::size_t fan_in = model.layer_dims[l], fan_out = model.layer_dims[l + 1];
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    Matrix w(fan_in, fan_out);
    for (double& v : w.flat()) v = uniform_range(rng, -bound, bound);
    model.weights.push_back(std::move(w));
    model.biases.emplace_back(fan_out, 0.0);
  }
  return model;
}

namespace detail {
inline void apply_activation(Matrix& z, Activation a) {
  if (a == Activation::Tanh) {
    for (double& v : z.flat()) v = std::tanh(v);
  } else {
    for (double& v : z.flat()) v = v > 0.0 ? v : 0.0;
  }
}

// Derivative of the hidden nonlinearity expressed through its own output.
inline double activation_derivative(double activated, Activation a) {
  return a == Activation::Tanh ? 1.0 - activated * activated : (activated > 0.0 ? 1.0 : 0.0);
}
}  // namespace detail

// Activations captured during a forward pass, reused by backward.
struct ForwardTrace {
  std::vector<Matrix> layer_inputs;  // layer_inputs[l] feeds weights[l]; [0] is the batch input
  Matrix output;                     // final linear layer output
};

inline ForwardTrace forward_trace(const MlpModel& model, const Matrix& inputs) {
  if (inputs.cols() != model.input_dim())
    throw shape_error("forward: input width " + std::to_string(inputs.cols()) +
                      ", model expects " + std::to_string(model.input_dim()));
  ForwardTrace trace;
  trace.layer_inputs.reserve(model.num_layers());
  trace.layer_inputs.push_back(inputs);
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    Matrix z = matmul(trace.layer_inputs.back(), model.weights[l]);
    add_row_vector(z, model.biases[l]);
    if (l + 1 < model.num_layers()) {
      detail::apply_activation(z, model.activation);
      trace.layer_inputs.push_back(std::move(z));
    } else {
      trace.output = std::move(z);
    }
  }
  return trace;
}

inline Matrix forward(const MlpModel& model, const Matrix& inputs) {
  return forward_trace(model, inputs).output;
}

struct Gradients {
  std::vector<Matrix> weights;
  std::vector<std::vector<double>> biases;
};

// Reverse-mode gradients of the outputs contracted with output_gradient.
inline Gradients backward(const MlpModel& model, const ForwardTrace& trace,
                          const Matrix& output_gradient) {
  if (!output_gradient.same_shape(trace.output))
    throw shape_error("backward: output gradient shape mismatch");
  const std::size_t layers = model.num_layers();
  Gradients grads;
  grads.weights.resize(layers);
  grads.biases.resize(layers);
  Matrix delta = output_gradient;
  for (std::size_t l = layers; l-- > 0;) {
    const Matrix& layer_in = trace.layer_inputs[l];
    grads.weights[l] = matmul_at_b(layer_in, delta);
    std::vector<double> db(delta.cols(), 0.0);
    for (std::size_t j = 0; j < delta.rows(); ++j) {
      auto row = delta.row(j);
      for (std::size_t i = 0; i < delta.cols(); ++i) db[i] += row[i];
    }
    grads.biases[l] = std::move(db);
    if (l > 0) {
      Matrix upstream = matmul_a_bt(delta, model.weights[l]);
      for (std::size_t j = 0; j < upstream.rows(); ++j) {
        auto u = upstream.row(j);
        auto a = layer_in.row(j);
        for (std::size_t i = 0; i < upstream.cols(); ++i)
          u[i] *= detail::activation_derivative(a[i], model.activation);
      }
      delta = std::move(upstream);
    }
  }
  return grads;
}

inline Gradients backward(const MlpModel& model, const Matrix& inputs,
                          const Matrix& output_gradient) {
  return backward(model, forward_trace(model, inputs), output_gradient);
}

struct RmsPropConfig {
  double rho = 0.9;
  double epsilon = 1e-8;
  double base_lr = 1e-3;
  double decay_gamma = 1e-4;
  double decay_power = 0.75;
};

struct OptimizerState {
  RmsPropConfig config;
  std::vector<Matrix> weight_acc;               // running mean of squared gradients
  std::vector<std::vector<double>> bias_acc;
  std::uint64_t step_count = 0;
};

inline OptimizerState make_optimizer(const MlpModel& model, const RmsPropConfig& config) {
  if (!(config.rho > 0.0 && config.rho < 1.0)) throw config_error("rmsprop: rho outside (0,1)");
  if (!(config.epsilon > 0.0)) throw config_error("rmsprop: epsilon must be positive");
  if (!(config.base_lr > 0.0)) throw config_error("rmsprop: base_lr must be positive");
  if (!(config.decay_gamma >= 0.0)) throw config_error("rmsprop: decay_gamma must be >= 0");
  if (!(config.decay_power > 0.0)) throw config_error("rmsprop: decay_power must be positive");
  OptimizerState state;
  state.config = config;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    state.weight_acc.emplace_back(model.weights[l].rows(), model.weights[l].cols());
    state.bias_acc.emplace_back(model.biases[l].size(), 0.0);
  }
  return state;
}

// Inverse decay schedule: base_lr * (1 + gamma * step)^(-power).
inline double effective_lr(const OptimizerState& state) {
  return state.config.base_lr *
         std::pow(1.0 + state.config.decay_gamma * static_cast<double>(state.step_count),
                  -state.config.decay_power);
}

// One RMSProp update over every parameter. Validates gradients up front so a
// non-finite batch aborts without touching the model.
inline void rmsprop_step(OptimizerState& state, MlpModel& model, const Gradients& grads) {
  if (grads.weights.size() != model.num_layers() || grads.biases.size() != model.num_layers())
    throw shape_error("rmsprop_step: gradient layer count mismatch");
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    if (!grads.weights[l].same_shape(model.weights[l]) ||
        grads.biases[l].size() != model.biases[l].size())
      throw shape_error("rmsprop_step: gradient shape mismatch at layer " + std::to_string(l));
    for (double g : grads.weights[l].flat())
      if (!std::isfinite(g)) throw numeric_error("rmsprop_step: non-finite weight gradient");
    for (double g : grads.biases[l])
      if (!std::isfinite(g)) throw numeric_error("rmsprop_step: non-finite bias gradient");
  }
  const double lr = effective_lr(state);
  const double rho = state.config.rho, eps = state.config.epsilon;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    auto acc = state.weight_acc[l].flat();
    auto w = model.weights[l].flat();
    auto g = grads.weights[l].flat();
    for (std::size_t k = 0; k < w.size(); ++k) {
      acc[k] = rho * acc[k] + (1.0 - rho) * g[k] * g[k];
      w[k] -= lr * g[k] / (std::sqrt(acc[k]) + eps);
    }
    auto& bacc = state.bias_acc[l];
    auto& b = model.biases[l];
    const auto& gb = grads.biases[l];
    for (std::size_t k = 0; k < b.size(); ++k) {
      bacc[k] = rho * bacc[k] + (1.0 - rho) * gb[k] * gb[k];
      b[k] -= lr * gb[k] / (std::sqrt(bacc[k]) + eps);
    }
  }
  ++state.step_count;
}

// --- checkpoint format -----------------------------------------------------
// Line 1: JSON header {format, version, layer_dims, activation} + '\n'.
// Then, raw little-endian f64: each weight matrix row-major in layer order,
// then each bias vector in layer order.

inline constexpr const char* kCheckpointFormat = "moonlite-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline void save_model(const MlpModel& model, const std::filesystem::path& path) {
  nlohmann::json header{{"format", kCheckpointFormat},
                        {"version", kCheckpointVersion},
                        {"layer_dims", model.layer_dims},
                        {"activation", to_string(model.activation)}};
  std::string out = header.dump();
  out.push_back('\n');
  for (const Matrix& w : model.weights)
    for (double v : w.flat()) append_f64_le(out, v);
  for (const auto& b : model.biases)
    for (double v : b) append_f64_le(out, v);
  write_file_atomic(path, out);
}

inline MlpModel load_model(const std::filesystem::path& path) {
  const std::string data = slurp_file(path);
  const std::size_t newline = data.find('\n');
  if (newline == std::string::npos)
    throw format_error("checkpoint " + path.string() + ": missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(data.substr(0, newline));
  } catch (const nlohmann::json::exception& e) {
    throw format_error("checkpoint " + path.string() + ": bad header JSON: " + e.what());
  }
  MlpModel model;
  try {
    if (header.at("format").get<std::string>() != kCheckpointFormat)
      throw format_error("checkpoint " + path.string() + ": wrong format tag");
    if (header.at("version").get<int>() != kCheckpointVersion)
      throw format_error("checkpoint " + path.string() + ": unsupported version");
    model.layer_dims = header.at("layer_dims").get<std::vector<std::size_t>>();
    model.activation = activation_from_string(header.at("activation").get<std::string>());
  } catch (const nlohmann::json::exception& e) {
    throw format_error("checkpoint " + path.string() + ": bad header: " + e.what());
  }
  if (model.layer_dims.size() < 2)
    throw format_error("checkpoint " + path.string() + ": fewer than two layer dims");
  for (std::size_t d : model.layer_dims)
    if (d == 0) throw format_error("checkpoint " + path.string() + ": zero layer dim");
  std::size_t expected = 0;
  for (std::size_t l = 0; l + 1 < model.layer_dims.size(); ++l)
    expected += model.layer_dims[l] * model.layer_dims[l + 1] + model.layer_dims[l + 1];
  const std::size_t payload_at = newline + 1;
  if (data.size() - payload_at != expected * 8)
    throw format_error("checkpoint " + path.string() + ": payload is " +
                       std::to_string(data.size() - payload_at) + " bytes at offset " +
                       std::to_string(payload_at) + ", expected " + std::to_string(expected * 8));
  const unsigned char* p = reinterpret_cast<const unsigned char*>(data.data()) + payload_at;
  for (std::size_t l = 0; l + 1 < model.layer_dims.size(); ++l) {
    Matrix w(model.layer_dims[l], model.layer_dims[l + 1]);
    for (double& v : w.flat()) {
      v = read_f64_le(p);
      p += 8;
    }
    model.weights.push_back(std::move(w));
  }
  for (std::size_t l = 0; l + 1 < model.layer_dims.size(); ++l) {
    std::vector<double> b(model.layer_dims[l + 1]);
    for (double& v : b) {
      v = read_f64_le(p);
      p += 8;
    }
    model.biases.push_back(std::move(b));
  }
  return model;
}

}  // namespace moonlite
