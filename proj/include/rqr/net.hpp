#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

namespace rqr {

enum class Activation { identity, relu };

struct LayerSpec {
  std::size_t input_dim = 0;
  std::size_t output_dim = 0;
  Activation activation = Activation::identity;
};

/// Throws std::invalid_argument unless dims are >= 1 and consecutive layers
/// chain (layer k output_dim == layer k+1 input_dim).
void validate_chain(std::span<const LayerSpec> specs);

/// Dense feedforward network; weights are row-major output_dim x input_dim.
struct MlpModel {
  std::vector<LayerSpec> layers;
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  std::size_t input_dim() const { return layers.front().input_dim; }
  std::size_t output_dim() const { return layers.back().output_dim; }
  std::size_t parameter_count() const;
  bool all_finite() const;
};

/// Parameter-shaped accumulator, congruent with an MlpModel.
struct Gradients {
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  static Gradients zeros_like(const MlpModel& model);
  void reset();
  bool all_finite() const;
};

/// ADAM accumulators plus the optimizer constants. t counts completed steps.
struct AdamState {
  double learning_rate = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m_weights, v_weights;
  std::vector<std::vector<double>> m_biases, v_biases;

  static AdamState init(const MlpModel& model, double learning_rate);
};

/// Weights uniform in [-1/sqrt(fan_in), +1/sqrt(fan_in)] from the seeded
/// stream; biases zero. Deterministic for a fixed seed.
MlpModel init_model(std::span<const LayerSpec> specs, std::uint64_t seed);

/// Scalar prediction of a model whose final layer has output_dim 1. Pure.
double forward(const MlpModel& model, std::span<const double> x);

/// d(prediction)/d(theta) scaled by `upstream`. The relu subgradient at
/// exactly zero is zero.
Gradients backward(const MlpModel& model, std::span<const double> x,
                   double upstream);

/// Reusable activation/delta buffers for tight training loops.
struct BackpropWorkspace {
  std::vector<std::vector<double>> post;  // post[k]: activations after layer k
  std::vector<double> delta_a, delta_b;
};

double forward(const MlpModel& model, std::span<const double> x,
               BackpropWorkspace& ws);

/// Accumulates upstream * d(prediction)/d(theta) into `grads`, reusing the
/// activations recorded by the preceding forward(model, x, ws) call.
void backward_accumulate(const MlpModel& model, std::span<const double> x,
                         double upstream, Gradients& grads,
                         BackpropWorkspace& ws);

/// Standard ADAM update with bias correction; increments state.t by one.
/// Non-finite gradients raise NumericError and leave model and state intact.
void adam_step(MlpModel& model, const Gradients& grads, AdamState& state);

}  // namespace rqr
