#include "rqr/net.hpp"

#include <cmath>
#include <stdexcept>

#include "rqr/errors.hpp"
#include "rqr/rng.hpp"

namespace rqr {

namespace {

bool vec_finite(const std::vector<double>& v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

void check_input(const MlpModel& model, std::span<const double> x) {
  if (model.layers.empty()) throw std::invalid_argument("model has no layers");
  if (x.size() != model.input_dim())
    throw std::invalid_argument("input length does not match first layer input_dim");
}

}  // namespace

void validate_chain(std::span<const LayerSpec> specs) {
  if (specs.empty()) throw std::invalid_argument("layer list is empty");
  for (std::size_t k = 0; k < specs.size(); ++k) {
    if (specs[k].input_dim < 1 || specs[k].output_dim < 1)
      throw std::invalid_argument("layer dims must be >= 1");
    if (k > 0 && specs[k].input_dim != specs[k - 1].output_dim)
      throw std::invalid_argument("consecutive layer dims do not chain");
  }
}

std::size_t MlpModel::parameter_count() const {
  std::size_t n = 0;
  for (std::size_t k = 0; k < layers.size(); ++k)
    n += weights[k].size() + biases[k].size();
  return n;
}

bool MlpModel::all_finite() const {
  for (std::size_t k = 0; k < layers.size(); ++k)
    if (!vec_finite(weights[k]) || !vec_finite(biases[k])) return false;
  return true;
}

Gradients Gradients::zeros_like(const MlpModel& model) {
  Gradients g;
  g.weights.reserve(model.layers.size());
  g.biases.reserve(model.layers.size());
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    g.weights.emplace_back(model.weights[k].size(), 0.0);
    g.biases.emplace_back(model.biases[k].size(), 0.0);
  }
  return g;
}

void Gradients::reset() {
  for (auto& w : weights) std::fill(w.begin(), w.end(), 0.0);
  for (auto& b : biases) std::fill(b.begin(), b.end(), 0.0);
}

bool Gradients::all_finite() const {
  for (const auto& w : weights)
    if (!vec_finite(w)) return false;
  for (const auto& b : biases)
    if (!vec_finite(b)) return false;
  return true;
}

AdamState AdamState::init(const MlpModel& model, double learning_rate) {
  AdamState s;
  s.learning_rate = learning_rate;
  for (std::size_t k = 0; k < model.layers.size(); ++k) {
    s.m_weights.emplace_back(model.weights[k].size(), 0.0);
    s.v_weights.emplace_back(model.weights[k].size(), 0.0);
    s.m_biases.emplace_back(model.biases[k].size(), 0.0);
    s.v_biases.emplace_back(model.biases[k].size(), 0.0);
  }
  return s;
}

MlpModel init_model(std::span<const LayerSpec> specs, std::uint64_t seed) {
  validate_chain(specs);
  MlpModel model;
  model.layers.assign(specs.begin(), specs.end());
  auto rng = make_stream(seed, "init");
  for (const LayerSpec& spec : specs) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.input_dim));
    std::vector<double> w(spec.output_dim * spec.input_dim);
    for (double& v : w) v = uniform_in(rng, -bound, bound);
    model.weights.push_back(std::move(w));
    model.biases.emplace_back(spec.output_dim, 0.0);
  }
  return model;
}

double forward(const MlpModel& model, std::span<const double> x,
               BackpropWorkspace& ws) {
  check_input(model, x);
  if (model.output_dim() != 1)
    throw std::invalid_argument("forward requires a scalar-output model");

  const std::size_t L = model.layers.size();
  ws.post.resize(L);
  std::span<const double> in = x;
  for (std::size_t k = 0; k < L; ++k) {
    const LayerSpec& spec = model.layers[k];
    auto& out = ws.post[k];
    out.assign(spec.output_dim, 0.0);
    const std::vector<double>& w = model.weights[k];
    for (std::size_t i = 0; i < spec.output_dim; ++i) {
      double acc = model.biases[k][i];
      const double* row = w.data() + i * spec.input_dim;
      for (std::size_t j = 0; j < spec.input_dim; ++j) acc += row[j] * in[j];
      out[i] = (spec.activation == Activation::relu && acc < 0.0) ? 0.0 : acc;
    }
    in = out;
  }
  return ws.post.back()[0];
}

double forward(const MlpModel& model, std::span<const double> x) {
  BackpropWorkspace ws;
  return forward(model, x, ws);
}

void backward_accumulate(const MlpModel& model, std::span<const double> x,
                         double upstream, Gradients& grads,
                         BackpropWorkspace& ws) {
  const std::size_t L = model.layers.size();
  // delta starts at the scalar output; relu derivative is recovered from the
  // recorded post-activation (post > 0 iff pre > 0; post == 0 gives 0).
  ws.delta_a.assign(1, upstream);
  std::vector<double>& delta = ws.delta_a;
  std::vector<double>& delta_prev = ws.delta_b;

  for (std::size_t k = L; k-- > 0;) {
    const LayerSpec& spec = model.layers[k];
    if (spec.activation == Activation::relu) {
      const auto& post = ws.post[k];
      for (std::size_t i = 0; i < spec.output_dim; ++i)
        if (post[i] <= 0.0) delta[i] = 0.0;
    }
    std::span<const double> in =
        (k == 0) ? x : std::span<const double>(ws.post[k - 1]);
    auto& gw = grads.weights[k];
    auto& gb = grads.biases[k];
    for (std::size_t i = 0; i < spec.output_dim; ++i) {
      const double d = delta[i];
      if (d == 0.0) continue;
      double* grow = gw.data() + i * spec.input_dim;
      for (std::size_t j = 0; j < spec.input_dim; ++j) grow[j] += d * in[j];
      gb[i] += d;
    }
    if (k == 0) break;
    delta_prev.assign(spec.input_dim, 0.0);
    const std::vector<double>& w = model.weights[k];
    for (std::size_t i = 0; i < spec.output_dim; ++i) {
      const double d = delta[i];
      if (d == 0.0) continue;
      const double* row = w.data() + i * spec.input_dim;
      for (std::size_t j = 0; j < spec.input_dim; ++j)
        delta_prev[j] += d * row[j];
    }
    std::swap(delta, delta_prev);
  }
}

Gradients backward(const MlpModel& model, std::span<const double> x,
                   double upstream) {
  BackpropWorkspace ws;
  forward(model, x, ws);
  Gradients grads = Gradients::zeros_like(model);
  backward_accumulate(model, x, upstream, grads, ws);
  return grads;
}

void adam_step(MlpModel& model, const Gradients& grads, AdamState& state) {
  if (grads.weights.size() != model.weights.size())
    throw std::invalid_argument("gradient shape does not match model");
  for (std::size_t k = 0; k < model.weights.size(); ++k)
    if (grads.weights[k].size() != model.weights[k].size() ||
        grads.biases[k].size() != model.biases[k].size())
      throw std::invalid_argument("gradient shape does not match model");
  if (!grads.all_finite())
    throw NumericError("adam_step: non-finite gradient");

  state.t += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));

  auto update = [&](std::vector<double>& param, const std::vector<double>& g,
                    std::vector<double>& m, std::vector<double>& v) {
    for (std::size_t i = 0; i < param.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      param[i] -= state.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
    }
  };
  for (std::size_t k = 0; k < model.weights.size(); ++k) {
    update(model.weights[k], grads.weights[k], state.m_weights[k], state.v_weights[k]);
    update(model.biases[k], grads.biases[k], state.m_biases[k], state.v_biases[k]);
  }
}

}  // namespace rqr
