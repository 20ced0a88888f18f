#include "rqr/trainers.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "rqr/errors.hpp"
#include "rqr/rng.hpp"

namespace rqr {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::qr: return "qr";
    case Method::tqr: return "tqr";
    case Method::rcp: return "rcp";
    case Method::beta_qr: return "beta_qr";
  }
  return "qr";
}

Method method_from_name(std::string_view name) {
  if (name == "qr") return Method::qr;
  if (name == "tqr") return Method::tqr;
  if (name == "rcp") return Method::rcp;
  if (name == "beta_qr") return Method::beta_qr;
  throw std::invalid_argument("unknown method '" + std::string(name) + "'");
}

namespace {

std::size_t effective_batch(std::size_t batch_size, std::size_t n) {
  return (batch_size == 0 || batch_size >= n) ? n : batch_size;
}

// Cosine-annealed step size for epoch (or outer round) t of T: lr_decay
// interpolates between a constant rate and full decay to zero at the budget.
double annealed_lr(const TrainConfig& cfg, std::size_t t, std::size_t total) {
  if (cfg.lr_decay == 0.0) return cfg.learning_rate;
  const double frac = total > 1 ? static_cast<double>(t) / static_cast<double>(total - 1)
                                : 1.0;
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
  return cfg.learning_rate * (1.0 - cfg.lr_decay + cfg.lr_decay * cosine);
}

std::size_t kept_per_batch(std::size_t trim_count, std::size_t batch, std::size_t n) {
  if (batch == n) return trim_count;
  const auto k = static_cast<std::size_t>(
      static_cast<double>(trim_count) * static_cast<double>(batch) /
      static_cast<double>(n));
  // tail batches smaller than the nominal size keep at least one sample
  return std::max<std::size_t>(k, 1);
}

}  // namespace

void TrainConfig::validate(std::size_t n) const {
  if (alphas.empty())
    throw std::invalid_argument("at least one quantile level is required");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (!(learning_rate > 0.0))
    throw std::invalid_argument("learning_rate must be positive");
  if (lr_decay < 0.0 || lr_decay > 1.0)
    throw std::invalid_argument("lr_decay must be in [0, 1]");
  if (!(convergence_tol > 0.0))
    throw std::invalid_argument("convergence_tol must be positive");
  switch (method) {
    case Method::qr:
      break;
    case Method::tqr: {
      if (trim_count < 1) throw std::invalid_argument("trim_count must be >= 1");
      if (trim_count > n)
        throw std::invalid_argument("trim_count exceeds dataset size");
      const std::size_t b = effective_batch(batch_size, n);
      if (b < n && static_cast<std::size_t>(static_cast<double>(trim_count) *
                                            static_cast<double>(b) /
                                            static_cast<double>(n)) == 0)
        throw std::invalid_argument(
            "trim fraction rounds to zero kept samples per batch");
      break;
    }
    case Method::rcp:
      if (!(lambda > 0.0)) throw std::invalid_argument("lambda must be positive");
      if (!(gamma_lr > 0.0))
        throw std::invalid_argument("gamma_lr must be positive");
      if (outer_iters < 1)
        throw std::invalid_argument("outer_iters must be >= 1");
      if (inner_steps < 1)
        throw std::invalid_argument("inner_steps must be >= 1");
      if (effective_batch(batch_size, n) != n)
        throw std::invalid_argument(
            "rcp requires full-batch training (per-observation shifts need "
            "stable indices)");
      break;
    case Method::beta_qr:
      beta_cfg.validate();
      break;
  }
}

TrimSelection select_smallest_errors(std::span<const double> errors,
                                     std::size_t count) {
  if (count == 0)
    throw std::invalid_argument("selection count must be >= 1");
  if (count > errors.size())
    throw std::invalid_argument("selection count exceeds sample count");
  std::vector<std::size_t> order(errors.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::nth_element(order.begin(), order.begin() + (count - 1), order.end(),
                   [&](std::size_t a, std::size_t b) {
                     if (errors[a] != errors[b]) return errors[a] < errors[b];
                     return a < b;
                   });
  TrimSelection sel;
  sel.indices.assign(order.begin(), order.begin() + count);
  std::sort(sel.indices.begin(), sel.indices.end());
  sel.threshold_error = errors[sel.indices[0]];
  for (std::size_t i : sel.indices)
    sel.threshold_error = std::max(sel.threshold_error, errors[i]);
  return sel;
}

double FittedQuantile::predict(std::span<const double> x) const {
  if (!scaler.active) return forward(net, x);
  std::vector<double> z(x.size());
  scaler.transform_features(x, z);
  return scaler.inverse_response(forward(net, z));
}

const FittedQuantile& FitResult::at(double alpha) const {
  for (const auto& f : fits)
    if (std::abs(f.alpha - alpha) < 1e-12) return f;
  throw std::invalid_argument("no fit for alpha " + std::to_string(alpha));
}

namespace {

// Standardized copy of the training set shared by every alpha of one run.
struct Prepared {
  Matrix xs;
  std::vector<double> ys;
  Standardizer scaler;
};

Prepared prepare(const Dataset& data, const TrainConfig& cfg) {
  Prepared p;
  p.scaler = cfg.standardize ? Standardizer::fit(data)
                             : Standardizer::identity(data.dim());
  p.xs = Matrix::zeros(data.size(), data.dim());
  p.ys.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    p.scaler.transform_features(data.features.row(i), p.xs.row(i));
    p.ys[i] = p.scaler.transform_response(data.responses[i]);
  }
  return p;
}

std::uint64_t alpha_seed(std::uint64_t seed, double alpha) {
  // Depends only on (seed, alpha), so fitting levels jointly or in separate
  // runs produces identical per-level trajectories.
  return mix_seed(seed, std::bit_cast<std::uint64_t>(alpha));
}

void shuffle_indices(std::vector<std::size_t>& idx, std::mt19937_64& rng) {
  for (std::size_t i = idx.size(); i-- > 1;) {
    const std::size_t j = rng() % (i + 1);
    std::swap(idx[i], idx[j]);
  }
}

void check_finite_loss(double loss, std::size_t epoch) {
  if (!std::isfinite(loss))
    throw NumericError("non-finite training loss at epoch " +
                       std::to_string(epoch));
}

enum class SgdLoss { pinball, beta_pinball };

// Mini-batch ADAM on a mean per-sample loss; covers plain QR and beta-QR.
FittedQuantile run_sgd(const Prepared& prep, std::span<const LayerSpec> specs,
                       const TrainConfig& cfg, QuantileLevel alpha,
                       SgdLoss loss_kind, const TrainHooks* hooks) {
  const std::size_t n = prep.ys.size();
  const std::size_t batch = effective_batch(cfg.batch_size, n);
  const std::uint64_t seed = alpha_seed(cfg.seed, alpha.alpha);

  FittedQuantile fit;
  fit.alpha = alpha.alpha;
  fit.scaler = prep.scaler;
  fit.net = init_model(specs, seed);
  AdamState adam = AdamState::init(fit.net, cfg.learning_rate);
  Gradients grads = Gradients::zeros_like(fit.net);
  BackpropWorkspace ws;
  auto rng_batch = make_stream(seed, "batch");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  const auto sample_loss = [&](double r) {
    return loss_kind == SgdLoss::pinball ? pinball(r, alpha)
                                         : beta_pinball(r, alpha, cfg.beta_cfg);
  };
  const auto sample_dr = [&](double r) {
    return loss_kind == SgdLoss::pinball
               ? pinball_dr(r, alpha)
               : beta_pinball_dr(r, alpha, cfg.beta_cfg);
  };

  double prev_loss = std::numeric_limits<double>::infinity();
  fit.stop_reason = "epoch_budget";
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.learning_rate = annealed_lr(cfg, epoch, cfg.epochs);
    if (batch < n) shuffle_indices(order, rng_batch);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(start + batch, n);
      const double inv = 1.0 / static_cast<double>(stop - start);
      grads.reset();
      for (std::size_t k = start; k < stop; ++k) {
        const std::size_t i = order[k];
        const double pred = forward(fit.net, prep.xs.row(i), ws);
        const double r = prep.ys[i] - pred;
        loss_sum += sample_loss(r);
        backward_accumulate(fit.net, prep.xs.row(i), -sample_dr(r) * inv,
                            grads, ws);
      }
      adam_step(fit.net, grads, adam);
      if (hooks && hooks->on_step) hooks->on_step(alpha.alpha, adam.t, fit.net);
    }
    const double epoch_loss = loss_sum / static_cast<double>(n);
    check_finite_loss(epoch_loss, epoch);
    fit.trajectory.push_back(epoch_loss);
    if (std::abs(epoch_loss - prev_loss) < cfg.convergence_tol) {
      fit.stop_reason = "converged";
      break;
    }
    prev_loss = epoch_loss;
  }
  fit.final_loss = fit.trajectory.back();
  return fit;
}

FittedQuantile run_tqr(const Prepared& prep, std::span<const LayerSpec> specs,
                       const TrainConfig& cfg, QuantileLevel alpha,
                       const TrainHooks* hooks) {
  const std::size_t n = prep.ys.size();
  const std::size_t batch = effective_batch(cfg.batch_size, n);
  const std::uint64_t seed = alpha_seed(cfg.seed, alpha.alpha);

  FittedQuantile fit;
  fit.alpha = alpha.alpha;
  fit.scaler = prep.scaler;
  fit.net = init_model(specs, seed);
  AdamState adam = AdamState::init(fit.net, cfg.learning_rate);
  Gradients grads = Gradients::zeros_like(fit.net);
  BackpropWorkspace ws;
  auto rng_batch = make_stream(seed, "batch");
  auto rng_trim = make_stream(seed, "trim");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<double> errors;
  std::vector<std::size_t> kept;
  bool first_iteration = true;

  double prev_loss = std::numeric_limits<double>::infinity();
  fit.stop_reason = "epoch_budget";
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    adam.learning_rate = annealed_lr(cfg, epoch, cfg.epochs);
    if (batch < n) shuffle_indices(order, rng_batch);
    double loss_sum = 0.0;
    std::size_t loss_count = 0;
    for (std::size_t start = 0; start < n; start += batch) {
      const std::size_t stop = std::min(start + batch, n);
      const std::size_t bsize = stop - start;
      const std::size_t keep = kept_per_batch(cfg.trim_count, bsize, n);

      kept.clear();
      if (first_iteration) {
        // the first update trains on a seeded random subset of size C
        std::vector<std::size_t> pool(bsize);
        std::iota(pool.begin(), pool.end(), std::size_t{0});
        shuffle_indices(pool, rng_trim);
        kept.assign(pool.begin(), pool.begin() + keep);
        std::sort(kept.begin(), kept.end());
        first_iteration = false;
      } else {
        errors.assign(bsize, 0.0);
        for (std::size_t k = 0; k < bsize; ++k) {
          const std::size_t i = order[start + k];
          const double r = prep.ys[i] - forward(fit.net, prep.xs.row(i), ws);
          errors[k] = pinball(r, alpha);
        }
        kept = select_smallest_errors(errors, keep).indices;
      }

      const double inv = 1.0 / static_cast<double>(kept.size());
      grads.reset();
      for (std::size_t k : kept) {
        const std::size_t i = order[start + k];
        const double pred = forward(fit.net, prep.xs.row(i), ws);
        const double r = prep.ys[i] - pred;
        loss_sum += pinball(r, alpha);
        backward_accumulate(fit.net, prep.xs.row(i),
                            -pinball_dr(r, alpha) * inv, grads, ws);
      }
      loss_count += kept.size();
      adam_step(fit.net, grads, adam);
      if (hooks && hooks->on_step) hooks->on_step(alpha.alpha, adam.t, fit.net);
    }
    const double epoch_loss = loss_sum / static_cast<double>(loss_count);
    check_finite_loss(epoch_loss, epoch);
    fit.trajectory.push_back(epoch_loss);
    if (std::abs(epoch_loss - prev_loss) < cfg.convergence_tol) {
      fit.stop_reason = "converged";
      break;
    }
    prev_loss = epoch_loss;
  }
  fit.final_loss = fit.trajectory.back();

  // final smallest-error subset over the whole training set
  errors.assign(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    const double r = prep.ys[i] - forward(fit.net, prep.xs.row(i), ws);
    errors[i] = pinball(r, alpha);
  }
  fit.kept_indices = select_smallest_errors(errors, cfg.trim_count).indices;
  return fit;
}

FittedQuantile run_rcp(const Prepared& prep, std::span<const LayerSpec> specs,
                       const TrainConfig& cfg, QuantileLevel alpha,
                       const TrainHooks* hooks) {
  const std::size_t n = prep.ys.size();
  const std::uint64_t seed = alpha_seed(cfg.seed, alpha.alpha);

  FittedQuantile fit;
  fit.alpha = alpha.alpha;
  fit.scaler = prep.scaler;
  fit.net = init_model(specs, seed);
  AdamState adam = AdamState::init(fit.net, cfg.learning_rate);
  Gradients grads = Gradients::zeros_like(fit.net);
  BackpropWorkspace ws;

  std::vector<double> gammas(n, 0.0);
  const double inv = 1.0 / static_cast<double>(n);

  double prev_obj = std::numeric_limits<double>::infinity();
  fit.stop_reason = "epoch_budget";
  for (std::size_t round = 0; round < cfg.outer_iters; ++round) {
    adam.learning_rate = annealed_lr(cfg, round, cfg.outer_iters);
    // theta block: ADAM on the smooth shifted-pinball term with gammas fixed
    for (std::size_t s = 0; s < cfg.inner_steps; ++s) {
      grads.reset();
      double loss_sum = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double pred = forward(fit.net, prep.xs.row(i), ws);
        const double u = prep.ys[i] - pred - gammas[i];
        loss_sum += pinball(u, alpha);
        backward_accumulate(fit.net, prep.xs.row(i),
                            -pinball_dr(u, alpha) * inv, grads, ws);
      }
      check_finite_loss(loss_sum * inv, round);
      adam_step(fit.net, grads, adam);
      if (hooks && hooks->on_step) hooks->on_step(alpha.alpha, adam.t, fit.net);
    }
    // gamma block: proximal-gradient step per observation
    for (std::size_t i = 0; i < n; ++i) {
      const double u =
          prep.ys[i] - forward(fit.net, prep.xs.row(i), ws) - gammas[i];
      const double stepped = gammas[i] + cfg.gamma_lr * pinball_dr(u, alpha);
      gammas[i] = soft_threshold(stepped, cfg.lambda * cfg.gamma_lr);
    }
    // full objective (per-sample normalization) after both blocks
    double obj = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double u =
          prep.ys[i] - forward(fit.net, prep.xs.row(i), ws) - gammas[i];
      obj += pinball(u, alpha) + cfg.lambda * std::abs(gammas[i]);
    }
    obj *= inv;
    check_finite_loss(obj, round);
    if (obj > prev_obj + 1e-8) fit.descent_violations += 1;
    fit.trajectory.push_back(obj);
    if (std::abs(obj - prev_obj) < cfg.convergence_tol) {
      fit.stop_reason = "converged";
      break;
    }
    prev_obj = obj;
  }
  fit.final_loss = fit.trajectory.back();
  fit.gammas = std::move(gammas);
  return fit;
}

FitResult run_all(const Dataset& data, std::span<const LayerSpec> specs,
                  const TrainConfig& cfg, Method method,
                  const TrainHooks* hooks) {
  data.validate();
  validate_chain(specs);
  if (specs.back().output_dim != 1)
    throw std::invalid_argument("quantile models must have scalar output");
  if (specs.front().input_dim != data.dim())
    throw std::invalid_argument("model input_dim does not match dataset");
  TrainConfig effective = cfg;
  effective.method = method;
  effective.validate(data.size());

  const Prepared prep = prepare(data, effective);
  FitResult result;
  result.method = method;
  result.label = std::string(method_name(method));
  result.config = effective;
  result.seed = effective.seed;
  for (QuantileLevel alpha : effective.alphas) {
    switch (method) {
      case Method::qr:
        result.fits.push_back(
            run_sgd(prep, specs, effective, alpha, SgdLoss::pinball, hooks));
        break;
      case Method::beta_qr:
        result.fits.push_back(run_sgd(prep, specs, effective, alpha,
                                      SgdLoss::beta_pinball, hooks));
        break;
      case Method::tqr:
        result.fits.push_back(run_tqr(prep, specs, effective, alpha, hooks));
        break;
      case Method::rcp:
        result.fits.push_back(run_rcp(prep, specs, effective, alpha, hooks));
        break;
    }
  }
  return result;
}

}  // namespace

FitResult train_qr(const Dataset& data, std::span<const LayerSpec> specs,
                   const TrainConfig& cfg, const TrainHooks* hooks) {
  return run_all(data, specs, cfg, Method::qr, hooks);
}

FitResult train_tqr(const Dataset& data, std::span<const LayerSpec> specs,
                    const TrainConfig& cfg, const TrainHooks* hooks) {
  return run_all(data, specs, cfg, Method::tqr, hooks);
}

FitResult train_rcp(const Dataset& data, std::span<const LayerSpec> specs,
                    const TrainConfig& cfg, const TrainHooks* hooks) {
  return run_all(data, specs, cfg, Method::rcp, hooks);
}

FitResult train_beta_qr(const Dataset& data, std::span<const LayerSpec> specs,
                        const TrainConfig& cfg, const TrainHooks* hooks) {
  return run_all(data, specs, cfg, Method::beta_qr, hooks);
}

FitResult train(const Dataset& data, std::span<const LayerSpec> specs,
                const TrainConfig& cfg, const TrainHooks* hooks) {
  return run_all(data, specs, cfg, cfg.method, hooks);
}

FitResult fit_reference(const Dataset& data, std::span<const LayerSpec> specs,
                        const TrainConfig& cfg) {
  if (!data.inlier_mask)
    throw std::invalid_argument("reference fit requires an inlier mask");
  Dataset inliers = data.inlier_subset();
  if (inliers.size() < 2)
    throw std::invalid_argument("inlier mask selects fewer than 2 samples");
  FitResult result = run_all(inliers, specs, cfg, Method::qr, nullptr);
  result.label = "reference";
  return result;
}

}  // namespace rqr
