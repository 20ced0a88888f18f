#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "rqr/data.hpp"
#include "rqr/losses.hpp"
#include "rqr/net.hpp"

namespace rqr {

enum class Method { qr, tqr, rcp, beta_qr };

std::string_view method_name(Method m);
Method method_from_name(std::string_view name);

struct TrainConfig {
  std::vector<QuantileLevel> alphas;
  Method method = Method::qr;
  std::size_t epochs = 1000;
  std::size_t batch_size = 0;  // 0 (or >= N) trains full-batch
  double learning_rate = 1e-2;
  double lr_decay = 0.0;  // cosine-annealing fraction: 0 constant, 1 full decay to 0
  std::uint64_t seed = 1;
  double convergence_tol = 1e-8;
  bool standardize = true;

  BetaConfig beta_cfg{};        // beta_qr
  std::size_t trim_count = 0;   // tqr: C, the kept-sample count
  double lambda = 0.1;          // rcp: L1 penalty weight
  double gamma_lr = 0.05;       // rcp: per-observation shift step size
  std::size_t outer_iters = 100;  // rcp: alternating rounds
  std::size_t inner_steps = 50;   // rcp: ADAM steps on theta per round

  void validate(std::size_t n) const;
};

/// Smallest-error subset; ties broken by ascending index, so the kept set is
/// a deterministic function of the error vector.
struct TrimSelection {
  std::vector<std::size_t> indices;  // ascending
  double threshold_error = 0.0;      // max error over the kept set
};

TrimSelection select_smallest_errors(std::span<const double> errors,
                                     std::size_t count);

/// One fitted quantile model plus its training record. The network operates
/// in standardized space when scaler.active; predict() maps back.
struct FittedQuantile {
  double alpha = 0.5;
  MlpModel net;
  Standardizer scaler;
  double final_loss = 0.0;
  std::vector<double> trajectory;  // per epoch (rcp: per outer round)
  std::string stop_reason;         // "epoch_budget" or "converged"
  std::vector<std::size_t> kept_indices;  // tqr: final smallest-error subset
  std::vector<double> gammas;             // rcp: final per-observation shifts
  int descent_violations = 0;             // rcp: objective increases observed

  double predict(std::span<const double> x) const;
};

struct FitResult {
  Method method = Method::qr;
  std::string label;
  TrainConfig config;
  std::uint64_t seed = 0;
  std::vector<FittedQuantile> fits;  // one per requested alpha, same order

  const FittedQuantile& at(double alpha) const;
};

/// Test/diagnostic taps into the optimization loop. on_step fires after every
/// ADAM update with the 1-based step count for that quantile's run.
struct TrainHooks {
  std::function<void(double alpha, std::uint64_t step, const MlpModel& model)>
      on_step;
};

FitResult train_qr(const Dataset& data, std::span<const LayerSpec> specs,
                   const TrainConfig& cfg, const TrainHooks* hooks = nullptr);
FitResult train_tqr(const Dataset& data, std::span<const LayerSpec> specs,
                    const TrainConfig& cfg, const TrainHooks* hooks = nullptr);
FitResult train_rcp(const Dataset& data, std::span<const LayerSpec> specs,
                    const TrainConfig& cfg, const TrainHooks* hooks = nullptr);
FitResult train_beta_qr(const Dataset& data, std::span<const LayerSpec> specs,
                        const TrainConfig& cfg, const TrainHooks* hooks = nullptr);

/// Dispatches on cfg.method.
FitResult train(const Dataset& data, std::span<const LayerSpec> specs,
                const TrainConfig& cfg, const TrainHooks* hooks = nullptr);

/// Plain QR restricted to mask == 1 rows; the comparison target for the
/// robust fits. Requires an inlier mask selecting at least 2 samples.
FitResult fit_reference(const Dataset& data, std::span<const LayerSpec> specs,
                        const TrainConfig& cfg);

}  // namespace rqr
