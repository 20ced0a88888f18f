#pragma once

#include <stdexcept>

namespace rqr {

/// Quantile level constrained to the open interval (0,1).
struct QuantileLevel {
  double alpha;
  explicit QuantileLevel(double a) : alpha(a) {
    if (!(a > 0.0 && a < 1.0))
      throw std::invalid_argument("quantile level must lie in (0,1)");
  }
};

/// Robustness degree and residual scale of the saturating pinball loss.
/// Larger beta saturates sooner; sigma rescales residuals before the loss.
struct BetaConfig {
  double beta = 1.0;
  double sigma = 1.0;

  void validate() const {
    if (!(beta > 0.0)) throw std::invalid_argument("beta must be positive");
    if (!(sigma > 0.0)) throw std::invalid_argument("sigma must be positive");
  }
};

/// Pinball (check) loss: r*alpha for r >= 0, -r*(1-alpha) otherwise.
double pinball(double residual, QuantileLevel alpha);

/// Derivative of pinball w.r.t. the residual; the r == 0 kink takes the
/// value of the r >= 0 branch (alpha).
double pinball_dr(double residual, QuantileLevel alpha);

/// Saturating robust pinball loss (1 - exp(-beta * pinball(r/sigma))) / beta.
/// Bounded by 1/beta; recovers pinball as beta -> 0+.
double beta_pinball(double residual, QuantileLevel alpha, const BetaConfig& cfg);

/// Residual derivative of beta_pinball: exponentially damped pinball_dr,
/// so a single gross outlier contributes a vanishing gradient.
double beta_pinball_dr(double residual, QuantileLevel alpha, const BetaConfig& cfg);

/// L1 proximal operator: shrink toward zero with dead zone [-lambda, lambda].
double soft_threshold(double x, double lambda);

}  // namespace rqr
