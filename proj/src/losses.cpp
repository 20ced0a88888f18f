#include "rqr/losses.hpp"

#include <cmath>

namespace rqr {

double pinball(double residual, QuantileLevel alpha) {
  return residual >= 0.0 ? residual * alpha.alpha
                         : -residual * (1.0 - alpha.alpha);
}

double pinball_dr(double residual, QuantileLevel alpha) {
  return residual >= 0.0 ? alpha.alpha : alpha.alpha - 1.0;
}

double beta_pinball(double residual, QuantileLevel alpha, const BetaConfig& cfg) {
  const double rho = pinball(residual / cfg.sigma, alpha);
  // expm1 keeps the beta -> 0 limit exact; (1 - exp(-x))/beta cancels badly
  // for beta below ~1e-6.
  return -std::expm1(-cfg.beta * rho) / cfg.beta;
}

double beta_pinball_dr(double residual, QuantileLevel alpha, const BetaConfig& cfg) {
  const double scaled = residual / cfg.sigma;
  const double rho = pinball(scaled, alpha);
  return std::exp(-cfg.beta * rho) * pinball_dr(scaled, alpha) / cfg.sigma;
}

double soft_threshold(double x, double lambda) {
  if (lambda < 0.0) throw std::invalid_argument("soft_threshold: negative lambda");
  if (x > lambda) return x - lambda;
  if (x < -lambda) return x + lambda;
  return 0.0;
}

}  // namespace rqr
