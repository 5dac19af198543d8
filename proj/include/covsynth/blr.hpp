#pragma once

#include <span>

#include "covsynth/gp.hpp"

namespace covsynth {

/// Normal-inverse-gamma prior for y = a + b x + noise:
/// (a, b) ~ N(0, sigma^2 * prior_scale^2 * I), sigma^2 ~ IG(shape, rate).
struct BlrPrior {
  double prior_scale = 1.0;
  double shape = 1.0;
  double rate = 1.0;
};

/// Bayesian linear regression baseline. The returned covariance is the
/// marginal covariance of the regression line, E[sigma^2] * Phi V Phi^T, and
/// `noise_var` holds E[sigma^2] so that `noisy_cov()` is the predictive covariance.
GpPosterior blr_baseline(const Dataset& train, std::span<const double> probe_xs,
                         const BlrPrior& prior = {});

}  // namespace covsynth
