#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Dense>

#include "covsynth/kernel_ast.hpp"
#include "covsynth/random.hpp"

namespace covsynth {

/// Fixed observation-noise variance added to every covariance matrix.
inline constexpr double kBaselineNoise = 0.1;

/// Paired inputs and outputs of one series. Inputs need not be sorted or distinct.
struct Dataset {
  std::vector<double> xs;
  std::vector<double> ys;

  std::size_t size() const noexcept { return xs.size(); }
  bool empty() const noexcept { return xs.empty(); }
  /// Throws DataError on length mismatch or non-finite entries.
  void validate() const;
};

/// Predictive mean and covariance at probe inputs.
struct GpPosterior {
  std::vector<double> at;
  Eigen::VectorXd mean;
  /// Covariance of the latent function (no observation noise).
  Eigen::MatrixXd cov;
  double noise_var = kBaselineNoise;

  Eigen::MatrixXd noisy_cov() const;
};

/// Cholesky factor of a covariance matrix plus the diagonal jitter it needed.
struct CovarianceFactor {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;

  double log_determinant() const;
};

/// Factorizes `a`, adding 1e-8 to the diagonal on failure and escalating by
/// x10 up to 1e-2. Throws NumericError listing every level tried.
CovarianceFactor factorize_with_jitter(const Eigen::MatrixXd& a);

/// Marginal likelihood together with the pieces reused by gradient moves.
struct MarginalFit {
  double log_likelihood = 0.0;
  CovarianceFactor factor;
  /// (K + noise I)^-1 y
  Eigen::VectorXd alpha;
};

/// An empty dataset has likelihood 1 (log 0).
MarginalFit fit_marginal(const KernelAst& ast, const Dataset& data,
                         double noise_var = kBaselineNoise);

/// log N(y | 0, K + noise I).
double log_marginal(const KernelAst& ast, const Dataset& data, double noise_var = kBaselineNoise);

/// Posterior predictive at `probe_xs`; with an empty training set this is the prior predictive.
/// `noisy` adds the observation noise to the returned covariance.
GpPosterior predict(const KernelAst& ast, const Dataset& train, std::span<const double> probe_xs,
                    double noise_var = kBaselineNoise, bool noisy = false);

/// `count` independent draws from N(mean, cov).
std::vector<Eigen::VectorXd> sample_predictive(const GpPosterior& posterior, Rng& rng,
                                               std::size_t count);

}  // namespace covsynth
