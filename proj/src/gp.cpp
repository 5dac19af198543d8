#include "covsynth/gp.hpp"

#include <cmath>
#include <numbers>
#include <string>

#include "covsynth/errors.hpp"

namespace covsynth {

namespace {

constexpr double kFirstJitter = 1e-8;
constexpr double kMaxJitter = 1e-2;

bool factor_ok(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  if (llt.info() != Eigen::Success) return false;
  const auto diag = llt.matrixLLT().diagonal();
  return diag.allFinite() && (diag.array() > 0.0).all();
}

}  // namespace

void Dataset::validate() const {
  if (xs.size() != ys.size()) {
    throw DataError("dataset has " + std::to_string(xs.size()) + " inputs but " +
                    std::to_string(ys.size()) + " outputs");
  }
  for (std::size_t i = 0; i < xs.size(); ++i) {
    if (!std::isfinite(xs[i]) || !std::isfinite(ys[i])) {
      throw DataError("non-finite value in dataset row " + std::to_string(i));
    }
  }
}

Eigen::MatrixXd GpPosterior::noisy_cov() const {
  Eigen::MatrixXd out = cov;
  out.diagonal().array() += noise_var;
  return out;
}

double CovarianceFactor::log_determinant() const {
  return 2.0 * llt.matrixLLT().diagonal().array().log().sum();
}

CovarianceFactor factorize_with_jitter(const Eigen::MatrixXd& a) {
  if (!a.allFinite()) throw NumericError("covariance matrix has non-finite entries");
  CovarianceFactor out;
  out.llt.compute(a);
  if (factor_ok(out.llt)) return out;

  std::vector<double> tried{0.0};
  for (double jitter = kFirstJitter; jitter <= kMaxJitter * (1.0 + 1e-9); jitter *= 10.0) {
    tried.push_back(jitter);
    Eigen::MatrixXd shifted = a;
    shifted.diagonal().array() += jitter;
    out.llt.compute(shifted);
    if (factor_ok(out.llt)) {
      out.jitter = jitter;
      return out;
    }
  }
  throw NumericError("Cholesky factorization failed at every jitter level", std::move(tried));
}

MarginalFit fit_marginal(const KernelAst& ast, const Dataset& data, double noise_var) {
  if (!(noise_var > 0.0)) throw ArgumentError("noise variance must be positive");
  MarginalFit fit;
  if (data.empty()) return fit;

  Eigen::MatrixXd a = build_cov_matrix(ast, kRootIndex, data.xs);
  a.diagonal().array() += noise_var;
  fit.factor = factorize_with_jitter(a);

  const Eigen::Map<const Eigen::VectorXd> y(data.ys.data(), static_cast<Eigen::Index>(data.size()));
  fit.alpha = fit.factor.llt.solve(y);
  const auto n = static_cast<double>(data.size());
  fit.log_likelihood = -0.5 * y.dot(fit.alpha) - 0.5 * fit.factor.log_determinant() -
                       0.5 * n * std::log(2.0 * std::numbers::pi);
  if (!std::isfinite(fit.log_likelihood)) throw NumericError("log marginal likelihood is not finite");
  return fit;
}

double log_marginal(const KernelAst& ast, const Dataset& data, double noise_var) {
  return fit_marginal(ast, data, noise_var).log_likelihood;
}

GpPosterior predict(const KernelAst& ast, const Dataset& train, std::span<const double> probe_xs,
                    double noise_var, bool noisy) {
  if (!(noise_var > 0.0)) throw ArgumentError("noise variance must be positive");
  GpPosterior post;
  post.at.assign(probe_xs.begin(), probe_xs.end());
  post.noise_var = noise_var;
  const auto m = static_cast<Eigen::Index>(probe_xs.size());
  if (m == 0) {
    post.mean = Eigen::VectorXd::Zero(0);
    post.cov = Eigen::MatrixXd::Zero(0, 0);
    return post;
  }

  Eigen::MatrixXd prior_cov = build_cov_matrix(ast, kRootIndex, probe_xs);
  if (train.empty()) {
    post.mean = Eigen::VectorXd::Zero(m);
    post.cov = std::move(prior_cov);
  } else {
    const MarginalFit fit = fit_marginal(ast, train, noise_var);
    const Eigen::MatrixXd cross = build_cross_cov(ast, kRootIndex, train.xs, probe_xs);
    post.mean = cross.transpose() * fit.alpha;
    const Eigen::MatrixXd v = fit.factor.llt.matrixL().solve(cross);
    post.cov = prior_cov - v.transpose() * v;
    post.cov = 0.5 * (post.cov + post.cov.transpose()).eval();
  }
  if (noisy) post.cov.diagonal().array() += noise_var;
  return post;
}

std::vector<Eigen::VectorXd> sample_predictive(const GpPosterior& posterior, Rng& rng,
                                               std::size_t count) {
  const Eigen::Index m = posterior.mean.size();
  if (m == 0) return std::vector<Eigen::VectorXd>(count);
  // Pivoted LDL^T handles the semidefinite case (e.g. an all-zero covariance)
  // without perturbing the draws; tiny negative pivots are round-off.
  Eigen::LDLT<Eigen::MatrixXd> ldlt(posterior.cov);
  if (ldlt.info() != Eigen::Success) throw NumericError("LDLT factorization of covariance failed");
  Eigen::VectorXd d = ldlt.vectorD();
  const double scale = std::max(1.0, posterior.cov.diagonal().cwiseAbs().maxCoeff());
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    if (d[i] < 0.0) {
      if (d[i] < -1e-8 * scale) {
        throw NumericError("predictive covariance is not positive semidefinite", {0.0});
      }
      d[i] = 0.0;
    }
  }
  const Eigen::MatrixXd l = ldlt.matrixL();
  const Eigen::VectorXd sqrt_d = d.cwiseSqrt();

  std::vector<Eigen::VectorXd> draws;
  draws.reserve(count);
  for (std::size_t s = 0; s < count; ++s) {
    Eigen::VectorXd z(m);
    for (Eigen::Index i = 0; i < m; ++i) z[i] = rng.normal();
    Eigen::VectorXd w = l * sqrt_d.cwiseProduct(z);
    draws.push_back(posterior.mean + (ldlt.transpositionsP().transpose() * w));
  }
  return draws;
}

}  // namespace covsynth
