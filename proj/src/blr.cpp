#include "covsynth/blr.hpp"

#include "covsynth/errors.hpp"

namespace covsynth {

namespace {

Eigen::MatrixXd design(std::span<const double> xs) {
  Eigen::MatrixXd phi(static_cast<Eigen::Index>(xs.size()), 2);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    phi(static_cast<Eigen::Index>(i), 0) = 1.0;
    phi(static_cast<Eigen::Index>(i), 1) = xs[i];
  }
  return phi;
}

}  // namespace

GpPosterior blr_baseline(const Dataset& train, std::span<const double> probe_xs,
                         const BlrPrior& prior) {
  if (train.empty()) throw ArgumentError("blr_baseline: empty training set");
  train.validate();

  const Eigen::MatrixXd phi = design(train.xs);
  const Eigen::Map<const Eigen::VectorXd> y(train.ys.data(), static_cast<Eigen::Index>(train.size()));
  const double prior_precision = 1.0 / (prior.prior_scale * prior.prior_scale);

  Eigen::Matrix2d precision = phi.transpose() * phi;
  precision.diagonal().array() += prior_precision;
  const Eigen::LLT<Eigen::Matrix2d> llt(precision);
  if (llt.info() != Eigen::Success) throw NumericError("blr_baseline: singular posterior precision");
  const Eigen::Vector2d weights = llt.solve(phi.transpose() * y);
  const Eigen::Matrix2d weight_cov = llt.solve(Eigen::Matrix2d::Identity());

  const double shape = prior.shape + 0.5 * static_cast<double>(train.size());
  const double rate = prior.rate + 0.5 * (y.squaredNorm() - weights.dot(precision * weights));
  // E[sigma^2] under IG(shape, rate); shape >= 1.5 once there is a data point.
  const double noise_mean = rate / (shape - 1.0);

  GpPosterior post;
  post.at.assign(probe_xs.begin(), probe_xs.end());
  const Eigen::MatrixXd probe = design(probe_xs);
  post.mean = probe * weights;
  post.cov = noise_mean * probe * weight_cov * probe.transpose();
  post.noise_var = noise_mean;
  return post;
}

}  // namespace covsynth
