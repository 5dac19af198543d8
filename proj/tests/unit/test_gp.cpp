#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "covsynth/errors.hpp"
#include "covsynth/gp.hpp"
#include "covsynth/prior.hpp"
#include "support/oracles.hpp"

using namespace covsynth;
namespace oracle = covsynth::testing;

namespace {

double relative_error(double a, double b) { return std::abs(a - b) / std::max(1.0, std::abs(b)); }

}  // namespace

TEST_CASE("log marginal examples") {
  const auto c1 = KernelAst::leaf(BaseKernel::C, {1.0});
  const Dataset one{{0.0}, {0.0}};
  const double expected = -0.5 * std::log(1.1) - 0.5 * std::log(2.0 * std::numbers::pi);
  CHECK(log_marginal(c1, one, 0.1) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(log_marginal(c1, one, 0.1) == doctest::Approx(-0.966594).epsilon(1e-6));

  Rng rng(4);
  for (int i = 0; i < 50; ++i) {
    const auto t = sample_ast(PriorConfig{}, kRootIndex, rng);
    Dataset zeros;
    zeros.xs = oracle::random_inputs(rng, 6);
    zeros.ys.assign(6, 0.0);
    Eigen::MatrixXd a = oracle::pairwise_matrix(t, zeros.xs, zeros.xs);
    a.diagonal().array() += 0.1;
    const double logdet = std::log(a.fullPivLu().determinant());
    CHECK(log_marginal(t, zeros) ==
          doctest::Approx(-0.5 * logdet - 3.0 * std::log(2.0 * std::numbers::pi)).epsilon(1e-9));
  }
}

TEST_CASE("empty dataset has unit likelihood") {
  CHECK(log_marginal(KernelAst::leaf(BaseKernel::SE, {1.0}), Dataset{}) == 0.0);
}

TEST_CASE("log marginal and prediction match the dense oracle") {
  Rng rng(31);
  for (int i = 0; i < 300; ++i) {
    const auto t = sample_ast(PriorConfig{}, kRootIndex, rng);
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform() * 8.0);
    const Dataset data = oracle::random_dataset(rng, n);
    REQUIRE(relative_error(log_marginal(t, data), oracle::dense_log_marginal(t, data, 0.1)) <= 1e-9);

    const auto probe = oracle::random_inputs(rng, 4);
    const auto post = predict(t, data, probe, 0.1);
    const auto dense = oracle::dense_predict(t, data, probe, 0.1);
    const double scale = std::max(1.0, dense.cov.cwiseAbs().maxCoeff());
    CHECK((post.mean - dense.mean).cwiseAbs().maxCoeff() <= 1e-9 * std::max(1.0, dense.mean.cwiseAbs().maxCoeff()));
    CHECK((post.cov - dense.cov).cwiseAbs().maxCoeff() <= 1e-9 * scale);
    CHECK(post.cov == post.cov.transpose());
  }
}

TEST_CASE("prediction examples") {
  const auto c1 = KernelAst::leaf(BaseKernel::C, {1.0});
  const std::vector<double> probe = {0.0, 1.0};
  const auto prior = predict(c1, Dataset{}, probe, 0.1);
  CHECK(prior.mean == Eigen::VectorXd::Zero(2));
  CHECK(prior.cov == Eigen::MatrixXd::Ones(2, 2));
  const auto noisy_prior = predict(c1, Dataset{}, probe, 0.1, true);
  CHECK(noisy_prior.cov(0, 0) == doctest::Approx(1.1));
  CHECK(noisy_prior.cov(0, 1) == doctest::Approx(1.0));

  const Dataset one{{0.0}, {1.0}};
  const std::vector<double> at_zero = {0.0};
  const auto post = predict(c1, one, at_zero, 0.1);
  CHECK(post.mean(0) == doctest::Approx(1.0 / 1.1).epsilon(1e-14));
  CHECK(post.cov(0, 0) == doctest::Approx(1.0 - 1.0 / 1.1).epsilon(1e-12));
  CHECK(post.noisy_cov()(0, 0) == doctest::Approx(1.0 - 1.0 / 1.1 + 0.1).epsilon(1e-12));
}

TEST_CASE("probing a training input bounds the latent variance by the noise") {
  const auto se = KernelAst::leaf(BaseKernel::SE, {0.7});
  const Dataset train{{0.0, 0.5, 1.3, 2.0}, {0.2, -0.4, 1.0, 0.3}};
  const std::vector<double> probe = {1.3};
  const auto post = predict(se, train, probe, 0.1);
  CHECK(post.cov(0, 0) <= 0.1 * (1.0 + 1e-6));
  const auto dense = oracle::dense_predict(se, train, probe, 0.1);
  CHECK(post.cov(0, 0) == doctest::Approx(dense.cov(0, 0)).epsilon(1e-10));
  CHECK(post.mean(0) == doctest::Approx(dense.mean(0)).epsilon(1e-10));
}

TEST_CASE("adding a training point never increases predictive variance") {
  Rng rng(77);
  for (int i = 0; i < 200; ++i) {
    const auto t = sample_ast(PriorConfig{}, kRootIndex, rng);
    Dataset data = oracle::random_dataset(rng, 5);
    const auto probe = oracle::random_inputs(rng, 6);
    const auto before = predict(t, data, probe, 0.1);
    data.xs.push_back(10.0 * rng.uniform());
    data.ys.push_back(rng.normal());
    const auto after = predict(t, data, probe, 0.1);
    for (Eigen::Index j = 0; j < after.cov.rows(); ++j) {
      const double slack = 1e-9 * std::max(1.0, before.cov(j, j));
      REQUIRE(after.cov(j, j) <= before.cov(j, j) + slack);
    }
  }
}

TEST_CASE("log marginal is invariant to joint permutation") {
  Rng rng(2);
  for (int i = 0; i < 200; ++i) {
    const auto t = sample_ast(PriorConfig{}, kRootIndex, rng);
    const Dataset data = oracle::random_dataset(rng, 8);
    std::vector<std::size_t> order(8);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), std::mt19937_64(i));
    Dataset permuted;
    for (auto k : order) {
      permuted.xs.push_back(data.xs[k]);
      permuted.ys.push_back(data.ys[k]);
    }
    const double a = log_marginal(t, data);
    REQUIRE(relative_error(log_marginal(t, permuted), a) <= 1e-10);
  }
}

TEST_CASE("jitter escalation") {
  Eigen::MatrixXd singular(2, 2);
  singular << 1, 1, 1, 1;
  const auto factor = factorize_with_jitter(singular);
  CHECK(factor.jitter == 1e-8);

  const Eigen::MatrixXd negative = -Eigen::MatrixXd::Identity(3, 3);
  try {
    factorize_with_jitter(negative);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    const std::vector<double> expected = {0.0, 1e-8, 1e-7, 1e-6, 1e-5, 1e-4, 1e-3, 1e-2};
    REQUIRE(e.jitter_levels().size() == expected.size());
    for (std::size_t i = 0; i < expected.size(); ++i) {
      CHECK(e.jitter_levels()[i] == doctest::Approx(expected[i]).epsilon(1e-12));
    }
  }

  Eigen::MatrixXd nan = Eigen::MatrixXd::Identity(2, 2);
  nan(0, 1) = std::nan("");
  CHECK_THROWS_AS(factorize_with_jitter(nan), NumericError);

  const Eigen::MatrixXd spd = 2.0 * Eigen::MatrixXd::Identity(3, 3);
  const auto clean = factorize_with_jitter(spd);
  CHECK(clean.jitter == 0.0);
  CHECK(clean.log_determinant() == doctest::Approx(3.0 * std::log(2.0)));
}

TEST_CASE("argument and data errors") {
  const auto c1 = KernelAst::leaf(BaseKernel::C, {1.0});
  const Dataset one{{0.0}, {0.0}};
  CHECK_THROWS_AS(log_marginal(c1, one, 0.0), ArgumentError);
  CHECK_THROWS_AS(log_marginal(c1, one, -1.0), ArgumentError);
  Dataset mismatched{{0.0, 1.0}, {0.0}};
  CHECK_THROWS_AS(mismatched.validate(), DataError);
  Dataset infinite{{0.0}, {std::numeric_limits<double>::infinity()}};
  CHECK_THROWS_AS(infinite.validate(), DataError);
  CHECK_NOTHROW(one.validate());
}

TEST_CASE("predictive sampling") {
  GpPosterior zero;
  zero.at = {0.0, 1.0, 2.0};
  zero.mean = Eigen::Vector3d(1.5, -2.0, 0.25);
  zero.cov = Eigen::MatrixXd::Zero(3, 3);
  Rng rng(10);
  for (const auto& draw : sample_predictive(zero, rng, 20)) CHECK(draw == zero.mean);

  GpPosterior unit;
  unit.at = {0.0, 1.0};
  unit.mean = Eigen::Vector2d(0.5, -1.0);
  unit.cov = Eigen::MatrixXd::Identity(2, 2);
  const int n = 10000;
  const auto draws = sample_predictive(unit, rng, n);
  REQUIRE(draws.size() == static_cast<std::size_t>(n));
  Eigen::Vector2d mean = Eigen::Vector2d::Zero();
  for (const auto& d : draws) mean += d;
  mean /= n;
  CHECK((mean - unit.mean).cwiseAbs().maxCoeff() <= 4.0 / std::sqrt(n));
  Eigen::Matrix2d cov = Eigen::Matrix2d::Zero();
  for (const auto& d : draws) cov += (d - mean) * (d - mean).transpose();
  cov /= (n - 1);
  CHECK((cov - Eigen::Matrix2d::Identity()).cwiseAbs().maxCoeff() <= 0.05);

  // Correlated, rank-deficient covariance from the prior predictive of a constant kernel.
  const auto post = predict(KernelAst::leaf(BaseKernel::C, {2.0}), Dataset{}, std::vector<double>{0.0, 3.0});
  for (const auto& d : sample_predictive(post, rng, 50)) CHECK(d(0) == doctest::Approx(d(1)).epsilon(1e-6));
}
