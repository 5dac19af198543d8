#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>
#include <set>

#include <Eigen/Eigenvalues>

#include "covsynth/errors.hpp"
#include "covsynth/kernel_ast.hpp"
#include "covsynth/prior.hpp"
#include "support/oracles.hpp"

using namespace covsynth;
using covsynth::testing::pairwise_matrix;

namespace {

KernelAst changepoint_example_tree() {
  return KernelAst::changepoint(4.5,
                                KernelAst::product(KernelAst::leaf(BaseKernel::LIN, {0.36}),
                                                   KernelAst::leaf(BaseKernel::WN, {2.05})),
                                KernelAst::leaf(BaseKernel::WN, {11.0}));
}

KernelAst prior_tree(Rng& rng, const PriorConfig& cfg = {}) {
  return sample_ast(cfg, kRootIndex, rng);
}

}  // namespace

TEST_CASE("base kernel values") {
  const auto wn = KernelAst::leaf(BaseKernel::WN, {2.05});
  CHECK(eval_kernel(wn, kRootIndex, 1.0, 1.0) == 2.05);
  CHECK(eval_kernel(wn, kRootIndex, 1.0, 2.0) == 0.0);

  const auto c = KernelAst::leaf(BaseKernel::C, {3.0});
  CHECK(eval_kernel(c, kRootIndex, -4.0, 7.5) == 3.0);
  CHECK(eval_kernel(c, kRootIndex, 0.0, 0.0) == 3.0);

  const auto se = KernelAst::leaf(BaseKernel::SE, {1.0});
  CHECK(eval_kernel(se, kRootIndex, 0.0, 1.0) == doctest::Approx(std::exp(-0.5)).epsilon(1e-15));
  CHECK(eval_kernel(se, kRootIndex, 0.0, 1.0) == doctest::Approx(0.60653).epsilon(1e-5));

  const auto lin = KernelAst::leaf(BaseKernel::LIN, {0.36});
  CHECK(eval_kernel(lin, kRootIndex, 1.0, 2.0) == doctest::Approx(1.0496).epsilon(1e-14));

  const double p = 2.7;
  const auto per = KernelAst::leaf(BaseKernel::PER, {0.8, p});
  for (double x : {-3.0, 0.0, 0.4, 5.0}) {
    CHECK(eval_kernel(per, kRootIndex, x, x + p) ==
          doctest::Approx(eval_kernel(per, kRootIndex, x, x)).epsilon(1e-12));
  }
  const double r = 0.9;
  const double s = std::sin(std::numbers::pi * r / p);
  CHECK(eval_kernel(per, kRootIndex, 0.0, r) ==
        doctest::Approx(std::exp(-2.0 * s * s / (0.8 * 0.8))).epsilon(1e-14));
}

TEST_CASE("changepoint gate orientation and limits") {
  const auto k1 = KernelAst::leaf(BaseKernel::SE, {1.5});
  const auto k2 = KernelAst::leaf(BaseKernel::PER, {0.7, 1.3});
  const double loc = 4.0;
  const auto cp = KernelAst::changepoint(loc, k1, k2);
  const double far = 50.0 * kChangePointDecay;
  for (double offset : {0.0, 0.3, 1.1}) {
    const double xb = loc - far - offset;
    const double yb = loc - far - 2.0 * offset;
    CHECK(std::abs(eval_kernel(cp, kRootIndex, xb, yb) - eval_kernel(k1, kRootIndex, xb, yb)) < 1e-6);
    const double xa = loc + far + offset;
    const double ya = loc + far + 2.0 * offset;
    CHECK(std::abs(eval_kernel(cp, kRootIndex, xa, ya) - eval_kernel(k2, kRootIndex, xa, ya)) < 1e-6);
  }
  // At the location both gates are 1/2.
  const double at = eval_kernel(cp, kRootIndex, loc, loc);
  CHECK(at == doctest::Approx(0.25 * (1.0 + 1.0)).epsilon(1e-14));
}

TEST_CASE("covariance matrix examples") {
  const std::vector<double> xs = {0.0, 1.0, 2.0};
  const auto ones = build_cov_matrix(KernelAst::leaf(BaseKernel::C, {1.0}), kRootIndex, xs);
  CHECK(ones == Eigen::MatrixXd::Ones(3, 3));

  const auto wn = build_cov_matrix(KernelAst::leaf(BaseKernel::WN, {0.7}), kRootIndex, xs);
  CHECK(wn == 0.7 * Eigen::MatrixXd::Identity(3, 3));

  const std::vector<double> two = {0.0, 1.0};
  const auto sum = build_cov_matrix(
      KernelAst::sum(KernelAst::leaf(BaseKernel::C, {1.0}), KernelAst::leaf(BaseKernel::WN, {1.0})),
      kRootIndex, two);
  Eigen::Matrix2d expected;
  expected << 2, 1, 1, 2;
  CHECK(sum == expected);

  CHECK_THROWS_AS(build_cov_matrix(KernelAst::leaf(BaseKernel::C, {1.0}), kRootIndex, {}), ArgumentError);
}

TEST_CASE("duplicate inputs under WN use exact equality") {
  const std::vector<double> xs = {1.0, 1.0, 2.0};
  const auto k = build_cov_matrix(KernelAst::leaf(BaseKernel::WN, {2.0}), kRootIndex, xs);
  CHECK(k(0, 1) == 2.0);
  CHECK(k(0, 2) == 0.0);
}

TEST_CASE("evaluation errors") {
  const auto c = KernelAst::leaf(BaseKernel::C, {1.0});
  CHECK_THROWS_AS(eval_kernel(c, 2, 0.0, 0.0), StructuralError);
  CHECK_THROWS_AS(c.at(7), StructuralError);

  KernelAst bad;
  NodeBundle bundle;
  bundle.kernel = BaseKernel::C;
  bundle.hypers = {HyperSite{0.0, std::numeric_limits<double>::quiet_NaN(), 0.0}};
  bad.insert(kRootIndex, bundle);
  CHECK_THROWS_AS(eval_kernel(bad, kRootIndex, 0.0, 1.0), NumericError);

  bundle.hypers = {HyperSite{0.0, std::numeric_limits<double>::infinity(), 0.0}};
  bad.insert(kRootIndex, bundle);
  CHECK_THROWS_AS(eval_kernel(bad, kRootIndex, 0.0, 1.0), NumericError);
}

TEST_CASE("structure labels") {
  CHECK(structure_label(changepoint_example_tree()) == "CP(LIN * WN, WN)");
  CHECK(structure_label(KernelAst::leaf(BaseKernel::WN, {1.0})) == "WN");
  CHECK(structure_label(KernelAst::sum(KernelAst::leaf(BaseKernel::LIN, {1.0}),
                                       KernelAst::leaf(BaseKernel::PER, {1.0, 2.0}))) == "LIN + PER");

  const auto a = KernelAst::leaf(BaseKernel::SE, {1.0});
  const auto b = KernelAst::leaf(BaseKernel::C, {1.0});
  const auto c = KernelAst::leaf(BaseKernel::WN, {1.0});
  // Distinct skeletons render differently.
  CHECK(structure_label(KernelAst::sum(KernelAst::sum(a, b), c)) !=
        structure_label(KernelAst::sum(a, KernelAst::sum(b, c))));
  CHECK(structure_label(KernelAst::product(KernelAst::sum(a, b), c)) !=
        structure_label(KernelAst::sum(a, KernelAst::product(b, c))));
  CHECK(structure_label(KernelAst::product(KernelAst::product(a, b), c)) !=
        structure_label(KernelAst::product(a, KernelAst::product(b, c))));
}

TEST_CASE("skeletons up to depth two have distinct labels") {
  const auto all = covsynth::testing::skeletons_depth_two();
  std::set<std::string> labels;
  for (const auto& t : all) labels.insert(structure_label(t));
  CHECK(labels.size() == all.size());
}

TEST_CASE("structure label ignores hyperparameter values") {
  Rng rng(11);
  for (int i = 0; i < 200; ++i) {
    const KernelAst t = prior_tree(rng);
    KernelAst u = t;
    for (const auto& address : u.hyper_addresses()) {
      const double offset = u.hyper(address).offset;
      u.set_hyper(address, HyperSite::from_unconstrained(rng.normal() * 3.0, offset));
    }
    CHECK(structure_label(t) == structure_label(u));
  }
}

TEST_CASE("kernel symmetry and positive semidefiniteness on prior trees") {
  Rng rng(2024);
  for (int i = 0; i < 300; ++i) {
    const KernelAst t = prior_tree(rng);
    const std::size_t n = 1 + static_cast<std::size_t>(rng.uniform() * 20.0);
    const auto xs = covsynth::testing::random_inputs(rng, n);
    const Eigen::MatrixXd k = build_cov_matrix(t, kRootIndex, xs);
    for (std::size_t a = 0; a < n; ++a) {
      for (std::size_t b = 0; b < n; ++b) {
        REQUIRE(eval_kernel(t, kRootIndex, xs[a], xs[b]) == eval_kernel(t, kRootIndex, xs[b], xs[a]));
      }
    }
    CHECK(k == k.transpose());
    Eigen::MatrixXd shifted = k;
    shifted.diagonal().array() += 1e-8;
    const double min_eig = Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd>(shifted).eigenvalues().minCoeff();
    CHECK(min_eig >= 0.0);
  }
}

TEST_CASE("covariance matrices compose exactly") {
  Rng rng(5);
  PriorConfig cfg;
  cfg.p_branch = 0.45;
  int checked = 0;
  for (int i = 0; i < 300; ++i) {
    const KernelAst t = prior_tree(rng, cfg);
    const auto xs = covsynth::testing::random_inputs(rng, 7);
    for (const auto& [node, bundle] : t.nodes()) {
      if (!bundle.is_branch || *bundle.op == Operator::ChangePoint) continue;
      const Eigen::MatrixXd parent = build_cov_matrix(t, node, xs);
      const Eigen::MatrixXd l = build_cov_matrix(t, left_child(node), xs);
      const Eigen::MatrixXd r = build_cov_matrix(t, right_child(node), xs);
      if (*bundle.op == Operator::Sum) {
        CHECK(parent == l + r);
      } else {
        CHECK(parent == l.cwiseProduct(r));
      }
      ++checked;
    }
    // The batched matrix matches pairwise evaluation.
    CHECK((build_cov_matrix(t, kRootIndex, xs) - pairwise_matrix(t, xs, xs)).cwiseAbs().maxCoeff() <= 1e-12);
  }
  CHECK(checked > 50);
}

TEST_CASE("subtree matrices and cross covariance agree with direct construction") {
  Rng rng(17);
  for (int i = 0; i < 50; ++i) {
    const KernelAst t = prior_tree(rng);
    const auto xs = covsynth::testing::random_inputs(rng, 6);
    const auto zs = covsynth::testing::random_inputs(rng, 4);
    const auto all = subtree_cov_matrices(t, xs);
    CHECK(all.size() == t.size());
    for (const auto& [node, matrix] : all) CHECK(matrix == build_cov_matrix(t, node, xs));
    CHECK((build_cross_cov(t, kRootIndex, xs, zs) - pairwise_matrix(t, xs, zs)).cwiseAbs().maxCoeff() <= 1e-12);
  }
}

TEST_CASE("leaf jacobians match finite differences in constrained coordinates") {
  const std::vector<double> xs = {0.1, 0.9, 2.3, 4.0};
  const double eps = 1e-6;
  for (BaseKernel kind : kBaseKernels) {
    std::vector<double> h = {1.3};
    if (kind == BaseKernel::PER) h = {0.9, 2.1};
    const auto t = KernelAst::leaf(kind, h);
    const auto jac = leaf_hyper_jacobians(t.at(kRootIndex), xs);
    REQUIRE(jac.size() == h.size());
    for (std::size_t slot = 0; slot < h.size(); ++slot) {
      auto hp = h;
      auto hm = h;
      hp[slot] += eps;
      hm[slot] -= eps;
      const Eigen::MatrixXd fd = (build_cov_matrix(KernelAst::leaf(kind, hp), kRootIndex, xs) -
                                  build_cov_matrix(KernelAst::leaf(kind, hm), kRootIndex, xs)) /
                                 (2.0 * eps);
      CHECK((jac[slot] - fd).cwiseAbs().maxCoeff() <= 1e-7);
    }
  }
}

TEST_CASE("hyper site reparameterization") {
  for (double t : {-20.0, -3.0, 0.0, 0.5, 4.0, 30.0}) {
    for (double offset : {0.0, kLengthscaleOffset}) {
      const auto site = HyperSite::from_unconstrained(t, offset);
      CHECK(site.constrained == doctest::Approx(std::log1p(std::exp(-t)) + offset).epsilon(1e-12));
      if (t < 20.0) {
        const auto back = HyperSite::from_constrained(site.constrained, offset);
        CHECK(back.unconstrained == doctest::Approx(t).epsilon(1e-9));
      }
    }
  }
  CHECK_THROWS_AS(HyperSite::from_constrained(0.01, 0.01), ArgumentError);
  CHECK(hyper_offset(BaseKernel::SE, 0) == kLengthscaleOffset);
  CHECK(hyper_offset(BaseKernel::PER, 0) == kLengthscaleOffset);
  CHECK(hyper_offset(BaseKernel::PER, 1) == kLengthscaleOffset);
  CHECK(hyper_offset(BaseKernel::LIN, 0) == 0.0);
  CHECK(hyper_offset(Operator::ChangePoint, 0) == 0.0);
}

TEST_CASE("tree surgery") {
  const auto t = changepoint_example_tree();
  CHECK(t.size() == 5);
  CHECK(t.subtree_indices(2) == std::vector<NodeIndex>{2, 4, 5});
  const auto fragment = t.extract_subtree(2);
  CHECK(fragment.root() == 2);
  CHECK(structure_label(fragment, 2) == "LIN * WN");
  const auto moved = fragment.rebased(kRootIndex);
  CHECK(structure_label(moved) == "LIN * WN");
  CHECK(moved.is_consistent());

  const auto replacement = KernelAst::leaf(BaseKernel::SE, {2.0}).rebased(2);
  const auto spliced = t.with_subtree(2, replacement);
  CHECK(structure_label(spliced) == "CP(SE, WN)");
  CHECK(spliced.size() == 3);
  CHECK(spliced.is_consistent());
  CHECK(rebase_index(5, 2, 3) == 7);
  CHECK(node_depth(1) == 1);
  CHECK(node_depth(5) == 3);
}

TEST_CASE("validation rejects malformed trees") {
  KernelAst t = KernelAst::sum(KernelAst::leaf(BaseKernel::C, {1.0}), KernelAst::leaf(BaseKernel::C, {1.0}));
  CHECK(t.is_consistent());
  KernelAst missing;
  missing.insert(1, t.at(1));
  missing.insert(2, t.at(2));
  CHECK_FALSE(missing.is_consistent());
  CHECK_THROWS_AS(missing.validate(), StructuralError);

  KernelAst extra = t;
  extra.insert(4, t.at(2));
  CHECK_FALSE(extra.is_consistent());

  CHECK_THROWS_AS(KernelAst::leaf(BaseKernel::PER, {1.0}), StructuralError);
}

TEST_CASE("JSON round trip is lossless") {
  const auto example = changepoint_example_tree();
  const auto json = ast_to_json(example);
  CHECK(json.dump() == R"(["CP",4.5,["*",["LIN",0.36],["WN",2.05]],["WN",11.0]])");
  CHECK(ast_from_json(json) == example);

  Rng rng(99);
  for (int i = 0; i < 500; ++i) {
    const KernelAst t = prior_tree(rng);
    const auto text = ast_to_json(t).dump();
    const KernelAst back = ast_from_json(nlohmann::json::parse(text));
    REQUIRE(structure_label(back) == structure_label(t));
    REQUIRE(back.size() == t.size());
    for (const auto& address : t.hyper_addresses()) {
      REQUIRE(back.hyper(address).constrained == t.hyper(address).constrained);
      REQUIRE(back.hyper(address).offset == t.hyper(address).offset);
    }
  }
  CHECK_THROWS_AS(ast_from_json(nlohmann::json::parse(R"(["FOO", 1])")), StructuralError);
  CHECK_THROWS_AS(ast_from_json(nlohmann::json::parse(R"(["PER", 1])")), StructuralError);
  CHECK_THROWS_AS(ast_from_json(nlohmann::json::parse(R"(["+", ["C", 1]])")), StructuralError);
}
