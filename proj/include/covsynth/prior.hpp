#pragma once

#include <array>

#include "covsynth/kernel_ast.hpp"
#include "covsynth/random.hpp"

namespace covsynth {

/// Constants of the generative grammar over kernel trees.
struct PriorConfig {
  double p_branch = 0.3;
  /// Weights for (WN, C, LIN, SE, PER).
  std::array<double, 5> kernel_weights = {0.2, 0.2, 0.2, 0.2, 0.2};
  /// Weights for (+, *, CP).
  std::array<double, 3> operator_weights = {0.45, 0.45, 0.10};
  /// Nodes at this depth (root = 1) are always leaves.
  int max_depth = 10;

  /// Throws ConfigError unless weights are probability vectors and the depth is usable.
  void validate() const;
};

/// Draws u ~ U(0,1) and returns the site with t = logit(u), h = -log(u) + offset.
HyperSite sample_hyper(Rng& rng, double offset);

/// Samples the subtree rooted at `node` from the grammar; the fragment keeps heap indices.
KernelAst sample_ast(const PriorConfig& cfg, NodeIndex node, Rng& rng);

/// Log prior density of a full tree; -inf when any node is inconsistent with the grammar.
double ast_log_prior(const PriorConfig& cfg, const KernelAst& ast);

/// Log density of the subtree at `node` under the grammar, conditioned on its position.
/// This is also the log density of resimulating that subtree with `sample_ast`.
double subtree_log_prior(const PriorConfig& cfg, const KernelAst& ast, NodeIndex node);

/// Prior mass of the skeleton only (branch flips, operators, kernels; no hyperparameters).
double structure_log_prior(const PriorConfig& cfg, const KernelAst& ast);

/// Exponential(1) log density of (h - offset); -inf below the offset.
double hyper_log_density(const HyperSite& site);

/// Standard-logistic log density of the unconstrained coordinate, and its derivative.
double logistic_log_density(double t);
double logistic_log_density_grad(double t);

}  // namespace covsynth
