#include "covsynth/prior.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

#include "covsynth/errors.hpp"

namespace covsynth {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

bool forced_leaf(const PriorConfig& cfg, NodeIndex n) { return node_depth(n) >= cfg.max_depth; }

double safe_log(double p) { return p > 0.0 ? std::log(p) : kNegInf; }

template <std::size_t N>
void check_simplex(const std::array<double, N>& weights, const char* name) {
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ConfigError(std::string(name) + ": weights must be finite and non-negative");
    }
  }
  const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError(std::string(name) + ": weights must sum to 1");
}

// Log density of one node bundle given its position; `with_hypers` adds the Exp(1) terms.
double node_log_prior(const PriorConfig& cfg, const KernelAst& ast, NodeIndex n, bool with_hypers) {
  const NodeBundle& b = ast.at(n);
  const bool has_left = ast.contains(left_child(n));
  const bool has_right = ast.contains(right_child(n));
  double lp = 0.0;
  if (b.is_branch) {
    if (forced_leaf(cfg, n) || !b.op || b.kernel || !has_left || !has_right) return kNegInf;
    if (b.hypers.size() != hyper_arity(*b.op)) return kNegInf;
    lp += safe_log(cfg.p_branch) + safe_log(cfg.operator_weights[static_cast<std::size_t>(*b.op)]);
    for (std::size_t slot = 0; slot < b.hypers.size(); ++slot) {
      if (b.hypers[slot].offset != hyper_offset(*b.op, slot)) return kNegInf;
    }
  } else {
    if (!b.kernel || b.op || has_left || has_right) return kNegInf;
    if (b.hypers.size() != hyper_arity(*b.kernel)) return kNegInf;
    if (!forced_leaf(cfg, n)) lp += safe_log(1.0 - cfg.p_branch);
    lp += safe_log(cfg.kernel_weights[static_cast<std::size_t>(*b.kernel)]);
    for (std::size_t slot = 0; slot < b.hypers.size(); ++slot) {
      if (b.hypers[slot].offset != hyper_offset(*b.kernel, slot)) return kNegInf;
    }
  }
  if (with_hypers) {
    for (const auto& site : b.hypers) lp += hyper_log_density(site);
  }
  return lp;
}

double sum_over_subtree(const PriorConfig& cfg, const KernelAst& ast, NodeIndex node,
                        bool with_hypers) {
  if (!ast.contains(node)) return kNegInf;
  double total = 0.0;
  for (NodeIndex n : ast.subtree_indices(node)) {
    total += node_log_prior(cfg, ast, n, with_hypers);
    if (total == kNegInf) return kNegInf;
  }
  return total;
}

double full_tree(const PriorConfig& cfg, const KernelAst& ast, bool with_hypers) {
  if (!ast.contains(kRootIndex)) return kNegInf;
  // Nodes unreachable from the root make the tree inconsistent.
  if (ast.subtree_size(kRootIndex) != ast.size()) return kNegInf;
  return sum_over_subtree(cfg, ast, kRootIndex, with_hypers);
}

}  // namespace

void PriorConfig::validate() const {
  if (!(p_branch >= 0.0 && p_branch < 1.0)) throw ConfigError("p_branch must lie in [0, 1)");
  check_simplex(kernel_weights, "kernel_weights");
  check_simplex(operator_weights, "operator_weights");
  if (max_depth < 1 || max_depth > 60) throw ConfigError("max_depth must lie in [1, 60]");
}

HyperSite sample_hyper(Rng& rng, double offset) {
  const double u = rng.uniform();
  return HyperSite{std::log(u / (1.0 - u)), -std::log(u) + offset, offset};
}

KernelAst sample_ast(const PriorConfig& cfg, NodeIndex node, Rng& rng) {
  KernelAst fragment;
  std::vector<NodeIndex> pending{node};
  // Depth-first, left before right, so draws are consumed in a fixed order.
  while (!pending.empty()) {
    const NodeIndex n = pending.back();
    pending.pop_back();
    NodeBundle bundle;
    if (!forced_leaf(cfg, n) && rng.flip(cfg.p_branch)) {
      bundle.is_branch = true;
      const auto op = kOperators[rng.categorical(cfg.operator_weights)];
      bundle.op = op;
      for (std::size_t slot = 0; slot < hyper_arity(op); ++slot) {
        bundle.hypers.push_back(sample_hyper(rng, hyper_offset(op, slot)));
      }
      pending.push_back(right_child(n));
      pending.push_back(left_child(n));
    } else {
      const auto kind = kBaseKernels[rng.categorical(cfg.kernel_weights)];
      bundle.kernel = kind;
      for (std::size_t slot = 0; slot < hyper_arity(kind); ++slot) {
        bundle.hypers.push_back(sample_hyper(rng, hyper_offset(kind, slot)));
      }
    }
    fragment.insert(n, std::move(bundle));
  }
  return fragment;
}

double hyper_log_density(const HyperSite& site) {
  const double excess = site.constrained - site.offset;
  if (!(excess >= 0.0)) return kNegInf;
  return -excess;
}

double logistic_log_density(double t) { return -t - 2.0 * softplus(-t); }

double logistic_log_density_grad(double t) { return -std::tanh(0.5 * t); }

double ast_log_prior(const PriorConfig& cfg, const KernelAst& ast) {
  return full_tree(cfg, ast, true);
}

double subtree_log_prior(const PriorConfig& cfg, const KernelAst& ast, NodeIndex node) {
  return sum_over_subtree(cfg, ast, node, true);
}

double structure_log_prior(const PriorConfig& cfg, const KernelAst& ast) {
  return full_tree(cfg, ast, false);
}

}  // namespace covsynth
