#pragma once

#include <array>
#include <bit>
#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace covsynth {

/// Heap address of a node: the root is 1, children of n are 2n and 2n+1.
using NodeIndex = std::uint64_t;

inline constexpr NodeIndex kRootIndex = 1;

enum class BaseKernel : std::uint8_t { WN, C, LIN, SE, PER };
enum class Operator : std::uint8_t { Sum, Product, ChangePoint };

inline constexpr std::array<BaseKernel, 5> kBaseKernels = {
    BaseKernel::WN, BaseKernel::C, BaseKernel::LIN, BaseKernel::SE, BaseKernel::PER};
inline constexpr std::array<Operator, 3> kOperators = {
    Operator::Sum, Operator::Product, Operator::ChangePoint};

/// Width of the sigmoid gate of the changepoint operator (not learned).
inline constexpr double kChangePointDecay = 0.1;
/// Additive floor on SE/PER lengthscales and the PER period.
inline constexpr double kLengthscaleOffset = 0.01;

std::string_view to_string(BaseKernel kind);
std::string_view to_string(Operator op);
std::optional<BaseKernel> parse_base_kernel(std::string_view name);
std::optional<Operator> parse_operator(std::string_view name);

std::size_t hyper_arity(BaseKernel kind);
std::size_t hyper_arity(Operator op);
double hyper_offset(BaseKernel kind, std::size_t slot);
double hyper_offset(Operator op, std::size_t slot);

constexpr NodeIndex left_child(NodeIndex n) { return 2 * n; }
constexpr NodeIndex right_child(NodeIndex n) { return 2 * n + 1; }
/// Depth with the root at depth 1.
constexpr int node_depth(NodeIndex n) { return static_cast<int>(std::bit_width(n)); }

/// Moves `index`, a descendant of `from_root` (or `from_root` itself), to the
/// same relative position under `to_root`.
NodeIndex rebase_index(NodeIndex index, NodeIndex from_root, NodeIndex to_root);

/// log(1 + exp(z)) without overflow.
double softplus(double z);
double sigmoid(double z);

/// One positive hyperparameter and its unconstrained coordinate.
///
/// constrained = softplus(-unconstrained) + offset, which makes
/// (constrained - offset) Exponential(1) when `unconstrained` is a
/// standard-logistic draw.
struct HyperSite {
  double unconstrained = 0.0;
  double constrained = 0.0;
  double offset = 0.0;

  static HyperSite from_unconstrained(double t, double offset);
  /// Inverse map; requires constrained > offset.
  static HyperSite from_constrained(double h, double offset);

  friend bool operator==(const HyperSite&, const HyperSite&) = default;
};

/// Random-variable bundle (b_n, o_n, k_n, h_n) stored at one node.
struct NodeBundle {
  bool is_branch = false;
  std::optional<Operator> op;
  std::optional<BaseKernel> kernel;
  std::vector<HyperSite> hypers;

  friend bool operator==(const NodeBundle&, const NodeBundle&) = default;
};

struct HyperAddress {
  NodeIndex node = kRootIndex;
  std::size_t slot = 0;

  friend auto operator<=>(const HyperAddress&, const HyperAddress&) = default;
};

/// Compositional covariance kernel stored as a sparse heap-indexed binary tree.
///
/// A value type. A default-constructed tree is empty; a complete tree is
/// rooted at index 1. Samplers also build fragments rooted elsewhere, which
/// are spliced into a full tree with `with_subtree`.
class KernelAst {
 public:
  KernelAst() = default;

  /// Leaf built from constrained hyperparameter values; offsets are filled in per kind.
  static KernelAst leaf(BaseKernel kind, std::vector<double> constrained);
  static KernelAst sum(const KernelAst& left, const KernelAst& right);
  static KernelAst product(const KernelAst& left, const KernelAst& right);
  static KernelAst changepoint(double location, const KernelAst& before, const KernelAst& after);

  bool empty() const noexcept { return nodes_.empty(); }
  std::size_t size() const noexcept { return nodes_.size(); }
  /// Smallest index present; the root of a fragment.
  NodeIndex root() const;
  bool contains(NodeIndex n) const { return nodes_.contains(n); }
  const NodeBundle& at(NodeIndex n) const;
  const std::map<NodeIndex, NodeBundle>& nodes() const noexcept { return nodes_; }

  void insert(NodeIndex n, NodeBundle bundle);

  std::vector<NodeIndex> subtree_indices(NodeIndex n) const;
  std::size_t subtree_size(NodeIndex n) const { return subtree_indices(n).size(); }
  /// Fragment holding the subtree at `n`, indices unchanged.
  KernelAst extract_subtree(NodeIndex n) const;
  /// Copy with the subtree at `n` replaced by `fragment`, which must be rooted at `n`.
  KernelAst with_subtree(NodeIndex n, const KernelAst& fragment) const;
  /// Copy of this tree moved so that its root sits at `new_root`.
  KernelAst rebased(NodeIndex new_root) const;

  std::vector<HyperAddress> hyper_addresses() const;
  const HyperSite& hyper(const HyperAddress& address) const;
  void set_hyper(const HyperAddress& address, const HyperSite& site);

  bool contains_operator(Operator op) const;

  /// True when the subtree at `n` satisfies every structural invariant.
  bool is_consistent(NodeIndex n = kRootIndex) const noexcept;
  /// Throws StructuralError naming the first violated invariant.
  void validate(NodeIndex n = kRootIndex) const;

  friend bool operator==(const KernelAst&, const KernelAst&) = default;

 private:
  static KernelAst branch(Operator op, std::vector<HyperSite> hypers, const KernelAst& left,
                          const KernelAst& right);

  std::map<NodeIndex, NodeBundle> nodes_;
};

/// k_node(x, y).
double eval_kernel(const KernelAst& ast, NodeIndex node, double x, double y);

/// |xs| x |xs| matrix of pairwise kernel values of the subtree at `node`.
Eigen::MatrixXd build_cov_matrix(const KernelAst& ast, NodeIndex node, std::span<const double> xs);
/// |xs| x |zs| matrix of kernel values k(xs[i], zs[j]).
Eigen::MatrixXd build_cross_cov(const KernelAst& ast, NodeIndex node, std::span<const double> xs,
                                std::span<const double> zs);

/// Covariance matrix of every subtree, keyed by node index.
std::map<NodeIndex, Eigen::MatrixXd> subtree_cov_matrices(const KernelAst& ast,
                                                          std::span<const double> xs);

/// dK/dh for each constrained hyperparameter of a leaf, in slot order.
std::vector<Eigen::MatrixXd> leaf_hyper_jacobians(const NodeBundle& leaf,
                                                  std::span<const double> xs);

/// Infix rendering of the tree skeleton, e.g. "CP(LIN * WN, WN)".
std::string structure_label(const KernelAst& ast, NodeIndex node = kRootIndex);

/// Nested-list form: ["LIN", 0.36], ["*", lhs, rhs], ["CP", location, lhs, rhs].
nlohmann::json ast_to_json(const KernelAst& ast, NodeIndex node = kRootIndex);
KernelAst ast_from_json(const nlohmann::json& value);

}  // namespace covsynth
