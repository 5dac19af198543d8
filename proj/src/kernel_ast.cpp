#include "covsynth/kernel_ast.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "covsynth/errors.hpp"

namespace covsynth {

namespace {

struct KernelInfo {
  BaseKernel kind;
  std::string_view name;
  std::size_t arity;
  std::array<double, 2> offsets;
};

constexpr std::array<KernelInfo, 5> kKernelTable = {{
    {BaseKernel::WN, "WN", 1, {0.0, 0.0}},
    {BaseKernel::C, "C", 1, {0.0, 0.0}},
    {BaseKernel::LIN, "LIN", 1, {0.0, 0.0}},
    {BaseKernel::SE, "SE", 1, {kLengthscaleOffset, 0.0}},
    {BaseKernel::PER, "PER", 2, {kLengthscaleOffset, kLengthscaleOffset}},
}};

const KernelInfo& info(BaseKernel kind) { return kKernelTable[static_cast<std::size_t>(kind)]; }

std::string node_name(NodeIndex n) { return "node " + std::to_string(n); }

void require_finite(const NodeBundle& bundle, NodeIndex n) {
  for (const auto& h : bundle.hypers) {
    if (!std::isfinite(h.constrained)) {
      throw NumericError("non-finite hyperparameter at " + node_name(n));
    }
  }
}

double base_kernel_value(BaseKernel kind, const std::vector<HyperSite>& hypers, double x,
                         double y) {
  switch (kind) {
    case BaseKernel::WN:
      return x == y ? hypers[0].constrained : 0.0;
    case BaseKernel::C:
      return hypers[0].constrained;
    case BaseKernel::LIN: {
      const double shift = hypers[0].constrained;
      return (x - shift) * (y - shift);
    }
    case BaseKernel::SE: {
      const double ell = hypers[0].constrained;
      const double r = x - y;
      return std::exp(-(r * r) / (2.0 * ell * ell));
    }
    case BaseKernel::PER: {
      const double ell = hypers[0].constrained;
      const double period = hypers[1].constrained;
      const double s = std::sin(std::numbers::pi * std::abs(x - y) / period);
      return std::exp(-2.0 * s * s / (ell * ell));
    }
  }
  return 0.0;
}

// Gate weight of the "before" operand; the complement is computed directly for accuracy.
double gate_before(double x, double location) {
  return sigmoid(-(x - location) / kChangePointDecay);
}
double gate_after(double x, double location) { return sigmoid((x - location) / kChangePointDecay); }

Eigen::MatrixXd cov_recursive(const KernelAst& ast, NodeIndex n, std::span<const double> xs,
                              std::span<const double> zs, bool symmetric) {
  const NodeBundle& bundle = ast.at(n);
  require_finite(bundle, n);
  const auto rows = static_cast<Eigen::Index>(xs.size());
  const auto cols = static_cast<Eigen::Index>(zs.size());

  if (!bundle.is_branch) {
    Eigen::MatrixXd k(rows, cols);
    const BaseKernel kind = *bundle.kernel;
    if (symmetric) {
      for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i <= j; ++i) {
          k(i, j) = base_kernel_value(kind, bundle.hypers, xs[i], zs[j]);
          k(j, i) = k(i, j);
        }
      }
    } else {
      for (Eigen::Index j = 0; j < cols; ++j) {
        for (Eigen::Index i = 0; i < rows; ++i) {
          k(i, j) = base_kernel_value(kind, bundle.hypers, xs[i], zs[j]);
        }
      }
    }
    return k;
  }

  Eigen::MatrixXd left = cov_recursive(ast, left_child(n), xs, zs, symmetric);
  Eigen::MatrixXd right = cov_recursive(ast, right_child(n), xs, zs, symmetric);
  switch (*bundle.op) {
    case Operator::Sum:
      return left + right;
    case Operator::Product:
      return left.cwiseProduct(right);
    case Operator::ChangePoint: {
      const double location = bundle.hypers[0].constrained;
      Eigen::MatrixXd k(rows, cols);
      for (Eigen::Index j = 0; j < cols; ++j) {
        const double bz = gate_before(zs[j], location);
        const double az = gate_after(zs[j], location);
        for (Eigen::Index i = 0; i < rows; ++i) {
          const double bx = gate_before(xs[i], location);
          const double ax = gate_after(xs[i], location);
          k(i, j) = bx * bz * left(i, j) + ax * az * right(i, j);
        }
      }
      return k;
    }
  }
  return {};
}

void collect_subtree_matrices(const KernelAst& ast, NodeIndex n, std::span<const double> xs,
                              std::map<NodeIndex, Eigen::MatrixXd>& out) {
  const NodeBundle& bundle = ast.at(n);
  if (!bundle.is_branch) {
    out.emplace(n, cov_recursive(ast, n, xs, xs, true));
    return;
  }
  collect_subtree_matrices(ast, left_child(n), xs, out);
  collect_subtree_matrices(ast, right_child(n), xs, out);
  const Eigen::MatrixXd& left = out.at(left_child(n));
  const Eigen::MatrixXd& right = out.at(right_child(n));
  switch (*bundle.op) {
    case Operator::Sum:
      out.emplace(n, left + right);
      break;
    case Operator::Product:
      out.emplace(n, left.cwiseProduct(right));
      break;
    case Operator::ChangePoint:
      out.emplace(n, cov_recursive(ast, n, xs, xs, true));
      break;
  }
}

// Precedence: 0 for leaves and CP (atomic), 1 for '*', 2 for '+'.
int precedence(const NodeBundle& bundle) {
  if (!bundle.is_branch) return 0;
  switch (*bundle.op) {
    case Operator::Sum:
      return 2;
    case Operator::Product:
      return 1;
    case Operator::ChangePoint:
      return 0;
  }
  return 0;
}

std::string wrap(std::string text) { return "(" + std::move(text) + ")"; }

}  // namespace

std::string_view to_string(BaseKernel kind) { return info(kind).name; }

std::string_view to_string(Operator op) {
  switch (op) {
    case Operator::Sum:
      return "+";
    case Operator::Product:
      return "*";
    case Operator::ChangePoint:
      return "CP";
  }
  return "?";
}

std::optional<BaseKernel> parse_base_kernel(std::string_view name) {
  for (const auto& entry : kKernelTable) {
    if (entry.name == name) return entry.kind;
  }
  return std::nullopt;
}

std::optional<Operator> parse_operator(std::string_view name) {
  for (Operator op : kOperators) {
    if (to_string(op) == name) return op;
  }
  return std::nullopt;
}

std::size_t hyper_arity(BaseKernel kind) { return info(kind).arity; }
std::size_t hyper_arity(Operator op) { return op == Operator::ChangePoint ? 1 : 0; }

double hyper_offset(BaseKernel kind, std::size_t slot) { return info(kind).offsets.at(slot); }
double hyper_offset(Operator, std::size_t) { return 0.0; }

NodeIndex rebase_index(NodeIndex index, NodeIndex from_root, NodeIndex to_root) {
  const int shift = node_depth(index) - node_depth(from_root);
  if (shift < 0 || (index >> shift) != from_root) {
    throw StructuralError(node_name(index) + " is not below " + node_name(from_root));
  }
  const NodeIndex relative = index - (from_root << shift);
  return (to_root << shift) + relative;
}

double softplus(double z) { return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z)); }

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

HyperSite HyperSite::from_unconstrained(double t, double offset) {
  return HyperSite{t, softplus(-t) + offset, offset};
}

HyperSite HyperSite::from_constrained(double h, double offset) {
  const double excess = h - offset;
  if (!(excess > 0.0)) {
    throw ArgumentError("hyperparameter " + std::to_string(h) + " must exceed its offset " +
                        std::to_string(offset));
  }
  // softplus(-t) = excess  =>  t = -log(expm1(excess))
  return HyperSite{-std::log(std::expm1(excess)), h, offset};
}

KernelAst KernelAst::leaf(BaseKernel kind, std::vector<double> constrained) {
  if (constrained.size() != hyper_arity(kind)) {
    throw StructuralError(std::string(to_string(kind)) + " expects " +
                          std::to_string(hyper_arity(kind)) + " hyperparameter(s)");
  }
  NodeBundle bundle;
  bundle.kernel = kind;
  for (std::size_t slot = 0; slot < constrained.size(); ++slot) {
    bundle.hypers.push_back(HyperSite::from_constrained(constrained[slot], hyper_offset(kind, slot)));
  }
  KernelAst ast;
  ast.nodes_.emplace(kRootIndex, std::move(bundle));
  return ast;
}

KernelAst KernelAst::branch(Operator op, std::vector<HyperSite> hypers, const KernelAst& left,
                            const KernelAst& right) {
  NodeBundle bundle;
  bundle.is_branch = true;
  bundle.op = op;
  bundle.hypers = std::move(hypers);
  KernelAst ast;
  ast.nodes_.emplace(kRootIndex, std::move(bundle));
  for (const auto& [n, b] : left.rebased(left_child(kRootIndex)).nodes_) ast.nodes_.emplace(n, b);
  for (const auto& [n, b] : right.rebased(right_child(kRootIndex)).nodes_) ast.nodes_.emplace(n, b);
  return ast;
}

KernelAst KernelAst::sum(const KernelAst& left, const KernelAst& right) {
  return branch(Operator::Sum, {}, left, right);
}

KernelAst KernelAst::product(const KernelAst& left, const KernelAst& right) {
  return branch(Operator::Product, {}, left, right);
}

KernelAst KernelAst::changepoint(double location, const KernelAst& before, const KernelAst& after) {
  return branch(Operator::ChangePoint,
                {HyperSite::from_constrained(location, hyper_offset(Operator::ChangePoint, 0))},
                before, after);
}

NodeIndex KernelAst::root() const {
  if (nodes_.empty()) throw StructuralError("empty kernel tree has no root");
  return nodes_.begin()->first;
}

const NodeBundle& KernelAst::at(NodeIndex n) const {
  auto it = nodes_.find(n);
  if (it == nodes_.end()) throw StructuralError("unknown " + node_name(n));
  return it->second;
}

void KernelAst::insert(NodeIndex n, NodeBundle bundle) {
  if (n == 0) throw StructuralError("node index 0 is not addressable");
  nodes_.insert_or_assign(n, std::move(bundle));
}

std::vector<NodeIndex> KernelAst::subtree_indices(NodeIndex n) const {
  std::vector<NodeIndex> out;
  if (!contains(n)) return out;
  std::vector<NodeIndex> stack{n};
  while (!stack.empty()) {
    const NodeIndex m = stack.back();
    stack.pop_back();
    out.push_back(m);
    if (at(m).is_branch) {
      for (NodeIndex child : {right_child(m), left_child(m)}) {
        if (contains(child)) stack.push_back(child);
      }
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

KernelAst KernelAst::extract_subtree(NodeIndex n) const {
  KernelAst fragment;
  for (NodeIndex m : subtree_indices(n)) fragment.nodes_.emplace(m, at(m));
  return fragment;
}

KernelAst KernelAst::with_subtree(NodeIndex n, const KernelAst& fragment) const {
  if (fragment.empty() || fragment.root() != n) {
    throw StructuralError("replacement fragment must be rooted at " + node_name(n));
  }
  KernelAst result = *this;
  for (NodeIndex m : subtree_indices(n)) result.nodes_.erase(m);
  for (const auto& [m, bundle] : fragment.nodes_) result.nodes_.insert_or_assign(m, bundle);
  return result;
}

KernelAst KernelAst::rebased(NodeIndex new_root) const {
  if (empty()) return {};
  const NodeIndex old_root = root();
  KernelAst moved;
  for (const auto& [m, bundle] : nodes_) {
    moved.nodes_.emplace(rebase_index(m, old_root, new_root), bundle);
  }
  return moved;
}

std::vector<HyperAddress> KernelAst::hyper_addresses() const {
  std::vector<HyperAddress> out;
  for (const auto& [n, bundle] : nodes_) {
    for (std::size_t slot = 0; slot < bundle.hypers.size(); ++slot) out.push_back({n, slot});
  }
  return out;
}

const HyperSite& KernelAst::hyper(const HyperAddress& address) const {
  const NodeBundle& bundle = at(address.node);
  if (address.slot >= bundle.hypers.size()) {
    throw StructuralError("no hyperparameter slot " + std::to_string(address.slot) + " at " +
                          node_name(address.node));
  }
  return bundle.hypers[address.slot];
}

void KernelAst::set_hyper(const HyperAddress& address, const HyperSite& site) {
  hyper(address);
  nodes_.at(address.node).hypers[address.slot] = site;
}

bool KernelAst::contains_operator(Operator op) const {
  return std::any_of(nodes_.begin(), nodes_.end(),
                     [op](const auto& entry) { return entry.second.op == op; });
}

void KernelAst::validate(NodeIndex n) const {
  if (!contains(n)) throw StructuralError("missing " + node_name(n));
  for (NodeIndex m : subtree_indices(n)) {
    const NodeBundle& b = at(m);
    const bool has_left = contains(left_child(m));
    const bool has_right = contains(right_child(m));
    if (b.is_branch) {
      if (!b.op || b.kernel) throw StructuralError(node_name(m) + ": branch needs an operator only");
      if (!has_left || !has_right) throw StructuralError(node_name(m) + ": branch needs two children");
      if (b.hypers.size() != hyper_arity(*b.op)) {
        throw StructuralError(node_name(m) + ": wrong operator hyperparameter count");
      }
    } else {
      if (!b.kernel || b.op) throw StructuralError(node_name(m) + ": leaf needs a kernel only");
      if (has_left || has_right) throw StructuralError(node_name(m) + ": leaf has children");
      if (b.hypers.size() != hyper_arity(*b.kernel)) {
        throw StructuralError(node_name(m) + ": wrong kernel hyperparameter count");
      }
    }
    for (std::size_t slot = 0; slot < b.hypers.size(); ++slot) {
      const HyperSite& site = b.hypers[slot];
      const double expected =
          b.is_branch ? hyper_offset(*b.op, slot) : hyper_offset(*b.kernel, slot);
      if (site.offset != expected) throw StructuralError(node_name(m) + ": wrong hyper offset");
      if (!(site.constrained > site.offset)) {
        throw StructuralError(node_name(m) + ": hyperparameter not above its offset");
      }
    }
  }
  // Nodes below n that are unreachable from n would be orphans.
  if (n == kRootIndex && subtree_indices(n).size() != nodes_.size()) {
    throw StructuralError("tree contains orphan nodes");
  }
}

bool KernelAst::is_consistent(NodeIndex n) const noexcept {
  try {
    validate(n);
    return true;
  } catch (const std::exception&) {
    return false;
  }
}

double eval_kernel(const KernelAst& ast, NodeIndex node, double x, double y) {
  const NodeBundle& bundle = ast.at(node);
  require_finite(bundle, node);
  if (!bundle.is_branch) return base_kernel_value(*bundle.kernel, bundle.hypers, x, y);

  const double left = eval_kernel(ast, left_child(node), x, y);
  const double right = eval_kernel(ast, right_child(node), x, y);
  switch (*bundle.op) {
    case Operator::Sum:
      return left + right;
    case Operator::Product:
      return left * right;
    case Operator::ChangePoint: {
      const double location = bundle.hypers[0].constrained;
      return gate_before(x, location) * gate_before(y, location) * left +
             gate_after(x, location) * gate_after(y, location) * right;
    }
  }
  return 0.0;
}

Eigen::MatrixXd build_cov_matrix(const KernelAst& ast, NodeIndex node, std::span<const double> xs) {
  if (xs.empty()) throw ArgumentError("build_cov_matrix: no inputs");
  return cov_recursive(ast, node, xs, xs, true);
}

Eigen::MatrixXd build_cross_cov(const KernelAst& ast, NodeIndex node, std::span<const double> xs,
                                std::span<const double> zs) {
  return cov_recursive(ast, node, xs, zs, false);
}

std::map<NodeIndex, Eigen::MatrixXd> subtree_cov_matrices(const KernelAst& ast,
                                                          std::span<const double> xs) {
  std::map<NodeIndex, Eigen::MatrixXd> out;
  collect_subtree_matrices(ast, kRootIndex, xs, out);
  return out;
}

std::vector<Eigen::MatrixXd> leaf_hyper_jacobians(const NodeBundle& leaf,
                                                  std::span<const double> xs) {
  if (leaf.is_branch) throw StructuralError("leaf_hyper_jacobians: node is a branch");
  const auto n = static_cast<Eigen::Index>(xs.size());
  std::vector<Eigen::MatrixXd> out;
  const BaseKernel kind = *leaf.kernel;
  switch (kind) {
    case BaseKernel::WN: {
      Eigen::MatrixXd d(n, n);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) d(i, j) = xs[i] == xs[j] ? 1.0 : 0.0;
      out.push_back(std::move(d));
      break;
    }
    case BaseKernel::C:
      out.push_back(Eigen::MatrixXd::Ones(n, n));
      break;
    case BaseKernel::LIN: {
      const double shift = leaf.hypers[0].constrained;
      Eigen::MatrixXd d(n, n);
      for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = 0; j < n; ++j) d(i, j) = 2.0 * shift - xs[i] - xs[j];
      out.push_back(std::move(d));
      break;
    }
    case BaseKernel::SE: {
      const double ell = leaf.hypers[0].constrained;
      Eigen::MatrixXd d(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
          const double r2 = (xs[i] - xs[j]) * (xs[i] - xs[j]);
          d(i, j) = std::exp(-r2 / (2.0 * ell * ell)) * r2 / (ell * ell * ell);
        }
      }
      out.push_back(std::move(d));
      break;
    }
    case BaseKernel::PER: {
      const double ell = leaf.hypers[0].constrained;
      const double period = leaf.hypers[1].constrained;
      Eigen::MatrixXd d_ell(n, n);
      Eigen::MatrixXd d_period(n, n);
      for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) {
          const double r = std::abs(xs[i] - xs[j]);
          const double phase = std::numbers::pi * r / period;
          const double s = std::sin(phase);
          const double k = std::exp(-2.0 * s * s / (ell * ell));
          d_ell(i, j) = k * 4.0 * s * s / (ell * ell * ell);
          d_period(i, j) = k * (2.0 * std::numbers::pi * r / (ell * ell * period * period)) *
                           std::sin(2.0 * phase);
        }
      }
      out.push_back(std::move(d_ell));
      out.push_back(std::move(d_period));
      break;
    }
  }
  return out;
}

std::string structure_label(const KernelAst& ast, NodeIndex node) {
  const NodeBundle& bundle = ast.at(node);
  if (!bundle.is_branch) return std::string(to_string(*bundle.kernel));

  const NodeIndex l = left_child(node);
  const NodeIndex r = right_child(node);
  std::string left = structure_label(ast, l);
  std::string right = structure_label(ast, r);
  switch (*bundle.op) {
    case Operator::ChangePoint:
      return "CP(" + left + ", " + right + ")";
    case Operator::Sum:
      // Left-associative: a right operand at the same level keeps its parentheses.
      if (precedence(ast.at(r)) == 2) right = wrap(std::move(right));
      return left + " + " + right;
    case Operator::Product:
      if (precedence(ast.at(l)) == 2) left = wrap(std::move(left));
      if (precedence(ast.at(r)) >= 1) right = wrap(std::move(right));
      return left + " * " + right;
  }
  return {};
}

nlohmann::json ast_to_json(const KernelAst& ast, NodeIndex node) {
  const NodeBundle& bundle = ast.at(node);
  nlohmann::json out = nlohmann::json::array();
  if (!bundle.is_branch) {
    out.push_back(std::string(to_string(*bundle.kernel)));
    for (const auto& h : bundle.hypers) out.push_back(h.constrained);
    return out;
  }
  out.push_back(std::string(to_string(*bundle.op)));
  for (const auto& h : bundle.hypers) out.push_back(h.constrained);
  out.push_back(ast_to_json(ast, left_child(node)));
  out.push_back(ast_to_json(ast, right_child(node)));
  return out;
}

KernelAst ast_from_json(const nlohmann::json& value) {
  if (!value.is_array() || value.empty() || !value[0].is_string()) {
    throw StructuralError("kernel JSON must be a non-empty array headed by a symbol");
  }
  const auto symbol = value[0].get<std::string>();
  auto number = [&](std::size_t i) {
    if (i >= value.size() || !value[i].is_number()) {
      throw StructuralError("kernel JSON '" + symbol + "': expected a number at position " +
                            std::to_string(i));
    }
    return value[i].get<double>();
  };

  if (auto kind = parse_base_kernel(symbol)) {
    const std::size_t arity = hyper_arity(*kind);
    if (value.size() != arity + 1) {
      throw StructuralError("kernel JSON '" + symbol + "': wrong number of hyperparameters");
    }
    std::vector<double> hypers;
    for (std::size_t i = 1; i <= arity; ++i) hypers.push_back(number(i));
    return KernelAst::leaf(*kind, std::move(hypers));
  }
  if (auto op = parse_operator(symbol)) {
    const std::size_t arity = hyper_arity(*op);
    if (value.size() != arity + 3) {
      throw StructuralError("kernel JSON '" + symbol + "': expected two operands");
    }
    KernelAst left = ast_from_json(value[arity + 1]);
    KernelAst right = ast_from_json(value[arity + 2]);
    switch (*op) {
      case Operator::Sum:
        return KernelAst::sum(left, right);
      case Operator::Product:
        return KernelAst::product(left, right);
      case Operator::ChangePoint:
        return KernelAst::changepoint(number(1), left, right);
    }
  }
  throw StructuralError("unknown kernel symbol '" + symbol + "'");
}

}  // namespace covsynth
