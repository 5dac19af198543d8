#include "covsynth/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "covsynth/errors.hpp"

namespace covsynth {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_concentration(double concentration) {
  if (!(concentration > 0.0) || !std::isfinite(concentration)) {
    throw ConfigError("CRP concentration must be positive");
  }
}

}  // namespace

double crp_log_prior(std::span<const int> assignments, double concentration) {
  check_concentration(concentration);
  std::map<int, int> sizes;
  for (int c : assignments) ++sizes[c];
  const auto n = static_cast<double>(assignments.size());
  double lp = std::lgamma(concentration) - std::lgamma(concentration + n);
  for (const auto& [id, size] : sizes) {
    lp += std::log(concentration) + std::lgamma(static_cast<double>(size));
  }
  return lp;
}

Partition canonical_partition(std::span<const int> assignments) {
  std::map<int, std::vector<int>> by_cluster;
  for (std::size_t i = 0; i < assignments.size(); ++i) {
    by_cluster[assignments[i]].push_back(static_cast<int>(i));
  }
  Partition out;
  for (auto& [id, members] : by_cluster) out.push_back(std::move(members));
  std::sort(out.begin(), out.end(),
            [](const auto& a, const auto& b) { return a.front() < b.front(); });
  return out;
}

std::string partition_to_string(const Partition& partition) {
  std::string out;
  for (const auto& block : partition) {
    out += "{";
    for (std::size_t i = 0; i < block.size(); ++i) {
      if (i > 0) out += ",";
      out += std::to_string(block[i]);
    }
    out += "}";
  }
  return out;
}

ClusterState::ClusterState(std::vector<Dataset> series, PriorConfig prior, double noise_var,
                           double concentration, Rng& rng)
    : series_(std::move(series)), prior_(prior), noise_var_(noise_var),
      concentration_(concentration) {
  check_concentration(concentration_);
  if (series_.empty()) throw ArgumentError("clustering needs at least one series");
  for (std::size_t i = 0; i < series_.size(); ++i) {
    std::vector<double> weights;
    std::vector<int> ids;
    for (const auto& [id, trace] : clusters_) {
      ids.push_back(id);
      weights.push_back(static_cast<double>(members(id).size()));
    }
    ids.push_back(-1);
    weights.push_back(concentration_);
    const int chosen = ids.size() == 1 ? -1 : ids[rng.categorical(weights)];
    if (chosen >= 0) {
      assignments_.push_back(chosen);
      refresh(chosen);
    } else {
      const int id = next_id_++;
      assignments_.push_back(id);
      KernelAst tree = initial_tree(prior_, {series_[i]}, noise_var_, rng);
      clusters_.emplace(id, TraceState(std::move(tree), member_series(id), prior_, noise_var_));
    }
  }
}

ClusterState::ClusterState(std::vector<Dataset> series, PriorConfig prior, double noise_var,
                           double concentration, std::vector<int> assignments,
                           std::map<int, KernelAst> cluster_asts)
    : series_(std::move(series)), prior_(prior), noise_var_(noise_var),
      concentration_(concentration), assignments_(std::move(assignments)) {
  check_concentration(concentration_);
  if (assignments_.size() != series_.size()) {
    throw ArgumentError("one cluster assignment per series is required");
  }
  for (int id : assignments_) {
    if (!cluster_asts.contains(id)) throw ArgumentError("cluster " + std::to_string(id) + " has no tree");
  }
  for (auto& [id, ast] : cluster_asts) {
    if (std::find(assignments_.begin(), assignments_.end(), id) == assignments_.end()) {
      throw ArgumentError("cluster " + std::to_string(id) + " has no members");
    }
    clusters_.emplace(id, TraceState(std::move(ast), member_series(id), prior_, noise_var_));
    next_id_ = std::max(next_id_, id + 1);
  }
}

std::vector<int> ClusterState::cluster_ids() const {
  std::vector<int> out;
  for (const auto& [id, trace] : clusters_) out.push_back(id);
  return out;
}

std::vector<int> ClusterState::members(int cluster_id) const {
  std::vector<int> out;
  for (std::size_t i = 0; i < assignments_.size(); ++i) {
    if (assignments_[i] == cluster_id) out.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<Dataset> ClusterState::member_series(int cluster_id) const {
  std::vector<Dataset> out;
  for (int i : members(cluster_id)) out.push_back(series_[static_cast<std::size_t>(i)]);
  return out;
}

void ClusterState::refresh(int cluster_id) { clusters_.at(cluster_id).reset_series(member_series(cluster_id)); }

double ClusterState::joint_log_probability() const {
  double total = crp_log_prior(assignments_, concentration_);
  for (const auto& [id, trace] : clusters_) total += trace.log_joint();
  return total;
}

double ClusterState::recompute_joint_log_probability() const {
  double total = crp_log_prior(assignments_, concentration_);
  for (const auto& [id, trace] : clusters_) {
    total += ast_log_prior(prior_, trace.ast());
    for (int i : members(id)) {
      total += log_marginal(trace.ast(), series_[static_cast<std::size_t>(i)], noise_var_);
    }
  }
  return total;
}

std::vector<std::string> ClusterState::cluster_labels() const {
  std::vector<std::string> out;
  for (const auto& block : partition()) {
    out.push_back(structure_label(clusters_.at(assignments_[static_cast<std::size_t>(block.front())]).ast()));
  }
  return out;
}

void ClusterState::reassign(int ts_index, Rng& rng) {
  if (ts_index < 0 || static_cast<std::size_t>(ts_index) >= series_.size()) {
    throw ArgumentError("series index " + std::to_string(ts_index) + " out of range");
  }
  const auto i = static_cast<std::size_t>(ts_index);
  const Dataset& data = series_[i];
  const int old_id = assignments_[i];
  assignments_[i] = -1;

  // A singleton's own tree becomes the auxiliary candidate; otherwise draw one from the prior.
  KernelAst auxiliary;
  if (members(old_id).empty()) {
    auxiliary = clusters_.at(old_id).ast();
    clusters_.erase(old_id);
  } else {
    refresh(old_id);
    auxiliary = sample_ast(prior_, kRootIndex, rng);
  }

  std::vector<int> ids;
  std::vector<double> log_weights;
  auto candidate_likelihood = [&](const KernelAst& ast) {
    try {
      return log_marginal(ast, data, noise_var_);
    } catch (const NumericError&) {
      ++numeric_failures_;
      return kNegInf;
    }
  };
  for (const auto& [id, trace] : clusters_) {
    ids.push_back(id);
    log_weights.push_back(std::log(static_cast<double>(members(id).size())) +
                          candidate_likelihood(trace.ast()));
  }
  ids.push_back(-1);
  log_weights.push_back(std::log(concentration_) + candidate_likelihood(auxiliary));

  int chosen = -1;
  if (ids.size() > 1) {
    const double peak = *std::max_element(log_weights.begin(), log_weights.end());
    if (peak == kNegInf) throw NumericError("every reassignment candidate failed numerically");
    std::vector<double> weights;
    for (double lw : log_weights) weights.push_back(std::exp(lw - peak));
    chosen = ids[rng.categorical(weights)];
  } else if (log_weights.back() == kNegInf) {
    throw NumericError("every reassignment candidate failed numerically");
  }

  if (chosen >= 0) {
    assignments_[i] = chosen;
    refresh(chosen);
  } else {
    const int id = next_id_++;
    assignments_[i] = id;
    clusters_.emplace(id, TraceState(std::move(auxiliary), member_series(id), prior_, noise_var_));
  }
}

void ClusterState::check_invariants() const {
  for (int id : assignments_) {
    if (!clusters_.contains(id)) throw StructuralError("series assigned to missing cluster");
  }
  for (const auto& [id, trace] : clusters_) {
    if (members(id).empty()) throw StructuralError("orphan cluster " + std::to_string(id));
  }
}

void reassign_series_step(ClusterState& state, int ts_index, Rng& rng) {
  state.reassign(ts_index, rng);
}

std::vector<ClusterSample> run_cluster_schedule(const std::vector<Dataset>& series,
                                                const ScheduleConfig& cfg,
                                                const PriorConfig& prior, double concentration,
                                                double noise_var) {
  cfg.validate();
  prior.validate();
  std::vector<ClusterSample> out;
  if (cfg.sweeps == 0) return out;
  for (const auto& data : series) data.validate();

  Rng rng(Rng::derive_seed(cfg.seed, 0));
  ClusterState state(series, prior, noise_var, concentration, rng);
  for (int sweep = 0; sweep < cfg.sweeps; ++sweep) {
    try {
      for (int id : state.cluster_ids()) run_sweep(state.cluster(id), rng, cfg);
      for (std::size_t i = 0; i < series.size(); ++i) state.reassign(static_cast<int>(i), rng);
    } catch (const NumericError& e) {
      throw NumericError("cluster sweep " + std::to_string(sweep) + ": " + e.what(),
                         e.jitter_levels());
    }
    out.push_back(ClusterSample{sweep, state.partition(), state.cluster_labels(),
                                state.joint_log_probability()});
  }
  return out;
}

}  // namespace covsynth
