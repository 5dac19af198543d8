#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "covsynth/gp.hpp"
#include "covsynth/inference.hpp"
#include "covsynth/prior.hpp"
#include "covsynth/random.hpp"

namespace covsynth {

inline constexpr double kDefaultConcentration = 0.5;

/// Partition of series indices; clusters sorted by their smallest member.
using Partition = std::vector<std::vector<int>>;

/// Log probability of a partition (given as per-series cluster ids) under a CRP.
double crp_log_prior(std::span<const int> assignments, double concentration);

Partition canonical_partition(std::span<const int> assignments);
std::string partition_to_string(const Partition& partition);

/// CRP mixture over series; each cluster owns one kernel tree shared by its members.
///
/// Members are independent executions of their cluster's GP program: a
/// cluster's likelihood is the sum of per-member marginal likelihoods.
class ClusterState {
 public:
  /// Starts from a sequential CRP draw, each new cluster getting a prior tree.
  ClusterState(std::vector<Dataset> series, PriorConfig prior, double noise_var,
               double concentration, Rng& rng);
  /// Starts from explicit assignments and one tree per cluster id.
  ClusterState(std::vector<Dataset> series, PriorConfig prior, double noise_var,
               double concentration, std::vector<int> assignments,
               std::map<int, KernelAst> cluster_asts);

  const std::vector<Dataset>& series() const noexcept { return series_; }
  const std::vector<int>& assignments() const noexcept { return assignments_; }
  double concentration() const noexcept { return concentration_; }
  const PriorConfig& prior() const noexcept { return prior_; }
  double noise_var() const noexcept { return noise_var_; }

  std::vector<int> cluster_ids() const;
  std::vector<int> members(int cluster_id) const;
  TraceState& cluster(int cluster_id) { return clusters_.at(cluster_id); }
  const TraceState& cluster(int cluster_id) const { return clusters_.at(cluster_id); }

  /// CRP prior plus per-cluster tree prior and likelihood, from cached values.
  double joint_log_probability() const;
  /// Same quantity recomputed from scratch.
  double recompute_joint_log_probability() const;

  Partition partition() const { return canonical_partition(assignments_); }
  /// Structure label per cluster, in canonical partition order.
  std::vector<std::string> cluster_labels() const;

  /// Candidate likelihoods that failed numerically during reassignment.
  std::uint64_t numeric_failures() const noexcept { return numeric_failures_; }

  /// Gibbs reassignment of one series with one auxiliary prior tree for a new cluster.
  void reassign(int ts_index, Rng& rng);

  void check_invariants() const;

 private:
  std::vector<Dataset> member_series(int cluster_id) const;
  void refresh(int cluster_id);

  std::vector<Dataset> series_;
  PriorConfig prior_;
  double noise_var_;
  double concentration_;
  std::vector<int> assignments_;
  std::map<int, TraceState> clusters_;
  int next_id_ = 0;
  std::uint64_t numeric_failures_ = 0;
};

void reassign_series_step(ClusterState& state, int ts_index, Rng& rng);

struct ClusterSample {
  int sweep = 0;
  Partition partition;
  std::vector<std::string> labels;
  double log_joint = 0.0;
};

/// Per sweep: hyper and structure moves for every cluster, then one reassignment per series.
std::vector<ClusterSample> run_cluster_schedule(const std::vector<Dataset>& series,
                                                const ScheduleConfig& cfg,
                                                const PriorConfig& prior, double concentration,
                                                double noise_var = kBaselineNoise);

}  // namespace covsynth
