#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "covsynth/gp.hpp"
#include "covsynth/kernel_ast.hpp"
#include "covsynth/prior.hpp"
#include "covsynth/random.hpp"

namespace covsynth {

enum class HyperMode {
  /// Per-site resimulation MH only.
  MH,
  /// Joint gradient ascent; trees containing a changepoint fall back to MH.
  Gradient,
  /// One gradient step (when supported) followed by one per-site MH move.
  Mixed,
};

std::string_view to_string(HyperMode mode);
std::optional<HyperMode> parse_hyper_mode(std::string_view name);

struct ScheduleConfig {
  int sweeps = 100;
  int hyper_steps = 100;
  int structure_steps = 100;
  double step_size = 0.01;
  int chains = 1;
  std::uint64_t seed = 0;
  /// Fraction of each chain's recorded samples dropped as burn-in.
  double burn_in = 0.2;
  HyperMode hyper_mode = HyperMode::Gradient;
  /// Multiply structure acceptance by N(T)/N(T') for uniformly chosen nodes.
  bool node_count_correction = true;
  /// With a fixed starting tree, redraw its hyperparameters from the prior in each chain.
  bool resample_initial_hypers = false;

  void validate() const;
};

struct MoveCounter {
  std::uint64_t proposed = 0;
  std::uint64_t accepted = 0;
  std::uint64_t numeric_failures = 0;

  double acceptance_rate() const {
    return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed);
  }
};

struct MoveStats {
  MoveCounter structure;
  MoveCounter hyper_mh;
  MoveCounter gradient;
  /// Gradient moves replaced by MH because the tree had a changepoint.
  std::uint64_t gradient_fallbacks = 0;
};

/// Log likelihood of a tree summed over independent series, with per-series factors.
struct LikelihoodEvaluation {
  double log_likelihood = 0.0;
  std::vector<MarginalFit> fits;
};

LikelihoodEvaluation evaluate_likelihood(const KernelAst& ast, const std::vector<Dataset>& series,
                                         double noise_var);

/// State of one Markov chain over kernel trees.
///
/// Holds one or more series treated as independent executions of the same
/// GP program. Cached likelihood and prior always describe the current tree.
class TraceState {
 public:
  TraceState(KernelAst ast, Dataset data, PriorConfig prior, double noise_var = kBaselineNoise);
  TraceState(KernelAst ast, std::vector<Dataset> series, PriorConfig prior,
             double noise_var = kBaselineNoise);

  const KernelAst& ast() const noexcept { return ast_; }
  const std::vector<Dataset>& series() const noexcept { return series_; }
  const PriorConfig& prior() const noexcept { return prior_; }
  double noise_var() const noexcept { return noise_var_; }

  double log_likelihood() const noexcept { return log_likelihood_; }
  double log_prior() const noexcept { return log_prior_; }
  double log_joint() const noexcept { return log_likelihood_ + log_prior_; }
  const std::vector<MarginalFit>& fits() const noexcept { return fits_; }

  MoveStats& stats() noexcept { return stats_; }
  const MoveStats& stats() const noexcept { return stats_; }

  /// Installs an accepted tree whose likelihood has already been evaluated.
  void accept(KernelAst ast, LikelihoodEvaluation evaluation);
  /// Replaces the data; caches are recomputed.
  void reset_series(std::vector<Dataset> series);

 private:
  KernelAst ast_;
  std::vector<Dataset> series_;
  PriorConfig prior_;
  double noise_var_;
  double log_likelihood_ = 0.0;
  double log_prior_ = 0.0;
  std::vector<MarginalFit> fits_;
  MoveStats stats_;
};

struct MoveResult {
  bool accepted = false;
  double log_alpha = 0.0;
  /// Node (structure moves) whose subtree was resimulated.
  NodeIndex node = kRootIndex;
};

struct StructureMoveOptions {
  bool node_count_correction = true;
  /// Resimulate this node instead of a uniformly chosen one.
  std::optional<NodeIndex> fixed_node;
};

/// Proposal of a structure move: the subtree at `node` redrawn from the prior.
struct StructureProposal {
  NodeIndex node = kRootIndex;
  KernelAst proposal;
};

StructureProposal propose_structure(const TraceState& state, Rng& rng,
                                    std::optional<NodeIndex> fixed_node = std::nullopt);

/// log of min(1, N(T)/N(T') * p(D|T')/p(D|T)) before the min; the correction is optional.
double structure_log_acceptance(const TraceState& state, const KernelAst& proposal,
                                double proposal_log_likelihood, bool node_count_correction);

/// Resimulation MH over tree structure.
MoveResult mh_structure_step(TraceState& state, Rng& rng, const StructureMoveOptions& options = {});

/// Resimulation MH on one hyperparameter site.
MoveResult mh_hyper_step(TraceState& state, Rng& rng, const HyperAddress& site);
/// mh_hyper_step on a uniformly chosen site; no-op on a tree without sites.
MoveResult mh_random_hyper_step(TraceState& state, Rng& rng);

/// log p(D | T) + sum over sites of the standard-logistic log density of t:
/// the hyperparameter objective in unconstrained coordinates.
double hyper_log_objective(const KernelAst& ast, const std::vector<Dataset>& series,
                           double noise_var);

struct HyperGradient {
  std::vector<HyperAddress> sites;
  /// d objective / d t per site, aligned with `sites`.
  Eigen::VectorXd d_unconstrained;
  /// d log p(D|T) / d h per site (constrained coordinates, likelihood only).
  Eigen::VectorXd d_constrained_likelihood;
  double objective = 0.0;
};

/// Reverse-mode gradient of hyper_log_objective through the kernel tree.
/// Throws UnsupportedMove for trees containing a changepoint.
HyperGradient hyper_gradient(const KernelAst& ast, const std::vector<Dataset>& series,
                             double noise_var);

/// One ascent step t <- t + step_size * gradient over all sites jointly.
/// A step that makes the likelihood non-finite is reverted and counted.
MoveResult gradient_step_hypers(TraceState& state, double step_size);

/// A hyperparameter move under `mode`, falling back to MH where gradients are unsupported.
void hyper_move(TraceState& state, Rng& rng, HyperMode mode, double step_size);

struct PosteriorSample {
  int chain = 0;
  int sweep = 0;
  std::string label;
  KernelAst ast;
  double log_likelihood = 0.0;
  double log_prior = 0.0;

  double log_joint() const { return log_likelihood + log_prior; }
};

struct ChainResult {
  int chain = 0;
  std::uint64_t seed = 0;
  std::vector<PosteriorSample> samples;
  MoveStats stats;
};

/// Samples a starting tree from the prior with a finite likelihood.
KernelAst initial_tree(const PriorConfig& prior, const std::vector<Dataset>& series,
                       double noise_var, Rng& rng);

/// Redraws every hyperparameter of `ast` from the prior until the likelihood is finite.
KernelAst resample_hypers(const KernelAst& ast, const std::vector<Dataset>& series,
                          double noise_var, Rng& rng);

/// One sweep: `hyper_steps` hyperparameter moves, then `structure_steps` structure moves.
void run_sweep(TraceState& state, Rng& rng, const ScheduleConfig& cfg);

/// Runs a single chain, recording one sample after each sweep.
ChainResult run_chain(const std::vector<Dataset>& series, const ScheduleConfig& cfg,
                      const PriorConfig& prior, double noise_var, int chain_index,
                      const std::optional<KernelAst>& initial = std::nullopt);

/// Runs `cfg.chains` independent chains in parallel with seeds derived from `cfg.seed`.
std::vector<ChainResult> run_schedule(const Dataset& data, const ScheduleConfig& cfg,
                                      const PriorConfig& prior, double noise_var = kBaselineNoise,
                                      const std::optional<KernelAst>& initial = std::nullopt);

/// Samples after dropping the leading `burn_in` fraction of each chain, in chain order.
std::vector<PosteriorSample> retained_samples(const std::vector<ChainResult>& chains,
                                              double burn_in);

}  // namespace covsynth
