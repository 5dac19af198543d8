#include "covsynth/inference.hpp"

#include <cmath>
#include <exception>
#include <limits>
#include <thread>

#include "covsynth/errors.hpp"

namespace covsynth {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();
constexpr int kInitialTreeAttempts = 1000;

std::size_t uniform_index(Rng& rng, std::size_t count) {
  const auto i = static_cast<std::size_t>(rng.uniform() * static_cast<double>(count));
  return std::min(i, count - 1);
}

void backpropagate(const KernelAst& ast, NodeIndex n, const Eigen::MatrixXd& grad,
                   const std::map<NodeIndex, Eigen::MatrixXd>& cov, std::span<const double> xs,
                   const std::map<HyperAddress, Eigen::Index>& position, Eigen::VectorXd& d_h) {
  const NodeBundle& bundle = ast.at(n);
  if (!bundle.is_branch) {
    const auto jacobians = leaf_hyper_jacobians(bundle, xs);
    for (std::size_t slot = 0; slot < jacobians.size(); ++slot) {
      d_h[position.at({n, slot})] += grad.cwiseProduct(jacobians[slot]).sum();
    }
    return;
  }
  const NodeIndex l = left_child(n);
  const NodeIndex r = right_child(n);
  switch (*bundle.op) {
    case Operator::Sum:
      backpropagate(ast, l, grad, cov, xs, position, d_h);
      backpropagate(ast, r, grad, cov, xs, position, d_h);
      return;
    case Operator::Product:
      backpropagate(ast, l, grad.cwiseProduct(cov.at(r)), cov, xs, position, d_h);
      backpropagate(ast, r, grad.cwiseProduct(cov.at(l)), cov, xs, position, d_h);
      return;
    case Operator::ChangePoint:
      throw UnsupportedMove("gradient moves do not support the changepoint operator");
  }
}

}  // namespace

std::string_view to_string(HyperMode mode) {
  switch (mode) {
    case HyperMode::MH:
      return "mh";
    case HyperMode::Gradient:
      return "gradient";
    case HyperMode::Mixed:
      return "mixed";
  }
  return "?";
}

std::optional<HyperMode> parse_hyper_mode(std::string_view name) {
  for (HyperMode mode : {HyperMode::MH, HyperMode::Gradient, HyperMode::Mixed}) {
    if (to_string(mode) == name) return mode;
  }
  return std::nullopt;
}

void ScheduleConfig::validate() const {
  if (sweeps < 0 || hyper_steps < 0 || structure_steps < 0) {
    throw ConfigError("sweep and step counts must be non-negative");
  }
  if (!(step_size >= 0.0) || !std::isfinite(step_size)) {
    throw ConfigError("step_size must be finite and non-negative");
  }
  if (chains < 1) throw ConfigError("chains must be at least 1");
  if (!(burn_in >= 0.0 && burn_in < 1.0)) throw ConfigError("burn_in must lie in [0, 1)");
}

LikelihoodEvaluation evaluate_likelihood(const KernelAst& ast, const std::vector<Dataset>& series,
                                         double noise_var) {
  LikelihoodEvaluation out;
  out.fits.reserve(series.size());
  for (const Dataset& data : series) {
    out.fits.push_back(fit_marginal(ast, data, noise_var));
    out.log_likelihood += out.fits.back().log_likelihood;
  }
  return out;
}

TraceState::TraceState(KernelAst ast, Dataset data, PriorConfig prior, double noise_var)
    : TraceState(std::move(ast), std::vector<Dataset>{std::move(data)}, std::move(prior),
                 noise_var) {}

TraceState::TraceState(KernelAst ast, std::vector<Dataset> series, PriorConfig prior,
                       double noise_var)
    : ast_(std::move(ast)), series_(std::move(series)), prior_(prior), noise_var_(noise_var) {
  ast_.validate();
  for (const auto& data : series_) data.validate();
  accept(ast_, evaluate_likelihood(ast_, series_, noise_var_));
}

void TraceState::accept(KernelAst ast, LikelihoodEvaluation evaluation) {
  ast_ = std::move(ast);
  log_prior_ = ast_log_prior(prior_, ast_);
  log_likelihood_ = evaluation.log_likelihood;
  fits_ = std::move(evaluation.fits);
}

void TraceState::reset_series(std::vector<Dataset> series) {
  series_ = std::move(series);
  accept(ast_, evaluate_likelihood(ast_, series_, noise_var_));
}

StructureProposal propose_structure(const TraceState& state, Rng& rng,
                                    std::optional<NodeIndex> fixed_node) {
  StructureProposal out;
  if (fixed_node) {
    if (!state.ast().contains(*fixed_node)) {
      throw StructuralError("cannot resimulate missing node " + std::to_string(*fixed_node));
    }
    out.node = *fixed_node;
  } else {
    const auto& nodes = state.ast().nodes();
    auto it = nodes.begin();
    std::advance(it, static_cast<std::ptrdiff_t>(uniform_index(rng, nodes.size())));
    out.node = it->first;
  }
  const KernelAst fragment = sample_ast(state.prior(), out.node, rng);
  out.proposal = state.ast().with_subtree(out.node, fragment);
  return out;
}

double structure_log_acceptance(const TraceState& state, const KernelAst& proposal,
                                double proposal_log_likelihood, bool node_count_correction) {
  double log_alpha = proposal_log_likelihood - state.log_likelihood();
  if (node_count_correction) {
    log_alpha += std::log(static_cast<double>(state.ast().size())) -
                 std::log(static_cast<double>(proposal.size()));
  }
  return log_alpha;
}

MoveResult mh_structure_step(TraceState& state, Rng& rng, const StructureMoveOptions& options) {
  StructureProposal prop = propose_structure(state, rng, options.fixed_node);
  MoveCounter& counter = state.stats().structure;
  ++counter.proposed;
  MoveResult result;
  result.node = prop.node;

  LikelihoodEvaluation evaluation;
  try {
    evaluation = evaluate_likelihood(prop.proposal, state.series(), state.noise_var());
  } catch (const NumericError&) {
    ++counter.numeric_failures;
    result.log_alpha = kNegInf;
    return result;
  }
  const bool correction = options.node_count_correction && !options.fixed_node;
  result.log_alpha =
      structure_log_acceptance(state, prop.proposal, evaluation.log_likelihood, correction);
  if (std::log(rng.uniform()) < result.log_alpha) {
    state.accept(std::move(prop.proposal), std::move(evaluation));
    ++counter.accepted;
    result.accepted = true;
  }
  return result;
}

MoveResult mh_hyper_step(TraceState& state, Rng& rng, const HyperAddress& site) {
  const HyperSite& current = state.ast().hyper(site);
  KernelAst proposal = state.ast();
  proposal.set_hyper(site, sample_hyper(rng, current.offset));

  MoveCounter& counter = state.stats().hyper_mh;
  ++counter.proposed;
  MoveResult result;
  result.node = site.node;
  LikelihoodEvaluation evaluation;
  try {
    evaluation = evaluate_likelihood(proposal, state.series(), state.noise_var());
  } catch (const NumericError&) {
    ++counter.numeric_failures;
    result.log_alpha = kNegInf;
    return result;
  }
  // Proposal equals the prior, so prior and proposal densities cancel.
  result.log_alpha = evaluation.log_likelihood - state.log_likelihood();
  if (std::log(rng.uniform()) < result.log_alpha) {
    state.accept(std::move(proposal), std::move(evaluation));
    ++counter.accepted;
    result.accepted = true;
  }
  return result;
}

MoveResult mh_random_hyper_step(TraceState& state, Rng& rng) {
  const auto sites = state.ast().hyper_addresses();
  if (sites.empty()) return {};
  return mh_hyper_step(state, rng, sites[uniform_index(rng, sites.size())]);
}

double hyper_log_objective(const KernelAst& ast, const std::vector<Dataset>& series,
                           double noise_var) {
  double objective = evaluate_likelihood(ast, series, noise_var).log_likelihood;
  for (const auto& address : ast.hyper_addresses()) {
    objective += logistic_log_density(ast.hyper(address).unconstrained);
  }
  return objective;
}

HyperGradient hyper_gradient(const KernelAst& ast, const std::vector<Dataset>& series,
                             double noise_var) {
  if (ast.contains_operator(Operator::ChangePoint)) {
    throw UnsupportedMove("gradient moves do not support the changepoint operator");
  }
  HyperGradient out;
  out.sites = ast.hyper_addresses();
  std::map<HyperAddress, Eigen::Index> position;
  for (std::size_t i = 0; i < out.sites.size(); ++i) {
    position.emplace(out.sites[i], static_cast<Eigen::Index>(i));
  }
  const auto count = static_cast<Eigen::Index>(out.sites.size());
  out.d_constrained_likelihood = Eigen::VectorXd::Zero(count);

  for (const Dataset& data : series) {
    if (data.empty()) continue;
    const MarginalFit fit = fit_marginal(ast, data, noise_var);
    out.objective += fit.log_likelihood;
    const auto n = static_cast<Eigen::Index>(data.size());
    const Eigen::MatrixXd a_inv = fit.factor.llt.solve(Eigen::MatrixXd::Identity(n, n));
    // d log p(D|K) / dK
    const Eigen::MatrixXd seed = 0.5 * (fit.alpha * fit.alpha.transpose() - a_inv);
    const auto cov = subtree_cov_matrices(ast, data.xs);
    backpropagate(ast, kRootIndex, seed, cov, data.xs, position, out.d_constrained_likelihood);
  }

  out.d_unconstrained = Eigen::VectorXd::Zero(count);
  for (Eigen::Index i = 0; i < count; ++i) {
    const double t = ast.hyper(out.sites[static_cast<std::size_t>(i)]).unconstrained;
    out.objective += logistic_log_density(t);
    // dh/dt = d softplus(-t)/dt = -sigmoid(-t)
    out.d_unconstrained[i] =
        out.d_constrained_likelihood[i] * -sigmoid(-t) + logistic_log_density_grad(t);
  }
  return out;
}

MoveResult gradient_step_hypers(TraceState& state, double step_size) {
  const HyperGradient grad = hyper_gradient(state.ast(), state.series(), state.noise_var());
  MoveCounter& counter = state.stats().gradient;
  ++counter.proposed;
  MoveResult result;
  if (step_size == 0.0) {
    ++counter.accepted;
    result.accepted = true;
    return result;
  }

  KernelAst updated = state.ast();
  for (std::size_t i = 0; i < grad.sites.size(); ++i) {
    const HyperSite& site = updated.hyper(grad.sites[i]);
    const double t = site.unconstrained + step_size * grad.d_unconstrained[static_cast<Eigen::Index>(i)];
    updated.set_hyper(grad.sites[i], HyperSite::from_unconstrained(t, site.offset));
  }
  try {
    LikelihoodEvaluation evaluation = evaluate_likelihood(updated, state.series(), state.noise_var());
    if (!std::isfinite(evaluation.log_likelihood)) throw NumericError("non-finite likelihood");
    double objective = evaluation.log_likelihood;
    for (const auto& address : grad.sites) objective += logistic_log_density(updated.hyper(address).unconstrained);
    result.log_alpha = objective - grad.objective;
    state.accept(std::move(updated), std::move(evaluation));
  } catch (const NumericError&) {
    ++counter.numeric_failures;
    return result;
  }
  ++counter.accepted;
  result.accepted = true;
  return result;
}

void hyper_move(TraceState& state, Rng& rng, HyperMode mode, double step_size) {
  const bool differentiable = !state.ast().contains_operator(Operator::ChangePoint);
  switch (mode) {
    case HyperMode::MH:
      mh_random_hyper_step(state, rng);
      return;
    case HyperMode::Gradient:
      if (differentiable) {
        gradient_step_hypers(state, step_size);
      } else {
        ++state.stats().gradient_fallbacks;
        mh_random_hyper_step(state, rng);
      }
      return;
    case HyperMode::Mixed:
      if (differentiable) {
        gradient_step_hypers(state, step_size);
      } else {
        ++state.stats().gradient_fallbacks;
      }
      mh_random_hyper_step(state, rng);
      return;
  }
}

KernelAst initial_tree(const PriorConfig& prior, const std::vector<Dataset>& series,
                       double noise_var, Rng& rng) {
  for (int attempt = 0; attempt < kInitialTreeAttempts; ++attempt) {
    KernelAst candidate = sample_ast(prior, kRootIndex, rng);
    try {
      evaluate_likelihood(candidate, series, noise_var);
      return candidate;
    } catch (const NumericError&) {
    }
  }
  throw NumericError("no prior tree with a finite likelihood after " +
                     std::to_string(kInitialTreeAttempts) + " draws");
}

KernelAst resample_hypers(const KernelAst& ast, const std::vector<Dataset>& series,
                          double noise_var, Rng& rng) {
  for (int attempt = 0; attempt < kInitialTreeAttempts; ++attempt) {
    KernelAst candidate = ast;
    for (const auto& address : candidate.hyper_addresses()) {
      candidate.set_hyper(address, sample_hyper(rng, candidate.hyper(address).offset));
    }
    try {
      evaluate_likelihood(candidate, series, noise_var);
      return candidate;
    } catch (const NumericError&) {
    }
  }
  throw NumericError("no hyperparameter draw with a finite likelihood after " +
                     std::to_string(kInitialTreeAttempts) + " draws");
}

void run_sweep(TraceState& state, Rng& rng, const ScheduleConfig& cfg) {
  for (int step = 0; step < cfg.hyper_steps; ++step) {
    hyper_move(state, rng, cfg.hyper_mode, cfg.step_size);
  }
  const StructureMoveOptions options{cfg.node_count_correction, std::nullopt};
  for (int step = 0; step < cfg.structure_steps; ++step) {
    mh_structure_step(state, rng, options);
  }
}

ChainResult run_chain(const std::vector<Dataset>& series, const ScheduleConfig& cfg,
                      const PriorConfig& prior, double noise_var, int chain_index,
                      const std::optional<KernelAst>& initial) {
  ChainResult result;
  result.chain = chain_index;
  result.seed = Rng::derive_seed(cfg.seed, static_cast<std::uint64_t>(chain_index));
  if (cfg.sweeps == 0) return result;

  Rng rng(result.seed);
  KernelAst start = !initial                      ? initial_tree(prior, series, noise_var, rng)
                    : cfg.resample_initial_hypers ? resample_hypers(*initial, series, noise_var, rng)
                                                  : *initial;
  TraceState state(std::move(start), series, prior, noise_var);
  result.samples.reserve(static_cast<std::size_t>(cfg.sweeps));
  for (int sweep = 0; sweep < cfg.sweeps; ++sweep) {
    try {
      run_sweep(state, rng, cfg);
    } catch (const NumericError& e) {
      throw NumericError("chain " + std::to_string(chain_index) + ", sweep " +
                             std::to_string(sweep) + ": " + e.what(),
                         e.jitter_levels());
    }
    result.samples.push_back(PosteriorSample{chain_index, sweep, structure_label(state.ast()),
                                             state.ast(), state.log_likelihood(),
                                             state.log_prior()});
  }
  result.stats = state.stats();
  return result;
}

std::vector<ChainResult> run_schedule(const Dataset& data, const ScheduleConfig& cfg,
                                      const PriorConfig& prior, double noise_var,
                                      const std::optional<KernelAst>& initial) {
  cfg.validate();
  prior.validate();
  data.validate();
  const std::vector<Dataset> series{data};
  std::vector<ChainResult> results(static_cast<std::size_t>(cfg.chains));
  std::vector<std::exception_ptr> errors(results.size());
  std::vector<std::thread> workers;
  workers.reserve(results.size());
  for (std::size_t c = 0; c < results.size(); ++c) {
    workers.emplace_back([&, c] {
      try {
        results[c] = run_chain(series, cfg, prior, noise_var, static_cast<int>(c), initial);
      } catch (...) {
        errors[c] = std::current_exception();
      }
    });
  }
  for (auto& worker : workers) worker.join();
  for (const auto& error : errors) {
    if (error) std::rethrow_exception(error);
  }
  return results;
}

std::vector<PosteriorSample> retained_samples(const std::vector<ChainResult>& chains,
                                              double burn_in) {
  std::vector<PosteriorSample> out;
  for (const auto& chain : chains) {
    const auto drop = static_cast<std::size_t>(std::floor(burn_in * static_cast<double>(chain.samples.size())));
    out.insert(out.end(), chain.samples.begin() + static_cast<std::ptrdiff_t>(drop),
               chain.samples.end());
  }
  return out;
}

}  // namespace covsynth
