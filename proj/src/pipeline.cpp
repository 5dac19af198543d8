#include "covsynth/pipeline.hpp"

#include <algorithm>
#include <fstream>
#include <map>

#include "covsynth/blr.hpp"
#include "covsynth/errors.hpp"
#include "covsynth/synth.hpp"

namespace covsynth {

namespace {

// Seed stream reserved for the random holdout split, distinct from chain streams.
constexpr std::uint64_t kSplitStream = 0xFFFF'0000ULL;

nlohmann::json error_json(std::span<const double> predicted, std::span<const double> actual) {
  return {{"rmse", root_mean_squared_error(predicted, actual)},
          {"mse", mean_squared_error(predicted, actual)}};
}

std::vector<double> at_points(const GpPosterior& post) {
  return {post.mean.data(), post.mean.data() + post.mean.size()};
}

nlohmann::json stats_json(const MoveStats& stats) {
  auto counter = [](const MoveCounter& c) {
    return nlohmann::json{{"proposed", c.proposed},
                          {"accepted", c.accepted},
                          {"numeric_failures", c.numeric_failures}};
  };
  return {{"structure", counter(stats.structure)},
          {"hyper_mh", counter(stats.hyper_mh)},
          {"gradient", counter(stats.gradient)},
          {"gradient_fallbacks", stats.gradient_fallbacks}};
}

}  // namespace

GpPosterior model_average(const std::vector<PosteriorSample>& samples, const Dataset& train,
                          std::span<const double> probe_xs, double noise_var,
                          std::size_t max_samples) {
  if (samples.empty()) throw ArgumentError("model_average: no samples");
  std::vector<std::size_t> chosen;
  const std::size_t total = samples.size();
  const std::size_t used = (max_samples == 0 || total <= max_samples) ? total : max_samples;
  for (std::size_t k = 0; k < used; ++k) chosen.push_back(k * total / used);

  const auto m = static_cast<Eigen::Index>(probe_xs.size());
  Eigen::VectorXd mean_sum = Eigen::VectorXd::Zero(m);
  Eigen::MatrixXd second_moment = Eigen::MatrixXd::Zero(m, m);
  for (std::size_t k : chosen) {
    const GpPosterior post = predict(samples[k].ast, train, probe_xs, noise_var);
    mean_sum += post.mean;
    second_moment += post.cov + post.mean * post.mean.transpose();
  }
  const double count = static_cast<double>(chosen.size());
  GpPosterior out;
  out.at.assign(probe_xs.begin(), probe_xs.end());
  out.noise_var = noise_var;
  out.mean = mean_sum / count;
  out.cov = second_moment / count - out.mean * out.mean.transpose();
  return out;
}

std::string modal_label(const std::vector<PosteriorSample>& samples) {
  if (samples.empty()) throw ArgumentError("modal_label: no samples");
  return structure_histogram(samples).front().label;
}

std::vector<PosteriorSample> samples_with_label(const std::vector<PosteriorSample>& samples,
                                                const std::string& label) {
  std::vector<PosteriorSample> out;
  std::copy_if(samples.begin(), samples.end(), std::back_inserter(out),
               [&](const PosteriorSample& s) { return s.label == label; });
  return out;
}

GpPosterior destandardize(const GpPosterior& posterior, const Standardization& transform) {
  GpPosterior out = posterior;
  if (!transform.enabled) return out;
  const double scale2 = transform.y_std * transform.y_std;
  for (auto& x : out.at) x = transform.x_inverse(x);
  for (Eigen::Index i = 0; i < out.mean.size(); ++i) out.mean[i] = transform.y_inverse(out.mean[i]);
  out.cov *= scale2;
  out.noise_var *= scale2;
  return out;
}

PreparedData prepare_data(const Dataset& raw, const RunConfig& cfg) {
  raw.validate();
  if (raw.empty()) throw DataError("no data rows");
  PreparedData out;
  Rng split_rng(Rng::derive_seed(cfg.schedule.seed, kSplitStream));
  out.raw = split_holdout(raw, cfg.holdout, split_rng);
  if (out.raw.train.empty()) throw DataError("holdout leaves no training data");
  if (cfg.standardize) out.transform = fit_standardization(out.raw.train);
  out.model.train = out.transform.forward(out.raw.train);
  out.model.test = out.transform.forward(out.raw.test);
  return out;
}

std::vector<double> probe_inputs(const PreparedData& data, std::size_t grid_points) {
  std::vector<double> xs = data.model.train.xs;
  xs.insert(xs.end(), data.model.test.xs.begin(), data.model.test.xs.end());
  const auto [lo, hi] = std::minmax_element(xs.begin(), xs.end());
  const auto grid = uniform_grid(*lo, *hi, grid_points);
  xs.insert(xs.end(), grid.begin(), grid.end());
  std::sort(xs.begin(), xs.end());
  xs.erase(std::unique(xs.begin(), xs.end()), xs.end());
  return xs;
}

FitReport run_fit(const Dataset& raw, const RunConfig& cfg, const std::optional<KernelAst>& initial) {
  cfg.validate();
  FitReport report;
  report.data = prepare_data(raw, cfg);
  const Dataset& train = report.data.model.train;
  const Dataset& test = report.data.model.test;
  const Standardization& transform = report.data.transform;

  report.chains = run_schedule(train, cfg.schedule, cfg.prior, cfg.noise_var, initial);
  report.retained = retained_samples(report.chains, cfg.schedule.burn_in);
  if (report.retained.empty()) throw ArgumentError("no posterior samples retained; increase sweeps");

  const auto probes = probe_inputs(report.data, cfg.probe_grid);
  const GpPosterior averaged =
      model_average(report.retained, train, probes, cfg.noise_var, cfg.max_predictive_samples);
  report.predictions = prediction_table(destandardize(averaged, transform));

  const std::string map_label = modal_label(report.retained);
  nlohmann::json metrics;
  metrics["transform"] = transform.to_json();
  metrics["map_structure"] = map_label;
  metrics["retained_samples"] = report.retained.size();
  metrics["holdout"] = {{"mode", std::string(to_string(cfg.holdout.mode))},
                        {"fraction", cfg.holdout.fraction},
                        {"size", test.size()}};

  nlohmann::json per_chain = nlohmann::json::array();
  if (!test.empty()) {
    const auto& truth = report.data.raw.test.ys;
    auto data_units = [&](const GpPosterior& post) { return at_points(destandardize(post, transform)); };

    const auto avg = data_units(model_average(report.retained, train, test.xs, cfg.noise_var,
                                              cfg.max_predictive_samples));
    const auto map = data_units(model_average(samples_with_label(report.retained, map_label), train,
                                              test.xs, cfg.noise_var, cfg.max_predictive_samples));
    const auto blr = data_units(blr_baseline(train, test.xs));
    metrics["methods"] = {{"gp_model_average", error_json(avg, truth)},
                          {"gp_map_structure", error_json(map, truth)},
                          {"blr", error_json(blr, truth)}};

    for (const auto& chain : report.chains) {
      const auto kept = retained_samples({chain}, cfg.schedule.burn_in);
      if (kept.empty()) continue;
      const auto pred = data_units(
          model_average(kept, train, test.xs, cfg.noise_var, cfg.max_predictive_samples));
      nlohmann::json entry = error_json(pred, truth);
      entry["chain"] = chain.chain;
      entry["seed"] = chain.seed;
      entry["map_structure"] = modal_label(kept);
      entry["moves"] = stats_json(chain.stats);
      per_chain.push_back(std::move(entry));
    }
  } else {
    for (const auto& chain : report.chains) {
      per_chain.push_back({{"chain", chain.chain}, {"seed", chain.seed}, {"moves", stats_json(chain.stats)}});
    }
  }
  metrics["per_chain"] = std::move(per_chain);
  report.metrics = std::move(metrics);
  return report;
}

PredictionTable run_predict(const Dataset& raw, const std::vector<PosteriorSample>& samples,
                            const RunConfig& cfg) {
  cfg.validate();
  const PreparedData data = prepare_data(raw, cfg);
  const auto probes = probe_inputs(data, cfg.probe_grid);
  const GpPosterior averaged =
      model_average(samples, data.model.train, probes, cfg.noise_var, cfg.max_predictive_samples);
  return prediction_table(destandardize(averaged, data.transform));
}

std::vector<PosteriorSample> load_samples_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open samples file " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(path.string() + ": " + e.what());
  }
  if (!doc.is_array()) throw DataError(path.string() + ": expected an array of samples");
  std::vector<PosteriorSample> out;
  for (const auto& entry : doc) {
    try {
      PosteriorSample s;
      s.chain = entry.at("chain").get<int>();
      s.sweep = entry.at("sweep").get<int>();
      s.ast = ast_from_json(entry.at("ast"));
      s.label = structure_label(s.ast);
      s.log_likelihood = entry.at("log_likelihood").get<double>();
      s.log_prior = entry.at("log_prior").get<double>();
      out.push_back(std::move(s));
    } catch (const nlohmann::json::exception& e) {
      throw DataError(path.string() + ": malformed sample: " + e.what());
    } catch (const StructuralError& e) {
      throw DataError(path.string() + ": malformed sample tree: " + e.what());
    }
  }
  if (out.empty()) throw DataError(path.string() + ": no samples");
  return out;
}

ComparisonReport run_compare_inference(const Dataset& raw, const RunConfig& cfg,
                                       const KernelAst& structure) {
  structure.validate();
  ComparisonReport report;
  nlohmann::json summary;
  for (HyperMode mode : {HyperMode::MH, HyperMode::Gradient}) {
    RunConfig run = cfg;
    run.schedule.structure_steps = 0;
    run.schedule.hyper_mode = mode;
    FitReport fit = run_fit(raw, run, structure);

    nlohmann::json traces = nlohmann::json::array();
    for (const auto& chain : fit.chains) {
      for (const auto& s : chain.samples) {
        nlohmann::json hypers = nlohmann::json::array();
        for (const auto& address : s.ast.hyper_addresses()) hypers.push_back(s.ast.hyper(address).constrained);
        traces.push_back({{"chain", s.chain}, {"sweep", s.sweep}, {"hypers", hypers},
                          {"log_joint", s.log_joint()}});
      }
    }
    nlohmann::json entry = {{"metrics", fit.metrics}, {"trace", traces}};
    summary[std::string(to_string(mode))] = std::move(entry);
    (mode == HyperMode::MH ? report.mh : report.gradient) = std::move(fit);
  }
  summary["structure"] = ast_to_json(structure);
  report.summary = std::move(summary);
  return report;
}

ClusterReport run_cluster(const IngestedCollection& collection, const RunConfig& cfg) {
  cfg.validate();
  std::vector<Dataset> series;
  for (const auto& data : collection.series) {
    series.push_back(cfg.standardize ? fit_standardization(data).forward(data) : data);
  }
  ClusterReport report;
  report.samples = run_cluster_schedule(series, cfg.schedule, cfg.prior, cfg.concentration, cfg.noise_var);

  nlohmann::json records = nlohmann::json::array();
  for (const auto& sample : report.samples) {
    nlohmann::json blocks = nlohmann::json::array();
    for (std::size_t b = 0; b < sample.partition.size(); ++b) {
      nlohmann::json ids = nlohmann::json::array();
      for (int member : sample.partition[b]) ids.push_back(collection.ids[static_cast<std::size_t>(member)]);
      blocks.push_back({{"members", ids}, {"structure", sample.labels[b]}});
    }
    records.push_back({{"sweep", sample.sweep},
                       {"partition", partition_to_string(sample.partition)},
                       {"clusters", blocks},
                       {"log_joint", sample.log_joint}});
  }
  nlohmann::json doc = {{"series_ids", collection.ids}, {"samples", records}};
  if (!report.samples.empty()) {
    const auto [mode, frequency] = modal_partition(report.samples, cfg.schedule.burn_in);
    doc["modal_partition"] = {{"partition", partition_to_string(mode)}, {"frequency", frequency}};
  }
  report.partitions = std::move(doc);
  return report;
}

std::pair<Partition, double> modal_partition(const std::vector<ClusterSample>& samples,
                                             double burn_in) {
  const auto drop = static_cast<std::size_t>(std::floor(burn_in * static_cast<double>(samples.size())));
  std::map<Partition, std::size_t> counts;
  for (std::size_t i = drop; i < samples.size(); ++i) ++counts[samples[i].partition];
  if (counts.empty()) throw ArgumentError("modal_partition: no samples after burn-in");
  auto best = counts.begin();
  for (auto it = counts.begin(); it != counts.end(); ++it) {
    if (it->second > best->second) best = it;
  }
  return {best->first, static_cast<double>(best->second) / static_cast<double>(samples.size() - drop)};
}

}  // namespace covsynth
