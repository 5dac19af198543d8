// Command-line front end: fit, predict, cluster, compare-inference, synth-data.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "covsynth/config.hpp"
#include "covsynth/errors.hpp"
#include "covsynth/io.hpp"
#include "covsynth/pipeline.hpp"
#include "covsynth/synth.hpp"

namespace fs = std::filesystem;
using namespace covsynth;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitData = 3;
constexpr int kExitNumeric = 4;

struct Options {
  std::string config_path;
  std::string data_path;
  std::string out_dir;
  std::string samples_path;
  std::string structure = R"(["PER", 1.0, 1.0])";
  std::string kinds;
  std::optional<std::uint64_t> seed;
  std::optional<int> chains;
  std::vector<std::string> overrides;
};

RunConfig resolve_config(const Options& opts, Task task) {
  RunConfig cfg;
  if (!opts.config_path.empty()) cfg = load_config(opts.config_path);
  for (const auto& assignment : opts.overrides) apply_override(cfg, assignment);
  if (opts.seed) cfg.schedule.seed = *opts.seed;
  if (opts.chains) cfg.schedule.chains = *opts.chains;
  cfg.task = task;
  cfg.validate();
  return cfg;
}

void print_histogram(const std::vector<PosteriorSample>& samples) {
  const auto histogram = structure_histogram(samples);
  for (std::size_t i = 0; i < histogram.size() && i < 5; ++i) {
    std::cout << "  " << histogram[i].label << "  " << format_double(histogram[i].mass) << "\n";
  }
}

int run_fit_command(const Options& opts) {
  const RunConfig cfg = resolve_config(opts, Task::Fit);
  const auto raw = ingest_csv(opts.data_path).data;
  const FitReport report = run_fit(raw, cfg);
  ResultBundle bundle;
  bundle.samples = report.retained;
  bundle.predictions = report.predictions;
  bundle.metrics = report.metrics;
  emit_results(bundle, opts.out_dir);
  std::cout << "retained " << report.retained.size() << " samples; top structures:\n";
  print_histogram(report.retained);
  return 0;
}

int run_predict_command(const Options& opts) {
  const RunConfig cfg = resolve_config(opts, Task::Predict);
  const auto raw = ingest_csv(opts.data_path).data;
  const auto samples = load_samples_json(opts.samples_path);
  ResultBundle bundle;
  bundle.samples_required = false;
  bundle.predictions = run_predict(raw, samples, cfg);
  emit_results(bundle, opts.out_dir);
  std::cout << "predictions from " << samples.size() << " samples written to " << opts.out_dir << "\n";
  return 0;
}

int run_cluster_command(const Options& opts) {
  RunConfig defaults;
  defaults.standardize = false;
  defaults.schedule.hyper_mode = HyperMode::MH;
  RunConfig cfg = defaults;
  if (!opts.config_path.empty()) cfg = load_config(opts.config_path, defaults);
  for (const auto& assignment : opts.overrides) apply_override(cfg, assignment);
  if (opts.seed) cfg.schedule.seed = *opts.seed;
  cfg.task = Task::Cluster;
  cfg.validate();

  const auto collection = ingest_series_csv(opts.data_path);
  const ClusterReport report = run_cluster(collection, cfg);
  ResultBundle bundle;
  bundle.samples_required = false;
  bundle.partitions = report.partitions;
  emit_results(bundle, opts.out_dir);
  if (report.partitions.contains("modal_partition")) {
    std::cout << "modal partition " << report.partitions["modal_partition"]["partition"].get<std::string>()
              << "\n";
  }
  return 0;
}

int run_compare_command(const Options& opts) {
  RunConfig cfg = resolve_config(opts, Task::CompareInference);
  const auto raw = ingest_csv(opts.data_path).data;
  KernelAst structure;
  try {
    structure = ast_from_json(nlohmann::json::parse(opts.structure));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("--structure: ") + e.what());
  } catch (const StructuralError& e) {
    throw ConfigError(std::string("--structure: ") + e.what());
  }
  const ComparisonReport report = run_compare_inference(raw, cfg, structure);
  for (const auto* fit : {&report.mh, &report.gradient}) {
    const std::string name = fit == &report.mh ? "mh" : "gradient";
    ResultBundle bundle;
    bundle.samples = fit->retained;
    bundle.predictions = fit->predictions;
    bundle.metrics = fit->metrics;
    emit_results(bundle, fs::path(opts.out_dir) / name);
  }
  write_text_file(fs::path(opts.out_dir) / "comparison.json", report.summary.dump(2) + "\n");
  for (const char* name : {"mh", "gradient"}) {
    const auto& metrics = report.summary[name]["metrics"];
    if (metrics.contains("methods")) {
      std::cout << name << " holdout mse "
                << format_double(metrics["methods"]["gp_model_average"]["mse"].get<double>()) << "\n";
    }
  }
  return 0;
}

int run_synth_command(const Options& opts) {
  const RunConfig cfg = resolve_config(opts, Task::SynthData);
  std::error_code ec;
  fs::create_directories(opts.out_dir, ec);
  if (ec) throw IoError("cannot create output directory " + opts.out_dir);
  Rng rng(cfg.schedule.seed);
  if (opts.kinds.empty()) {
    const Dataset data = synth_data(cfg.synth_kind, cfg.synth_n, rng, cfg.noise_var);
    write_series_csv(fs::path(opts.out_dir) / "data.csv", data);
    std::cout << "wrote " << data.size() << " points of " << to_string(cfg.synth_kind) << "\n";
    return 0;
  }
  std::stringstream list(opts.kinds);
  std::string name;
  std::string text = "series_id,x,y\n";
  int index = 0;
  while (std::getline(list, name, ',')) {
    const auto kind = parse_synth_kind(name);
    if (!kind) throw ConfigError("--kinds: unknown kind '" + name + "'");
    const Dataset data = synth_data(*kind, cfg.synth_n, rng, cfg.noise_var);
    const std::string id = "s" + std::to_string(++index) + "_" + name;
    for (std::size_t i = 0; i < data.size(); ++i) {
      text += id + "," + format_double(data.xs[i]) + "," + format_double(data.ys[i]) + "\n";
    }
  }
  write_text_file(fs::path(opts.out_dir) / "series.csv", text);
  std::cout << "wrote " << index << " series\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Bayesian structure discovery for time series with compositional GP kernels"};
  app.require_subcommand(1);
  Options opts;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", opts.config_path, "INI-style run configuration")->check(CLI::ExistingFile);
    cmd->add_option("--out", opts.out_dir, "output directory")->required();
    cmd->add_option("--seed", opts.seed, "base RNG seed");
    cmd->add_option("--set", opts.overrides, "override a config field, e.g. schedule.sweeps=50");
  };

  auto* fit = app.add_subcommand("fit", "infer kernel structures and write histogram, samples, predictions, metrics");
  add_common(fit);
  fit->add_option("--data", opts.data_path, "x,y CSV")->required();
  fit->add_option("--chains", opts.chains, "independent chains");

  auto* predict = app.add_subcommand("predict", "model-averaged predictions from a samples.json");
  add_common(predict);
  predict->add_option("--data", opts.data_path, "x,y CSV used for training")->required();
  predict->add_option("--samples", opts.samples_path, "samples.json written by fit")->required();

  auto* cluster = app.add_subcommand("cluster", "cluster series by shared kernel structure");
  add_common(cluster);
  cluster->add_option("--data", opts.data_path, "series_id,x,y CSV")->required();

  auto* compare = app.add_subcommand("compare-inference", "MH versus gradient hyperparameter inference on a fixed structure");
  add_common(compare);
  compare->add_option("--data", opts.data_path, "x,y CSV")->required();
  compare->add_option("--chains", opts.chains, "independent chains per method");
  compare->add_option("--structure", opts.structure, "kernel as nested JSON list, e.g. [\"PER\", 1, 1]");

  auto* synth = app.add_subcommand("synth-data", "sample a synthetic dataset from a ground-truth GP");
  add_common(synth);
  synth->add_option("--kinds", opts.kinds, "comma-separated kinds; writes a multi-series series.csv");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*fit) return run_fit_command(opts);
    if (*predict) return run_predict_command(opts);
    if (*cluster) return run_cluster_command(opts);
    if (*compare) return run_compare_command(opts);
    if (*synth) return run_synth_command(opts);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
