#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "covsynth/clustering.hpp"
#include "covsynth/config.hpp"
#include "covsynth/gp.hpp"
#include "covsynth/inference.hpp"
#include "covsynth/io.hpp"

namespace covsynth {

/// Mixture of the per-sample GP predictives. With more than `max_samples`
/// samples (0 = no limit) an evenly spaced subset is used.
GpPosterior model_average(const std::vector<PosteriorSample>& samples, const Dataset& train,
                          std::span<const double> probe_xs, double noise_var,
                          std::size_t max_samples = 0);

/// Most frequent structure label; ties go to the lexicographically smaller label.
std::string modal_label(const std::vector<PosteriorSample>& samples);
std::vector<PosteriorSample> samples_with_label(const std::vector<PosteriorSample>& samples,
                                                const std::string& label);

/// Maps a posterior computed in standardized units back to data units.
GpPosterior destandardize(const GpPosterior& posterior, const Standardization& transform);

/// Training/test split in model units plus the transform that produced them.
struct PreparedData {
  Split raw;
  Split model;
  Standardization transform;
};

/// Splits `raw` per the holdout settings, then fits standardization on the training part.
PreparedData prepare_data(const Dataset& raw, const RunConfig& cfg);

/// Probe inputs (model units): an even grid over the data range plus every data input.
std::vector<double> probe_inputs(const PreparedData& data, std::size_t grid_points);

struct FitReport {
  PreparedData data;
  std::vector<ChainResult> chains;
  std::vector<PosteriorSample> retained;
  PredictionTable predictions;
  nlohmann::json metrics;
};

FitReport run_fit(const Dataset& raw, const RunConfig& cfg,
                  const std::optional<KernelAst>& initial = std::nullopt);

/// Model-averaged predictions of previously recorded samples.
PredictionTable run_predict(const Dataset& raw, const std::vector<PosteriorSample>& samples,
                            const RunConfig& cfg);

std::vector<PosteriorSample> load_samples_json(const std::filesystem::path& path);

struct ComparisonReport {
  FitReport mh;
  FitReport gradient;
  nlohmann::json summary;
};

/// Hyperparameter-only inference on a fixed structure under MH and under gradients.
ComparisonReport run_compare_inference(const Dataset& raw, const RunConfig& cfg,
                                       const KernelAst& structure);

struct ClusterReport {
  std::vector<ClusterSample> samples;
  nlohmann::json partitions;
};

ClusterReport run_cluster(const IngestedCollection& collection, const RunConfig& cfg);

/// Modal partition of the samples after burn-in, with its frequency.
std::pair<Partition, double> modal_partition(const std::vector<ClusterSample>& samples,
                                             double burn_in);

}  // namespace covsynth
