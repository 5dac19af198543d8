#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "covsynth/gp.hpp"
#include "covsynth/inference.hpp"
#include "covsynth/random.hpp"

namespace covsynth {

/// Affine rescaling x' = (x - x_min) * 10 / (x_max - x_min), y' = (y - y_mean) / y_std.
struct Standardization {
  bool enabled = false;
  double x_min = 0.0;
  double x_max = 10.0;
  double y_mean = 0.0;
  double y_std = 1.0;

  double x_forward(double x) const;
  double x_inverse(double x) const;
  double y_forward(double y) const;
  double y_inverse(double y) const;
  /// Maps a standard deviation in standardized units back to data units.
  double scale_inverse(double s) const;

  Dataset forward(const Dataset& data) const;
  nlohmann::json to_json() const;
};

/// Fits the transform to `data`; throws DataError for a constant y column or a single x value.
Standardization fit_standardization(const Dataset& data);

struct IngestedSeries {
  Dataset data;
  Standardization transform;
};

/// Reads a two-column `x,y` CSV (header required), optionally standardizing it.
IngestedSeries ingest_csv(const std::filesystem::path& path, bool standardize = false);

struct IngestedCollection {
  /// Series ids in order of first appearance.
  std::vector<std::string> ids;
  std::vector<Dataset> series;
};

/// Reads a `series_id,x,y` CSV.
IngestedCollection ingest_series_csv(const std::filesystem::path& path);

void write_series_csv(const std::filesystem::path& path, const Dataset& data);

enum class HoldoutMode { ExtrapolateTail, InterpolateMiddle, Random };

std::string_view to_string(HoldoutMode mode);
std::optional<HoldoutMode> parse_holdout_mode(std::string_view name);

struct HoldoutSpec {
  double fraction = 0.0;
  HoldoutMode mode = HoldoutMode::ExtrapolateTail;
};

struct Split {
  Dataset train;
  Dataset test;
};

/// extrapolate-tail holds out the largest-x fraction, interpolate-middle the
/// central fraction by x, random a uniformly chosen subset.
Split split_holdout(const Dataset& data, const HoldoutSpec& spec, Rng& rng);

struct PredictionTable {
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> std_noiseless;
  std::vector<double> std_noisy;
  /// Optional predictive draws, one column per draw.
  std::vector<std::vector<double>> samples;
};

PredictionTable prediction_table(const GpPosterior& posterior);
void write_predictions_csv(const std::filesystem::path& path, const PredictionTable& table);
PredictionTable read_predictions_csv(const std::filesystem::path& path);

struct HistogramEntry {
  std::string label;
  std::size_t count = 0;
  double mass = 0.0;
};

/// Structure-label counts sorted by decreasing count, ties by label.
std::vector<HistogramEntry> structure_histogram(const std::vector<PosteriorSample>& samples);
nlohmann::json histogram_json(const std::vector<HistogramEntry>& histogram);

double mean_squared_error(std::span<const double> predicted, std::span<const double> actual);
double root_mean_squared_error(std::span<const double> predicted, std::span<const double> actual);

/// Everything a run writes to its output directory.
struct ResultBundle {
  std::vector<PosteriorSample> samples;
  bool samples_required = true;
  std::optional<PredictionTable> predictions;
  std::optional<nlohmann::json> metrics;
  std::optional<nlohmann::json> partitions;
  std::optional<nlohmann::json> extra_json;
  std::string extra_json_name;
};

/// Writes histogram.json and samples.json (when there are samples),
/// predictions.csv, metrics.json, and partitions.json (when present).
/// Nothing is written if validation fails.
void emit_results(const ResultBundle& bundle, const std::filesystem::path& out_dir);

/// Formats a double with 17 significant digits.
std::string format_double(double value);

void write_text_file(const std::filesystem::path& path, const std::string& contents);

}  // namespace covsynth
