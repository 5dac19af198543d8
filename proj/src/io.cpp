#include "covsynth/io.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <numeric>
#include <sstream>

#include "covsynth/errors.hpp"

namespace covsynth {

namespace {

std::string trim(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> fields;
  std::stringstream stream(line);
  std::string field;
  while (std::getline(stream, field, ',')) fields.push_back(trim(field));
  if (!line.empty() && line.back() == ',') fields.emplace_back();
  return fields;
}

std::optional<double> parse_number(const std::string& text) {
  double value = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) return std::nullopt;
  return value;
}

std::string lower(std::string text) {
  std::transform(text.begin(), text.end(), text.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return text;
}

/// Non-blank lines of a CSV with their 1-based line numbers; the first is the header.
std::vector<std::pair<std::size_t, std::string>> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open data file " + path.string());
  std::vector<std::pair<std::size_t, std::string>> lines;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string cleaned = trim(line);
    if (!cleaned.empty()) lines.emplace_back(number, std::move(cleaned));
  }
  if (lines.empty()) throw DataError(path.string() + ": file is empty");
  return lines;
}

void check_header(const std::filesystem::path& path, const std::string& header,
                  const std::vector<std::string>& expected) {
  auto fields = split_fields(header);
  for (auto& f : fields) f = lower(f);
  if (fields != expected) {
    std::string want;
    for (const auto& e : expected) want += (want.empty() ? "" : ",") + e;
    throw DataError(path.string() + ": line 1: expected header '" + want + "'");
  }
}

[[noreturn]] void malformed(const std::filesystem::path& path, std::size_t line,
                            const std::string& why) {
  throw DataError(path.string() + ": line " + std::to_string(line) + ": " + why);
}

}  // namespace

double Standardization::x_forward(double x) const {
  return enabled ? (x - x_min) * 10.0 / (x_max - x_min) : x;
}
double Standardization::x_inverse(double x) const {
  return enabled ? x * (x_max - x_min) / 10.0 + x_min : x;
}
double Standardization::y_forward(double y) const { return enabled ? (y - y_mean) / y_std : y; }
double Standardization::y_inverse(double y) const { return enabled ? y * y_std + y_mean : y; }
double Standardization::scale_inverse(double s) const { return enabled ? s * y_std : s; }

Dataset Standardization::forward(const Dataset& data) const {
  Dataset out;
  out.xs.reserve(data.size());
  out.ys.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    out.xs.push_back(x_forward(data.xs[i]));
    out.ys.push_back(y_forward(data.ys[i]));
  }
  return out;
}

nlohmann::json Standardization::to_json() const {
  return {{"enabled", enabled}, {"x_min", x_min}, {"x_max", x_max},
          {"y_mean", y_mean},   {"y_std", y_std}};
}

Standardization fit_standardization(const Dataset& data) {
  if (data.empty()) throw DataError("cannot standardize an empty dataset");
  Standardization t;
  t.enabled = true;
  const auto [lo, hi] = std::minmax_element(data.xs.begin(), data.xs.end());
  t.x_min = *lo;
  t.x_max = *hi;
  if (!(t.x_max > t.x_min)) throw DataError("cannot standardize: all x values are equal");
  const double n = static_cast<double>(data.size());
  t.y_mean = std::accumulate(data.ys.begin(), data.ys.end(), 0.0) / n;
  double ss = 0.0;
  for (double y : data.ys) ss += (y - t.y_mean) * (y - t.y_mean);
  t.y_std = std::sqrt(ss / n);
  if (!(t.y_std > 0.0)) throw DataError("cannot standardize: y column has zero variance");
  return t;
}

IngestedSeries ingest_csv(const std::filesystem::path& path, bool standardize) {
  const auto lines = read_lines(path);
  check_header(path, lines.front().second, {"x", "y"});
  IngestedSeries out;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& [number, line] = lines[i];
    const auto fields = split_fields(line);
    if (fields.size() != 2) malformed(path, number, "expected 2 fields");
    const auto x = parse_number(fields[0]);
    const auto y = parse_number(fields[1]);
    if (!x || !y) malformed(path, number, "non-numeric or non-finite value");
    out.data.xs.push_back(*x);
    out.data.ys.push_back(*y);
  }
  if (out.data.empty()) throw DataError(path.string() + ": no data rows");
  if (standardize) {
    out.transform = fit_standardization(out.data);
    out.data = out.transform.forward(out.data);
  }
  return out;
}

IngestedCollection ingest_series_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  check_header(path, lines.front().second, {"series_id", "x", "y"});
  IngestedCollection out;
  std::map<std::string, std::size_t> index;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& [number, line] = lines[i];
    const auto fields = split_fields(line);
    if (fields.size() != 3) malformed(path, number, "expected 3 fields");
    if (fields[0].empty()) malformed(path, number, "empty series_id");
    const auto x = parse_number(fields[1]);
    const auto y = parse_number(fields[2]);
    if (!x || !y) malformed(path, number, "non-numeric or non-finite value");
    auto [it, inserted] = index.emplace(fields[0], out.series.size());
    if (inserted) {
      out.ids.push_back(fields[0]);
      out.series.emplace_back();
    }
    out.series[it->second].xs.push_back(*x);
    out.series[it->second].ys.push_back(*y);
  }
  if (out.series.empty()) throw DataError(path.string() + ": no data rows");
  return out;
}

void write_series_csv(const std::filesystem::path& path, const Dataset& data) {
  std::string text = "x,y\n";
  for (std::size_t i = 0; i < data.size(); ++i) {
    text += format_double(data.xs[i]) + "," + format_double(data.ys[i]) + "\n";
  }
  write_text_file(path, text);
}

std::string_view to_string(HoldoutMode mode) {
  switch (mode) {
    case HoldoutMode::ExtrapolateTail:
      return "extrapolate-tail";
    case HoldoutMode::InterpolateMiddle:
      return "interpolate-middle";
    case HoldoutMode::Random:
      return "random";
  }
  return "?";
}

std::optional<HoldoutMode> parse_holdout_mode(std::string_view name) {
  for (HoldoutMode mode :
       {HoldoutMode::ExtrapolateTail, HoldoutMode::InterpolateMiddle, HoldoutMode::Random}) {
    if (to_string(mode) == name) return mode;
  }
  return std::nullopt;
}

Split split_holdout(const Dataset& data, const HoldoutSpec& spec, Rng& rng) {
  if (!(spec.fraction >= 0.0 && spec.fraction < 1.0)) {
    throw ConfigError("holdout fraction must lie in [0, 1)");
  }
  const std::size_t n = data.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return data.xs[a] < data.xs[b]; });
  const auto held = static_cast<std::size_t>(std::floor(spec.fraction * static_cast<double>(n)));

  std::vector<bool> is_test(n, false);
  switch (spec.mode) {
    case HoldoutMode::ExtrapolateTail:
      for (std::size_t k = n - held; k < n; ++k) is_test[order[k]] = true;
      break;
    case HoldoutMode::InterpolateMiddle: {
      const std::size_t start = (n - held) / 2;
      for (std::size_t k = start; k < start + held; ++k) is_test[order[k]] = true;
      break;
    }
    case HoldoutMode::Random: {
      std::vector<std::size_t> pool = order;
      for (std::size_t k = 0; k < held; ++k) {
        const auto pick = k + std::min(static_cast<std::size_t>(rng.uniform() * static_cast<double>(n - k)), n - k - 1);
        std::swap(pool[k], pool[pick]);
        is_test[pool[k]] = true;
      }
      break;
    }
  }

  Split split;
  for (std::size_t k : order) {
    Dataset& target = is_test[k] ? split.test : split.train;
    target.xs.push_back(data.xs[k]);
    target.ys.push_back(data.ys[k]);
  }
  return split;
}

PredictionTable prediction_table(const GpPosterior& posterior) {
  PredictionTable table;
  table.x = posterior.at;
  for (Eigen::Index i = 0; i < posterior.mean.size(); ++i) {
    const double var = std::max(0.0, posterior.cov(i, i));
    table.mean.push_back(posterior.mean[i]);
    table.std_noiseless.push_back(std::sqrt(var));
    table.std_noisy.push_back(std::sqrt(var + posterior.noise_var));
  }
  return table;
}

void write_predictions_csv(const std::filesystem::path& path, const PredictionTable& table) {
  std::string text = "x,mean,std_noiseless,std_noisy";
  for (std::size_t s = 0; s < table.samples.size(); ++s) text += ",sample_" + std::to_string(s);
  text += "\n";
  for (std::size_t i = 0; i < table.x.size(); ++i) {
    text += format_double(table.x[i]) + "," + format_double(table.mean[i]) + "," +
            format_double(table.std_noiseless[i]) + "," + format_double(table.std_noisy[i]);
    for (const auto& column : table.samples) text += "," + format_double(column[i]);
    text += "\n";
  }
  write_text_file(path, text);
}

PredictionTable read_predictions_csv(const std::filesystem::path& path) {
  const auto lines = read_lines(path);
  const auto header = split_fields(lines.front().second);
  if (header.size() < 4 || header[0] != "x" || header[1] != "mean") {
    throw DataError(path.string() + ": line 1: not a predictions file");
  }
  PredictionTable table;
  table.samples.resize(header.size() - 4);
  for (std::size_t i = 1; i < lines.size(); ++i) {
    const auto& [number, line] = lines[i];
    const auto fields = split_fields(line);
    if (fields.size() != header.size()) malformed(path, number, "wrong field count");
    std::vector<double> values;
    for (const auto& f : fields) {
      const auto v = parse_number(f);
      if (!v) malformed(path, number, "non-numeric value");
      values.push_back(*v);
    }
    table.x.push_back(values[0]);
    table.mean.push_back(values[1]);
    table.std_noiseless.push_back(values[2]);
    table.std_noisy.push_back(values[3]);
    for (std::size_t s = 0; s < table.samples.size(); ++s) table.samples[s].push_back(values[4 + s]);
  }
  return table;
}

std::vector<HistogramEntry> structure_histogram(const std::vector<PosteriorSample>& samples) {
  std::map<std::string, std::size_t> counts;
  for (const auto& s : samples) ++counts[s.label];
  std::vector<HistogramEntry> out;
  const auto total = static_cast<double>(samples.size());
  for (const auto& [label, count] : counts) {
    out.push_back({label, count, static_cast<double>(count) / total});
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const auto& a, const auto& b) { return a.count > b.count; });
  return out;
}

nlohmann::json histogram_json(const std::vector<HistogramEntry>& histogram) {
  nlohmann::json entries = nlohmann::json::array();
  std::size_t total = 0;
  for (const auto& e : histogram) {
    entries.push_back({{"label", e.label}, {"count", e.count}, {"mass", e.mass}});
    total += e.count;
  }
  return {{"total", total}, {"structures", entries}};
}

double mean_squared_error(std::span<const double> predicted, std::span<const double> actual) {
  if (predicted.size() != actual.size() || predicted.empty()) {
    throw ArgumentError("error metrics need two equal-length, non-empty sequences");
  }
  double ss = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    ss += (predicted[i] - actual[i]) * (predicted[i] - actual[i]);
  }
  return ss / static_cast<double>(predicted.size());
}

double root_mean_squared_error(std::span<const double> predicted, std::span<const double> actual) {
  return std::sqrt(mean_squared_error(predicted, actual));
}

std::string format_double(double value) {
  char buffer[64];
  std::snprintf(buffer, sizeof(buffer), "%.17g", value);
  return buffer;
}

void write_text_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << contents;
  if (!out) throw IoError("failed writing " + path.string());
}

void emit_results(const ResultBundle& bundle, const std::filesystem::path& out_dir) {
  if (bundle.samples_required && bundle.samples.empty()) {
    throw ArgumentError("no posterior samples to write");
  }
  if (bundle.predictions) {
    const auto& p = *bundle.predictions;
    const std::size_t n = p.x.size();
    if (p.mean.size() != n || p.std_noiseless.size() != n || p.std_noisy.size() != n) {
      throw ArgumentError("prediction columns have different lengths");
    }
    for (const auto& column : p.samples) {
      if (column.size() != n) throw ArgumentError("prediction sample column has wrong length");
    }
  }
  std::error_code ec;
  std::filesystem::create_directories(out_dir, ec);
  if (ec || !std::filesystem::is_directory(out_dir)) {
    throw IoError("cannot create output directory " + out_dir.string());
  }

  if (!bundle.samples.empty()) {
    write_text_file(out_dir / "histogram.json",
                    histogram_json(structure_histogram(bundle.samples)).dump(2) + "\n");
    nlohmann::json samples = nlohmann::json::array();
    for (const auto& s : bundle.samples) {
      samples.push_back({{"chain", s.chain},
                         {"sweep", s.sweep},
                         {"label", s.label},
                         {"log_likelihood", s.log_likelihood},
                         {"log_prior", s.log_prior},
                         {"ast", ast_to_json(s.ast)}});
    }
    write_text_file(out_dir / "samples.json", samples.dump(2) + "\n");
  }
  if (bundle.predictions) write_predictions_csv(out_dir / "predictions.csv", *bundle.predictions);
  if (bundle.metrics) write_text_file(out_dir / "metrics.json", bundle.metrics->dump(2) + "\n");
  if (bundle.partitions) {
    write_text_file(out_dir / "partitions.json", bundle.partitions->dump(2) + "\n");
  }
  if (bundle.extra_json && !bundle.extra_json_name.empty()) {
    write_text_file(out_dir / bundle.extra_json_name, bundle.extra_json->dump(2) + "\n");
  }
}

}  // namespace covsynth
