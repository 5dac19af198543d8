#pragma once

#include <cstddef>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "covsynth/clustering.hpp"
#include "covsynth/inference.hpp"
#include "covsynth/io.hpp"
#include "covsynth/prior.hpp"
#include "covsynth/synth.hpp"

namespace covsynth {

enum class Task { Fit, Predict, Cluster, CompareInference, SynthData };

std::string_view to_string(Task task);
std::optional<Task> parse_task(std::string_view name);

/// All run-level settings. Defaults reproduce the reference grammar and schedule.
struct RunConfig {
  Task task = Task::Fit;
  PriorConfig prior;
  ScheduleConfig schedule;
  double noise_var = kBaselineNoise;
  bool standardize = true;
  HoldoutSpec holdout;
  double concentration = kDefaultConcentration;
  SynthKind synth_kind = SynthKind::LinPlusPer;
  std::size_t synth_n = 50;
  /// Number of retained samples used for model-averaged predictions (0 = all).
  std::size_t max_predictive_samples = 200;
  /// Evenly spaced probe points added to the predictions output.
  std::size_t probe_grid = 200;

  void validate() const;
};

/// Sets one `section.key` from its textual value; throws ConfigError for unknown keys or bad values.
void apply_setting(RunConfig& cfg, std::string_view dotted_key, std::string_view value);

/// Parses `section.key=value`.
void apply_override(RunConfig& cfg, std::string_view assignment);

/// Reads an INI-style file of `[section]` headers and `key = value` lines.
RunConfig load_config(const std::filesystem::path& path, RunConfig base = {});

/// Names of every recognized `section.key`.
std::vector<std::string> config_keys();

}  // namespace covsynth
