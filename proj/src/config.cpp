#include "covsynth/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include "covsynth/errors.hpp"

namespace covsynth {

namespace {

using Setter = std::function<void(RunConfig&, const std::string&)>;

std::string trimmed(std::string_view text) {
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = text.find_last_not_of(" \t\r\n");
  return std::string(text.substr(first, last - first + 1));
}

double to_double(const std::string& key, const std::string& text) {
  double value = 0.0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end || !std::isfinite(value)) {
    throw ConfigError(key + ": '" + text + "' is not a finite number");
  }
  return value;
}

long long to_integer(const std::string& key, const std::string& text) {
  long long value = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) throw ConfigError(key + ": '" + text + "' is not an integer");
  return value;
}

std::uint64_t to_unsigned(const std::string& key, const std::string& text) {
  std::uint64_t value = 0;
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, value);
  if (ec != std::errc() || ptr != end) {
    throw ConfigError(key + ": '" + text + "' is not a non-negative integer");
  }
  return value;
}

bool to_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1" || text == "yes" || text == "on") return true;
  if (text == "false" || text == "0" || text == "no" || text == "off") return false;
  throw ConfigError(key + ": '" + text + "' is not a boolean");
}

template <std::size_t N>
std::array<double, N> to_weights(const std::string& key, const std::string& text) {
  std::array<double, N> out{};
  std::stringstream stream(text);
  std::string field;
  std::size_t i = 0;
  while (std::getline(stream, field, ',')) {
    if (i >= N) {
      ++i;
      break;
    }
    out[i++] = to_double(key, trimmed(field));
  }
  if (i != N) {
    throw ConfigError(key + ": expected " + std::to_string(N) + " comma-separated weights");
  }
  return out;
}

int to_int(const std::string& key, const std::string& text) {
  const long long v = to_integer(key, text);
  if (v < -1000000000LL || v > 1000000000LL) throw ConfigError(key + ": value out of range");
  return static_cast<int>(v);
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"run.task",
       [](RunConfig& c, const std::string& v) {
         auto task = parse_task(v);
         if (!task) throw ConfigError("run.task: unknown task '" + v + "'");
         c.task = *task;
       }},
      {"prior.p_branch", [](RunConfig& c, const std::string& v) { c.prior.p_branch = to_double("prior.p_branch", v); }},
      {"prior.kernel_weights",
       [](RunConfig& c, const std::string& v) { c.prior.kernel_weights = to_weights<5>("prior.kernel_weights", v); }},
      {"prior.operator_weights",
       [](RunConfig& c, const std::string& v) { c.prior.operator_weights = to_weights<3>("prior.operator_weights", v); }},
      {"prior.max_depth", [](RunConfig& c, const std::string& v) { c.prior.max_depth = to_int("prior.max_depth", v); }},
      {"schedule.sweeps", [](RunConfig& c, const std::string& v) { c.schedule.sweeps = to_int("schedule.sweeps", v); }},
      {"schedule.hyper_steps",
       [](RunConfig& c, const std::string& v) { c.schedule.hyper_steps = to_int("schedule.hyper_steps", v); }},
      {"schedule.structure_steps",
       [](RunConfig& c, const std::string& v) { c.schedule.structure_steps = to_int("schedule.structure_steps", v); }},
      {"schedule.step_size",
       [](RunConfig& c, const std::string& v) { c.schedule.step_size = to_double("schedule.step_size", v); }},
      {"schedule.chains", [](RunConfig& c, const std::string& v) { c.schedule.chains = to_int("schedule.chains", v); }},
      {"schedule.seed", [](RunConfig& c, const std::string& v) { c.schedule.seed = to_unsigned("schedule.seed", v); }},
      {"schedule.burn_in", [](RunConfig& c, const std::string& v) { c.schedule.burn_in = to_double("schedule.burn_in", v); }},
      {"schedule.hyper_mode",
       [](RunConfig& c, const std::string& v) {
         auto mode = parse_hyper_mode(v);
         if (!mode) throw ConfigError("schedule.hyper_mode: expected mh, gradient or mixed");
         c.schedule.hyper_mode = *mode;
       }},
      {"schedule.node_count_correction",
       [](RunConfig& c, const std::string& v) {
         c.schedule.node_count_correction = to_bool("schedule.node_count_correction", v);
       }},
      {"schedule.resample_initial_hypers",
       [](RunConfig& c, const std::string& v) {
         c.schedule.resample_initial_hypers = to_bool("schedule.resample_initial_hypers", v);
       }},
      {"gp.noise_var", [](RunConfig& c, const std::string& v) { c.noise_var = to_double("gp.noise_var", v); }},
      {"data.standardize", [](RunConfig& c, const std::string& v) { c.standardize = to_bool("data.standardize", v); }},
      {"data.holdout_fraction",
       [](RunConfig& c, const std::string& v) { c.holdout.fraction = to_double("data.holdout_fraction", v); }},
      {"data.holdout_mode",
       [](RunConfig& c, const std::string& v) {
         auto mode = parse_holdout_mode(v);
         if (!mode) throw ConfigError("data.holdout_mode: unknown mode '" + v + "'");
         c.holdout.mode = *mode;
       }},
      {"cluster.concentration",
       [](RunConfig& c, const std::string& v) { c.concentration = to_double("cluster.concentration", v); }},
      {"synth.kind",
       [](RunConfig& c, const std::string& v) {
         auto kind = parse_synth_kind(v);
         if (!kind) throw ConfigError("synth.kind: unknown kind '" + v + "'");
         c.synth_kind = *kind;
       }},
      {"synth.n",
       [](RunConfig& c, const std::string& v) { c.synth_n = static_cast<std::size_t>(to_unsigned("synth.n", v)); }},
      {"output.max_predictive_samples",
       [](RunConfig& c, const std::string& v) {
         c.max_predictive_samples = static_cast<std::size_t>(to_unsigned("output.max_predictive_samples", v));
       }},
      {"output.probe_grid",
       [](RunConfig& c, const std::string& v) {
         c.probe_grid = static_cast<std::size_t>(to_unsigned("output.probe_grid", v));
       }},
  };
  return table;
}

}  // namespace

std::string_view to_string(Task task) {
  switch (task) {
    case Task::Fit:
      return "fit";
    case Task::Predict:
      return "predict";
    case Task::Cluster:
      return "cluster";
    case Task::CompareInference:
      return "compare-inference";
    case Task::SynthData:
      return "synth-data";
  }
  return "?";
}

std::optional<Task> parse_task(std::string_view name) {
  for (Task task : {Task::Fit, Task::Predict, Task::Cluster, Task::CompareInference, Task::SynthData}) {
    if (to_string(task) == name) return task;
  }
  return std::nullopt;
}

void RunConfig::validate() const {
  prior.validate();
  schedule.validate();
  if (!(noise_var > 0.0)) throw ConfigError("gp.noise_var must be positive");
  if (!(holdout.fraction >= 0.0 && holdout.fraction < 1.0)) {
    throw ConfigError("data.holdout_fraction must lie in [0, 1)");
  }
  if (!(concentration > 0.0)) throw ConfigError("cluster.concentration must be positive");
  if (synth_n == 0) throw ConfigError("synth.n must be positive");
}

void apply_setting(RunConfig& cfg, std::string_view dotted_key, std::string_view value) {
  const std::string key = trimmed(dotted_key);
  auto it = setters().find(key);
  if (it == setters().end()) throw ConfigError("unknown configuration key '" + key + "'");
  it->second(cfg, trimmed(value));
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) {
    throw ConfigError("override '" + std::string(assignment) + "' must look like section.key=value");
  }
  apply_setting(cfg, assignment.substr(0, eq), assignment.substr(eq + 1));
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base) {
  boost::property_tree::ptree tree;
  try {
    boost::property_tree::ini_parser::read_ini(path.string(), tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("cannot read config " + path.string() + ": " + e.message() + " (line " +
                      std::to_string(e.line()) + ")");
  }
  for (const auto& [section, entries] : tree) {
    if (entries.empty()) {
      throw ConfigError("config " + path.string() + ": key '" + section + "' is outside a section");
    }
    for (const auto& [key, value] : entries) {
      apply_setting(base, section + "." + key, value.get_value<std::string>());
    }
  }
  return base;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& [key, setter] : setters()) out.push_back(key);
  return out;
}

}  // namespace covsynth
