#pragma once

#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "prism/experiment.hpp"

namespace prism {

/// One config key. `set` parses and stores a value; `get` renders the
/// canonical text form.
struct ConfigKey {
    std::string name;
    std::string help;
    std::function<void(ExperimentConfig&, const std::string&)> set;
    std::function<std::string(const ExperimentConfig&)> get;
};

/// All keys in canonical order.
const std::vector<ConfigKey>& config_keys();

/// Text format: one `key = value` per line, `#` starts a comment, blank lines are
/// ignored. Lists are comma-separated. Unknown or repeated keys are errors.
ExperimentConfig parse_config_text(const std::string& text, const std::string& origin = "<config>");

/// Reads and parses a config file; a missing file is a ValidationError naming the path.
ExperimentConfig load_config(const std::string& path);

/// Sets one key from its text form (unknown key -> ValidationError).
void apply_override(ExperimentConfig& config, const std::string& key, const std::string& value);

/// Applies "key=value".
void apply_override(ExperimentConfig& config, const std::string& assignment);

/// Canonical text form: every key in canonical order. Parsing it gives back the
/// same config.
std::string config_to_text(const ExperimentConfig& config);

nlohmann::json config_to_json(const ExperimentConfig& config);

}  // namespace prism
