#pragma once

// JSON run configuration. Unknown keys are rejected; `key=value` overrides
// address nested keys with dots, e.g. `maze.layout=layouts/default.txt`.

#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "cesor/train.hpp"

namespace cesor {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Relative layout paths resolve against base_dir first, then the working directory.
TrainConfig config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir = {});
nlohmann::json config_to_json(const TrainConfig& config);

// Applies "a.b=value" to the document. The value is parsed as JSON when it
// parses, otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

TrainConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {});

}  // namespace cesor
