#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "mufasa/evaluate.hpp"

namespace mufasa {

// Every field, grouped into data / cf / model / mfl / train / eval sections.
nlohmann::json to_json(const ExperimentConfig& config);

/// Overlays `j` onto `base`. Unknown keys, wrong types and invalid values
/// are config errors naming the offending key path.
ExperimentConfig experiment_from_json(const nlohmann::json& j, ExperimentConfig base = {});

ExperimentConfig load_experiment_config(const std::filesystem::path& path);

}  // namespace mufasa
