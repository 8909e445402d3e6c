#pragma once

#include <filesystem>

#include <nlohmann/json.hpp>

#include "mufasa/model.hpp"

namespace mufasa {

// Model layout plus every parameter value; doubles round-trip exactly.
nlohmann::json checkpoint_json(Model& model);
Model model_from_checkpoint(const nlohmann::json& j);

void save_checkpoint(const std::filesystem::path& path, Model& model);
// File-not-found and parse errors are reported with the path.
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace mufasa
