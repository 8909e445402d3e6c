#include "mufasa/checkpoint.hpp"

#include <fstream>
#include <map>

#include <fmt/format.h>

#include "mufasa/error.hpp"

namespace mufasa {

using nlohmann::json;

namespace {

constexpr const char* kFormat = "mufasa-checkpoint";
constexpr int kFormatVersion = 1;

}  // namespace

json checkpoint_json(Model& model) {
  const ModelConfig& c = model.config();
  json params = json::array();
  for (Parameter* p : model.all_parameters()) {
    params.push_back({{"name", p->name},
                      {"rows", p->value.rows()},
                      {"cols", p->value.cols()},
                      {"values", std::vector<double>(p->value.values().begin(), p->value.values().end())}});
  }
  return {{"format", kFormat},
          {"version", kFormatVersion},
          {"model",
           {{"modalities", c.modalities},
            {"dim", c.dim},
            {"variant", variant_name(c.variant)},
            {"seed", c.seed},
            {"block_size", c.sal.block_size},
            {"top_k", c.sal.top_k},
            {"aggregator", c.sal.aggregator == Aggregator::kMeanPool ? "mean_pool" : "mean_linear"},
            {"window_mode", c.sal.window_mode == WindowMode::kIncludeQuery ? "include_query" : "exclude_query"},
            {"window_size", c.sal.window_size ? json(*c.sal.window_size) : json(nullptr)},
            {"tau", c.sal.tau}}},
          {"parameters", std::move(params)}};
}

Model model_from_checkpoint(const json& j) {
  try {
    if (j.value("format", "") != kFormat || j.value("version", 0) != kFormatVersion)
      fail(ErrorCode::kParse, "not a checkpoint of a supported format");
    const json& m = j.at("model");
    ModelConfig c;
    c.modalities = m.at("modalities").get<std::size_t>();
    c.dim = m.at("dim").get<std::size_t>();
    c.variant = parse_variant(m.at("variant").get<std::string>());
    c.seed = m.at("seed").get<std::uint64_t>();
    c.sal.block_size = m.at("block_size").get<std::size_t>();
    c.sal.top_k = m.at("top_k").get<std::size_t>();
    c.sal.aggregator = m.at("aggregator").get<std::string>() == "mean_pool" ? Aggregator::kMeanPool
                                                                            : Aggregator::kMeanLinear;
    c.sal.window_mode = m.at("window_mode").get<std::string>() == "include_query"
                            ? WindowMode::kIncludeQuery
                            : WindowMode::kExcludeQuery;
    if (!m.at("window_size").is_null()) c.sal.window_size = m.at("window_size").get<std::size_t>();
    c.sal.tau = m.at("tau").get<double>();

    std::map<std::string, const json*> stored;
    for (const json& p : j.at("parameters")) stored[p.at("name").get<std::string>()] = &p;

    Model model(c);
    for (Parameter* p : model.all_parameters()) {
      auto it = stored.find(p->name);
      if (it == stored.end()) fail(ErrorCode::kParse, fmt::format("checkpoint lacks parameter '{}'", p->name));
      const json& e = *it->second;
      const auto rows = e.at("rows").get<std::size_t>();
      const auto cols = e.at("cols").get<std::size_t>();
      if (rows != p->value.rows() || cols != p->value.cols()) {
        fail(ErrorCode::kParse, fmt::format("parameter '{}' has shape {}, expected {}", p->name,
                                            shape_string(rows, cols), p->value.shape_string()));
      }
      p->value = Tensor(rows, cols, e.at("values").get<std::vector<double>>());
      if (!p->value.all_finite()) fail(ErrorCode::kNonFinite, fmt::format("parameter '{}' is not finite", p->name));
    }
    return model;
  } catch (const json::exception& e) {
    fail(ErrorCode::kParse, fmt::format("malformed checkpoint: {}", e.what()));
  }
}

void save_checkpoint(const std::filesystem::path& path, Model& model) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  out << checkpoint_json(model).dump() << '\n';
  if (!out) fail(ErrorCode::kIo, fmt::format("write failed: {}", path.string()));
}

Model load_checkpoint(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    fail(ErrorCode::kFileNotFound, fmt::format("checkpoint not found: {}", path.string()));
  }
  std::ifstream in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kParse, fmt::format("{}: {}", path.string(), e.what()));
  }
  try {
    return model_from_checkpoint(j);
  } catch (const Error& e) {
    fail(e.code(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

}  // namespace mufasa
