#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "mufasa/evaluate.hpp"

namespace mufasa::cli {

namespace fs = std::filesystem;

// Values given on the command line; each overrides the config file.
struct Overrides {
  std::optional<fs::path> config;
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
  std::optional<fs::path> data_items;
  std::optional<fs::path> data_interactions;
  std::optional<std::string> variant;
  std::optional<fs::path> checkpoint;
};

struct BenchSettings {
  std::vector<std::size_t> lengths{40, 80, 160, 320};
  std::size_t window = 8;
  std::size_t repeats = 50;
};

struct RunConfig {
  ExperimentConfig experiment;
  std::optional<fs::path> data_items;
  std::optional<fs::path> data_interactions;
  fs::path out = "out";
  std::optional<fs::path> checkpoint;
  BenchSettings bench;

  nlohmann::json to_json() const;
};

/// Config file (if any) plus overrides, fully validated. Nothing is written.
/// The file holds the experiment sections plus optional "io" and "bench".
RunConfig resolve(const Overrides& overrides);
RunConfig run_config_from_json(const nlohmann::json& j);

// FNV-1a of the canonical config dump, 16 hex digits.
std::string config_hash(const RunConfig& config);

// Writes <out>/manifest.json.
void write_manifest(const RunConfig& config, const std::string& command);

// Synthetic corpus from the config, or the two data files when both are given.
PreparedData load_data(RunConfig& config);

int cmd_gen_data(RunConfig config, std::ostream& os);
int cmd_train(RunConfig config, std::ostream& os);
int cmd_eval(RunConfig config, std::ostream& os);
int cmd_ablate(RunConfig config, std::ostream& os);
// corrupt scales every analytic gradient before comparison (negative control).
int cmd_gradcheck(RunConfig config, bool corrupt, std::ostream& os);
int cmd_bench(RunConfig config, std::ostream& os);

std::string stats_table(const CorpusStats& stats, const std::string& name);

}  // namespace mufasa::cli
