#include "commands.hpp"

#include <chrono>
#include <cmath>
#include <random>
#include <fstream>
#include <ostream>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mufasa/checkpoint.hpp"
#include "mufasa/config.hpp"
#include "mufasa/error.hpp"
#include "mufasa/gradcheck.hpp"
#include "mufasa/version.hpp"

namespace mufasa::cli {

using nlohmann::json;

namespace {

std::optional<fs::path> optional_path(const json& section, const char* key) {
  if (!section.contains(key) || section.at(key).is_null()) return std::nullopt;
  if (!section.at(key).is_string()) fail(ErrorCode::kConfig, fmt::format("config key 'io.{}' must be a string", key));
  return fs::path(section.at(key).get<std::string>());
}

void expect_keys(const json& section, const std::string& name, std::initializer_list<const char*> keys) {
  if (!section.is_object()) fail(ErrorCode::kConfig, fmt::format("'{}' must be an object", name));
  for (const auto& [key, value] : section.items()) {
    bool known = false;
    for (const char* k : keys) known = known || key == k;
    if (!known) fail(ErrorCode::kConfig, fmt::format("unknown config key '{}.{}'", name, key));
  }
}

json path_json(const std::optional<fs::path>& p) { return p ? json(p->string()) : json(nullptr); }

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, fmt::format("cannot write {}", path.string()));
  out << text;
  if (!out) fail(ErrorCode::kIo, fmt::format("write failed: {}", path.string()));
}

std::string format_value(std::optional<double> v) { return v ? fmt::format("{:.4f}", *v) : "-"; }

}  // namespace

json RunConfig::to_json() const {
  json j = mufasa::to_json(experiment);
  j["io"] = {{"data_items", path_json(data_items)},
             {"data_interactions", path_json(data_interactions)},
             {"out", out.string()},
             {"checkpoint", path_json(checkpoint)}};
  j["bench"] = {{"lengths", bench.lengths}, {"window", bench.window}, {"repeats", bench.repeats}};
  return j;
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) fail(ErrorCode::kConfig, "config must be a JSON object");
  json experiment = j;
  RunConfig rc;
  if (j.contains("io")) {
    const json& io = j.at("io");
    expect_keys(io, "io", {"data_items", "data_interactions", "out", "checkpoint"});
    rc.data_items = optional_path(io, "data_items");
    rc.data_interactions = optional_path(io, "data_interactions");
    if (auto out = optional_path(io, "out")) rc.out = *out;
    rc.checkpoint = optional_path(io, "checkpoint");
    experiment.erase("io");
  }
  if (j.contains("bench")) {
    const json& b = j.at("bench");
    expect_keys(b, "bench", {"lengths", "window", "repeats"});
    try {
      if (b.contains("lengths")) rc.bench.lengths = b.at("lengths").get<std::vector<std::size_t>>();
      if (b.contains("window")) rc.bench.window = b.at("window").get<std::size_t>();
      if (b.contains("repeats")) rc.bench.repeats = b.at("repeats").get<std::size_t>();
    } catch (const json::exception& e) {
      fail(ErrorCode::kConfig, fmt::format("config section 'bench': {}", e.what()));
    }
    for (std::size_t l : rc.bench.lengths)
      if (l < 1) fail(ErrorCode::kConfig, "bench.lengths entries must be >= 1");
    if (rc.bench.window < 1 || rc.bench.repeats < 1) fail(ErrorCode::kConfig, "bench.window and bench.repeats must be >= 1");
    experiment.erase("bench");
  }
  rc.experiment = experiment_from_json(experiment);
  return rc;
}

RunConfig resolve(const Overrides& o) {
  json j = json::object();
  if (o.config) {
    if (!fs::exists(*o.config)) fail(ErrorCode::kFileNotFound, fmt::format("config not found: {}", o.config->string()));
    std::ifstream in(*o.config);
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      fail(ErrorCode::kParse, fmt::format("{}: {}", o.config->string(), e.what()));
    }
  }
  if (o.seed) j["seed"] = *o.seed;
  if (o.variant) {
    parse_variant(*o.variant);
    j["model"]["variant"] = *o.variant;
  }
  RunConfig rc = run_config_from_json(j);
  if (o.out) rc.out = *o.out;
  if (o.data_items) rc.data_items = *o.data_items;
  if (o.data_interactions) rc.data_interactions = *o.data_interactions;
  if (o.checkpoint) rc.checkpoint = *o.checkpoint;
  if (rc.data_items.has_value() != rc.data_interactions.has_value()) {
    fail(ErrorCode::kConfig, "--data-items and --data-interactions must be given together");
  }
  return rc;
}

std::string config_hash(const RunConfig& config) {
  json j = config.to_json();
  j.erase("io");  // paths do not change results
  const std::string text = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return fmt::format("{:016x}", h);
}

void write_manifest(const RunConfig& config, const std::string& command) {
  const json m = {{"command", command},
                  {"version", std::string(version())},
                  {"seed", config.experiment.seed},
                  {"config_hash", config_hash(config)},
                  {"fingerprint", fingerprint(config.experiment)},
                  {"config", config.to_json()}};
  write_text(config.out / "manifest.json", m.dump(2) + "\n");
}

PreparedData load_data(RunConfig& config) {
  if (!config.data_items) return prepare_synthetic(config.experiment);
  Dataset data;
  data.catalog = load_catalog(*config.data_items);
  data.users = load_interactions(*config.data_interactions, data.catalog);
  if (data.catalog.empty()) fail(ErrorCode::kEmptySample, fmt::format("{} holds no items", config.data_items->string()));
  // The files fix the layout.
  auto& e = config.experiment;
  e.data.dim = e.model.dim = e.cf.rank = data.catalog.dim();
  e.model.modalities = data.catalog.modalities();
  return prepare_data(std::move(data), e, /*fit_cf=*/false);
}

std::string stats_table(const CorpusStats& s, const std::string& name) {
  std::string out = fmt::format("{:<12} {:>8} {:>8} {:>14} {:>8} {:>9}\n", "Dataset", "#Users", "#Items",
                                "#Interactions", "Avg", "Sps");
  out += fmt::format("{:<12} {:>8} {:>8} {:>14} {:>8.2f} {:>8.2f}%\n", name, s.users, s.items, s.interactions,
                     s.average_length, 100.0 * s.sparsity);
  return out;
}

int cmd_gen_data(RunConfig config, std::ostream& os) {
  const fs::path items = config.data_items.value_or(config.out / "items.jsonl");
  const fs::path interactions = config.data_interactions.value_or(config.out / "interactions.jsonl");
  const PreparedData prepared = prepare_synthetic(config.experiment);
  write_catalog(items, prepared.data.catalog);
  write_interactions(interactions, prepared.data.users, prepared.data.catalog);
  write_manifest(config, "gen-data");
  os << stats_table(corpus_stats(prepared.data), "synthetic");
  os << fmt::format("wrote {} and {}\n", items.string(), interactions.string());
  return 0;
}

int cmd_train(RunConfig config, std::ostream& os) {
  PreparedData prepared = load_data(config);
  Model model(config.experiment.model);
  fs::create_directories(config.out);
  std::ofstream curve(config.out / "losses.jsonl", std::ios::trunc);
  if (!curve) fail(ErrorCode::kIo, fmt::format("cannot write {}", (config.out / "losses.jsonl").string()));
  const auto log_record = [&](const EpochRecord& r) {
    const json j = {{"stage", r.stage},
                    {"epoch", r.epoch},
                    {"component", r.component},
                    {"value", std::isfinite(r.value) ? json(r.value) : json(nullptr)}};
    curve << j.dump() << '\n';
    if (r.component == "total" || r.component == "contrastive")
      spdlog::info("{} epoch {} {} {:.6f}", r.stage, r.epoch, r.component, r.value);
  };
  const TrainResult result =
      train(model, prepared.data.catalog, prepared.splits.leave_one_out.train, config.experiment.train, log_record);
  curve.close();
  const fs::path ckpt = config.checkpoint.value_or(config.out / "checkpoint.json");
  save_checkpoint(ckpt, model);
  write_manifest(config, "train");
  os << fmt::format("variant {}  seed {}  epochs mfl {} sal {}\n", variant_name(model.variant()),
                    config.experiment.seed, config.experiment.train.mfl_epochs, config.experiment.train.sal_epochs);
  for (auto it = result.records.rbegin(); it != result.records.rend(); ++it) {
    if (it->component == "contrastive") {
      os << fmt::format("final sal contrastive {:.6f}\n", it->value);
      break;
    }
  }
  for (auto it = result.records.rbegin(); it != result.records.rend(); ++it) {
    if (it->stage == "mfl" && it->component == "total") {
      os << fmt::format("final mfl total {:.6f}\n", it->value);
      break;
    }
  }
  os << fmt::format("checkpoint {}\n", ckpt.string());
  return 0;
}

int cmd_eval(RunConfig config, std::ostream& os) {
  const fs::path ckpt = config.checkpoint.value_or(config.out / "checkpoint.json");
  Model model = load_checkpoint(ckpt);
  config.experiment.model = model.config();
  PreparedData prepared = load_data(config);
  MetricReport report = evaluate_model(model, prepared, config.experiment.eval);
  report.seed = config.experiment.seed;
  report.fingerprint = fingerprint(config.experiment);
  write_text(config.out / "metrics.jsonl", report.to_jsonl());
  write_manifest(config, "eval");
  os << report.to_table();
  return 0;
}

int cmd_ablate(RunConfig config, std::ostream& os) {
  const PreparedData prepared = load_data(config);
  const auto results = run_ablation(prepared, config.experiment, kAllVariants);
  std::string jsonl;
  os << fmt::format("{:<16} {:>8} {:>8} {:>8} {:>8} {:>10}  {}\n", "variant", "HR@10", "NDCG@10", "R@20", "R@100",
                    "R_long@20", "fingerprint");
  for (const auto& r : results) {
    const auto& m = r.report;
    os << fmt::format("{:<16} {:>8} {:>8} {:>8} {:>8} {:>10}  {}\n", m.variant, format_value(m.get("HR", 10)),
                      format_value(m.get("NDCG", 10)), format_value(m.get("R", 20)), format_value(m.get("R", 100)),
                      format_value(m.get("R_long", config.experiment.eval.long_recall_k)), m.fingerprint);
    jsonl += m.to_jsonl();
  }
  write_text(config.out / "ablation.jsonl", jsonl);
  write_manifest(config, "ablate");
  return 0;
}

int cmd_gradcheck(RunConfig config, bool corrupt, std::ostream& os) {
  GradCheckOptions options;
  if (corrupt) options.corrupt = [](Tensor& g) {
      for (double& v : g.values()) v = 1.5 * v + 1e-3;
    };
  const auto reports = gradient_suite(options, config.experiment.seed);
  bool ok = true;
  json records = json::array();
  os << fmt::format("{:<22} {:>12} {:>7}  {}\n", "component", "max rel err", "params", "result");
  for (const auto& r : reports) {
    ok = ok && r.passed;
    os << fmt::format("{:<22} {:>12.3e} {:>7}  {}\n", r.component, r.max_rel_error, r.params.size(),
                      r.passed ? "PASS" : "FAIL");
    records.push_back({{"component", r.component}, {"max_rel_error", r.max_rel_error}, {"passed", r.passed}});
  }
  write_text(config.out / "gradcheck.json", records.dump(2) + "\n");
  write_manifest(config, "gradcheck");
  if (!ok) {
    os << "gradient check failed\n";
    return 1;
  }
  return 0;
}

int cmd_bench(RunConfig config, std::ostream& os) {
  const auto& sal = config.experiment.model.sal;
  const std::size_t dim = config.experiment.model.dim;
  std::string jsonl;
  os << fmt::format("{:>6} {:>6} {:>8} {:>8} {:>8} {:>10} {:>10}\n", "L", "full", "sparse", "formula", "ratio",
                    "full_us", "sparse_us");
  for (std::size_t length : config.bench.lengths) {
    const AttentionCost cost = attention_cost(length, sal.block_size, config.bench.window, sal.top_k, dim, config.experiment.seed);
    const std::size_t formula = sparse_cost_formula(cost.window, length, sal.block_size, cost.core_items);

    std::mt19937_64 rng(config.experiment.seed);
    SalParams params = SalParams::create(dim, rng);
    std::normal_distribution<double> normal;
    Tensor history(length, dim);
    for (double& v : history.values()) v = normal(rng);
    SalConfig sc = sal;
    sc.window_size = config.bench.window;

    using clock = std::chrono::steady_clock;
    const auto t0 = clock::now();
    for (std::size_t r = 0; r < config.bench.repeats; ++r) {
      Tape tape;
      Var h = tape.constant(history);
      Var q = matmul(slice_rows(h, length - 1, length), tape.parameter(params.selective.query));
      attend(q, h, tape.parameter(params.selective.key), tape.parameter(params.selective.value));
    }
    const auto t1 = clock::now();
    for (std::size_t r = 0; r < config.bench.repeats; ++r) {
      Tape tape;
      encode_user(tape, tape.constant(history), params, sc);
    }
    const auto t2 = clock::now();
    const double reps = static_cast<double>(config.bench.repeats);
    const double full_us = std::chrono::duration<double, std::micro>(t1 - t0).count() / reps;
    const double sparse_us = std::chrono::duration<double, std::micro>(t2 - t1).count() / reps;
    const double ratio = static_cast<double>(cost.sparse_cost) / static_cast<double>(cost.full_cost);
    os << fmt::format("{:>6} {:>6} {:>8} {:>8} {:>8.4f} {:>10.1f} {:>10.1f}\n", length, cost.full_cost,
                      cost.sparse_cost, formula, ratio, full_us, sparse_us);
    jsonl += json{{"length", length},       {"full", cost.full_cost}, {"sparse", cost.sparse_cost},
                  {"formula", formula},     {"ratio", ratio},         {"full_us", full_us},
                  {"sparse_us", sparse_us}}
                 .dump() +
             "\n";
  }
  write_text(config.out / "bench.jsonl", jsonl);
  write_manifest(config, "bench");
  return 0;
}

}  // namespace mufasa::cli
