#include "mufasa/config.hpp"

#include <cstdint>
#include <fstream>
#include <set>

#include <fmt/format.h>

#include "mufasa/error.hpp"

namespace mufasa {

using nlohmann::json;

namespace {

std::string_view aggregator_name(Aggregator a) { return a == Aggregator::kMeanPool ? "mean_pool" : "mean_linear"; }
std::string_view window_mode_name(WindowMode m) {
  return m == WindowMode::kIncludeQuery ? "include_query" : "exclude_query";
}
std::string_view optimizer_name(OptimizerKind k) { return k == OptimizerKind::kAdam ? "adam" : "sgd"; }

json optimizer_json(const OptimizerConfig& o) {
  return {{"kind", optimizer_name(o.kind)}, {"lr", o.lr}, {"beta1", o.beta1}, {"beta2", o.beta2}, {"eps", o.eps}};
}

// Reads the known keys of one object and rejects the rest.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorCode::kConfig, fmt::format("'{}' must be an object", path_));
  }
  ~Section() noexcept(false) {
    if (std::uncaught_exceptions() > 0) return;
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) fail(ErrorCode::kConfig, fmt::format("unknown config key '{}'", name(key)));
    }
  }
  Section(const Section&) = delete;
  Section& operator=(const Section&) = delete;

  template <typename T>
  void read(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!j_.at(key).is_boolean()) throw std::invalid_argument("expected a boolean");
      } else if constexpr (std::is_unsigned_v<T>) {
        const json& v = j_.at(key);
        if (!v.is_number_integer() || (!v.is_number_unsigned() && v.get<std::int64_t>() < 0))
          throw std::invalid_argument("expected a non-negative integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!j_.at(key).is_number()) throw std::invalid_argument("expected a number");
      }
      out = j_.at(key).get<T>();
    } catch (const std::exception& e) {
      fail(ErrorCode::kConfig, fmt::format("config key '{}': {}", name(key), e.what()));
    }
  }

  template <typename T>
  void read_optional(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    if (j_.at(key).is_null()) {
      out.reset();
      return;
    }
    T v{};
    read(key, v);
    out = v;
  }

  template <typename Enum, typename Names>
  void read_enum(const char* key, Enum& out, Names&& names) {
    std::string text;
    read(key, text);
    if (!j_.contains(key)) return;
    for (auto [e, n] : names)
      if (text == n) {
        out = e;
        return;
      }
    fail(ErrorCode::kConfig, fmt::format("config key '{}': unknown value '{}'", name(key), text));
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }
  std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

void read_optimizer(const json& j, const std::string& path, OptimizerConfig& o) {
  Section s(j, path);
  s.read_enum("kind", o.kind,
              std::array{std::pair{OptimizerKind::kSgd, "sgd"}, std::pair{OptimizerKind::kAdam, "adam"}});
  s.read("lr", o.lr);
  s.read("beta1", o.beta1);
  s.read("beta2", o.beta2);
  s.read("eps", o.eps);
}

}  // namespace

json to_json(const ExperimentConfig& c) {
  const auto& d = c.data;
  const auto& m = c.model;
  const auto& f = c.train.mfl;
  const auto& t = c.train;
  return {
      {"seed", c.seed},
      {"holdout_users", c.holdout_users},
      {"targets_per_user", c.targets_per_user},
      {"data",
       {{"genres", d.genres},
        {"dim", d.dim},
        {"subclusters_per_genre", d.subclusters_per_genre},
        {"items_per_subcluster", d.items_per_subcluster},
        {"users", d.users},
        {"min_length", d.min_length},
        {"max_length", d.max_length},
        {"run_min", d.run_min},
        {"run_max", d.run_max},
        {"modality_noise_std", d.modality_noise_std},
        {"modality_noise_scale", d.modality_noise_scale},
        {"subcluster_std", d.subcluster_std},
        {"title_noise_std", d.title_noise_std},
        {"misclick_prob", d.misclick_prob},
        {"degraded_title_fraction", d.degraded_title_fraction},
        {"tail_length", d.tail_length}}},
      {"cf",
       {{"epochs", c.cf.epochs}, {"lr", c.cf.lr}, {"reg", c.cf.reg}, {"negatives", c.cf.negatives}}},
      {"model",
       {{"dim", m.dim},
        {"variant", variant_name(m.variant)},
        {"block_size", m.sal.block_size},
        {"top_k", m.sal.top_k},
        {"aggregator", aggregator_name(m.sal.aggregator)},
        {"window_mode", window_mode_name(m.sal.window_mode)},
        {"window_size", m.sal.window_size ? json(*m.sal.window_size) : json(nullptr)},
        {"tau", m.sal.tau}}},
      {"mfl",
       {{"alpha", f.alpha},
        {"tau_title", f.tau_title},
        {"tau_fus", f.tau_fus},
        {"sigma", f.sigma},
        {"negatives_k", f.negatives_k ? json(*f.negatives_k) : json(nullptr)},
        {"exhaustive_pair_limit", f.exhaustive_pair_limit},
        {"pair_budget_factor", f.pair_budget_factor},
        {"min_title_tokens", f.min_title_tokens}}},
      {"train",
       {{"mfl_epochs", t.mfl_epochs},
        {"mfl_batch", t.mfl_batch},
        {"mfl_optimizer", optimizer_json(t.mfl_optimizer)},
        {"sal_epochs", t.sal_epochs},
        {"sal_batch", t.sal_batch},
        {"samples_per_user", t.samples_per_user},
        {"max_context", t.max_context},
        {"sal_optimizer", optimizer_json(t.sal_optimizer)},
        {"finetune_mfl", t.finetune_mfl}}},
      {"eval",
       {{"hr_ks", c.eval.hr_ks},
        {"recall_ks", c.eval.recall_ks},
        {"long_context", c.eval.long_context},
        {"long_recall_k", c.eval.long_recall_k}}},
  };
}

ExperimentConfig experiment_from_json(const json& j, ExperimentConfig c) {
  {
    Section top(j, "");
    std::uint64_t seed = c.seed;
    top.read("seed", seed);
    c.apply_seed(seed);
    top.read("holdout_users", c.holdout_users);
    top.read("targets_per_user", c.targets_per_user);

    if (const json* d = top.child("data")) {
      Section s(*d, "data");
      auto& x = c.data;
      s.read("genres", x.genres);
      s.read("dim", x.dim);
      s.read("subclusters_per_genre", x.subclusters_per_genre);
      s.read("items_per_subcluster", x.items_per_subcluster);
      s.read("users", x.users);
      s.read("min_length", x.min_length);
      s.read("max_length", x.max_length);
      s.read("run_min", x.run_min);
      s.read("run_max", x.run_max);
      s.read("modality_noise_std", x.modality_noise_std);
      s.read("modality_noise_scale", x.modality_noise_scale);
      s.read("subcluster_std", x.subcluster_std);
      s.read("title_noise_std", x.title_noise_std);
      s.read("misclick_prob", x.misclick_prob);
      s.read("degraded_title_fraction", x.degraded_title_fraction);
      s.read("tail_length", x.tail_length);
    }
    if (const json* d = top.child("cf")) {
      Section s(*d, "cf");
      s.read("epochs", c.cf.epochs);
      s.read("lr", c.cf.lr);
      s.read("reg", c.cf.reg);
      s.read("negatives", c.cf.negatives);
    }
    if (const json* d = top.child("model")) {
      Section s(*d, "model");
      auto& m = c.model;
      s.read("dim", m.dim);
      std::string variant(variant_name(m.variant));
      s.read("variant", variant);
      m.variant = parse_variant(variant);
      s.read("block_size", m.sal.block_size);
      s.read("top_k", m.sal.top_k);
      s.read_enum("aggregator", m.sal.aggregator,
                  std::array{std::pair{Aggregator::kMeanLinear, "mean_linear"},
                             std::pair{Aggregator::kMeanPool, "mean_pool"}});
      s.read_enum("window_mode", m.sal.window_mode,
                  std::array{std::pair{WindowMode::kExcludeQuery, "exclude_query"},
                             std::pair{WindowMode::kIncludeQuery, "include_query"}});
      s.read_optional("window_size", m.sal.window_size);
      s.read("tau", m.sal.tau);
    }
    if (const json* d = top.child("mfl")) {
      Section s(*d, "mfl");
      auto& f = c.train.mfl;
      s.read("alpha", f.alpha);
      s.read("tau_title", f.tau_title);
      s.read("tau_fus", f.tau_fus);
      s.read("sigma", f.sigma);
      s.read_optional("negatives_k", f.negatives_k);
      s.read("exhaustive_pair_limit", f.exhaustive_pair_limit);
      s.read("pair_budget_factor", f.pair_budget_factor);
      s.read("min_title_tokens", f.min_title_tokens);
    }
    if (const json* d = top.child("train")) {
      Section s(*d, "train");
      auto& t = c.train;
      s.read("mfl_epochs", t.mfl_epochs);
      s.read("mfl_batch", t.mfl_batch);
      if (const json* o = s.child("mfl_optimizer")) read_optimizer(*o, "train.mfl_optimizer", t.mfl_optimizer);
      s.read("sal_epochs", t.sal_epochs);
      s.read("sal_batch", t.sal_batch);
      s.read("samples_per_user", t.samples_per_user);
      s.read("max_context", t.max_context);
      if (const json* o = s.child("sal_optimizer")) read_optimizer(*o, "train.sal_optimizer", t.sal_optimizer);
      s.read("finetune_mfl", t.finetune_mfl);
    }
    if (const json* d = top.child("eval")) {
      Section s(*d, "eval");
      s.read("hr_ks", c.eval.hr_ks);
      s.read("recall_ks", c.eval.recall_ks);
      s.read("long_context", c.eval.long_context);
      s.read("long_recall_k", c.eval.long_recall_k);
    }
  }
  c.cf.rank = c.model.dim;
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) {
    fail(ErrorCode::kFileNotFound, fmt::format("config not found: {}", path.string()));
  }
  std::ifstream in(path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    fail(ErrorCode::kParse, fmt::format("{}: {}", path.string(), e.what()));
  }
  return experiment_from_json(j);
}

}  // namespace mufasa
