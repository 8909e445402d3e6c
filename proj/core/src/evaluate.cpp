#include "mufasa/evaluate.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mufasa/config.hpp"
#include "mufasa/error.hpp"

namespace mufasa {

Scorer::Scorer(Model& model, const Catalog& catalog, Tensor item_table)
    : model_(model), catalog_(catalog), table_(std::move(item_table)) {
  if (catalog.empty()) fail(ErrorCode::kEmptySample, "cannot rank an empty catalog");
  if (table_.rows() != catalog.size() || table_.cols() != model.config().dim) {
    fail(ErrorCode::kDimension, fmt::format("item table {} does not match catalog of {} items",
                                            table_.shape_string(), catalog.size()));
  }
  projected_unit_ = project_items(table_, model.sal());
  for (std::size_t r = 0; r < projected_unit_.rows(); ++r) {
    auto row = projected_unit_.row_span(r);
    const double n = l2_norm(row);
    if (n > 0.0)
      for (double& v : row) v /= n;
  }
  std::vector<std::size_t> by_id(catalog.size());
  std::iota(by_id.begin(), by_id.end(), 0);
  std::sort(by_id.begin(), by_id.end(),
            [&](std::size_t a, std::size_t b) { return catalog[a].item_id < catalog[b].item_id; });
  id_order_.resize(catalog.size());
  for (std::size_t pos = 0; pos < by_id.size(); ++pos) id_order_[by_id[pos]] = pos;
}

Scorer::Scorer(Model& model, const Catalog& catalog)
    : Scorer(model, catalog, model.item_embeddings(catalog)) {}

Tensor Scorer::user_embedding(std::span<const std::size_t> context) const {
  if (context.empty()) fail(ErrorCode::kEmptySample, "cannot encode an empty context");
  Tensor history(context.size(), table_.cols());
  for (std::size_t t = 0; t < context.size(); ++t) {
    const auto src = table_.row_span(context[t]);
    std::copy(src.begin(), src.end(), history.row_span(t).begin());
  }
  return model_.encode(history);
}

std::vector<double> Scorer::scores(const Tensor& user) const {
  const double norm = l2_norm(user.values());
  std::vector<double> out(projected_unit_.rows(), 0.0);
  if (norm == 0.0) return out;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dot(user.values(), projected_unit_.row_span(i)) / norm;
  return out;
}

bool Scorer::before(std::span<const double> scores, std::size_t a, std::size_t b) const {
  if (scores[a] != scores[b]) return scores[a] > scores[b];
  return id_order_[a] < id_order_[b];
}

std::size_t Scorer::rank_of(std::span<const double> scores, std::size_t item) const {
  std::size_t rank = 1;
  for (std::size_t j = 0; j < scores.size(); ++j)
    if (j != item && before(scores, j, item)) ++rank;
  return rank;
}

std::vector<std::size_t> Scorer::top_k(std::span<const double> scores, std::size_t k) const {
  std::vector<std::size_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return before(scores, a, b); });
  idx.resize(k);
  return idx;
}

RankedList Scorer::rank_all(std::span<const std::size_t> context, const std::string& user_id) const {
  const std::vector<double> s = scores(user_embedding(context));
  RankedList out;
  out.user_id = user_id;
  out.items = top_k(s, s.size());
  out.scores.reserve(s.size());
  for (std::size_t i : out.items) out.scores.push_back(s[i]);
  return out;
}

RankedList rank_all(std::span<const std::size_t> context, Model& model, const Catalog& catalog) {
  return Scorer(model, catalog).rank_all(context);
}

void evaluate_leave_one_out(const Scorer& scorer, std::span<const EvalCase> cases,
                            const EvalConfig& config, MetricReport& report) {
  std::vector<std::size_t> ranks;
  ranks.reserve(cases.size());
  for (const EvalCase& c : cases) {
    if (c.targets.size() != 1) fail(ErrorCode::kConfig, "leave-one-out cases carry exactly one target");
    const auto s = scorer.scores(scorer.user_embedding(c.context));
    ranks.push_back(scorer.rank_of(s, c.targets.front()));
  }
  for (std::size_t k : config.hr_ks) report.entries.push_back({"HR", k, mean_hr_at_k(ranks, k), ranks.size()});
  for (std::size_t k : config.hr_ks)
    report.entries.push_back({"NDCG", k, mean_ndcg_at_k(ranks, k), ranks.size()});
  report.users = std::max(report.users, ranks.size());
}

void evaluate_zero_shot(const Scorer& scorer, std::span<const EvalCase> cases,
                        const EvalConfig& config, MetricReport& report) {
  std::size_t max_k = 0;
  for (std::size_t k : config.recall_ks) max_k = std::max(max_k, k);
  std::vector<double> sums(config.recall_ks.size(), 0.0);
  for (const EvalCase& c : cases) {
    const auto s = scorer.scores(scorer.user_embedding(c.context));
    const auto top = scorer.top_k(s, max_k);
    for (std::size_t r = 0; r < config.recall_ks.size(); ++r) {
      const std::size_t k = std::min(config.recall_ks[r], top.size());
      sums[r] += recall_at_k(c.targets, std::span(top).first(k));
    }
  }
  const double n = cases.empty() ? 1.0 : static_cast<double>(cases.size());
  for (std::size_t r = 0; r < config.recall_ks.size(); ++r)
    report.entries.push_back({"R", config.recall_ks[r], sums[r] / n, cases.size()});
}

void evaluate_long_contexts(const Scorer& scorer,
                            std::span<const std::span<const EvalCase>> case_sets,
                            const EvalConfig& config, MetricReport& report) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& cases : case_sets) {
    for (const EvalCase& c : cases) {
      if (c.context.size() < config.long_context) continue;
      const auto s = scorer.scores(scorer.user_embedding(c.context));
      sum += recall_at_k(c.targets, scorer.top_k(s, config.long_recall_k));
      ++n;
    }
  }
  report.entries.push_back({"R_long", config.long_recall_k, n ? sum / static_cast<double>(n) : 0.0, n});
}

CalibrationResult random_calibration(const Catalog& catalog, std::span<const EvalCase> cases,
                                     const ModelConfig& base, std::size_t evaluations,
                                     std::size_t k) {
  if (cases.empty() || evaluations == 0) fail(ErrorCode::kEmptySample, "calibration needs cases");
  Model model(base);
  const Tensor table = model.item_embeddings(catalog);
  std::size_t hits = 0;
  for (std::size_t e = 0; e < evaluations; ++e) {
    std::seed_seq seq{static_cast<std::uint32_t>(base.seed + e), 0xca11u};
    std::mt19937_64 rng(seq);
    model.sal() = SalParams::create(base.dim, rng);
    model.dense() = AttentionHead::create("dense", base.dim, rng);
    const Scorer scorer(model, catalog, table);
    const EvalCase& c = cases[e % cases.size()];
    const auto s = scorer.scores(scorer.user_embedding(c.context));
    if (scorer.rank_of(s, c.targets.front()) <= k) ++hits;
  }
  CalibrationResult out;
  out.evaluations = evaluations;
  out.k = k;
  out.mean_hr = static_cast<double>(hits) / static_cast<double>(evaluations);
  out.expected = std::min(1.0, static_cast<double>(k) / static_cast<double>(catalog.size()));
  out.std_error = std::sqrt(out.expected * (1.0 - out.expected) / static_cast<double>(evaluations));
  return out;
}

void ExperimentConfig::apply_seed(std::uint64_t s) {
  seed = s;
  data.seed = s;
  cf.seed = s;
  model.seed = s;
  train.seed = s;
}

void ExperimentConfig::validate() const {
  data.validate();
  model.validate();
  train.validate();
  if (cf.rank != model.dim) fail(ErrorCode::kConfig, "cf rank must equal the model dimension");
  if (model.dim != data.dim) fail(ErrorCode::kConfig, "model dimension must equal the data dimension");
  if (targets_per_user < 1) fail(ErrorCode::kConfig, "targets_per_user must be >= 1");
  for (std::size_t k : eval.hr_ks)
    if (k < 1) fail(ErrorCode::kConfig, "metric cutoffs must be >= 1");
  for (std::size_t k : eval.recall_ks)
    if (k < 1) fail(ErrorCode::kConfig, "metric cutoffs must be >= 1");
}

PreparedData prepare_data(Dataset data, const ExperimentConfig& config, bool fit_cf) {
  PreparedData out;
  out.splits = protocol_splits(data.users, config.holdout_users, config.targets_per_user, config.seed);
  if (!fit_cf) {
    out.data = std::move(data);
    return out;
  }
  std::vector<std::vector<std::size_t>> sequences;
  sequences.reserve(out.splits.leave_one_out.train.size());
  for (const TrainSequence& s : out.splits.leave_one_out.train) sequences.push_back(s.items);
  CfOracleConfig cf = config.cf;
  cf.rank = data.catalog.dim();
  const bool any_interaction =
      std::any_of(sequences.begin(), sequences.end(), [](const auto& s) { return !s.empty(); });
  if (any_interaction) {
    attach_cf_embeddings(data.catalog, cf_oracle(sequences, data.catalog.size(), cf));
  } else {
    // every user is held out: no collaborative signal, so every item is cold
    spdlog::warn("no training interactions for the CF oracle; all items marked cold-start");
    CfOracleResult cold;
    cold.item_factors = Tensor(data.catalog.size(), cf.rank);
    cold.cold_start.assign(data.catalog.size(), true);
    attach_cf_embeddings(data.catalog, cold);
  }
  out.data = std::move(data);
  return out;
}

PreparedData prepare_synthetic(const ExperimentConfig& config) {
  return prepare_data(generate_synthetic(config.data).data, config);
}

MetricReport evaluate_model(Model& model, const PreparedData& prepared, const EvalConfig& config) {
  MetricReport report;
  report.variant = std::string(variant_name(model.variant()));
  report.seed = model.config().seed;
  const Scorer scorer(model, prepared.data.catalog);
  evaluate_leave_one_out(scorer, prepared.splits.leave_one_out.test, config, report);
  evaluate_zero_shot(scorer, prepared.splits.zero_shot.test, config, report);
  const std::span<const EvalCase> sets[] = {prepared.splits.leave_one_out.test, prepared.splits.zero_shot.test};
  evaluate_long_contexts(scorer, sets, config, report);
  return report;
}

ExperimentResult run_experiment(const PreparedData& prepared, const ExperimentConfig& config) {
  config.validate();
  ModelConfig mc = config.model;
  mc.modalities = prepared.data.catalog.modalities();
  mc.dim = prepared.data.catalog.dim();
  Model model(mc);
  ExperimentResult out;
  out.training = train(model, prepared.data.catalog, prepared.splits.leave_one_out.train, config.train);
  out.report = evaluate_model(model, prepared, config.eval);
  out.report.seed = config.seed;
  out.report.fingerprint = fingerprint(config);
  out.parameter_hash = parameter_hash(model);
  return out;
}

std::vector<ExperimentResult> run_ablation(const PreparedData& prepared,
                                           const ExperimentConfig& config,
                                           std::span<const Variant> variants) {
  std::vector<ExperimentResult> out;
  for (Variant v : variants) {
    ExperimentConfig c = config;
    c.model.variant = v;
    spdlog::info("ablation: training variant {}", variant_name(v));
    out.push_back(run_experiment(prepared, c));
  }
  return out;
}

std::string fingerprint(const ExperimentConfig& config) {
  const std::string text = to_json(config).dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return fmt::format("{}-{:016x}", variant_name(config.model.variant), h);
}

}  // namespace mufasa
