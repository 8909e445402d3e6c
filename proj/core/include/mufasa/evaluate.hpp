#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mufasa/data.hpp"
#include "mufasa/metrics.hpp"
#include "mufasa/model.hpp"
#include "mufasa/trainer.hpp"

namespace mufasa {

struct RankedList {
  std::string user_id;
  std::vector<std::size_t> items;  // catalog indices, best first
  std::vector<double> scores;      // non-increasing
};

/// Full-catalog scorer: cosine between a user embedding and every projected
/// item embedding. Equal scores are broken by ascending item_id.
class Scorer {
 public:
  // item_table is the N×d item embedding table the model encodes histories from.
  Scorer(Model& model, const Catalog& catalog, Tensor item_table);
  Scorer(Model& model, const Catalog& catalog);

  Tensor user_embedding(std::span<const std::size_t> context) const;
  std::vector<double> scores(const Tensor& user) const;

  RankedList rank_all(std::span<const std::size_t> context, const std::string& user_id = {}) const;
  // 1-based rank of `item` under the documented ordering, without a full sort.
  std::size_t rank_of(std::span<const double> scores, std::size_t item) const;
  std::vector<std::size_t> top_k(std::span<const double> scores, std::size_t k) const;

  const Tensor& item_table() const { return table_; }

 private:
  bool before(std::span<const double> scores, std::size_t a, std::size_t b) const;

  Model& model_;
  const Catalog& catalog_;
  Tensor table_;
  Tensor projected_unit_;             // rows scaled to unit norm (zero rows stay zero)
  std::vector<std::size_t> id_order_;  // position of each item in item_id order
};

RankedList rank_all(std::span<const std::size_t> context, Model& model, const Catalog& catalog);

struct EvalConfig {
  std::vector<std::size_t> hr_ks{5, 10, 20};
  std::vector<std::size_t> recall_ks{20, 100};
  // Contexts at least this long, from either protocol, feed "R_long".
  std::size_t long_context = 150;
  std::size_t long_recall_k = 20;
};

// HR@k and NDCG@k over single-target cases.
void evaluate_leave_one_out(const Scorer& scorer, std::span<const EvalCase> cases,
                            const EvalConfig& config, MetricReport& report);
// R@k over multi-target cases.
void evaluate_zero_shot(const Scorer& scorer, std::span<const EvalCase> cases,
                        const EvalConfig& config, MetricReport& report);
// R_long@k: recall averaged over every case whose context reaches long_context.
void evaluate_long_contexts(const Scorer& scorer,
                            std::span<const std::span<const EvalCase>> case_sets,
                            const EvalConfig& config, MetricReport& report);

struct CalibrationResult {
  std::size_t evaluations = 0;
  std::size_t k = 0;
  double mean_hr = 0.0;
  double expected = 0.0;    // k / |catalog|
  double std_error = 0.0;   // sqrt(p(1-p)/n) at p = expected
  double z_score() const { return std_error > 0.0 ? (mean_hr - expected) / std_error : 0.0; }
};

/// HR@k of untrained models: evaluation e draws fresh SAL parameters from
/// seed + e and scores case e mod |cases| over the full catalog.
CalibrationResult random_calibration(const Catalog& catalog, std::span<const EvalCase> cases,
                                     const ModelConfig& base, std::size_t evaluations,
                                     std::size_t k);

// ---- experiment pipeline ---------------------------------------------------

struct ExperimentConfig {
  SyntheticConfig data;
  CfOracleConfig cf;
  ModelConfig model;
  TrainConfig train;
  EvalConfig eval;
  std::size_t holdout_users = 200;
  std::size_t targets_per_user = 3;
  std::uint64_t seed = 1;

  // Propagates `seed` into every component seed.
  void apply_seed(std::uint64_t s);
  void validate() const;
};

/// Dataset with CF embeddings from the oracle trained on the leave-one-out
/// training view only (no holdout users, no test targets).
struct PreparedData {
  Dataset data;
  ProtocolSplits splits;
};

// fit_cf = false keeps the catalog's own cf_emb and cold-start flags.
PreparedData prepare_data(Dataset data, const ExperimentConfig& config, bool fit_cf = true);
PreparedData prepare_synthetic(const ExperimentConfig& config);

struct ExperimentResult {
  MetricReport report;
  TrainResult training;
  std::uint64_t parameter_hash = 0;
};

MetricReport evaluate_model(Model& model, const PreparedData& prepared, const EvalConfig& config);

// Trains a fresh model of config.model.variant and evaluates both protocols.
ExperimentResult run_experiment(const PreparedData& prepared, const ExperimentConfig& config);

// Same data and seeds for every variant.
std::vector<ExperimentResult> run_ablation(const PreparedData& prepared,
                                           const ExperimentConfig& config,
                                           std::span<const Variant> variants);

// "<variant>-<16 hex digits of the config hash>".
std::string fingerprint(const ExperimentConfig& config);

}  // namespace mufasa
