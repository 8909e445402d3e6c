#include <algorithm>
#include <cmath>
#include <random>
#include <unordered_set>

#include "mufasa/data.hpp"
#include "mufasa/error.hpp"

namespace mufasa {

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

// One logistic SGD update on (p_u, q_i) toward `label`.
void update(std::span<double> p, std::span<double> q, double label, double lr, double reg) {
  const double err = label - sigmoid(dot(p, q));
  for (std::size_t f = 0; f < p.size(); ++f) {
    const double pf = p[f];
    const double qf = q[f];
    p[f] += lr * (err * qf - reg * pf);
    q[f] += lr * (err * pf - reg * qf);
  }
}

}  // namespace

CfOracleResult cf_oracle(std::span<const std::vector<std::size_t>> sequences,
                         std::size_t num_items, const CfOracleConfig& config) {
  if (config.rank < 1 || num_items == 0) fail(ErrorCode::kConfig, "cf_oracle needs rank >= 1 and items");
  std::mt19937_64 rng(config.seed);
  std::normal_distribution<double> init(0.0, 0.1);

  CfOracleResult out;
  out.user_factors = Tensor(sequences.size(), config.rank);
  out.item_factors = Tensor(num_items, config.rank);
  for (double& v : out.user_factors.values()) v = init(rng);
  for (double& v : out.item_factors.values()) v = init(rng);

  std::vector<std::pair<std::size_t, std::size_t>> observed;
  std::vector<std::unordered_set<std::size_t>> seen(sequences.size());
  std::vector<bool> has_interaction(num_items, false);
  for (std::size_t u = 0; u < sequences.size(); ++u) {
    for (std::size_t i : sequences[u]) {
      if (i >= num_items) fail(ErrorCode::kDimension, "cf_oracle: item index out of range");
      observed.emplace_back(u, i);
      seen[u].insert(i);
      has_interaction[i] = true;
    }
  }
  if (observed.empty()) fail(ErrorCode::kEmptySample, "cf_oracle: no interactions");

  std::uniform_int_distribution<std::size_t> any_item(0, num_items - 1);
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(observed.begin(), observed.end(), rng);
    for (auto [u, i] : observed) {
      auto p = out.user_factors.row_span(u);
      update(p, out.item_factors.row_span(i), 1.0, config.lr, config.reg);
      for (std::size_t n = 0; n < config.negatives; ++n) {
        std::size_t j = any_item(rng);
        // bounded rejection of observed items; users covering the catalog keep the last draw
        for (int tries = 0; tries < 8 && seen[u].count(j); ++tries) j = any_item(rng);
        if (seen[u].count(j)) continue;
        update(p, out.item_factors.row_span(j), 0.0, config.lr, config.reg);
      }
    }
  }

  out.cold_start.assign(num_items, false);
  for (std::size_t i = 0; i < num_items; ++i) {
    if (has_interaction[i]) continue;
    out.cold_start[i] = true;
    for (double& v : out.item_factors.row_span(i)) v = 0.0;
  }
  return out;
}

void attach_cf_embeddings(Catalog& catalog, const CfOracleResult& result) {
  if (result.item_factors.rows() != catalog.size() || result.item_factors.cols() != catalog.dim()) {
    fail(ErrorCode::kDimension, "cf factors do not match the catalog layout");
  }
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    const auto row = result.item_factors.row_span(i);
    catalog[i].cf_emb.assign(row.begin(), row.end());
    catalog[i].cold_start = result.cold_start[i];
  }
}

}  // namespace mufasa
