#include "mufasa/metrics.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "mufasa/error.hpp"

namespace mufasa {

double hr_at_k(std::size_t rank, std::size_t k) {
  if (rank < 1) fail(ErrorCode::kConfig, "ranks are 1-based");
  return rank <= k ? 1.0 : 0.0;
}

double ndcg_at_k(std::size_t rank, std::size_t k) {
  if (rank < 1) fail(ErrorCode::kConfig, "ranks are 1-based");
  return rank <= k ? 1.0 / std::log2(static_cast<double>(rank) + 1.0) : 0.0;
}

double recall_at_k(std::span<const std::size_t> targets, std::span<const std::size_t> top_k) {
  if (targets.empty()) fail(ErrorCode::kEmptySample, "recall over an empty target set");
  std::size_t hits = 0;
  for (std::size_t t : targets)
    if (std::find(top_k.begin(), top_k.end(), t) != top_k.end()) ++hits;
  return static_cast<double>(hits) / static_cast<double>(targets.size());
}

double mean_hr_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t r : ranks) s += hr_at_k(r, k);
  return s / static_cast<double>(ranks.size());
}

double mean_ndcg_at_k(std::span<const std::size_t> ranks, std::size_t k) {
  if (ranks.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t r : ranks) s += ndcg_at_k(r, k);
  return s / static_cast<double>(ranks.size());
}

std::optional<double> MetricReport::get(const std::string& name, std::size_t k) const {
  for (const auto& e : entries)
    if (e.name == name && e.k == k) return e.value;
  return std::nullopt;
}

std::string MetricReport::to_table() const {
  std::string out = fmt::format("variant {}  seed {}  fingerprint {}\n", variant, seed, fingerprint);
  out += fmt::format("{:<8} {:>5} {:>10} {:>7}\n", "metric", "k", "value", "users");
  for (const auto& e : entries)
    out += fmt::format("{:<8} {:>5} {:>10.6f} {:>7}\n", e.name, e.k, e.value, e.users);
  return out;
}

std::string MetricReport::to_jsonl() const {
  std::string out;
  for (const auto& e : entries) {
    const nlohmann::json j = {{"variant", variant}, {"seed", seed},   {"fingerprint", fingerprint},
                              {"metric", e.name},   {"k", e.k},       {"value", e.value},
                              {"users", e.users}};
    out += j.dump();
    out += '\n';
  }
  return out;
}

}  // namespace mufasa
