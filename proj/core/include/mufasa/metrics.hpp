#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mufasa {

// Ranks are 1-based.
double hr_at_k(std::size_t rank, std::size_t k);
// Single-target form: 1 / log2(rank + 1) inside the cutoff.
double ndcg_at_k(std::size_t rank, std::size_t k);
// Fraction of targets present in the top-k list.
double recall_at_k(std::span<const std::size_t> targets, std::span<const std::size_t> top_k);

double mean_hr_at_k(std::span<const std::size_t> ranks, std::size_t k);
double mean_ndcg_at_k(std::span<const std::size_t> ranks, std::size_t k);

struct MetricEntry {
  std::string name;  // "HR", "NDCG", "R", "R_long"
  std::size_t k = 0;
  double value = 0.0;
  std::size_t users = 0;
};

struct MetricReport {
  std::string variant;
  std::string fingerprint;
  std::uint64_t seed = 0;
  std::size_t users = 0;
  std::vector<MetricEntry> entries;

  std::optional<double> get(const std::string& name, std::size_t k) const;
  // Aligned text table, one row per metric.
  std::string to_table() const;
  // One JSON record per metric.
  std::string to_jsonl() const;
};

}  // namespace mufasa
