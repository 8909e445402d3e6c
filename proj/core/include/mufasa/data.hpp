#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "mufasa/tensor.hpp"

namespace mufasa {

struct ItemRecord {
  std::string item_id;
  Tensor modalities;              // M×d, fixed modality order
  std::vector<double> title_emb;  // d, or empty when the title is missing
  std::vector<double> cf_emb;     // d; zero for cold-start items
  std::size_t title_token_count = 0;
  std::optional<int> genre_label;
  std::optional<int> subcluster;
  bool cold_start = false;
};

/// Item table with a fixed (M, d) layout and unique ids.
class Catalog {
 public:
  Catalog() = default;
  Catalog(std::size_t modalities, std::size_t dim) : modalities_(modalities), dim_(dim) {}

  // Validates shape, finiteness and id uniqueness; returns the item's index.
  std::size_t add(ItemRecord item);

  std::optional<std::size_t> find(const std::string& item_id) const;
  const ItemRecord& operator[](std::size_t i) const { return items_[i]; }
  ItemRecord& operator[](std::size_t i) { return items_[i]; }
  std::span<const ItemRecord> items() const { return items_; }
  std::size_t size() const { return items_.size(); }
  bool empty() const { return items_.empty(); }
  std::size_t modalities() const { return modalities_; }
  std::size_t dim() const { return dim_; }

  friend bool operator==(const Catalog& a, const Catalog& b);

 private:
  std::size_t modalities_ = 0;
  std::size_t dim_ = 0;
  std::vector<ItemRecord> items_;
  std::unordered_map<std::string, std::size_t> index_;
};

bool operator==(const ItemRecord& a, const ItemRecord& b);

struct UserRecord {
  std::string user_id;
  std::vector<std::size_t> items;       // catalog indices, chronological
  std::vector<std::int64_t> timestamps;  // non-decreasing

  friend bool operator==(const UserRecord&, const UserRecord&) = default;
};

struct Dataset {
  Catalog catalog;
  std::vector<UserRecord> users;
};

// ---- synthetic planted-interest corpus ----------------------------------

struct SyntheticConfig {
  std::size_t genres = 8;
  std::size_t dim = 32;
  std::size_t subclusters_per_genre = 4;
  std::size_t items_per_subcluster = 25;
  std::size_t users = 2000;
  std::size_t min_length = 40;
  std::size_t max_length = 200;
  std::size_t run_min = 4;
  std::size_t run_max = 16;
  double modality_noise_std = 0.1;
  // Per-modality multiplier of modality_noise_std (title-text, category, visual, audio).
  std::array<double, 4> modality_noise_scale{1.0, 2.0, 6.0, 6.0};
  double subcluster_std = 0.1;
  double title_noise_std = 0.1;
  // Probability that a run interaction is replaced by a uniformly random item.
  double misclick_prob = 0.15;
  double degraded_title_fraction = 0.05;
  // Trailing interactions always drawn from the last run.
  std::size_t tail_length = 3;
  std::uint64_t seed = 1;

  void validate() const;
};

struct SyntheticCorpus {
  Dataset data;
  Tensor prototypes;  // G×d orthonormal genre prototypes
};

/// Catalog of G genres × S sub-clusters around orthonormal prototypes, and
/// users whose sequences are runs of same-sub-cluster interactions. Pure
/// function of the config. cf_emb is left zero; see cf_oracle.
SyntheticCorpus generate_synthetic(const SyntheticConfig& config);

// ---- collaborative-filtering oracle --------------------------------------

struct CfOracleConfig {
  std::size_t rank = 32;
  std::size_t epochs = 10;
  double lr = 0.05;
  double reg = 1e-4;
  std::size_t negatives = 4;
  std::uint64_t seed = 1;
};

struct CfOracleResult {
  Tensor item_factors;  // items×rank, zero rows for cold items
  Tensor user_factors;  // sequences×rank
  std::vector<bool> cold_start;
};

/// Logistic implicit-feedback MF by SGD over observed (user, item) pairs,
/// each with `negatives` uniformly drawn unobserved items.
CfOracleResult cf_oracle(std::span<const std::vector<std::size_t>> sequences,
                         std::size_t num_items, const CfOracleConfig& config);

// Writes item factors into cf_emb and flags cold-start items.
void attach_cf_embeddings(Catalog& catalog, const CfOracleResult& result);

// ---- files ----------------------------------------------------------------

Catalog load_catalog(const std::filesystem::path& path);
std::vector<UserRecord> load_interactions(const std::filesystem::path& path, const Catalog& catalog);
void write_catalog(const std::filesystem::path& path, const Catalog& catalog);
void write_interactions(const std::filesystem::path& path, std::span<const UserRecord> users,
                        const Catalog& catalog);

struct CorpusStats {
  std::size_t users = 0;
  std::size_t items = 0;
  std::size_t interactions = 0;
  double average_length = 0.0;
  double sparsity = 0.0;  // 1 - interactions / (users·items)
};

CorpusStats corpus_stats(const Dataset& data);

// ---- splits ----------------------------------------------------------------

enum class SplitMode { kLeaveOneOut, kZeroShot };

struct SplitSpec {
  SplitMode mode = SplitMode::kLeaveOneOut;
  std::size_t holdout_users = 200;
  std::size_t targets_per_user = 3;
  std::uint64_t seed = 1;
};

struct TrainSequence {
  std::size_t user = 0;  // index into the user list
  std::vector<std::size_t> items;
};

struct EvalCase {
  std::size_t user = 0;
  std::vector<std::size_t> context;
  std::vector<std::size_t> targets;
};

struct Split {
  std::vector<TrainSequence> train;
  std::vector<EvalCase> test;
  std::size_t skipped = 0;  // users too short for the requested mode
};

/// leave-one-out: every user trains on its prefix and is tested on its last
/// item. zero-shot: holdout_users seeded users are removed from training and
/// tested on their last targets_per_user items given the preceding prefix.
Split split(std::span<const UserRecord> users, const SplitSpec& spec);

/// Zero-shot holdout plus leave-one-out over the remaining users: the train
/// view is the remaining users' prefixes.
struct ProtocolSplits {
  Split leave_one_out;
  Split zero_shot;
};
ProtocolSplits protocol_splits(std::span<const UserRecord> users, std::size_t holdout_users,
                               std::size_t targets_per_user, std::uint64_t seed);

}  // namespace mufasa
