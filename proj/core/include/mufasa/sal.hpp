#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mufasa/autodiff.hpp"

namespace mufasa {

enum class Aggregator { kMeanLinear, kMeanPool };
// Whether the query item h_L is one of the window keys.
enum class WindowMode { kExcludeQuery, kIncludeQuery };

struct SalConfig {
  std::size_t block_size = 8;
  std::size_t top_k = 2;
  Aggregator aggregator = Aggregator::kMeanLinear;
  WindowMode window_mode = WindowMode::kExcludeQuery;
  // Replaces the length-based window protocol when set.
  std::optional<std::size_t> window_size;
  double tau = 0.07;

  void validate() const;
};

/// Query/key/value projections of one single-query attention head, each d×d.
struct AttentionHead {
  Parameter query;
  Parameter key;
  Parameter value;

  static AttentionHead create(const std::string& prefix, std::size_t dim, std::mt19937_64& rng);
  std::vector<Parameter*> parameters() { return {&query, &key, &value}; }
};

struct SalParams {
  std::size_t dim = 0;
  AttentionHead window;
  AttentionHead block;
  AttentionHead selective;
  Parameter phi;        // d×d block aggregator map
  Parameter gate_w;     // 3d×3
  Parameter gate_b;     // 1×3
  Parameter item_proj;  // d×d item scoring projection

  static SalParams create(std::size_t dim, std::mt19937_64& rng);
  std::vector<Parameter*> parameters();
};

/// W = 8 when L > 30, else 4; clamped to L.
std::size_t window_size_for(std::size_t length);

/// Full-sequence additive window mask over positions 1..L (1×L): 0 inside
/// the window, -inf outside. Inclusive mode covers [L−W, L]; exclusive mode
/// covers [L−W, L−1].
Tensor window_mask(std::size_t length, std::size_t window, WindowMode mode);

struct BlockPartition {
  std::size_t block_size = 0;
  std::vector<std::pair<std::size_t, std::size_t>> blocks;  // 0-based [begin, end)

  std::size_t count() const { return blocks.size(); }
  std::size_t block_length(std::size_t b) const { return blocks[b].second - blocks[b].first; }
};

/// ⌈L/P⌉ consecutive blocks of P rows; the ragged last block is kept.
BlockPartition partition_blocks(std::size_t length, std::size_t block_size);

struct HeadOutput {
  Var z;           // 1×d; invalid when the head was skipped
  Tensor weights;  // attention weights over the head's keys
};

// Short-term head: attends from h_L over the most recent W positions
// through a W-slot (W+1 inclusive) buffer, padding slots masked out.
HeadOutput window_attention(Tape& tape, Var history, std::size_t window, AttentionHead& head,
                            WindowMode mode);

// φ over each block: mean of its rows, then the linear map in kMeanLinear mode.
Var aggregate_blocks(Var history, const BlockPartition& partition, Var phi, Aggregator mode);
Var aggregate_block(Var rows, Var phi, Aggregator mode);

// Long-term head over block embeddings; weights are a_block.
HeadOutput block_attention(Tape& tape, Var history, const BlockPartition& partition,
                           AttentionHead& head, Var phi, Aggregator mode);

/// Indices (0-based, ascending) of the k largest weights; ties go to the
/// lower index. k > B is clamped to B with a warning.
std::vector<std::size_t> top_k_blocks(std::span<const double> weights, std::size_t k);

// Row indices of the selected blocks in ascending block then chronological order.
std::vector<std::size_t> core_item_rows(const BlockPartition& partition,
                                        std::span<const std::size_t> selected);
Var gather_core_items(Var history, const BlockPartition& partition,
                      std::span<const std::size_t> selected);

// Core head: h_L attends over the gathered core items.
HeadOutput selective_attention(Tape& tape, Var history, Var core_items, AttentionHead& head);

struct GateOutput {
  Var user;        // 1×d
  Tensor weights;  // 1×3 over (short, long, core)
};

/// Softmax gate over [z_short; z_long; z_core]. An invalid z_short is
/// treated as absent and the gate renormalizes over the other two heads.
GateOutput gate_fuse(Tape& tape, Var z_short, Var z_long, Var z_core, SalParams& params);

struct UserEncoding {
  Var user;
  Var z_short;
  Var z_long;
  Var z_core;
  Tensor a_block;
  std::vector<std::size_t> selected;
  Tensor gate_weights;
  BlockPartition partition;
  std::size_t window = 0;
  std::size_t core_items = 0;
};

/// Full three-head user encoder over an L×d history whose last row is h_L.
UserEncoding encode_user(Tape& tape, Var history, SalParams& params, const SalConfig& config);

Var project_items(Var items, SalParams& params);
Tensor project_items(const Tensor& items, SalParams& params);

// Cosine between the user embedding and the projected item embedding.
double score(std::span<const double> user, std::span<const double> item, SalParams& params);

/// In-batch InfoNCE between users and their targets' projected embeddings:
/// row i's positive is target i, the other rows' targets are negatives.
Var sal_contrastive_loss(Var users, Var targets, double tau);

struct AttentionCost {
  std::size_t full_cost = 0;    // score pairs of dense single-query attention over L
  std::size_t sparse_cost = 0;  // instrumented score pairs of the three heads
  std::size_t window = 0;
  std::size_t blocks = 0;
  std::size_t core_items = 0;   // N_s from the selected blocks
};

// W + ⌈L/P⌉ + N_s.
std::size_t sparse_cost_formula(std::size_t window, std::size_t length, std::size_t block_size,
                                std::size_t core_items);

/// Counts score pairs during real forward passes on random inputs.
AttentionCost attention_cost(std::size_t length, std::size_t block_size, std::size_t window,
                             std::size_t top_k, std::size_t dim = 8, std::uint64_t seed = 7);

}  // namespace mufasa
