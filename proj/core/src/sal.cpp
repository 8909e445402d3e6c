#include "mufasa/sal.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mufasa/error.hpp"

namespace mufasa {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Tensor random_normal(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Var last_row(Var history) { return slice_rows(history, history.rows() - 1, history.rows()); }

void require_history(Var history) {
  if (history.rows() == 0) fail(ErrorCode::kEmptySample, "empty interaction history");
}

}  // namespace

void SalConfig::validate() const {
  if (block_size < 1) fail(ErrorCode::kConfig, "block_size must be >= 1");
  if (top_k < 1) fail(ErrorCode::kConfig, "top_k must be >= 1");
  if (window_size && *window_size < 1) fail(ErrorCode::kConfig, "window_size must be >= 1");
  if (!(tau > 0.0)) fail(ErrorCode::kConfig, "SAL temperature must be > 0");
}

AttentionHead AttentionHead::create(const std::string& prefix, std::size_t dim,
                                    std::mt19937_64& rng) {
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  return AttentionHead{Parameter(prefix + ".query", random_normal(dim, dim, s, rng)),
                       Parameter(prefix + ".key", random_normal(dim, dim, s, rng)),
                       Parameter(prefix + ".value", random_normal(dim, dim, s, rng))};
}

SalParams SalParams::create(std::size_t dim, std::mt19937_64& rng) {
  if (dim == 0) fail(ErrorCode::kConfig, "SAL dimension must be >= 1");
  SalParams p;
  p.dim = dim;
  p.window = AttentionHead::create("sal.window", dim, rng);
  p.block = AttentionHead::create("sal.block", dim, rng);
  p.selective = AttentionHead::create("sal.selective", dim, rng);
  const double s = 1.0 / std::sqrt(static_cast<double>(dim));
  p.phi = Parameter("sal.phi", random_normal(dim, dim, s, rng));
  p.gate_w = Parameter("sal.gate_w", random_normal(3 * dim, 3, s, rng));
  p.gate_b = Parameter("sal.gate_b", Tensor(1, 3));
  p.item_proj = Parameter("sal.item_proj", random_normal(dim, dim, s, rng));
  return p;
}

std::vector<Parameter*> SalParams::parameters() {
  std::vector<Parameter*> out;
  for (AttentionHead* h : {&window, &block, &selective})
    for (Parameter* p : h->parameters()) out.push_back(p);
  for (Parameter* p : {&phi, &gate_w, &gate_b, &item_proj}) out.push_back(p);
  return out;
}

std::size_t window_size_for(std::size_t length) {
  const std::size_t w = length > 30 ? 8 : 4;
  return std::min(w, std::max<std::size_t>(length, 1));
}

Tensor window_mask(std::size_t length, std::size_t window, WindowMode mode) {
  Tensor mask(1, length, kNegInf);
  // 1-based window [L−W, L] (inclusive) or [L−W, L−1] (exclusive).
  const std::size_t last = mode == WindowMode::kIncludeQuery ? length : length - 1;
  const std::size_t first = length > window ? length - window : 1;
  for (std::size_t pos = first; pos <= last; ++pos) mask(0, pos - 1) = 0.0;
  return mask;
}

BlockPartition partition_blocks(std::size_t length, std::size_t block_size) {
  if (block_size < 1) fail(ErrorCode::kConfig, "block size must be >= 1");
  BlockPartition p;
  p.block_size = block_size;
  for (std::size_t begin = 0; begin < length; begin += block_size)
    p.blocks.emplace_back(begin, std::min(begin + block_size, length));
  return p;
}

HeadOutput window_attention(Tape& tape, Var history, std::size_t window, AttentionHead& head,
                            WindowMode mode) {
  require_history(history);
  if (window < 1) fail(ErrorCode::kConfig, "window must be >= 1");
  const std::size_t length = history.rows();
  const std::size_t d = history.cols();
  // Keys are positions [key_begin, key_end) (0-based) of the history.
  const bool inclusive = mode == WindowMode::kIncludeQuery;
  const std::size_t slots = inclusive ? window + 1 : window;
  const std::size_t key_end = inclusive ? length : length - 1;
  const std::size_t key_begin = key_end > slots ? key_end - slots : 0;
  const std::size_t available = key_end - key_begin;
  if (available == 0) return {};

  const std::size_t padding = slots - available;
  Tensor mask(1, slots, 0.0);
  for (std::size_t s = 0; s < padding; ++s) mask(0, s) = kNegInf;
  Var keys = slice_rows(history, key_begin, key_end);
  if (padding > 0) {
    const Var parts[] = {tape.constant(Tensor(padding, d)), keys};
    keys = concat_rows(parts);
  }
  Var query = matmul(last_row(history), tape.parameter(head.query));
  AttentionResult r =
      attend(query, keys, tape.parameter(head.key), tape.parameter(head.value), &mask);
  return {r.output, r.weights.value()};
}

Var aggregate_block(Var rows, Var phi, Aggregator mode) {
  if (rows.rows() == 0) fail(ErrorCode::kEmptyBlock, "cannot aggregate an empty block");
  Var m = mean_rows(rows);
  return mode == Aggregator::kMeanLinear ? matmul(m, phi) : m;
}

Var aggregate_blocks(Var history, const BlockPartition& partition, Var phi, Aggregator mode) {
  if (partition.count() == 0) fail(ErrorCode::kEmptyBlock, "partition has no blocks");
  Var means = segment_mean(history, partition.blocks);
  return mode == Aggregator::kMeanLinear ? matmul(means, phi) : means;
}

HeadOutput block_attention(Tape& tape, Var history, const BlockPartition& partition,
                           AttentionHead& head, Var phi, Aggregator mode) {
  require_history(history);
  Var blocks = aggregate_blocks(history, partition, phi, mode);
  Var query = matmul(last_row(history), tape.parameter(head.query));
  AttentionResult r = attend(query, blocks, tape.parameter(head.key), tape.parameter(head.value));
  return {r.output, r.weights.value()};
}

std::vector<std::size_t> top_k_blocks(std::span<const double> weights, std::size_t k) {
  if (weights.empty()) fail(ErrorCode::kEmptySelection, "no blocks to select from");
  if (k < 1) fail(ErrorCode::kConfig, "top-k needs k >= 1");
  if (k > weights.size()) {
    static std::atomic<bool> warned{false};
    if (!warned.exchange(true)) {
      spdlog::warn("top-k of {} requested over {} blocks; clamping (reported once)", k,
                   weights.size());
    }
    k = weights.size();
  }
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return weights[a] > weights[b]; });
  order.resize(k);
  std::sort(order.begin(), order.end());
  return order;
}

std::vector<std::size_t> core_item_rows(const BlockPartition& partition,
                                        std::span<const std::size_t> selected) {
  std::vector<std::size_t> sorted(selected.begin(), selected.end());
  std::sort(sorted.begin(), sorted.end());
  std::vector<std::size_t> rows;
  for (std::size_t b : sorted) {
    if (b >= partition.count()) {
      fail(ErrorCode::kEmptySelection,
           fmt::format("selected block {} out of range ({} blocks)", b, partition.count()));
    }
    for (std::size_t r = partition.blocks[b].first; r < partition.blocks[b].second; ++r)
      rows.push_back(r);
  }
  return rows;
}

Var gather_core_items(Var history, const BlockPartition& partition,
                      std::span<const std::size_t> selected) {
  const auto rows = core_item_rows(partition, selected);
  if (rows.empty()) fail(ErrorCode::kEmptySelection, "no core items selected");
  return gather_rows(history, rows);
}

HeadOutput selective_attention(Tape& tape, Var history, Var core_items, AttentionHead& head) {
  require_history(history);
  if (core_items.rows() == 0) fail(ErrorCode::kEmptySelection, "selective attention over no items");
  Var query = matmul(last_row(history), tape.parameter(head.query));
  AttentionResult r =
      attend(query, core_items, tape.parameter(head.key), tape.parameter(head.value));
  return {r.output, r.weights.value()};
}

GateOutput gate_fuse(Tape& tape, Var z_short, Var z_long, Var z_core, SalParams& params) {
  const bool has_short = z_short.valid();
  Var zs = has_short ? z_short : tape.constant(Tensor(1, z_long.cols()));
  const Var parts[] = {zs, z_long, z_core};
  Var logits = add(matmul(concat_cols(parts), tape.parameter(params.gate_w)),
                   tape.parameter(params.gate_b));
  Tensor mask(1, 3, 0.0);
  if (!has_short) mask(0, 0) = kNegInf;
  Var weights = masked_softmax(logits, mask);
  Var user = matmul(weights, concat_rows(parts));
  return {user, weights.value()};
}

UserEncoding encode_user(Tape& tape, Var history, SalParams& params, const SalConfig& config) {
  require_history(history);
  if (history.cols() != params.dim) {
    fail(ErrorCode::kDimension,
         fmt::format("history width {} != model dimension {}", history.cols(), params.dim));
  }
  const std::size_t length = history.rows();
  UserEncoding enc;
  enc.window = std::min(config.window_size.value_or(window_size_for(length)), length);
  enc.partition = partition_blocks(length, config.block_size);

  enc.z_short = window_attention(tape, history, enc.window, params.window, config.window_mode).z;
  Var phi = tape.parameter(params.phi);
  HeadOutput block = block_attention(tape, history, enc.partition, params.block, phi, config.aggregator);
  enc.z_long = block.z;
  enc.a_block = block.weights;
  enc.selected = top_k_blocks(enc.a_block.values(), config.top_k);
  Var core = gather_core_items(history, enc.partition, enc.selected);
  enc.core_items = core.rows();
  enc.z_core = selective_attention(tape, history, core, params.selective).z;

  GateOutput gate = gate_fuse(tape, enc.z_short, enc.z_long, enc.z_core, params);
  enc.user = gate.user;
  enc.gate_weights = gate.weights;
  return enc;
}

Var project_items(Var items, SalParams& params) {
  return matmul(items, items.tape().parameter(params.item_proj));
}

Tensor project_items(const Tensor& items, SalParams& params) {
  return matmul(items, params.item_proj.value);
}

double score(std::span<const double> user, std::span<const double> item, SalParams& params) {
  if (item.size() != params.dim || user.size() != params.dim) {
    fail(ErrorCode::kDimension, fmt::format("score dimensions {} / {} vs model {}", user.size(),
                                            item.size(), params.dim));
  }
  const Tensor projected = matmul(Tensor::row(item), params.item_proj.value);
  return cosine_sim(user, projected.values());
}

Var sal_contrastive_loss(Var users, Var targets, double tau) {
  const std::size_t n = users.rows();
  if (n < 2) fail(ErrorCode::kInsufficientNegatives, "user-item contrast needs a batch of >= 2");
  if (!users.value().same_shape(targets.value())) {
    fail(ErrorCode::kDimension, fmt::format("user/target shapes {} vs {}",
                                            users.value().shape_string(),
                                            targets.value().shape_string()));
  }
  Var sims = matmul(normalize_rows(users), transpose(normalize_rows(targets)));
  std::vector<std::size_t> diag(n);
  std::iota(diag.begin(), diag.end(), 0);
  return cross_entropy_rows(scale(sims, 1.0 / tau), diag);
}

std::size_t sparse_cost_formula(std::size_t window, std::size_t length, std::size_t block_size,
                                std::size_t core_items) {
  return window + (length + block_size - 1) / block_size + core_items;
}

AttentionCost attention_cost(std::size_t length, std::size_t block_size, std::size_t window,
                             std::size_t top_k, std::size_t dim, std::uint64_t seed) {
  if (length < 1) fail(ErrorCode::kConfig, "attention_cost needs L >= 1");
  std::mt19937_64 rng(seed);
  SalParams params = SalParams::create(dim, rng);
  const Tensor history = random_normal(length, dim, 1.0, rng);
  SalConfig config;
  config.block_size = block_size;
  config.top_k = top_k;
  config.window_size = window;

  AttentionCost cost;
  {
    Tape tape;
    UserEncoding enc = encode_user(tape, tape.constant(history), params, config);
    cost.sparse_cost = tape.counters().score_pairs;
    cost.window = enc.window;
    cost.blocks = enc.partition.count();
    cost.core_items = enc.core_items;
  }
  {
    Tape tape;
    Var h = tape.constant(history);
    Var q = matmul(last_row(h), tape.parameter(params.selective.query));
    attend(q, h, tape.parameter(params.selective.key), tape.parameter(params.selective.value));
    cost.full_cost = tape.counters().score_pairs;
  }
  return cost;
}

}  // namespace mufasa
