#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <gtest/gtest.h>

#include "mufasa/error.hpp"
#include "mufasa/gradcheck.hpp"
#include "mufasa/sal.hpp"
#include "test_util.hpp"

namespace mufasa {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

SalParams make_params(std::size_t d, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return SalParams::create(d, rng);
}

TEST(WindowSize, LengthProtocol) {
  EXPECT_EQ(window_size_for(161), 8u);
  EXPECT_EQ(window_size_for(31), 8u);
  EXPECT_EQ(window_size_for(30), 4u);
  EXPECT_EQ(window_size_for(7), 4u);
  EXPECT_EQ(window_size_for(2), 2u);
  EXPECT_EQ(window_size_for(1), 1u);
}

TEST(WindowMask, InclusiveCoversLastWPlusOne) {
  const Tensor m = window_mask(10, 4, WindowMode::kIncludeQuery);
  ASSERT_EQ(m.cols(), 10u);
  for (std::size_t pos = 1; pos <= 10; ++pos) {
    if (pos >= 6) EXPECT_EQ(m(0, pos - 1), 0.0) << pos;
    else EXPECT_EQ(m(0, pos - 1), -kInf) << pos;
  }
}

TEST(WindowMask, ExclusiveDropsQueryPosition) {
  const Tensor m = window_mask(10, 4, WindowMode::kExcludeQuery);
  for (std::size_t pos = 1; pos <= 10; ++pos) {
    const bool open = pos >= 6 && pos <= 9;
    EXPECT_EQ(m(0, pos - 1), open ? 0.0 : -kInf) << pos;
  }
}

TEST(Partition, ExamplesAndErrors) {
  using Blocks = std::vector<std::pair<std::size_t, std::size_t>>;
  EXPECT_EQ(partition_blocks(8, 4).blocks, (Blocks{{0, 4}, {4, 8}}));
  EXPECT_EQ(partition_blocks(9, 4).blocks, (Blocks{{0, 4}, {4, 8}, {8, 9}}));
  EXPECT_EQ(partition_blocks(3, 8).blocks, (Blocks{{0, 3}}));
  try {
    partition_blocks(5, 0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kConfig);
  }
}

TEST(Aggregate, MeanAndIdentityLinear) {
  Tape tape;
  Var rows = tape.constant(Tensor::from_rows({{1, 0}, {0, 1}}));
  Var eye = tape.constant(Tensor::identity(2));
  // copies: recording further ops may reallocate the tape's node storage
  const Tensor pooled = aggregate_block(rows, eye, Aggregator::kMeanPool).value();
  const Tensor linear = aggregate_block(rows, eye, Aggregator::kMeanLinear).value();
  EXPECT_EQ(pooled, Tensor::from_rows({{0.5, 0.5}}));
  EXPECT_EQ(linear, pooled);
  Var single = tape.constant(Tensor::from_rows({{0.3, -2}}));
  const Tensor one = aggregate_block(single, eye, Aggregator::kMeanLinear).value();
  EXPECT_EQ(one, single.value());
  EXPECT_THROW(aggregate_block(tape.constant(Tensor(0, 2)), eye, Aggregator::kMeanPool), Error);
}

TEST(BlockAttention, SingleBlockIsItsValueProjection) {
  std::mt19937_64 rng(1);
  SalParams p = make_params(5, 2);
  const Tensor h = test::randn(6, 5, rng);
  Tape tape;
  Var hv = tape.constant(h);
  const auto part = partition_blocks(6, 8);
  HeadOutput out = block_attention(tape, hv, part, p.block, tape.parameter(p.phi), Aggregator::kMeanLinear);
  ASSERT_EQ(out.weights.size(), 1u);
  EXPECT_EQ(out.weights[0], 1.0);
  Tensor mean(1, 5);
  for (std::size_t r = 0; r < 6; ++r)
    for (std::size_t c = 0; c < 5; ++c) mean(0, c) += h(r, c) / 6.0;
  const Tensor expected = matmul(matmul(mean, p.phi.value), p.block.value.value);
  EXPECT_LE(max_abs_diff(out.z.value(), expected), 1e-12);
}

TEST(TopK, ExamplesAndTieBreak) {
  const std::vector<double> w{0.1, 0.5, 0.3, 0.1};
  EXPECT_EQ(top_k_blocks(w, 2), (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(top_k_blocks(w, 4), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(top_k_blocks(std::vector<double>{0.4, 0.4, 0.2}, 1), (std::vector<std::size_t>{0}));
  EXPECT_EQ(top_k_blocks(std::vector<double>{0.2, 0.8}, 5), (std::vector<std::size_t>{0, 1}));
}

TEST(TopK, MatchesBruteForceSort) {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> level(0, 5);
  for (int trial = 0; trial < 500; ++trial) {
    const std::size_t b = 1 + trial % 12;
    std::vector<double> w(b);
    // coarse levels force frequent ties
    for (double& x : w) x = level(rng) / 5.0;
    const std::size_t k = 1 + trial % b;
    std::vector<std::pair<double, std::size_t>> keyed;
    for (std::size_t i = 0; i < b; ++i) keyed.emplace_back(-w[i], i);
    std::sort(keyed.begin(), keyed.end());
    std::vector<std::size_t> expected;
    for (std::size_t i = 0; i < k; ++i) expected.push_back(keyed[i].second);
    std::sort(expected.begin(), expected.end());
    EXPECT_EQ(top_k_blocks(w, k), expected);
  }
}

TEST(TopK, MonotoneInK) {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 50; ++trial) {
    const Tensor w = test::randn(1, 10, rng);
    std::vector<std::size_t> prev;
    for (std::size_t k = 1; k <= 10; ++k) {
      const auto cur = top_k_blocks(w.values(), k);
      EXPECT_TRUE(std::includes(cur.begin(), cur.end(), prev.begin(), prev.end()));
      prev = cur;
    }
  }
}

TEST(CoreItems, RowsFromSelectedBlocks) {
  const auto part = partition_blocks(4, 2);
  EXPECT_EQ(core_item_rows(part, std::vector<std::size_t>{0, 1}), (std::vector<std::size_t>{0, 1, 2, 3}));
  EXPECT_EQ(core_item_rows(part, std::vector<std::size_t>{1}), (std::vector<std::size_t>{2, 3}));

  const auto ragged = partition_blocks(11, 4);
  const std::vector<std::size_t> sel{0, 2};
  const auto rows = core_item_rows(ragged, sel);
  EXPECT_EQ(rows, (std::vector<std::size_t>{0, 1, 2, 3, 8, 9, 10}));
  std::size_t expected = 0;
  for (std::size_t b : sel) expected += ragged.block_length(b);
  EXPECT_EQ(rows.size(), expected);
}

TEST(SelectiveAttention, SingleRowIsItsValueProjection) {
  std::mt19937_64 rng(7);
  SalParams p = make_params(4, 3);
  const Tensor h = test::randn(5, 4, rng);
  Tape tape;
  Var hv = tape.constant(h);
  Var core = slice_rows(hv, 2, 3);
  HeadOutput out = selective_attention(tape, hv, core, p.selective);
  EXPECT_LE(max_abs_diff(out.z.value(), matmul(test::rows_of(h, 2, 3), p.selective.value.value)), 1e-15);
  EXPECT_THROW(selective_attention(tape, hv, tape.constant(Tensor(0, 4)), p.selective), Error);
}

TEST(WindowAttention, UniformScoresAverageValues) {
  std::mt19937_64 rng(8);
  SalParams p = make_params(4, 4);
  p.window.query.value = Tensor(4, 4);
  const Tensor h = test::randn(5, 4, rng);
  for (WindowMode mode : {WindowMode::kExcludeQuery, WindowMode::kIncludeQuery}) {
    Tape tape;
    HeadOutput out = window_attention(tape, tape.constant(h), 8, p.window, mode);
    const std::size_t keys = mode == WindowMode::kIncludeQuery ? 5 : 4;
    Tensor mean(1, 4);
    for (std::size_t r = 0; r < keys; ++r)
      for (std::size_t c = 0; c < 4; ++c) mean(0, c) += h(r, c) / static_cast<double>(keys);
    EXPECT_LE(max_abs_diff(out.z.value(), matmul(mean, p.window.value.value)), 1e-12);
  }
}

TEST(WindowAttention, SingleItemSkipsHead) {
  SalParams p = make_params(3, 1);
  Tape tape;
  EXPECT_FALSE(window_attention(tape, tape.constant(Tensor(1, 3, 1.0)), 4, p.window, WindowMode::kExcludeQuery).z.valid());
}

// Masked window head vs dense attention over the explicit slice.
TEST(WindowAttention, EqualsDenseAttentionOverSlice) {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t d = 2 + seed % 7;
    const std::size_t length = 1 + (seed * 7) % 40;
    const std::size_t window = 1 + seed % 9;
    SalParams p = make_params(d, seed + 1000);
    const Tensor h = test::randn(length, d, rng);
    const Tensor last = test::rows_of(h, length - 1, length);
    for (WindowMode mode : {WindowMode::kExcludeQuery, WindowMode::kIncludeQuery}) {
      const bool inclusive = mode == WindowMode::kIncludeQuery;
      const std::size_t end = inclusive ? length : length - 1;
      const std::size_t span = inclusive ? window + 1 : window;
      const std::size_t begin = end > span ? end - span : 0;
      Tape tape;
      HeadOutput out = window_attention(tape, tape.constant(h), window, p.window, mode);
      if (begin == end) {
        EXPECT_FALSE(out.z.valid());
        continue;
      }
      const auto oracle = test::dense_attention(last, test::rows_of(h, begin, end), p.window.query.value,
                                                p.window.key.value, p.window.value.value);
      EXPECT_LE(max_abs_diff(out.z.value(), oracle.output), 1e-10) << "seed " << seed;
    }
  }
}

TEST(Collapse, UnitBlocksAllSelectedMatchDenseAttention) {
  for (std::uint64_t seed = 0; seed < 30; ++seed) {
    std::mt19937_64 rng(seed);
    const std::size_t d = 3 + seed % 5;
    const std::size_t length = 2 + seed % 17;
    SalParams p = make_params(d, seed + 50);
    p.phi.value = Tensor::identity(d);
    SalConfig cfg;
    cfg.block_size = 1;
    cfg.top_k = length;
    const Tensor h = test::randn(length, d, rng);
    const Tensor last = test::rows_of(h, length - 1, length);
    Tape tape;
    const UserEncoding enc = encode_user(tape, tape.constant(h), p, cfg);
    const auto dense_long = test::dense_attention(last, h, p.block.query.value, p.block.key.value, p.block.value.value);
    const auto dense_core = test::dense_attention(last, h, p.selective.query.value, p.selective.key.value,
                                                  p.selective.value.value);
    EXPECT_LE(max_abs_diff(enc.z_long.value(), dense_long.output), 1e-10);
    EXPECT_LE(max_abs_diff(enc.z_core.value(), dense_core.output), 1e-10);
    for (std::size_t i = 0; i < length; ++i) EXPECT_NEAR(enc.a_block[i], dense_long.weights[i], 1e-12);
  }
}

TEST(Collapse, AllBlocksSelectedMatchesDenseForAnyBlockSize) {
  std::mt19937_64 rng(77);
  for (std::size_t block : {2u, 3u, 8u}) {
    SalParams p = make_params(5, block);
    SalConfig cfg;
    cfg.block_size = block;
    cfg.top_k = 100;
    const Tensor h = test::randn(23, 5, rng);
    Tape tape;
    const UserEncoding enc = encode_user(tape, tape.constant(h), p, cfg);
    const auto dense = test::dense_attention(test::rows_of(h, 22, 23), h, p.selective.query.value,
                                             p.selective.key.value, p.selective.value.value);
    EXPECT_LE(max_abs_diff(enc.z_core.value(), dense.output), 1e-10);
  }
}

TEST(SelectiveAttention, InvariantToCoreRowPermutation) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 50; ++trial) {
    SalParams p = make_params(6, trial);
    const Tensor h = test::randn(12, 6, rng);
    std::vector<std::size_t> rows(7);
    std::iota(rows.begin(), rows.end(), 3);
    Tape tape;
    Var hv = tape.constant(h);
    const Tensor base = selective_attention(tape, hv, gather_rows(hv, rows), p.selective).z.value();
    std::shuffle(rows.begin(), rows.end(), rng);
    const Tensor shuffled = selective_attention(tape, hv, gather_rows(hv, rows), p.selective).z.value();
    EXPECT_LE(max_abs_diff(base, shuffled), 1e-12);
  }
}

TEST(Gate, ZeroParametersAverageHeads) {
  SalParams p = make_params(3, 1);
  p.gate_w.value = Tensor(9, 3);
  p.gate_b.value = Tensor(1, 3);
  Tape tape;
  Var a = tape.constant(Tensor::from_rows({{1, 0, 0}}));
  Var b = tape.constant(Tensor::from_rows({{0, 3, 0}}));
  Var c = tape.constant(Tensor::from_rows({{0, 0, 6}}));
  GateOutput g = gate_fuse(tape, a, b, c, p);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(g.weights[i], 1.0 / 3.0, 1e-15);
  EXPECT_LE(max_abs_diff(g.user.value(), Tensor::from_rows({{1.0 / 3, 1.0, 2.0}})), 1e-15);
}

TEST(Gate, SaturatedLogitsPickShortTerm) {
  SalParams p = make_params(3, 1);
  p.gate_w.value = Tensor(9, 3);
  p.gate_b.value = Tensor::from_rows({{1e4, -1e4, -1e4}});
  Tape tape;
  Var a = tape.constant(Tensor::from_rows({{1, 2, 3}}));
  GateOutput g = gate_fuse(tape, a, tape.constant(Tensor(1, 3, 5.0)), tape.constant(Tensor(1, 3, -5.0)), p);
  EXPECT_EQ(g.user.value(), a.value());
}

TEST(Gate, MissingShortTermRenormalizes) {
  SalParams p = make_params(3, 1);
  p.gate_w.value = Tensor(9, 3);
  p.gate_b.value = Tensor(1, 3);
  Tape tape;
  GateOutput g = gate_fuse(tape, Var{}, tape.constant(Tensor(1, 3, 2.0)), tape.constant(Tensor(1, 3, 4.0)), p);
  EXPECT_EQ(g.weights[0], 0.0);
  EXPECT_NEAR(g.weights[1], 0.5, 1e-15);
  EXPECT_LE(max_abs_diff(g.user.value(), Tensor(1, 3, 3.0)), 1e-15);
}

TEST(Gate, ConvexCombinationOfHeads) {
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 100; ++trial) {
    SalParams p = make_params(4, trial);
    p.gate_b.value = test::randn(1, 3, rng);
    const Tensor zs = test::randn(1, 4, rng), zl = test::randn(1, 4, rng), zc = test::randn(1, 4, rng);
    Tape tape;
    GateOutput g = gate_fuse(tape, tape.constant(zs), tape.constant(zl), tape.constant(zc), p);
    double total = 0.0;
    for (std::size_t i = 0; i < 3; ++i) {
      EXPECT_GE(g.weights[i], 0.0);
      total += g.weights[i];
    }
    EXPECT_NEAR(total, 1.0, 1e-12);
    Tensor mix(1, 4);
    for (std::size_t c = 0; c < 4; ++c) mix(0, c) = g.weights[0] * zs[c] + g.weights[1] * zl[c] + g.weights[2] * zc[c];
    EXPECT_LE(max_abs_diff(g.user.value(), mix), 1e-12);
  }
}

TEST(Score, AlignedAndOrthogonal) {
  SalParams p = make_params(2, 1);
  p.item_proj.value = Tensor::identity(2);
  const std::vector<double> u{0.6, 0.8}, item{3, 4}, ortho{-4, 3};
  EXPECT_NEAR(score(u, item, p), 1.0, 1e-15);
  EXPECT_NEAR(score(u, ortho, p), 0.0, 1e-15);
  EXPECT_THROW(score(std::vector<double>{0, 0}, item, p), Error);
}

TEST(SalContrastive, ClosedForms) {
  const Tensor e = test::basis(2, 4);
  EXPECT_NEAR(evaluate_scalar([&](Tape& t) { return sal_contrastive_loss(t.constant(e), t.constant(e), 1.0); }),
              -std::log(std::exp(1.0) / (std::exp(1.0) + 1.0)), 1e-9);
  const Tensor same(5, 4, 1.0);
  EXPECT_NEAR(evaluate_scalar([&](Tape& t) { return sal_contrastive_loss(t.constant(same), t.constant(same), 0.07); }),
              std::log(5.0), 1e-12);
  Tape tape;
  try {
    sal_contrastive_loss(tape.constant(Tensor(1, 4, 1.0)), tape.constant(Tensor(1, 4, 1.0)), 1.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInsufficientNegatives);
  }
}

TEST(SalContrastive, GradientCoversEverySalParameter) {
  std::mt19937_64 rng(12);
  SalParams p = make_params(6, 21);
  p.gate_b.value = test::randn(1, 3, rng, 0.5);
  SalConfig cfg;
  cfg.block_size = 3;
  std::vector<Tensor> histories;
  for (std::size_t len : {12u, 9u, 5u, 2u}) histories.push_back(test::randn(len, 6, rng));
  const Tensor targets = test::randn(4, 6, rng);
  const auto params = p.parameters();
  const auto report = check_gradients(
      "sal_contrastive",
      [&](Tape& t) {
        std::vector<Var> users;
        for (const Tensor& h : histories) users.push_back(encode_user(t, t.constant(h), p, cfg).user);
        return sal_contrastive_loss(concat_rows(users), project_items(t.constant(targets), p), cfg.tau);
      },
      params);
  EXPECT_TRUE(report.passed) << report.max_rel_error;
  EXPECT_EQ(report.params.size(), params.size());
}

TEST(Cost, DefaultConfigAtL160) {
  const AttentionCost c = attention_cost(160, 8, 8, 2);
  EXPECT_EQ(c.full_cost, 160u);
  EXPECT_EQ(c.sparse_cost, 44u);
  EXPECT_DOUBLE_EQ(static_cast<double>(c.sparse_cost) / c.full_cost, 0.275);
}

TEST(Cost, DegenerateConfigIsThreeDensePasses) {
  for (std::size_t length : {5u, 17u, 40u}) {
    const AttentionCost c = attention_cost(length, 1, length, length);
    EXPECT_EQ(c.sparse_cost, 3 * length);
    EXPECT_EQ(c.full_cost, length);
  }
}

TEST(Cost, InstrumentedCountsMatchFormulaAndBound) {
  std::mt19937_64 rng(13);
  std::uniform_int_distribution<std::size_t> len(2, 400), blk(1, 16), win(1, 16), kk(1, 6);
  for (int trial = 0; trial < 20; ++trial) {
    const std::size_t L = len(rng), P = blk(rng), W = std::min(win(rng), L), k = kk(rng);
    const AttentionCost c = attention_cost(L, P, W, k, 4, trial);
    EXPECT_EQ(c.sparse_cost, sparse_cost_formula(c.window, L, P, c.core_items));
    EXPECT_EQ(c.full_cost, L);
    EXPECT_LE(c.core_items, k * P);
    const double ratio = static_cast<double>(c.sparse_cost) / c.full_cost;
    EXPECT_LE(ratio, (W + static_cast<double>(L) / P + k * P + P) / L + 1e-12);
    if (P >= 2 && W < L && k * P + P < L) { EXPECT_LT(ratio, 1.0); }
  }
}

TEST(Cost, RatioDecreasesWithLength) {
  double prev = 2.0;
  for (std::size_t L : {40u, 80u, 160u, 320u}) {
    const AttentionCost c = attention_cost(L, 8, 8, 2);
    const double ratio = static_cast<double>(c.sparse_cost) / c.full_cost;
    EXPECT_LT(ratio, prev);
    prev = ratio;
  }
}

TEST(EncodeUser, DeterministicAndShortHistories) {
  std::mt19937_64 rng(14);
  const Tensor h = test::randn(37, 5, rng);
  SalConfig cfg;
  auto run = [&] {
    SalParams p = make_params(5, 3);
    Tape tape;
    return encode_user(tape, tape.constant(h), p, cfg).user.value();
  };
  EXPECT_EQ(run(), run());

  SalParams p = make_params(5, 3);
  Tape tape;
  const UserEncoding one = encode_user(tape, tape.constant(test::rows_of(h, 0, 1)), p, cfg);
  EXPECT_FALSE(one.z_short.valid());
  EXPECT_EQ(one.gate_weights[0], 0.0);
  EXPECT_TRUE(one.user.value().all_finite());
}

}  // namespace
}  // namespace mufasa
