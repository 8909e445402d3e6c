#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "mufasa/error.hpp"
#include "mufasa/evaluate.hpp"
#include "mufasa/metrics.hpp"
#include "test_util.hpp"

namespace mufasa {
namespace {

TEST(Metrics, HitRate) {
  EXPECT_EQ(hr_at_k(1, 10), 1.0);
  EXPECT_EQ(hr_at_k(10, 10), 1.0);
  EXPECT_EQ(hr_at_k(11, 10), 0.0);
  const std::vector<std::size_t> ranks{1, 5, 30};
  EXPECT_NEAR(mean_hr_at_k(ranks, 10), 2.0 / 3.0, 1e-15);
}

TEST(Metrics, Ndcg) {
  EXPECT_EQ(ndcg_at_k(1, 10), 1.0);
  EXPECT_DOUBLE_EQ(ndcg_at_k(3, 10), 0.5);
  EXPECT_EQ(ndcg_at_k(11, 10), 0.0);
  const std::vector<std::size_t> ones(7, 1);
  EXPECT_EQ(mean_ndcg_at_k(ones, 5), mean_hr_at_k(ones, 5));
}

TEST(Metrics, Recall) {
  const std::vector<std::size_t> targets{3, 8, 1};
  EXPECT_EQ(recall_at_k(targets, std::vector<std::size_t>{1, 3, 8, 4}), 1.0);
  EXPECT_NEAR(recall_at_k(targets, std::vector<std::size_t>{9, 8, 4}), 1.0 / 3.0, 1e-15);
  EXPECT_EQ(recall_at_k(targets, std::vector<std::size_t>{}), 0.0);
}

TEST(Metrics, BoundedAndMonotoneInK) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<std::size_t> rank(1, 100);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::size_t> ranks(20);
    for (auto& r : ranks) r = rank(rng);
    double prev_hr = 0, prev_ndcg = 0;
    for (std::size_t k = 1; k <= 100; ++k) {
      const double hr = mean_hr_at_k(ranks, k), nd = mean_ndcg_at_k(ranks, k);
      EXPECT_GE(hr, prev_hr);
      EXPECT_GE(nd, prev_ndcg);
      EXPECT_LE(hr, 1.0);
      EXPECT_LE(nd, hr);
      prev_hr = hr;
      prev_ndcg = nd;
    }
    std::vector<std::size_t> order(100);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::vector<std::size_t> targets{order[3], order[40], order[77]};
    std::shuffle(order.begin(), order.end(), rng);
    double prev = 0;
    for (std::size_t k = 0; k <= 100; ++k) {
      const double r = recall_at_k(targets, std::span(order).first(k));
      EXPECT_GE(r, prev);
      prev = r;
    }
    EXPECT_EQ(prev, 1.0);
  }
}

// A scorer that ranks uniformly at random recalls k/C of the targets on average.
TEST(Metrics, RandomRankingRecallMatchesExpectation) {
  const std::size_t catalog = 200, k = 20, trials = 20000;
  std::mt19937_64 rng(2);
  std::vector<std::size_t> order(catalog);
  std::iota(order.begin(), order.end(), 0);
  double total = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    std::shuffle(order.begin(), order.end(), rng);
    const std::vector<std::size_t> targets{order[0], order[1], order[2]};
    std::shuffle(order.begin(), order.end(), rng);
    total += recall_at_k(targets, std::span(order).first(k));
  }
  const double p = static_cast<double>(k) / catalog;
  // per-trial recall is a mean of 3 hypergeometric indicators; p(1-p)/3 bounds its variance
  const double se = std::sqrt(p * (1 - p) / 3.0 / trials);
  EXPECT_LE(std::abs(total / trials - p), 3 * se);
}

TEST(MetricReport, LookupTableAndJsonl) {
  MetricReport r;
  r.variant = "full";
  r.fingerprint = "full-0123";
  r.seed = 4;
  r.entries = {{"HR", 10, 0.25, 40}, {"R", 20, 0.5, 8}};
  EXPECT_EQ(r.get("HR", 10), 0.25);
  EXPECT_FALSE(r.get("HR", 5));
  EXPECT_NE(r.to_table().find("HR "), std::string::npos);
  EXPECT_NE(r.to_table().find("0.250000"), std::string::npos);
  const std::string jsonl = r.to_jsonl();
  EXPECT_EQ(std::count(jsonl.begin(), jsonl.end(), '\n'), 2);
  EXPECT_NE(jsonl.find("full-0123"), std::string::npos);
}

Catalog random_catalog(std::size_t n, std::size_t dim, std::mt19937_64& rng, std::vector<std::string> ids = {}) {
  Catalog cat(4, dim);
  for (std::size_t i = 0; i < n; ++i) {
    ItemRecord item;
    item.item_id = ids.empty() ? "item" + std::to_string(i) : ids[i];
    item.modalities = test::randn(4, dim, rng);
    item.title_emb.assign(dim, 1.0);
    item.cf_emb.assign(dim, 0.0);
    item.title_token_count = 5;
    cat.add(std::move(item));
  }
  return cat;
}

ModelConfig small_model(std::size_t dim, std::uint64_t seed = 1) {
  ModelConfig m;
  m.dim = dim;
  m.seed = seed;
  return m;
}

TEST(Scorer, MatchesBruteForceRanking) {
  std::mt19937_64 rng(3);
  const Catalog cat = random_catalog(10, 6, rng);
  Model model(small_model(6));
  const Scorer scorer(model, cat);
  const Tensor table = model.item_embeddings(cat);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<std::size_t> context{static_cast<std::size_t>(trial % 10), 3, 7, static_cast<std::size_t>((trial * 3) % 10)};
    const RankedList ranked = scorer.rank_all(context);
    const Tensor u = scorer.user_embedding(context);
    std::vector<std::pair<double, std::string>> brute;
    for (std::size_t i = 0; i < 10; ++i) brute.emplace_back(-score(u.values(), table.row_span(i), model.sal()), cat[i].item_id);
    std::sort(brute.begin(), brute.end());
    ASSERT_EQ(ranked.items.size(), 10u);
    for (std::size_t r = 0; r < 10; ++r) {
      EXPECT_EQ(cat[ranked.items[r]].item_id, brute[r].second);
      EXPECT_NEAR(ranked.scores[r], -brute[r].first, 1e-12);
      if (r > 0) { EXPECT_GE(ranked.scores[r - 1], ranked.scores[r]); }
    }
    const auto s = scorer.scores(u);
    for (std::size_t r = 0; r < 10; ++r) EXPECT_EQ(scorer.rank_of(s, ranked.items[r]), r + 1);
    const auto top = scorer.top_k(s, 4);
    EXPECT_EQ(top, std::vector<std::size_t>(ranked.items.begin(), ranked.items.begin() + 4));
  }
}

TEST(Scorer, TiesBreakByItemId) {
  std::mt19937_64 rng(4);
  Catalog cat(4, 3);
  const Tensor same = test::randn(4, 3, rng);
  for (const char* id : {"c", "a", "b"}) {
    ItemRecord item;
    item.item_id = id;
    item.modalities = same;
    item.cf_emb.assign(3, 0.0);
    cat.add(std::move(item));
  }
  Model model(small_model(3));
  const RankedList ranked = rank_all(std::vector<std::size_t>{0, 1}, model, cat);
  EXPECT_EQ(ranked.items, (std::vector<std::size_t>{1, 2, 0}));
}

TEST(Scorer, SingleItemCatalogAndDeterminism) {
  std::mt19937_64 rng(5);
  const Catalog one = random_catalog(1, 4, rng);
  Model model(small_model(4));
  const RankedList r = rank_all(std::vector<std::size_t>{0}, model, one);
  EXPECT_EQ(r.items, std::vector<std::size_t>{0});

  const Catalog cat = random_catalog(30, 4, rng);
  Model a(small_model(4, 9)), b(small_model(4, 9));
  const std::vector<std::size_t> ctx{1, 5, 9, 20};
  const RankedList ra = rank_all(ctx, a, cat), rb = rank_all(ctx, b, cat);
  EXPECT_EQ(ra.items, rb.items);
  EXPECT_EQ(ra.scores, rb.scores);
}

TEST(Scorer, EmptyCatalogOrContextRejected) {
  Model model(small_model(4));
  EXPECT_THROW(Scorer(model, Catalog(4, 4)), Error);
  std::mt19937_64 rng(6);
  const Catalog cat = random_catalog(3, 4, rng);
  const Scorer s(model, cat);
  EXPECT_THROW(s.user_embedding({}), Error);
}

TEST(Protocols, PerfectRankGivesEqualHrAndNdcg) {
  std::mt19937_64 rng(7);
  const Catalog cat = random_catalog(12, 4, rng);
  Model model(small_model(4));
  const Scorer scorer(model, cat);
  std::vector<EvalCase> cases;
  for (std::size_t u = 0; u < 6; ++u) {
    const std::vector<std::size_t> ctx{u, u + 1, u + 2};
    cases.push_back({u, ctx, {scorer.rank_all(ctx).items.front()}});
  }
  MetricReport report;
  evaluate_leave_one_out(scorer, cases, EvalConfig{}, report);
  for (std::size_t k : {5u, 10u, 20u}) {
    EXPECT_EQ(report.get("HR", k), 1.0);
    EXPECT_EQ(report.get("NDCG", k), report.get("HR", k));
  }
}

TEST(Protocols, LongContextsPoolAllSets) {
  std::mt19937_64 rng(8);
  const Catalog cat = random_catalog(20, 4, rng);
  Model model(small_model(4));
  const Scorer scorer(model, cat);
  std::vector<std::size_t> long_ctx(160);
  for (std::size_t i = 0; i < long_ctx.size(); ++i) long_ctx[i] = i % 20;
  const std::vector<EvalCase> a{{0, long_ctx, {1}}, {1, {1, 2}, {3}}};
  const std::vector<EvalCase> b{{2, long_ctx, {4, 5, 6}}};
  const std::span<const EvalCase> sets[] = {a, b};
  MetricReport report;
  evaluate_long_contexts(scorer, sets, EvalConfig{}, report);
  ASSERT_EQ(report.entries.size(), 1u);
  EXPECT_EQ(report.entries[0].name, "R_long");
  EXPECT_EQ(report.entries[0].users, 2u);
  EXPECT_EQ(report.entries[0].value, 1.0);  // k = 20 covers the whole catalog
}

TEST(Calibration, UntrainedModelNearChance) {
  std::mt19937_64 rng(9);
  const Catalog cat = random_catalog(100, 6, rng);
  std::vector<EvalCase> cases;
  std::uniform_int_distribution<std::size_t> item(0, 99);
  for (std::size_t u = 0; u < 50; ++u) {
    std::vector<std::size_t> ctx(20);
    for (auto& i : ctx) i = item(rng);
    cases.push_back({u, ctx, {item(rng)}});
  }
  const CalibrationResult r = random_calibration(cat, cases, small_model(6), 2000, 10);
  EXPECT_EQ(r.expected, 0.1);
  EXPECT_LE(std::abs(r.z_score()), 3.0) << r.mean_hr;
}

TEST(Variants, NamesRoundTripIntoFingerprint) {
  for (Variant v : kAllVariants) {
    EXPECT_EQ(parse_variant(variant_name(v)), v);
    ExperimentConfig cfg;
    cfg.model.variant = v;
    const std::string fp = fingerprint(cfg);
    EXPECT_EQ(fp.rfind(std::string(variant_name(v)) + "-", 0), 0u) << fp;
  }
  EXPECT_THROW(parse_variant("no_such_variant"), Error);
  ExperimentConfig a, b;
  b.train.sal_epochs += 1;
  EXPECT_NE(fingerprint(a), fingerprint(b));
  EXPECT_EQ(fingerprint(a), fingerprint(ExperimentConfig{}));
}

TEST(Variants, ShareSalInitialization) {
  ModelConfig base = small_model(5, 17);
  Model full(base);
  for (Variant v : kAllVariants) {
    base.variant = v;
    Model other(base);
    const auto a = full.sal().parameters();
    const auto b = other.sal().parameters();
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i]->value, b[i]->value) << a[i]->name;
    EXPECT_EQ(full.fusion().w_hidden.value, other.fusion().w_hidden.value);
  }
}

TEST(Variants, TrainableParameterSets) {
  ModelConfig m = small_model(4);
  m.variant = Variant::kNoMfl;
  EXPECT_TRUE(Model(m).mfl_parameters().empty());
  m.variant = Variant::kNoSal;
  Model no_sal(m);
  const auto sal = no_sal.sal_parameters();
  ASSERT_EQ(sal.size(), 1u);
  EXPECT_EQ(sal[0], &no_sal.sal().item_proj);
  m.variant = Variant::kFull;
  EXPECT_FALSE(Model(m).mfl_parameters().empty());
}

}  // namespace
}  // namespace mufasa
