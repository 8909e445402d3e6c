#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>

#include <gtest/gtest.h>

#include "mufasa/data.hpp"
#include "mufasa/error.hpp"

namespace mufasa {
namespace {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    path_ = fs::temp_directory_path() / (std::string("mufasa_") + info->test_suite_name() + "_" + info->name());
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() { fs::remove_all(path_); }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

void write_text(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

SyntheticConfig small_config() {
  SyntheticConfig c;
  c.dim = 16;
  c.users = 60;
  c.items_per_subcluster = 6;
  c.min_length = 10;
  c.max_length = 40;
  return c;
}

std::vector<double> row(const Tensor& t, std::size_t r) { return {t.row_span(r).begin(), t.row_span(r).end()}; }

TEST(Synthetic, ZeroNoiseTitlesEqualPrototypes) {
  SyntheticConfig c = small_config();
  c.subcluster_std = 0.0;
  c.title_noise_std = 0.0;
  c.degraded_title_fraction = 0.0;
  const SyntheticCorpus corpus = generate_synthetic(c);
  for (const ItemRecord& item : corpus.data.catalog.items()) {
    ASSERT_TRUE(item.genre_label);
    EXPECT_EQ(item.title_emb, row(corpus.prototypes, static_cast<std::size_t>(*item.genre_label)));
  }
}

TEST(Synthetic, DeterministicForSeed) {
  const SyntheticCorpus a = generate_synthetic(small_config());
  const SyntheticCorpus b = generate_synthetic(small_config());
  EXPECT_EQ(a.data.catalog, b.data.catalog);
  EXPECT_EQ(a.data.users, b.data.users);
  SyntheticConfig other = small_config();
  other.seed = 2;
  EXPECT_NE(generate_synthetic(other).data.users, a.data.users);
}

TEST(Synthetic, ShapeContracts) {
  const SyntheticConfig c = small_config();
  const SyntheticCorpus corpus = generate_synthetic(c);
  EXPECT_EQ(corpus.data.catalog.size(), c.genres * c.subclusters_per_genre * c.items_per_subcluster);
  EXPECT_EQ(corpus.data.users.size(), c.users);
  for (const UserRecord& u : corpus.data.users) {
    EXPECT_GE(u.items.size(), c.min_length);
    EXPECT_LE(u.items.size(), c.max_length);
    EXPECT_TRUE(std::is_sorted(u.timestamps.begin(), u.timestamps.end()));
  }
  // prototypes orthonormal
  const Tensor gram = matmul(corpus.prototypes, transpose(corpus.prototypes));
  EXPECT_LE(max_abs_diff(gram, Tensor::identity(c.genres)), 1e-12);
}

TEST(Synthetic, MoreGenresThanDimensionsRejected) {
  SyntheticConfig c = small_config();
  c.genres = 20;
  EXPECT_THROW(generate_synthetic(c), Error);
}

TEST(Synthetic, WithinGenreTitlesCloserThanAcross) {
  SyntheticConfig c = small_config();
  c.dim = 32;
  const SyntheticCorpus corpus = generate_synthetic(c);
  std::vector<const ItemRecord*> titled;
  for (const ItemRecord& item : corpus.data.catalog.items())
    if (l2_norm(item.title_emb) > 0.0) titled.push_back(&item);
  double within = 0, across = 0;
  std::size_t nw = 0, na = 0;
  for (std::size_t i = 0; i < titled.size(); ++i) {
    for (std::size_t j = i + 1; j < titled.size(); ++j) {
      const double cs = cosine_sim(titled[i]->title_emb, titled[j]->title_emb);
      if (titled[i]->genre_label == titled[j]->genre_label) {
        within += cs;
        ++nw;
      } else {
        across += cs;
        ++na;
      }
    }
  }
  EXPECT_GE(within / nw - across / na, 0.3);
}

TEST(Synthetic, TitlesRecoverGenre) {
  const SyntheticCorpus corpus = generate_synthetic(SyntheticConfig{});
  std::size_t total = 0, correct = 0;
  for (const ItemRecord& item : corpus.data.catalog.items()) {
    if (l2_norm(item.title_emb) == 0.0) continue;
    std::size_t best = 0;
    double best_cos = -2.0;
    for (std::size_t g = 0; g < corpus.prototypes.rows(); ++g) {
      const double cs = cosine_sim(item.title_emb, corpus.prototypes.row_span(g));
      if (cs > best_cos) {
        best_cos = cs;
        best = g;
      }
    }
    ++total;
    if (static_cast<int>(best) == *item.genre_label) ++correct;
  }
  EXPECT_GE(static_cast<double>(correct) / total, 0.99);
}

TEST(CfOracle, IdenticalHistoriesGiveAlignedUsers) {
  const std::vector<std::vector<std::size_t>> seqs{{0, 1, 2, 3, 4}, {0, 1, 2, 3, 4}, {5, 6, 7, 8, 9}, {10, 11, 12, 13}};
  CfOracleConfig c;
  c.rank = 8;
  c.epochs = 200;
  const CfOracleResult r = cf_oracle(seqs, 16, c);
  EXPECT_GT(cosine_sim(r.user_factors.row_span(0), r.user_factors.row_span(1)), 0.9);
}

TEST(CfOracle, ColdItemsAreZeroAndFlagged) {
  const std::vector<std::vector<std::size_t>> seqs{{0, 1, 2}, {1, 2, 3}};
  const CfOracleResult r = cf_oracle(seqs, 6, CfOracleConfig{});
  EXPECT_TRUE(r.cold_start[4]);
  EXPECT_TRUE(r.cold_start[5]);
  EXPECT_FALSE(r.cold_start[0]);
  EXPECT_EQ(l2_norm(r.item_factors.row_span(5)), 0.0);

  Catalog cat(1, 32);
  for (int i = 0; i < 6; ++i) {
    ItemRecord item;
    item.item_id = "i" + std::to_string(i);
    item.modalities = Tensor(1, 32, 1.0);
    item.cf_emb.assign(32, 0.0);
    cat.add(std::move(item));
  }
  attach_cf_embeddings(cat, r);
  EXPECT_TRUE(cat[5].cold_start);
  EXPECT_EQ(cat[5].cf_emb, std::vector<double>(32, 0.0));
  EXPECT_FALSE(cat[1].cold_start);
}

TEST(CfOracle, ObservedPairsOutscoreUnobserved) {
  const SyntheticCorpus corpus = generate_synthetic(small_config());
  std::vector<std::vector<std::size_t>> seqs;
  for (const UserRecord& u : corpus.data.users) seqs.push_back(u.items);
  const std::size_t n = corpus.data.catalog.size();
  CfOracleConfig c;
  c.rank = 16;
  const CfOracleResult r = cf_oracle(seqs, n, c);
  double obs = 0, unobs = 0;
  std::size_t no = 0, nu = 0;
  for (std::size_t u = 0; u < seqs.size(); ++u) {
    const std::set<std::size_t> seen(seqs[u].begin(), seqs[u].end());
    for (std::size_t i = 0; i < n; ++i) {
      const double s = dot(r.user_factors.row_span(u), r.item_factors.row_span(i));
      if (seen.count(i)) {
        obs += s;
        ++no;
      } else {
        unobs += s;
        ++nu;
      }
    }
  }
  EXPECT_GT(obs / no, unobs / nu);
}

TEST(Files, RoundTripIsExact) {
  TempDir dir;
  SyntheticCorpus corpus = generate_synthetic(small_config());
  corpus.data.catalog[3].cold_start = true;
  write_catalog(dir / "items.jsonl", corpus.data.catalog);
  write_interactions(dir / "interactions.jsonl", corpus.data.users, corpus.data.catalog);
  const Catalog cat = load_catalog(dir / "items.jsonl");
  EXPECT_EQ(cat, corpus.data.catalog);
  EXPECT_EQ(load_interactions(dir / "interactions.jsonl", cat), corpus.data.users);
}

TEST(Files, EmptyInteractionsFileGivesNoUsers) {
  TempDir dir;
  const SyntheticCorpus corpus = generate_synthetic(small_config());
  write_text(dir / "empty.jsonl", "");
  EXPECT_TRUE(load_interactions(dir / "empty.jsonl", corpus.data.catalog).empty());
}

void expect_parse_error(const std::function<void()>& f, const std::vector<std::string>& fragments) {
  try {
    f();
    FAIL() << "expected a parse error";
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParse) << e.what();
    for (const auto& frag : fragments) EXPECT_NE(std::string(e.what()).find(frag), std::string::npos) << e.what();
  }
}

TEST(Files, DanglingItemIdNamesIdAndLine) {
  TempDir dir;
  const SyntheticCorpus corpus = generate_synthetic(small_config());
  const std::string a = corpus.data.catalog[0].item_id;
  write_text(dir / "inter.jsonl",
             "{\"user_id\":\"u1\",\"items\":[\"" + a + "\"],\"timestamps\":[1]}\n"
             "{\"user_id\":\"u2\",\"items\":[\"" + a + "\",\"ghost-item\"],\"timestamps\":[1,2]}\n");
  expect_parse_error([&] { load_interactions(dir / "inter.jsonl", corpus.data.catalog); }, {"ghost-item", ":2:"});
}

TEST(Files, DecreasingTimestampsAndBadDimensions) {
  TempDir dir;
  const SyntheticCorpus corpus = generate_synthetic(small_config());
  const std::string a = corpus.data.catalog[0].item_id;
  write_text(dir / "inter.jsonl", "{\"user_id\":\"u1\",\"items\":[\"" + a + "\",\"" + a + "\"],\"timestamps\":[5,4]}\n");
  expect_parse_error([&] { load_interactions(dir / "inter.jsonl", corpus.data.catalog); }, {":1:", "timestamps"});

  write_text(dir / "items.jsonl",
             "{\"item_id\":\"a\",\"modalities\":[[1,2],[3,4]],\"title_emb\":[1,0],\"cf_emb\":[0,0],\"title_token_count\":4}\n"
             "{\"item_id\":\"b\",\"modalities\":[[1,2],[3,4]],\"title_emb\":[1,0,0],\"cf_emb\":[0,0],\"title_token_count\":4}\n");
  expect_parse_error([&] { load_catalog(dir / "items.jsonl"); }, {":2:", "title_emb"});

  write_text(dir / "bad.jsonl", "{not json\n");
  expect_parse_error([&] { load_catalog(dir / "bad.jsonl"); }, {":1:"});
}

TEST(Files, MissingFileIsFileNotFound) {
  try {
    load_catalog("/nonexistent/items.jsonl");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kFileNotFound);
  }
}

TEST(Stats, TinyCorpusValues) {
  Dataset d;
  d.catalog = Catalog(1, 2);
  for (const char* id : {"a", "b", "c", "d"}) {
    ItemRecord item;
    item.item_id = id;
    item.modalities = Tensor(1, 2, 1.0);
    item.cf_emb.assign(2, 0.0);
    d.catalog.add(std::move(item));
  }
  d.users = {{"u1", {0, 1, 2}, {1, 2, 3}}, {"u2", {3}, {1}}};
  const CorpusStats s = corpus_stats(d);
  EXPECT_EQ(s.users, 2u);
  EXPECT_EQ(s.items, 4u);
  EXPECT_EQ(s.interactions, 4u);
  EXPECT_DOUBLE_EQ(s.average_length, 2.0);
  EXPECT_DOUBLE_EQ(s.sparsity, 0.5);
}

UserRecord user(std::string id, std::vector<std::size_t> items) {
  std::vector<std::int64_t> ts(items.size());
  std::iota(ts.begin(), ts.end(), 0);
  return {std::move(id), std::move(items), std::move(ts)};
}

TEST(Split, LeaveOneOutExample) {
  const UserRecord users[] = {user("u", {0, 1, 2}), user("short", {4})};
  const Split s = split(users, {SplitMode::kLeaveOneOut});
  ASSERT_EQ(s.test.size(), 1u);
  EXPECT_EQ(s.test[0].context, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(s.test[0].targets, (std::vector<std::size_t>{2}));
  EXPECT_EQ(s.train[0].items, (std::vector<std::size_t>{0, 1}));
  EXPECT_EQ(s.skipped, 1u);
}

TEST(Split, ZeroShotExample) {
  const UserRecord users[] = {user("u", {0, 1, 2, 3, 4, 5}), user("v", {6, 7})};
  const Split s = split(users, {SplitMode::kZeroShot, 2, 3, 1});
  ASSERT_EQ(s.test.size(), 1u);
  EXPECT_EQ(s.test[0].context, (std::vector<std::size_t>{0, 1, 2}));
  EXPECT_EQ(s.test[0].targets, (std::vector<std::size_t>{3, 4, 5}));
  EXPECT_TRUE(s.train.empty());
  EXPECT_EQ(s.skipped, 1u);
}

TEST(Split, ProtocolSoundness) {
  const SyntheticCorpus corpus = generate_synthetic(small_config());
  const ProtocolSplits ps = protocol_splits(corpus.data.users, 20, 3, 5);
  std::set<std::size_t> holdout;
  for (const EvalCase& c : ps.zero_shot.test) holdout.insert(c.user);
  EXPECT_EQ(holdout.size(), 20u);
  for (const TrainSequence& t : ps.leave_one_out.train) EXPECT_EQ(holdout.count(t.user), 0u);
  for (const EvalCase& c : ps.leave_one_out.test) {
    EXPECT_EQ(holdout.count(c.user), 0u);
    const auto& items = corpus.data.users[c.user].items;
    // the target is the final interaction and is absent from the context position-wise
    EXPECT_EQ(c.context.size() + 1, items.size());
    EXPECT_EQ(c.targets[0], items.back());
  }
  for (const TrainSequence& t : ps.leave_one_out.train) {
    const auto& items = corpus.data.users[t.user].items;
    EXPECT_EQ(t.items.size() + 1, items.size());
  }
  EXPECT_EQ(ps.leave_one_out.test.size() + 20, corpus.data.users.size());
}

}  // namespace
}  // namespace mufasa
