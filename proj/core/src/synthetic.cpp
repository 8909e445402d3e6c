#include <algorithm>
#include <cmath>
#include <random>

#include <fmt/format.h>

#include "mufasa/data.hpp"
#include "mufasa/error.hpp"

namespace mufasa {

void SyntheticConfig::validate() const {
  if (genres < 2) fail(ErrorCode::kConfig, "synthetic: genres must be >= 2");
  if (dim < 1) fail(ErrorCode::kConfig, "synthetic: dim must be >= 1");
  if (genres > dim) {
    fail(ErrorCode::kConfig,
         fmt::format("synthetic: cannot orthogonalize {} genre prototypes in dimension {}", genres, dim));
  }
  if (subclusters_per_genre < 1 || items_per_subcluster < 1)
    fail(ErrorCode::kConfig, "synthetic: sub-cluster counts must be >= 1");
  if (run_min < 1 || run_max < run_min) fail(ErrorCode::kConfig, "synthetic: need 1 <= run_min <= run_max");
  if (min_length < 2 || max_length < min_length)
    fail(ErrorCode::kConfig, "synthetic: need 2 <= min_length <= max_length");
  if (tail_length >= min_length) fail(ErrorCode::kConfig, "synthetic: tail_length must be < min_length");
  const double stds[] = {modality_noise_std, subcluster_std, title_noise_std};
  for (double s : stds)
    if (!(s >= 0.0)) fail(ErrorCode::kConfig, "synthetic: noise stds must be >= 0");
  for (double s : modality_noise_scale)
    if (!(s >= 0.0)) fail(ErrorCode::kConfig, "synthetic: modality noise scales must be >= 0");
  if (!(misclick_prob >= 0.0 && misclick_prob < 1.0))
    fail(ErrorCode::kConfig, "synthetic: misclick_prob must be in [0, 1)");
  if (!(degraded_title_fraction >= 0.0 && degraded_title_fraction <= 1.0))
    fail(ErrorCode::kConfig, "synthetic: degraded_title_fraction must be in [0, 1]");
}

namespace {

void add_noise(std::span<double> v, double stddev, std::mt19937_64& rng) {
  if (stddev <= 0.0) return;
  std::normal_distribution<double> dist(0.0, stddev);
  for (double& x : v) x += dist(rng);
}

Tensor orthonormal_prototypes(std::size_t count, std::size_t dim, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, 1.0);
  Tensor p(count, dim);
  for (std::size_t g = 0; g < count; ++g) {
    auto row = p.row_span(g);
    for (double& x : row) x = dist(rng);
    // modified Gram-Schmidt against earlier rows
    for (std::size_t h = 0; h < g; ++h) {
      const double proj = dot(row, p.row_span(h));
      auto prev = p.row_span(h);
      for (std::size_t c = 0; c < dim; ++c) row[c] -= proj * prev[c];
    }
    const double n = l2_norm(row);
    if (n < 1e-9) fail(ErrorCode::kConfig, "synthetic: degenerate prototype draw");
    for (double& x : row) x /= n;
  }
  return p;
}

}  // namespace

SyntheticCorpus generate_synthetic(const SyntheticConfig& config) {
  config.validate();
  std::mt19937_64 rng(config.seed);
  const std::size_t d = config.dim;
  const std::size_t modalities = config.modality_noise_scale.size();

  SyntheticCorpus corpus;
  corpus.prototypes = orthonormal_prototypes(config.genres, d, rng);
  corpus.data.catalog = Catalog(modalities, d);

  // Sub-cluster centres and the ids of their items.
  const std::size_t subclusters = config.genres * config.subclusters_per_genre;
  std::vector<std::vector<std::size_t>> members(subclusters);
  std::uniform_int_distribution<std::size_t> token_dist(4, 12);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::size_t next_id = 0;
  for (std::size_t g = 0; g < config.genres; ++g) {
    for (std::size_t s = 0; s < config.subclusters_per_genre; ++s) {
      std::vector<double> centre(corpus.prototypes.row_span(g).begin(),
                                 corpus.prototypes.row_span(g).end());
      add_noise(centre, config.subcluster_std, rng);
      const std::size_t cluster = g * config.subclusters_per_genre + s;
      for (std::size_t i = 0; i < config.items_per_subcluster; ++i) {
        ItemRecord item;
        item.item_id = fmt::format("i{:05d}", next_id++);
        item.genre_label = static_cast<int>(g);
        item.subcluster = static_cast<int>(cluster);
        item.modalities = Tensor(modalities, d);
        for (std::size_t m = 0; m < modalities; ++m) {
          auto row = item.modalities.row_span(m);
          std::copy(centre.begin(), centre.end(), row.begin());
          add_noise(row, config.modality_noise_std * config.modality_noise_scale[m], rng);
        }
        item.title_emb = centre;
        add_noise(item.title_emb, config.title_noise_std, rng);
        item.title_token_count = token_dist(rng);
        if (unit(rng) < config.degraded_title_fraction) {
          // alternate between a missing title and an overly short one
          if (unit(rng) < 0.5) {
            std::fill(item.title_emb.begin(), item.title_emb.end(), 0.0);
          } else {
            item.title_token_count = 1;
          }
        }
        item.cf_emb.assign(d, 0.0);
        members[cluster].push_back(corpus.data.catalog.add(std::move(item)));
      }
    }
  }

  const std::size_t num_items = corpus.data.catalog.size();
  std::uniform_int_distribution<std::size_t> length_dist(config.min_length, config.max_length);
  std::uniform_int_distribution<std::size_t> run_dist(config.run_min, config.run_max);
  std::uniform_int_distribution<std::size_t> genre_dist(0, config.genres - 1);
  std::uniform_int_distribution<std::size_t> sub_dist(0, config.subclusters_per_genre - 1);
  std::uniform_int_distribution<std::size_t> member_dist(0, config.items_per_subcluster - 1);
  std::uniform_int_distribution<std::size_t> any_item(0, num_items - 1);

  corpus.data.users.reserve(config.users);
  for (std::size_t u = 0; u < config.users; ++u) {
    UserRecord user;
    user.user_id = fmt::format("u{:05d}", u);
    const std::size_t length = length_dist(rng);
    const std::size_t body = length - config.tail_length;
    std::size_t genre = genre_dist(rng);
    std::size_t cluster = genre * config.subclusters_per_genre + sub_dist(rng);
    std::size_t remaining = run_dist(rng);
    while (user.items.size() < body) {
      if (remaining == 0) {
        std::size_t next = genre_dist(rng);
        while (next == genre) next = genre_dist(rng);
        genre = next;
        cluster = genre * config.subclusters_per_genre + sub_dist(rng);
        remaining = run_dist(rng);
      }
      const bool misclick = unit(rng) < config.misclick_prob;
      user.items.push_back(misclick ? any_item(rng) : members[cluster][member_dist(rng)]);
      --remaining;
    }
    for (std::size_t t = 0; t < config.tail_length; ++t)
      user.items.push_back(members[cluster][member_dist(rng)]);
    user.timestamps.resize(user.items.size());
    for (std::size_t t = 0; t < user.timestamps.size(); ++t)
      user.timestamps[t] = static_cast<std::int64_t>(t);
    corpus.data.users.push_back(std::move(user));
  }
  return corpus;
}

}  // namespace mufasa
