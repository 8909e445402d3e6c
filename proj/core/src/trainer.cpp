#include "mufasa/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mufasa/error.hpp"

namespace mufasa {

namespace {

std::mt19937_64 stage_rng(std::uint64_t seed, std::uint32_t stage) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stage, 0x7a11u};
  return std::mt19937_64(seq);
}

// Balanced batch boundaries covering [0, n).
std::vector<std::pair<std::size_t, std::size_t>> batches(std::size_t n, std::size_t batch) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  if (n == 0) return out;
  const std::size_t count = (n + batch - 1) / batch;
  std::size_t begin = 0;
  for (std::size_t b = 0; b < count; ++b) {
    const std::size_t end = begin + (n - begin) / (count - b);
    out.emplace_back(begin, end);
    begin = end;
  }
  return out;
}

std::vector<Parameter*> with_grad(std::span<Parameter* const> params) {
  std::vector<Parameter*> out;
  for (Parameter* p : params)
    if (p->grad) out.push_back(p);
  return out;
}

void copy_row(const Tensor& src, std::size_t r, Tensor& dst, std::size_t d) {
  const auto from = src.row_span(r);
  std::copy(from.begin(), from.end(), dst.row_span(d).begin());
}

struct Sample {
  const TrainSequence* seq;
  std::size_t cut;  // target position; context is [begin, cut)
};

}  // namespace

void TrainConfig::validate() const {
  mfl.validate();
  if (mfl_batch < 2) fail(ErrorCode::kConfig, "mfl_batch must be >= 2");
  if (sal_batch < 2) fail(ErrorCode::kConfig, "sal_batch must be >= 2");
  if (samples_per_user < 1) fail(ErrorCode::kConfig, "samples_per_user must be >= 1");
  for (const auto* o : {&mfl_optimizer, &sal_optimizer})
    if (!(o->lr > 0.0)) fail(ErrorCode::kConfig, "learning rates must be > 0");
}

MflBatch make_mfl_batch(const Catalog& catalog, std::span<const std::size_t> items,
                        std::size_t min_title_tokens) {
  MflBatch batch;
  const std::size_t d = catalog.dim();
  batch.stacked = stack_catalog(catalog, items);
  batch.titles = Tensor(items.size(), d);
  batch.cf = Tensor(items.size(), d);
  std::vector<TitleInfo> titles;
  titles.reserve(items.size());
  for (std::size_t r = 0; r < items.size(); ++r) {
    const ItemRecord& item = catalog[items[r]];
    if (!item.title_emb.empty()) std::copy(item.title_emb.begin(), item.title_emb.end(), batch.titles.row_span(r).begin());
    std::copy(item.cf_emb.begin(), item.cf_emb.end(), batch.cf.row_span(r).begin());
    titles.push_back({item.title_emb, item.title_token_count});
    batch.cf_ok.push_back(!item.cold_start);
  }
  batch.title_ok = filter_title_quality(titles, min_title_tokens);
  return batch;
}

std::vector<EpochRecord> train_mfl(Model& model, const Catalog& catalog, const TrainConfig& config,
                                   const EpochCallback& on_record) {
  config.validate();
  std::vector<EpochRecord> records;
  const auto params = model.mfl_parameters();
  if (params.empty() || config.mfl_epochs == 0 || catalog.empty()) return records;

  auto rng = stage_rng(config.seed, 1);
  Optimizer optimizer(config.mfl_optimizer);
  std::vector<std::size_t> order(catalog.size());
  std::iota(order.begin(), order.end(), 0);

  for (std::size_t epoch = 1; epoch <= config.mfl_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    std::array<double, 4> sums{};
    std::array<std::size_t, 4> counts{};
    double total = 0.0;
    const auto bounds = batches(order.size(), config.mfl_batch);
    for (auto [b, e] : bounds) {
      const std::span<const std::size_t> items(order.data() + b, e - b);
      const MflBatch batch = make_mfl_batch(catalog, items, config.mfl.min_title_tokens);
      zero_grads(params);
      Tape tape;
      MflObjective obj = mfl_objective(tape, model.fusion(), batch, config.mfl, rng);
      tape.backward(obj.total);
      optimizer.step(with_grad(params));
      for (std::size_t k = 0; k < 4; ++k) {
        if (std::isnan(obj.values.components[k])) continue;
        sums[k] += obj.values.components[k];
        ++counts[k];
      }
      total += obj.values.total;
    }
    for (std::size_t k = 0; k < 4; ++k) {
      const double v = counts[k] ? sums[k] / static_cast<double>(counts[k])
                                 : std::numeric_limits<double>::quiet_NaN();
      records.push_back({"mfl", epoch, kMflComponentNames[k], v});
    }
    records.push_back({"mfl", epoch, "total", total / static_cast<double>(bounds.size())});
    spdlog::debug("mfl epoch {} total {:.6f}", epoch, records.back().value);
    if (on_record)
      for (std::size_t k = records.size() - 5; k < records.size(); ++k) on_record(records[k]);
  }
  zero_grads(params);
  return records;
}

std::vector<EpochRecord> train_sal(Model& model, const Catalog& catalog,
                                   std::span<const TrainSequence> train, const TrainConfig& config,
                                   const EpochCallback& on_record) {
  config.validate();
  std::vector<EpochRecord> records;
  if (config.sal_epochs == 0) return records;

  std::vector<Parameter*> params = model.sal_parameters();
  const bool finetune = config.finetune_mfl && model.variant() != Variant::kNoMfl;
  if (finetune)
    for (Parameter* p : model.mfl_parameters()) params.push_back(p);

  auto rng = stage_rng(config.seed, 2);
  Optimizer optimizer(config.sal_optimizer);
  const std::size_t d = model.config().dim;

  std::vector<const TrainSequence*> usable;
  for (const TrainSequence& s : train)
    if (s.items.size() >= 2) usable.push_back(&s);
  if (usable.empty()) fail(ErrorCode::kEmptySample, "no training sequence has two or more items");

  for (std::size_t epoch = 1; epoch <= config.sal_epochs; ++epoch) {
    std::vector<Sample> samples;
    for (const TrainSequence* s : usable) {
      std::uniform_int_distribution<std::size_t> cut(1, s->items.size() - 1);
      for (std::size_t r = 0; r < config.samples_per_user; ++r) samples.push_back({s, cut(rng)});
    }
    std::shuffle(samples.begin(), samples.end(), rng);

    // Frozen fusion: one item table per epoch.
    Tensor table;
    if (!finetune) table = model.item_embeddings(catalog);

    double loss_sum = 0.0;
    std::size_t loss_batches = 0;
    for (auto [b, e] : batches(samples.size(), config.sal_batch)) {
      if (e - b < 2) continue;
      zero_grads(params);
      Tape tape;

      // Item rows available to this batch: the whole table, or the fused
      // rows of the items the batch touches.
      std::vector<std::size_t> touched;
      std::vector<std::size_t> local(finetune ? catalog.size() : 0, 0);
      Var fused;
      if (finetune) {
        for (std::size_t s = b; s < e; ++s) {
          const auto& items = samples[s].seq->items;
          touched.insert(touched.end(), items.begin(), items.begin() + samples[s].cut + 1);
        }
        std::sort(touched.begin(), touched.end());
        touched.erase(std::unique(touched.begin(), touched.end()), touched.end());
        for (std::size_t r = 0; r < touched.size(); ++r) local[touched[r]] = r;
        fused = model.item_embeddings(tape, catalog, touched);
      }

      std::vector<Var> users;
      std::vector<std::size_t> target_items;
      for (std::size_t s = b; s < e; ++s) {
        const auto& items = samples[s].seq->items;
        const std::size_t cut = samples[s].cut;
        const std::size_t begin =
            config.max_context > 0 && cut > config.max_context ? cut - config.max_context : 0;
        Var history;
        if (finetune) {
          std::vector<std::size_t> rows;
          for (std::size_t t = begin; t < cut; ++t) rows.push_back(local[items[t]]);
          history = gather_rows(fused, rows);
        } else {
          Tensor h(cut - begin, d);
          for (std::size_t t = begin; t < cut; ++t) copy_row(table, items[t], h, t - begin);
          history = tape.constant(std::move(h));
        }
        users.push_back(model.encode(tape, history));
        target_items.push_back(items[cut]);
      }

      Var targets;
      if (finetune) {
        std::vector<std::size_t> rows;
        for (std::size_t i : target_items) rows.push_back(local[i]);
        targets = gather_rows(fused, rows);
      } else {
        Tensor t(target_items.size(), d);
        for (std::size_t r = 0; r < target_items.size(); ++r) copy_row(table, target_items[r], t, r);
        targets = tape.constant(std::move(t));
      }

      Var loss = sal_contrastive_loss(concat_rows(users), project_items(targets, model.sal()),
                                      model.config().sal.tau);
      const double value = loss.value().item();
      if (!std::isfinite(value)) {
        fail(ErrorCode::kNonFinite, fmt::format("non-finite loss in component 'sal_contrastive' (epoch {})", epoch));
      }
      tape.backward(loss);
      optimizer.step(with_grad(params));
      loss_sum += value;
      ++loss_batches;
    }

    const double mean_loss = loss_batches ? loss_sum / static_cast<double>(loss_batches)
                                          : std::numeric_limits<double>::quiet_NaN();
    records.push_back({"sal", epoch, "contrastive", mean_loss});
    spdlog::debug("sal epoch {} contrastive {:.6f}", epoch, mean_loss);
    if (on_record) on_record(records.back());
  }
  zero_grads(params);
  return records;
}

TrainResult train(Model& model, const Catalog& catalog, std::span<const TrainSequence> train,
                  const TrainConfig& config, const EpochCallback& on_record) {
  TrainResult result;
  result.records = train_mfl(model, catalog, config, on_record);
  auto sal = train_sal(model, catalog, train, config, on_record);
  result.records.insert(result.records.end(), sal.begin(), sal.end());
  return result;
}

}  // namespace mufasa
