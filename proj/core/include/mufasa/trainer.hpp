#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "mufasa/data.hpp"
#include "mufasa/mfl.hpp"
#include "mufasa/model.hpp"
#include "mufasa/optim.hpp"

namespace mufasa {

struct TrainConfig {
  MflConfig mfl;
  std::size_t mfl_epochs = 20;
  std::size_t mfl_batch = 64;
  OptimizerConfig mfl_optimizer{OptimizerKind::kAdam, 0.005};

  std::size_t sal_epochs = 6;
  std::size_t sal_batch = 32;
  // Prediction points sampled from each training sequence per epoch.
  std::size_t samples_per_user = 2;
  // Contexts longer than this keep only their most recent items; 0 keeps all.
  std::size_t max_context = 0;
  OptimizerConfig sal_optimizer{OptimizerKind::kAdam, 0.005};
  // Propagate the SAL loss into the fusion network instead of freezing it.
  bool finetune_mfl = false;

  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochRecord {
  std::string stage;      // "mfl" or "sal"
  std::size_t epoch = 0;  // 1-based
  std::string component;  // "title", "cf", "cons", "fus_cl", "total", "contrastive"
  double value = 0.0;     // batch mean; NaN when every batch skipped the term
};

struct TrainResult {
  std::vector<EpochRecord> records;
};

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Stage 1: the joint MFL objective over shuffled item batches.
std::vector<EpochRecord> train_mfl(Model& model, const Catalog& catalog, const TrainConfig& config,
                                   const EpochCallback& on_record = {});

/// Stage 2: the user-item contrast over sampled (context, next item) pairs
/// with in-batch negatives.
std::vector<EpochRecord> train_sal(Model& model, const Catalog& catalog,
                                   std::span<const TrainSequence> train, const TrainConfig& config,
                                   const EpochCallback& on_record = {});

// Both stages in order. Epoch counts of zero leave the model at initialization.
TrainResult train(Model& model, const Catalog& catalog, std::span<const TrainSequence> train,
                  const TrainConfig& config, const EpochCallback& on_record = {});

// Batch for the MFL objective over catalog items.
MflBatch make_mfl_batch(const Catalog& catalog, std::span<const std::size_t> items,
                        std::size_t min_title_tokens);

}  // namespace mufasa
