#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mufasa/data.hpp"
#include "mufasa/mfl.hpp"
#include "mufasa/sal.hpp"

namespace mufasa {

enum class Variant { kFull, kNoMfl, kNoSal, kFullAttention };

std::string_view variant_name(Variant v);
// Throws a config error for an unknown name.
Variant parse_variant(std::string_view name);
inline constexpr Variant kAllVariants[] = {Variant::kFull, Variant::kNoMfl, Variant::kNoSal,
                                           Variant::kFullAttention};

struct ModelConfig {
  std::size_t modalities = kDefaultModalities;
  std::size_t dim = 32;
  Variant variant = Variant::kFull;
  SalConfig sal;
  std::uint64_t seed = 1;

  void validate() const;
};

/// Fusion network, SAL parameters and the dense head of the full-attention
/// variant. Each component draws its initialization from its own seeded
/// stream, so variants built from one seed share identical SAL weights.
class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  Variant variant() const { return config_.variant; }

  FusionNetwork& fusion() { return fusion_; }
  SalParams& sal() { return sal_; }
  AttentionHead& dense() { return dense_; }

  // Parameters optimized by the MFL stage; empty for no_mfl.
  std::vector<Parameter*> mfl_parameters();
  // Parameters optimized by the SAL stage for this variant.
  std::vector<Parameter*> sal_parameters();
  // Every parameter, in a fixed order (checkpoint layout).
  std::vector<Parameter*> all_parameters();

  // N×d item table: fused embeddings, or the modality mean for no_mfl.
  Tensor item_embeddings(const Catalog& catalog);
  // Same, differentiable w.r.t. the fusion network for the listed items.
  Var item_embeddings(Tape& tape, const Catalog& catalog, std::span<const std::size_t> items);

  // User embedding of an L×d history whose last row is the most recent item.
  Var encode(Tape& tape, Var history);
  Tensor encode(const Tensor& history);

 private:
  ModelConfig config_;
  FusionNetwork fusion_;
  SalParams sal_;
  AttentionHead dense_;
};

// Catalog modality stacks flattened to N×(M·d), in catalog order.
Tensor stack_catalog(const Catalog& catalog);
Tensor stack_catalog(const Catalog& catalog, std::span<const std::size_t> items);

// Unweighted mean of each item's modality rows, N×d.
Tensor modality_mean(const Catalog& catalog);

// Stable, order-sensitive FNV-1a over every parameter value.
std::uint64_t parameter_hash(Model& model);

}  // namespace mufasa
