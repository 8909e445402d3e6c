#include "mufasa/model.hpp"

#include <array>
#include <cstring>
#include <random>

#include <fmt/format.h>

#include "mufasa/error.hpp"

namespace mufasa {

namespace {

// Independent stream per component: same seed, different stream id.
std::mt19937_64 component_rng(std::uint64_t seed, std::uint32_t stream) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32), stream};
  return std::mt19937_64(seq);
}

constexpr std::uint32_t kFusionStream = 1;
constexpr std::uint32_t kSalStream = 2;
constexpr std::uint32_t kDenseStream = 3;

}  // namespace

std::string_view variant_name(Variant v) {
  switch (v) {
    case Variant::kFull: return "full";
    case Variant::kNoMfl: return "no_mfl";
    case Variant::kNoSal: return "no_sal";
    case Variant::kFullAttention: return "full_attention";
  }
  return "full";
}

Variant parse_variant(std::string_view name) {
  for (Variant v : kAllVariants)
    if (variant_name(v) == name) return v;
  fail(ErrorCode::kConfig,
       fmt::format("unknown variant '{}' (expected full, no_mfl, no_sal or full_attention)", name));
}

void ModelConfig::validate() const {
  if (modalities < 1) fail(ErrorCode::kConfig, "model needs at least one modality");
  if (dim < 1) fail(ErrorCode::kConfig, "model dimension must be >= 1");
  sal.validate();
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  auto fusion_rng = component_rng(config_.seed, kFusionStream);
  auto sal_rng = component_rng(config_.seed, kSalStream);
  auto dense_rng = component_rng(config_.seed, kDenseStream);
  fusion_ = FusionNetwork::create(config_.modalities, config_.dim, fusion_rng);
  sal_ = SalParams::create(config_.dim, sal_rng);
  dense_ = AttentionHead::create("dense", config_.dim, dense_rng);
}

std::vector<Parameter*> Model::mfl_parameters() {
  if (variant() == Variant::kNoMfl) return {};
  return fusion_.parameters();
}

std::vector<Parameter*> Model::sal_parameters() {
  switch (variant()) {
    case Variant::kNoSal: return {&sal_.item_proj};
    case Variant::kFullAttention: return {&dense_.query, &dense_.key, &dense_.value, &sal_.item_proj};
    default: return sal_.parameters();
  }
}

std::vector<Parameter*> Model::all_parameters() {
  std::vector<Parameter*> out = fusion_.parameters();
  for (Parameter* p : sal_.parameters()) out.push_back(p);
  for (Parameter* p : dense_.parameters()) out.push_back(p);
  return out;
}

Tensor stack_catalog(const Catalog& catalog) {
  const std::size_t width = catalog.modalities() * catalog.dim();
  Tensor out(catalog.size(), width);
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    const auto src = catalog[i].modalities.values();
    std::copy(src.begin(), src.end(), out.row_span(i).begin());
  }
  return out;
}

Tensor stack_catalog(const Catalog& catalog, std::span<const std::size_t> items) {
  const std::size_t width = catalog.modalities() * catalog.dim();
  Tensor out(items.size(), width);
  for (std::size_t r = 0; r < items.size(); ++r) {
    const auto src = catalog[items[r]].modalities.values();
    std::copy(src.begin(), src.end(), out.row_span(r).begin());
  }
  return out;
}

Tensor modality_mean(const Catalog& catalog) {
  Tensor out(catalog.size(), catalog.dim());
  const double inv = 1.0 / static_cast<double>(catalog.modalities());
  for (std::size_t i = 0; i < catalog.size(); ++i) {
    const Tensor& m = catalog[i].modalities;
    auto row = out.row_span(i);
    for (std::size_t r = 0; r < m.rows(); ++r)
      for (std::size_t c = 0; c < m.cols(); ++c) row[c] += m(r, c) * inv;
  }
  return out;
}

Tensor Model::item_embeddings(const Catalog& catalog) {
  if (catalog.dim() != config_.dim || catalog.modalities() != config_.modalities) {
    fail(ErrorCode::kDimension, fmt::format("catalog layout {} does not match model {}",
                                            shape_string(catalog.modalities(), catalog.dim()),
                                            shape_string(config_.modalities, config_.dim)));
  }
  if (variant() == Variant::kNoMfl) return modality_mean(catalog);
  return fuse(fusion_, stack_catalog(catalog));
}

Var Model::item_embeddings(Tape& tape, const Catalog& catalog, std::span<const std::size_t> items) {
  if (variant() == Variant::kNoMfl) {
    const Tensor all = modality_mean(catalog);
    Tensor rows(items.size(), config_.dim);
    for (std::size_t r = 0; r < items.size(); ++r) {
      const auto src = all.row_span(items[r]);
      std::copy(src.begin(), src.end(), rows.row_span(r).begin());
    }
    return tape.constant(std::move(rows));
  }
  return fuse(tape, fusion_, tape.constant(stack_catalog(catalog, items)));
}

Var Model::encode(Tape& tape, Var history) {
  if (history.rows() == 0) fail(ErrorCode::kEmptySample, "empty interaction history");
  switch (variant()) {
    case Variant::kNoSal: return mean_rows(history);
    case Variant::kFullAttention: {
      Var last = slice_rows(history, history.rows() - 1, history.rows());
      Var q = matmul(last, tape.parameter(dense_.query));
      return attend(q, history, tape.parameter(dense_.key), tape.parameter(dense_.value)).output;
    }
    default: return encode_user(tape, history, sal_, config_.sal).user;
  }
}

Tensor Model::encode(const Tensor& history) {
  Tape tape;
  return encode(tape, tape.constant(history)).value();
}

std::uint64_t parameter_hash(Model& model) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&h](const void* data, std::size_t bytes) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < bytes; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  };
  for (Parameter* p : model.all_parameters()) {
    mix(p->name.data(), p->name.size());
    const auto v = p->value.values();
    mix(v.data(), v.size() * sizeof(double));
  }
  return h;
}

}  // namespace mufasa
