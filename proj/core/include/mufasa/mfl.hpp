#pragma once

#include <array>
#include <cstddef>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mufasa/autodiff.hpp"

namespace mufasa {

// Fixed modality order of every catalog.
enum class Modality : std::size_t { kTitleText = 0, kCategory = 1, kVisual = 2, kAudio = 3 };
inline constexpr std::size_t kDefaultModalities = 4;

/// One item's stack of M modality vectors, M×d.
struct ModalityBundle {
  std::string item_id;
  Tensor features;
};

/// Stacks bundles into the N×(M·d) batch the fusion network consumes.
/// Throws a dimension error naming the first malformed item.
Tensor stack_bundles(std::span<const ModalityBundle> bundles, std::size_t modalities,
                     std::size_t dim);

/// Two-layer feed-forward fusion: concat(M·d) -> tanh(2d) -> d.
struct FusionNetwork {
  std::size_t modalities = 0;
  std::size_t dim = 0;
  Parameter w_hidden;  // (M·d)×2d
  Parameter b_hidden;  // 1×2d
  Parameter w_out;     // 2d×d
  Parameter b_out;     // 1×d

  static FusionNetwork create(std::size_t modalities, std::size_t dim, std::mt19937_64& rng);
  std::vector<Parameter*> parameters();
};

// Fused embeddings for an N×(M·d) batch, differentiable w.r.t. the network.
Var fuse(Tape& tape, FusionNetwork& net, Var stacked);
Tensor fuse(FusionNetwork& net, const Tensor& stacked);
Tensor fuse(FusionNetwork& net, const ModalityBundle& bundle);

struct MflConfig {
  std::array<double, 4> alpha{0.5, 0.25, 0.15, 0.1};
  double tau_title = 0.07;
  double tau_fus = 0.07;
  double sigma = 0.05;
  // Negatives per anchor in the perturbation contrast; unset means N-1.
  std::optional<std::size_t> negatives_k;
  // Above this batch size the consistency term samples pair_budget_factor·N pairs.
  std::size_t exhaustive_pair_limit = 32;
  std::size_t pair_budget_factor = 4;
  std::size_t min_title_tokens = 3;

  void validate() const;
};

/// Title-anchored InfoNCE: mean_i −log softmax_j(s(z_i, t_j)/τ)[i].
Var loss_title(Var z, Var t, double tau);

/// (1/N) Σ ‖z_i − c_i‖².
Var loss_cf(Var z, Var c);

/// Mean over pairs of (cos(z_i, z_j) − cos(t_i, t_j))².
Var loss_cons(Var z, Var t, std::span<const std::pair<std::size_t, std::size_t>> pairs);

/// Perturbation contrast. For anchor z_i the positive is z_i + ε and the
/// negatives are K other in-batch vectors, each with its own independent
/// ε ~ N(0, σ²I). Denominator covers the positive and the K negatives.
Var loss_fus_cl(Var z, double sigma, double tau, std::size_t negatives_k, std::mt19937_64& rng);

inline constexpr std::array<const char*, 4> kMflComponentNames{"title", "cf", "cons", "fus_cl"};

// α-weighted sum of the four components; a non-finite component is an error naming it.
Var loss_total(std::span<const Var, 4> components, const std::array<double, 4>& alpha);
double loss_total(const std::array<double, 4>& components, const std::array<double, 4>& alpha);

// All unordered pairs when n ≤ limit, otherwise `budget` uniform pairs with i ≠ j.
std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::size_t n, std::size_t limit,
                                                              std::size_t budget,
                                                              std::mt19937_64& rng);

struct TitleInfo {
  std::span<const double> title_emb;
  std::size_t token_count = 0;
};

// Items admitted to the title-driven terms: nonzero title embedding and enough tokens.
std::vector<bool> filter_title_quality(std::span<const TitleInfo> items, std::size_t min_tokens);

/// A batch of items for the joint objective.
struct MflBatch {
  Tensor stacked;                 // N×(M·d)
  Tensor titles;                  // N×d
  Tensor cf;                      // N×d
  std::vector<bool> title_ok;     // admitted to title/cons terms
  std::vector<bool> cf_ok;        // has a CF embedding (not cold-start)
};

struct MflLossValues {
  std::array<double, 4> components{};  // NaN for a skipped term
  std::array<double, 4> weights{};     // effective α after renormalization
  double total = 0.0;
};

struct MflObjective {
  Var total;
  MflLossValues values;
};

/// Alpha-weighted joint objective over one batch. Terms that cannot be formed
/// (fewer than two admitted titles, N = 1, no CF rows) are dropped and the
/// remaining α renormalized to the original total weight.
MflObjective mfl_objective(Tape& tape, FusionNetwork& net, const MflBatch& batch,
                           const MflConfig& config, std::mt19937_64& rng);

}  // namespace mufasa
