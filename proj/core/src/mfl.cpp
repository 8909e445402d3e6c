#include "mufasa/mfl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include "mufasa/error.hpp"

namespace mufasa {

namespace {

Tensor random_normal(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(rows, cols);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

Tensor gather(const Tensor& src, std::span<const std::size_t> rows) {
  Tensor out(rows.size(), src.cols());
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(src.row_span(rows[i]).begin(), src.cols(), out.row_span(i).begin());
  return out;
}

}  // namespace

Tensor stack_bundles(std::span<const ModalityBundle> bundles, std::size_t modalities,
                     std::size_t dim) {
  Tensor out(bundles.size(), modalities * dim);
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    const Tensor& f = bundles[i].features;
    if (f.rows() != modalities || f.cols() != dim) {
      fail(ErrorCode::kDimension,
           fmt::format("item '{}' has modality stack {}, expected {}", bundles[i].item_id,
                       f.shape_string(), shape_string(modalities, dim)));
    }
    std::copy(f.values().begin(), f.values().end(), out.row_span(i).begin());
  }
  return out;
}

FusionNetwork FusionNetwork::create(std::size_t modalities, std::size_t dim, std::mt19937_64& rng) {
  if (modalities == 0 || dim == 0) fail(ErrorCode::kConfig, "fusion network needs M, d >= 1");
  FusionNetwork net;
  net.modalities = modalities;
  net.dim = dim;
  const std::size_t in = modalities * dim;
  const std::size_t hidden = 2 * dim;
  net.w_hidden = Parameter("fusion.w_hidden",
                           random_normal(in, hidden, 1.0 / std::sqrt(static_cast<double>(in)), rng));
  net.b_hidden = Parameter("fusion.b_hidden", Tensor(1, hidden));
  net.w_out = Parameter("fusion.w_out",
                        random_normal(hidden, dim, 1.0 / std::sqrt(static_cast<double>(hidden)), rng));
  net.b_out = Parameter("fusion.b_out", Tensor(1, dim));
  return net;
}

std::vector<Parameter*> FusionNetwork::parameters() { return {&w_hidden, &b_hidden, &w_out, &b_out}; }

Var fuse(Tape& tape, FusionNetwork& net, Var stacked) {
  if (stacked.cols() != net.modalities * net.dim) {
    fail(ErrorCode::kDimension,
         fmt::format("fusion input width {} != M·d = {}", stacked.cols(), net.modalities * net.dim));
  }
  Var hidden = tanh(add(matmul(stacked, tape.parameter(net.w_hidden)), tape.parameter(net.b_hidden)));
  return add(matmul(hidden, tape.parameter(net.w_out)), tape.parameter(net.b_out));
}

Tensor fuse(FusionNetwork& net, const Tensor& stacked) {
  Tape tape;
  return fuse(tape, net, tape.constant(stacked)).value();
}

Tensor fuse(FusionNetwork& net, const ModalityBundle& bundle) {
  const ModalityBundle one[] = {bundle};
  return fuse(net, stack_bundles(one, net.modalities, net.dim));
}

void MflConfig::validate() const {
  for (std::size_t k = 0; k < alpha.size(); ++k) {
    if (!(alpha[k] >= 0.0) || !std::isfinite(alpha[k])) {
      fail(ErrorCode::kConfig, fmt::format("alpha[{}] must be finite and >= 0", k));
    }
  }
  if (!(tau_title > 0.0) || !(tau_fus > 0.0)) fail(ErrorCode::kConfig, "temperatures must be > 0");
  if (!(sigma >= 0.0)) fail(ErrorCode::kConfig, "sigma must be >= 0");
  if (negatives_k && *negatives_k < 1) fail(ErrorCode::kConfig, "negatives_k must be >= 1");
  if (pair_budget_factor < 1) fail(ErrorCode::kConfig, "pair_budget_factor must be >= 1");
}

Var loss_title(Var z, Var t, double tau) {
  const std::size_t n = z.rows();
  if (n < 2) fail(ErrorCode::kInsufficientNegatives, "title contrast needs N >= 2");
  if (t.rows() != n || t.cols() != z.cols()) {
    fail(ErrorCode::kDimension, fmt::format("title contrast shapes {} vs {}",
                                            z.value().shape_string(), t.value().shape_string()));
  }
  Var sims = matmul(normalize_rows(z), transpose(normalize_rows(t)));
  std::vector<std::size_t> diag(n);
  std::iota(diag.begin(), diag.end(), 0);
  return cross_entropy_rows(scale(sims, 1.0 / tau), diag);
}

Var loss_cf(Var z, Var c) {
  if (!z.value().same_shape(c.value())) {
    fail(ErrorCode::kDimension, fmt::format("cf alignment shapes {} vs {}",
                                            z.value().shape_string(), c.value().shape_string()));
  }
  if (z.rows() == 0) fail(ErrorCode::kEmptySample, "cf alignment over an empty batch");
  return scale(sum(square(sub(z, c))), 1.0 / static_cast<double>(z.rows()));
}

Var loss_cons(Var z, Var t, std::span<const std::pair<std::size_t, std::size_t>> pairs) {
  if (pairs.empty()) fail(ErrorCode::kEmptySample, "consistency term needs at least one pair");
  if (!z.value().same_shape(t.value())) {
    fail(ErrorCode::kDimension, fmt::format("consistency shapes {} vs {}", z.value().shape_string(),
                                            t.value().shape_string()));
  }
  std::vector<std::size_t> lhs, rhs;
  lhs.reserve(pairs.size());
  rhs.reserve(pairs.size());
  for (auto [i, j] : pairs) {
    if (i == j) fail(ErrorCode::kEmptySample, fmt::format("self pair ({}, {})", i, j));
    lhs.push_back(i);
    rhs.push_back(j);
  }
  Var zn = normalize_rows(z);
  Var tn = normalize_rows(t);
  Var cz = row_dot(gather_rows(zn, lhs), gather_rows(zn, rhs));
  Var ct = row_dot(gather_rows(tn, lhs), gather_rows(tn, rhs));
  return mean(square(sub(cz, ct)));
}

Var loss_fus_cl(Var z, double sigma, double tau, std::size_t negatives_k, std::mt19937_64& rng) {
  const std::size_t n = z.rows();
  const std::size_t d = z.cols();
  if (negatives_k < 1 || negatives_k + 1 > n) {
    fail(ErrorCode::kInsufficientNegatives,
         fmt::format("perturbation contrast with K = {} needs N >= K + 1, got N = {}", negatives_k, n));
  }
  const std::size_t width = negatives_k + 1;
  std::vector<std::size_t> anchors;
  std::vector<std::size_t> candidates;
  anchors.reserve(n * width);
  candidates.reserve(n * width);
  std::vector<std::size_t> others;
  for (std::size_t i = 0; i < n; ++i) {
    others.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) others.push_back(j);
    if (negatives_k < others.size()) {
      // partial Fisher-Yates for K distinct negatives
      for (std::size_t k = 0; k < negatives_k; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, others.size() - 1);
        std::swap(others[k], others[pick(rng)]);
      }
      others.resize(negatives_k);
    }
    anchors.insert(anchors.end(), width, i);
    candidates.push_back(i);
    candidates.insert(candidates.end(), others.begin(), others.end());
  }
  Tensor noise(n * width, d);
  if (sigma > 0.0) {
    std::normal_distribution<double> eps(0.0, sigma);
    for (double& v : noise.values()) v = eps(rng);
  }
  Tape& tape = z.tape();
  Var perturbed = normalize_rows(add(gather_rows(z, candidates), tape.constant(std::move(noise))));
  Var anchor = normalize_rows(gather_rows(z, anchors));
  Var logits = scale(reshape(row_dot(anchor, perturbed), n, width), 1.0 / tau);
  const std::vector<std::size_t> positive(n, 0);
  return cross_entropy_rows(logits, positive);
}

Var loss_total(std::span<const Var, 4> components, const std::array<double, 4>& alpha) {
  Var total;
  for (std::size_t k = 0; k < 4; ++k) {
    const double v = components[k].value().item();
    if (!std::isfinite(v)) {
      fail(ErrorCode::kNonFinite, fmt::format("loss component '{}' is not finite ({})",
                                              kMflComponentNames[k], v));
    }
    Var term = scale(components[k], alpha[k]);
    total = total.valid() ? add(total, term) : term;
  }
  return total;
}

double loss_total(const std::array<double, 4>& components, const std::array<double, 4>& alpha) {
  double total = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    if (!std::isfinite(components[k])) {
      fail(ErrorCode::kNonFinite, fmt::format("loss component '{}' is not finite ({})",
                                              kMflComponentNames[k], components[k]));
    }
    total += alpha[k] * components[k];
  }
  return total;
}

std::vector<std::pair<std::size_t, std::size_t>> sample_pairs(std::size_t n, std::size_t limit,
                                                              std::size_t budget,
                                                              std::mt19937_64& rng) {
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  if (n < 2) return pairs;
  if (n <= limit) {
    pairs.reserve(n * (n - 1) / 2);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
    return pairs;
  }
  std::uniform_int_distribution<std::size_t> first(0, n - 1);
  std::uniform_int_distribution<std::size_t> second(0, n - 2);
  pairs.reserve(budget);
  for (std::size_t p = 0; p < budget; ++p) {
    const std::size_t i = first(rng);
    std::size_t j = second(rng);
    if (j >= i) ++j;
    pairs.emplace_back(i, j);
  }
  return pairs;
}

std::vector<bool> filter_title_quality(std::span<const TitleInfo> items, std::size_t min_tokens) {
  std::vector<bool> admitted(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& t = items[i];
    const bool present = !t.title_emb.empty() && l2_norm(t.title_emb) > 0.0;
    admitted[i] = present && t.token_count >= min_tokens;
  }
  return admitted;
}

MflObjective mfl_objective(Tape& tape, FusionNetwork& net, const MflBatch& batch,
                           const MflConfig& config, std::mt19937_64& rng) {
  const std::size_t n = batch.stacked.rows();
  if (n == 0) fail(ErrorCode::kEmptySample, "empty MFL batch");
  Var z = fuse(tape, net, tape.constant(batch.stacked));

  std::vector<std::size_t> titled, with_cf;
  for (std::size_t i = 0; i < n; ++i) {
    if (batch.title_ok[i]) titled.push_back(i);
    if (batch.cf_ok[i]) with_cf.push_back(i);
  }

  std::array<Var, 4> terms;
  if (titled.size() >= 2) {
    Var zt = gather_rows(z, titled);
    Var tt = tape.constant(gather(batch.titles, titled));
    terms[0] = loss_title(zt, tt, config.tau_title);
    const auto pairs = sample_pairs(titled.size(), config.exhaustive_pair_limit,
                                    config.pair_budget_factor * titled.size(), rng);
    terms[2] = loss_cons(zt, tt, pairs);
  }
  if (!with_cf.empty()) {
    terms[1] = loss_cf(gather_rows(z, with_cf), tape.constant(gather(batch.cf, with_cf)));
  }
  if (n >= 2) {
    const std::size_t k = std::min(config.negatives_k.value_or(n - 1), n - 1);
    terms[3] = loss_fus_cl(z, config.sigma, config.tau_fus, k, rng);
  } else {
    spdlog::warn("MFL batch of size 1: contrastive terms skipped, weights renormalized");
  }

  double present_weight = 0.0;
  double total_weight = 0.0;
  for (std::size_t k = 0; k < 4; ++k) {
    total_weight += config.alpha[k];
    if (terms[k].valid()) present_weight += config.alpha[k];
  }
  if (present_weight <= 0.0) fail(ErrorCode::kEmptySample, "no MFL loss term could be formed");

  MflObjective out;
  for (std::size_t k = 0; k < 4; ++k) {
    const bool present = terms[k].valid();
    out.values.weights[k] = present ? config.alpha[k] * total_weight / present_weight : 0.0;
    out.values.components[k] = present ? terms[k].value().item() : std::numeric_limits<double>::quiet_NaN();
    if (!present) terms[k] = tape.constant(Tensor::scalar(0.0));
  }
  out.total = loss_total(std::span<const Var, 4>(terms), out.values.weights);
  out.values.total = out.total.value().item();
  return out;
}

}  // namespace mufasa
