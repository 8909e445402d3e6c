#include <random>

#include "mufasa/gradcheck.hpp"
#include "mufasa/mfl.hpp"
#include "mufasa/sal.hpp"

namespace mufasa {

namespace {

constexpr std::size_t kDim = 6;
constexpr std::size_t kLength = 11;
constexpr std::size_t kBatch = 5;

Tensor randn(std::size_t r, std::size_t c, std::mt19937_64& rng, double s = 1.0) {
  std::normal_distribution<double> dist(0.0, s);
  Tensor t(r, c);
  for (double& v : t.values()) v = dist(rng);
  return t;
}

// Scalar probe of a matrix output: Σ out ⊙ R for a fixed random R.
Var probe(Tape& tape, Var out, const Tensor& r) { return sum(mul(out, tape.constant(r))); }

}  // namespace

std::vector<GradCheckReport> gradient_suite(const GradCheckOptions& options, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<GradCheckReport> out;

  Parameter z("z", randn(kBatch, kDim, rng));
  Parameter t("t", randn(kBatch, kDim, rng));
  Parameter c("c", randn(kBatch, kDim, rng));
  const MflConfig mfl;
  const auto pairs = sample_pairs(kBatch, mfl.exhaustive_pair_limit, 0, rng);
  const std::uint64_t noise_seed = rng();
  auto fus = [&](Tape& tape) {
    std::mt19937_64 noise(noise_seed);  // identical perturbations on every evaluation
    return loss_fus_cl(tape.parameter(z), mfl.sigma, mfl.tau_fus, kBatch - 1, noise);
  };

  {
    Parameter* ps[] = {&z, &t};
    out.push_back(check_gradients(
        "loss_title", [&](Tape& tape) { return loss_title(tape.parameter(z), tape.parameter(t), mfl.tau_title); },
        ps, options));
  }
  {
    Parameter* ps[] = {&z, &c};
    out.push_back(check_gradients(
        "loss_cf", [&](Tape& tape) { return loss_cf(tape.parameter(z), tape.parameter(c)); }, ps, options));
  }
  {
    Parameter* ps[] = {&z, &t};
    out.push_back(check_gradients(
        "loss_cons", [&](Tape& tape) { return loss_cons(tape.parameter(z), tape.parameter(t), pairs); }, ps,
        options));
  }
  {
    Parameter* ps[] = {&z};
    out.push_back(check_gradients("loss_fus_cl", fus, ps, options));
  }
  {
    Parameter* ps[] = {&z, &t, &c};
    out.push_back(check_gradients(
        "loss_total",
        [&](Tape& tape) {
          Var zv = tape.parameter(z), tv = tape.parameter(t);
          const std::array<Var, 4> parts{loss_title(zv, tv, mfl.tau_title), loss_cf(zv, tape.parameter(c)),
                                         loss_cons(zv, tv, pairs), fus(tape)};
          return loss_total(std::span<const Var, 4>(parts), mfl.alpha);
        },
        ps, options));
  }

  Parameter history("history", randn(kLength, kDim, rng));
  SalParams sal = SalParams::create(kDim, rng);
  SalConfig sal_cfg;
  sal_cfg.block_size = 3;
  const BlockPartition partition = partition_blocks(kLength, sal_cfg.block_size);
  const Tensor r_out = randn(1, kDim, rng);

  {
    std::vector<Parameter*> ps{&history};
    for (Parameter* p : sal.window.parameters()) ps.push_back(p);
    out.push_back(check_gradients(
        "window_attention",
        [&](Tape& tape) {
          return probe(tape, window_attention(tape, tape.parameter(history), 4, sal.window, sal_cfg.window_mode).z,
                       r_out);
        },
        ps, options));
  }
  {
    const Tensor r_blocks = randn(partition.count(), kDim, rng);
    Parameter* ps[] = {&history, &sal.phi};
    out.push_back(check_gradients(
        "block_aggregation",
        [&](Tape& tape) {
          return probe(tape,
                       aggregate_blocks(tape.parameter(history), partition, tape.parameter(sal.phi),
                                        Aggregator::kMeanLinear),
                       r_blocks);
        },
        ps, options));
  }
  {
    std::vector<Parameter*> ps{&history, &sal.phi};
    for (Parameter* p : sal.block.parameters()) ps.push_back(p);
    out.push_back(check_gradients(
        "block_attention",
        [&](Tape& tape) {
          return probe(tape,
                       block_attention(tape, tape.parameter(history), partition, sal.block,
                                       tape.parameter(sal.phi), sal_cfg.aggregator)
                           .z,
                       r_out);
        },
        ps, options));
  }
  {
    const std::vector<std::size_t> selected{0, 2};
    std::vector<Parameter*> ps{&history};
    for (Parameter* p : sal.selective.parameters()) ps.push_back(p);
    out.push_back(check_gradients(
        "selective_attention",
        [&](Tape& tape) {
          Var h = tape.parameter(history);
          return probe(tape, selective_attention(tape, h, gather_core_items(h, partition, selected), sal.selective).z,
                       r_out);
        },
        ps, options));
  }
  {
    Parameter zs("z_short", randn(1, kDim, rng));
    Parameter zl("z_long", randn(1, kDim, rng));
    Parameter zc("z_core", randn(1, kDim, rng));
    sal.gate_b.value = randn(1, 3, rng, 0.5);
    Parameter* ps[] = {&zs, &zl, &zc, &sal.gate_w, &sal.gate_b};
    out.push_back(check_gradients(
        "gate",
        [&](Tape& tape) {
          return probe(tape,
                       gate_fuse(tape, tape.parameter(zs), tape.parameter(zl), tape.parameter(zc), sal).user,
                       r_out);
        },
        ps, options));
  }
  {
    const std::size_t lengths[] = {kLength, 9, 6, 4};
    std::vector<Tensor> histories;
    for (std::size_t l : lengths) histories.push_back(randn(l, kDim, rng));
    const Tensor targets = randn(std::size(lengths), kDim, rng);
    out.push_back(check_gradients(
        "sal_contrastive",
        [&](Tape& tape) {
          std::vector<Var> users;
          for (const Tensor& h : histories) users.push_back(encode_user(tape, tape.constant(h), sal, sal_cfg).user);
          return sal_contrastive_loss(concat_rows(users), project_items(tape.constant(targets), sal), sal_cfg.tau);
        },
        sal.parameters(), options));
  }
  return out;
}

}  // namespace mufasa
