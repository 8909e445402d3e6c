#include <random>

#include <benchmark/benchmark.h>

#include "mufasa/sal.hpp"

namespace {

using namespace mufasa;

constexpr std::size_t kDim = 32;

Tensor history(std::size_t length) {
  std::mt19937_64 rng(length);
  std::normal_distribution<double> n(0.0, 1.0);
  Tensor h(length, kDim);
  for (double& v : h.values()) v = n(rng);
  return h;
}

// Three-head sparse encoder: window, block and selective attention plus the gate.
void BM_SparseEncoder(benchmark::State& state) {
  const auto length = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(7);
  SalParams params = SalParams::create(kDim, rng);
  const Tensor h = history(length);
  SalConfig config;
  std::size_t pairs = 0;
  for (auto _ : state) {
    Tape tape;
    UserEncoding enc = encode_user(tape, tape.constant(h), params, config);
    benchmark::DoNotOptimize(enc.user.value().values().data());
    pairs = tape.counters().score_pairs;
  }
  state.counters["score_pairs"] = static_cast<double>(pairs);
}

// Dense single-query attention from h_L over the whole sequence.
void BM_DenseAttention(benchmark::State& state) {
  const auto length = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(7);
  AttentionHead head = AttentionHead::create("dense", kDim, rng);
  const Tensor h = history(length);
  std::size_t pairs = 0;
  for (auto _ : state) {
    Tape tape;
    Var hv = tape.constant(h);
    Var q = matmul(slice_rows(hv, length - 1, length), tape.parameter(head.query));
    AttentionResult r = attend(q, hv, tape.parameter(head.key), tape.parameter(head.value));
    benchmark::DoNotOptimize(r.output.value().values().data());
    pairs = tape.counters().score_pairs;
  }
  state.counters["score_pairs"] = static_cast<double>(pairs);
}

// Forward and backward through the sparse encoder, as in one training step.
void BM_SparseEncoderBackward(benchmark::State& state) {
  const auto length = static_cast<std::size_t>(state.range(0));
  std::mt19937_64 rng(7);
  SalParams params = SalParams::create(kDim, rng);
  const Tensor h = history(length);
  SalConfig config;
  const auto ps = params.parameters();
  for (auto _ : state) {
    zero_grads(ps);
    Tape tape;
    tape.backward(sum(encode_user(tape, tape.constant(h), params, config).user));
  }
}

}  // namespace

BENCHMARK(BM_SparseEncoder)->RangeMultiplier(2)->Range(40, 1280);
BENCHMARK(BM_DenseAttention)->RangeMultiplier(2)->Range(40, 1280);
BENCHMARK(BM_SparseEncoderBackward)->RangeMultiplier(2)->Range(40, 640);
BENCHMARK_MAIN();
