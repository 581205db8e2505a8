// Microbenchmarks for the attention stacks: dense layer vs the
// sketch + sample + sparse pipeline across sequence lengths.
//
//   ./smartbird_bench --benchmark_filter=DenseLayer
//
// The `bench` CLI subcommand produces the same comparison as a CSV with
// median-of-reps timing; these benchmarks are for interactive profiling.

#include <benchmark/benchmark.h>

#include "smartbird/sketch.hpp"
#include "smartbird/sparse_attn.hpp"
#include "smartbird/trainer.hpp"

using namespace smartbird;

namespace {

constexpr int kDim = 256;
constexpr int kHeads = 8;
constexpr int kTinyDim = 4;
constexpr int kTopK = 20;
constexpr int kVocab = 64;

Example bench_example(int n, SplitMix64& rng) {
  Example ex;
  ex.attn_len = n;
  ex.label = 0;
  ex.token_ids.resize(static_cast<size_t>(n));
  for (int& id : ex.token_ids)
    id = rng.uniform_int(Vocab::kNumSpecial, kVocab - 1);
  return ex;
}

}  // namespace

static void BM_DenseLayerFwdBwd(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  SplitMix64 rng(1);
  AttnLayerParams layer = make_attn_layer(kDim, kHeads, rng);
  Tensor x = Tensor::rand_uniform({n, kDim}, -0.5f, 0.5f, rng, true);
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = dense_layer_forward(x, layer, n, 0.0, nullptr, false, nullptr);
    tape.backward(sum(out));
    x.zero_grad();
    benchmark::DoNotOptimize(out.values().data());
  }
}
BENCHMARK(BM_DenseLayerFwdBwd)->Arg(128)->Arg(256)->Arg(512)->Arg(1024);

static void BM_SketchForward(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  SplitMix64 rng(2);
  SketchModel sketch =
      make_sketch_model(kVocab, kTinyDim, 1, 4, n, true, 7);
  sketch.frozen = true;
  Example ex = bench_example(n, rng);
  for (auto _ : state) {
    NoGradScope ng;
    SketchForwardResult f = sketch_forward(sketch, ex, false, 0.0, nullptr,
                                           true);
    benchmark::DoNotOptimize(f.attn.data());
  }
}
BENCHMARK(BM_SketchForward)->Arg(128)->Arg(256)->Arg(512)->Arg(1024);

static void BM_AttentiveSampling(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  SplitMix64 rng(3);
  SketchModel sketch =
      make_sketch_model(kVocab, kTinyDim, 1, 4, n, true, 8);
  Example ex = bench_example(n, rng);
  NoGradScope ng;
  SketchForwardResult f = sketch_forward(sketch, ex, false, 0.0, nullptr, true);
  uint64_t tag = 0;
  for (auto _ : state) {
    auto heads = build_head_indices(f.attn[0], SamplingStrategy::kSquaredInvLog,
                                    kTopK, kHeads, false, 42, ++tag, 0, 0);
    benchmark::DoNotOptimize(heads.data());
  }
}
BENCHMARK(BM_AttentiveSampling)->Arg(128)->Arg(256)->Arg(512)->Arg(1024);

static void BM_SparseLayerFwdBwd(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  SplitMix64 rng(4);
  AttnLayerParams layer = make_attn_layer(kDim, kHeads, rng);
  Tensor x = Tensor::rand_uniform({n, kDim}, -0.5f, 0.5f, rng, true);
  SketchModel sketch =
      make_sketch_model(kVocab, kTinyDim, 1, 4, n, true, 9);
  Example ex = bench_example(n, rng);
  std::vector<IndexMatrix> heads;
  {
    NoGradScope ng;
    SketchForwardResult f =
        sketch_forward(sketch, ex, false, 0.0, nullptr, true);
    heads = build_head_indices(f.attn[0], SamplingStrategy::kSquaredInvLog,
                               kTopK, kHeads, false, 42, 0, 0, 0);
  }
  for (auto _ : state) {
    Tape tape;
    TapeScope scope(tape);
    Tensor out = sparse_layer_forward(x, heads, layer, n, 0.0, nullptr, false);
    tape.backward(sum(out));
    x.zero_grad();
    benchmark::DoNotOptimize(out.values().data());
  }
}
BENCHMARK(BM_SparseLayerFwdBwd)->Arg(128)->Arg(256)->Arg(512)->Arg(1024);

BENCHMARK_MAIN();
