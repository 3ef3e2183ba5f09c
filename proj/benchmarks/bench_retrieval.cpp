#include <benchmark/benchmark.h>

#include "keymem/retrieval.hpp"
#include "keymem/rng.hpp"

namespace {

keymem::KeyValueMemory random_memory(std::size_t m, std::size_t d, std::uint64_t seed) {
    keymem::Rng rng(seed);
    keymem::KeyValueMemory mem;
    mem.keys = keymem::Matrix(m, d);
    mem.values = keymem::Matrix(m, d);
    for (double& v : mem.keys.data) v = rng.normal();
    for (double& v : mem.values.data) v = rng.normal();
    return mem;
}

void BM_TopK(benchmark::State& state) {
    const std::size_t m = static_cast<std::size_t>(state.range(0));
    const std::size_t k = static_cast<std::size_t>(state.range(1));
    const std::size_t d = 64;
    const keymem::KeyValueMemory mem = random_memory(m, d, 42);
    keymem::Rng rng(7);
    keymem::Vec query(d);
    for (double& v : query) v = rng.normal();

    for (auto _ : state) {
        keymem::RetrievalResult hits = keymem::top_k(query, mem, k);
        benchmark::DoNotOptimize(hits.scores.data());
    }
    state.SetComplexityN(static_cast<benchmark::IterationCount>(m));
}

void BM_TopKCosine(benchmark::State& state) {
    const std::size_t m = static_cast<std::size_t>(state.range(0));
    const std::size_t d = 64;
    const keymem::KeyValueMemory mem = random_memory(m, d, 42);
    keymem::Rng rng(7);
    keymem::Vec query(d);
    for (double& v : query) v = rng.normal();

    for (auto _ : state) {
        keymem::RetrievalResult hits =
            keymem::top_k(query, mem, 8, keymem::Similarity::kCosine);
        benchmark::DoNotOptimize(hits.scores.data());
    }
}

}  // namespace

BENCHMARK(BM_TopK)
    ->Args({1024, 8})
    ->Args({4096, 8})
    ->Args({16384, 8})
    ->Args({65536, 8})
    ->Args({16384, 2})
    ->Args({16384, 16})
    ->Complexity(benchmark::oN);

BENCHMARK(BM_TopKCosine)->Arg(1024)->Arg(16384);
