#include <benchmark/benchmark.h>

#include "keymem/config.hpp"
#include "keymem/pipeline.hpp"
#include "keymem/probe.hpp"
#include "keymem/retrieval.hpp"

namespace {

struct Fixture {
    keymem::RunConfig cfg;
    keymem::PipelineConfig pconfig;
    keymem::PipelineParams params;
    keymem::PipelineMemories memories;
    keymem::TokenSequence input;

    explicit Fixture(const std::string& variant) {
        cfg = keymem::default_run_config();
        cfg.variant = variant;
        pconfig = keymem::make_pipeline_config(cfg);
        keymem::Rng rng(3);
        params = keymem::init_pipeline(pconfig, rng);
        const std::size_t layer = cfg.resolved_layer();
        memories.doc =
            keymem::extract_document_memory(params.encoder.blocks[layer].ffn, layer);
        keymem::Rng lora_rng = rng.fork(5);
        const keymem::LoraSet lora =
            keymem::init_lora(cfg.encoder, cfg.lora_rank, lora_rng);
        memories.graph = keymem::extract_graph_memory(lora.layers[layer], layer);

        keymem::Rng tok_rng(9);
        for (std::size_t i = 0; i < cfg.encoder.max_seq_len; ++i) {
            input.token_ids.push_back(tok_rng.uniform_index(cfg.encoder.vocab_size));
            input.attention_mask.push_back(1);
        }
    }
};

void BM_PipelineForward(benchmark::State& state) {
    static const Fixture fx("k2k");
    for (auto _ : state) {
        keymem::Vec features =
            keymem::pipeline_features(fx.params, fx.pconfig, fx.memories, fx.input);
        benchmark::DoNotOptimize(features.data());
    }
}

void BM_PipelineForwardNoRetrieval(benchmark::State& state) {
    static const Fixture fx("no-retrieval");
    for (auto _ : state) {
        keymem::Vec features =
            keymem::pipeline_features(fx.params, fx.pconfig, fx.memories, fx.input);
        benchmark::DoNotOptimize(features.data());
    }
}

void BM_PipelineBackward(benchmark::State& state) {
    static const Fixture fx("k2k");
    for (auto _ : state) {
        keymem::PipelineParams grads = keymem::zero_like(fx.params);
        double loss = keymem::pipeline_loss_backward(fx.params, fx.pconfig, fx.memories,
                                                     fx.input, 1, grads);
        benchmark::DoNotOptimize(loss);
    }
}

void BM_Encode(benchmark::State& state) {
    static const Fixture fx("k2k");
    for (auto _ : state) {
        keymem::Matrix h = keymem::encode(fx.params.encoder, fx.input);
        benchmark::DoNotOptimize(h.data.data());
    }
}

void BM_BuildProbe(benchmark::State& state) {
    static const Fixture fx("k2k");
    const keymem::Matrix h = keymem::encode(fx.params.encoder, fx.input);
    const keymem::WindowPlan plan =
        keymem::plan_windows(fx.input.length(), fx.cfg.chunk_len);
    const keymem::Window w = keymem::gather_window(h, plan.probe_windows.front());
    for (auto _ : state) {
        keymem::ProbeQuery q = keymem::build_probe(w, fx.pconfig.probe);
        benchmark::DoNotOptimize(q.vector.data());
    }
}

}  // namespace

BENCHMARK(BM_PipelineForward);
BENCHMARK(BM_PipelineForwardNoRetrieval);
BENCHMARK(BM_PipelineBackward);
BENCHMARK(BM_Encode);
BENCHMARK(BM_BuildProbe);

BENCHMARK_MAIN();
