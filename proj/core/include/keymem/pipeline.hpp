#pragma once

#include <cstddef>
#include <vector>

#include "keymem/classifier.hpp"
#include "keymem/encoder.hpp"
#include "keymem/probe.hpp"
#include "keymem/rerank.hpp"
#include "keymem/retrieval.hpp"

namespace keymem {

// Everything needed to run one record through encode, probe, retrieve,
// rerank and the head. Ablation switches zero-fill a disabled source's half
// of every fused vector, so every variant shares one head shape.
struct PipelineConfig {
    EncoderConfig encoder;
    std::size_t chunk_len = 8;
    std::size_t top_k = 4;
    std::size_t ca_heads = 2;
    std::size_t head_hidden = 32;
    ProbeStrategy probe;
    Similarity similarity = Similarity::kDot;
    bool use_doc = true;
    bool use_graph = true;
    bool use_retrieval = true;

    // Fixed feature slots: the most probe windows any max-length record can
    // produce. Records with fewer windows leave trailing slots zero.
    std::size_t n_probe_max() const {
        return (encoder.max_seq_len + chunk_len - 1) / chunk_len == 0
                   ? 0
                   : (encoder.max_seq_len + chunk_len - 1) / chunk_len - 1;
    }
    HeadConfig head_config() const;
    void validate() const;
};

struct PipelineParams {
    EncoderParams encoder;
    CrossAttnParams cross_attn;  // shared by the document and graph sides
    HeadParams head;
};

PipelineParams init_pipeline(const PipelineConfig& config, Rng& rng,
                             bool symmetric_head = true);
PipelineParams zero_like(const PipelineParams& params);
std::vector<TensorRef> pipeline_refs(PipelineParams& params);

struct PipelineMemories {
    KeyValueMemory doc;
    KeyValueMemory graph;
};

struct WindowTrace {
    Window window;
    ProbeQuery probe;
    RetrievalResult doc_hits, graph_hits;
    CrossAttnCache doc_ca, graph_ca;
    Vec doc_vec, graph_vec;  // cross-attention outputs before pooling
    FusedKnowledge fused;
};

struct PipelineCache {
    EncoderActivations enc;
    WindowPlan plan;
    std::vector<WindowTrace> windows;
    HeadCache head;
    Vec features;
};

// Freezes the discrete and stop-gradient parts of the forward pass: probe
// weights and retrieved row indices per probe window. With a frozen
// selection the pipeline is a smooth function of its parameters, which is
// the function the analytic backward differentiates.
struct FrozenWindow {
    Vec weights;
    std::vector<std::size_t> doc_rows, graph_rows;
};
struct FrozenSelection {
    std::vector<FrozenWindow> windows;
};

FrozenSelection capture_selection(const PipelineParams& params, const PipelineConfig& config,
                                  const PipelineMemories& memories, const TokenSequence& input);

Vec pipeline_features(const PipelineParams& params, const PipelineConfig& config,
                      const PipelineMemories& memories, const TokenSequence& input,
                      PipelineCache* cache = nullptr, const FrozenSelection* frozen = nullptr,
                      const DropoutPlan* dropout = nullptr);

double pipeline_loss(const PipelineParams& params, const PipelineConfig& config,
                     const PipelineMemories& memories, const TokenSequence& input, int label,
                     PipelineCache* cache = nullptr, const FrozenSelection* frozen = nullptr,
                     const DropoutPlan* dropout = nullptr);

// Runs forward then backward, accumulating into grads. Memory keys/values
// are frozen content and receive no gradient.
double pipeline_loss_backward(const PipelineParams& params, const PipelineConfig& config,
                              const PipelineMemories& memories, const TokenSequence& input,
                              int label, PipelineParams& grads,
                              const FrozenSelection* frozen = nullptr,
                              const DropoutPlan* dropout = nullptr);

// P(y = 1), dropout off.
double pipeline_predict(const PipelineParams& params, const PipelineConfig& config,
                        const PipelineMemories& memories, const TokenSequence& input);

}  // namespace keymem
