#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "keymem/encoder.hpp"
#include "keymem/knowledge.hpp"
#include "keymem/pipeline.hpp"
#include "keymem/synthdata.hpp"

namespace keymem {

// Checkpoint or dataset produced under a different configuration than the
// one now in effect. The CLI maps this to its own exit code.
struct ConfigMismatchError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainConfig {
    double learning_rate = 1e-3;
    double adam_epsilon = 1e-8;
    double weight_decay = 0.01;
    std::size_t batch_size = 16;
    std::size_t max_epochs = 6;
    std::size_t patience = 3;
    bool use_dropout = false;
    std::uint64_t seed = 1;

    void validate() const;
};

// Everything one run needs, resolvable from a single JSON file. Missing keys
// fall back to the defaults below, which are sized for a single laptop core.
struct RunConfig {
    GeneratorConfig generator;
    EncoderConfig encoder;
    InfusionConfig doc_infusion;
    InfusionConfig graph_infusion;
    TrainConfig train;
    std::string task = "mortality";
    std::string variant = "k2k";
    std::string probe = "mahalanobis-diag";
    std::string similarity = "dot";
    std::size_t chunk_len = 8;
    std::size_t top_k = 4;
    int memory_layer = -1;
    std::size_t lora_rank = 4;
    std::size_t ca_heads = 2;
    std::size_t head_hidden = 32;

    void validate() const;
    std::size_t resolved_layer() const;
};

RunConfig default_run_config();
RunConfig parse_run_config(const std::string& json_text);
RunConfig load_run_config(const std::filesystem::path& path);

// Canonical resolved form: every field present, keys sorted. Equal configs
// serialize to equal strings, which is what the hashes are taken over.
std::string run_config_json(const RunConfig& cfg);

std::uint64_t fnv1a64(std::string_view s);
std::string hash_hex(std::uint64_t h);

// Hash of the full resolved config (provenance) and of just the generator
// section (dataset compatibility; ablation overrides leave it unchanged).
std::string config_hash(const RunConfig& cfg);
std::string data_hash(const RunConfig& cfg);
std::string data_hash(const GeneratorConfig& cfg);

struct VariantFlags {
    bool use_retrieval;
    bool use_doc;
    bool use_graph;
};

VariantFlags parse_variant(const std::string& name);

PipelineConfig make_pipeline_config(const RunConfig& cfg);

}  // namespace keymem
