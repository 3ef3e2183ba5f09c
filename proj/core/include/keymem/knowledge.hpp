#pragma once

#include <string>
#include <vector>

#include "keymem/encoder.hpp"
#include "keymem/optim.hpp"
#include "keymem/synthdata.hpp"

namespace keymem {

// Fixed-template realization: "The relationship between <head> and <tail> is
// <relation>". Injective over distinct triples and reversible.
std::vector<std::string> linearize(const Triple& t);
Triple parse_linearized(const std::vector<std::string>& tokens);

struct InfusionConfig {
    std::size_t epochs = 4;
    std::size_t batch_size = 16;
    AdamWConfig optimizer;
    double holdout_fraction = 0.1;
    std::uint64_t seed = 42;
};

struct InfusionReport {
    double initial_loss = 0.0;
    double final_loss = 0.0;
    double holdout_perplexity_before = 0.0;
    double holdout_perplexity_after = 0.0;
    std::vector<double> epoch_losses;
};

// Mean per-document next-token loss, exponentiated.
double corpus_perplexity(const EncoderParams& params, const std::vector<TokenSequence>& docs,
                         const LoraSet* adapters = nullptr);

// Next-token training of the whole encoder on the document corpus. A holdout
// slice is carved off for the perplexity comparison. Zero epochs leave the
// parameters untouched.
InfusionReport train_document_memory(EncoderParams& params,
                                     const std::vector<std::vector<std::string>>& corpus,
                                     const Vocabulary& vocab, const InfusionConfig& config);

// LoRA training on linearized triples with every base tensor frozen.
LoraSet train_graph_memory(const EncoderParams& base, const std::vector<Triple>& triples,
                           const Vocabulary& vocab, std::size_t rank,
                           const InfusionConfig& config, InfusionReport* report = nullptr);

}  // namespace keymem
