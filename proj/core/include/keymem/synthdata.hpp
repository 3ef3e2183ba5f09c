#pragma once

#include <cstddef>
#include <string>
#include <unordered_map>
#include <vector>

#include "keymem/encoder.hpp"
#include "keymem/rng.hpp"

namespace keymem {

// One knowledge-graph edge. Serialized one per line, tab-separated.
struct Triple {
    std::string head;
    std::string relation;
    std::string tail;

    bool operator==(const Triple&) const = default;
};

struct GeneratorConfig {
    std::size_t vocab_size = 512;
    std::size_t n_patients = 2500;
    std::size_t visits_min = 2, visits_max = 4;
    std::size_t codes_min = 3, codes_max = 5;
    std::size_t n_risk_pairs = 24;     // mortality pair rules
    std::size_t n_readmit_pairs = 24;  // readmission pair rules
    double label_noise = 0.05;
    double mortality_prevalence = 0.1;
    double readmission_prevalence = 0.1;
    long readmission_window_days = 15;  // alpha
    std::size_t n_corpus_docs = 1500;
    std::uint64_t seed = 42;

    void validate() const;
};

// Deterministic symbol table: template words, relations, outcomes, gap
// buckets, pair entities, then the code pool. Ids are line numbers in the
// serialized vocab file.
struct Vocabulary {
    std::vector<std::string> symbols;
    std::unordered_map<std::string, std::size_t> index;

    std::size_t size() const { return symbols.size(); }
    std::size_t id(const std::string& symbol) const;
    bool contains(const std::string& symbol) const { return index.count(symbol) > 0; }

    static Vocabulary build(const GeneratorConfig& config);
    static Vocabulary from_symbols(std::vector<std::string> symbols);
};

struct SyntheticRecord {
    std::string patient_id;
    std::vector<std::vector<std::string>> visits;  // code strings per visit
    std::vector<long> gaps_days;                   // between consecutive visits
    int mortality_label = 0;
    int readmission_label = 0;
    // Provenance: the rule outcomes before label noise.
    int true_mortality = 0;
    int true_readmission = 0;
    std::string split;  // train | dev | test
};

struct CodePair {
    std::string a, b;

    bool operator==(const CodePair&) const = default;
};

struct Dataset {
    GeneratorConfig config;
    Vocabulary vocab;
    std::vector<SyntheticRecord> records;
    std::vector<CodePair> mortality_pairs;
    std::vector<CodePair> readmission_pairs;
    std::vector<Triple> triples;
    std::vector<std::vector<std::string>> corpus;  // one token list per document

    std::vector<const SyntheticRecord*> split_records(const std::string& split) const;
};

// Mortality fires when any planted pair is fully present in the record.
// Readmission additionally needs an inter-visit gap within the window.
// Negatives receive decoy injections (one pair code alone, or codes from two
// different pairs) so single-code frequencies carry no label signal.
Dataset generate(const GeneratorConfig& config);

int derive_mortality(const SyntheticRecord& r, const std::vector<CodePair>& pairs);
int derive_readmission(const SyntheticRecord& r, const std::vector<CodePair>& pairs, long alpha);

struct LabelAudit {
    std::size_t n = 0;
    std::size_t mortality_mismatches = 0;
    std::size_t readmission_mismatches = 0;
};

// Re-derives every label from visits, gaps and the planted rules; mismatches
// against the stored labels are exactly the injected noise flips.
LabelAudit verify_labels(const Dataset& dataset);

// Flattens visits into tokens with a gap-bucket token between visits
// (gap <= alpha reads gap_short, otherwise gap_long).
TokenSequence tokenize_record(const SyntheticRecord& r, const Vocabulary& vocab, long alpha);
TokenSequence tokenize_line(const std::vector<std::string>& tokens, const Vocabulary& vocab);

// gen-data artifact files, all rooted in one directory.
void write_dataset(const Dataset& dataset, const std::string& dir);
Dataset load_dataset(const std::string& dir);

}  // namespace keymem
