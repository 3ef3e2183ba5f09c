#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "keymem/ffn.hpp"
#include "keymem/matrix.hpp"
#include "keymem/probe.hpp"

namespace keymem {

struct IndexRange {
    std::size_t begin = 0;
    std::size_t end = 0;  // half-open

    bool operator==(const IndexRange&) const = default;
};

// Deterministic decomposition of a token sequence into chunk windows and the
// straddling probe windows. The sequence is right-padded to a multiple of
// chunk_len; padded indices are >= seq_len and must be mask-flagged when
// gathering rows.
struct WindowPlan {
    std::size_t chunk_len = 0;
    std::size_t seq_len = 0;
    std::size_t padded_len = 0;
    std::vector<IndexRange> windows;
    std::vector<std::vector<std::size_t>> probe_windows;  // each of length chunk_len

    std::size_t n_probe() const { return probe_windows.size(); }
};

// chunk_len must be >= 2: a probe window is one trailing token plus the next
// window's leading chunk_len - 1 tokens.
WindowPlan plan_windows(std::size_t seq_len, std::size_t chunk_len);

// Rows of h at the given indices; indices past seq_len (padding) become zero
// rows with valid_mask 0.
Window gather_window(const Matrix& h, const std::vector<std::size_t>& indices);

enum class Similarity { kDot, kCosine };

Similarity parse_similarity(const std::string& name);  // "dot" | "cosine"

struct RetrievalResult {
    std::vector<std::size_t> indices;  // distinct memory row indices
    Vec scores;                        // descending
    Matrix keys;                       // k x d, rows copied from the memory
    Matrix values;                     // k x d, paired by position
};

// Exact top-k by similarity score; ties broken toward the lower row index.
// k past the memory size returns every row in score order. Single pass with
// a size-k heap, O(m log k).
RetrievalResult top_k(std::span<const double> query, const KeyValueMemory& memory, std::size_t k,
                      Similarity sim = Similarity::kDot);

RetrievalResult top_k(const ProbeQuery& query, const KeyValueMemory& memory, std::size_t k,
                      Similarity sim = Similarity::kDot);

}  // namespace keymem
