#include "keymem/retrieval.hpp"

#include <algorithm>
#include <stdexcept>

namespace keymem {

WindowPlan plan_windows(std::size_t seq_len, std::size_t chunk_len) {
    if (chunk_len < 2) {
        throw std::invalid_argument("plan_windows: chunk_len must be >= 2");
    }
    if (seq_len == 0) {
        throw std::invalid_argument("plan_windows: empty sequence");
    }
    WindowPlan plan;
    plan.chunk_len = chunk_len;
    plan.seq_len = seq_len;
    const std::size_t n_windows = (seq_len + chunk_len - 1) / chunk_len;
    plan.padded_len = n_windows * chunk_len;
    plan.windows.reserve(n_windows);
    for (std::size_t w = 0; w < n_windows; ++w) {
        plan.windows.push_back({w * chunk_len, (w + 1) * chunk_len});
    }
    if (n_windows >= 2) {
        plan.probe_windows.reserve(n_windows - 1);
        for (std::size_t w = 0; w + 1 < n_windows; ++w) {
            std::vector<std::size_t> idx;
            idx.reserve(chunk_len);
            idx.push_back(plan.windows[w].end - 1);
            for (std::size_t j = 0; j + 1 < chunk_len; ++j) {
                idx.push_back(plan.windows[w + 1].begin + j);
            }
            plan.probe_windows.push_back(std::move(idx));
        }
    }
    return plan;
}

Window gather_window(const Matrix& h, const std::vector<std::size_t>& indices) {
    if (indices.empty()) {
        throw std::invalid_argument("gather_window: empty index list");
    }
    Window w;
    w.vectors = Matrix(indices.size(), h.cols, 0.0);
    w.valid_mask.assign(indices.size(), 0);
    for (std::size_t j = 0; j < indices.size(); ++j) {
        if (indices[j] < h.rows) {
            std::copy_n(h.row(indices[j]).data(), h.cols, w.vectors.row(j).data());
            w.valid_mask[j] = 1;
        }
    }
    return w;
}

Similarity parse_similarity(const std::string& name) {
    if (name == "dot") return Similarity::kDot;
    if (name == "cosine") return Similarity::kCosine;
    throw std::invalid_argument("unknown similarity: " + name);
}

namespace {

struct Scored {
    double score;
    std::size_t index;
};

// True when a ranks strictly ahead of b.
bool better(const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
}

}  // namespace

RetrievalResult top_k(std::span<const double> query, const KeyValueMemory& memory, std::size_t k,
                      Similarity sim) {
    if (memory.size() == 0) {
        throw std::invalid_argument("top_k: empty memory");
    }
    if (k == 0) {
        throw std::invalid_argument("top_k: k must be >= 1");
    }
    if (query.size() != memory.keys.cols) {
        throw std::invalid_argument("top_k: query dimension " + std::to_string(query.size()) +
                                    " does not match key dimension " +
                                    std::to_string(memory.keys.cols));
    }
    const std::size_t m = memory.size();
    const std::size_t keep = std::min(k, m);
    const double query_norm = sim == Similarity::kCosine ? l2_norm(query) : 0.0;

    // Heap ordered with the worst kept candidate on top. Scanning in index
    // order means an incoming tie never displaces a stored entry, which is
    // exactly the lowest-index tie-break.
    std::vector<Scored> heap;
    heap.reserve(keep);
    for (std::size_t i = 0; i < m; ++i) {
        double score = dot(query, memory.keys.row(i));
        if (sim == Similarity::kCosine) {
            const double kn = l2_norm(memory.keys.row(i));
            score = (query_norm < 1e-12 || kn < 1e-12) ? 0.0 : score / (query_norm * kn);
        }
        const Scored cand{score, i};
        if (heap.size() < keep) {
            heap.push_back(cand);
            std::push_heap(heap.begin(), heap.end(), better);
        } else if (better(cand, heap.front())) {
            std::pop_heap(heap.begin(), heap.end(), better);
            heap.back() = cand;
            std::push_heap(heap.begin(), heap.end(), better);
        }
    }
    std::sort(heap.begin(), heap.end(), better);

    RetrievalResult out;
    out.indices.reserve(keep);
    out.scores.reserve(keep);
    out.keys = Matrix(keep, memory.keys.cols);
    out.values = Matrix(keep, memory.values.cols);
    for (std::size_t r = 0; r < keep; ++r) {
        out.indices.push_back(heap[r].index);
        out.scores.push_back(heap[r].score);
        std::copy_n(memory.keys.row(heap[r].index).data(), memory.keys.cols,
                    out.keys.row(r).data());
        std::copy_n(memory.values.row(heap[r].index).data(), memory.values.cols,
                    out.values.row(r).data());
    }
    return out;
}

RetrievalResult top_k(const ProbeQuery& query, const KeyValueMemory& memory, std::size_t k,
                      Similarity sim) {
    return top_k(std::span<const double>(query.vector), memory, k, sim);
}

}  // namespace keymem
