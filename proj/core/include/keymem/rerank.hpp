#pragma once

#include <span>

#include "keymem/matrix.hpp"
#include "keymem/retrieval.hpp"
#include "keymem/rng.hpp"

namespace keymem {

// Projections for reranking retrieved rows with the probe vector as the sole
// query. Heads are concatenated directly; there is no output projection.
struct CrossAttnParams {
    Matrix wq, wk, wv;  // each d x d
    std::size_t n_heads = 1;
    double dropout_rate = 0.0;

    std::size_t d() const { return wq.rows; }
    std::size_t head_dim() const { return d() / n_heads; }
    void validate() const;
};

CrossAttnParams init_cross_attn(std::size_t d, std::size_t n_heads, Rng& rng,
                                double dropout_rate = 0.0);
CrossAttnParams zero_like(const CrossAttnParams& p);

struct CrossAttnCache {
    Vec query;          // input probe vector
    Matrix keys;        // k x d input rows
    Matrix values;      // k x d input rows
    Vec q_proj;         // d
    Matrix k_proj;      // k x d
    Matrix v_proj;      // k x d
    Matrix weights;     // n_heads x k, softmax output before dropout
    Matrix drop;        // n_heads x k multipliers; empty when dropout off
};

// Single-query multi-head attention over the retrieved keys/values. Per-head
// weights sum to 1. Dropout applies to attention weights only and only when
// a plan is given.
Vec cross_attend(const CrossAttnParams& params, std::span<const double> query,
                 const RetrievalResult& retrieved, CrossAttnCache* cache = nullptr,
                 const DropoutPlan* dropout = nullptr);

// Gradients for the projections and the probe vector. The retrieved key and
// value rows are frozen memory content and receive no gradient.
void cross_attend_backward(const CrossAttnParams& params, const CrossAttnCache& cache,
                           std::span<const double> d_out, CrossAttnParams* grads, Vec* d_query);

// L2 normalization; vectors with norm under 1e-12 pass through unchanged.
Vec pool(std::span<const double> v);
Vec pool_backward(std::span<const double> v, std::span<const double> d_out);

struct FusedKnowledge {
    Vec vector;      // [doc_part ; graph_part], length 2d
    Vec doc_part;    // pooled document-attended vector, length d
    Vec graph_part;  // pooled graph-attended vector, length d
};

// Document half first, always.
FusedKnowledge fuse(std::span<const double> doc, std::span<const double> graph);

// Splits the fused gradient and backs through each pool.
void fuse_backward(std::span<const double> doc, std::span<const double> graph,
                   std::span<const double> d_vector, Vec& d_doc, Vec& d_graph);

}  // namespace keymem
