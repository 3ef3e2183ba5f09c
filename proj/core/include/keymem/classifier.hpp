#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "keymem/ffn.hpp"
#include "keymem/matrix.hpp"
#include "keymem/rerank.hpp"
#include "keymem/rng.hpp"

namespace keymem {

struct HeadConfig {
    std::size_t d_model = 0;
    std::size_t n_probe_max = 0;  // fixed fused-vector slots, absent ones zero-filled
    std::size_t hidden_dim = 0;
    Activation activation = Activation::kGelu;

    std::size_t input_dim() const { return d_model + n_probe_max * 2 * d_model; }
    void validate() const;
};

// Two affine layers over the assembled feature vector, two logits out.
struct HeadParams {
    HeadConfig config;
    Matrix w1;  // input_dim x hidden_dim
    Vec b1;
    Matrix w2;  // hidden_dim x 2
    Vec b2;
};

// symmetric_output zeroes the final layer so an untrained head predicts
// exactly 0.5; gradient tests pass false to get nonzero output weights.
HeadParams init_head(const HeadConfig& config, Rng& rng, bool symmetric_output = true);
HeadParams zero_like(const HeadParams& params);
std::vector<TensorRef> head_refs(HeadParams& params);

// Mean-pools the valid rows of h, then appends each fused vector in window
// order, zero-filling unused slots. Output length = config.input_dim().
Vec assemble_features(const Matrix& h, const std::vector<std::uint8_t>& valid_mask,
                      const std::vector<FusedKnowledge>& fused, std::size_t n_probe_max);

struct HeadCache {
    Vec features;
    Vec hidden_pre;
    Vec hidden;
    Vec logits;  // 2
};

Vec head_logits(const HeadParams& params, std::span<const double> features,
                HeadCache* cache = nullptr);

// Softmax cross-entropy over the two logits.
double head_loss(const HeadParams& params, std::span<const double> features, int label,
                 HeadCache* cache = nullptr);

// Accumulates parameter gradients and returns the feature gradient.
Vec head_loss_backward(const HeadParams& params, const HeadCache& cache, int label,
                       HeadParams* grads);

// P(y = 1).
double head_predict(const HeadParams& params, std::span<const double> features);

}  // namespace keymem
