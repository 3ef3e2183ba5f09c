#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "keymem/ffn.hpp"
#include "keymem/matrix.hpp"
#include "keymem/rng.hpp"

namespace keymem {

struct EncoderConfig {
    std::size_t vocab_size = 512;
    std::size_t d_model = 64;
    std::size_t n_layers = 4;
    std::size_t n_heads = 4;
    std::size_t d_ff = 256;
    std::size_t max_seq_len = 256;
    double dropout_rate = 0.3;
    double init_std = 0.08;
    Activation activation = Activation::kGelu;

    std::size_t head_dim() const { return d_model / n_heads; }
    void validate() const;
};

struct TokenSequence {
    std::vector<std::size_t> token_ids;
    std::vector<std::uint8_t> attention_mask;  // 1 = real token, 0 = padding

    std::size_t length() const { return token_ids.size(); }
};

struct LayerNormParams {
    Vec gain;
    Vec bias;
};

struct AttentionParams {
    Matrix wq, wk, wv, wo;  // each d_model x d_model, no biases
};

struct EncoderBlockParams {
    LayerNormParams ln1, ln2;  // pre-norm
    AttentionParams attn;
    FfnLayer ffn;
};

struct EncoderParams {
    EncoderConfig config;
    Matrix token_embedding;     // vocab x d_model
    Matrix position_embedding;  // max_seq_len x d_model (learned)
    std::vector<EncoderBlockParams> blocks;
    LayerNormParams ln_final;
    Matrix lm_head;             // d_model x vocab
};

EncoderParams init_encoder(const EncoderConfig& config, Rng& rng);
// Same structure with every tensor zeroed; gradient accumulator.
EncoderParams zero_like(const EncoderParams& params);

// One LoRA adapter per block FFN, applied in order.
struct LoraSet {
    std::vector<LoraAdapter> layers;
    std::size_t rank() const { return layers.empty() ? 0 : layers.front().rank(); }
};

// a-factors gaussian, b-factors zero: the update starts at exactly zero and
// gradients reach both factors after the first step.
LoraSet init_lora(const EncoderConfig& config, std::size_t rank, Rng& rng);
LoraSet zero_like(const LoraSet& set);

std::vector<TensorRef> param_refs(EncoderParams& params);
std::vector<TensorRef> lora_refs(LoraSet& set);

// Forward activations cached for the hand-written backward pass.
struct BlockCache {
    Matrix x_in;
    Matrix ln1_out;
    Vec ln1_mu, ln1_rstd;
    Matrix q, k, v;
    std::vector<Matrix> attn_weights;  // per head, n x n, zero where masked
    std::vector<Matrix> attn_dropout;  // per head, empty when dropout off
    Matrix attn_ctx;                   // concatenated head outputs
    Matrix res1;
    Matrix ln2_out;
    Vec ln2_mu, ln2_rstd;
    Matrix ffn_pre;       // pre-activation
    Matrix ffn_hidden;    // post-activation
    Matrix ffn_dropout;   // empty when dropout off
    Matrix xa1, ha2;      // LoRA intermediates (empty without adapters)
};

struct EncoderActivations {
    TokenSequence input;
    Matrix embedded;
    std::vector<BlockCache> blocks;
    Matrix final_res;  // input to the final layer norm
    Vec lnf_mu, lnf_rstd;
    Matrix output;  // H, n x d_model
};

// Produces one representation row per token, padded rows included but flagged
// by the caller's mask. Deterministic when dropout is null. Throws on ids out
// of vocabulary or input longer than max_seq_len.
Matrix encode(const EncoderParams& params, const TokenSequence& input,
              const LoraSet* adapters = nullptr, EncoderActivations* cache = nullptr,
              const DropoutPlan* dropout = nullptr);

// Accumulates analytic gradients for d_output = dLoss/dH.
//   param_grads    may be null (frozen base, LoRA-only training)
//   adapter_grads  may be null (no adapters, full fine-tune)
//   d_input_embedding  optional gradient at the embedding-sum level
void encode_backward(const EncoderParams& params, const EncoderActivations& cache,
                     const Matrix& d_output, EncoderParams* param_grads,
                     const LoraSet* adapters, LoraSet* adapter_grads,
                     Matrix* d_input_embedding = nullptr);

// Convenience form matching the forward-only signature: runs encode with a
// cache internally, then the backward above.
EncoderParams encode_backward(const EncoderParams& params, const TokenSequence& input,
                              const Matrix& upstream_grad,
                              Matrix* d_input_embedding = nullptr);

// Mean next-token cross-entropy over positions 0..n-2 (position t predicts
// token t+1). Requires n >= 2.
double next_token_loss(const EncoderParams& params, const TokenSequence& input,
                       const LoraSet* adapters = nullptr);

// Loss plus gradient accumulation; either grad sink may be null.
double next_token_loss_backward(const EncoderParams& params, const TokenSequence& input,
                                const LoraSet* adapters, EncoderParams* param_grads,
                                LoraSet* adapter_grads, const DropoutPlan* dropout = nullptr);

}  // namespace keymem
