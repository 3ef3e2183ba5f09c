#pragma once

#include <cstddef>

#include "keymem/matrix.hpp"

namespace keymem {

enum class Activation { kRelu, kGelu };

// GeLU is the tanh approximation, fixed so the matrix and key-value forward
// forms agree bit for bit.
double activate(Activation act, double x);
double activate_grad(Activation act, double x);

// One feed-forward layer. Column i of w1 is key k_i, row i of w2 is value v_i.
struct FfnLayer {
    Matrix w1;  // d x d_ff
    Vec b1;     // d_ff
    Matrix w2;  // d_ff x d
    Vec b2;     // d
    Activation activation = Activation::kGelu;

    std::size_t d() const { return w1.rows; }
    std::size_t d_ff() const { return w1.cols; }
    void validate() const;
};

// Low-rank additive update for both FFN weight matrices.
struct LoraAdapter {
    Matrix a1;  // d x r
    Matrix b1;  // r x d_ff
    Matrix a2;  // d_ff x r
    Matrix b2;  // r x d

    std::size_t rank() const { return a1.cols; }
    void validate(std::size_t d, std::size_t d_ff) const;
};

enum class MemorySource { kDocument, kGraph };

// A bank of key/value rows extracted from one layer. Rows are paired by index
// and immutable after extraction; document and graph banks are never merged.
struct KeyValueMemory {
    Matrix keys;    // m x d, one key per row
    Matrix values;  // m x d
    MemorySource source = MemorySource::kDocument;
    std::size_t layer_index = 0;

    std::size_t size() const { return keys.rows; }
};

// sigma(x W1 + b1) W2 + b2, evaluated in matrix form.
Vec ffn_forward_matrix(const FfnLayer& layer, std::span<const double> x);

// Same map written as a key-value sum: sum_i sigma(x . k_i + b1_i) v_i + b2.
// b1 rides inside the activation so the two forms stay an exact identity.
Vec ffn_forward_keyvalue(const FfnLayer& layer, std::span<const double> x);

// sigma(x (W1 + A1 B1) + b1) (W2 + A2 B2) + b2 without materializing the sums.
Vec ffn_forward_lora(const FfnLayer& layer, const LoraAdapter& adapter, std::span<const double> x);

// Materialized-weight layer (W1 + A1 B1, W2 + A2 B2); reference for the
// factored forward and the merged-model view.
FfnLayer materialize_lora(const FfnLayer& layer, const LoraAdapter& adapter);

// Document memory: keys are the rows of W1^T (d_ff keys of dimension d),
// values the rows of W2.
KeyValueMemory extract_document_memory(const FfnLayer& layer, std::size_t layer_index);

// Graph memory: keys from (A1 B1)^T, values from A2 B2, kept apart from the
// base weights. Values are the adapter product alone so the bank stays
// attributable to the injected triples.
KeyValueMemory extract_graph_memory(const LoraAdapter& adapter, std::size_t layer_index);

}  // namespace keymem
