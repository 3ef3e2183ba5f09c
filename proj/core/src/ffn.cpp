#include "keymem/ffn.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace keymem {

namespace {
constexpr double kGeluScale = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluCubic = 0.044715;
}  // namespace

double activate(Activation act, double x) {
    switch (act) {
        case Activation::kRelu:
            return x > 0.0 ? x : 0.0;
        case Activation::kGelu: {
            const double t = std::tanh(kGeluScale * (x + kGeluCubic * x * x * x));
            return 0.5 * x * (1.0 + t);
        }
    }
    return 0.0;
}

double activate_grad(Activation act, double x) {
    switch (act) {
        case Activation::kRelu:
            return x > 0.0 ? 1.0 : 0.0;
        case Activation::kGelu: {
            const double u = kGeluScale * (x + kGeluCubic * x * x * x);
            const double t = std::tanh(u);
            const double du = kGeluScale * (1.0 + 3.0 * kGeluCubic * x * x);
            return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du;
        }
    }
    return 0.0;
}

void FfnLayer::validate() const {
    if (w2.rows != w1.cols || w2.cols != w1.rows) {
        throw std::invalid_argument("FfnLayer: w1 " + shape_str(w1) + " inconsistent with w2 " +
                                    shape_str(w2));
    }
    if (b1.size() != d_ff() || b2.size() != d()) {
        throw std::invalid_argument("FfnLayer: bias lengths inconsistent with weights");
    }
}

void LoraAdapter::validate(std::size_t d, std::size_t d_ff) const {
    const std::size_t r = rank();
    if (r < 1) {
        throw std::invalid_argument("LoraAdapter: rank must be >= 1");
    }
    if (a1.rows != d || b1.rows != r || b1.cols != d_ff) {
        throw std::invalid_argument("LoraAdapter: a1/b1 shapes inconsistent with layer");
    }
    if (a2.rows != d_ff || a2.cols != r || b2.rows != r || b2.cols != d) {
        throw std::invalid_argument("LoraAdapter: a2/b2 shapes inconsistent with layer");
    }
}

Vec ffn_forward_matrix(const FfnLayer& layer, std::span<const double> x) {
    layer.validate();
    if (x.size() != layer.d()) {
        throw std::invalid_argument("ffn_forward_matrix: input length " +
                                    std::to_string(x.size()) + " vs d=" +
                                    std::to_string(layer.d()));
    }
    Vec hidden = vecmat(x, layer.w1);
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        hidden[i] = activate(layer.activation, hidden[i] + layer.b1[i]);
    }
    Vec out = vecmat(hidden, layer.w2);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += layer.b2[j];
    check_finite(out, "ffn_forward_matrix");
    return out;
}

Vec ffn_forward_keyvalue(const FfnLayer& layer, std::span<const double> x) {
    layer.validate();
    if (x.size() != layer.d()) {
        throw std::invalid_argument("ffn_forward_keyvalue: input length " +
                                    std::to_string(x.size()) + " vs d=" +
                                    std::to_string(layer.d()));
    }
    Vec out(layer.d(), 0.0);
    for (std::size_t i = 0; i < layer.d_ff(); ++i) {
        // Key i is column i of w1.
        double act_in = layer.b1[i];
        for (std::size_t j = 0; j < layer.d(); ++j) act_in += x[j] * layer.w1.at(j, i);
        const double strength = activate(layer.activation, act_in);
        axpy(strength, layer.w2.row(i), out);
    }
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += layer.b2[j];
    check_finite(out, "ffn_forward_keyvalue");
    return out;
}

FfnLayer materialize_lora(const FfnLayer& layer, const LoraAdapter& adapter) {
    layer.validate();
    adapter.validate(layer.d(), layer.d_ff());
    FfnLayer merged = layer;
    const Matrix d1 = matmul(adapter.a1, adapter.b1);
    const Matrix d2 = matmul(adapter.a2, adapter.b2);
    for (std::size_t i = 0; i < merged.w1.size(); ++i) merged.w1.data[i] += d1.data[i];
    for (std::size_t i = 0; i < merged.w2.size(); ++i) merged.w2.data[i] += d2.data[i];
    return merged;
}

Vec ffn_forward_lora(const FfnLayer& layer, const LoraAdapter& adapter,
                     std::span<const double> x) {
    layer.validate();
    adapter.validate(layer.d(), layer.d_ff());
    if (x.size() != layer.d()) {
        throw std::invalid_argument("ffn_forward_lora: input length " + std::to_string(x.size()) +
                                    " vs d=" + std::to_string(layer.d()));
    }
    // x (W1 + A1 B1) = x W1 + (x A1) B1; the factored path never forms A1 B1.
    Vec hidden = vecmat(x, layer.w1);
    const Vec xa1 = vecmat(x, adapter.a1);
    const Vec delta1 = vecmat(xa1, adapter.b1);
    for (std::size_t i = 0; i < hidden.size(); ++i) {
        hidden[i] = activate(layer.activation, hidden[i] + delta1[i] + layer.b1[i]);
    }
    Vec out = vecmat(hidden, layer.w2);
    const Vec ha2 = vecmat(hidden, adapter.a2);
    const Vec delta2 = vecmat(ha2, adapter.b2);
    for (std::size_t j = 0; j < out.size(); ++j) out[j] += delta2[j] + layer.b2[j];
    check_finite(out, "ffn_forward_lora");
    return out;
}

KeyValueMemory extract_document_memory(const FfnLayer& layer, std::size_t layer_index) {
    layer.validate();
    KeyValueMemory mem;
    mem.keys = transpose(layer.w1);
    mem.values = layer.w2;
    mem.source = MemorySource::kDocument;
    mem.layer_index = layer_index;
    return mem;
}

KeyValueMemory extract_graph_memory(const LoraAdapter& adapter, std::size_t layer_index) {
    KeyValueMemory mem;
    mem.keys = transpose(matmul(adapter.a1, adapter.b1));
    mem.values = matmul(adapter.a2, adapter.b2);
    mem.source = MemorySource::kGraph;
    mem.layer_index = layer_index;
    return mem;
}

}  // namespace keymem
