#include "keymem/classifier.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace keymem {

void HeadConfig::validate() const {
    if (d_model == 0 || hidden_dim == 0) {
        throw std::invalid_argument("HeadConfig: zero-sized dimension");
    }
}

HeadParams init_head(const HeadConfig& config, Rng& rng, bool symmetric_output) {
    config.validate();
    HeadParams p;
    p.config = config;
    const std::size_t in = config.input_dim();
    p.w1 = Matrix(in, config.hidden_dim);
    const double std1 = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& e : p.w1.data) e = rng.normal(0.0, std1);
    p.b1 = Vec(config.hidden_dim, 0.0);
    p.w2 = Matrix(config.hidden_dim, 2);
    if (symmetric_output) {
        // Zero output layer: logits start at [0, 0], prediction exactly 0.5.
        std::fill(p.w2.data.begin(), p.w2.data.end(), 0.0);
    } else {
        const double std2 = 1.0 / std::sqrt(static_cast<double>(config.hidden_dim));
        for (double& e : p.w2.data) e = rng.normal(0.0, std2);
    }
    p.b2 = Vec(2, 0.0);
    return p;
}

HeadParams zero_like(const HeadParams& params) {
    HeadParams z = params;
    std::fill(z.w1.data.begin(), z.w1.data.end(), 0.0);
    std::fill(z.b1.begin(), z.b1.end(), 0.0);
    std::fill(z.w2.data.begin(), z.w2.data.end(), 0.0);
    std::fill(z.b2.begin(), z.b2.end(), 0.0);
    return z;
}

std::vector<TensorRef> head_refs(HeadParams& p) {
    return {
        {"head.w1", p.w1.data.data(), p.w1.data.size(), p.w1.rows, p.w1.cols},
        {"head.b1", p.b1.data(), p.b1.size(), 1, p.b1.size()},
        {"head.w2", p.w2.data.data(), p.w2.data.size(), p.w2.rows, p.w2.cols},
        {"head.b2", p.b2.data(), p.b2.size(), 1, p.b2.size()},
    };
}

Vec assemble_features(const Matrix& h, const std::vector<std::uint8_t>& valid_mask,
                      const std::vector<FusedKnowledge>& fused, std::size_t n_probe_max) {
    if (valid_mask.size() != h.rows) {
        throw std::invalid_argument("assemble_features: mask length does not match rows");
    }
    if (fused.size() > n_probe_max) {
        throw std::invalid_argument("assemble_features: " + std::to_string(fused.size()) +
                                    " fused vectors exceed the " +
                                    std::to_string(n_probe_max) + " configured slots");
    }
    const std::size_t d = h.cols;
    Vec out(d + n_probe_max * 2 * d, 0.0);

    std::size_t n_valid = 0;
    for (std::size_t i = 0; i < h.rows; ++i) {
        if (valid_mask[i] == 0) continue;
        axpy(1.0, h.row(i), std::span<double>(out.data(), d));
        ++n_valid;
    }
    if (n_valid == 0) {
        throw std::invalid_argument("assemble_features: no valid rows");
    }
    scale(std::span<double>(out.data(), d), 1.0 / static_cast<double>(n_valid));

    for (std::size_t w = 0; w < fused.size(); ++w) {
        if (fused[w].vector.size() != 2 * d) {
            throw std::invalid_argument("assemble_features: fused vector has wrong dimension");
        }
        std::copy(fused[w].vector.begin(), fused[w].vector.end(),
                  out.begin() + static_cast<std::ptrdiff_t>(d + w * 2 * d));
    }
    return out;
}

Vec head_logits(const HeadParams& params, std::span<const double> features, HeadCache* cache) {
    if (features.size() != params.config.input_dim()) {
        throw std::invalid_argument("head_logits: feature length " +
                                    std::to_string(features.size()) + " does not match head " +
                                    std::to_string(params.config.input_dim()));
    }
    HeadCache local;
    HeadCache& c = cache != nullptr ? *cache : local;
    c.features.assign(features.begin(), features.end());
    c.hidden_pre = vecmat(features, params.w1);
    axpy(1.0, params.b1, c.hidden_pre);
    c.hidden.resize(c.hidden_pre.size());
    for (std::size_t i = 0; i < c.hidden.size(); ++i) {
        c.hidden[i] = activate(params.config.activation, c.hidden_pre[i]);
    }
    c.logits = vecmat(c.hidden, params.w2);
    axpy(1.0, params.b2, c.logits);
    check_finite(c.logits, "head_logits");
    return c.logits;
}

double head_loss(const HeadParams& params, std::span<const double> features, int label,
                 HeadCache* cache) {
    if (label != 0 && label != 1) {
        throw std::invalid_argument("head_loss: label must be 0 or 1");
    }
    HeadCache local;
    HeadCache& c = cache != nullptr ? *cache : local;
    const Vec logits = head_logits(params, features, &c);
    const Vec probs = softmax(logits);
    return -std::log(std::max(probs[static_cast<std::size_t>(label)], 1e-300));
}

Vec head_loss_backward(const HeadParams& params, const HeadCache& cache, int label,
                       HeadParams* grads) {
    if (label != 0 && label != 1) {
        throw std::invalid_argument("head_loss_backward: label must be 0 or 1");
    }
    Vec d_logits = softmax(cache.logits);
    d_logits[static_cast<std::size_t>(label)] -= 1.0;

    if (grads != nullptr) {
        add_outer(grads->w2, cache.hidden, d_logits);
        axpy(1.0, d_logits, grads->b2);
    }
    Vec d_hidden = matvec(params.w2, d_logits);
    for (std::size_t i = 0; i < d_hidden.size(); ++i) {
        d_hidden[i] *= activate_grad(params.config.activation, cache.hidden_pre[i]);
    }
    if (grads != nullptr) {
        add_outer(grads->w1, cache.features, d_hidden);
        axpy(1.0, d_hidden, grads->b1);
    }
    return matvec(params.w1, d_hidden);
}

double head_predict(const HeadParams& params, std::span<const double> features) {
    const Vec logits = head_logits(params, features);
    return softmax(logits)[1];
}

}  // namespace keymem
