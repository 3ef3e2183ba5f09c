#include "keymem/encoder.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>

namespace keymem {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kMaskedScore = -1e30;

void ln_forward_row(std::span<const double> x, const LayerNormParams& p, std::span<double> out,
                    double& mu, double& rstd) {
    const std::size_t n = x.size();
    double m = 0.0;
    for (const double e : x) m += e;
    m /= static_cast<double>(n);
    double var = 0.0;
    for (const double e : x) var += (e - m) * (e - m);
    var /= static_cast<double>(n);
    const double r = 1.0 / std::sqrt(var + kLnEps);
    for (std::size_t i = 0; i < n; ++i) {
        out[i] = p.gain[i] * (x[i] - m) * r + p.bias[i];
    }
    mu = m;
    rstd = r;
}

// dx for one row; accumulates dgain/dbias when grads present.
void ln_backward_row(std::span<const double> x, const LayerNormParams& p, double mu, double rstd,
                     std::span<const double> dy, std::span<double> dx, LayerNormParams* grads) {
    const std::size_t n = x.size();
    double mean_dxhat = 0.0;
    double mean_dxhat_xhat = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double xhat = (x[i] - mu) * rstd;
        const double dxhat = dy[i] * p.gain[i];
        mean_dxhat += dxhat;
        mean_dxhat_xhat += dxhat * xhat;
        if (grads != nullptr) {
            grads->gain[i] += dy[i] * xhat;
            grads->bias[i] += dy[i];
        }
    }
    mean_dxhat /= static_cast<double>(n);
    mean_dxhat_xhat /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        const double xhat = (x[i] - mu) * rstd;
        const double dxhat = dy[i] * p.gain[i];
        dx[i] += rstd * (dxhat - mean_dxhat - xhat * mean_dxhat_xhat);
    }
}

Matrix ln_forward(const Matrix& x, const LayerNormParams& p, Vec& mu, Vec& rstd) {
    Matrix out(x.rows, x.cols);
    mu.resize(x.rows);
    rstd.resize(x.rows);
    for (std::size_t i = 0; i < x.rows; ++i) {
        ln_forward_row(x.row(i), p, out.row(i), mu[i], rstd[i]);
    }
    return out;
}

Matrix dropout_mask(std::size_t rows, std::size_t cols, const DropoutPlan& plan) {
    Matrix mask(rows, cols);
    const double keep = 1.0 / (1.0 - plan.rate);
    for (double& e : mask.data) {
        e = plan.rng->next_double() >= plan.rate ? keep : 0.0;
    }
    return mask;
}

Matrix init_gaussian(std::size_t rows, std::size_t cols, double stddev, Rng& rng) {
    Matrix m(rows, cols);
    for (double& e : m.data) e = rng.normal(0.0, stddev);
    return m;
}

void validate_input(const EncoderConfig& cfg, const TokenSequence& input) {
    if (input.token_ids.empty()) {
        throw std::invalid_argument("encode: empty input");
    }
    if (input.token_ids.size() != input.attention_mask.size()) {
        throw std::invalid_argument("encode: token/mask length mismatch");
    }
    if (input.token_ids.size() > cfg.max_seq_len) {
        throw std::invalid_argument("encode: input length " +
                                    std::to_string(input.token_ids.size()) +
                                    " exceeds max_seq_len " + std::to_string(cfg.max_seq_len));
    }
    bool any_valid = false;
    for (std::size_t t = 0; t < input.token_ids.size(); ++t) {
        if (input.token_ids[t] >= cfg.vocab_size) {
            throw std::invalid_argument("encode: token id " + std::to_string(input.token_ids[t]) +
                                        " out of vocabulary (size " +
                                        std::to_string(cfg.vocab_size) + ")");
        }
        any_valid = any_valid || input.attention_mask[t] != 0;
    }
    if (!any_valid) {
        throw std::invalid_argument("encode: no valid (unmasked) position in input");
    }
}

}  // namespace

void EncoderConfig::validate() const {
    if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
        throw std::invalid_argument("EncoderConfig: d_model must be divisible by n_heads");
    }
    if (d_ff < d_model) {
        throw std::invalid_argument("EncoderConfig: d_ff must be >= d_model");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw std::invalid_argument("EncoderConfig: dropout_rate must be in [0,1)");
    }
    if (vocab_size == 0 || n_layers == 0 || max_seq_len == 0) {
        throw std::invalid_argument("EncoderConfig: zero-sized dimension");
    }
}

EncoderParams init_encoder(const EncoderConfig& config, Rng& rng) {
    config.validate();
    EncoderParams p;
    p.config = config;
    const std::size_t d = config.d_model;
    p.token_embedding = init_gaussian(config.vocab_size, d, config.init_std, rng);
    p.position_embedding = init_gaussian(config.max_seq_len, d, config.init_std, rng);
    const double proj_std = 1.0 / std::sqrt(static_cast<double>(d));
    const double ffn_std = 1.0 / std::sqrt(static_cast<double>(config.d_ff));
    p.blocks.resize(config.n_layers);
    for (auto& block : p.blocks) {
        block.ln1 = {Vec(d, 1.0), Vec(d, 0.0)};
        block.ln2 = {Vec(d, 1.0), Vec(d, 0.0)};
        block.attn.wq = init_gaussian(d, d, proj_std, rng);
        block.attn.wk = init_gaussian(d, d, proj_std, rng);
        block.attn.wv = init_gaussian(d, d, proj_std, rng);
        block.attn.wo = init_gaussian(d, d, proj_std, rng);
        block.ffn.w1 = init_gaussian(d, config.d_ff, proj_std, rng);
        block.ffn.b1 = Vec(config.d_ff, 0.0);
        block.ffn.w2 = init_gaussian(config.d_ff, d, ffn_std, rng);
        block.ffn.b2 = Vec(d, 0.0);
        block.ffn.activation = config.activation;
    }
    p.ln_final = {Vec(d, 1.0), Vec(d, 0.0)};
    p.lm_head = init_gaussian(d, config.vocab_size, proj_std, rng);
    return p;
}

EncoderParams zero_like(const EncoderParams& params) {
    EncoderParams z = params;
    std::vector<TensorRef> refs = param_refs(z);
    for (auto& r : refs) {
        std::fill(r.data, r.data + r.size, 0.0);
    }
    return z;
}

LoraSet init_lora(const EncoderConfig& config, std::size_t rank, Rng& rng) {
    config.validate();
    if (rank < 1 || rank > std::min(config.d_model, config.d_ff)) {
        throw std::invalid_argument("init_lora: rank must be in [1, min(d_model, d_ff)]");
    }
    const double a_std = 1.0 / std::sqrt(static_cast<double>(rank));
    LoraSet set;
    set.layers.resize(config.n_layers);
    for (auto& ad : set.layers) {
        ad.a1 = init_gaussian(config.d_model, rank, a_std, rng);
        ad.b1 = Matrix(rank, config.d_ff, 0.0);
        ad.a2 = init_gaussian(config.d_ff, rank, a_std, rng);
        ad.b2 = Matrix(rank, config.d_model, 0.0);
    }
    return set;
}

LoraSet zero_like(const LoraSet& set) {
    LoraSet z = set;
    for (auto& ad : z.layers) {
        std::fill(ad.a1.data.begin(), ad.a1.data.end(), 0.0);
        std::fill(ad.b1.data.begin(), ad.b1.data.end(), 0.0);
        std::fill(ad.a2.data.begin(), ad.a2.data.end(), 0.0);
        std::fill(ad.b2.data.begin(), ad.b2.data.end(), 0.0);
    }
    return z;
}

namespace {

TensorRef ref(const std::string& name, Matrix& m) {
    return {name, m.data.data(), m.data.size(), m.rows, m.cols};
}
TensorRef ref(const std::string& name, Vec& v) {
    return {name, v.data(), v.size(), 1, v.size()};
}

}  // namespace

std::vector<TensorRef> param_refs(EncoderParams& p) {
    std::vector<TensorRef> refs;
    refs.push_back(ref("encoder.token_embedding", p.token_embedding));
    refs.push_back(ref("encoder.position_embedding", p.position_embedding));
    for (std::size_t l = 0; l < p.blocks.size(); ++l) {
        const std::string b = "encoder.block" + std::to_string(l) + ".";
        auto& blk = p.blocks[l];
        refs.push_back(ref(b + "ln1.gain", blk.ln1.gain));
        refs.push_back(ref(b + "ln1.bias", blk.ln1.bias));
        refs.push_back(ref(b + "attn.wq", blk.attn.wq));
        refs.push_back(ref(b + "attn.wk", blk.attn.wk));
        refs.push_back(ref(b + "attn.wv", blk.attn.wv));
        refs.push_back(ref(b + "attn.wo", blk.attn.wo));
        refs.push_back(ref(b + "ln2.gain", blk.ln2.gain));
        refs.push_back(ref(b + "ln2.bias", blk.ln2.bias));
        refs.push_back(ref(b + "ffn.w1", blk.ffn.w1));
        refs.push_back(ref(b + "ffn.b1", blk.ffn.b1));
        refs.push_back(ref(b + "ffn.w2", blk.ffn.w2));
        refs.push_back(ref(b + "ffn.b2", blk.ffn.b2));
    }
    refs.push_back(ref("encoder.ln_final.gain", p.ln_final.gain));
    refs.push_back(ref("encoder.ln_final.bias", p.ln_final.bias));
    refs.push_back(ref("encoder.lm_head", p.lm_head));
    return refs;
}

std::vector<TensorRef> lora_refs(LoraSet& set) {
    std::vector<TensorRef> refs;
    for (std::size_t l = 0; l < set.layers.size(); ++l) {
        const std::string b = "lora.block" + std::to_string(l) + ".";
        auto& ad = set.layers[l];
        refs.push_back(ref(b + "a1", ad.a1));
        refs.push_back(ref(b + "b1", ad.b1));
        refs.push_back(ref(b + "a2", ad.a2));
        refs.push_back(ref(b + "b2", ad.b2));
    }
    return refs;
}

namespace {

// Multi-head causal self-attention over pre-normed input. Padding positions
// are excluded as keys for every query; each query row still attends its
// causal prefix.
void attention_forward(const EncoderConfig& cfg, const AttentionParams& p, const Matrix& x,
                       const std::vector<std::uint8_t>& mask, BlockCache& cache,
                       const DropoutPlan* dropout, Matrix& out) {
    const std::size_t n = x.rows;
    const std::size_t nh = cfg.n_heads;
    const std::size_t dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    cache.q = matmul(x, p.wq);
    cache.k = matmul(x, p.wk);
    cache.v = matmul(x, p.wv);
    cache.attn_weights.assign(nh, Matrix(n, n, 0.0));
    cache.attn_dropout.clear();
    if (dropout != nullptr && dropout->rate > 0.0) {
        cache.attn_dropout.reserve(nh);
        for (std::size_t h = 0; h < nh; ++h) {
            cache.attn_dropout.push_back(dropout_mask(n, n, *dropout));
        }
    }
    cache.attn_ctx = Matrix(n, cfg.d_model, 0.0);

    Vec scores;
    for (std::size_t h = 0; h < nh; ++h) {
        const std::size_t off = h * dh;
        Matrix& weights = cache.attn_weights[h];
        for (std::size_t i = 0; i < n; ++i) {
            scores.assign(i + 1, kMaskedScore);
            bool any = false;
            const double* qi = cache.q.data.data() + i * cfg.d_model + off;
            for (std::size_t j = 0; j <= i; ++j) {
                if (mask[j] == 0) continue;
                const double* kj = cache.k.data.data() + j * cfg.d_model + off;
                double s = 0.0;
                for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
                scores[j] = s * inv_sqrt_dh;
                any = true;
            }
            if (!any) {
                // Fully-masked prefix: fall back to attending position i itself.
                scores[i] = 0.0;
            }
            const Vec w = softmax(scores);
            double* ci = cache.attn_ctx.data.data() + i * cfg.d_model + off;
            for (std::size_t j = 0; j <= i; ++j) {
                double wj = w[j];
                weights.at(i, j) = wj;
                if (!cache.attn_dropout.empty()) {
                    wj *= cache.attn_dropout[h].at(i, j);
                }
                if (wj == 0.0) continue;
                const double* vj = cache.v.data.data() + j * cfg.d_model + off;
                for (std::size_t t = 0; t < dh; ++t) ci[t] += wj * vj[t];
            }
        }
    }
    out = matmul(cache.attn_ctx, p.wo);
}

void attention_backward(const EncoderConfig& cfg, const AttentionParams& p,
                        const BlockCache& cache, const Matrix& d_out, Matrix& d_x,
                        AttentionParams* grads) {
    const std::size_t n = d_out.rows;
    const std::size_t nh = cfg.n_heads;
    const std::size_t dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    Matrix d_ctx = matmul(d_out, transpose(p.wo));
    if (grads != nullptr) {
        const Matrix d_wo = matmul(transpose(cache.attn_ctx), d_out);
        for (std::size_t i = 0; i < d_wo.size(); ++i) grads->wo.data[i] += d_wo.data[i];
    }

    Matrix d_q(n, cfg.d_model, 0.0), d_k(n, cfg.d_model, 0.0), d_v(n, cfg.d_model, 0.0);
    Vec d_a, d_s;
    for (std::size_t h = 0; h < nh; ++h) {
        const std::size_t off = h * dh;
        const Matrix& weights = cache.attn_weights[h];
        const bool has_drop = !cache.attn_dropout.empty();
        for (std::size_t i = 0; i < n; ++i) {
            const double* dci = d_ctx.data.data() + i * cfg.d_model + off;
            d_a.assign(i + 1, 0.0);
            double sum_ada = 0.0;
            for (std::size_t j = 0; j <= i; ++j) {
                const double a = weights.at(i, j);
                if (a == 0.0) continue;
                const double drop = has_drop ? cache.attn_dropout[h].at(i, j) : 1.0;
                const double* vj = cache.v.data.data() + j * cfg.d_model + off;
                double da = 0.0;
                for (std::size_t t = 0; t < dh; ++t) da += dci[t] * vj[t];
                // dv via the post-dropout weight actually used in the forward.
                const double used = a * drop;
                if (used != 0.0) {
                    double* dvj = d_v.data.data() + j * cfg.d_model + off;
                    for (std::size_t t = 0; t < dh; ++t) dvj[t] += used * dci[t];
                }
                da *= drop;
                d_a[j] = da;
                sum_ada += a * da;
            }
            const double* qi = cache.q.data.data() + i * cfg.d_model + off;
            double* dqi = d_q.data.data() + i * cfg.d_model + off;
            for (std::size_t j = 0; j <= i; ++j) {
                const double a = weights.at(i, j);
                if (a == 0.0) continue;
                const double ds = a * (d_a[j] - sum_ada) * inv_sqrt_dh;
                if (ds == 0.0) continue;
                const double* kj = cache.k.data.data() + j * cfg.d_model + off;
                double* dkj = d_k.data.data() + j * cfg.d_model + off;
                for (std::size_t t = 0; t < dh; ++t) {
                    dqi[t] += ds * kj[t];
                    dkj[t] += ds * qi[t];
                }
            }
        }
    }

    const Matrix& x = cache.ln1_out;
    if (grads != nullptr) {
        const Matrix d_wq = matmul(transpose(x), d_q);
        const Matrix d_wk = matmul(transpose(x), d_k);
        const Matrix d_wv = matmul(transpose(x), d_v);
        for (std::size_t i = 0; i < d_wq.size(); ++i) {
            grads->wq.data[i] += d_wq.data[i];
            grads->wk.data[i] += d_wk.data[i];
            grads->wv.data[i] += d_wv.data[i];
        }
    }
    const Matrix dx_q = matmul(d_q, transpose(p.wq));
    const Matrix dx_k = matmul(d_k, transpose(p.wk));
    const Matrix dx_v = matmul(d_v, transpose(p.wv));
    for (std::size_t i = 0; i < d_x.size(); ++i) {
        d_x.data[i] += dx_q.data[i] + dx_k.data[i] + dx_v.data[i];
    }
}

void ffn_forward_rows(const FfnLayer& ffn, const LoraAdapter* adapter, const Matrix& x,
                      BlockCache& cache, const DropoutPlan* dropout, Matrix& out) {
    cache.ffn_pre = matmul(x, ffn.w1);
    if (adapter != nullptr) {
        cache.xa1 = matmul(x, adapter->a1);
        const Matrix delta = matmul(cache.xa1, adapter->b1);
        for (std::size_t i = 0; i < cache.ffn_pre.size(); ++i) {
            cache.ffn_pre.data[i] += delta.data[i];
        }
    }
    for (std::size_t i = 0; i < cache.ffn_pre.rows; ++i) {
        double* row = cache.ffn_pre.data.data() + i * cache.ffn_pre.cols;
        for (std::size_t j = 0; j < cache.ffn_pre.cols; ++j) row[j] += ffn.b1[j];
    }
    cache.ffn_hidden = Matrix(cache.ffn_pre.rows, cache.ffn_pre.cols);
    for (std::size_t i = 0; i < cache.ffn_pre.size(); ++i) {
        cache.ffn_hidden.data[i] = activate(ffn.activation, cache.ffn_pre.data[i]);
    }
    Matrix hidden_used = cache.ffn_hidden;
    if (dropout != nullptr && dropout->rate > 0.0) {
        cache.ffn_dropout = dropout_mask(hidden_used.rows, hidden_used.cols, *dropout);
        for (std::size_t i = 0; i < hidden_used.size(); ++i) {
            hidden_used.data[i] *= cache.ffn_dropout.data[i];
        }
    } else {
        cache.ffn_dropout = Matrix();
    }
    out = matmul(hidden_used, ffn.w2);
    if (adapter != nullptr) {
        cache.ha2 = matmul(hidden_used, adapter->a2);
        const Matrix delta = matmul(cache.ha2, adapter->b2);
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += delta.data[i];
    }
    for (std::size_t i = 0; i < out.rows; ++i) {
        double* row = out.data.data() + i * out.cols;
        for (std::size_t j = 0; j < out.cols; ++j) row[j] += ffn.b2[j];
    }
}

void ffn_backward_rows(const FfnLayer& ffn, const LoraAdapter* adapter, const BlockCache& cache,
                       const Matrix& d_out, Matrix& d_x, FfnLayer* grads,
                       LoraAdapter* adapter_grads) {
    const Matrix& x = cache.ln2_out;
    const bool has_drop = cache.ffn_dropout.size() > 0;
    Matrix hidden_used = cache.ffn_hidden;
    if (has_drop) {
        for (std::size_t i = 0; i < hidden_used.size(); ++i) {
            hidden_used.data[i] *= cache.ffn_dropout.data[i];
        }
    }

    if (grads != nullptr) {
        const Matrix d_w2 = matmul(transpose(hidden_used), d_out);
        for (std::size_t i = 0; i < d_w2.size(); ++i) grads->w2.data[i] += d_w2.data[i];
        for (std::size_t i = 0; i < d_out.rows; ++i) {
            const double* row = d_out.data.data() + i * d_out.cols;
            for (std::size_t j = 0; j < d_out.cols; ++j) grads->b2[j] += row[j];
        }
    }
    Matrix d_hidden = matmul(d_out, transpose(ffn.w2));
    if (adapter != nullptr) {
        // Through W2 + A2 B2: d_hidden += (d_out B2^T) A2^T.
        const Matrix t = matmul(d_out, transpose(adapter->b2));
        const Matrix d_hidden_lora = matmul(t, transpose(adapter->a2));
        for (std::size_t i = 0; i < d_hidden.size(); ++i) {
            d_hidden.data[i] += d_hidden_lora.data[i];
        }
        if (adapter_grads != nullptr) {
            const Matrix d_a2 = matmul(transpose(hidden_used), t);
            const Matrix d_b2 = matmul(transpose(cache.ha2), d_out);
            for (std::size_t i = 0; i < d_a2.size(); ++i) adapter_grads->a2.data[i] += d_a2.data[i];
            for (std::size_t i = 0; i < d_b2.size(); ++i) adapter_grads->b2.data[i] += d_b2.data[i];
        }
    }
    if (has_drop) {
        for (std::size_t i = 0; i < d_hidden.size(); ++i) {
            d_hidden.data[i] *= cache.ffn_dropout.data[i];
        }
    }
    for (std::size_t i = 0; i < d_hidden.size(); ++i) {
        d_hidden.data[i] *= activate_grad(ffn.activation, cache.ffn_pre.data[i]);
    }
    if (grads != nullptr) {
        const Matrix d_w1 = matmul(transpose(x), d_hidden);
        for (std::size_t i = 0; i < d_w1.size(); ++i) grads->w1.data[i] += d_w1.data[i];
        for (std::size_t i = 0; i < d_hidden.rows; ++i) {
            const double* row = d_hidden.data.data() + i * d_hidden.cols;
            for (std::size_t j = 0; j < d_hidden.cols; ++j) grads->b1[j] += row[j];
        }
    }
    Matrix dx_local = matmul(d_hidden, transpose(ffn.w1));
    if (adapter != nullptr) {
        const Matrix t = matmul(d_hidden, transpose(adapter->b1));
        const Matrix dx_lora = matmul(t, transpose(adapter->a1));
        for (std::size_t i = 0; i < dx_local.size(); ++i) dx_local.data[i] += dx_lora.data[i];
        if (adapter_grads != nullptr) {
            const Matrix d_a1 = matmul(transpose(x), t);
            const Matrix d_b1 = matmul(transpose(cache.xa1), d_hidden);
            for (std::size_t i = 0; i < d_a1.size(); ++i) adapter_grads->a1.data[i] += d_a1.data[i];
            for (std::size_t i = 0; i < d_b1.size(); ++i) adapter_grads->b1.data[i] += d_b1.data[i];
        }
    }
    for (std::size_t i = 0; i < d_x.size(); ++i) d_x.data[i] += dx_local.data[i];
}

}  // namespace

Matrix encode(const EncoderParams& params, const TokenSequence& input, const LoraSet* adapters,
              EncoderActivations* cache, const DropoutPlan* dropout) {
    const EncoderConfig& cfg = params.config;
    validate_input(cfg, input);
    if (adapters != nullptr && adapters->layers.size() != cfg.n_layers) {
        throw std::invalid_argument("encode: adapter count does not match layer count");
    }
    if (dropout != nullptr && (dropout->rate < 0.0 || dropout->rate >= 1.0 ||
                               (dropout->rate > 0.0 && dropout->rng == nullptr))) {
        throw std::invalid_argument("encode: invalid dropout plan");
    }

    const std::size_t n = input.length();
    const std::size_t d = cfg.d_model;

    EncoderActivations local;
    EncoderActivations& acts = cache != nullptr ? *cache : local;
    acts.input = input;
    acts.blocks.assign(cfg.n_layers, BlockCache{});

    acts.embedded = Matrix(n, d);
    for (std::size_t t = 0; t < n; ++t) {
        const std::size_t id = input.token_ids[t];
        double* row = acts.embedded.data.data() + t * d;
        const double* tok = params.token_embedding.data.data() + id * d;
        const double* pos = params.position_embedding.data.data() + t * d;
        for (std::size_t j = 0; j < d; ++j) row[j] = tok[j] + pos[j];
    }

    Matrix x = acts.embedded;
    for (std::size_t l = 0; l < cfg.n_layers; ++l) {
        BlockCache& bc = acts.blocks[l];
        const EncoderBlockParams& blk = params.blocks[l];
        bc.x_in = x;
        bc.ln1_out = ln_forward(x, blk.ln1, bc.ln1_mu, bc.ln1_rstd);
        Matrix attn_out;
        attention_forward(cfg, blk.attn, bc.ln1_out, input.attention_mask, bc, dropout, attn_out);
        bc.res1 = x;
        for (std::size_t i = 0; i < bc.res1.size(); ++i) bc.res1.data[i] += attn_out.data[i];
        bc.ln2_out = ln_forward(bc.res1, blk.ln2, bc.ln2_mu, bc.ln2_rstd);
        const LoraAdapter* adapter = adapters != nullptr ? &adapters->layers[l] : nullptr;
        Matrix ffn_out;
        ffn_forward_rows(blk.ffn, adapter, bc.ln2_out, bc, dropout, ffn_out);
        x = bc.res1;
        for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += ffn_out.data[i];
    }

    acts.final_res = std::move(x);
    acts.output = ln_forward(acts.final_res, params.ln_final, acts.lnf_mu, acts.lnf_rstd);
    check_finite(acts.output, "encode");
    return acts.output;
}

void encode_backward(const EncoderParams& params, const EncoderActivations& cache,
                     const Matrix& d_output, EncoderParams* param_grads, const LoraSet* adapters,
                     LoraSet* adapter_grads, Matrix* d_input_embedding) {
    const EncoderConfig& cfg = params.config;
    const std::size_t n = cache.input.length();
    const std::size_t d = cfg.d_model;
    if (d_output.rows != n || d_output.cols != d) {
        throw std::invalid_argument("encode_backward: upstream gradient shape " +
                                    shape_str(d_output) + " does not match output " +
                                    std::to_string(n) + "x" + std::to_string(d));
    }

    Matrix d_x(n, d, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        ln_backward_row(cache.final_res.row(i), params.ln_final, cache.lnf_mu[i],
                        cache.lnf_rstd[i], d_output.row(i), d_x.row(i),
                        param_grads != nullptr ? &param_grads->ln_final : nullptr);
    }

    for (std::size_t l = cfg.n_layers; l-- > 0;) {
        const BlockCache& bc = cache.blocks[l];
        const EncoderBlockParams& blk = params.blocks[l];
        const LoraAdapter* adapter = adapters != nullptr ? &adapters->layers[l] : nullptr;
        LoraAdapter* a_grads = adapter_grads != nullptr ? &adapter_grads->layers[l] : nullptr;
        FfnLayer* f_grads = param_grads != nullptr ? &param_grads->blocks[l].ffn : nullptr;

        // d_x currently holds dLoss/d(res2); res2 = res1 + ffn(ln2(res1)).
        Matrix d_ln2(n, d, 0.0);
        ffn_backward_rows(blk.ffn, adapter, bc, d_x, d_ln2, f_grads, a_grads);
        for (std::size_t i = 0; i < n; ++i) {
            ln_backward_row(bc.res1.row(i), blk.ln2, bc.ln2_mu[i], bc.ln2_rstd[i], d_ln2.row(i),
                            d_x.row(i),
                            param_grads != nullptr ? &param_grads->blocks[l].ln2 : nullptr);
        }

        // d_x now holds dLoss/d(res1); res1 = x_in + attn(ln1(x_in)).
        Matrix d_ln1(n, d, 0.0);
        attention_backward(cfg, blk.attn, bc, d_x, d_ln1,
                           param_grads != nullptr ? &param_grads->blocks[l].attn : nullptr);
        for (std::size_t i = 0; i < n; ++i) {
            ln_backward_row(bc.x_in.row(i), blk.ln1, bc.ln1_mu[i], bc.ln1_rstd[i], d_ln1.row(i),
                            d_x.row(i),
                            param_grads != nullptr ? &param_grads->blocks[l].ln1 : nullptr);
        }
    }

    if (d_input_embedding != nullptr) {
        *d_input_embedding = d_x;
    }
    if (param_grads != nullptr) {
        for (std::size_t t = 0; t < n; ++t) {
            const std::size_t id = cache.input.token_ids[t];
            axpy(1.0, d_x.row(t), param_grads->token_embedding.row(id));
            axpy(1.0, d_x.row(t), param_grads->position_embedding.row(t));
        }
    }
}

EncoderParams encode_backward(const EncoderParams& params, const TokenSequence& input,
                              const Matrix& upstream_grad, Matrix* d_input_embedding) {
    EncoderActivations cache;
    encode(params, input, nullptr, &cache, nullptr);
    EncoderParams grads = zero_like(params);
    encode_backward(params, cache, upstream_grad, &grads, nullptr, nullptr, d_input_embedding);
    return grads;
}

double next_token_loss(const EncoderParams& params, const TokenSequence& input,
                       const LoraSet* adapters) {
    if (input.length() < 2) {
        throw std::invalid_argument("next_token_loss: need at least two tokens");
    }
    EncoderActivations cache;
    const Matrix h = encode(params, input, adapters, &cache, nullptr);
    double loss = 0.0;
    std::size_t n_pred = 0;
    for (std::size_t t = 0; t + 1 < input.length(); ++t) {
        if (input.attention_mask[t] == 0 || input.attention_mask[t + 1] == 0) continue;
        const Vec logits = vecmat(h.row(t), params.lm_head);
        const Vec probs = softmax(logits);
        loss += -std::log(std::max(probs[input.token_ids[t + 1]], 1e-300));
        ++n_pred;
    }
    if (n_pred == 0) {
        throw std::invalid_argument("next_token_loss: no predictable positions");
    }
    return loss / static_cast<double>(n_pred);
}

double next_token_loss_backward(const EncoderParams& params, const TokenSequence& input,
                                const LoraSet* adapters, EncoderParams* param_grads,
                                LoraSet* adapter_grads, const DropoutPlan* dropout) {
    if (input.length() < 2) {
        throw std::invalid_argument("next_token_loss: need at least two tokens");
    }
    EncoderActivations cache;
    const Matrix h = encode(params, input, adapters, &cache, dropout);
    const std::size_t n = input.length();
    const std::size_t d = params.config.d_model;

    std::size_t n_pred = 0;
    for (std::size_t t = 0; t + 1 < n; ++t) {
        if (input.attention_mask[t] != 0 && input.attention_mask[t + 1] != 0) ++n_pred;
    }
    if (n_pred == 0) {
        throw std::invalid_argument("next_token_loss: no predictable positions");
    }
    const double inv_pred = 1.0 / static_cast<double>(n_pred);

    double loss = 0.0;
    Matrix d_h(n, d, 0.0);
    for (std::size_t t = 0; t + 1 < n; ++t) {
        if (input.attention_mask[t] == 0 || input.attention_mask[t + 1] == 0) continue;
        const Vec logits = vecmat(h.row(t), params.lm_head);
        Vec probs = softmax(logits);
        const std::size_t target = input.token_ids[t + 1];
        loss += -std::log(std::max(probs[target], 1e-300)) * inv_pred;
        probs[target] -= 1.0;
        scale(probs, inv_pred);  // d logits for this row
        if (param_grads != nullptr) {
            add_outer(param_grads->lm_head, h.row(t), probs);
        }
        // d h row = d_logits @ lm_head^T
        Vec dh = matvec(params.lm_head, probs);
        axpy(1.0, dh, d_h.row(t));
    }

    encode_backward(params, cache, d_h, param_grads, adapters, adapter_grads, nullptr);
    return loss;
}

}  // namespace keymem
