#include "keymem/rerank.hpp"

#include <cmath>
#include <stdexcept>

namespace keymem {

void CrossAttnParams::validate() const {
    if (wq.rows == 0 || wq.rows != wq.cols || !wq.same_shape(wk) || !wq.same_shape(wv)) {
        throw std::invalid_argument("CrossAttnParams: projections must be square and equal-shape");
    }
    if (n_heads == 0 || wq.rows % n_heads != 0) {
        throw std::invalid_argument("CrossAttnParams: d must be divisible by n_heads");
    }
    if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
        throw std::invalid_argument("CrossAttnParams: dropout_rate must be in [0,1)");
    }
}

CrossAttnParams init_cross_attn(std::size_t d, std::size_t n_heads, Rng& rng,
                                double dropout_rate) {
    CrossAttnParams p;
    const double std = 1.0 / std::sqrt(static_cast<double>(d));
    p.wq = Matrix(d, d);
    p.wk = Matrix(d, d);
    p.wv = Matrix(d, d);
    for (double& e : p.wq.data) e = rng.normal(0.0, std);
    for (double& e : p.wk.data) e = rng.normal(0.0, std);
    for (double& e : p.wv.data) e = rng.normal(0.0, std);
    p.n_heads = n_heads;
    p.dropout_rate = dropout_rate;
    p.validate();
    return p;
}

CrossAttnParams zero_like(const CrossAttnParams& p) {
    CrossAttnParams z = p;
    std::fill(z.wq.data.begin(), z.wq.data.end(), 0.0);
    std::fill(z.wk.data.begin(), z.wk.data.end(), 0.0);
    std::fill(z.wv.data.begin(), z.wv.data.end(), 0.0);
    return z;
}

Vec cross_attend(const CrossAttnParams& params, std::span<const double> query,
                 const RetrievalResult& retrieved, CrossAttnCache* cache,
                 const DropoutPlan* dropout) {
    params.validate();
    const std::size_t d = params.d();
    const std::size_t k = retrieved.keys.rows;
    if (k == 0) {
        throw std::invalid_argument("cross_attend: empty retrieval");
    }
    if (query.size() != d || retrieved.keys.cols != d || retrieved.values.cols != d) {
        throw std::invalid_argument("cross_attend: dimension mismatch");
    }
    const std::size_t nh = params.n_heads;
    const std::size_t dh = params.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

    CrossAttnCache local;
    CrossAttnCache& c = cache != nullptr ? *cache : local;
    c.query.assign(query.begin(), query.end());
    c.keys = retrieved.keys;
    c.values = retrieved.values;
    c.q_proj = vecmat(query, params.wq);
    c.k_proj = matmul(retrieved.keys, params.wk);
    c.v_proj = matmul(retrieved.values, params.wv);
    c.weights = Matrix(nh, k);
    const bool use_drop = dropout != nullptr && dropout->rate > 0.0;
    c.drop = use_drop ? Matrix(nh, k) : Matrix();
    if (use_drop && dropout->rng == nullptr) {
        throw std::invalid_argument("cross_attend: dropout plan without rng");
    }

    Vec out(d, 0.0);
    Vec scores(k);
    for (std::size_t h = 0; h < nh; ++h) {
        const std::size_t off = h * dh;
        for (std::size_t i = 0; i < k; ++i) {
            double s = 0.0;
            const double* kp = c.k_proj.data.data() + i * d + off;
            for (std::size_t t = 0; t < dh; ++t) s += c.q_proj[off + t] * kp[t];
            scores[i] = s * inv_sqrt_dh;
        }
        const Vec a = softmax(scores);
        const double keep = use_drop ? 1.0 / (1.0 - dropout->rate) : 1.0;
        for (std::size_t i = 0; i < k; ++i) {
            c.weights.at(h, i) = a[i];
            double used = a[i];
            if (use_drop) {
                const double m = dropout->rng->next_double() >= dropout->rate ? keep : 0.0;
                c.drop.at(h, i) = m;
                used *= m;
            }
            if (used == 0.0) continue;
            const double* vp = c.v_proj.data.data() + i * d + off;
            for (std::size_t t = 0; t < dh; ++t) out[off + t] += used * vp[t];
        }
    }
    check_finite(out, "cross_attend");
    return out;
}

void cross_attend_backward(const CrossAttnParams& params, const CrossAttnCache& cache,
                           std::span<const double> d_out, CrossAttnParams* grads, Vec* d_query) {
    params.validate();
    const std::size_t d = params.d();
    const std::size_t k = cache.k_proj.rows;
    if (d_out.size() != d) {
        throw std::invalid_argument("cross_attend_backward: gradient dimension mismatch");
    }
    const std::size_t nh = params.n_heads;
    const std::size_t dh = params.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
    const bool has_drop = cache.drop.size() > 0;

    Vec d_qproj(d, 0.0);
    Matrix d_kproj(k, d, 0.0);
    Matrix d_vproj(k, d, 0.0);
    Vec d_a(k);
    for (std::size_t h = 0; h < nh; ++h) {
        const std::size_t off = h * dh;
        double sum_ada = 0.0;
        for (std::size_t i = 0; i < k; ++i) {
            const double a = cache.weights.at(h, i);
            const double drop = has_drop ? cache.drop.at(h, i) : 1.0;
            const double used = a * drop;
            const double* vp = cache.v_proj.data.data() + i * d + off;
            double da = 0.0;
            for (std::size_t t = 0; t < dh; ++t) da += d_out[off + t] * vp[t];
            if (used != 0.0) {
                double* dvp = d_vproj.data.data() + i * d + off;
                for (std::size_t t = 0; t < dh; ++t) dvp[t] += used * d_out[off + t];
            }
            da *= drop;
            d_a[i] = da;
            sum_ada += a * da;
        }
        for (std::size_t i = 0; i < k; ++i) {
            const double a = cache.weights.at(h, i);
            if (a == 0.0) continue;
            const double ds = a * (d_a[i] - sum_ada) * inv_sqrt_dh;
            if (ds == 0.0) continue;
            const double* kp = cache.k_proj.data.data() + i * d + off;
            double* dkp = d_kproj.data.data() + i * d + off;
            for (std::size_t t = 0; t < dh; ++t) {
                d_qproj[off + t] += ds * kp[t];
                dkp[t] += ds * cache.q_proj[off + t];
            }
        }
    }

    if (grads != nullptr) {
        add_outer(grads->wq, cache.query, d_qproj);
        const Matrix d_wk = matmul(transpose(cache.keys), d_kproj);
        const Matrix d_wv = matmul(transpose(cache.values), d_vproj);
        for (std::size_t i = 0; i < d_wk.size(); ++i) {
            grads->wk.data[i] += d_wk.data[i];
            grads->wv.data[i] += d_wv.data[i];
        }
    }
    if (d_query != nullptr) {
        if (d_query->size() != d) d_query->assign(d, 0.0);
        const Vec dq = matvec(params.wq, d_qproj);
        axpy(1.0, dq, *d_query);
    }
}

Vec pool(std::span<const double> v) {
    const double n = l2_norm(v);
    Vec out(v.begin(), v.end());
    if (n < 1e-12) return out;
    scale(out, 1.0 / n);
    return out;
}

Vec pool_backward(std::span<const double> v, std::span<const double> d_out) {
    if (v.size() != d_out.size()) {
        throw std::invalid_argument("pool_backward: shape mismatch");
    }
    const double n = l2_norm(v);
    Vec dv(d_out.begin(), d_out.end());
    if (n < 1e-12) return dv;
    const double proj = dot(v, d_out) / (n * n * n);
    for (std::size_t i = 0; i < dv.size(); ++i) {
        dv[i] = d_out[i] / n - v[i] * proj;
    }
    return dv;
}

FusedKnowledge fuse(std::span<const double> doc, std::span<const double> graph) {
    if (doc.size() != graph.size()) {
        throw std::invalid_argument("fuse: halves must have equal dimension");
    }
    FusedKnowledge f;
    f.doc_part = pool(doc);
    f.graph_part = pool(graph);
    f.vector.reserve(doc.size() * 2);
    f.vector.insert(f.vector.end(), f.doc_part.begin(), f.doc_part.end());
    f.vector.insert(f.vector.end(), f.graph_part.begin(), f.graph_part.end());
    return f;
}

void fuse_backward(std::span<const double> doc, std::span<const double> graph,
                   std::span<const double> d_vector, Vec& d_doc, Vec& d_graph) {
    if (doc.size() != graph.size() || d_vector.size() != doc.size() * 2) {
        throw std::invalid_argument("fuse_backward: shape mismatch");
    }
    d_doc = pool_backward(doc, d_vector.subspan(0, doc.size()));
    d_graph = pool_backward(graph, d_vector.subspan(doc.size(), graph.size()));
}

}  // namespace keymem
