#include "keymem/pipeline.hpp"

#include <stdexcept>
#include <string>

namespace keymem {

HeadConfig PipelineConfig::head_config() const {
    HeadConfig h;
    h.d_model = encoder.d_model;
    h.n_probe_max = n_probe_max();
    h.hidden_dim = head_hidden;
    h.activation = encoder.activation;
    return h;
}

void PipelineConfig::validate() const {
    encoder.validate();
    if (chunk_len < 2) {
        throw std::invalid_argument("PipelineConfig: chunk_len must be >= 2");
    }
    if (top_k == 0) {
        throw std::invalid_argument("PipelineConfig: top_k must be >= 1");
    }
    if (ca_heads == 0 || encoder.d_model % ca_heads != 0) {
        throw std::invalid_argument("PipelineConfig: d_model must be divisible by ca_heads");
    }
    if (use_retrieval && !use_doc && !use_graph) {
        throw std::invalid_argument("PipelineConfig: retrieval enabled with no source");
    }
    head_config().validate();
}

PipelineParams init_pipeline(const PipelineConfig& config, Rng& rng, bool symmetric_head) {
    config.validate();
    PipelineParams p;
    p.encoder = init_encoder(config.encoder, rng);
    p.cross_attn = init_cross_attn(config.encoder.d_model, config.ca_heads, rng,
                                   config.encoder.dropout_rate);
    p.head = init_head(config.head_config(), rng, symmetric_head);
    return p;
}

PipelineParams zero_like(const PipelineParams& params) {
    PipelineParams z;
    z.encoder = zero_like(params.encoder);
    z.cross_attn = zero_like(params.cross_attn);
    z.head = zero_like(params.head);
    return z;
}

std::vector<TensorRef> pipeline_refs(PipelineParams& p) {
    std::vector<TensorRef> refs = param_refs(p.encoder);
    refs.push_back({"cross_attn.wq", p.cross_attn.wq.data.data(), p.cross_attn.wq.size(),
                    p.cross_attn.wq.rows, p.cross_attn.wq.cols});
    refs.push_back({"cross_attn.wk", p.cross_attn.wk.data.data(), p.cross_attn.wk.size(),
                    p.cross_attn.wk.rows, p.cross_attn.wk.cols});
    refs.push_back({"cross_attn.wv", p.cross_attn.wv.data.data(), p.cross_attn.wv.size(),
                    p.cross_attn.wv.rows, p.cross_attn.wv.cols});
    for (auto& r : head_refs(p.head)) refs.push_back(r);
    return refs;
}

namespace {

void check_memories(const PipelineConfig& config, const PipelineMemories& memories) {
    if (!config.use_retrieval) return;
    const std::size_t d = config.encoder.d_model;
    if (config.use_doc) {
        if (memories.doc.size() == 0 || memories.doc.keys.cols != d) {
            throw std::invalid_argument("pipeline: document memory missing or wrong dimension");
        }
    }
    if (config.use_graph) {
        if (memories.graph.size() == 0 || memories.graph.keys.cols != d) {
            throw std::invalid_argument("pipeline: graph memory missing or wrong dimension");
        }
    }
}

// Mask out padded-index rows and positions the input itself flags invalid.
Window gather_masked(const Matrix& h, const std::vector<std::size_t>& indices,
                     const TokenSequence& input) {
    Window w = gather_window(h, indices);
    for (std::size_t j = 0; j < indices.size(); ++j) {
        if (w.valid_mask[j] != 0 && input.attention_mask[indices[j]] == 0) {
            w.valid_mask[j] = 0;
            std::fill(w.vectors.row(j).begin(), w.vectors.row(j).end(), 0.0);
        }
    }
    return w;
}

// Rows at fixed indices; scores are not meaningful on this path and stay 0.
RetrievalResult gather_rows(const KeyValueMemory& memory, const std::vector<std::size_t>& rows) {
    RetrievalResult r;
    r.indices = rows;
    r.scores.assign(rows.size(), 0.0);
    r.keys = Matrix(rows.size(), memory.keys.cols);
    r.values = Matrix(rows.size(), memory.values.cols);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i] >= memory.size()) {
            throw std::invalid_argument("pipeline: frozen row index out of range");
        }
        std::copy_n(memory.keys.row(rows[i]).data(), memory.keys.cols, r.keys.row(i).data());
        std::copy_n(memory.values.row(rows[i]).data(), memory.values.cols,
                    r.values.row(i).data());
    }
    return r;
}

ProbeQuery frozen_probe(const Window& w, const Vec& weights) {
    if (weights.size() != w.vectors.rows) {
        throw std::invalid_argument("pipeline: frozen weight length mismatch");
    }
    ProbeQuery q;
    q.weights = weights;
    q.scores.assign(weights.size(), 0.0);
    q.vector.assign(w.vectors.cols, 0.0);
    for (std::size_t j = 0; j < weights.size(); ++j) {
        if (weights[j] != 0.0) axpy(weights[j], w.vectors.row(j), q.vector);
    }
    return q;
}

}  // namespace

Vec pipeline_features(const PipelineParams& params, const PipelineConfig& config,
                      const PipelineMemories& memories, const TokenSequence& input,
                      PipelineCache* cache, const FrozenSelection* frozen,
                      const DropoutPlan* dropout) {
    config.validate();
    check_memories(config, memories);

    PipelineCache local;
    PipelineCache& c = cache != nullptr ? *cache : local;
    c.windows.clear();

    const Matrix h = encode(params.encoder, input, nullptr, &c.enc, dropout);

    std::vector<FusedKnowledge> fused;
    if (config.use_retrieval) {
        c.plan = plan_windows(input.length(), config.chunk_len);
        if (frozen != nullptr && frozen->windows.size() != c.plan.n_probe()) {
            throw std::invalid_argument("pipeline: frozen selection window count mismatch");
        }
        c.windows.resize(c.plan.n_probe());
        for (std::size_t w = 0; w < c.plan.n_probe(); ++w) {
            WindowTrace& wt = c.windows[w];
            wt.window = gather_masked(h, c.plan.probe_windows[w], input);
            wt.probe = frozen != nullptr ? frozen_probe(wt.window, frozen->windows[w].weights)
                                         : build_probe(wt.window, config.probe);
            if (config.use_doc) {
                wt.doc_hits = frozen != nullptr
                                  ? gather_rows(memories.doc, frozen->windows[w].doc_rows)
                                  : top_k(wt.probe, memories.doc, config.top_k,
                                          config.similarity);
                wt.doc_vec = cross_attend(params.cross_attn, wt.probe.vector, wt.doc_hits,
                                          &wt.doc_ca, dropout);
            } else {
                wt.doc_vec.assign(config.encoder.d_model, 0.0);
            }
            if (config.use_graph) {
                wt.graph_hits = frozen != nullptr
                                    ? gather_rows(memories.graph, frozen->windows[w].graph_rows)
                                    : top_k(wt.probe, memories.graph, config.top_k,
                                            config.similarity);
                wt.graph_vec = cross_attend(params.cross_attn, wt.probe.vector, wt.graph_hits,
                                            &wt.graph_ca, dropout);
            } else {
                wt.graph_vec.assign(config.encoder.d_model, 0.0);
            }
            wt.fused = fuse(wt.doc_vec, wt.graph_vec);
            fused.push_back(wt.fused);
        }
    }

    c.features = assemble_features(h, input.attention_mask, fused, config.n_probe_max());
    return c.features;
}

double pipeline_loss(const PipelineParams& params, const PipelineConfig& config,
                     const PipelineMemories& memories, const TokenSequence& input, int label,
                     PipelineCache* cache, const FrozenSelection* frozen,
                     const DropoutPlan* dropout) {
    PipelineCache local;
    PipelineCache& c = cache != nullptr ? *cache : local;
    const Vec features = pipeline_features(params, config, memories, input, &c, frozen, dropout);
    return head_loss(params.head, features, label, &c.head);
}

double pipeline_loss_backward(const PipelineParams& params, const PipelineConfig& config,
                              const PipelineMemories& memories, const TokenSequence& input,
                              int label, PipelineParams& grads, const FrozenSelection* frozen,
                              const DropoutPlan* dropout) {
    PipelineCache c;
    const double loss = pipeline_loss(params, config, memories, input, label, &c, frozen,
                                      dropout);

    const Vec d_features = head_loss_backward(params.head, c.head, label, &grads.head);

    const std::size_t n = input.length();
    const std::size_t d = config.encoder.d_model;
    Matrix d_h(n, d, 0.0);

    std::size_t n_valid = 0;
    for (std::size_t i = 0; i < n; ++i) n_valid += input.attention_mask[i] != 0 ? 1 : 0;
    const double inv_valid = 1.0 / static_cast<double>(n_valid);
    for (std::size_t i = 0; i < n; ++i) {
        if (input.attention_mask[i] == 0) continue;
        axpy(inv_valid, std::span<const double>(d_features.data(), d), d_h.row(i));
    }

    for (std::size_t w = 0; w < c.windows.size(); ++w) {
        WindowTrace& wt = c.windows[w];
        const std::span<const double> df(d_features.data() + d + w * 2 * d, 2 * d);
        Vec d_doc, d_graph;
        fuse_backward(wt.doc_vec, wt.graph_vec, df, d_doc, d_graph);

        Vec d_query(d, 0.0);
        if (config.use_doc) {
            cross_attend_backward(params.cross_attn, wt.doc_ca, d_doc, &grads.cross_attn,
                                  &d_query);
        }
        if (config.use_graph) {
            cross_attend_backward(params.cross_attn, wt.graph_ca, d_graph, &grads.cross_attn,
                                  &d_query);
        }

        const Matrix d_rows = probe_backward(wt.window, wt.probe, d_query);
        for (std::size_t j = 0; j < d_rows.rows; ++j) {
            const std::size_t idx = c.plan.probe_windows[w][j];
            if (wt.window.valid_mask[j] == 0) continue;
            axpy(1.0, d_rows.row(j), d_h.row(idx));
        }
    }

    encode_backward(params.encoder, c.enc, d_h, &grads.encoder, nullptr, nullptr, nullptr);
    return loss;
}

double pipeline_predict(const PipelineParams& params, const PipelineConfig& config,
                        const PipelineMemories& memories, const TokenSequence& input) {
    const Vec features = pipeline_features(params, config, memories, input);
    return head_predict(params.head, features);
}

FrozenSelection capture_selection(const PipelineParams& params, const PipelineConfig& config,
                                  const PipelineMemories& memories, const TokenSequence& input) {
    PipelineCache c;
    pipeline_features(params, config, memories, input, &c);
    FrozenSelection sel;
    sel.windows.resize(c.windows.size());
    for (std::size_t w = 0; w < c.windows.size(); ++w) {
        sel.windows[w].weights = c.windows[w].probe.weights;
        sel.windows[w].doc_rows = c.windows[w].doc_hits.indices;
        sel.windows[w].graph_rows = c.windows[w].graph_hits.indices;
    }
    return sel;
}

}  // namespace keymem
