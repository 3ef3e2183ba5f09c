#include "keymem/benchkit.hpp"

#include <algorithm>
#include <chrono>
#include <stdexcept>

#include <json.hpp>

#include "keymem/classifier.hpp"
#include "keymem/pipeline.hpp"

namespace keymem {

namespace {

using nlohmann::json;

// Keeps timed results observable so the loop body cannot be elided.
volatile double g_sink = 0.0;

}  // namespace

std::int64_t now_ns() {
    return std::chrono::duration_cast<std::chrono::nanoseconds>(
               std::chrono::steady_clock::now().time_since_epoch())
        .count();
}

double measure_ns(const std::function<void()>& f, int samples) {
    if (samples < 1) throw std::invalid_argument("measure_ns: samples must be >= 1");
    f();

    long inner = 1;
    for (;;) {
        const std::int64_t t0 = now_ns();
        for (long i = 0; i < inner; ++i) f();
        const std::int64_t dt = now_ns() - t0;
        if (dt >= 1000 || inner >= (1L << 20)) break;
        inner *= 4;
    }

    std::vector<double> times(static_cast<std::size_t>(samples));
    for (double& t : times) {
        const std::int64_t t0 = now_ns();
        for (long i = 0; i < inner; ++i) f();
        t = static_cast<double>(now_ns() - t0) / static_cast<double>(inner);
    }
    const std::size_t mid = times.size() / 2;
    std::nth_element(times.begin(), times.begin() + static_cast<std::ptrdiff_t>(mid),
                     times.end());
    return times[mid];
}

LinearFit linear_fit(std::span<const double> x, std::span<const double> y) {
    if (x.size() != y.size() || x.size() < 2) {
        throw std::invalid_argument("linear_fit: need at least two paired points");
    }
    const double n = static_cast<double>(x.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    if (sxx == 0.0) throw std::invalid_argument("linear_fit: x values are all equal");

    LinearFit fit;
    fit.slope = sxy / sxx;
    fit.intercept = my - fit.slope * mx;
    double ss_res = 0.0, ss_tot = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double pred = fit.intercept + fit.slope * x[i];
        ss_res += (y[i] - pred) * (y[i] - pred);
        ss_tot += (y[i] - my) * (y[i] - my);
    }
    fit.r2 = ss_tot == 0.0 ? (ss_res == 0.0 ? 1.0 : 0.0) : 1.0 - ss_res / ss_tot;
    return fit;
}

RetrievalBenchReport bench_retrieval(const std::vector<std::size_t>& sizes, std::size_t d,
                                     std::size_t k, std::uint64_t seed) {
    if (sizes.size() < 2) throw std::invalid_argument("bench_retrieval: need >= 2 sizes");
    RetrievalBenchReport report;
    report.d = d;
    report.k = k;

    Rng rng(seed);
    for (const std::size_t m : sizes) {
        KeyValueMemory mem;
        mem.keys = Matrix(m, d);
        mem.values = Matrix(m, d);
        for (double& v : mem.keys.data) v = rng.normal();
        for (double& v : mem.values.data) v = rng.normal();
        Vec query(d);
        for (double& v : query) v = rng.normal();

        const double ns = measure_ns([&] {
            const RetrievalResult hits = top_k(query, mem, k);
            g_sink = g_sink + hits.scores[0];
        });
        report.points.push_back({m, ns});
    }

    std::vector<double> xs, ys;
    for (const RetrievalBenchPoint& p : report.points) {
        xs.push_back(static_cast<double>(p.m));
        ys.push_back(p.ns);
    }
    report.fit = linear_fit(xs, ys);
    return report;
}

PipelineBenchReport bench_pipeline(const RunConfig& cfg) {
    cfg.validate();
    const PipelineConfig pconfig = make_pipeline_config(cfg);
    const VariantFlags flags = parse_variant(cfg.variant);

    Rng rng(cfg.train.seed);
    PipelineParams params = init_pipeline(pconfig, rng);

    PipelineMemories mem;
    const std::size_t layer = cfg.resolved_layer();
    if (flags.use_doc) {
        mem.doc = extract_document_memory(params.encoder.blocks[layer].ffn, layer);
    }
    if (flags.use_graph) {
        Rng lora_rng = rng.fork(5);
        const LoraSet lora = init_lora(cfg.encoder, cfg.lora_rank, lora_rng);
        mem.graph = extract_graph_memory(lora.layers[layer], layer);
    }

    TokenSequence input;
    Rng tok_rng = rng.fork(9);
    for (std::size_t i = 0; i < cfg.encoder.max_seq_len; ++i) {
        input.token_ids.push_back(tok_rng.uniform_index(cfg.encoder.vocab_size));
        input.attention_mask.push_back(1);
    }

    PipelineBenchReport report;
    report.variant = cfg.variant;

    Matrix h;
    report.stages.push_back(
        {"encode", measure_ns([&] { h = encode(params.encoder, input); })});

    if (!flags.use_retrieval) {
        report.stages.push_back({"probe", 0.0});
        report.stages.push_back({"retrieve", 0.0});
        report.stages.push_back({"rerank", 0.0});
    } else {
        const WindowPlan plan = plan_windows(input.length(), cfg.chunk_len);

        std::vector<ProbeQuery> probes;
        report.stages.push_back({"probe", measure_ns([&] {
                                     probes.clear();
                                     for (const auto& pw : plan.probe_windows) {
                                         const Window w = gather_window(h, pw);
                                         probes.push_back(build_probe(w, pconfig.probe));
                                     }
                                 })});

        std::vector<RetrievalResult> doc_hits, graph_hits;
        report.stages.push_back(
            {"retrieve", measure_ns([&] {
                 doc_hits.clear();
                 graph_hits.clear();
                 for (const ProbeQuery& p : probes) {
                     if (flags.use_doc) {
                         doc_hits.push_back(top_k(p, mem.doc, cfg.top_k, pconfig.similarity));
                     }
                     if (flags.use_graph) {
                         graph_hits.push_back(top_k(p, mem.graph, cfg.top_k, pconfig.similarity));
                     }
                 }
             })});

        std::vector<FusedKnowledge> fused;
        report.stages.push_back(
            {"rerank", measure_ns([&] {
                 fused.clear();
                 const Vec zero(cfg.encoder.d_model, 0.0);
                 for (std::size_t i = 0; i < probes.size(); ++i) {
                     const Vec dv =
                         flags.use_doc
                             ? cross_attend(params.cross_attn, probes[i].vector, doc_hits[i])
                             : zero;
                     const Vec gv =
                         flags.use_graph
                             ? cross_attend(params.cross_attn, probes[i].vector, graph_hits[i])
                             : zero;
                     fused.push_back(fuse(dv, gv));
                 }
                 g_sink = g_sink + (fused.empty() ? 0.0 : fused[0].vector[0]);
             })});

        report.stages.push_back(
            {"head", measure_ns([&] {
                 const Vec features = assemble_features(h, input.attention_mask, fused,
                                                        pconfig.n_probe_max());
                 const Vec logits = head_logits(params.head, features);
                 g_sink = g_sink + logits[0];
             })});
        return report;
    }

    std::vector<FusedKnowledge> none;
    report.stages.push_back({"head", measure_ns([&] {
                                 const Vec features = assemble_features(
                                     h, input.attention_mask, none, pconfig.n_probe_max());
                                 const Vec logits = head_logits(params.head, features);
                                 g_sink = g_sink + logits[0];
                             })});
    return report;
}

std::string bench_json(const RetrievalBenchReport& report) {
    json points = json::array();
    for (const RetrievalBenchPoint& p : report.points) {
        points.push_back({{"m", p.m}, {"ns", p.ns}});
    }
    json j{{"mode", "retrieval"},
           {"d", report.d},
           {"k", report.k},
           {"points", points},
           {"fit",
            {{"slope_ns_per_row", report.fit.slope},
             {"intercept_ns", report.fit.intercept},
             {"r2", report.fit.r2}}}};
    return j.dump(2);
}

std::string bench_json(const PipelineBenchReport& report) {
    json stages = json::array();
    for (const StageTiming& s : report.stages) {
        stages.push_back({{"stage", s.stage}, {"ns", s.ns}});
    }
    json j{{"mode", "pipeline"}, {"variant", report.variant}, {"stages", stages}};
    return j.dump(2);
}

}  // namespace keymem
