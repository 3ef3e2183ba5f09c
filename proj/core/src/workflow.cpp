#include "keymem/workflow.hpp"

#include <algorithm>
#include <fstream>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

#include "keymem/checkpoint.hpp"
#include "keymem/optim.hpp"

namespace keymem {

namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void zero_refs(const std::vector<TensorRef>& refs) {
    for (const TensorRef& r : refs) std::fill(r.data, r.data + r.size, 0.0);
}

void scale_refs(const std::vector<TensorRef>& refs, double alpha) {
    for (const TensorRef& r : refs) {
        for (std::size_t i = 0; i < r.size; ++i) r.data[i] *= alpha;
    }
}

json report_json(const InfusionReport& r) {
    return {{"initial_loss", r.initial_loss},
            {"final_loss", r.final_loss},
            {"holdout_perplexity_before", r.holdout_perplexity_before},
            {"holdout_perplexity_after", r.holdout_perplexity_after},
            {"epoch_losses", r.epoch_losses}};
}

json run_config_tree(const RunConfig& cfg) { return json::parse(run_config_json(cfg)); }

void require_data_match(const std::string& have, const RunConfig& cfg, const std::string& what) {
    const std::string want = data_hash(cfg);
    if (have != want) {
        throw ConfigMismatchError(what + ": data hash " + have +
                                  " does not match configured generator (" + want + ")");
    }
}

void warn_config_drift(const CheckpointMeta& meta, const RunConfig& cfg,
                       const std::string& what) {
    const std::string now = config_hash(cfg);
    if (!meta.config_hash.empty() && meta.config_hash != now) {
        std::cerr << "[keymem] note: " << what << " was produced under config "
                  << meta.config_hash << ", current is " << now
                  << " (data-compatible; proceeding)\n";
    }
}

Dataset load_matching_dataset(const RunConfig& cfg, const fs::path& data_dir) {
    Dataset dataset = load_dataset(data_dir.string());
    require_data_match(data_hash(dataset.config), cfg, "dataset at " + data_dir.string());
    return dataset;
}

struct LabeledSequence {
    TokenSequence tokens;
    int label = 0;
};

std::vector<LabeledSequence> labeled_split(const Dataset& dataset, const RunConfig& cfg,
                                           const std::string& split) {
    const long alpha = dataset.config.readmission_window_days;
    const bool mortality = cfg.task == "mortality";
    std::vector<LabeledSequence> out;
    for (const SyntheticRecord* r : dataset.split_records(split)) {
        LabeledSequence item;
        item.tokens = tokenize_record(*r, dataset.vocab, alpha);
        if (item.tokens.length() > cfg.encoder.max_seq_len) {
            throw std::invalid_argument("record " + r->patient_id + " has " +
                                        std::to_string(item.tokens.length()) +
                                        " tokens, above max_seq_len " +
                                        std::to_string(cfg.encoder.max_seq_len));
        }
        item.label = mortality ? r->mortality_label : r->readmission_label;
        out.push_back(std::move(item));
    }
    if (out.empty()) {
        throw std::invalid_argument("split '" + split + "' is empty");
    }
    return out;
}

double split_auroc(const PipelineParams& params, const PipelineConfig& pconfig,
                   const PipelineMemories& memories,
                   const std::vector<LabeledSequence>& items) {
    std::vector<double> scores(items.size());
    std::vector<int> labels(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        scores[i] = pipeline_predict(params, pconfig, memories, items[i].tokens);
        labels[i] = items[i].label;
    }
    try {
        return auroc(scores, labels);
    } catch (const std::invalid_argument&) {
        return 0.5;  // single-class fold; neutral score for model selection only
    }
}

PipelineMemories build_memories(const RunConfig& cfg, const VariantFlags& flags,
                                const EncoderParams& doc_encoder, const LoraSet* graph_lora) {
    const std::size_t layer = cfg.resolved_layer();
    PipelineMemories mem;
    if (flags.use_doc) {
        mem.doc = extract_document_memory(doc_encoder.blocks[layer].ffn, layer);
    }
    if (flags.use_graph) {
        if (graph_lora == nullptr) {
            throw std::invalid_argument("variant " + cfg.variant +
                                        " needs graph adapters but none were loaded");
        }
        mem.graph = extract_graph_memory(graph_lora->layers[layer], layer);
    }
    return mem;
}

std::string sanitize_component(const std::string& s) {
    std::string out = s;
    for (char& c : out) {
        const bool ok = (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') ||
                        (c >= '0' && c <= '9') || c == '-' || c == '_' || c == '.';
        if (!ok) c = '_';
    }
    return out;
}

}  // namespace

void run_gen_data(const RunConfig& cfg, const fs::path& out_dir) {
    cfg.validate();
    const Dataset dataset = generate(cfg.generator);
    fs::create_directories(out_dir);
    write_dataset(dataset, out_dir.string());

    json prov{{"config_hash", config_hash(cfg)},
              {"data_hash", data_hash(cfg)},
              {"run_config", run_config_tree(cfg)}};
    std::ofstream out(out_dir / "provenance.json", std::ios::trunc);
    if (!out) {
        throw std::runtime_error("gen-data: cannot write " +
                                 (out_dir / "provenance.json").string());
    }
    out << prov.dump(2) << "\n";
    std::cerr << "[keymem] gen-data: wrote " << dataset.records.size() << " records, "
              << dataset.triples.size() << " triples, " << dataset.corpus.size()
              << " corpus docs to " << out_dir.string() << "\n";
}

InfusionReport run_infuse_document(const RunConfig& cfg, const fs::path& data_dir,
                                   const fs::path& out_ckpt) {
    cfg.validate();
    const Dataset dataset = load_matching_dataset(cfg, data_dir);

    Rng rng(cfg.doc_infusion.seed);
    EncoderParams params = init_encoder(cfg.encoder, rng);
    const InfusionReport report =
        train_document_memory(params, dataset.corpus, dataset.vocab, cfg.doc_infusion);

    CheckpointMeta meta;
    meta.kind = "encoder";
    meta.seed = cfg.doc_infusion.seed;
    meta.config_hash = config_hash(cfg);
    meta.data_hash = data_hash(cfg);
    meta.extra_json =
        json{{"stage", "document"}, {"run_config", run_config_tree(cfg)}, {"report", report_json(report)}}
            .dump();
    save_checkpoint(out_ckpt, param_refs(params), meta);
    std::cerr << "[keymem] infuse document: holdout perplexity "
              << report.holdout_perplexity_before << " -> " << report.holdout_perplexity_after
              << ", checkpoint " << out_ckpt.string() << "\n";
    return report;
}

InfusionReport run_infuse_graph(const RunConfig& cfg, const fs::path& data_dir,
                                const fs::path& base_ckpt, const fs::path& out_ckpt) {
    cfg.validate();
    const Dataset dataset = load_matching_dataset(cfg, data_dir);

    const CheckpointMeta base_meta = read_checkpoint_meta(base_ckpt);
    require_data_match(base_meta.data_hash, cfg, "base checkpoint " + base_ckpt.string());
    warn_config_drift(base_meta, cfg, "base checkpoint " + base_ckpt.string());
    const EncoderParams base = load_encoder_checkpoint(base_ckpt, cfg.encoder);

    InfusionReport report;
    LoraSet lora = train_graph_memory(base, dataset.triples, dataset.vocab, cfg.lora_rank,
                                      cfg.graph_infusion, &report);

    CheckpointMeta meta;
    meta.kind = "lora";
    meta.seed = cfg.graph_infusion.seed;
    meta.config_hash = config_hash(cfg);
    meta.data_hash = data_hash(cfg);
    meta.extra_json = json{{"stage", "graph"},
                           {"rank", cfg.lora_rank},
                           {"run_config", run_config_tree(cfg)},
                           {"report", report_json(report)}}
                          .dump();
    save_checkpoint(out_ckpt, lora_refs(lora), meta);
    std::cerr << "[keymem] infuse graph: triple loss " << report.initial_loss << " -> "
              << report.final_loss << ", checkpoint " << out_ckpt.string() << "\n";
    return report;
}

EncoderParams load_encoder_checkpoint(const fs::path& dir, const EncoderConfig& config) {
    Rng rng(0);
    EncoderParams params = init_encoder(config, rng);
    load_checkpoint(dir, param_refs(params));
    return params;
}

LoraSet load_lora_checkpoint(const fs::path& dir, const EncoderConfig& config,
                             std::size_t rank) {
    Rng rng(0);
    LoraSet lora = init_lora(config, rank, rng);
    load_checkpoint(dir, lora_refs(lora));
    return lora;
}

RunConfig checkpoint_run_config(const fs::path& dir) {
    const CheckpointMeta meta = read_checkpoint_meta(dir);
    if (meta.extra_json.empty()) {
        throw std::runtime_error("checkpoint " + dir.string() + " carries no run config");
    }
    const json extra = json::parse(meta.extra_json);
    if (!extra.contains("run_config")) {
        throw std::runtime_error("checkpoint " + dir.string() + " carries no run config");
    }
    return parse_run_config(extra.at("run_config").dump());
}

void run_extract_memory(const fs::path& ckpt, int layer, MemorySource source,
                        const fs::path& out_ckpt) {
    const CheckpointMeta meta = read_checkpoint_meta(ckpt);
    RunConfig cfg = checkpoint_run_config(ckpt);
    cfg.memory_layer = layer;
    const std::size_t resolved = cfg.resolved_layer();

    KeyValueMemory mem;
    if (source == MemorySource::kDocument) {
        if (meta.kind != "encoder") {
            throw std::invalid_argument("extract-memory: source doc needs an encoder checkpoint, got kind '" +
                                        meta.kind + "'");
        }
        const EncoderParams params = load_encoder_checkpoint(ckpt, cfg.encoder);
        mem = extract_document_memory(params.blocks[resolved].ffn, resolved);
    } else {
        if (meta.kind != "lora") {
            throw std::invalid_argument("extract-memory: source graph needs a lora checkpoint, got kind '" +
                                        meta.kind + "'");
        }
        const LoraSet lora = load_lora_checkpoint(ckpt, cfg.encoder, cfg.lora_rank);
        mem = extract_graph_memory(lora.layers[resolved], resolved);
    }

    CheckpointMeta out_meta;
    out_meta.kind = "memory";
    out_meta.seed = meta.seed;
    out_meta.config_hash = meta.config_hash;
    out_meta.data_hash = meta.data_hash;
    out_meta.extra_json = json{{"source", source == MemorySource::kDocument ? "doc" : "graph"},
                               {"layer", resolved},
                               {"rows", mem.size()},
                               {"run_config", run_config_tree(cfg)}}
                              .dump();
    std::vector<TensorRef> tensors{tensor_ref("memory.keys", mem.keys),
                                   tensor_ref("memory.values", mem.values)};
    save_checkpoint(out_ckpt, tensors, out_meta);
    std::cerr << "[keymem] extract-memory: " << mem.size() << " rows from layer " << resolved
              << " -> " << out_ckpt.string() << "\n";
}

TrainOutcome run_train(const RunConfig& cfg, const fs::path& workspace,
                       const fs::path& out_ckpt) {
    cfg.validate();
    const Dataset dataset = load_matching_dataset(cfg, workspace);
    const VariantFlags flags = parse_variant(cfg.variant);

    const fs::path doc_ckpt = workspace / "encoder_doc";
    const CheckpointMeta doc_meta = read_checkpoint_meta(doc_ckpt);
    require_data_match(doc_meta.data_hash, cfg, "encoder checkpoint " + doc_ckpt.string());
    warn_config_drift(doc_meta, cfg, "encoder checkpoint " + doc_ckpt.string());
    const EncoderParams doc_encoder = load_encoder_checkpoint(doc_ckpt, cfg.encoder);

    LoraSet lora;
    if (flags.use_graph) {
        const fs::path lora_ckpt = workspace / "lora_graph";
        const CheckpointMeta lora_meta = read_checkpoint_meta(lora_ckpt);
        require_data_match(lora_meta.data_hash, cfg, "lora checkpoint " + lora_ckpt.string());
        warn_config_drift(lora_meta, cfg, "lora checkpoint " + lora_ckpt.string());
        lora = load_lora_checkpoint(lora_ckpt, cfg.encoder, cfg.lora_rank);
    }

    PipelineMemories memories =
        build_memories(cfg, flags, doc_encoder, flags.use_graph ? &lora : nullptr);
    const PipelineConfig pconfig = make_pipeline_config(cfg);

    const std::vector<LabeledSequence> train_items = labeled_split(dataset, cfg, "train");
    const std::vector<LabeledSequence> dev_items = labeled_split(dataset, cfg, "dev");
    {
        bool pos = false, neg = false;
        for (const LabeledSequence& it : train_items) (it.label == 1 ? pos : neg) = true;
        if (!pos || !neg) {
            throw std::invalid_argument("training split has a single class for task " + cfg.task);
        }
    }

    Rng master(cfg.train.seed);
    Rng init_rng = master.fork(0);
    Rng shuffle_rng = master.fork(1);
    Rng dropout_rng = master.fork(2);

    PipelineParams params = init_pipeline(pconfig, init_rng);
    params.encoder = doc_encoder;  // backbone starts from the adapted weights

    AdamWConfig opt_cfg;
    opt_cfg.learning_rate = cfg.train.learning_rate;
    opt_cfg.epsilon = cfg.train.adam_epsilon;
    opt_cfg.weight_decay = cfg.train.weight_decay;
    AdamW optimizer(opt_cfg);

    std::vector<TensorRef> refs = pipeline_refs(params);
    PipelineParams grads = zero_like(params);
    std::vector<TensorRef> grad_refs = pipeline_refs(grads);

    DropoutPlan dropout{cfg.encoder.dropout_rate, &dropout_rng};
    const DropoutPlan* dropout_ptr =
        cfg.train.use_dropout && cfg.encoder.dropout_rate > 0.0 ? &dropout : nullptr;

    PipelineParams best = params;
    double best_auroc = -1.0;
    std::size_t best_epoch = 0;
    std::size_t since_best = 0;
    std::vector<json> log_lines;
    std::vector<std::size_t> order(train_items.size());
    std::iota(order.begin(), order.end(), 0);

    std::size_t epochs_run = 0;
    for (std::size_t epoch = 0; epoch < cfg.train.max_epochs; ++epoch) {
        shuffle_rng.shuffle(order);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.train.batch_size) {
            const std::size_t stop = std::min(order.size(), start + cfg.train.batch_size);
            zero_refs(grad_refs);
            double batch_loss = 0.0;
            for (std::size_t i = start; i < stop; ++i) {
                const LabeledSequence& item = train_items[order[i]];
                batch_loss += pipeline_loss_backward(params, pconfig, memories, item.tokens,
                                                     item.label, grads, nullptr, dropout_ptr);
            }
            const double inv = 1.0 / static_cast<double>(stop - start);
            scale_refs(grad_refs, inv);
            optimizer.step(refs, grad_refs);
            epoch_loss += batch_loss;
        }
        epoch_loss /= static_cast<double>(order.size());
        const double dev_auroc = split_auroc(params, pconfig, memories, dev_items);
        epochs_run = epoch + 1;

        const bool improved = dev_auroc > best_auroc;
        if (improved) {
            best = params;
            best_auroc = dev_auroc;
            best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
        }
        log_lines.push_back(json{{"epoch", epoch},
                                 {"train_loss", epoch_loss},
                                 {"dev_auroc", dev_auroc},
                                 {"best", improved}});
        std::cerr << "[keymem] train " << cfg.variant << " epoch " << epoch << " loss "
                  << epoch_loss << " dev_auroc " << dev_auroc << (improved ? " *" : "") << "\n";
        if (since_best >= cfg.train.patience) break;
    }

    CheckpointMeta meta;
    meta.kind = "pipeline";
    meta.seed = cfg.train.seed;
    meta.config_hash = config_hash(cfg);
    meta.data_hash = data_hash(cfg);
    meta.extra_json = json{{"run_config", run_config_tree(cfg)},
                           {"memory_layer_resolved", cfg.resolved_layer()},
                           {"best_epoch", best_epoch},
                           {"best_dev_auroc", best_auroc},
                           {"epochs_run", epochs_run}}
                          .dump();

    std::vector<TensorRef> tensors = pipeline_refs(best);
    if (flags.use_doc) {
        tensors.push_back(tensor_ref("memory_doc.keys", memories.doc.keys));
        tensors.push_back(tensor_ref("memory_doc.values", memories.doc.values));
    }
    if (flags.use_graph) {
        tensors.push_back(tensor_ref("memory_graph.keys", memories.graph.keys));
        tensors.push_back(tensor_ref("memory_graph.values", memories.graph.values));
    }
    save_checkpoint(out_ckpt, tensors, meta);

    std::ofstream log(out_ckpt / "train_log.jsonl", std::ios::trunc);
    if (!log) {
        throw std::runtime_error("train: cannot write " + (out_ckpt / "train_log.jsonl").string());
    }
    for (const json& line : log_lines) log << line.dump() << "\n";

    TrainOutcome outcome;
    outcome.epochs_run = epochs_run;
    outcome.best_epoch = best_epoch;
    outcome.best_dev_auroc = best_auroc;
    outcome.checkpoint = out_ckpt;
    return outcome;
}

EvalOutcome run_evaluate(const fs::path& ckpt, const std::string& split,
                         const fs::path& out_dir) {
    if (split != "dev" && split != "test") {
        throw std::invalid_argument("evaluate: split must be dev or test, got '" + split + "'");
    }
    const CheckpointMeta meta = read_checkpoint_meta(ckpt);
    if (meta.kind != "pipeline") {
        throw std::invalid_argument("evaluate: expected a pipeline checkpoint, got kind '" +
                                    meta.kind + "'");
    }
    const RunConfig cfg = checkpoint_run_config(ckpt);
    const VariantFlags flags = parse_variant(cfg.variant);
    const PipelineConfig pconfig = make_pipeline_config(cfg);
    const std::size_t layer = cfg.resolved_layer();

    Rng rng(0);
    PipelineParams params = init_pipeline(pconfig, rng);
    PipelineMemories memories;
    std::vector<TensorRef> tensors = pipeline_refs(params);
    if (flags.use_doc) {
        memories.doc.keys = Matrix(cfg.encoder.d_ff, cfg.encoder.d_model);
        memories.doc.values = Matrix(cfg.encoder.d_ff, cfg.encoder.d_model);
        memories.doc.source = MemorySource::kDocument;
        memories.doc.layer_index = layer;
        tensors.push_back(tensor_ref("memory_doc.keys", memories.doc.keys));
        tensors.push_back(tensor_ref("memory_doc.values", memories.doc.values));
    }
    if (flags.use_graph) {
        memories.graph.keys = Matrix(cfg.encoder.d_ff, cfg.encoder.d_model);
        memories.graph.values = Matrix(cfg.encoder.d_ff, cfg.encoder.d_model);
        memories.graph.source = MemorySource::kGraph;
        memories.graph.layer_index = layer;
        tensors.push_back(tensor_ref("memory_graph.keys", memories.graph.keys));
        tensors.push_back(tensor_ref("memory_graph.values", memories.graph.values));
    }
    load_checkpoint(ckpt, tensors);

    const Dataset dataset = generate(cfg.generator);
    const std::vector<LabeledSequence> items = labeled_split(dataset, cfg, split);
    std::vector<double> scores(items.size());
    std::vector<int> labels(items.size());
    for (std::size_t i = 0; i < items.size(); ++i) {
        scores[i] = pipeline_predict(params, pconfig, memories, items[i].tokens);
        labels[i] = items[i].label;
    }
    const MetricsReport report = evaluate_scores(scores, labels, 0.5);

    fs::create_directories(out_dir);
    EvalOutcome outcome;
    outcome.report = report;
    outcome.csv_path = out_dir / ("metrics-" + split + ".csv");
    outcome.json_path = out_dir / ("metrics-" + split + ".json");

    std::ofstream csv(outcome.csv_path, std::ios::trunc);
    if (!csv) throw std::runtime_error("evaluate: cannot write " + outcome.csv_path.string());
    csv << metrics_csv_header() << "\n" << metrics_csv_row(cfg.task, cfg.variant, report) << "\n";

    json j = json::parse(metrics_json(cfg.task, cfg.variant, report));
    j["split"] = split;
    j["config_hash"] = meta.config_hash;
    j["data_hash"] = meta.data_hash;
    std::ofstream js(outcome.json_path, std::ios::trunc);
    if (!js) throw std::runtime_error("evaluate: cannot write " + outcome.json_path.string());
    js << j.dump(2) << "\n";

    std::cerr << "[keymem] evaluate " << split << ": auroc " << report.auroc << " auprc "
              << report.auprc << " f1 " << report.f1 << "\n";
    return outcome;
}

RunConfig apply_axis(const RunConfig& cfg, const std::string& axis, const std::string& value) {
    RunConfig out = cfg;
    try {
        if (axis == "knowledge-source") {
            out.variant = value;
        } else if (axis == "probe") {
            out.probe = value;
        } else if (axis == "layer") {
            out.memory_layer = std::stoi(value);
        } else if (axis == "chunk") {
            out.chunk_len = static_cast<std::size_t>(std::stoul(value));
        } else if (axis == "topk") {
            out.top_k = static_cast<std::size_t>(std::stoul(value));
        } else {
            throw std::invalid_argument("unknown ablation axis: " + axis);
        }
    } catch (const std::logic_error& e) {
        throw std::invalid_argument("bad grid value '" + value + "' for axis " + axis + ": " +
                                    e.what());
    }
    out.validate();
    return out;
}

std::vector<std::string> default_grid(const std::string& axis, const RunConfig& cfg) {
    if (axis == "knowledge-source") return {"k2k", "doc-only", "graph-only", "no-retrieval"};
    if (axis == "probe") return {"mean", "euclidean", "mahalanobis-diag", "mahalanobis-full"};
    if (axis == "layer") {
        std::vector<std::string> grid;
        for (std::size_t i = 0; i < cfg.encoder.n_layers; ++i) {
            grid.push_back(std::to_string(i));
        }
        return grid;
    }
    if (axis == "chunk") return {"4", "8", "16"};
    if (axis == "topk") return {"2", "4", "8", "16"};
    throw std::invalid_argument("unknown ablation axis: " + axis);
}

fs::path run_ablate(const RunConfig& cfg, const std::string& axis,
                    const std::vector<std::string>& grid, const fs::path& workspace,
                    const fs::path& out_dir) {
    if (grid.empty()) throw std::invalid_argument("ablate: empty grid");

    if (!fs::exists(workspace / "dataset.jsonl")) run_gen_data(cfg, workspace);
    if (!fs::exists(workspace / "encoder_doc" / "manifest.json")) {
        run_infuse_document(cfg, workspace, workspace / "encoder_doc");
    }
    if (!fs::exists(workspace / "lora_graph" / "manifest.json")) {
        run_infuse_graph(cfg, workspace, workspace / "encoder_doc", workspace / "lora_graph");
    }

    std::vector<std::string> rows;
    for (const std::string& value : grid) {
        const RunConfig point = apply_axis(cfg, axis, value);
        const std::string label =
            axis == "knowledge-source" ? value : cfg.variant + "/" + axis + "=" + value;
        const fs::path ckpt = workspace / "ablate" / axis / sanitize_component(value);
        std::cerr << "[keymem] ablate " << axis << " = " << value << "\n";
        run_train(point, workspace, ckpt);
        const EvalOutcome eval = run_evaluate(ckpt, "test", ckpt);
        rows.push_back(metrics_csv_row(point.task, label, eval.report));
    }

    fs::create_directories(out_dir);
    const fs::path table = out_dir / ("ablate-" + axis + ".csv");
    std::ofstream out(table, std::ios::trunc);
    if (!out) throw std::runtime_error("ablate: cannot write " + table.string());
    out << metrics_csv_header() << "\n";
    for (const std::string& row : rows) out << row << "\n";
    std::cerr << "[keymem] ablate " << axis << ": wrote " << table.string() << "\n";
    return table;
}

}  // namespace keymem
