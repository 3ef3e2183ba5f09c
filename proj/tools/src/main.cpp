#include <cstdint>
#include <exception>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "keymem/benchkit.hpp"
#include "keymem/config.hpp"
#include "keymem/workflow.hpp"

namespace {

namespace fs = std::filesystem;

keymem::RunConfig load_config_or_default(const std::string& path) {
    if (path.empty()) return keymem::default_run_config();
    return keymem::load_run_config(path);
}

std::vector<std::string> split_csv(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (const char c : s) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text << "\n";
}

int fail(const std::string& kind, const std::string& msg) {
    std::cerr << nlohmann::json{{"error", msg}, {"kind", kind}}.dump() << "\n";
    return kind == "config-mismatch" ? 3 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"key-value memory retrieval pipeline"};
    app.require_subcommand(1);

    int threads = 1;
    app.add_option("--threads", threads, "worker cap; this build runs everything on one thread")
        ->check(CLI::PositiveNumber);

    std::string config_path, in_dir, out_path, stage, base_ckpt, ckpt, split, source, axis,
        grid, mode, variant, probe, task;
    int layer = -1;
    std::size_t chunk = 0, topk = 0;
    std::uint64_t seed = 0;

    CLI::App* gen = app.add_subcommand("gen-data", "write the synthetic dataset, triples and corpus");
    gen->add_option("--config", config_path, "run config JSON file");
    gen->add_option("--out", out_path, "output directory")->required();

    CLI::App* infuse =
        app.add_subcommand("infuse", "train document or graph knowledge into the encoder");
    infuse->add_option("--stage", stage, "document | graph")
        ->required()
        ->check(CLI::IsMember({"document", "graph"}));
    infuse->add_option("--in", in_dir, "data directory")->required();
    infuse->add_option("--out", out_path, "checkpoint directory")->required();
    infuse->add_option("--config", config_path, "run config JSON file");
    infuse->add_option("--base", base_ckpt,
                       "base encoder checkpoint for the graph stage (default <in>/encoder_doc)");

    CLI::App* extract =
        app.add_subcommand("extract-memory", "export key/value rows from one checkpoint layer");
    extract->add_option("--ckpt", ckpt, "encoder or lora checkpoint directory")->required();
    extract->add_option("--layer", layer, "layer index, negative counts from the end")->required();
    extract->add_option("--source", source, "doc | graph")
        ->required()
        ->check(CLI::IsMember({"doc", "graph"}));
    extract->add_option("--out", out_path, "memory checkpoint directory")->required();

    CLI::App* train = app.add_subcommand("train", "train the outcome classifier pipeline");
    train->add_option("--config", config_path, "run config JSON file");
    train->add_option("--in", in_dir, "workspace with data plus encoder_doc/lora_graph")
        ->required();
    train->add_option("--out", out_path, "checkpoint directory")->required();
    train->add_option("--variant", variant, "pipeline variant")
        ->check(CLI::IsMember({"k2k", "no-retrieval", "doc-only", "graph-only"}));
    train->add_option("--probe", probe, "probe strategy")
        ->check(CLI::IsMember({"mean", "euclidean", "mahalanobis-diag", "mahalanobis-full"}));
    train->add_option("--chunk", chunk, "window length L");
    train->add_option("--topk", topk, "retrieved rows per source");
    train->add_option("--layer", layer, "memory layer, negative counts from the end");
    train->add_option("--task", task, "label to predict")
        ->check(CLI::IsMember({"mortality", "readmission"}));
    train->add_option("--seed", seed, "training seed");

    CLI::App* eval = app.add_subcommand("evaluate", "score a trained checkpoint on a split");
    eval->add_option("--ckpt", ckpt, "pipeline checkpoint directory")->required();
    eval->add_option("--split", split, "dev | test")
        ->required()
        ->check(CLI::IsMember({"dev", "test"}));
    eval->add_option("--out", out_path, "metrics directory (default: checkpoint directory)");

    CLI::App* ablate = app.add_subcommand("ablate", "sweep one axis and emit a metrics table");
    ablate->add_option("--config", config_path, "run config JSON file");
    ablate->add_option("--axis", axis, "sweep axis")
        ->required()
        ->check(CLI::IsMember({"knowledge-source", "probe", "layer", "chunk", "topk"}));
    ablate->add_option("--grid", grid, "comma-separated values (default depends on the axis)");
    ablate->add_option("--in", in_dir, "workspace directory")->required();
    ablate->add_option("--out", out_path, "table directory (default <in>/ablations)");

    CLI::App* bench = app.add_subcommand("bench", "timing micro-benchmarks");
    bench->add_option("--mode", mode, "retrieval | pipeline")
        ->required()
        ->check(CLI::IsMember({"retrieval", "pipeline"}));
    bench->add_option("--config", config_path, "run config JSON file (pipeline mode)");
    bench->add_option("--out", out_path, "JSON report path (default bench-<mode>.json)");

    CLI11_PARSE(app, argc, argv);

    if (threads != 1) {
        std::cerr << "[keymem] note: single-threaded build, --threads " << threads
                  << " capped at 1\n";
    }

    try {
        if (gen->parsed()) {
            keymem::run_gen_data(load_config_or_default(config_path), out_path);
        } else if (infuse->parsed()) {
            const keymem::RunConfig cfg = load_config_or_default(config_path);
            if (stage == "document") {
                keymem::run_infuse_document(cfg, in_dir, out_path);
            } else {
                const fs::path base =
                    base_ckpt.empty() ? fs::path(in_dir) / "encoder_doc" : fs::path(base_ckpt);
                keymem::run_infuse_graph(cfg, in_dir, base, out_path);
            }
        } else if (extract->parsed()) {
            const keymem::MemorySource src = source == "doc" ? keymem::MemorySource::kDocument
                                                             : keymem::MemorySource::kGraph;
            keymem::run_extract_memory(ckpt, layer, src, out_path);
        } else if (train->parsed()) {
            keymem::RunConfig cfg = load_config_or_default(config_path);
            if (train->count("--variant") > 0) cfg.variant = variant;
            if (train->count("--probe") > 0) cfg.probe = probe;
            if (train->count("--chunk") > 0) cfg.chunk_len = chunk;
            if (train->count("--topk") > 0) cfg.top_k = topk;
            if (train->count("--layer") > 0) cfg.memory_layer = layer;
            if (train->count("--task") > 0) cfg.task = task;
            if (train->count("--seed") > 0) cfg.train.seed = seed;
            cfg.validate();
            keymem::run_train(cfg, in_dir, out_path);
        } else if (eval->parsed()) {
            const fs::path out = out_path.empty() ? fs::path(ckpt) : fs::path(out_path);
            keymem::run_evaluate(ckpt, split, out);
        } else if (ablate->parsed()) {
            const keymem::RunConfig cfg = load_config_or_default(config_path);
            const std::vector<std::string> values =
                grid.empty() ? keymem::default_grid(axis, cfg) : split_csv(grid);
            const fs::path out =
                out_path.empty() ? fs::path(in_dir) / "ablations" : fs::path(out_path);
            keymem::run_ablate(cfg, axis, values, in_dir, out);
        } else if (bench->parsed()) {
            const fs::path out =
                out_path.empty() ? fs::path("bench-" + mode + ".json") : fs::path(out_path);
            if (mode == "retrieval") {
                const keymem::RetrievalBenchReport report =
                    keymem::bench_retrieval({1024, 4096, 16384, 65536}, 64, 8, 42);
                write_text(out, keymem::bench_json(report));
                std::cerr << "[keymem] bench retrieval: r2 " << report.fit.r2 << ", report "
                          << out.string() << "\n";
            } else {
                const keymem::PipelineBenchReport report =
                    keymem::bench_pipeline(load_config_or_default(config_path));
                write_text(out, keymem::bench_json(report));
                std::cerr << "[keymem] bench pipeline: report " << out.string() << "\n";
            }
        }
    } catch (const keymem::ConfigMismatchError& e) {
        return fail("config-mismatch", e.what());
    } catch (const std::exception& e) {
        return fail("runtime", e.what());
    }
    return 0;
}
