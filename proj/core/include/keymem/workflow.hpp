#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "keymem/config.hpp"
#include "keymem/ffn.hpp"
#include "keymem/knowledge.hpp"
#include "keymem/metrics.hpp"
#include "keymem/pipeline.hpp"
#include "keymem/synthdata.hpp"

namespace keymem {

// Orchestration shared by the CLI and the end-to-end tests. One workspace
// directory holds the gen-data files plus the checkpoint subdirectories
// (encoder_doc, lora_graph) that training expects next to them.

void run_gen_data(const RunConfig& cfg, const std::filesystem::path& out_dir);

InfusionReport run_infuse_document(const RunConfig& cfg, const std::filesystem::path& data_dir,
                                   const std::filesystem::path& out_ckpt);

InfusionReport run_infuse_graph(const RunConfig& cfg, const std::filesystem::path& data_dir,
                                const std::filesystem::path& base_ckpt,
                                const std::filesystem::path& out_ckpt);

void run_extract_memory(const std::filesystem::path& ckpt, int layer, MemorySource source,
                        const std::filesystem::path& out_ckpt);

struct TrainOutcome {
    std::size_t epochs_run = 0;
    std::size_t best_epoch = 0;
    double best_dev_auroc = 0.0;
    std::filesystem::path checkpoint;
};

// Fine-tunes encoder + cross-attention + head on the task labels. The
// backbone starts from the document-adapted checkpoint for every variant;
// memory banks are extracted once up front and stay frozen.
TrainOutcome run_train(const RunConfig& cfg, const std::filesystem::path& workspace,
                       const std::filesystem::path& out_ckpt);

struct EvalOutcome {
    MetricsReport report;
    std::filesystem::path csv_path;
    std::filesystem::path json_path;
};

// Self-contained: the training checkpoint embeds the resolved run config,
// so the split is regenerated from it rather than read from a data path.
EvalOutcome run_evaluate(const std::filesystem::path& ckpt, const std::string& split,
                         const std::filesystem::path& out_dir);

RunConfig apply_axis(const RunConfig& cfg, const std::string& axis, const std::string& value);
std::vector<std::string> default_grid(const std::string& axis, const RunConfig& cfg);

// One training + test evaluation per grid value, reusing (or creating) the
// shared data and infusion checkpoints in the workspace. Returns the path of
// the written ablate-<axis>.csv.
std::filesystem::path run_ablate(const RunConfig& cfg, const std::string& axis,
                                 const std::vector<std::string>& grid,
                                 const std::filesystem::path& workspace,
                                 const std::filesystem::path& out_dir);

// Checkpoint plumbing reused across subcommands.
EncoderParams load_encoder_checkpoint(const std::filesystem::path& dir,
                                      const EncoderConfig& config);
LoraSet load_lora_checkpoint(const std::filesystem::path& dir, const EncoderConfig& config,
                             std::size_t rank);
RunConfig checkpoint_run_config(const std::filesystem::path& dir);

}  // namespace keymem
