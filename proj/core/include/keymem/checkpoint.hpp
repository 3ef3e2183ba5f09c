#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "keymem/matrix.hpp"

namespace keymem {

// A checkpoint is a directory holding manifest.json plus one binary file per
// tensor. Blobs are raw little-endian float32, row-major, named after the
// tensor path ("encoder.block0.attn.wq.bin").
struct CheckpointMeta {
    std::string kind;
    std::uint64_t seed = 0;
    std::string config_hash;
    std::string data_hash;
    std::string extra_json;
};

struct TensorInfo {
    std::string name;
    std::size_t rows = 0;
    std::size_t cols = 0;
};

inline TensorRef tensor_ref(const std::string& name, Matrix& m) {
    return {name, m.data.data(), m.data.size(), m.rows, m.cols};
}

inline TensorRef tensor_ref(const std::string& name, Vec& v) {
    return {name, v.data(), v.size(), 1, v.size()};
}

void save_checkpoint(const std::filesystem::path& dir,
                     const std::vector<TensorRef>& tensors,
                     const CheckpointMeta& meta);

// Fills the given tensors from blob data. The manifest must list exactly the
// requested tensors with matching shapes; anything missing, extra, or
// reshaped is an error.
CheckpointMeta load_checkpoint(const std::filesystem::path& dir,
                               const std::vector<TensorRef>& tensors);

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir);

std::vector<TensorInfo> read_checkpoint_tensors(const std::filesystem::path& dir);

}  // namespace keymem
