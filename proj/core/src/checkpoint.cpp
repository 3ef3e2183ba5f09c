#include "keymem/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <map>
#include <set>
#include <stdexcept>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "checkpoint blobs assume a little-endian host");

namespace keymem {

namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;

std::string blob_name(const std::string& tensor) { return tensor + ".bin"; }

json read_manifest(const std::filesystem::path& dir) {
    const auto path = dir / "manifest.json";
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("checkpoint: cannot open " + path.string());
    }
    json m;
    try {
        in >> m;
    } catch (const json::exception& e) {
        throw std::runtime_error("checkpoint: bad manifest " + path.string() + ": " + e.what());
    }
    if (m.value("format_version", -1) != kFormatVersion) {
        throw std::runtime_error("checkpoint: unsupported format_version in " + path.string());
    }
    return m;
}

CheckpointMeta meta_from_manifest(const json& m) {
    CheckpointMeta meta;
    meta.kind = m.value("kind", "");
    meta.seed = m.value("seed", std::uint64_t{0});
    meta.config_hash = m.value("config_hash", "");
    meta.data_hash = m.value("data_hash", "");
    if (m.contains("extra")) meta.extra_json = m.at("extra").dump();
    return meta;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& dir,
                     const std::vector<TensorRef>& tensors,
                     const CheckpointMeta& meta) {
    std::filesystem::create_directories(dir);

    json manifest;
    manifest["format_version"] = kFormatVersion;
    manifest["kind"] = meta.kind;
    manifest["seed"] = meta.seed;
    manifest["config_hash"] = meta.config_hash;
    manifest["data_hash"] = meta.data_hash;
    if (!meta.extra_json.empty()) {
        manifest["extra"] = json::parse(meta.extra_json);
    }

    json tensor_list = json::array();
    std::set<std::string> seen;
    for (const TensorRef& t : tensors) {
        if (!seen.insert(t.name).second) {
            throw std::invalid_argument("checkpoint: duplicate tensor " + t.name);
        }
        if (t.rows * t.cols != t.size) {
            throw std::invalid_argument("checkpoint: inconsistent shape for " + t.name);
        }
        tensor_list.push_back({{"name", t.name},
                               {"rows", t.rows},
                               {"cols", t.cols},
                               {"dtype", "f32"},
                               {"file", blob_name(t.name)}});

        std::vector<float> buf(t.size);
        for (std::size_t i = 0; i < t.size; ++i) buf[i] = static_cast<float>(t.data[i]);
        const auto path = dir / blob_name(t.name);
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw std::runtime_error("checkpoint: cannot write " + path.string());
        }
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (!out) {
            throw std::runtime_error("checkpoint: short write to " + path.string());
        }
    }
    manifest["tensors"] = tensor_list;

    const auto path = dir / "manifest.json";
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw std::runtime_error("checkpoint: cannot write " + path.string());
    }
    out << manifest.dump(2) << "\n";
}

CheckpointMeta load_checkpoint(const std::filesystem::path& dir,
                               const std::vector<TensorRef>& tensors) {
    const json manifest = read_manifest(dir);

    struct Entry {
        std::size_t rows;
        std::size_t cols;
        std::string file;
    };
    std::map<std::string, Entry> listed;
    for (const json& t : manifest.at("tensors")) {
        if (t.value("dtype", "") != "f32") {
            throw std::runtime_error("checkpoint: unsupported dtype for " +
                                     t.value("name", std::string("?")));
        }
        listed[t.at("name").get<std::string>()] = {t.at("rows").get<std::size_t>(),
                                                   t.at("cols").get<std::size_t>(),
                                                   t.at("file").get<std::string>()};
    }

    if (listed.size() != tensors.size()) {
        throw std::runtime_error("checkpoint: " + dir.string() + " lists " +
                                 std::to_string(listed.size()) + " tensors, expected " +
                                 std::to_string(tensors.size()));
    }
    for (const TensorRef& t : tensors) {
        const auto it = listed.find(t.name);
        if (it == listed.end()) {
            throw std::runtime_error("checkpoint: missing tensor " + t.name + " in " +
                                     dir.string());
        }
        if (it->second.rows != t.rows || it->second.cols != t.cols) {
            throw std::runtime_error("checkpoint: shape mismatch for " + t.name + ": stored " +
                                     std::to_string(it->second.rows) + "x" +
                                     std::to_string(it->second.cols) + ", expected " +
                                     std::to_string(t.rows) + "x" + std::to_string(t.cols));
        }
        const auto path = dir / it->second.file;
        std::ifstream in(path, std::ios::binary);
        if (!in) {
            throw std::runtime_error("checkpoint: cannot open " + path.string());
        }
        std::vector<float> buf(t.size);
        in.read(reinterpret_cast<char*>(buf.data()),
                static_cast<std::streamsize>(buf.size() * sizeof(float)));
        if (in.gcount() != static_cast<std::streamsize>(buf.size() * sizeof(float))) {
            throw std::runtime_error("checkpoint: truncated blob " + path.string());
        }
        in.peek();
        if (!in.eof()) {
            throw std::runtime_error("checkpoint: trailing bytes in " + path.string());
        }
        for (std::size_t i = 0; i < t.size; ++i) t.data[i] = static_cast<double>(buf[i]);
    }

    return meta_from_manifest(manifest);
}

CheckpointMeta read_checkpoint_meta(const std::filesystem::path& dir) {
    return meta_from_manifest(read_manifest(dir));
}

std::vector<TensorInfo> read_checkpoint_tensors(const std::filesystem::path& dir) {
    const json manifest = read_manifest(dir);
    std::vector<TensorInfo> out;
    for (const json& t : manifest.at("tensors")) {
        out.push_back({t.at("name").get<std::string>(), t.at("rows").get<std::size_t>(),
                       t.at("cols").get<std::size_t>()});
    }
    return out;
}

}  // namespace keymem
