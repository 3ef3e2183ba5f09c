#include <doctest.h>
#include <stdexcept>

#include <filesystem>
#include <fstream>
#include <vector>

#include "keymem/checkpoint.hpp"
#include "keymem/rng.hpp"

#include "test_util.hpp"

using namespace keymem;

namespace {

CheckpointMeta meta_of(const std::string& kind) {
    CheckpointMeta m;
    m.kind = kind;
    m.seed = 42;
    m.config_hash = "cfg0123456789abcd";
    m.data_hash = "dat0123456789abcd";
    m.extra_json = "{\"note\":\"test\"}";
    return m;
}

}  // namespace

TEST_CASE("tensors survive a save/load round trip at f32 precision") {
    TempDir dir("ckpt-roundtrip");
    Rng rng(120);
    Matrix a(5, 3);
    Vec b(7);
    for (double& v : a.data) v = rng.normal();
    for (double& v : b) v = rng.normal();

    save_checkpoint(dir.str(), {tensor_ref("layer.a", a), tensor_ref("layer.b", b)},
                    meta_of("test"));

    Matrix a2(5, 3);
    Vec b2(7);
    CheckpointMeta meta =
        load_checkpoint(dir.str(), {tensor_ref("layer.a", a2), tensor_ref("layer.b", b2)});

    CHECK(meta.kind == "test");
    CHECK(meta.seed == 42);
    CHECK(meta.config_hash == "cfg0123456789abcd");
    CHECK(meta.data_hash == "dat0123456789abcd");

    // Storage is float32: the loaded value is the double cast through float.
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a2.data[i] == static_cast<double>(static_cast<float>(a.data[i])));
    }
    for (std::size_t i = 0; i < b.size(); ++i) {
        CHECK(b2[i] == static_cast<double>(static_cast<float>(b[i])));
    }

    // Values already representable in f32 come back bit-identical.
    Matrix exact(2, 2);
    exact.data = {1.0, -0.5, 0.25, 1024.0};
    save_checkpoint(dir.sub("exact"), {tensor_ref("t", exact)}, meta_of("test"));
    Matrix exact2(2, 2);
    load_checkpoint(dir.sub("exact"), {tensor_ref("t", exact2)});
    CHECK(exact2.data == exact.data);
}

TEST_CASE("manifest records shapes and the blob files exist") {
    TempDir dir("ckpt-manifest");
    Matrix a(3, 4, 1.5);
    save_checkpoint(dir.str(), {tensor_ref("w", a)}, meta_of("enc"));

    namespace fs = std::filesystem;
    CHECK(fs::exists(dir.path() / "manifest.json"));
    CHECK(fs::exists(dir.path() / "w.bin"));
    CHECK(fs::file_size(dir.path() / "w.bin") == 12 * sizeof(float));

    CheckpointMeta meta = read_checkpoint_meta(dir.str());
    CHECK(meta.kind == "enc");
    std::vector<TensorInfo> infos = read_checkpoint_tensors(dir.str());
    REQUIRE(infos.size() == 1);
    CHECK(infos[0].name == "w");
    CHECK(infos[0].rows == 3);
    CHECK(infos[0].cols == 4);

    std::ifstream manifest(dir.path() / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(manifest)),
                     std::istreambuf_iterator<char>());
    CHECK(text.find("\"f32\"") != std::string::npos);
}

TEST_CASE("saving twice produces byte-identical files") {
    TempDir dir("ckpt-idempotent");
    Rng rng(121);
    Matrix a(4, 4);
    for (double& v : a.data) v = rng.normal();

    save_checkpoint(dir.sub("one"), {tensor_ref("w", a)}, meta_of("enc"));
    save_checkpoint(dir.sub("two"), {tensor_ref("w", a)}, meta_of("enc"));

    auto slurp = [](const std::filesystem::path& p) {
        std::ifstream in(p, std::ios::binary);
        return std::string(std::istreambuf_iterator<char>(in),
                           std::istreambuf_iterator<char>());
    };
    CHECK(slurp(dir.path() / "one" / "manifest.json") ==
          slurp(dir.path() / "two" / "manifest.json"));
    CHECK(slurp(dir.path() / "one" / "w.bin") == slurp(dir.path() / "two" / "w.bin"));
}

TEST_CASE("load rejects shape drift, missing and extra tensors") {
    TempDir dir("ckpt-shape");
    Matrix a(3, 4, 1.0);
    Matrix b(2, 2, 2.0);
    save_checkpoint(dir.str(), {tensor_ref("a", a), tensor_ref("b", b)}, meta_of("enc"));

    Matrix wrong_shape(4, 3);
    Matrix b_ok(2, 2);
    const std::string shape_msg = thrown_message([&] {
        load_checkpoint(dir.str(), {tensor_ref("a", wrong_shape), tensor_ref("b", b_ok)});
    });
    CHECK(contains(shape_msg, "a"));
    CHECK(contains(shape_msg, "3x4"));
    CHECK(contains(shape_msg, "4x3"));

    Matrix a_ok(3, 4);
    CHECK_THROWS_AS(load_checkpoint(dir.str(), {tensor_ref("a", a_ok)}), std::runtime_error);

    Matrix extra(1, 1);
    CHECK_THROWS_AS(
        load_checkpoint(dir.str(), {tensor_ref("a", a_ok), tensor_ref("b", b_ok),
                                    tensor_ref("c", extra)}),
        std::runtime_error);

    Matrix renamed(3, 4);
    CHECK_THROWS_AS(
        load_checkpoint(dir.str(), {tensor_ref("z", renamed), tensor_ref("b", b_ok)}),
        std::runtime_error);
}

TEST_CASE("load rejects corrupted blobs") {
    TempDir dir("ckpt-corrupt");
    Matrix a(4, 4, 3.0);
    save_checkpoint(dir.str(), {tensor_ref("w", a)}, meta_of("enc"));

    SUBCASE("truncated") {
        std::filesystem::resize_file(dir.path() / "w.bin", 10);
        Matrix back(4, 4);
        CHECK(contains(thrown_message([&] {
                  load_checkpoint(dir.str(), {tensor_ref("w", back)});
              }),
              "w"));
    }
    SUBCASE("trailing bytes") {
        std::ofstream out(dir.path() / "w.bin", std::ios::binary | std::ios::app);
        out.write("xxxx", 4);
        out.close();
        Matrix back(4, 4);
        CHECK_THROWS_AS(load_checkpoint(dir.str(), {tensor_ref("w", back)}),
                        std::runtime_error);
    }
    SUBCASE("deleted blob") {
        std::filesystem::remove(dir.path() / "w.bin");
        Matrix back(4, 4);
        CHECK_THROWS_AS(load_checkpoint(dir.str(), {tensor_ref("w", back)}),
                        std::runtime_error);
    }
    SUBCASE("missing manifest") {
        CHECK_THROWS_AS(read_checkpoint_meta(dir.sub("nowhere")), std::runtime_error);
    }
}

TEST_CASE("save rejects inconsistent tensor lists") {
    TempDir dir("ckpt-badsave");
    Matrix a(2, 2, 1.0);
    CHECK_THROWS_AS(
        save_checkpoint(dir.sub("dup"), {tensor_ref("w", a), tensor_ref("w", a)},
                        meta_of("enc")),
        std::invalid_argument);
}

TEST_CASE("vector tensors round-trip with their one-row shape") {
    TempDir dir("ckpt-vec");
    Vec b = {1.0, 2.0, 3.0};
    save_checkpoint(dir.str(), {tensor_ref("bias", b)}, meta_of("enc"));
    std::vector<TensorInfo> infos = read_checkpoint_tensors(dir.str());
    REQUIRE(infos.size() == 1);
    CHECK(infos[0].rows == 1);
    CHECK(infos[0].cols == 3);

    Vec back(3);
    load_checkpoint(dir.str(), {tensor_ref("bias", back)});
    CHECK(back == b);
}
