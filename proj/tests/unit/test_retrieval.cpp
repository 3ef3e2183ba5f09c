#include <cstdint>
#include <doctest.h>
#include <stdexcept>

#include <algorithm>
#include <cmath>
#include <utility>
#include <vector>

#include "keymem/retrieval.hpp"
#include "keymem/rng.hpp"

using namespace keymem;

namespace {

KeyValueMemory random_memory(std::size_t m, std::size_t d, Rng& rng) {
    KeyValueMemory mem;
    mem.keys = Matrix(m, d);
    mem.values = Matrix(m, d);
    for (double& v : mem.keys.data) v = rng.normal();
    for (double& v : mem.values.data) v = rng.normal();
    return mem;
}

// Small integer entries make score collisions common and every score exact.
KeyValueMemory int_memory(std::size_t m, std::size_t d, Rng& rng) {
    KeyValueMemory mem;
    mem.keys = Matrix(m, d);
    mem.values = Matrix(m, d);
    for (double& v : mem.keys.data) v = static_cast<double>(rng.uniform_int(-2, 2));
    for (double& v : mem.values.data) v = static_cast<double>(rng.uniform_int(-3, 3));
    return mem;
}

// Score every row, sort the full list, take the prefix. Independent of the
// heap-based selection under test.
std::vector<std::pair<double, std::size_t>> exhaustive_rank(std::span<const double> query,
                                                            const KeyValueMemory& mem,
                                                            Similarity sim) {
    std::vector<std::pair<double, std::size_t>> ranked;
    const double qn = std::sqrt(dot(query, query));
    for (std::size_t i = 0; i < mem.size(); ++i) {
        double s = 0.0;
        for (std::size_t c = 0; c < mem.keys.cols; ++c) s += query[c] * mem.keys.at(i, c);
        if (sim == Similarity::kCosine) {
            double kn = 0.0;
            for (std::size_t c = 0; c < mem.keys.cols; ++c) {
                kn += mem.keys.at(i, c) * mem.keys.at(i, c);
            }
            kn = std::sqrt(kn);
            s = (qn < 1e-12 || kn < 1e-12) ? 0.0 : s / (qn * kn);
        }
        ranked.emplace_back(s, i);
    }
    std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
    });
    return ranked;
}

}  // namespace

TEST_CASE("window plan for an exactly tiled sequence") {
    WindowPlan plan = plan_windows(8, 4);
    CHECK(plan.seq_len == 8);
    CHECK(plan.padded_len == 8);
    REQUIRE(plan.windows.size() == 2);
    CHECK(plan.windows[0] == IndexRange{0, 4});
    CHECK(plan.windows[1] == IndexRange{4, 8});
    REQUIRE(plan.n_probe() == 1);
    CHECK(plan.probe_windows[0] == std::vector<std::size_t>{3, 4, 5, 6});
}

TEST_CASE("single window sequence has no probe windows") {
    WindowPlan plan = plan_windows(4, 4);
    CHECK(plan.padded_len == 4);
    REQUIRE(plan.windows.size() == 1);
    CHECK(plan.windows[0] == IndexRange{0, 4});
    CHECK(plan.n_probe() == 0);
}

TEST_CASE("ragged sequence is padded to a whole number of windows") {
    WindowPlan plan = plan_windows(10, 4);
    CHECK(plan.seq_len == 10);
    CHECK(plan.padded_len == 12);
    REQUIRE(plan.windows.size() == 3);
    CHECK(plan.windows[2] == IndexRange{8, 12});
    REQUIRE(plan.n_probe() == 2);
    CHECK(plan.probe_windows[0] == std::vector<std::size_t>{3, 4, 5, 6});
    CHECK(plan.probe_windows[1] == std::vector<std::size_t>{7, 8, 9, 10});
}

TEST_CASE("window plan structural invariants hold across sizes") {
    for (std::size_t seq = 1; seq <= 40; ++seq) {
        for (std::size_t chunk : {2, 3, 4, 5, 8}) {
            WindowPlan plan = plan_windows(seq, chunk);
            INFO("seq=", seq, " chunk=", chunk);
            CHECK(plan.padded_len % chunk == 0);
            CHECK(plan.padded_len >= seq);
            CHECK(plan.padded_len - seq < chunk);
            REQUIRE(plan.windows.size() * chunk == plan.padded_len);
            for (std::size_t w = 0; w < plan.windows.size(); ++w) {
                CHECK(plan.windows[w].begin == w * chunk);
                CHECK(plan.windows[w].end == plan.windows[w].begin + chunk);
            }
            REQUIRE(plan.n_probe() + 1 == plan.windows.size());
            for (std::size_t p = 0; p < plan.n_probe(); ++p) {
                const auto& idx = plan.probe_windows[p];
                REQUIRE(idx.size() == chunk);
                CHECK(idx[0] == plan.windows[p].end - 1);
                for (std::size_t j = 1; j < chunk; ++j) {
                    CHECK(idx[j] == plan.windows[p + 1].begin + j - 1);
                }
            }
        }
    }
}

TEST_CASE("window plan rejects degenerate arguments") {
    CHECK_THROWS_AS(plan_windows(8, 1), std::invalid_argument);
    CHECK_THROWS_AS(plan_windows(8, 0), std::invalid_argument);
    CHECK_THROWS_AS(plan_windows(0, 4), std::invalid_argument);
}

TEST_CASE("gather_window copies real rows and zero-fills padding") {
    Rng rng(31);
    Matrix h(5, 3);
    for (double& v : h.data) v = rng.normal();

    Window w = gather_window(h, {4, 0, 5, 7});
    REQUIRE(w.vectors.rows == 4);
    REQUIRE(w.vectors.cols == 3);
    REQUIRE(w.valid_mask == std::vector<std::uint8_t>{1, 1, 0, 0});
    for (std::size_t c = 0; c < 3; ++c) {
        CHECK(w.vectors.at(0, c) == h.at(4, c));
        CHECK(w.vectors.at(1, c) == h.at(0, c));
        CHECK(w.vectors.at(2, c) == 0.0);
        CHECK(w.vectors.at(3, c) == 0.0);
    }
    CHECK_THROWS_AS(gather_window(h, {}), std::invalid_argument);
}

TEST_CASE("gathering a probe window that straddles the padded tail") {
    Rng rng(32);
    Matrix h(10, 4);
    for (double& v : h.data) v = rng.normal();
    WindowPlan plan = plan_windows(10, 4);

    Window w = gather_window(h, plan.probe_windows[1]);  // {7, 8, 9, 10}
    CHECK(w.valid_mask == std::vector<std::uint8_t>{1, 1, 1, 0});
    for (std::size_t c = 0; c < 4; ++c) {
        CHECK(w.vectors.at(0, c) == h.at(7, c));
        CHECK(w.vectors.at(2, c) == h.at(9, c));
        CHECK(w.vectors.at(3, c) == 0.0);
    }
}

TEST_CASE("top_k matches the exhaustive sort oracle with heavy ties") {
    Rng rng(202);
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t m = 1 + rng.uniform_index(40);
        const std::size_t d = 1 + rng.uniform_index(6);
        const std::size_t k = 1 + rng.uniform_index(m + 4);
        KeyValueMemory mem = int_memory(m, d, rng);
        Vec query(d);
        for (double& v : query) v = static_cast<double>(rng.uniform_int(-2, 2));

        RetrievalResult got = top_k(query, mem, k);
        auto ranked = exhaustive_rank(query, mem, Similarity::kDot);
        const std::size_t keep = std::min(k, m);

        INFO("trial=", trial, " m=", m, " d=", d, " k=", k);
        REQUIRE(got.indices.size() == keep);
        REQUIRE(got.scores.size() == keep);
        REQUIRE(got.keys.rows == keep);
        REQUIRE(got.values.rows == keep);
        for (std::size_t r = 0; r < keep; ++r) {
            CHECK(got.indices[r] == ranked[r].second);
            CHECK(got.scores[r] == ranked[r].first);
            for (std::size_t c = 0; c < d; ++c) {
                CHECK(got.keys.at(r, c) == mem.keys.at(got.indices[r], c));
                CHECK(got.values.at(r, c) == mem.values.at(got.indices[r], c));
            }
        }
    }
}

TEST_CASE("top_k matches the oracle under cosine similarity") {
    Rng rng(203);
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t m = 2 + rng.uniform_index(30);
        const std::size_t d = 2 + rng.uniform_index(6);
        const std::size_t k = 1 + rng.uniform_index(m);
        KeyValueMemory mem = random_memory(m, d, rng);
        Vec query(d);
        for (double& v : query) v = rng.normal();

        RetrievalResult got = top_k(query, mem, k, Similarity::kCosine);
        auto ranked = exhaustive_rank(query, mem, Similarity::kCosine);
        for (std::size_t r = 0; r < got.indices.size(); ++r) {
            CHECK(got.indices[r] == ranked[r].second);
            CHECK(got.scores[r] == doctest::Approx(ranked[r].first).epsilon(1e-12));
        }
    }
}

TEST_CASE("cosine ranking ignores key magnitude") {
    KeyValueMemory mem;
    mem.keys = Matrix(3, 2);
    mem.values = Matrix(3, 2);
    // Row 0 points along the query but is tiny; row 1 is huge but off-axis;
    // row 2 is the zero key.
    mem.keys.at(0, 0) = 0.01;
    mem.keys.at(1, 0) = 30.0;
    mem.keys.at(1, 1) = 40.0;
    Vec query = {1.0, 0.0};

    RetrievalResult dot_rank = top_k(query, mem, 3, Similarity::kDot);
    CHECK(dot_rank.indices == std::vector<std::size_t>{1, 0, 2});

    RetrievalResult cos_rank = top_k(query, mem, 3, Similarity::kCosine);
    CHECK(cos_rank.indices == std::vector<std::size_t>{0, 1, 2});
    CHECK(cos_rank.scores[0] == doctest::Approx(1.0));
    CHECK(cos_rank.scores[1] == doctest::Approx(0.6));
    CHECK(cos_rank.scores[2] == 0.0);
}

TEST_CASE("identical keys resolve ties toward lower indices") {
    KeyValueMemory mem;
    mem.keys = Matrix(6, 3, 1.0);
    mem.values = Matrix(6, 3);
    for (std::size_t i = 0; i < 6; ++i) mem.values.at(i, 0) = static_cast<double>(i);
    Vec query = {1.0, 2.0, 3.0};

    RetrievalResult got = top_k(query, mem, 4);
    CHECK(got.indices == std::vector<std::size_t>{0, 1, 2, 3});
    for (std::size_t r = 0; r < 4; ++r) {
        CHECK(got.scores[r] == 6.0);
        CHECK(got.values.at(r, 0) == static_cast<double>(r));
    }
}

TEST_CASE("k at or past the memory size returns every row") {
    Rng rng(204);
    KeyValueMemory mem = random_memory(5, 4, rng);
    Vec query(4);
    for (double& v : query) v = rng.normal();

    RetrievalResult all = top_k(query, mem, 5);
    RetrievalResult over = top_k(query, mem, 50);
    REQUIRE(all.indices.size() == 5);
    CHECK(over.indices == all.indices);
    CHECK(over.scores == all.scores);
    std::vector<std::size_t> seen = all.indices;
    std::sort(seen.begin(), seen.end());
    CHECK(seen == std::vector<std::size_t>{0, 1, 2, 3, 4});
    for (std::size_t r = 1; r < all.scores.size(); ++r) {
        CHECK(all.scores[r - 1] >= all.scores[r]);
    }
}

TEST_CASE("probe query overload retrieves with the pooled vector") {
    Rng rng(205);
    KeyValueMemory mem = random_memory(12, 5, rng);
    ProbeQuery q;
    q.vector = Vec(5);
    for (double& v : q.vector) v = rng.normal();
    q.weights = {0.5, 0.5};

    RetrievalResult via_probe = top_k(q, mem, 3);
    RetrievalResult via_span = top_k(std::span<const double>(q.vector), mem, 3);
    CHECK(via_probe.indices == via_span.indices);
    CHECK(via_probe.scores == via_span.scores);
}

TEST_CASE("top_k validates its arguments") {
    Rng rng(206);
    KeyValueMemory mem = random_memory(4, 3, rng);
    Vec query = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(top_k(query, mem, 0), std::invalid_argument);
    Vec bad = {1.0, 2.0};
    CHECK_THROWS_AS(top_k(bad, mem, 2), std::invalid_argument);
    KeyValueMemory empty;
    CHECK_THROWS_AS(top_k(query, empty, 2), std::invalid_argument);
    CHECK_THROWS_AS(parse_similarity("manhattan"), std::invalid_argument);
    CHECK(parse_similarity("dot") == Similarity::kDot);
    CHECK(parse_similarity("cosine") == Similarity::kCosine);
}
