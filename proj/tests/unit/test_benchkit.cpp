#include <doctest.h>
#include <stdexcept>

#include <string>
#include <vector>

#include <json.hpp>

#include "keymem/benchkit.hpp"

using namespace keymem;

TEST_CASE("linear fit recovers an exact line") {
    std::vector<double> x = {1.0, 2.0, 3.0, 4.0};
    std::vector<double> y = {3.0, 5.0, 7.0, 9.0};  // y = 2x + 1
    LinearFit fit = linear_fit(x, y);
    CHECK(fit.slope == doctest::Approx(2.0).epsilon(1e-12));
    CHECK(fit.intercept == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(fit.r2 == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("linear fit on noisy data has intermediate r2") {
    std::vector<double> x = {0.0, 1.0, 2.0, 3.0, 4.0, 5.0};
    std::vector<double> y = {0.5, 0.8, 2.6, 2.9, 4.4, 4.6};
    LinearFit fit = linear_fit(x, y);
    CHECK(fit.r2 > 0.9);
    CHECK(fit.r2 < 1.0);
    CHECK(fit.slope > 0.0);

    // Flat data: the mean explains everything, r2 pins to 1 by convention.
    std::vector<double> flat = {2.0, 2.0, 2.0, 2.0, 2.0, 2.0};
    LinearFit flat_fit = linear_fit(x, flat);
    CHECK(flat_fit.slope == doctest::Approx(0.0));
    CHECK(flat_fit.r2 == 1.0);
}

TEST_CASE("linear fit rejects degenerate inputs") {
    std::vector<double> one = {1.0};
    CHECK_THROWS_AS(linear_fit(one, one), std::invalid_argument);
    std::vector<double> same_x = {2.0, 2.0, 2.0};
    std::vector<double> y = {1.0, 2.0, 3.0};
    CHECK_THROWS_AS(linear_fit(same_x, y), std::invalid_argument);
    std::vector<double> mismatched = {1.0, 2.0};
    CHECK_THROWS_AS(linear_fit(mismatched, y), std::invalid_argument);
}

TEST_CASE("measure_ns returns a positive finite duration") {
    volatile double sink = 0.0;
    const double ns = measure_ns([&] {
        double acc = 0.0;
        for (int i = 0; i < 1000; ++i) acc += static_cast<double>(i) * 0.5;
        sink = acc;
    }, 7);
    CHECK(ns > 0.0);
    CHECK(ns < 1e9);
    CHECK_THROWS_AS(measure_ns([] {}, 0), std::invalid_argument);
}

TEST_CASE("retrieval benchmark reports one point per size with a fit") {
    RetrievalBenchReport rep = bench_retrieval({64, 128, 256}, 8, 4, 42);
    REQUIRE(rep.points.size() == 3);
    CHECK(rep.d == 8);
    CHECK(rep.k == 4);
    for (const auto& p : rep.points) CHECK(p.ns > 0.0);
    CHECK(rep.points[0].m == 64);
    CHECK(rep.points[2].m == 256);
    CHECK(rep.fit.slope > 0.0);

    CHECK_THROWS_AS(bench_retrieval({64}, 8, 4, 42), std::invalid_argument);

    nlohmann::json j = nlohmann::json::parse(bench_json(rep));
    CHECK(j.at("points").size() == 3);
    CHECK(j.at("fit").contains("slope_ns_per_row"));
    CHECK(j.at("fit").contains("r2"));
}

TEST_CASE("pipeline benchmark skips stages the variant disables") {
    RunConfig cfg = default_run_config();
    cfg.generator.n_patients = 10;
    cfg.generator.n_corpus_docs = 10;
    cfg.variant = "no-retrieval";
    PipelineBenchReport rep = bench_pipeline(cfg);
    CHECK(rep.variant == "no-retrieval");
    REQUIRE(rep.stages.size() == 5);

    double encode_ns = -1.0, head_ns = -1.0;
    for (const auto& s : rep.stages) {
        if (s.stage == "encode") encode_ns = s.ns;
        if (s.stage == "head") head_ns = s.ns;
        if (s.stage == "probe" || s.stage == "retrieve" || s.stage == "rerank") {
            CHECK(s.ns == 0.0);
        }
    }
    CHECK(encode_ns > 0.0);
    CHECK(head_ns > 0.0);

    nlohmann::json j = nlohmann::json::parse(bench_json(rep));
    CHECK(j.at("variant") == "no-retrieval");
    CHECK(j.at("stages").size() == 5);
}

TEST_CASE("full pipeline benchmark times every stage") {
    RunConfig cfg = default_run_config();
    cfg.generator.n_patients = 10;
    cfg.generator.n_corpus_docs = 10;
    PipelineBenchReport rep = bench_pipeline(cfg);
    for (const auto& s : rep.stages) {
        INFO("stage ", s.stage);
        CHECK(s.ns > 0.0);
    }
}
