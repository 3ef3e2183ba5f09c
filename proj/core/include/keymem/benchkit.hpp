#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "keymem/config.hpp"

namespace keymem {

std::int64_t now_ns();

// Median wall time of one call to f, after a warmup call. Calls too short
// for the clock are amortized over an inner repeat loop.
double measure_ns(const std::function<void()>& f, int samples = 31);

struct LinearFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

LinearFit linear_fit(std::span<const double> x, std::span<const double> y);

struct RetrievalBenchPoint {
    std::size_t m = 0;
    double ns = 0.0;
};

struct RetrievalBenchReport {
    std::size_t d = 0;
    std::size_t k = 0;
    std::vector<RetrievalBenchPoint> points;
    LinearFit fit;  // time (ns) against bank rows m
};

// Times exact top-k over random banks of each size, single-threaded, and
// fits time against m. A straight-line fit is the linear-scan cost model.
RetrievalBenchReport bench_retrieval(const std::vector<std::size_t>& sizes, std::size_t d,
                                     std::size_t k, std::uint64_t seed);

struct StageTiming {
    std::string stage;
    double ns = 0.0;
};

struct PipelineBenchReport {
    std::string variant;
    std::vector<StageTiming> stages;  // encode, probe, retrieve, rerank, head
};

// Per-stage medians on one synthetic max-length record. Stages a variant
// skips report exactly zero.
PipelineBenchReport bench_pipeline(const RunConfig& cfg);

std::string bench_json(const RetrievalBenchReport& report);
std::string bench_json(const PipelineBenchReport& report);

}  // namespace keymem
