#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "keymem/matrix.hpp"

namespace keymem {

// A contiguous chunk of token representations. Padded positions carry
// valid_mask 0 and are excluded from all statistics.
struct Window {
    Matrix vectors;                        // L x D
    std::vector<std::uint8_t> valid_mask;  // length L, 1 = real token

    std::size_t length() const { return vectors.rows; }
    std::size_t valid_count() const;
    void validate() const;
};

enum class ProbeKind { kMeanOnly, kEuclidean, kDiagMahalanobis, kFullMahalanobis };

struct ProbeStrategy {
    ProbeKind kind = ProbeKind::kDiagMahalanobis;
    double variance_floor = 1e-8;
    double weight_floor = 1e-12;
    // Ridge added to the covariance diagonal for the full variant. Negative
    // means auto: 1e-3 * trace(cov) / D, which keeps the factorization
    // positive definite when the window is shorter than the dimension.
    double ridge = -1.0;
};

struct ProbeQuery {
    Vec vector;   // D, the aggregated query
    Vec weights;  // L, nonnegative, sum to 1 over valid positions, 0 elsewhere
    Vec scores;   // L, raw deviation scores, 0 at invalid positions
};

// Arithmetic mean over valid rows.
Vec window_mean(const Window& w);

// Per-token deviation scores. Degenerate windows (single valid row, or all
// rows identical) yield all-zero scores; build_probe resolves those by
// falling back to uniform weighting.
Vec activation_scores(const Window& w, const ProbeStrategy& s);

ProbeQuery build_probe(const Window& w, const ProbeStrategy& s);

// Stop-gradient contract: the weights are constants in backward, so the
// gradient of the query vector w.r.t. the window rows is weights[j] * dQ.
// Returns an L x D matrix; invalid rows are zero.
Matrix probe_backward(const Window& w, const ProbeQuery& q, std::span<const double> d_vector);

ProbeKind parse_probe_kind(const std::string& name);
std::string probe_kind_name(ProbeKind kind);

}  // namespace keymem
