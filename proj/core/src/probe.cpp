#include "keymem/probe.hpp"

#include <cmath>
#include <stdexcept>

namespace keymem {

std::size_t Window::valid_count() const {
    std::size_t n = 0;
    for (const auto m : valid_mask) n += m != 0 ? 1 : 0;
    return n;
}

void Window::validate() const {
    if (vectors.rows == 0 || vectors.cols == 0) {
        throw std::invalid_argument("Window: empty vector block");
    }
    if (valid_mask.size() != vectors.rows) {
        throw std::invalid_argument("Window: mask length does not match row count");
    }
    if (valid_count() == 0) {
        throw std::invalid_argument("Window: no valid position");
    }
}

Vec window_mean(const Window& w) {
    w.validate();
    const std::size_t d = w.vectors.cols;
    Vec mean(d, 0.0);
    std::size_t n = 0;
    for (std::size_t j = 0; j < w.vectors.rows; ++j) {
        if (w.valid_mask[j] == 0) continue;
        axpy(1.0, w.vectors.row(j), mean);
        ++n;
    }
    scale(mean, 1.0 / static_cast<double>(n));
    return mean;
}

namespace {

// Centered rows for valid positions; invalid rows left zero.
Matrix deviations(const Window& w, const Vec& mean) {
    Matrix dev(w.vectors.rows, w.vectors.cols, 0.0);
    for (std::size_t j = 0; j < w.vectors.rows; ++j) {
        if (w.valid_mask[j] == 0) continue;
        for (std::size_t d = 0; d < w.vectors.cols; ++d) {
            dev.at(j, d) = w.vectors.at(j, d) - mean[d];
        }
    }
    return dev;
}

Vec diag_variances(const Window& w, const Matrix& dev, std::size_t n_valid) {
    Vec var(w.vectors.cols, 0.0);
    for (std::size_t j = 0; j < dev.rows; ++j) {
        if (w.valid_mask[j] == 0) continue;
        for (std::size_t d = 0; d < dev.cols; ++d) {
            var[d] += dev.at(j, d) * dev.at(j, d);
        }
    }
    scale(var, 1.0 / static_cast<double>(n_valid - 1));
    return var;
}

// Checked on the raw rows: the sample mean of three or more identical rows
// picks up rounding, so deviations alone cannot witness this case exactly.
bool valid_rows_identical(const Window& w) {
    std::size_t first = w.vectors.rows;
    for (std::size_t j = 0; j < w.vectors.rows; ++j) {
        if (w.valid_mask[j] == 0) continue;
        if (first == w.vectors.rows) {
            first = j;
            continue;
        }
        for (std::size_t d = 0; d < w.vectors.cols; ++d) {
            if (w.vectors.at(j, d) != w.vectors.at(first, d)) return false;
        }
    }
    return true;
}

}  // namespace

Vec activation_scores(const Window& w, const ProbeStrategy& s) {
    w.validate();
    if (s.kind == ProbeKind::kMeanOnly) {
        throw std::invalid_argument("activation_scores: mean-only strategy has no scores");
    }
    if (s.variance_floor <= 0.0 || s.weight_floor <= 0.0) {
        throw std::invalid_argument("activation_scores: floors must be positive");
    }
    const std::size_t L = w.vectors.rows;
    const std::size_t D = w.vectors.cols;
    Vec phi(L, 0.0);
    const std::size_t n_valid = w.valid_count();
    if (n_valid < 2 && s.kind != ProbeKind::kEuclidean) {
        return phi;  // variance undefined; caller falls back to uniform
    }
    if (valid_rows_identical(w)) {
        return phi;  // exactly degenerate; caller falls back to uniform
    }

    const Vec mean = window_mean(w);
    const Matrix dev = deviations(w, mean);

    switch (s.kind) {
        case ProbeKind::kEuclidean:
            for (std::size_t j = 0; j < L; ++j) {
                if (w.valid_mask[j] != 0) phi[j] = l2_norm(dev.row(j));
            }
            break;
        case ProbeKind::kDiagMahalanobis: {
            const Vec var = diag_variances(w, dev, n_valid);
            for (std::size_t j = 0; j < L; ++j) {
                if (w.valid_mask[j] == 0) continue;
                double acc = 0.0;
                for (std::size_t d = 0; d < D; ++d) {
                    const double u = dev.at(j, d);
                    acc += u * u / std::max(var[d], s.variance_floor);
                }
                phi[j] = std::sqrt(acc);
            }
            break;
        }
        case ProbeKind::kFullMahalanobis: {
            Matrix cov(D, D, 0.0);
            for (std::size_t j = 0; j < L; ++j) {
                if (w.valid_mask[j] != 0) add_outer(cov, dev.row(j), dev.row(j));
            }
            scale(cov.data, 1.0 / static_cast<double>(n_valid - 1));
            double trace = 0.0;
            for (std::size_t d = 0; d < D; ++d) trace += cov.at(d, d);
            if (trace <= 0.0) {
                return phi;  // all rows identical; fallback handles it
            }
            const double lambda =
                s.ridge < 0.0 ? 1e-3 * trace / static_cast<double>(D) : s.ridge;
            for (std::size_t d = 0; d < D; ++d) cov.at(d, d) += lambda;
            const Cholesky chol(cov);
            for (std::size_t j = 0; j < L; ++j) {
                if (w.valid_mask[j] == 0) continue;
                const Vec solved = chol.solve(dev.row(j));
                phi[j] = std::sqrt(std::max(dot(dev.row(j), solved), 0.0));
            }
            break;
        }
        case ProbeKind::kMeanOnly:
            break;  // unreachable
    }
    return phi;
}

namespace {

ProbeQuery uniform_probe(const Window& w) {
    ProbeQuery q;
    q.vector = window_mean(w);
    q.weights.assign(w.vectors.rows, 0.0);
    q.scores.assign(w.vectors.rows, 0.0);
    const double u = 1.0 / static_cast<double>(w.valid_count());
    for (std::size_t j = 0; j < w.vectors.rows; ++j) {
        if (w.valid_mask[j] != 0) q.weights[j] = u;
    }
    return q;
}

}  // namespace

ProbeQuery build_probe(const Window& w, const ProbeStrategy& s) {
    w.validate();
    if (s.kind == ProbeKind::kMeanOnly) {
        return uniform_probe(w);
    }
    Vec phi = activation_scores(w, s);
    double total = 0.0;
    for (std::size_t j = 0; j < phi.size(); ++j) {
        if (w.valid_mask[j] != 0) total += phi[j];
    }
    if (total < s.weight_floor) {
        ProbeQuery q = uniform_probe(w);
        q.scores = std::move(phi);
        return q;
    }
    ProbeQuery q;
    q.weights.assign(phi.size(), 0.0);
    q.vector.assign(w.vectors.cols, 0.0);
    for (std::size_t j = 0; j < phi.size(); ++j) {
        if (w.valid_mask[j] == 0) continue;
        q.weights[j] = phi[j] / total;
        axpy(q.weights[j], w.vectors.row(j), q.vector);
    }
    q.scores = std::move(phi);
    return q;
}

Matrix probe_backward(const Window& w, const ProbeQuery& q, std::span<const double> d_vector) {
    if (q.weights.size() != w.vectors.rows || d_vector.size() != w.vectors.cols) {
        throw std::invalid_argument("probe_backward: shape mismatch");
    }
    Matrix d_rows(w.vectors.rows, w.vectors.cols, 0.0);
    for (std::size_t j = 0; j < w.vectors.rows; ++j) {
        if (w.valid_mask[j] == 0 || q.weights[j] == 0.0) continue;
        axpy(q.weights[j], d_vector, d_rows.row(j));
    }
    return d_rows;
}

ProbeKind parse_probe_kind(const std::string& name) {
    if (name == "mean") return ProbeKind::kMeanOnly;
    if (name == "euclidean") return ProbeKind::kEuclidean;
    if (name == "mahalanobis-diag") return ProbeKind::kDiagMahalanobis;
    if (name == "mahalanobis-full") return ProbeKind::kFullMahalanobis;
    throw std::invalid_argument("unknown probe strategy: " + name);
}

std::string probe_kind_name(ProbeKind kind) {
    switch (kind) {
        case ProbeKind::kMeanOnly: return "mean";
        case ProbeKind::kEuclidean: return "euclidean";
        case ProbeKind::kDiagMahalanobis: return "mahalanobis-diag";
        case ProbeKind::kFullMahalanobis: return "mahalanobis-full";
    }
    throw std::invalid_argument("unknown probe kind");
}

}  // namespace keymem
