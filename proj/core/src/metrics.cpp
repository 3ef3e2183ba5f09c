#include "keymem/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace keymem {

namespace {

void check_binary(std::span<const int> labels) {
    for (const int y : labels) {
        if (y != 0 && y != 1) {
            throw std::invalid_argument("metrics: labels must be 0 or 1");
        }
    }
}

}  // namespace

ConfusionCounts confusion(std::span<const int> preds, std::span<const int> labels) {
    if (preds.size() != labels.size() || preds.empty()) {
        throw std::invalid_argument("confusion: need equal-length nonempty inputs");
    }
    check_binary(preds);
    check_binary(labels);
    ConfusionCounts c;
    for (std::size_t i = 0; i < preds.size(); ++i) {
        if (labels[i] == 1) {
            (preds[i] == 1 ? c.tp : c.fn) += 1;
        } else {
            (preds[i] == 1 ? c.fp : c.tn) += 1;
        }
    }
    return c;
}

double f1_from_counts(const ConfusionCounts& c) {
    const std::size_t denom = 2 * c.tp + c.fp + c.fn;
    return denom == 0 ? 0.0 : 2.0 * static_cast<double>(c.tp) / static_cast<double>(denom);
}

double jaccard_from_counts(const ConfusionCounts& c) {
    const std::size_t denom = c.tp + c.fp + c.fn;
    return denom == 0 ? 0.0 : static_cast<double>(c.tp) / static_cast<double>(denom);
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw std::invalid_argument("auroc: need equal-length nonempty inputs");
    }
    check_binary(labels);
    std::size_t n_pos = 0;
    for (const int y : labels) n_pos += static_cast<std::size_t>(y);
    const std::size_t n_neg = labels.size() - n_pos;
    if (n_pos == 0 || n_neg == 0) {
        throw std::invalid_argument("auroc: undefined AUROC for single-class labels");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

    // Rank sum over positives with tied scores sharing their average rank.
    // All partial sums are integers or half-integers, so the arithmetic is
    // exact and matches the all-pairs count bit for bit.
    double rank_sum_pos = 0.0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const double avg_rank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
        for (std::size_t t = i; t < j; ++t) {
            if (labels[order[t]] == 1) rank_sum_pos += avg_rank;
        }
        i = j;
    }
    const double u = rank_sum_pos -
                     static_cast<double>(n_pos) * (static_cast<double>(n_pos) + 1.0) / 2.0;
    return u / (static_cast<double>(n_pos) * static_cast<double>(n_neg));
}

double auprc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size() || scores.empty()) {
        throw std::invalid_argument("auprc: need equal-length nonempty inputs");
    }
    check_binary(labels);
    std::size_t n_pos = 0;
    for (const int y : labels) n_pos += static_cast<std::size_t>(y);
    if (n_pos == 0) {
        throw std::invalid_argument("auprc: no positive labels");
    }

    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });

    double ap = 0.0;
    double prev_recall = 0.0;
    std::size_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        for (std::size_t t = i; t < j; ++t) {
            (labels[order[t]] == 1 ? tp : fp) += 1;
        }
        const double recall = static_cast<double>(tp) / static_cast<double>(n_pos);
        const double precision = static_cast<double>(tp) / static_cast<double>(tp + fp);
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    return ap;
}

MetricsReport evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                              double threshold) {
    MetricsReport r;
    r.threshold = threshold;
    std::vector<int> preds(scores.size());
    for (std::size_t i = 0; i < scores.size(); ++i) {
        preds[i] = scores[i] >= threshold ? 1 : 0;
    }
    r.counts = confusion(preds, labels);
    r.f1 = f1_from_counts(r.counts);
    r.jaccard = jaccard_from_counts(r.counts);
    r.auroc = auroc(scores, labels);
    r.auprc = auprc(scores, labels);
    return r;
}

double best_f1_threshold(std::span<const double> scores, std::span<const int> labels) {
    if (scores.empty() || scores.size() != labels.size()) {
        throw std::invalid_argument("best_f1_threshold: need equal-length nonempty inputs");
    }
    std::vector<double> sorted(scores.begin(), scores.end());
    std::sort(sorted.begin(), sorted.end());
    sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());

    std::vector<double> candidates;
    candidates.push_back(sorted.front() - 0.5);
    for (std::size_t i = 0; i + 1 < sorted.size(); ++i) {
        candidates.push_back((sorted[i] + sorted[i + 1]) / 2.0);
    }
    candidates.push_back(sorted.back() + 0.5);

    double best_t = candidates.front();
    double best_f1 = -1.0;
    std::vector<int> preds(scores.size());
    for (const double t : candidates) {
        for (std::size_t i = 0; i < scores.size(); ++i) {
            preds[i] = scores[i] >= t ? 1 : 0;
        }
        const double f1 = f1_from_counts(confusion(preds, labels));
        if (f1 > best_f1) {
            best_f1 = f1;
            best_t = t;
        }
    }
    return best_t;
}

std::string metrics_csv_header() {
    return "task,variant,f1,jaccard,auprc,auroc";
}

namespace {

std::string fmt9(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9f", v);
    return buf;
}

}  // namespace

std::string metrics_csv_row(const std::string& task, const std::string& variant,
                            const MetricsReport& r) {
    return task + "," + variant + "," + fmt9(r.f1) + "," + fmt9(r.jaccard) + "," +
           fmt9(r.auprc) + "," + fmt9(r.auroc);
}

std::string metrics_json(const std::string& task, const std::string& variant,
                         const MetricsReport& r) {
    nlohmann::json j{{"task", task},
                     {"variant", variant},
                     {"f1", r.f1},
                     {"jaccard", r.jaccard},
                     {"auprc", r.auprc},
                     {"auroc", r.auroc},
                     {"threshold", r.threshold},
                     {"tp", r.counts.tp},
                     {"fp", r.counts.fp},
                     {"tn", r.counts.tn},
                     {"fn", r.counts.fn}};
    return j.dump(2);
}

}  // namespace keymem
