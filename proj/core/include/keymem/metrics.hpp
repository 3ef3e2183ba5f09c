#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace keymem {

struct ConfusionCounts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const { return tp + fp + tn + fn; }
};

ConfusionCounts confusion(std::span<const int> preds, std::span<const int> labels);

// f1 = 2TP/(2TP+FP+FN), jaccard = TP/(TP+FP+FN); zero when the denominator
// is zero.
double f1_from_counts(const ConfusionCounts& c);
double jaccard_from_counts(const ConfusionCounts& c);

// Probability that a positive outranks a negative, ties counted half. Exact
// rank-sum computation; throws when only one class is present.
double auroc(std::span<const double> scores, std::span<const int> labels);

// Average precision: step-wise integral of the precision-recall curve over
// descending score thresholds, tied scores grouped. Throws without a
// positive.
double auprc(std::span<const double> scores, std::span<const int> labels);

struct MetricsReport {
    double f1 = 0.0;
    double jaccard = 0.0;
    double auprc = 0.0;
    double auroc = 0.0;
    ConfusionCounts counts;
    double threshold = 0.5;
};

MetricsReport evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                              double threshold = 0.5);

// Threshold (midpoint between adjacent distinct scores, plus the ends)
// maximizing F1; deterministic: the lowest maximizing threshold wins.
double best_f1_threshold(std::span<const double> scores, std::span<const int> labels);

std::string metrics_csv_header();
std::string metrics_csv_row(const std::string& task, const std::string& variant,
                            const MetricsReport& report);
std::string metrics_json(const std::string& task, const std::string& variant,
                         const MetricsReport& report);

}  // namespace keymem
