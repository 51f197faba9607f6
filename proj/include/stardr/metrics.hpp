#pragma once

// Threshold-free ranking metrics and balanced accuracy.

#include "stardr/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>

namespace stardr {

namespace detail {

inline void check_inputs(std::span<const double> scores, std::span<const int> labels, const char* who) {
    if (scores.size() != labels.size())
        throw ValidationError(std::string(who) + ": " + std::to_string(scores.size()) + " scores vs " +
                              std::to_string(labels.size()) + " labels");
    for (int y : labels) {
        if (y != 0 && y != 1) throw ValidationError(std::string(who) + ": label is not 0 or 1");
    }
}

inline std::array<std::size_t, 2> class_counts(std::span<const int> labels) {
    std::array<std::size_t, 2> c{};
    for (int y : labels) ++c[static_cast<std::size_t>(y)];
    return c;
}

} // namespace detail

/// Mann-Whitney AUC: P(score_pos > score_neg) + P(tie) / 2, via midranks.
inline double roc_auc(std::span<const double> scores, std::span<const int> labels) {
    detail::check_inputs(scores, labels, "roc_auc");
    const auto counts = detail::class_counts(labels);
    if (counts[0] == 0 || counts[1] == 0) throw ValidationError("roc_auc: both classes must be present");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    double pos_rank_sum = 0.0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        // ranks i+1 .. j share the midrank (i + 1 + j) / 2
        const double midrank = static_cast<double>(i + 1 + j) / 2.0;
        for (std::size_t k = i; k < j; ++k) {
            if (labels[order[k]] == 1) pos_rank_sum += midrank;
        }
        i = j;
    }
    const double np = static_cast<double>(counts[1]);
    const double nn = static_cast<double>(counts[0]);
    const double u = pos_rank_sum - np * (np + 1.0) / 2.0;
    return u / (np * nn);
}

/// Average precision: mean over positives of the precision at that positive's
/// rank, ranking by descending score. Tied scores keep their input order.
inline double pr_auc(std::span<const double> scores, std::span<const int> labels) {
    detail::check_inputs(scores, labels, "pr_auc");
    const auto counts = detail::class_counts(labels);
    if (counts[1] == 0) throw ValidationError("pr_auc: no positive labels");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double sum = 0.0;
    std::size_t hits = 0;
    for (std::size_t r = 0; r < order.size(); ++r) {
        if (labels[order[r]] == 1) {
            ++hits;
            sum += static_cast<double>(hits) / static_cast<double>(r + 1);
        }
    }
    return sum / static_cast<double>(counts[1]);
}

/// (TPR + TNR) / 2, predicting positive when score >= threshold.
inline double balanced_accuracy(std::span<const double> scores, std::span<const int> labels, double threshold = 0.5) {
    detail::check_inputs(scores, labels, "balanced_accuracy");
    const auto counts = detail::class_counts(labels);
    if (counts[0] == 0 || counts[1] == 0) throw ValidationError("balanced_accuracy: both classes must be present");
    std::size_t tp = 0, tn = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        const bool pos = scores[i] >= threshold;
        if (labels[i] == 1 && pos) ++tp;
        if (labels[i] == 0 && !pos) ++tn;
    }
    const double tpr = static_cast<double>(tp) / static_cast<double>(counts[1]);
    const double tnr = static_cast<double>(tn) / static_cast<double>(counts[0]);
    return (tpr + tnr) / 2.0;
}

struct MetricReport {
    double roc_auc = 0.0;
    double pr_auc = 0.0;
    double balanced_accuracy = 0.0;
    double threshold = 0.5;
    std::size_t n_pos = 0;
    std::size_t n_neg = 0;

    bool operator==(const MetricReport&) const = default;
};

/// All three metrics. A metric that is undefined for the label set (a class
/// is absent) is reported as NaN instead of raising.
inline MetricReport evaluate_scores(std::span<const double> scores, std::span<const int> labels,
                                    double threshold = 0.5) {
    detail::check_inputs(scores, labels, "evaluate_scores");
    MetricReport r;
    r.threshold = threshold;
    const auto c = detail::class_counts(labels);
    r.n_pos = c[1];
    r.n_neg = c[0];
    const double nan = std::numeric_limits<double>::quiet_NaN();
    const bool both = c[0] > 0 && c[1] > 0;
    r.roc_auc = both ? roc_auc(scores, labels) : nan;
    r.pr_auc = c[1] > 0 ? pr_auc(scores, labels) : nan;
    r.balanced_accuracy = both ? balanced_accuracy(scores, labels, threshold) : nan;
    return r;
}

struct MeanSd {
    double mean = 0.0;
    double sd = 0.0;
    std::size_t n = 0; // values that entered the statistics
};

/// Mean and sample standard deviation (0 for a single value). NaN entries
/// (not-applicable metrics) are skipped; with none left the mean is NaN.
inline MeanSd mean_sd(std::span<const double> v) {
    MeanSd out;
    for (double x : v) {
        if (std::isnan(x)) continue;
        out.mean += x;
        ++out.n;
    }
    if (out.n == 0) {
        out.mean = std::numeric_limits<double>::quiet_NaN();
        return out;
    }
    out.mean /= static_cast<double>(out.n);
    const auto first = std::find_if(v.begin(), v.end(), [](double x) { return !std::isnan(x); });
    if (std::all_of(first, v.end(), [&](double x) { return std::isnan(x) || x == *first; })) {
        out.mean = *first; // identical values: exact mean, zero spread
        return out;
    }
    if (out.n > 1) {
        double ss = 0.0;
        for (double x : v) {
            if (!std::isnan(x)) ss += (x - out.mean) * (x - out.mean);
        }
        out.sd = std::sqrt(ss / static_cast<double>(out.n - 1));
    }
    return out;
}

} // namespace stardr
