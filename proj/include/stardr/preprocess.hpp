#pragma once

// Train-only preprocessing: min-max scaling, stratified splitting and random
// undersampling of the majority class.

#include "stardr/data.hpp"

#include <algorithm>
#include <set>

namespace stardr {

struct MinMaxScaler {
    Vector feature_min;
    Vector feature_max;
    std::size_t fitted_on = 0;

    std::size_t size() const { return static_cast<std::size_t>(feature_min.size()); }
    bool operator==(const MinMaxScaler& o) const {
        return fitted_on == o.fitted_on && feature_min.size() == o.feature_min.size() &&
               feature_min == o.feature_min && feature_max == o.feature_max;
    }
};

inline MinMaxScaler fit_minmax(const Matrix& train) {
    if (train.rows() == 0 || train.cols() == 0) throw ValidationError("fit_minmax: empty training matrix");
    MinMaxScaler s;
    s.feature_min = train.colwise().minCoeff().transpose();
    s.feature_max = train.colwise().maxCoeff().transpose();
    s.fitted_on = static_cast<std::size_t>(train.rows());
    return s;
}

/// Fit on a subset of rows only.
inline MinMaxScaler fit_minmax(const Matrix& all, const std::vector<std::size_t>& rows) {
    return fit_minmax(gather_rows(all, rows));
}

/// (x - min) / (max - min); zero-range columns map to 0. No clamping, so rows
/// outside the training range can leave [0, 1].
inline Matrix apply_minmax(const MinMaxScaler& s, const Matrix& m) {
    if (static_cast<std::size_t>(m.cols()) != s.size()) {
        throw ValidationError("apply_minmax: matrix has " + std::to_string(m.cols()) + " columns, scaler has " +
                              std::to_string(s.size()));
    }
    Matrix out(m.rows(), m.cols());
    for (Index j = 0; j < m.cols(); ++j) {
        const double lo = s.feature_min(j);
        const double range = s.feature_max(j) - lo;
        if (range > 0.0) {
            out.col(j) = (m.col(j).array() - lo) / range;
        } else {
            out.col(j).setZero();
        }
    }
    return out;
}

inline FeatureMatrix apply_minmax(const MinMaxScaler& s, const FeatureMatrix& m) {
    return FeatureMatrix(m.entity_ids, m.feature_ids, apply_minmax(s, m.values), m.kind);
}

/// Distinct values of `rows` in first-seen order.
inline std::vector<std::size_t> unique_rows(const std::vector<std::size_t>& rows) {
    std::vector<std::size_t> out;
    std::set<std::size_t> seen;
    for (auto r : rows) {
        if (seen.insert(r).second) out.push_back(r);
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---------------------------------------------------------------------------
// Splits
// ---------------------------------------------------------------------------

struct SplitAssignment {
    std::vector<std::size_t> train_indices;
    std::vector<std::size_t> val_indices;
    std::uint64_t seed = 0;
    bool stratified = true;
};

/// Per-class validation quotas. The overall validation size is
/// round(n * fraction); it is apportioned over the classes by largest
/// remainder (ties go to the lower label), then every non-empty class gets at
/// least one validation sample.
inline std::array<std::size_t, 2> stratified_quotas(std::array<std::size_t, 2> counts, double fraction) {
    const std::size_t n = counts[0] + counts[1];
    const auto total = static_cast<std::size_t>(std::llround(static_cast<double>(n) * fraction));
    std::array<std::size_t, 2> q{};
    std::array<double, 2> rem{};
    std::size_t assigned = 0;
    for (int c = 0; c < 2; ++c) {
        const double exact = static_cast<double>(counts[c]) * fraction;
        q[c] = static_cast<std::size_t>(std::floor(exact));
        rem[c] = exact - static_cast<double>(q[c]);
        assigned += q[c];
    }
    if (assigned < total) {
        const int first = rem[1] > rem[0] ? 1 : 0;
        for (int k = 0; k < 2 && assigned < total; ++k) {
            const int c = k == 0 ? first : 1 - first;
            if (q[c] < counts[c]) {
                ++q[c];
                ++assigned;
            }
        }
    }
    for (int c = 0; c < 2; ++c) {
        if (counts[c] > 0) q[c] = std::max<std::size_t>(q[c], 1);
    }
    return q;
}

inline SplitAssignment stratified_split(const std::vector<int>& labels, double val_fraction, std::uint64_t seed) {
    if (!(val_fraction > 0.0 && val_fraction < 1.0))
        throw ValidationError("stratified_split: fraction must be in (0, 1)");
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ValidationError("stratified_split: label is not 0 or 1");
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    if (by_class[0].empty() || by_class[1].empty())
        throw ValidationError("stratified_split: both classes must be present");
    const auto quota = stratified_quotas({by_class[0].size(), by_class[1].size()}, val_fraction);
    Rng rng(derive_seed(seed, stream::split));
    SplitAssignment out;
    out.seed = seed;
    for (int c = 0; c < 2; ++c) {
        auto& idx = by_class[c];
        if (quota[c] >= idx.size()) {
            throw ValidationError("stratified_split: class " + std::to_string(c) + " has " +
                                  std::to_string(idx.size()) + " samples, too few to leave one for training");
        }
        rng.shuffle(idx);
        out.val_indices.insert(out.val_indices.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(quota[c]));
        out.train_indices.insert(out.train_indices.end(), idx.begin() + static_cast<std::ptrdiff_t>(quota[c]), idx.end());
    }
    std::sort(out.train_indices.begin(), out.train_indices.end());
    std::sort(out.val_indices.begin(), out.val_indices.end());
    return out;
}

inline SplitAssignment stratified_split(const PairDataset& ds, double val_fraction, std::uint64_t seed) {
    return stratified_split(ds.labels(), val_fraction, seed);
}

/// Indices of a class-balanced subset: the majority class is subsampled
/// without replacement to the minority count, then the result is shuffled.
inline std::vector<std::size_t> undersample(const std::vector<int>& labels, std::uint64_t seed) {
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != 0 && labels[i] != 1) throw ValidationError("undersample: label is not 0 or 1");
        by_class[static_cast<std::size_t>(labels[i])].push_back(i);
    }
    if (by_class[0].empty() || by_class[1].empty()) throw ValidationError("undersample: a class is absent");
    Rng rng(derive_seed(seed, stream::sampling));
    const int major = by_class[0].size() >= by_class[1].size() ? 0 : 1;
    auto& big = by_class[major];
    const auto& small = by_class[1 - major];
    rng.shuffle(big);
    big.resize(small.size());
    std::vector<std::size_t> out = small;
    out.insert(out.end(), big.begin(), big.end());
    std::sort(out.begin(), out.end());
    rng.shuffle(out);
    return out;
}

inline PairDataset undersample(const PairDataset& ds, std::uint64_t seed) {
    return ds.subset(undersample(ds.labels(), seed));
}

} // namespace stardr
