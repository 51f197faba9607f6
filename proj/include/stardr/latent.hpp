#pragma once

// Latent- and feature-space diagnostics: 2D PCA, pooled-covariance
// Mahalanobis distance between group centroids, k-NN radius compactness.

#include "stardr/core.hpp"

#include <algorithm>
#include <span>

namespace stardr {

struct PcaModel {
    Vector mean;
    Matrix components;          // n_components x d, orthonormal rows
    Vector explained_variance;  // non-increasing
};

namespace detail {

/// Flip each row so that its largest-magnitude loading is positive.
inline void canonical_signs(Matrix& comps) {
    for (Index r = 0; r < comps.rows(); ++r) {
        Index arg = 0;
        comps.row(r).cwiseAbs().maxCoeff(&arg);
        if (comps(r, arg) < 0.0) comps.row(r) *= -1.0;
    }
}

} // namespace detail

/// Top principal axes of the centered data, from the eigen-decomposition of
/// the d x d covariance or the n x n Gram matrix, whichever is smaller.
inline PcaModel pca_fit(const Matrix& x, Index n_components = 2) {
    const Index n = x.rows(), d = x.cols();
    if (n_components < 1 || n < n_components || d < n_components)
        throw ValidationError("pca_fit: need at least " + std::to_string(n_components) + " rows and columns");
    if (!x.allFinite()) throw ValidationError("pca_fit: non-finite input");
    PcaModel m;
    m.mean = x.colwise().mean().transpose();
    const Matrix xc = x.rowwise() - m.mean.transpose();
    if (xc.squaredNorm() == 0.0) throw ValidationError("pca_fit: degenerate input (all rows identical)");
    const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
    m.components.resize(n_components, d);
    m.explained_variance.resize(n_components);
    if (d <= n) {
        Eigen::SelfAdjointEigenSolver<Matrix> es((xc.transpose() * xc) / denom);
        for (Index c = 0; c < n_components; ++c) {
            m.components.row(c) = es.eigenvectors().col(d - 1 - c).transpose();
            m.explained_variance(c) = std::max(0.0, es.eigenvalues()(d - 1 - c));
        }
    } else {
        Eigen::SelfAdjointEigenSolver<Matrix> es((xc * xc.transpose()) / denom);
        for (Index c = 0; c < n_components; ++c) {
            const double ev = std::max(0.0, es.eigenvalues()(n - 1 - c));
            Vector v = xc.transpose() * es.eigenvectors().col(n - 1 - c);
            for (Index p = 0; p < c; ++p) v -= m.components.row(p).dot(v) * m.components.row(p).transpose();
            if (v.norm() < 1e-12) {
                // Null direction: complete the basis with a unit vector.
                for (Index j = 0; j < d && v.norm() < 1e-12; ++j) {
                    v = Vector::Unit(d, j);
                    for (Index p = 0; p < c; ++p) v -= m.components.row(p).dot(v) * m.components.row(p).transpose();
                }
            }
            m.components.row(c) = v.normalized().transpose();
            m.explained_variance(c) = ev;
        }
    }
    detail::canonical_signs(m.components);
    return m;
}

inline Matrix pca_project(const PcaModel& m, const Matrix& x) {
    if (x.cols() != m.mean.size())
        throw ValidationError("pca_project: input has " + std::to_string(x.cols()) + " columns, model has " +
                              std::to_string(m.mean.size()));
    return (x.rowwise() - m.mean.transpose()) * m.components.transpose();
}

struct MahalanobisResult {
    double distance = 0.0;
    bool ridge_applied = false;
};

/// sqrt((muA - muB)^T S^-1 (muA - muB)) with S the pooled within-group
/// covariance over the two groups, denominator nA + nB - 2. A singular S gets
/// a 1e-9 ridge, reported in the result.
inline MahalanobisResult mahalanobis_centroid_distance(const Matrix& a, const Matrix& b) {
    if (a.rows() < 2 || b.rows() < 2) throw ValidationError("mahalanobis: each group needs at least 2 points");
    if (a.cols() != b.cols()) throw ValidationError("mahalanobis: groups have different dimensions");
    const RowVector mu_a = a.colwise().mean();
    const RowVector mu_b = b.colwise().mean();
    const Matrix ca = a.rowwise() - mu_a;
    const Matrix cb = b.rowwise() - mu_b;
    Matrix s = (ca.transpose() * ca + cb.transpose() * cb) / static_cast<double>(a.rows() + b.rows() - 2);
    MahalanobisResult r;
    Eigen::LLT<Matrix> llt(s);
    const double scale = std::max(1.0, s.diagonal().cwiseAbs().maxCoeff());
    if (llt.info() != Eigen::Success || llt.matrixL().toDenseMatrix().diagonal().minCoeff() < 1e-12 * std::sqrt(scale)) {
        s += 1e-9 * Matrix::Identity(s.rows(), s.cols());
        llt.compute(s);
        r.ridge_applied = true;
        if (llt.info() != Eigen::Success) throw RuntimeFailure("mahalanobis: pooled covariance singular after ridge");
    }
    const Vector diff = (mu_a - mu_b).transpose();
    r.distance = std::sqrt(std::max(0.0, diff.dot(llt.solve(diff))));
    return r;
}

/// Distance from each point to its k-th nearest other point (brute force).
inline std::vector<double> knn_radii(const Matrix& points, std::size_t k = 10) {
    const auto n = static_cast<std::size_t>(points.rows());
    if (k < 1 || n <= k)
        throw ValidationError("knn_radii: need more than k=" + std::to_string(k) + " points, got " + std::to_string(n));
    std::vector<double> radii(n);
    std::vector<double> d(n - 1);
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t w = 0;
        for (std::size_t j = 0; j < n; ++j) {
            if (j == i) continue;
            d[w++] = (points.row(static_cast<Index>(i)) - points.row(static_cast<Index>(j))).norm();
        }
        std::nth_element(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k - 1), d.end());
        radii[i] = d[k - 1];
    }
    return radii;
}

inline double knn_mean_radius(const Matrix& points, std::size_t k = 10) {
    const auto r = knn_radii(points, k);
    double s = 0.0;
    for (double v : r) s += v;
    return s / static_cast<double>(r.size());
}

/// Population standard deviation over mean.
inline double coefficient_of_variation(std::span<const double> values) {
    if (values.empty()) throw ValidationError("coefficient_of_variation: empty input");
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    if (mean == 0.0) throw ValidationError("coefficient_of_variation: zero mean");
    double ss = 0.0;
    for (double v : values) ss += (v - mean) * (v - mean);
    return std::sqrt(ss / static_cast<double>(values.size())) / std::abs(mean);
}

struct EmbeddingStats {
    double mean_knn_radius = 0.0;
    double coefficient_of_variation = 0.0;
};

inline EmbeddingStats embedding_stats(const Matrix& points, std::size_t k = 10) {
    const auto r = knn_radii(points, k);
    EmbeddingStats s;
    for (double v : r) s.mean_knn_radius += v;
    s.mean_knn_radius /= static_cast<double>(r.size());
    s.coefficient_of_variation = coefficient_of_variation(r);
    return s;
}

} // namespace stardr
