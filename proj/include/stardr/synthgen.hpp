#pragma once

// Synthetic source/target drug-response data with tunable covariate, label
// and concept shift.
//
// Generative model (r = latent_dim_true):
//   z_cell, z_drug ~ N(0, I_r)
//   x_cell = A z_cell + noise_sigma * e          (features "expr:g*")
//   x_drug = B z_drug + noise_sigma * e          (half "desc:d*", half binarized "fp:b*")
//   target cells: x_cell += shift_delta * s_top * u
// where u is a fixed random unit direction and s_top the standard deviation of
// the source cell cloud along its principal axis, so `shift_delta` counts
// principal-axis standard deviations.
//   logit = w_c . z_cell + w_d . z_drug + b,   |w_d| = drug_effect_ratio * |w_c|
//   label = 1 iff logit + noise_sigma * e > 0
// In the target domain w = [w_c; w_d] is rotated by `concept_shift` radians
// and b is offset by label_shift * |w|.

#include "stardr/data.hpp"

namespace stardr {

struct ShiftConfig {
    std::size_t n_cells_source = 400;
    std::size_t n_cells_target = 200;
    std::size_t n_drugs = 30;
    std::size_t latent_dim_true = 8;
    std::size_t feature_dim_cell = 500;
    std::size_t feature_dim_drug = 100;
    double shift_delta = 0.0;
    double label_shift = 0.0;
    double concept_shift = 0.0;
    double noise_sigma = 0.1;
    double drug_effect_ratio = 3.0;
    double label_bias = -1.0;
    double source_density = 0.5; // probability that a source (cell, drug) pair is measured
    double target_density = 0.15;
    std::uint64_t seed = 42;

    void validate() const {
        if (n_cells_source < 1 || n_cells_target < 1 || n_drugs < 1 || latent_dim_true < 1 || feature_dim_cell < 1 ||
            feature_dim_drug < 2)
            throw ValidationError("ShiftConfig: sizes must be >= 1 (drug features >= 2)");
        if (!(shift_delta >= 0.0)) throw ValidationError("ShiftConfig: shift_delta must be >= 0");
        if (!(label_shift >= -1.0 && label_shift <= 1.0)) throw ValidationError("ShiftConfig: label_shift must be in [-1, 1]");
        if (!(concept_shift >= 0.0)) throw ValidationError("ShiftConfig: concept_shift must be >= 0");
        if (!(noise_sigma >= 0.0)) throw ValidationError("ShiftConfig: noise_sigma must be >= 0");
        if (!(drug_effect_ratio > 0.0)) throw ValidationError("ShiftConfig: drug_effect_ratio must be > 0");
        for (double d : {source_density, target_density}) {
            if (!(d > 0.0 && d <= 1.0)) throw ValidationError("ShiftConfig: densities must be in (0, 1]");
        }
    }
};

enum class Domain { Source, Target };

/// Noise-free labeler with access to the true latent factors.
struct SynthOracle {
    std::unordered_map<std::string, Vector> cell_latent;
    std::unordered_map<std::string, Vector> drug_latent;
    Vector w_cell_source, w_drug_source;
    Vector w_cell_target, w_drug_target;
    double bias_source = 0.0;
    double bias_target = 0.0;

    double logit(const std::string& cell, const std::string& drug, Domain d) const {
        const auto& zc = cell_latent.at(cell);
        const auto& zd = drug_latent.at(drug);
        return d == Domain::Source ? w_cell_source.dot(zc) + w_drug_source.dot(zd) + bias_source
                                   : w_cell_target.dot(zc) + w_drug_target.dot(zd) + bias_target;
    }

    int label(const std::string& cell, const std::string& drug, Domain d) const {
        return logit(cell, drug, d) > 0.0 ? 1 : 0;
    }

    double accuracy(const PairDataset& ds, Domain d) const {
        if (ds.empty()) return 0.0;
        std::size_t hit = 0;
        for (const auto& p : ds.pairs()) hit += label(p.cell_id, p.drug_id, d) == p.label ? 1 : 0;
        return static_cast<double>(hit) / static_cast<double>(ds.size());
    }
};

struct SynthData {
    std::shared_ptr<const FeatureMatrix> source_cells;
    std::shared_ptr<const FeatureMatrix> target_cells;
    std::shared_ptr<const FeatureMatrix> drugs;
    PairDataset source;
    PairDataset target;
    SynthOracle oracle;
    FeatureSchema schema;
};

namespace detail {

inline Matrix gaussian(Index rows, Index cols, Rng& rng, double scale = 1.0) {
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = scale * rng.normal();
    return m;
}

inline Vector unit_vector(Index n, Rng& rng) {
    Vector v(n);
    for (Index i = 0; i < n; ++i) v(i) = rng.normal();
    return v / v.norm();
}

inline std::string padded(const char* prefix, std::size_t i, std::size_t total) {
    std::string num = std::to_string(i);
    const std::size_t width = std::to_string(total).size();
    return prefix + std::string(width > num.size() ? width - num.size() : 0, '0') + num;
}

} // namespace detail

inline SynthData generate(const ShiftConfig& c) {
    c.validate();
    using detail::gaussian;
    const auto r = static_cast<Index>(c.latent_dim_true);
    const auto dc = static_cast<Index>(c.feature_dim_cell);
    const auto dd = static_cast<Index>(c.feature_dim_drug);
    const double inv_sqrt_r = 1.0 / std::sqrt(static_cast<double>(r));

    // Independent streams so that changing one knob leaves the other draws intact.
    Rng rng_struct(derive_seed(c.seed, stream::synth, 1));
    Rng rng_cells(derive_seed(c.seed, stream::synth, 2));
    Rng rng_drugs(derive_seed(c.seed, stream::synth, 3));
    Rng rng_pairs(derive_seed(c.seed, stream::synth, 4));

    const Matrix a = gaussian(dc, r, rng_struct, inv_sqrt_r);
    const Matrix b = gaussian(dd, r, rng_struct, inv_sqrt_r);
    const Vector u = detail::unit_vector(dc, rng_struct);
    // Direction draws happen in a fixed order so every knob reuses them.
    Vector wc = detail::unit_vector(r, rng_struct);
    Vector wd = detail::unit_vector(r, rng_struct) * c.drug_effect_ratio;
    Vector w(2 * r);
    w << wc, wd;
    Vector w_perp = detail::unit_vector(2 * r, rng_struct);
    w_perp -= w_perp.dot(w) / w.squaredNorm() * w;
    w_perp = w_perp.normalized() * w.norm();
    const Vector wt = std::cos(c.concept_shift) * w + std::sin(c.concept_shift) * w_perp;

    SynthOracle oracle;
    oracle.w_cell_source = wc;
    oracle.w_drug_source = wd;
    oracle.w_cell_target = wt.head(r);
    oracle.w_drug_target = wt.tail(r);
    oracle.bias_source = c.label_bias;
    oracle.bias_target = c.label_bias + c.label_shift * w.norm();

    // Principal-axis scale of the noise-free source cloud: sqrt(top eigenvalue of A A^T) plus noise.
    Eigen::SelfAdjointEigenSolver<Matrix> es(a.transpose() * a);
    const double s_top = std::sqrt(es.eigenvalues().maxCoeff() + c.noise_sigma * c.noise_sigma);
    const Vector shift = c.shift_delta * s_top * u;

    auto make_cells = [&](std::size_t n, const char* prefix, bool shifted) {
        std::vector<std::string> ids;
        Matrix x(static_cast<Index>(n), dc);
        for (std::size_t i = 0; i < n; ++i) {
            ids.push_back(detail::padded(prefix, i, n));
            Vector z(r);
            for (Index k = 0; k < r; ++k) z(k) = rng_cells.normal();
            Vector xi = a * z;
            for (Index j = 0; j < dc; ++j) xi(j) += c.noise_sigma * rng_cells.normal();
            if (shifted) xi += shift;
            x.row(static_cast<Index>(i)) = xi.transpose();
            oracle.cell_latent.emplace(ids.back(), std::move(z));
        }
        std::vector<std::string> feats;
        for (Index j = 0; j < dc; ++j) feats.push_back(detail::padded("expr:g", static_cast<std::size_t>(j), c.feature_dim_cell));
        return std::make_shared<const FeatureMatrix>(std::move(ids), std::move(feats), std::move(x), ModalityKind::Cell);
    };
    auto source_cells = make_cells(c.n_cells_source, "S", false);
    auto target_cells = make_cells(c.n_cells_target, "T", true);

    std::vector<std::string> drug_ids;
    const Index n_desc = dd / 2;
    Matrix xd(static_cast<Index>(c.n_drugs), dd);
    for (std::size_t i = 0; i < c.n_drugs; ++i) {
        drug_ids.push_back(detail::padded("D", i, c.n_drugs));
        Vector z(r);
        for (Index k = 0; k < r; ++k) z(k) = rng_drugs.normal();
        Vector xi = b * z;
        for (Index j = 0; j < dd; ++j) {
            xi(j) += c.noise_sigma * rng_drugs.normal();
            if (j >= n_desc) xi(j) = xi(j) > 0.0 ? 1.0 : 0.0;
        }
        xd.row(static_cast<Index>(i)) = xi.transpose();
        oracle.drug_latent.emplace(drug_ids.back(), std::move(z));
    }
    std::vector<std::string> drug_feats;
    for (Index j = 0; j < dd; ++j) {
        drug_feats.push_back(j < n_desc ? detail::padded("desc:d", static_cast<std::size_t>(j), c.feature_dim_drug)
                                        : detail::padded("fp:b", static_cast<std::size_t>(j - n_desc), c.feature_dim_drug));
    }
    auto drugs = std::make_shared<const FeatureMatrix>(drug_ids, drug_feats, std::move(xd), ModalityKind::Drug);

    auto make_pairs = [&](const FeatureMatrix& cells, double density, Domain dom) {
        std::vector<ResponsePair> pairs;
        for (const auto& cell : cells.entity_ids) {
            for (const auto& drug : drug_ids) {
                const double keep = rng_pairs.uniform();
                const double noise = rng_pairs.normal();
                if (keep >= density) continue;
                const double logit = oracle.logit(cell, drug, dom) + c.noise_sigma * noise;
                pairs.push_back({cell, drug, logit > 0.0 ? 1 : 0});
            }
        }
        return pairs;
    };

    SynthData out;
    out.source = PairDataset(make_pairs(*source_cells, c.source_density, Domain::Source), source_cells, drugs,
                             DatasetTag::SourceCellLine);
    out.target = PairDataset(make_pairs(*target_cells, c.target_density, Domain::Target), target_cells, drugs,
                             DatasetTag::Patient);
    out.schema = build_schema({source_cells.get()}, {drugs.get()}, "synthetic");
    out.source_cells = std::move(source_cells);
    out.target_cells = std::move(target_cells);
    out.drugs = std::move(drugs);
    out.oracle = std::move(oracle);
    return out;
}

/// File names written by `save_synth`.
struct SynthFiles {
    static constexpr const char* source_cells = "source_cells.csv";
    static constexpr const char* target_cells = "target_cells.csv";
    static constexpr const char* drugs = "drugs.csv";
    static constexpr const char* source_pairs = "source_pairs.csv";
    static constexpr const char* target_pairs = "target_pairs.csv";
    static constexpr const char* schema = "schema.txt";
};

inline std::vector<std::string> save_synth(const SynthData& d, const std::string& dir) {
    const std::vector<std::string> files = {SynthFiles::source_cells, SynthFiles::target_cells, SynthFiles::drugs,
                                            SynthFiles::source_pairs, SynthFiles::target_pairs, SynthFiles::schema};
    save_feature_matrix(*d.source_cells, dir + "/" + SynthFiles::source_cells);
    save_feature_matrix(*d.target_cells, dir + "/" + SynthFiles::target_cells);
    save_feature_matrix(*d.drugs, dir + "/" + SynthFiles::drugs);
    save_response_pairs(d.source, dir + "/" + SynthFiles::source_pairs);
    save_response_pairs(d.target, dir + "/" + SynthFiles::target_pairs);
    save_schema(d.schema, dir + "/" + SynthFiles::schema);
    return files;
}

} // namespace stardr
