#pragma once

// End-to-end training recipes over a labeled source dataset: train-only
// scaling, stratified validation split, undersampling, then either the
// staged phases or the single-phase baseline.

#include "stardr/pipeline.hpp"

namespace stardr {

struct Scalers {
    MinMaxScaler cell;
    MinMaxScaler drug;

    bool operator==(const Scalers&) const = default;
};

/// Fit both scalers on the feature rows referenced by `train` only.
inline Scalers fit_scalers(const PairDataset& train) {
    if (train.empty()) throw ValidationError("fit_scalers: empty training set");
    return {fit_minmax(train.cell_matrix().values, unique_rows(train.cell_rows())),
            fit_minmax(train.drug_matrix().values, unique_rows(train.drug_rows()))};
}

/// Scale every row of both matrices with train-fit statistics.
inline PairDataset apply_scalers(const Scalers& s, const PairDataset& ds) {
    auto cells = std::make_shared<const FeatureMatrix>(apply_minmax(s.cell, ds.cell_matrix()));
    auto drugs = std::make_shared<const FeatureMatrix>(apply_minmax(s.drug, ds.drug_matrix()));
    return ds.with_matrices(std::move(cells), std::move(drugs));
}

enum class ModelKind { Staged, Baseline };

inline const char* to_string(ModelKind k) { return k == ModelKind::Staged ? "staged" : "baseline"; }

struct TrainSettings {
    ModelConfig model;
    TrainConfig train;
    AlignOptions align;
    BaselineOptions baseline;
};

/// Scaled training material for one model fit.
struct FitData {
    PairDataset train_balanced;             // scaled, undersampled labeled pairs
    std::vector<std::size_t> pretrain_cells; // rows of the scaled cell matrix usable without labels
    std::vector<std::size_t> pretrain_drugs;
};

/// Undersample a scaled training set and collect its unlabeled entity rows.
inline FitData make_fit_data(const PairDataset& train_scaled, std::uint64_t seed) {
    FitData f{undersample(train_scaled, seed), unique_rows(train_scaled.cell_rows()),
              unique_rows(train_scaled.drug_rows())};
    return f;
}

/// The phase-1 model alone: autoencoders pretrained on the unlabeled rows.
inline PredictionModel pretrain_only(const FitData& data, const TrainSettings& s, TrainLog* log = nullptr,
                                     std::vector<std::string>* warnings = nullptr) {
    const auto& ds = data.train_balanced;
    return phase1_pretrain(gather_rows(ds.cell_matrix().values, data.pretrain_cells),
                           gather_rows(ds.drug_matrix().values, data.pretrain_drugs), s.model, s.train, log, warnings);
}

inline PredictionModel fit_model(ModelKind kind, const FitData& data, const TrainSettings& s,
                                 TrainLog* log = nullptr, std::vector<std::string>* warnings = nullptr) {
    const auto& ds = data.train_balanced;
    if (kind == ModelKind::Staged) {
        return phase2_align(pretrain_only(data, s, log, warnings), ds, s.train, s.align, log);
    }
    return baseline_train(ds.cell_matrix().cols(), ds.drug_matrix().cols(), ds, s.model, s.train, s.baseline, log);
}

/// A fitted model together with everything needed to apply it elsewhere.
struct TrainedModel {
    PredictionModel model;
    Scalers scalers;
    SplitAssignment split;  // indices into the source dataset
    MetricReport validation; // on the held-out stratified split, original label balance
};

/// Source data ready for fitting: the stratified split, train-fit scalers,
/// the balanced training material and the scaled validation pairs.
struct PreparedSource {
    SplitAssignment split;   // indices into the source dataset
    Scalers scalers;
    FitData fit;
    PairDataset validation;  // scaled, original label balance
};

inline PreparedSource prepare_source(const PairDataset& source, double val_fraction, std::uint64_t seed) {
    PreparedSource p;
    p.split = stratified_split(source, val_fraction, seed);
    const PairDataset train = source.subset(p.split.train_indices);
    p.scalers = fit_scalers(train);
    p.fit = make_fit_data(apply_scalers(p.scalers, train), seed);
    p.validation = apply_scalers(p.scalers, source.subset(p.split.val_indices));
    return p;
}

/// Split the source pairs, fit scalers on the training part, undersample,
/// train, and evaluate on the untouched validation part.
inline TrainedModel train_on_source(ModelKind kind, const PairDataset& source, double val_fraction,
                                    const TrainSettings& s, TrainLog* log = nullptr,
                                    std::vector<std::string>* warnings = nullptr) {
    const PreparedSource p = prepare_source(source, val_fraction, s.train.seed);
    TrainedModel out;
    out.split = p.split;
    out.scalers = p.scalers;
    out.model = fit_model(kind, p.fit, s, log, warnings);
    out.validation = evaluate_model(out.model, p.validation);
    return out;
}

} // namespace stardr
