#pragma once

// Evaluation protocols: pair-level k-fold, leave-cell-out and leave-drug-out
// cross-validation, zero-shot cross-dataset evaluation and few-shot curves.

#include "stardr/experiment.hpp"
#include "stardr/svg.hpp"

namespace stardr {

enum class Protocol { PairKFold, LeaveCellOut, LeaveDrugOut };

inline const char* to_string(Protocol p) {
    switch (p) {
    case Protocol::PairKFold: return "pair";
    case Protocol::LeaveCellOut: return "lco";
    case Protocol::LeaveDrugOut: return "ldo";
    }
    return "?";
}

inline Protocol protocol_from_string(std::string_view s) {
    if (s == "pair") return Protocol::PairKFold;
    if (s == "lco") return Protocol::LeaveCellOut;
    if (s == "ldo") return Protocol::LeaveDrugOut;
    throw ValidationError("unknown protocol '" + std::string(s) + "' (expected pair, lco or ldo)");
}

struct SplitPlan {
    Protocol protocol = Protocol::PairKFold;
    std::size_t folds = 5;
    std::vector<std::size_t> assignments; // pair index -> fold
    std::uint64_t seed = 0;

    std::vector<std::size_t> test_indices(std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignments.size(); ++i) {
            if (assignments[i] == fold) out.push_back(i);
        }
        return out;
    }

    std::vector<std::size_t> train_indices(std::size_t fold) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < assignments.size(); ++i) {
            if (assignments[i] != fold) out.push_back(i);
        }
        return out;
    }
};

/// PairKFold: seeded shuffle, then contiguous chunks (the first n % folds
/// chunks get one extra pair). Group protocols: groups are shuffled, stably
/// ordered by descending pair count, and each goes to the fold with the
/// fewest pairs so far (lowest index on ties).
inline SplitPlan make_split_plan(const PairDataset& ds, Protocol protocol, std::size_t folds, std::uint64_t seed) {
    if (folds < 2) throw ValidationError("make_split_plan: need at least 2 folds");
    SplitPlan plan{protocol, folds, std::vector<std::size_t>(ds.size(), 0), seed};
    Rng rng(derive_seed(seed, stream::fold, static_cast<std::uint64_t>(protocol)));
    if (protocol == Protocol::PairKFold) {
        if (ds.size() < folds)
            throw ValidationError("make_split_plan: " + std::to_string(ds.size()) + " pairs cannot fill " +
                                  std::to_string(folds) + " folds");
        const auto perm = rng.permutation(ds.size());
        const std::size_t base = ds.size() / folds, extra = ds.size() % folds;
        std::size_t pos = 0;
        for (std::size_t f = 0; f < folds; ++f) {
            const std::size_t len = base + (f < extra ? 1 : 0);
            for (std::size_t i = 0; i < len; ++i) plan.assignments[perm[pos++]] = f;
        }
        return plan;
    }
    const auto& rows = protocol == Protocol::LeaveCellOut ? ds.cell_rows() : ds.drug_rows();
    std::map<std::size_t, std::vector<std::size_t>> groups;
    for (std::size_t i = 0; i < rows.size(); ++i) groups[rows[i]].push_back(i);
    if (groups.size() < folds) {
        throw ValidationError(std::string("make_split_plan: ") + (protocol == Protocol::LeaveCellOut ? "cell" : "drug") +
                              " groups (" + std::to_string(groups.size()) + ") fewer than folds (" +
                              std::to_string(folds) + ")");
    }
    std::vector<const std::vector<std::size_t>*> order;
    for (const auto& [key, members] : groups) order.push_back(&members);
    rng.shuffle(order);
    std::stable_sort(order.begin(), order.end(), [](auto* a, auto* b) { return a->size() > b->size(); });
    std::vector<std::size_t> load(folds, 0);
    for (const auto* g : order) {
        const auto f = static_cast<std::size_t>(std::min_element(load.begin(), load.end()) - load.begin());
        for (auto i : *g) plan.assignments[i] = f;
        load[f] += g->size();
    }
    return plan;
}

struct CvResult {
    Protocol protocol = Protocol::PairKFold;
    std::vector<MetricReport> folds;
    MeanSd roc_auc, pr_auc, balanced_accuracy;
};

inline void summarize(CvResult& r) {
    std::vector<double> a, p, b;
    for (const auto& f : r.folds) {
        a.push_back(f.roc_auc);
        p.push_back(f.pr_auc);
        b.push_back(f.balanced_accuracy);
    }
    r.roc_auc = mean_sd(a);
    r.pr_auc = mean_sd(p);
    r.balanced_accuracy = mean_sd(b);
}

/// Builds a model from fold-local, already scaled and balanced training data.
using ModelBuilder = std::function<PredictionModel(const FitData&, const TrainConfig&)>;

inline ModelBuilder make_builder(ModelKind kind, const TrainSettings& s) {
    return [kind, s](const FitData& data, const TrainConfig& cfg) {
        TrainSettings local = s;
        local.train = cfg;
        return fit_model(kind, data, local);
    };
}

/// For each fold: fit scalers on the training folds only, undersample them,
/// train a fresh model with seed derived from (cfg.seed, fold), and evaluate
/// on the held-out fold.
inline CvResult cross_validate(const ModelBuilder& builder, const PairDataset& ds, const SplitPlan& plan,
                               const TrainConfig& cfg, std::size_t jobs = 1) {
    if (plan.assignments.size() != ds.size()) throw ValidationError("cross_validate: plan does not match dataset");
    CvResult r;
    r.protocol = plan.protocol;
    r.folds.resize(plan.folds);
    parallel_for(plan.folds, jobs, [&](std::size_t f) {
        TrainConfig fold_cfg = cfg;
        fold_cfg.seed = derive_seed(cfg.seed, stream::fold, f);
        const PairDataset train = ds.subset(plan.train_indices(f));
        const PairDataset test = ds.subset(plan.test_indices(f));
        const Scalers scalers = fit_scalers(train);
        const FitData data = make_fit_data(apply_scalers(scalers, train), fold_cfg.seed);
        const PredictionModel m = builder(data, fold_cfg);
        r.folds[f] = evaluate_model(m, apply_scalers(scalers, test));
    });
    summarize(r);
    return r;
}

inline std::string metrics_table(const CvResult& r) {
    text::Table t({"protocol", "fold", "roc_auc", "pr_auc", "balanced_accuracy", "n_pos", "n_neg"});
    for (std::size_t f = 0; f < r.folds.size(); ++f) {
        const auto& m = r.folds[f];
        t.row({to_string(r.protocol), std::to_string(f), text::format_double(m.roc_auc), text::format_double(m.pr_auc),
               text::format_double(m.balanced_accuracy), std::to_string(m.n_pos), std::to_string(m.n_neg)});
    }
    return t.str();
}

/// Zero-shot evaluation on a dataset already reindexed to the model's schema
/// and scaled with the source scalers.
inline MetricReport evaluate_cross_dataset(const PredictionModel& m, const PairDataset& target,
                                           const FeatureSchema* target_schema = nullptr) {
    if (target_schema && !m.schema_hash.empty() && target_schema->hash() != m.schema_hash)
        throw ValidationError("evaluate_cross_dataset: target schema differs from the model's training schema");
    if (static_cast<Index>(target.cell_matrix().cols()) != m.cell_ae.input_dim() ||
        static_cast<Index>(target.drug_matrix().cols()) != m.drug_ae.input_dim())
        throw ValidationError("evaluate_cross_dataset: target feature widths do not match the model");
    return evaluate_model(m, target);
}

// ---------------------------------------------------------------------------
// Few-shot curves
// ---------------------------------------------------------------------------

struct FewShotCurve {
    std::vector<std::size_t> shot_counts;
    std::vector<FewShotCell> cells;
    std::vector<MeanSd> roc_auc; // per shot count
    std::vector<MeanSd> pr_auc;

    double mean_roc_at(std::size_t k) const {
        for (std::size_t i = 0; i < shot_counts.size(); ++i) {
            if (shot_counts[i] == k) return roc_auc[i].mean;
        }
        throw ValidationError("FewShotCurve: no entry for " + std::to_string(k) + " shots");
    }

    std::string runs_table() const {
        text::Table t({"shot_count", "run", "roc_auc", "pr_auc"});
        for (const auto& c : cells)
            t.row({std::to_string(c.shots), std::to_string(c.run), text::format_double(c.report.roc_auc),
                   text::format_double(c.report.pr_auc)});
        return t.str();
    }

    std::string summary_table() const {
        text::Table t({"shot_count", "metric", "mean", "sd"});
        for (std::size_t i = 0; i < shot_counts.size(); ++i) {
            const auto k = std::to_string(shot_counts[i]);
            t.row({k, "roc_auc", text::format_double(roc_auc[i].mean), text::format_double(roc_auc[i].sd)});
            t.row({k, "pr_auc", text::format_double(pr_auc[i].mean), text::format_double(pr_auc[i].sd)});
        }
        return t.str();
    }

    std::string svg(const std::string& title) const {
        std::vector<double> x, ra, rs, pa, ps;
        for (std::size_t i = 0; i < shot_counts.size(); ++i) {
            x.push_back(static_cast<double>(shot_counts[i]));
            ra.push_back(roc_auc[i].mean);
            rs.push_back(roc_auc[i].sd);
            pa.push_back(pr_auc[i].mean);
            ps.push_back(pr_auc[i].sd);
        }
        return svg::line_chart(title, {{"ROC-AUC", svg::palette(0), x, ra, rs}, {"PR-AUC", svg::palette(1), x, pa, ps}});
    }
};

/// Mean and sample s.d. over runs for every shot count.
inline FewShotCurve make_curve(const FewShotResult& r, const std::vector<std::size_t>& shot_counts) {
    FewShotCurve c;
    c.shot_counts = shot_counts;
    c.cells = r.cells;
    for (auto k : shot_counts) {
        std::vector<double> a, p;
        for (const auto& cell : r.cells) {
            if (cell.shots == k) {
                a.push_back(cell.report.roc_auc);
                p.push_back(cell.report.pr_auc);
            }
        }
        c.roc_auc.push_back(mean_sd(a));
        c.pr_auc.push_back(mean_sd(p));
    }
    return c;
}

inline FewShotCurve fewshot_curve(const PredictionModel& m, const PairDataset& target, const FewShotSpec& spec,
                                  const TrainConfig& cfg, std::size_t jobs = 1) {
    return make_curve(phase3_fewshot(m, target, spec, cfg, jobs), spec.shot_counts);
}

} // namespace stardr
