#pragma once

// The three training phases of the staged model (unsupervised pretraining,
// supervised alignment, few-shot adaptation) and the single-phase baseline.
//
// All phases take already-scaled data. Each phase creates a fresh Adam state
// and shuffles with a stream derived from (cfg.seed, phase).

#include "stardr/metrics.hpp"
#include "stardr/model.hpp"
#include "stardr/preprocess.hpp"

#include <atomic>
#include <chrono>
#include <optional>
#include <map>
#include <mutex>
#include <thread>

namespace stardr {

struct LogRow {
    std::string phase;
    std::size_t epoch = 0;
    double loss = 0.0;
    double wall_time = 0.0; // seconds since the phase started
};

/// Per-epoch training log; rendered as `phase,epoch,loss,wall_time`.
struct TrainLog {
    std::vector<LogRow> rows;

    std::string str() const {
        text::Table t({"phase", "epoch", "loss", "wall_time"});
        for (const auto& r : rows)
            t.row({r.phase, std::to_string(r.epoch), text::format_double(r.loss), text::format_fixed(r.wall_time, 3)});
        return t.str();
    }
};

/// Which parameter groups an optimizer step may touch.
struct TrainScope {
    bool cell_encoder = false;
    bool cell_decoder = false;
    bool drug_encoder = false;
    bool drug_decoder = false;
    bool head = false;
};

/// Weights of the loss terms in a joint training step.
struct Objective {
    double bce = 1.0;
    double cell_recon = 0.0;
    double drug_recon = 0.0;
};

namespace detail {

inline double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

inline void check_finite_loss(double loss, const std::string& phase, std::size_t epoch, std::size_t batch) {
    if (!std::isfinite(loss)) {
        throw RuntimeFailure(phase + ": non-finite loss at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(batch));
    }
}

/// Minibatch Adam on reconstruction MSE for one autoencoder.
inline void train_autoencoder(Autoencoder& ae, const Matrix& x, const TrainConfig& cfg, std::uint64_t stream_tag,
                              const std::string& name, TrainLog* log) {
    std::vector<ParamBlock> params;
    append_params(ae.encoder, name + ".encoder", params);
    append_params(ae.decoder, name + ".decoder", params);
    AdamState adam;
    Rng rng(derive_seed(cfg.seed, stream::shuffle, stream_tag));
    const auto t0 = std::chrono::steady_clock::now();
    const auto n = static_cast<std::size_t>(x.rows());
    std::vector<DenseCache> ce, cd;
    std::vector<DenseGrads> ge, gd;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto order = rng.permutation(n);
        double total = 0.0;
        std::size_t batch_no = 0;
        for (auto [b, e] : batch_ranges(n, cfg.batch_size)) {
            const Matrix xb = gather_rows(x, {order.begin() + static_cast<std::ptrdiff_t>(b),
                                              order.begin() + static_cast<std::ptrdiff_t>(e)});
            const Matrix z = ae.encoder.forward(xb, ce);
            const Matrix rec = ae.decoder.forward(z, cd);
            const auto loss = mse_loss(rec, xb);
            check_finite_loss(loss.loss, "pretrain/" + name, epoch, batch_no++);
            const Matrix gz = ae.decoder.backward(cd, loss.grad, gd);
            ae.encoder.backward(ce, gz, ge);
            std::vector<GradBlock> grads;
            append_grads(ge, grads);
            append_grads(gd, grads);
            adam_step(params, grads, adam, cfg);
            total += loss.loss * static_cast<double>(e - b);
        }
        if (log) log->rows.push_back({"pretrain/" + name, epoch, total / static_cast<double>(n), seconds_since(t0)});
    }
}

/// Minibatch Adam over labeled pairs with a weighted BCE + reconstruction
/// objective. Only parameter groups in `scope` are updated.
inline void train_pairs(PredictionModel& m, const PairDataset& ds, const Objective& obj, const TrainScope& scope,
                        const TrainConfig& cfg, PhaseTag phase, TrainLog* log) {
    std::vector<ParamBlock> params;
    if (scope.cell_encoder) append_params(m.cell_ae.encoder, "cell.encoder", params);
    if (scope.cell_decoder) append_params(m.cell_ae.decoder, "cell.decoder", params);
    if (scope.drug_encoder) append_params(m.drug_ae.encoder, "drug.encoder", params);
    if (scope.drug_decoder) append_params(m.drug_ae.decoder, "drug.decoder", params);
    if (scope.head) append_params(m.head, "head", params);

    AdamState adam;
    Rng rng(derive_seed(cfg.seed, stream::shuffle, static_cast<std::uint64_t>(phase)));
    const auto t0 = std::chrono::steady_clock::now();
    const std::string phase_name = to_string(phase);
    const auto& cm = ds.cell_matrix().values;
    const auto& dm = ds.drug_matrix().values;
    const Index cell_latent = m.cell_ae.latent_dim();
    const Index drug_latent = m.drug_ae.latent_dim();
    const bool need_cell_grad = scope.cell_encoder || (scope.cell_decoder && obj.cell_recon > 0.0);
    const bool need_drug_grad = scope.drug_encoder || (scope.drug_decoder && obj.drug_recon > 0.0);

    std::vector<DenseCache> c_ce, c_cd, c_de, c_dd, c_h;
    std::vector<DenseGrads> g_ce, g_cd, g_de, g_dd, g_h;
    const std::size_t n = ds.size();
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto order = rng.permutation(n);
        double total = 0.0;
        std::size_t batch_no = 0;
        for (auto [b, e] : batch_ranges(n, cfg.batch_size)) {
            std::vector<std::size_t> cr, dr;
            Matrix y(static_cast<Index>(e - b), 1);
            for (std::size_t i = b; i < e; ++i) {
                cr.push_back(ds.cell_rows()[order[i]]);
                dr.push_back(ds.drug_rows()[order[i]]);
                y(static_cast<Index>(i - b), 0) = ds[order[i]].label;
            }
            const Matrix xc = gather_rows(cm, cr);
            const Matrix xd = gather_rows(dm, dr);
            const Matrix zc = m.cell_ae.encoder.forward(xc, c_ce);
            const Matrix zd = m.drug_ae.encoder.forward(xd, c_de);
            const Matrix p = m.head.forward(concat_latents(zc, zd), c_h);
            auto bce = bce_loss(p, y);
            double loss = obj.bce * bce.loss;
            const Matrix gz = m.head.backward(c_h, obj.bce * bce.grad, g_h);
            Matrix gzc = gz.leftCols(cell_latent);
            Matrix gzd = gz.rightCols(drug_latent);
            if (obj.cell_recon > 0.0) {
                const auto rec = mse_loss(m.cell_ae.decoder.forward(zc, c_cd), xc);
                loss += obj.cell_recon * rec.loss;
                gzc += m.cell_ae.decoder.backward(c_cd, obj.cell_recon * rec.grad, g_cd);
            }
            if (obj.drug_recon > 0.0) {
                const auto rec = mse_loss(m.drug_ae.decoder.forward(zd, c_dd), xd);
                loss += obj.drug_recon * rec.loss;
                gzd += m.drug_ae.decoder.backward(c_dd, obj.drug_recon * rec.grad, g_dd);
            }
            check_finite_loss(loss, phase_name, epoch, batch_no++);
            if (need_cell_grad && scope.cell_encoder) m.cell_ae.encoder.backward(c_ce, gzc, g_ce);
            if (need_drug_grad && scope.drug_encoder) m.drug_ae.encoder.backward(c_de, gzd, g_de);

            std::vector<GradBlock> grads;
            if (scope.cell_encoder) append_grads(g_ce, grads);
            if (scope.cell_decoder) {
                if (obj.cell_recon <= 0.0) throw ValidationError(phase_name + ": cell decoder in scope without a reconstruction term");
                append_grads(g_cd, grads);
            }
            if (scope.drug_encoder) append_grads(g_de, grads);
            if (scope.drug_decoder) {
                if (obj.drug_recon <= 0.0) throw ValidationError(phase_name + ": drug decoder in scope without a reconstruction term");
                append_grads(g_dd, grads);
            }
            if (scope.head) append_grads(g_h, grads);
            adam_step(params, grads, adam, cfg);
            total += loss * static_cast<double>(e - b);
        }
        if (log) log->rows.push_back({phase_name, epoch, total / static_cast<double>(n), seconds_since(t0)});
    }
}

inline void require_both_classes(const PairDataset& ds, const std::string& who) {
    if (ds.count_label(0) == 0 || ds.count_label(1) == 0)
        throw ValidationError(who + ": training pairs must contain both classes");
}

} // namespace detail

// ---------------------------------------------------------------------------
// Phase 1: unsupervised pretraining
// ---------------------------------------------------------------------------

/// Pretrain the cell and drug autoencoders independently on unlabeled
/// feature rows. Only feature matrices enter this phase; the returned model
/// carries the freshly initialized head and history [P1].
inline PredictionModel phase1_pretrain(const Matrix& cell_x, const Matrix& drug_x, const ModelConfig& mc,
                                       const TrainConfig& cfg, TrainLog* log = nullptr,
                                       std::vector<std::string>* warnings = nullptr) {
    cfg.validate();
    if (cell_x.rows() == 0 || drug_x.rows() == 0) throw ValidationError("phase1_pretrain: empty feature matrix");
    auto m = build_model(static_cast<std::size_t>(cell_x.cols()), static_cast<std::size_t>(drug_x.cols()), mc,
                         cfg.seed, warnings);
    m.provenance = Provenance::Staged;
    detail::train_autoencoder(m.cell_ae, cell_x, cfg, 11, "cell", log);
    detail::train_autoencoder(m.drug_ae, drug_x, cfg, 12, "drug", log);
    m.phase_history.push_back(PhaseTag::P1_Pretrain);
    return m;
}

// ---------------------------------------------------------------------------
// Phase 2: supervised alignment
// ---------------------------------------------------------------------------

struct AlignOptions {
    /// Weight of an auxiliary reconstruction term. 0 keeps the decoders frozen
    /// and out of the computation.
    double recon_weight = 0.0;
};

/// Jointly fine-tune both encoders and the head on labeled pairs with BCE.
inline PredictionModel phase2_align(PredictionModel m, const PairDataset& train, const TrainConfig& cfg,
                                    const AlignOptions& opt = {}, TrainLog* log = nullptr) {
    cfg.validate();
    if (m.provenance != Provenance::Staged || !m.has_phase(PhaseTag::P1_Pretrain))
        throw ValidationError("phase2_align: model has not been through pretraining");
    detail::require_both_classes(train, "phase2_align");
    const bool aux = opt.recon_weight > 0.0;
    TrainScope scope{true, aux, true, aux, true};
    Objective obj{1.0, opt.recon_weight, opt.recon_weight};
    detail::train_pairs(m, train, obj, scope, cfg, PhaseTag::P2_Align, log);
    m.phase_history.push_back(PhaseTag::P2_Align);
    return m;
}

// ---------------------------------------------------------------------------
// Single-phase baseline
// ---------------------------------------------------------------------------

struct BaselineOptions {
    double cell_recon_weight = 1.0;
    double drug_recon_weight = 1.0;
    double bce_weight = 1.0;
};

/// Train every parameter of a freshly built model end to end on
/// MSE_cell + MSE_drug + BCE over the labeled pairs.
inline PredictionModel baseline_train(std::size_t cell_dim, std::size_t drug_dim, const PairDataset& train,
                                      const ModelConfig& mc, const TrainConfig& cfg, const BaselineOptions& opt = {},
                                      TrainLog* log = nullptr) {
    cfg.validate();
    detail::require_both_classes(train, "baseline_train");
    auto m = build_model(cell_dim, drug_dim, mc, cfg.seed);
    m.provenance = Provenance::SinglePhaseBaseline;
    TrainScope scope{true, opt.cell_recon_weight > 0.0, true, opt.drug_recon_weight > 0.0, true};
    Objective obj{opt.bce_weight, opt.cell_recon_weight, opt.drug_recon_weight};
    detail::train_pairs(m, train, obj, scope, cfg, PhaseTag::BaselineSinglePhase, log);
    m.phase_history.push_back(PhaseTag::BaselineSinglePhase);
    return m;
}

// ---------------------------------------------------------------------------
// Phase 3: few-shot adaptation
// ---------------------------------------------------------------------------

enum class AdaptScope { CellEncoderOnly, CellEncoderAndHead };

inline const char* to_string(AdaptScope s) {
    return s == AdaptScope::CellEncoderOnly ? "cell_encoder" : "cell_encoder_and_head";
}

inline AdaptScope adapt_scope_from_string(std::string_view s) {
    if (s == "cell_encoder") return AdaptScope::CellEncoderOnly;
    if (s == "cell_encoder_and_head") return AdaptScope::CellEncoderAndHead;
    throw ValidationError("unknown adapt scope '" + std::string(s) + "'");
}

struct FewShotSpec {
    std::vector<std::size_t> shot_counts{0, 10, 20, 50, 100};
    std::size_t runs = 5;
    AdaptScope adapt_scope = AdaptScope::CellEncoderAndHead;
    std::uint64_t seed_base = 42;
    double holdout_fraction = 0.5;

    void validate() const {
        if (shot_counts.empty()) throw ValidationError("FewShotSpec: empty shot grid");
        for (std::size_t i = 1; i < shot_counts.size(); ++i) {
            if (shot_counts[i] <= shot_counts[i - 1])
                throw ValidationError("FewShotSpec: shot counts must be strictly increasing");
        }
        if (runs < 1) throw ValidationError("FewShotSpec: runs must be >= 1");
        if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0))
            throw ValidationError("FewShotSpec: holdout fraction must be in (0, 1)");
    }
};

/// Optimizer settings for few-shot fine-tuning: a tenth of the training
/// learning rate, more epochs (a few shots make one minibatch per epoch).
inline TrainConfig default_adapt_config() {
    TrainConfig c;
    c.learning_rate = 1e-4;
    c.epochs = 100;
    return c;
}

/// Adapt a trained model on a handful of labeled target pairs. The drug
/// encoder and both decoders are never updated.
inline PredictionModel adapt_fewshot(PredictionModel m, const PairDataset& shots, AdaptScope scope,
                                     const TrainConfig& cfg, TrainLog* log = nullptr) {
    cfg.validate();
    const bool aligned = m.provenance == Provenance::Staged ? m.has_phase(PhaseTag::P2_Align)
                                                             : m.has_phase(PhaseTag::BaselineSinglePhase);
    if (!aligned) throw ValidationError("adapt_fewshot: model has not been aligned on labeled source pairs");
    if (!shots.empty()) {
        TrainScope s{true, false, false, false, scope == AdaptScope::CellEncoderAndHead};
        detail::train_pairs(m, shots, Objective{}, s, cfg, PhaseTag::P3_FewShot, log);
    }
    m.phase_history.push_back(PhaseTag::P3_FewShot);
    return m;
}

/// Split k shots across two classes in proportion to `counts` (largest
/// remainder), giving each class at least one shot when k >= 2.
inline std::array<std::size_t, 2> apportion_shots(std::size_t k, std::array<std::size_t, 2> counts) {
    const double n = static_cast<double>(counts[0] + counts[1]);
    std::array<std::size_t, 2> q{};
    std::array<double, 2> rem{};
    for (int c = 0; c < 2; ++c) {
        const double exact = static_cast<double>(k) * static_cast<double>(counts[c]) / n;
        q[c] = static_cast<std::size_t>(std::floor(exact));
        rem[c] = exact - static_cast<double>(q[c]);
    }
    while (q[0] + q[1] < k) {
        const int c = rem[1] > rem[0] ? 1 : 0;
        ++q[c];
        rem[c] = -1.0;
    }
    for (int c = 0; c < 2; ++c) {
        if (q[c] == 0 && k >= 2) {
            ++q[c];
            --q[1 - c];
        }
    }
    return q;
}

struct ShotDraw {
    std::vector<std::size_t> indices; // into the pool
    bool stratified = true;
};

/// Draw k pool indices for run `run`. Stratified whenever both classes can
/// be represented; otherwise an unstratified draw flagged in the result.
inline ShotDraw draw_shots(const std::vector<int>& pool_labels, std::size_t k, std::uint64_t seed_base,
                           std::size_t run) {
    if (k > pool_labels.size())
        throw ValidationError("draw_shots: " + std::to_string(k) + " shots requested but only " +
                              std::to_string(pool_labels.size()) + " pairs are available");
    Rng rng(derive_seed(seed_base, stream::fewshot, run, k));
    std::array<std::vector<std::size_t>, 2> by_class;
    for (std::size_t i = 0; i < pool_labels.size(); ++i) by_class[static_cast<std::size_t>(pool_labels[i])].push_back(i);
    ShotDraw d;
    const auto q = apportion_shots(k, {by_class[0].size(), by_class[1].size()});
    if (k >= 2 && !by_class[0].empty() && !by_class[1].empty() && q[0] <= by_class[0].size() &&
        q[1] <= by_class[1].size()) {
        for (int c = 0; c < 2; ++c) {
            auto idx = by_class[c];
            rng.shuffle(idx);
            d.indices.insert(d.indices.end(), idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(q[c]));
        }
    } else {
        auto idx = rng.permutation(pool_labels.size());
        d.indices.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
        d.stratified = k == 0;
    }
    std::sort(d.indices.begin(), d.indices.end());
    return d;
}

struct FewShotCell {
    std::size_t run = 0;
    std::size_t shots = 0;
    MetricReport report;
    bool stratified = true;
};

struct FewShotResult {
    std::vector<FewShotCell> cells; // ordered by (run, shots)
    SplitAssignment holdout;        // train_indices = shot pool, val_indices = evaluation set
    std::map<std::pair<std::size_t, std::size_t>, PredictionModel> models; // filled when requested
};

inline MetricReport evaluate_model(const PredictionModel& m, const PairDataset& ds) {
    const Vector p = predict(m, ds);
    const auto labels = ds.labels();
    return evaluate_scores({p.data(), static_cast<std::size_t>(p.size())}, labels);
}

/// Run `fn(i)` for i in [0, n) on up to `jobs` threads. Each index is handled
/// exactly once; callers write into disjoint, preallocated slots.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn&& fn) {
    jobs = std::max<std::size_t>(1, std::min(jobs, n));
    if (jobs == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::vector<std::thread> workers;
    for (std::size_t w = 0; w < jobs; ++w) {
        workers.emplace_back([&] {
            for (std::size_t i = next++; i < n; i = next++) {
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard lock(error_mutex);
                    if (!error) error = std::current_exception();
                }
            }
        });
    }
    for (auto& t : workers) t.join();
    if (error) std::rethrow_exception(error);
}

/// Few-shot grid: a fixed stratified holdout of the target pairs is the
/// evaluation set; for every (run, k) a fresh copy of `m` is adapted on k
/// pairs drawn from the rest and evaluated on the holdout. k = 0 is the
/// zero-shot evaluation of `m` itself.
inline FewShotResult phase3_fewshot(const PredictionModel& m, const PairDataset& target, const FewShotSpec& spec,
                                    const TrainConfig& cfg, std::size_t jobs = 1, bool keep_models = false) {
    spec.validate();
    cfg.validate();
    if (m.provenance == Provenance::Staged && !m.has_phase(PhaseTag::P2_Align))
        throw ValidationError("phase3_fewshot: staged model must complete alignment before few-shot adaptation");
    if (m.provenance == Provenance::SinglePhaseBaseline && !m.has_phase(PhaseTag::BaselineSinglePhase))
        throw ValidationError("phase3_fewshot: baseline model is untrained");

    FewShotResult result;
    result.holdout = stratified_split(target, spec.holdout_fraction, derive_seed(spec.seed_base, stream::split));
    const PairDataset eval_set = target.subset(result.holdout.val_indices);
    const PairDataset pool = target.subset(result.holdout.train_indices);
    const auto pool_labels = pool.labels();
    if (spec.shot_counts.back() > pool.size())
        throw ValidationError("phase3_fewshot: largest shot count " + std::to_string(spec.shot_counts.back()) +
                              " exceeds the " + std::to_string(pool.size()) + " pairs available for adaptation");

    const std::size_t nk = spec.shot_counts.size();
    result.cells.resize(spec.runs * nk);
    std::vector<std::optional<PredictionModel>> kept(keep_models ? spec.runs * nk : 0);
    parallel_for(spec.runs * nk, jobs, [&](std::size_t slot) {
        const std::size_t run = slot / nk;
        const std::size_t k = spec.shot_counts[slot % nk];
        const auto draw = draw_shots(pool_labels, k, spec.seed_base, run);
        TrainConfig run_cfg = cfg;
        run_cfg.seed = derive_seed(cfg.seed, stream::fewshot, run, k);
        PredictionModel adapted = adapt_fewshot(m, pool.subset(draw.indices), spec.adapt_scope, run_cfg);
        result.cells[slot] = {run, k, evaluate_model(adapted, eval_set), draw.stratified};
        if (keep_models) kept[slot] = std::move(adapted);
    });
    for (std::size_t s = 0; s < kept.size(); ++s) {
        result.models.emplace(std::make_pair(result.cells[s].run, result.cells[s].shots), std::move(*kept[s]));
    }
    return result;
}

} // namespace stardr
