// stardr: command-line driver for the staged drug-response pipeline.
//
//   stardr synth    -> synthetic source/target data
//   stardr pretrain -> phase 1 (unsupervised autoencoders)
//   stardr align    -> phase 2 (supervised alignment)
//   stardr baseline -> single-phase baseline
//   stardr adapt    -> phase 3 few-shot curve on the target data
//   stardr eval     -> cross-validation (pair, lco, ldo) or zero-shot transfer (cross)
//   stardr analyze  -> PCA / Mahalanobis shift and embedding compactness
//
// Exit codes: 0 success, 1 invalid input or configuration, 2 runtime failure.

#include "stardr/config.hpp"
#include "stardr/digest.hpp"
#include "stardr/latent.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace fs = std::filesystem;
using namespace stardr;

namespace {

const char* kPretrainCkpt = "pretrain.ckpt";
const char* kAlignedCkpt = "aligned.ckpt";
const char* kBaselineCkpt = "baseline.ckpt";

/// State of one command invocation: resolved config, files read and written.
class Run {
public:
    Run(std::string command, ExperimentConfig cfg)
        : command_(std::move(command)), cfg_(std::move(cfg)), t0_(std::chrono::steady_clock::now()) {
        out_ = cfg_.out_dir;
        std::error_code ec;
        fs::create_directories(out_, ec);
        if (ec) throw RuntimeFailure("cannot create output directory '" + out_.string() + "': " + ec.message());
        write("resolved_" + command_ + ".ini", cfg_.serialize());
    }

    const ExperimentConfig& cfg() const { return cfg_; }
    std::vector<std::string>& warnings() { return warnings_; }

    /// Resolve a data path: absolute paths as given, relative ones under data.dir
    /// (the output directory when unset).
    std::string data_path(const std::string& p) const {
        const fs::path base = cfg_.data.dir.empty() ? out_ : fs::path(cfg_.data.dir);
        return fs::path(p).is_absolute() ? p : (base / p).string();
    }

    std::string out_path(const std::string& name) const { return (out_ / name).string(); }

    /// Record an input file; missing inputs are a validation error.
    std::string input(const std::string& path) {
        if (!fs::exists(path)) throw ValidationError("required input '" + path + "' does not exist");
        if (std::find(inputs_.begin(), inputs_.end(), path) == inputs_.end()) inputs_.push_back(path);
        return path;
    }

    void write(const std::string& name, std::string_view body) {
        text::write_file(out_path(name), body);
        record(name);
    }

    /// List a file already written into the output directory.
    void record(const std::string& name) {
        if (std::find(outputs_.begin(), outputs_.end(), name) == outputs_.end()) outputs_.push_back(name);
    }

    void write_checkpoint(const std::string& name, const PredictionModel& m) { write(name, serialize_checkpoint(m)); }

    void finish() {
        nlohmann::ordered_json j;
        j["command"] = command_;
        j["seed"] = cfg_.seed;
        j["jobs"] = cfg_.jobs;
        j["wall_time_seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0_).count();
        j["replay"] = "stardr " + command_ + " --config " + out_path("resolved_" + command_ + ".ini");
        j["inputs"] = nlohmann::ordered_json::array();
        for (const auto& p : inputs_) j["inputs"].push_back({{"path", p}, {"sha256", sha256_file(p)}});
        j["outputs"] = nlohmann::ordered_json::array();
        for (const auto& n : outputs_) j["outputs"].push_back({{"path", n}, {"sha256", sha256_file(out_path(n))}});
        j["warnings"] = warnings_;
        text::write_file(out_path("manifest_" + command_ + ".json"), j.dump(2) + "\n");
        for (const auto& w : warnings_) std::cerr << "warning: " << w << "\n";
    }

private:
    std::string command_;
    ExperimentConfig cfg_;
    fs::path out_;
    std::chrono::steady_clock::time_point t0_;
    std::vector<std::string> inputs_, outputs_, warnings_;
};

struct SourceData {
    FeatureSchema schema;
    PairDataset pairs; // reindexed to the schema, unscaled
};

std::shared_ptr<const FeatureMatrix> load_matrix(Run& run, const std::string& path, ModalityKind kind,
                                                 const FeatureSchema* schema) {
    auto m = load_feature_matrix(run.input(path), kind);
    if (schema) m = reindex_to_schema(m, *schema, kind);
    return std::make_shared<const FeatureMatrix>(std::move(m));
}

void note_dropped(Run& run, const PairDataset& ds, const std::string& what) {
    if (ds.dropped())
        run.warnings().push_back(what + ": " + std::to_string(ds.dropped()) + " pairs reference unknown ids and were dropped");
    if (ds.empty()) throw ValidationError(what + ": no usable pairs");
}

SourceData load_source(Run& run) {
    const auto& d = run.cfg().data;
    SourceData s;
    if (d.schema.empty()) {
        const auto cells = load_feature_matrix(run.input(run.data_path(d.source_cells)), ModalityKind::Cell);
        const auto drugs = load_feature_matrix(run.input(run.data_path(d.source_drugs)), ModalityKind::Drug);
        s.schema = build_schema({&cells}, {&drugs}, "source");
    } else {
        s.schema = load_schema(run.input(run.data_path(d.schema)));
    }
    auto cells = load_matrix(run, run.data_path(d.source_cells), ModalityKind::Cell, &s.schema);
    auto drugs = load_matrix(run, run.data_path(d.source_drugs), ModalityKind::Drug, &s.schema);
    s.pairs = load_response_pairs(run.input(run.data_path(d.source_pairs)), cells, drugs, DatasetTag::SourceCellLine);
    note_dropped(run, s.pairs, "source pairs");
    return s;
}

/// Target pairs reindexed to the source schema and scaled with `scalers`, or
/// with scalers refit on the target matrices when adapt.refit_scalers is set.
PairDataset load_target(Run& run, const FeatureSchema& schema, const Scalers& scalers) {
    const auto& d = run.cfg().data;
    auto cells = load_matrix(run, run.data_path(d.target_cells), ModalityKind::Cell, &schema);
    auto drugs = load_matrix(run, run.data_path(d.target_drugs.empty() ? d.source_drugs : d.target_drugs),
                             ModalityKind::Drug, &schema);
    const auto ds = load_response_pairs(run.input(run.data_path(d.target_pairs)), cells, drugs, DatasetTag::Patient);
    note_dropped(run, ds, "target pairs");
    return apply_scalers(run.cfg().refit_scalers ? fit_scalers(ds) : scalers, ds);
}

std::string scalers_table(const Scalers& s, const FeatureSchema& schema) {
    text::Table t({"side", "feature", "min", "max"});
    for (std::size_t j = 0; j < s.cell.size(); ++j)
        t.row({"cell", schema.cell_features[j], text::format_double(s.cell.feature_min(static_cast<Index>(j))),
               text::format_double(s.cell.feature_max(static_cast<Index>(j)))});
    for (std::size_t j = 0; j < s.drug.size(); ++j)
        t.row({"drug", schema.drug_features[j], text::format_double(s.drug.feature_min(static_cast<Index>(j))),
               text::format_double(s.drug.feature_max(static_cast<Index>(j)))});
    return t.str();
}

std::string split_table(const SplitAssignment& split) {
    text::Table t({"pair_index", "role"});
    std::vector<std::pair<std::size_t, const char*>> rows;
    for (auto i : split.train_indices) rows.emplace_back(i, "train");
    for (auto i : split.val_indices) rows.emplace_back(i, "validation");
    std::sort(rows.begin(), rows.end());
    for (const auto& [i, role] : rows) t.row({std::to_string(i), role});
    return t.str();
}

std::string report_table(const std::vector<std::pair<std::string, MetricReport>>& rows, const char* first) {
    text::Table t({first, "roc_auc", "pr_auc", "balanced_accuracy", "n_pos", "n_neg"});
    for (const auto& [name, r] : rows)
        t.row({name, text::format_double(r.roc_auc), text::format_double(r.pr_auc),
               text::format_double(r.balanced_accuracy), std::to_string(r.n_pos), std::to_string(r.n_neg)});
    return t.str();
}

PredictionModel load_model(Run& run, const char* name, const FeatureSchema& schema) {
    return load_checkpoint(run.input(run.out_path(name)), &schema);
}

// ---------------------------------------------------------------------------

void cmd_synth(Run& run) {
    const auto data = generate(run.cfg().synth);
    for (const auto& f : save_synth(data, run.cfg().out_dir)) run.record(f);
    text::Table t({"domain", "n_pairs", "n_pos", "n_cells", "oracle_accuracy", "oracle_roc_auc"});
    for (auto [name, ds, dom] : {std::tuple{"source", &data.source, Domain::Source},
                                 std::tuple{"target", &data.target, Domain::Target}}) {
        std::vector<double> logits;
        for (const auto& p : ds->pairs()) logits.push_back(data.oracle.logit(p.cell_id, p.drug_id, dom));
        const auto labels = ds->labels();
        const bool both = ds->count_label(0) && ds->count_label(1);
        t.row({name, std::to_string(ds->size()), std::to_string(ds->count_label(1)),
               std::to_string(unique_rows(ds->cell_rows()).size()), text::format_double(data.oracle.accuracy(*ds, dom)),
               both ? text::format_double(roc_auc(logits, labels)) : "nan"});
    }
    run.write("synth_oracle.csv", t.str());
}

void cmd_pretrain(Run& run) {
    const auto src = load_source(run);
    const auto prep = prepare_source(src.pairs, run.cfg().val_fraction, run.cfg().seed);
    TrainLog log;
    auto m = pretrain_only(prep.fit, run.cfg().settings(), &log, &run.warnings());
    m.schema_hash = src.schema.hash();
    run.write("model_schema.txt", src.schema.serialize());
    run.write("scalers.csv", scalers_table(prep.scalers, src.schema));
    run.write("split.csv", split_table(prep.split));
    run.write_checkpoint(kPretrainCkpt, m);
    run.write("pretrain_log.csv", log.str());
}

void cmd_align(Run& run) {
    const auto src = load_source(run);
    const auto prep = prepare_source(src.pairs, run.cfg().val_fraction, run.cfg().seed);
    TrainLog log;
    auto m = phase2_align(load_model(run, kPretrainCkpt, src.schema), prep.fit.train_balanced, run.cfg().train,
                          run.cfg().align, &log);
    run.write_checkpoint(kAlignedCkpt, m);
    run.write("align_log.csv", log.str());
    run.write("validation_staged.csv", report_table({{"staged", evaluate_model(m, prep.validation)}}, "model"));
}

void cmd_baseline(Run& run) {
    const auto src = load_source(run);
    const auto prep = prepare_source(src.pairs, run.cfg().val_fraction, run.cfg().seed);
    TrainLog log;
    const auto& ds = prep.fit.train_balanced;
    auto m = baseline_train(ds.cell_matrix().cols(), ds.drug_matrix().cols(), ds, run.cfg().model, run.cfg().train,
                            run.cfg().baseline, &log);
    m.schema_hash = src.schema.hash();
    run.write_checkpoint(kBaselineCkpt, m);
    run.write("baseline_log.csv", log.str());
    run.write("validation_baseline.csv", report_table({{"baseline", evaluate_model(m, prep.validation)}}, "model"));
}

void cmd_adapt(Run& run) {
    const auto& cfg = run.cfg();
    const auto src = load_source(run);
    const auto prep = prepare_source(src.pairs, cfg.val_fraction, cfg.seed);
    const bool staged = cfg.adapt_model == ModelKind::Staged;
    const auto m = load_model(run, staged ? kAlignedCkpt : kBaselineCkpt, src.schema);
    const auto target = load_target(run, src.schema, prep.scalers);
    const auto result = phase3_fewshot(m, target, cfg.fewshot, cfg.adapt, cfg.jobs);
    for (const auto& c : result.cells) {
        if (!c.stratified)
            run.warnings().push_back("run " + std::to_string(c.run) + ", " + std::to_string(c.shots) +
                                     " shots: stratified draw impossible, sampled without stratification");
    }
    const auto curve = make_curve(result, cfg.fewshot.shot_counts);
    const std::string name = to_string(cfg.adapt_model);
    run.write("fewshot_runs_" + name + ".csv", curve.runs_table());
    run.write("fewshot_summary_" + name + ".csv", curve.summary_table());
    run.write("fewshot_curve_" + name + ".svg", curve.svg("Few-shot adaptation (" + name + ")"));
}

std::vector<ModelKind> eval_kinds(const ExperimentConfig& cfg) {
    if (cfg.eval_models == "staged") return {ModelKind::Staged};
    if (cfg.eval_models == "baseline") return {ModelKind::Baseline};
    return {ModelKind::Staged, ModelKind::Baseline};
}

void cmd_eval(Run& run) {
    const auto& cfg = run.cfg();
    const auto src = load_source(run);
    if (cfg.protocol == "cross") {
        const auto prep = prepare_source(src.pairs, cfg.val_fraction, cfg.seed);
        const auto target = load_target(run, src.schema, prep.scalers);
        std::vector<std::pair<std::string, MetricReport>> rows;
        for (auto kind : eval_kinds(cfg)) {
            const auto m = load_model(run, kind == ModelKind::Staged ? kAlignedCkpt : kBaselineCkpt, src.schema);
            rows.emplace_back(to_string(kind), evaluate_cross_dataset(m, target, &src.schema));
        }
        run.write("metrics_cross.csv", report_table(rows, "model"));
        return;
    }
    const auto protocol = protocol_from_string(cfg.protocol);
    const auto plan = make_split_plan(src.pairs, protocol, cfg.folds, cfg.seed);
    text::Table summary({"model", "protocol", "metric", "mean", "sd"});
    for (auto kind : eval_kinds(cfg)) {
        const auto r = cross_validate(make_builder(kind, cfg.settings()), src.pairs, plan, cfg.train, cfg.jobs);
        for (auto [metric, ms] : {std::pair{"roc_auc", r.roc_auc}, {"pr_auc", r.pr_auc},
                                  {"balanced_accuracy", r.balanced_accuracy}})
            summary.row({to_string(kind), cfg.protocol, metric, text::format_double(ms.mean), text::format_double(ms.sd)});
        run.write("metrics_" + cfg.protocol + "_" + to_string(kind) + ".csv", metrics_table(r));
    }
    run.write("summary_" + cfg.protocol + ".csv", summary.str());
}

void cmd_analyze(Run& run) {
    const auto& cfg = run.cfg();
    const auto src = load_source(run);
    const auto prep = prepare_source(src.pairs, cfg.val_fraction, cfg.seed);
    const auto target = load_target(run, src.schema, prep.scalers);
    const Matrix& a = prep.fit.train_balanced.cell_matrix().values;
    const Matrix& b = target.cell_matrix().values;
    Matrix both(a.rows() + b.rows(), a.cols());
    both << a, b;
    const auto pca = pca_fit(both, 2);
    const Matrix pa = pca_project(pca, a), pb = pca_project(pca, b);
    const auto maha = mahalanobis_centroid_distance(pa, pb);

    text::Table t({"group", "metric", "value"});
    t.row({"pca", "explained_variance_pc1", text::format_double(pca.explained_variance(0))});
    t.row({"pca", "explained_variance_pc2", text::format_double(pca.explained_variance(1))});
    t.row({"source|target", "mahalanobis_pca2", text::format_double(maha.distance)});
    t.row({"source|target", "ridge_applied", maha.ridge_applied ? "1" : "0"});

    const Matrix cells = gather_rows(a, prep.fit.pretrain_cells);
    const Matrix drugs = gather_rows(prep.fit.train_balanced.drug_matrix().values, prep.fit.pretrain_drugs);
    for (auto [group, file] : {std::pair{"staged_pretrain", kPretrainCkpt}, {"staged_aligned", kAlignedCkpt},
                               {"baseline", kBaselineCkpt}}) {
        if (!fs::exists(run.out_path(file))) continue;
        const auto m = load_model(run, file, src.schema);
        for (auto [side, z] : {std::pair{"cell", encode(m.cell_ae, cells)}, {"drug", encode(m.drug_ae, drugs)}}) {
            if (static_cast<std::size_t>(z.rows()) <= 10) {
                run.warnings().push_back(std::string(group) + "/" + side + ": too few entities for k=10 radii");
                continue;
            }
            const auto st = embedding_stats(z, 10);
            t.row({std::string(group) + "/" + side, "knn_radius_k10", text::format_double(st.mean_knn_radius)});
            t.row({std::string(group) + "/" + side, "knn_radius_cv", text::format_double(st.coefficient_of_variation)});
        }
    }
    run.write("analysis.csv", t.str());

    auto points = [](const Matrix& p) {
        std::vector<svg::Point> out;
        for (Index i = 0; i < p.rows(); ++i) out.push_back({p(i, 0), p(i, 1)});
        return out;
    };
    const RowVector ca = pa.colwise().mean(), cb = pb.colwise().mean();
    run.write("pca_cells.svg",
              svg::scatter("PCA of cell profiles",
                           {{"source", svg::palette(0), points(pa)}, {"target", svg::palette(1), points(pb)}},
                           {{{ca(0), ca(1)}, {cb(0), cb(1)}, "D = " + text::format_fixed(maha.distance, 3)}}));
}

// ---------------------------------------------------------------------------

struct Flags {
    std::string config;
    std::optional<std::string> out;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> jobs;
    std::optional<std::string> protocol;
    std::vector<std::string> sets;
};

ExperimentConfig resolve(const Flags& f) {
    ExperimentConfig cfg;
    if (const char* env = std::getenv("STARDR_OUT"); env && *env) cfg.out_dir = env;
    if (!f.config.empty()) cfg = load_config(f.config, cfg);
    for (const auto& s : f.sets) {
        const auto eq = s.find('=');
        if (eq == std::string::npos) throw ValidationError("--set expects section.key=value, got '" + s + "'");
        set_config_value(cfg, text::trim(std::string_view(s).substr(0, eq)), std::string_view(s).substr(eq + 1));
    }
    if (f.out) cfg.out_dir = *f.out;
    if (f.seed) cfg.seed = *f.seed;
    if (f.jobs) cfg.jobs = *f.jobs;
    if (f.protocol) cfg.protocol = *f.protocol;
    cfg.sync_seeds();
    cfg.validate();
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Staged transfer learning for drug-response prediction"};
    app.require_subcommand(1);
    Flags flags;
    using Handler = void (*)(Run&);
    const std::vector<std::tuple<const char*, const char*, Handler>> commands = {
        {"synth", "Generate synthetic source/target datasets", cmd_synth},
        {"pretrain", "Phase 1: pretrain cell and drug autoencoders on unlabeled rows", cmd_pretrain},
        {"align", "Phase 2: fine-tune encoders and head on labeled source pairs", cmd_align},
        {"baseline", "Train the single-phase baseline", cmd_baseline},
        {"adapt", "Phase 3: few-shot adaptation curve on the target pairs", cmd_adapt},
        {"eval", "Cross-validation (pair, lco, ldo) or zero-shot transfer (cross)", cmd_eval},
        {"analyze", "Domain-shift and embedding statistics", cmd_analyze},
    };
    Handler chosen = nullptr;
    std::string chosen_name;
    for (const auto& [name, help, fn] : commands) {
        auto* sub = app.add_subcommand(name, help);
        sub->add_option("-c,--config", flags.config, "Config file (key = value with [section] headers)");
        sub->add_option("-o,--out", flags.out, "Output directory (overrides run.out_dir and STARDR_OUT)");
        sub->add_option("--seed", flags.seed, "Master seed (overrides run.seed)");
        sub->add_option("-j,--jobs", flags.jobs, "Worker threads for fold and few-shot grids");
        sub->add_option("--set", flags.sets, "Override any key: section.key=value (repeatable)");
        if (std::string(name) == "eval")
            sub->add_option("--protocol", flags.protocol, "pair, lco, ldo or cross (overrides eval.protocol)");
        sub->callback([&chosen, &chosen_name, fn = fn, name = name] {
            chosen = fn;
            chosen_name = name;
        });
    }
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }
    try {
        Run run(chosen_name, resolve(flags));
        chosen(run);
        run.finish();
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
