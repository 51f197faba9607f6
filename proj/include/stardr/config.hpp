#pragma once

// Experiment configuration: `[section]` headers and `key = value` lines.
// Unknown sections or keys are errors. `serialize` writes every key with its
// effective value, so a parsed echo reproduces the configuration exactly.

#include "stardr/eval.hpp"
#include "stardr/synthgen.hpp"

#include <functional>
#include <set>

namespace stardr {

/// Input files. Relative paths resolve against `dir`, which defaults to the
/// output directory (where `synth` writes its files).
struct DataPaths {
    std::string dir;
    std::string source_cells = SynthFiles::source_cells;
    std::string source_drugs = SynthFiles::drugs;
    std::string source_pairs = SynthFiles::source_pairs;
    std::string target_cells = SynthFiles::target_cells;
    std::string target_drugs;  // empty: same file as source_drugs
    std::string target_pairs = SynthFiles::target_pairs;
    std::string schema;        // empty: built from the source matrices

    bool operator==(const DataPaths&) const = default;
};

struct ExperimentConfig {
    // [run]
    std::uint64_t seed = 42;
    std::string out_dir = "stardr_out";
    std::size_t jobs = 1;
    // [data]
    DataPaths data;
    // [model]
    ModelConfig model;
    // [train]
    TrainConfig train;
    double val_fraction = 0.1;
    // [align]
    AlignOptions align;
    // [baseline]
    BaselineOptions baseline;
    // [adapt]
    TrainConfig adapt = default_adapt_config();
    FewShotSpec fewshot;
    ModelKind adapt_model = ModelKind::Staged;
    bool refit_scalers = false;
    // [eval]
    std::string protocol = "pair"; // pair, lco, ldo or cross
    std::size_t folds = 5;
    std::string eval_models = "both"; // staged, baseline or both
    // [synth]
    ShiftConfig synth;

    /// Propagate the single seed to every stage that draws random numbers.
    void sync_seeds() {
        train.seed = seed;
        adapt.seed = seed;
        fewshot.seed_base = seed;
        synth.seed = seed;
    }

    TrainSettings settings() const { return {model, train, align, baseline}; }

    void validate() const {
        if (jobs < 1) throw ValidationError("run.jobs must be >= 1");
        if (out_dir.empty()) throw ValidationError("run.out_dir must not be empty");
        train.validate();
        adapt.validate();
        fewshot.validate();
        synth.validate();
        if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ValidationError("train.val_fraction must be in (0, 1)");
        if (model.cell_latent < 1 || model.drug_latent < 1 || model.head_hidden < 1)
            throw ValidationError("model sizes must be >= 1");
        if (protocol != "cross") protocol_from_string(protocol);
        if (folds < 2) throw ValidationError("eval.folds must be >= 2");
        if (eval_models != "staged" && eval_models != "baseline" && eval_models != "both")
            throw ValidationError("eval.models must be staged, baseline or both");
        if (align.recon_weight < 0.0) throw ValidationError("align.recon_weight must be >= 0");
        if (baseline.bce_weight < 0.0 || baseline.cell_recon_weight < 0.0 || baseline.drug_recon_weight < 0.0)
            throw ValidationError("baseline weights must be >= 0");
    }

    bool operator==(const ExperimentConfig& o) const { return serialize() == o.serialize(); }

    std::string serialize() const;
};

namespace detail {

struct ConfigField {
    std::string section;
    std::string key;
    std::function<std::string()> get;
    std::function<void(std::string_view)> set;
};

inline std::string bad_value(const std::string& key, std::string_view v, const char* what) {
    return key + ": '" + std::string(v) + "' is not " + what;
}

inline double to_double(const std::string& key, std::string_view v) {
    auto d = text::parse_double(v);
    if (!d || !std::isfinite(*d)) throw ValidationError(bad_value(key, v, "a finite number"));
    return *d;
}

template <typename Int>
Int to_int(const std::string& key, std::string_view v) {
    auto i = text::parse_int<Int>(v);
    if (!i) throw ValidationError(bad_value(key, v, "a non-negative integer"));
    return *i;
}

inline bool to_bool(const std::string& key, std::string_view v) {
    if (v == "true") return true;
    if (v == "false") return false;
    throw ValidationError(bad_value(key, v, "true or false"));
}

inline std::vector<std::size_t> to_size_list(const std::string& key, std::string_view v) {
    std::vector<std::size_t> out;
    if (text::trim(v).empty()) return out;
    for (const auto& part : text::split(v, ',')) out.push_back(to_int<std::size_t>(key, part));
    return out;
}

inline std::string join(const std::vector<std::size_t>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
}

inline std::vector<ConfigField> config_fields(ExperimentConfig& c) {
    std::vector<ConfigField> f;
    auto str = [&f](const char* sec, const char* key, std::string& ref) {
        f.push_back({sec, key, [&ref] { return ref; }, [&ref](std::string_view v) { ref = std::string(v); }});
    };
    auto num = [&f](const char* sec, const char* key, double& ref) {
        const std::string name = std::string(sec) + "." + key;
        f.push_back({sec, key, [&ref] { return text::format_double(ref); },
                     [&ref, name](std::string_view v) { ref = to_double(name, v); }});
    };
    auto count = [&f](const char* sec, const char* key, std::size_t& ref) {
        const std::string name = std::string(sec) + "." + key;
        f.push_back({sec, key, [&ref] { return std::to_string(ref); },
                     [&ref, name](std::string_view v) { ref = to_int<std::size_t>(name, v); }});
    };
    auto list = [&f](const char* sec, const char* key, std::vector<std::size_t>& ref) {
        const std::string name = std::string(sec) + "." + key;
        f.push_back({sec, key, [&ref] { return join(ref); },
                     [&ref, name](std::string_view v) { ref = to_size_list(name, v); }});
    };
    auto flag = [&f](const char* sec, const char* key, bool& ref) {
        const std::string name = std::string(sec) + "." + key;
        f.push_back({sec, key, [&ref] { return std::string(ref ? "true" : "false"); },
                     [&ref, name](std::string_view v) { ref = to_bool(name, v); }});
    };
    auto optim = [&](const char* sec, TrainConfig& t) {
        num(sec, "learning_rate", t.learning_rate);
        num(sec, "weight_decay", t.weight_decay);
        count(sec, "batch_size", t.batch_size);
        count(sec, "epochs", t.epochs);
    };

    f.push_back({"run", "seed", [&c] { return std::to_string(c.seed); },
                 [&c](std::string_view v) { c.seed = to_int<std::uint64_t>("run.seed", v); }});
    str("run", "out_dir", c.out_dir);
    count("run", "jobs", c.jobs);

    str("data", "dir", c.data.dir);
    str("data", "source_cells", c.data.source_cells);
    str("data", "source_drugs", c.data.source_drugs);
    str("data", "source_pairs", c.data.source_pairs);
    str("data", "target_cells", c.data.target_cells);
    str("data", "target_drugs", c.data.target_drugs);
    str("data", "target_pairs", c.data.target_pairs);
    str("data", "schema", c.data.schema);

    count("model", "cell_latent", c.model.cell_latent);
    count("model", "drug_latent", c.model.drug_latent);
    count("model", "head_hidden", c.model.head_hidden);
    list("model", "encoder_hidden", c.model.encoder_hidden);

    optim("train", c.train);
    num("train", "val_fraction", c.val_fraction);

    num("align", "recon_weight", c.align.recon_weight);

    num("baseline", "cell_recon_weight", c.baseline.cell_recon_weight);
    num("baseline", "drug_recon_weight", c.baseline.drug_recon_weight);
    num("baseline", "bce_weight", c.baseline.bce_weight);

    optim("adapt", c.adapt);
    list("adapt", "shot_counts", c.fewshot.shot_counts);
    count("adapt", "runs", c.fewshot.runs);
    num("adapt", "holdout_fraction", c.fewshot.holdout_fraction);
    f.push_back({"adapt", "scope", [&c] { return std::string(to_string(c.fewshot.adapt_scope)); },
                 [&c](std::string_view v) { c.fewshot.adapt_scope = adapt_scope_from_string(v); }});
    f.push_back({"adapt", "model", [&c] { return std::string(to_string(c.adapt_model)); },
                 [&c](std::string_view v) {
                     if (v == "staged") c.adapt_model = ModelKind::Staged;
                     else if (v == "baseline") c.adapt_model = ModelKind::Baseline;
                     else throw ValidationError(bad_value("adapt.model", v, "staged or baseline"));
                 }});
    flag("adapt", "refit_scalers", c.refit_scalers);

    str("eval", "protocol", c.protocol);
    count("eval", "folds", c.folds);
    str("eval", "models", c.eval_models);

    count("synth", "n_cells_source", c.synth.n_cells_source);
    count("synth", "n_cells_target", c.synth.n_cells_target);
    count("synth", "n_drugs", c.synth.n_drugs);
    count("synth", "latent_dim_true", c.synth.latent_dim_true);
    count("synth", "feature_dim_cell", c.synth.feature_dim_cell);
    count("synth", "feature_dim_drug", c.synth.feature_dim_drug);
    num("synth", "shift_delta", c.synth.shift_delta);
    num("synth", "label_shift", c.synth.label_shift);
    num("synth", "concept_shift", c.synth.concept_shift);
    num("synth", "noise_sigma", c.synth.noise_sigma);
    num("synth", "drug_effect_ratio", c.synth.drug_effect_ratio);
    num("synth", "label_bias", c.synth.label_bias);
    num("synth", "source_density", c.synth.source_density);
    num("synth", "target_density", c.synth.target_density);
    return f;
}

} // namespace detail

inline std::string ExperimentConfig::serialize() const {
    auto copy = *this;
    std::string out, section;
    for (const auto& field : detail::config_fields(copy)) {
        if (field.section != section) {
            out += (section.empty() ? "" : "\n") + ("[" + field.section + "]\n");
            section = field.section;
        }
        out += field.key + " = " + field.get() + "\n";
    }
    return out;
}

/// Apply one `section.key = value` assignment.
inline void set_config_value(ExperimentConfig& c, std::string_view dotted, std::string_view value) {
    const auto dot = dotted.find('.');
    if (dot == std::string_view::npos) throw ValidationError("expected section.key, got '" + std::string(dotted) + "'");
    const auto sec = dotted.substr(0, dot), key = dotted.substr(dot + 1);
    bool known_section = false;
    for (auto& field : detail::config_fields(c)) {
        if (field.section != sec) continue;
        known_section = true;
        if (field.key == key) {
            field.set(text::trim(value));
            return;
        }
    }
    throw ValidationError(std::string(known_section ? "unknown key '" : "unknown section in '") + std::string(dotted) +
                          "'");
}

/// Overlay `text` onto `base`. Blank lines and lines starting with '#' or ';'
/// are ignored; a key may appear once per document.
inline ExperimentConfig parse_config(std::string_view body, ExperimentConfig base = {}) {
    if (body.rfind("\xEF\xBB\xBF", 0) == 0) body.remove_prefix(3);
    std::string section;
    std::set<std::string> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos <= body.size()) {
        const auto nl = body.find('\n', pos);
        const auto raw = body.substr(pos, nl == std::string_view::npos ? std::string_view::npos : nl - pos);
        pos = nl == std::string_view::npos ? body.size() + 1 : nl + 1;
        ++line_no;
        const auto line = text::trim(raw);
        if (line.empty() || line.front() == '#' || line.front() == ';') continue;
        const std::string where = "config line " + std::to_string(line_no) + ": ";
        if (line.front() == '[') {
            if (line.back() != ']') throw ValidationError(where + "malformed section header");
            section = std::string(text::trim(line.substr(1, line.size() - 2)));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ValidationError(where + "expected key = value");
        if (section.empty()) throw ValidationError(where + "key outside of any [section]");
        const std::string dotted = section + "." + std::string(text::trim(line.substr(0, eq)));
        if (!seen.insert(dotted).second) throw ValidationError(where + "duplicate key '" + dotted + "'");
        try {
            set_config_value(base, dotted, line.substr(eq + 1));
        } catch (const ValidationError& e) {
            throw ValidationError(where + e.what());
        }
    }
    return base;
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig base = {}) {
    return parse_config(read_file_bytes(path), std::move(base));
}

} // namespace stardr
