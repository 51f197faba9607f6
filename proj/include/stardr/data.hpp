#pragma once

// Feature matrices, response pairs and the feature schema used to align
// datasets with different column sets.

#include "stardr/digest.hpp"
#include "stardr/text.hpp"

#include <memory>
#include <unordered_map>
#include <unordered_set>

namespace stardr {

enum class ModalityKind { Cell, Drug };

inline const char* to_string(ModalityKind k) { return k == ModalityKind::Cell ? "cell" : "drug"; }

/// Columns with these prefixes hold binary indicators.
inline bool is_binary_feature(std::string_view id) {
    return id.rfind("mut:", 0) == 0 || id.rfind("fp:", 0) == 0;
}

/// Entity-by-feature matrix with ordered, unique identifiers on both axes.
struct FeatureMatrix {
    std::vector<std::string> entity_ids;
    std::vector<std::string> feature_ids;
    Matrix values;
    ModalityKind kind = ModalityKind::Cell;

    FeatureMatrix() = default;
    FeatureMatrix(std::vector<std::string> entities, std::vector<std::string> features, Matrix vals, ModalityKind k)
        : entity_ids(std::move(entities)), feature_ids(std::move(features)), values(std::move(vals)), kind(k) {
        validate();
    }

    std::size_t rows() const { return entity_ids.size(); }
    std::size_t cols() const { return feature_ids.size(); }

    /// Row index of an entity, or -1.
    std::ptrdiff_t find(const std::string& id) const {
        const auto it = index_.find(id);
        return it == index_.end() ? -1 : static_cast<std::ptrdiff_t>(it->second);
    }

    void validate() {
        if (values.rows() != static_cast<Index>(entity_ids.size()) ||
            values.cols() != static_cast<Index>(feature_ids.size())) {
            throw ValidationError("FeatureMatrix: values are " + shape_str(values) + " but ids are " +
                                  std::to_string(entity_ids.size()) + "x" + std::to_string(feature_ids.size()));
        }
        index_.clear();
        for (std::size_t i = 0; i < entity_ids.size(); ++i) {
            if (!index_.emplace(entity_ids[i], i).second)
                throw ValidationError("FeatureMatrix: duplicate entity id '" + entity_ids[i] + "'");
        }
        std::unordered_set<std::string> seen;
        for (const auto& f : feature_ids) {
            if (!seen.insert(f).second) throw ValidationError("FeatureMatrix: duplicate feature id '" + f + "'");
        }
        if (!values.allFinite()) throw ValidationError("FeatureMatrix: non-finite value");
        for (std::size_t j = 0; j < feature_ids.size(); ++j) {
            if (!is_binary_feature(feature_ids[j])) continue;
            for (Index i = 0; i < values.rows(); ++i) {
                const double v = values(i, static_cast<Index>(j));
                if (v != 0.0 && v != 1.0) {
                    throw ValidationError("FeatureMatrix: binary column '" + feature_ids[j] + "' has value " +
                                          text::format_double(v) + " for '" + entity_ids[i] + "'");
                }
            }
        }
    }

    bool operator==(const FeatureMatrix& o) const {
        return kind == o.kind && entity_ids == o.entity_ids && feature_ids == o.feature_ids &&
               values.rows() == o.values.rows() && values.cols() == o.values.cols() && values == o.values;
    }

private:
    std::unordered_map<std::string, std::size_t> index_;
};

/// Parse a delimiter-separated matrix: header row of feature ids (its first
/// cell names the id column), then one entity per row. Empty cells become 0.
inline FeatureMatrix load_feature_matrix(const std::string& path, ModalityKind kind) {
    const auto lines = text::read_lines(path);
    if (lines.empty()) throw ValidationError(path + ": empty feature file");
    const char delim = text::detect_delimiter(lines.front());
    auto header = text::split(lines.front(), delim);
    if (header.size() < 2) throw ValidationError(path + ": header needs an id column and at least one feature");
    std::vector<std::string> features(header.begin() + 1, header.end());

    std::vector<std::string> entities;
    std::vector<double> cells;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (text::trim(lines[ln]).empty()) continue;
        auto fields = text::split(lines[ln], delim);
        if (fields.size() != header.size()) {
            throw ValidationError(path + ":" + std::to_string(ln + 1) + ": ragged row (" +
                                  std::to_string(fields.size()) + " fields, expected " +
                                  std::to_string(header.size()) + ")");
        }
        entities.push_back(fields[0]);
        for (std::size_t j = 1; j < fields.size(); ++j) {
            if (fields[j].empty()) {
                cells.push_back(0.0);
                continue;
            }
            const auto v = text::parse_double(fields[j]);
            if (!v || !std::isfinite(*v)) {
                throw ValidationError(path + ":" + std::to_string(ln + 1) + ": non-numeric cell '" + fields[j] +
                                      "' in column '" + features[j - 1] + "'");
            }
            cells.push_back(*v);
        }
    }
    Matrix values = Eigen::Map<Matrix>(cells.data(), static_cast<Index>(entities.size()),
                                       static_cast<Index>(features.size()));
    try {
        return FeatureMatrix(std::move(entities), std::move(features), std::move(values), kind);
    } catch (const ValidationError& e) {
        throw ValidationError(path + ": " + e.what());
    }
}

inline std::string serialize_feature_matrix(const FeatureMatrix& m) {
    std::string out = "id";
    for (const auto& f : m.feature_ids) out += "," + f;
    out.push_back('\n');
    for (std::size_t i = 0; i < m.rows(); ++i) {
        out += m.entity_ids[i];
        for (std::size_t j = 0; j < m.cols(); ++j) {
            out.push_back(',');
            out += text::format_double(m.values(static_cast<Index>(i), static_cast<Index>(j)));
        }
        out.push_back('\n');
    }
    return out;
}

inline void save_feature_matrix(const FeatureMatrix& m, const std::string& path) {
    text::write_file(path, serialize_feature_matrix(m));
}

// ---------------------------------------------------------------------------
// Feature schema
// ---------------------------------------------------------------------------

struct FeatureSchema {
    std::vector<std::string> cell_features;
    std::vector<std::string> drug_features;
    std::string source_tag;
    int version = 1;

    const std::vector<std::string>& side(ModalityKind k) const {
        return k == ModalityKind::Cell ? cell_features : drug_features;
    }

    std::string serialize() const {
        std::string out = "stardr-schema\nversion = " + std::to_string(version) + "\nsource_tag = " + source_tag +
                          "\n[cell]\n";
        for (const auto& f : cell_features) out += f + "\n";
        out += "[drug]\n";
        for (const auto& f : drug_features) out += f + "\n";
        return out;
    }

    std::string hash() const { return sha256_hex(serialize()); }

    void validate() const {
        for (const auto* list : {&cell_features, &drug_features}) {
            if (list->empty()) throw ValidationError("FeatureSchema: empty feature list");
            std::unordered_set<std::string> seen;
            for (const auto& f : *list) {
                if (f.empty() || f.front() == '[' || f.find('\n') != std::string::npos)
                    throw ValidationError("FeatureSchema: invalid feature id '" + f + "'");
                if (!seen.insert(f).second) throw ValidationError("FeatureSchema: duplicate feature '" + f + "'");
            }
        }
        if (source_tag.find('\n') != std::string::npos) throw ValidationError("FeatureSchema: invalid source tag");
    }

    bool operator==(const FeatureSchema&) const = default;
};

inline FeatureSchema parse_schema(std::string_view body) {
    FeatureSchema s;
    std::vector<std::string>* section = nullptr;
    bool seen_magic = false;
    std::size_t start = 0;
    while (start < body.size()) {
        auto end = body.find('\n', start);
        if (end == std::string_view::npos) end = body.size();
        std::string_view line = body.substr(start, end - start);
        start = end + 1;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        if (!seen_magic) {
            if (line != "stardr-schema") throw ValidationError("schema: missing 'stardr-schema' header");
            seen_magic = true;
        } else if (line == "[cell]") {
            section = &s.cell_features;
        } else if (line == "[drug]") {
            section = &s.drug_features;
        } else if (section) {
            section->emplace_back(line);
        } else if (line.rfind("version = ", 0) == 0) {
            const auto v = text::parse_int<int>(line.substr(10));
            if (!v) throw ValidationError("schema: bad version line");
            s.version = *v;
        } else if (line.rfind("source_tag = ", 0) == 0) {
            s.source_tag = std::string(line.substr(13));
        } else {
            throw ValidationError("schema: unexpected line '" + std::string(line) + "'");
        }
    }
    if (!seen_magic) throw ValidationError("schema: empty file");
    s.validate();
    return s;
}

inline void save_schema(const FeatureSchema& s, const std::string& path) { text::write_file(path, s.serialize()); }
inline FeatureSchema load_schema(const std::string& path) { return parse_schema(read_file_bytes(path)); }

/// Union of feature ids across the source matrices of each side, in
/// first-seen order.
inline FeatureSchema build_schema(const std::vector<const FeatureMatrix*>& cell_matrices,
                                  const std::vector<const FeatureMatrix*>& drug_matrices,
                                  std::string source_tag = "source") {
    if (cell_matrices.empty() || drug_matrices.empty())
        throw ValidationError("build_schema: need at least one cell and one drug matrix");
    auto merge = [](const std::vector<const FeatureMatrix*>& ms) {
        std::vector<std::string> out;
        std::unordered_set<std::string> seen;
        for (const auto* m : ms) {
            for (const auto& f : m->feature_ids) {
                if (seen.insert(f).second) out.push_back(f);
            }
        }
        return out;
    };
    FeatureSchema s{merge(cell_matrices), merge(drug_matrices), std::move(source_tag), 1};
    if (s.cell_features.empty() || s.drug_features.empty()) throw ValidationError("build_schema: empty feature list");
    s.validate();
    return s;
}

/// Columns reordered to the schema; schema features missing from the input are
/// zero columns, extra input columns are dropped. Rows are unchanged.
inline FeatureMatrix reindex_to_schema(const FeatureMatrix& m, const FeatureSchema& schema, ModalityKind side) {
    const auto& target = schema.side(side);
    std::unordered_map<std::string, Index> col;
    for (std::size_t j = 0; j < m.feature_ids.size(); ++j) col.emplace(m.feature_ids[j], static_cast<Index>(j));
    Matrix values = Matrix::Zero(m.values.rows(), static_cast<Index>(target.size()));
    for (std::size_t j = 0; j < target.size(); ++j) {
        const auto it = col.find(target[j]);
        if (it != col.end()) values.col(static_cast<Index>(j)) = m.values.col(it->second);
    }
    return FeatureMatrix(m.entity_ids, target, std::move(values), side);
}

// ---------------------------------------------------------------------------
// Response pairs
// ---------------------------------------------------------------------------

struct ResponsePair {
    std::string cell_id;
    std::string drug_id;
    int label = 0; // 0 = resistant, 1 = sensitive

    bool operator==(const ResponsePair&) const = default;
};

enum class DatasetTag { SourceCellLine, CrossDatasetCellLine, Patient, Synthetic };

inline const char* to_string(DatasetTag t) {
    switch (t) {
    case DatasetTag::SourceCellLine: return "source";
    case DatasetTag::CrossDatasetCellLine: return "cross";
    case DatasetTag::Patient: return "patient";
    case DatasetTag::Synthetic: return "synthetic";
    }
    return "?";
}

/// Labeled (cell, drug) pairs with shared, read-only feature matrices. Pair
/// ids are resolved to matrix rows once, at construction.
class PairDataset {
public:
    PairDataset() = default;

    /// Pairs whose ids are missing from either matrix are dropped; the count is
    /// available from `dropped()`.
    PairDataset(std::vector<ResponsePair> pairs, std::shared_ptr<const FeatureMatrix> cells,
                std::shared_ptr<const FeatureMatrix> drugs, DatasetTag tag)
        : cells_(std::move(cells)), drugs_(std::move(drugs)), tag_(tag) {
        if (!cells_ || !drugs_) throw ValidationError("PairDataset: missing feature matrix");
        for (auto& p : pairs) {
            if (p.label != 0 && p.label != 1)
                throw ValidationError("PairDataset: label " + std::to_string(p.label) + " is not 0 or 1");
            const auto c = cells_->find(p.cell_id);
            const auto d = drugs_->find(p.drug_id);
            if (c < 0 || d < 0) {
                ++dropped_;
                continue;
            }
            cell_rows_.push_back(static_cast<std::size_t>(c));
            drug_rows_.push_back(static_cast<std::size_t>(d));
            pairs_.push_back(std::move(p));
        }
    }

    std::size_t size() const { return pairs_.size(); }
    bool empty() const { return pairs_.empty(); }
    std::size_t dropped() const { return dropped_; }
    DatasetTag tag() const { return tag_; }

    const std::vector<ResponsePair>& pairs() const { return pairs_; }
    const ResponsePair& operator[](std::size_t i) const { return pairs_[i]; }
    const FeatureMatrix& cell_matrix() const { return *cells_; }
    const FeatureMatrix& drug_matrix() const { return *drugs_; }
    std::shared_ptr<const FeatureMatrix> cell_matrix_ptr() const { return cells_; }
    std::shared_ptr<const FeatureMatrix> drug_matrix_ptr() const { return drugs_; }
    const std::vector<std::size_t>& cell_rows() const { return cell_rows_; }
    const std::vector<std::size_t>& drug_rows() const { return drug_rows_; }

    std::size_t count_label(int label) const {
        std::size_t n = 0;
        for (const auto& p : pairs_) n += p.label == label ? 1 : 0;
        return n;
    }

    std::vector<int> labels() const {
        std::vector<int> out;
        out.reserve(pairs_.size());
        for (const auto& p : pairs_) out.push_back(p.label);
        return out;
    }

    PairDataset subset(const std::vector<std::size_t>& idx) const {
        PairDataset out;
        out.cells_ = cells_;
        out.drugs_ = drugs_;
        out.tag_ = tag_;
        for (auto i : idx) {
            if (i >= pairs_.size()) throw ValidationError("PairDataset::subset: index out of range");
            out.pairs_.push_back(pairs_[i]);
            out.cell_rows_.push_back(cell_rows_[i]);
            out.drug_rows_.push_back(drug_rows_[i]);
        }
        return out;
    }

    /// Same pairs, different feature matrices (e.g. after scaling). The new
    /// matrices must contain every referenced id.
    PairDataset with_matrices(std::shared_ptr<const FeatureMatrix> cells,
                              std::shared_ptr<const FeatureMatrix> drugs) const {
        PairDataset out(pairs_, std::move(cells), std::move(drugs), tag_);
        if (out.size() != size()) throw ValidationError("PairDataset::with_matrices: ids lost in new matrices");
        return out;
    }

private:
    std::vector<ResponsePair> pairs_;
    std::vector<std::size_t> cell_rows_;
    std::vector<std::size_t> drug_rows_;
    std::shared_ptr<const FeatureMatrix> cells_;
    std::shared_ptr<const FeatureMatrix> drugs_;
    DatasetTag tag_ = DatasetTag::SourceCellLine;
    std::size_t dropped_ = 0;
};

/// Parse a `cell_id,drug_id,label` table (comma or tab separated) and link it
/// to the given matrices. Rows referencing unknown ids are dropped and counted.
inline PairDataset load_response_pairs(const std::string& path, std::shared_ptr<const FeatureMatrix> cells,
                                       std::shared_ptr<const FeatureMatrix> drugs,
                                       DatasetTag tag = DatasetTag::SourceCellLine) {
    const auto lines = text::read_lines(path);
    if (lines.empty()) throw ValidationError(path + ": empty response file");
    const char delim = text::detect_delimiter(lines.front());
    const auto header = text::split(lines.front(), delim);
    if (header != std::vector<std::string>{"cell_id", "drug_id", "label"})
        throw ValidationError(path + ": header must be cell_id,drug_id,label");
    std::vector<ResponsePair> pairs;
    for (std::size_t ln = 1; ln < lines.size(); ++ln) {
        if (text::trim(lines[ln]).empty()) continue;
        const auto f = text::split(lines[ln], delim);
        if (f.size() != 3 || f[0].empty() || f[1].empty())
            throw ValidationError(path + ":" + std::to_string(ln + 1) + ": malformed row");
        const auto label = text::parse_int<int>(f[2]);
        if (!label || (*label != 0 && *label != 1))
            throw ValidationError(path + ":" + std::to_string(ln + 1) + ": label '" + f[2] + "' is not 0 or 1");
        pairs.push_back({f[0], f[1], *label});
    }
    return PairDataset(std::move(pairs), std::move(cells), std::move(drugs), tag);
}

inline std::string serialize_response_pairs(const PairDataset& ds) {
    std::string out = "cell_id,drug_id,label\n";
    for (const auto& p : ds.pairs()) out += p.cell_id + "," + p.drug_id + "," + std::to_string(p.label) + "\n";
    return out;
}

inline void save_response_pairs(const PairDataset& ds, const std::string& path) {
    text::write_file(path, serialize_response_pairs(ds));
}

} // namespace stardr
