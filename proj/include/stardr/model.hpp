#pragma once

// Cell and drug autoencoders, the prediction head over their concatenated
// latents, and the binary checkpoint format.

#include "stardr/data.hpp"
#include "stardr/nn.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <optional>

namespace stardr {

enum class PhaseTag : std::uint8_t { P1_Pretrain = 1, P2_Align = 2, P3_FewShot = 3, BaselineSinglePhase = 4 };
enum class Provenance : std::uint8_t { Staged = 1, SinglePhaseBaseline = 2 };

inline const char* to_string(PhaseTag p) {
    switch (p) {
    case PhaseTag::P1_Pretrain: return "pretrain";
    case PhaseTag::P2_Align: return "align";
    case PhaseTag::P3_FewShot: return "fewshot";
    case PhaseTag::BaselineSinglePhase: return "baseline";
    }
    return "?";
}

inline const char* to_string(Provenance p) { return p == Provenance::Staged ? "staged" : "baseline"; }

/// Architecture knobs. Latent sizes and head width default to the published
/// configuration; `encoder_hidden` adds ReLU layers before the latent layer
/// (mirrored in the decoder) for depth ablations.
struct ModelConfig {
    std::size_t cell_latent = 700;
    std::size_t drug_latent = 50;
    std::size_t head_hidden = 128;
    std::vector<std::size_t> encoder_hidden;
};

struct Autoencoder {
    Mlp encoder; // ends in a ReLU latent layer
    Mlp decoder; // ends in an identity reconstruction layer

    Index input_dim() const { return encoder.in_dim(); }
    Index latent_dim() const { return encoder.out_dim(); }
    std::size_t parameter_count() const { return encoder.parameter_count() + decoder.parameter_count(); }

    void check() const {
        if (encoder.layers.empty() || decoder.layers.empty()) throw ValidationError("Autoencoder: empty encoder/decoder");
        auto chain = [](const Mlp& m) {
            for (std::size_t i = 1; i < m.layers.size(); ++i) {
                if (m.layers[i].in_dim() != m.layers[i - 1].out_dim())
                    throw ValidationError("Autoencoder: broken layer chain");
            }
        };
        chain(encoder);
        chain(decoder);
        if (decoder.in_dim() != latent_dim() || decoder.out_dim() != input_dim())
            throw ValidationError("Autoencoder: decoder does not mirror encoder dimensions");
    }

    bool operator==(const Autoencoder&) const = default;
};

inline Autoencoder make_autoencoder(std::size_t input_dim, std::size_t latent_dim,
                                    const std::vector<std::size_t>& hidden, Rng& rng) {
    Autoencoder ae;
    std::size_t prev = input_dim;
    for (auto w : hidden) {
        ae.encoder.layers.emplace_back(static_cast<Index>(prev), static_cast<Index>(w), Activation::ReLU);
        prev = w;
    }
    ae.encoder.layers.emplace_back(static_cast<Index>(prev), static_cast<Index>(latent_dim), Activation::ReLU);
    prev = latent_dim;
    for (auto it = hidden.rbegin(); it != hidden.rend(); ++it) {
        ae.decoder.layers.emplace_back(static_cast<Index>(prev), static_cast<Index>(*it), Activation::ReLU);
        prev = *it;
    }
    ae.decoder.layers.emplace_back(static_cast<Index>(prev), static_cast<Index>(input_dim), Activation::Identity);
    for (auto& l : ae.encoder.layers) init_layer(l, rng);
    for (auto& l : ae.decoder.layers) init_layer(l, rng);
    return ae;
}

inline Matrix encode(const Autoencoder& ae, const Matrix& x) {
    if (x.cols() != ae.input_dim()) {
        throw ValidationError("encode: input has " + std::to_string(x.cols()) + " features, autoencoder expects " +
                              std::to_string(ae.input_dim()));
    }
    return ae.encoder.forward(x);
}

inline Matrix reconstruct(const Autoencoder& ae, const Matrix& x) { return ae.decoder.forward(encode(ae, x)); }

struct PredictionModel {
    Autoencoder cell_ae;
    Autoencoder drug_ae;
    Mlp head; // hidden ReLU layer then a single sigmoid unit
    Provenance provenance = Provenance::Staged;
    std::vector<PhaseTag> phase_history;
    std::string schema_hash;
    std::array<std::uint64_t, 4> rng_state{};

    std::size_t parameter_count() const {
        return cell_ae.parameter_count() + drug_ae.parameter_count() + head.parameter_count();
    }

    bool has_phase(PhaseTag p) const {
        return std::find(phase_history.begin(), phase_history.end(), p) != phase_history.end();
    }

    void check() const {
        cell_ae.check();
        drug_ae.check();
        if (head.layers.size() != 2) throw ValidationError("PredictionModel: head must have two layers");
        if (head.in_dim() != cell_ae.latent_dim() + drug_ae.latent_dim())
            throw ValidationError("PredictionModel: head input " + std::to_string(head.in_dim()) +
                                  " != cell latent + drug latent");
        if (head.layers[1].in_dim() != head.layers[0].out_dim() || head.out_dim() != 1 ||
            head.layers[1].activation != Activation::Sigmoid)
            throw ValidationError("PredictionModel: malformed head");
    }

    bool operator==(const PredictionModel&) const = default;
};

/// Single-layer autoencoders by default (ReLU latent, linear reconstruction)
/// and a 128-unit ReLU head with a sigmoid output, all drawn from the init
/// stream of `seed`. A latent wider than its input is allowed and reported
/// through `warnings`.
inline PredictionModel build_model(std::size_t cell_input_dim, std::size_t drug_input_dim, const ModelConfig& mc,
                                   std::uint64_t seed, std::vector<std::string>* warnings = nullptr) {
    if (cell_input_dim < 1 || drug_input_dim < 1) throw ValidationError("build_model: input dims must be >= 1");
    if (mc.cell_latent < 1 || mc.drug_latent < 1 || mc.head_hidden < 1)
        throw ValidationError("build_model: latent and head widths must be >= 1");
    if (warnings) {
        if (mc.cell_latent > cell_input_dim)
            warnings->push_back("cell latent (" + std::to_string(mc.cell_latent) + ") exceeds cell input (" +
                                std::to_string(cell_input_dim) + ")");
        if (mc.drug_latent > drug_input_dim)
            warnings->push_back("drug latent (" + std::to_string(mc.drug_latent) + ") exceeds drug input (" +
                                std::to_string(drug_input_dim) + ")");
    }
    Rng rng(derive_seed(seed, stream::init));
    PredictionModel m;
    m.cell_ae = make_autoencoder(cell_input_dim, mc.cell_latent, mc.encoder_hidden, rng);
    m.drug_ae = make_autoencoder(drug_input_dim, mc.drug_latent, mc.encoder_hidden, rng);
    const auto head_in = static_cast<Index>(mc.cell_latent + mc.drug_latent);
    m.head.layers.emplace_back(head_in, static_cast<Index>(mc.head_hidden), Activation::ReLU);
    m.head.layers.emplace_back(static_cast<Index>(mc.head_hidden), 1, Activation::Sigmoid);
    for (auto& l : m.head.layers) init_layer(l, rng);
    m.rng_state = rng.state();
    m.check();
    return m;
}

/// Cell latent then drug latent, side by side.
inline Matrix concat_latents(const Matrix& cell_latent, const Matrix& drug_latent) {
    Matrix z(cell_latent.rows(), cell_latent.cols() + drug_latent.cols());
    z << cell_latent, drug_latent;
    return z;
}

/// Sensitivity probability per (cell row, drug row) pair.
inline Vector predict(const PredictionModel& m, const Matrix& cell_x, const Matrix& drug_x) {
    if (cell_x.rows() != drug_x.rows()) {
        throw ValidationError("predict: " + std::to_string(cell_x.rows()) + " cell rows vs " +
                              std::to_string(drug_x.rows()) + " drug rows");
    }
    const Matrix z = concat_latents(encode(m.cell_ae, cell_x), encode(m.drug_ae, drug_x));
    const Matrix p = m.head.forward(z);
    Vector out = p.col(0);
    for (Index i = 0; i < out.size(); ++i) out(i) = std::clamp(out(i), kProbClamp, 1.0 - kProbClamp);
    return out;
}

/// Predictions for every pair of a dataset, processed in fixed-size chunks.
inline Vector predict(const PredictionModel& m, const PairDataset& ds, std::size_t chunk = 1024) {
    Vector out(static_cast<Index>(ds.size()));
    const auto& cm = ds.cell_matrix().values;
    const auto& dm = ds.drug_matrix().values;
    for (auto [b, e] : batch_ranges(ds.size(), chunk)) {
        std::vector<std::size_t> cr(ds.cell_rows().begin() + static_cast<std::ptrdiff_t>(b),
                                    ds.cell_rows().begin() + static_cast<std::ptrdiff_t>(e));
        std::vector<std::size_t> dr(ds.drug_rows().begin() + static_cast<std::ptrdiff_t>(b),
                                    ds.drug_rows().begin() + static_cast<std::ptrdiff_t>(e));
        out.segment(static_cast<Index>(b), static_cast<Index>(e - b)) = predict(m, gather_rows(cm, cr), gather_rows(dm, dr));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoint
//
// Layout (all integers and floats little-endian):
//   "STDR" | u32 version | str schema_hash | u8 provenance
//   | u32 n_phases, u8 phase... | u64 rng_state[4]
//   | 5 x network: str name, u32 n_layers, layer...
// layer := u8 activation, block weight, block bias
// block := str name, u32 rows, u32 cols, f64[rows*cols] row-major
// str   := u32 length, bytes
// ---------------------------------------------------------------------------

inline constexpr char kCheckpointMagic[4] = {'S', 'T', 'D', 'R'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

class ByteWriter {
public:
    void raw(const void* p, std::size_t n) { buf_.append(static_cast<const char*>(p), n); }
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f64(double d) { u64(std::bit_cast<std::uint64_t>(d)); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
    const std::string& bytes() const { return buf_; }

private:
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(std::string_view b, std::string origin) : b_(b), origin_(std::move(origin)) {}

    void need(std::size_t n) const {
        if (pos_ + n > b_.size()) throw ValidationError(origin_ + ": truncated checkpoint");
    }
    std::uint8_t u8() {
        need(1);
        return static_cast<std::uint8_t>(b_[pos_++]);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(u8()) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(u8()) << (8 * i);
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
    std::string str() {
        const auto n = u32();
        need(n);
        std::string s(b_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    bool done() const { return pos_ == b_.size(); }
    const std::string& origin() const { return origin_; }

private:
    std::string_view b_;
    std::size_t pos_ = 0;
    std::string origin_;
};

inline void write_block(ByteWriter& w, const std::string& name, const double* data, Index rows, Index cols) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(rows));
    w.u32(static_cast<std::uint32_t>(cols));
    for (Index i = 0; i < rows * cols; ++i) w.f64(data[i]);
}

inline Matrix read_block(ByteReader& r, const std::string& expected_name) {
    const auto name = r.str();
    if (name != expected_name)
        throw ValidationError(r.origin() + ": expected block '" + expected_name + "', found '" + name + "'");
    const auto rows = r.u32();
    const auto cols = r.u32();
    r.need(static_cast<std::size_t>(rows) * cols * 8);
    Matrix m(rows, cols);
    for (Index i = 0; i < m.size(); ++i) m.data()[i] = r.f64();
    return m;
}

inline void write_net(ByteWriter& w, const std::string& name, const Mlp& net) {
    w.str(name);
    w.u32(static_cast<std::uint32_t>(net.layers.size()));
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const auto& l = net.layers[i];
        const std::string base = name + "." + std::to_string(i);
        w.u8(static_cast<std::uint8_t>(l.activation));
        write_block(w, base + ".weight", l.weights.data(), l.weights.rows(), l.weights.cols());
        write_block(w, base + ".bias", l.bias.data(), l.bias.size(), 1);
    }
}

inline Mlp read_net(ByteReader& r, const std::string& name) {
    const auto found = r.str();
    if (found != name) throw ValidationError(r.origin() + ": expected network '" + name + "', found '" + found + "'");
    const auto n = r.u32();
    if (n == 0 || n > 64) throw ValidationError(r.origin() + ": implausible layer count in '" + name + "'");
    Mlp net;
    for (std::uint32_t i = 0; i < n; ++i) {
        const std::string base = name + "." + std::to_string(i);
        const auto act = r.u8();
        if (act > static_cast<std::uint8_t>(Activation::Identity))
            throw ValidationError(r.origin() + ": bad activation code in '" + base + "'");
        DenseLayer l;
        l.activation = static_cast<Activation>(act);
        l.weights = read_block(r, base + ".weight");
        Matrix b = read_block(r, base + ".bias");
        if (b.cols() != 1 || b.rows() != l.weights.rows())
            throw ValidationError(r.origin() + ": bias shape mismatch in '" + base + "'");
        l.bias = b.col(0);
        net.layers.push_back(std::move(l));
    }
    return net;
}

} // namespace detail

inline std::string serialize_checkpoint(const PredictionModel& m) {
    m.check();
    detail::ByteWriter w;
    w.raw(kCheckpointMagic, 4);
    w.u32(kCheckpointVersion);
    w.str(m.schema_hash);
    w.u8(static_cast<std::uint8_t>(m.provenance));
    w.u32(static_cast<std::uint32_t>(m.phase_history.size()));
    for (auto p : m.phase_history) w.u8(static_cast<std::uint8_t>(p));
    for (auto s : m.rng_state) w.u64(s);
    detail::write_net(w, "cell.encoder", m.cell_ae.encoder);
    detail::write_net(w, "cell.decoder", m.cell_ae.decoder);
    detail::write_net(w, "drug.encoder", m.drug_ae.encoder);
    detail::write_net(w, "drug.decoder", m.drug_ae.decoder);
    detail::write_net(w, "head", m.head);
    return w.bytes();
}

/// Parse checkpoint bytes. When `expected` is given, the stored schema hash
/// and input widths must match it.
inline PredictionModel parse_checkpoint(std::string_view bytes, const FeatureSchema* expected = nullptr,
                                        const std::string& origin = "checkpoint") {
    detail::ByteReader r(bytes, origin);
    r.need(4);
    if (std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) throw ValidationError(origin + ": bad magic (not a STDR checkpoint)");
    for (int i = 0; i < 4; ++i) r.u8();
    const auto version = r.u32();
    if (version != kCheckpointVersion)
        throw ValidationError(origin + ": unsupported checkpoint version " + std::to_string(version));
    PredictionModel m;
    m.schema_hash = r.str();
    const auto prov = r.u8();
    if (prov != 1 && prov != 2) throw ValidationError(origin + ": bad provenance code");
    m.provenance = static_cast<Provenance>(prov);
    const auto nph = r.u32();
    if (nph > 1024) throw ValidationError(origin + ": implausible phase count");
    for (std::uint32_t i = 0; i < nph; ++i) {
        const auto p = r.u8();
        if (p < 1 || p > 4) throw ValidationError(origin + ": bad phase code");
        m.phase_history.push_back(static_cast<PhaseTag>(p));
    }
    for (auto& s : m.rng_state) s = r.u64();
    m.cell_ae.encoder = detail::read_net(r, "cell.encoder");
    m.cell_ae.decoder = detail::read_net(r, "cell.decoder");
    m.drug_ae.encoder = detail::read_net(r, "drug.encoder");
    m.drug_ae.decoder = detail::read_net(r, "drug.decoder");
    m.head = detail::read_net(r, "head");
    if (!r.done()) throw ValidationError(origin + ": trailing bytes after checkpoint");
    m.check();
    if (expected) {
        if (static_cast<std::size_t>(m.cell_ae.input_dim()) != expected->cell_features.size() ||
            static_cast<std::size_t>(m.drug_ae.input_dim()) != expected->drug_features.size()) {
            throw ValidationError(origin + ": checkpoint input dims " + std::to_string(m.cell_ae.input_dim()) + "/" +
                                  std::to_string(m.drug_ae.input_dim()) + " do not match schema dims " +
                                  std::to_string(expected->cell_features.size()) + "/" +
                                  std::to_string(expected->drug_features.size()));
        }
        if (m.schema_hash != expected->hash())
            throw ValidationError(origin + ": schema hash mismatch (checkpoint was trained on a different schema)");
    }
    return m;
}

inline void save_checkpoint(const PredictionModel& m, const std::string& path) {
    text::write_file(path, serialize_checkpoint(m));
}

inline PredictionModel load_checkpoint(const std::string& path, const FeatureSchema* expected = nullptr) {
    return parse_checkpoint(read_file_bytes(path), expected, path);
}

} // namespace stardr
