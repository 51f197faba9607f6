#pragma once

// Dense network primitives with explicit backpropagation, the Adam optimizer
// and a central-difference gradient checker. Everything is float64 and
// single-threaded so that trajectories are reproducible bit for bit.

#include "stardr/core.hpp"

#include <algorithm>
#include <functional>
#include <span>
#include <utility>

namespace stardr {

enum class Activation { ReLU, Sigmoid, Identity };

inline const char* to_string(Activation a) {
    switch (a) {
    case Activation::ReLU: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Identity: return "identity";
    }
    return "?";
}

inline Activation activation_from_string(std::string_view s) {
    if (s == "relu") return Activation::ReLU;
    if (s == "sigmoid") return Activation::Sigmoid;
    if (s == "identity") return Activation::Identity;
    throw ValidationError("unknown activation '" + std::string(s) + "'");
}

inline double sigmoid(double x) {
    if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

/// Hyper-parameters shared by all training phases.
struct TrainConfig {
    double learning_rate = 1e-3;
    double weight_decay = 1e-8;
    std::size_t batch_size = 64;
    std::size_t epochs = 25;
    std::uint64_t seed = 42;

    void validate() const {
        if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
            throw ValidationError("learning_rate must be finite and >= 0");
        if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be >= 0");
        if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
        if (epochs < 1) throw ValidationError("epochs must be >= 1");
    }
};

/// Fully connected layer computing act(x * W^T + b) on row-major batches.
struct DenseLayer {
    Matrix weights; // out x in
    Vector bias;    // out
    Activation activation = Activation::Identity;

    DenseLayer() = default;
    DenseLayer(Index in_dim, Index out_dim, Activation act)
        : weights(Matrix::Zero(out_dim, in_dim)), bias(Vector::Zero(out_dim)), activation(act) {}

    Index in_dim() const { return weights.cols(); }
    Index out_dim() const { return weights.rows(); }
    std::size_t parameter_count() const {
        return static_cast<std::size_t>(weights.size() + bias.size());
    }

    bool operator==(const DenseLayer& o) const {
        return activation == o.activation && weights.rows() == o.weights.rows() &&
               weights.cols() == o.weights.cols() && weights == o.weights && bias == o.bias;
    }
};

/// Uniform initialization: He fan-in bound for ReLU layers, Xavier bound
/// otherwise. Biases start at zero.
inline void init_layer(DenseLayer& layer, Rng& rng) {
    const double fan_in = static_cast<double>(layer.in_dim());
    const double fan_out = static_cast<double>(layer.out_dim());
    const double bound = layer.activation == Activation::ReLU
                             ? std::sqrt(6.0 / fan_in)
                             : std::sqrt(6.0 / (fan_in + fan_out));
    for (Index i = 0; i < layer.weights.size(); ++i) {
        layer.weights.data()[i] = rng.uniform(-bound, bound);
    }
    layer.bias.setZero();
}

struct DenseCache {
    const DenseLayer* layer = nullptr;
    Matrix input;
    Matrix pre;    // pre-activations
    Matrix output; // post-activations
};

struct DenseGrads {
    Matrix weights;
    Vector bias;
};

inline Matrix apply_activation(Activation act, const Matrix& pre) {
    switch (act) {
    case Activation::ReLU: return pre.cwiseMax(0.0);
    case Activation::Sigmoid: return pre.unaryExpr([](double v) { return sigmoid(v); });
    case Activation::Identity: return pre;
    }
    return pre;
}

inline Matrix dense_forward(const DenseLayer& layer, const Matrix& x, DenseCache* cache = nullptr) {
    if (x.cols() != layer.in_dim()) {
        throw ValidationError("dense_forward: input has " + std::to_string(x.cols()) +
                              " columns but layer expects " + std::to_string(layer.in_dim()));
    }
    Matrix pre = x * layer.weights.transpose();
    pre.rowwise() += layer.bias.transpose();
    Matrix out = apply_activation(layer.activation, pre);
    if (cache) {
        cache->layer = &layer;
        cache->input = x;
        cache->pre = std::move(pre);
        cache->output = out;
    }
    return out;
}

/// Backpropagate `grad_out` (d loss / d output) through a layer. Returns the
/// gradient with respect to the layer input; parameter gradients go to `grads`
/// when it is non-null.
inline Matrix dense_backward(const DenseLayer& layer, const DenseCache& cache, const Matrix& grad_out,
                             DenseGrads* grads = nullptr) {
    if (cache.layer != &layer) throw ValidationError("dense_backward: cache belongs to a different layer");
    if (cache.pre.cols() != layer.out_dim() || cache.input.cols() != layer.in_dim()) {
        throw ValidationError("dense_backward: stale cache (layer shape changed since forward)");
    }
    if (grad_out.rows() != cache.pre.rows() || grad_out.cols() != cache.pre.cols()) {
        throw ValidationError("dense_backward: grad_out is " + shape_str(grad_out) + ", expected " +
                              shape_str(cache.pre));
    }
    Matrix dpre;
    switch (layer.activation) {
    case Activation::ReLU:
        dpre = grad_out.array() * (cache.pre.array() > 0.0).cast<double>();
        break;
    case Activation::Sigmoid:
        dpre = grad_out.array() * cache.output.array() * (1.0 - cache.output.array());
        break;
    case Activation::Identity:
        dpre = grad_out;
        break;
    }
    if (grads) {
        grads->weights = dpre.transpose() * cache.input;
        grads->bias = dpre.colwise().sum().transpose();
    }
    return dpre * layer.weights;
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

struct LossResult {
    double loss = 0.0;
    Matrix grad; // d loss / d prediction
};

/// Mean over all elements of (pred - target)^2.
inline LossResult mse_loss(const Matrix& pred, const Matrix& target) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols()) {
        throw ValidationError("mse_loss: prediction is " + shape_str(pred) + " but target is " +
                              shape_str(target));
    }
    const double n = static_cast<double>(pred.size());
    Matrix diff = pred - target;
    LossResult r;
    r.loss = diff.squaredNorm() / n;
    r.grad = (2.0 / n) * diff;
    return r;
}

inline constexpr double kProbClamp = 1e-12;

/// Binary cross-entropy on probabilities. Probabilities are clamped to
/// [1e-12, 1 - 1e-12]; the returned gradient is with respect to the
/// probability, evaluated at the clamped value.
inline LossResult bce_loss(const Matrix& prob, const Matrix& label) {
    if (prob.rows() != label.rows() || prob.cols() != label.cols()) {
        throw ValidationError("bce_loss: probabilities are " + shape_str(prob) + " but labels are " +
                              shape_str(label));
    }
    const double n = static_cast<double>(prob.size());
    LossResult r;
    r.grad.resize(prob.rows(), prob.cols());
    double total = 0.0;
    for (Index i = 0; i < prob.size(); ++i) {
        const double y = label.data()[i];
        if (y != 0.0 && y != 1.0) {
            throw ValidationError("bce_loss: label " + std::to_string(y) + " at index " + std::to_string(i) +
                                  " is not 0 or 1");
        }
        const double p = std::clamp(prob.data()[i], kProbClamp, 1.0 - kProbClamp);
        total += y == 1.0 ? -std::log(p) : -std::log1p(-p);
        r.grad.data()[i] = (y == 1.0 ? -1.0 / p : 1.0 / (1.0 - p)) / n;
    }
    r.loss = total / n;
    return r;
}

// ---------------------------------------------------------------------------
// Multi-layer stack
// ---------------------------------------------------------------------------

/// A chain of dense layers with cached forward state for backprop.
struct Mlp {
    std::vector<DenseLayer> layers;

    Index in_dim() const { return layers.front().in_dim(); }
    Index out_dim() const { return layers.back().out_dim(); }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& l : layers) n += l.parameter_count();
        return n;
    }

    Matrix forward(const Matrix& x) const {
        Matrix h = x;
        for (const auto& l : layers) h = dense_forward(l, h);
        return h;
    }

    Matrix forward(const Matrix& x, std::vector<DenseCache>& caches) const {
        caches.resize(layers.size());
        Matrix h = x;
        for (std::size_t i = 0; i < layers.size(); ++i) h = dense_forward(layers[i], h, &caches[i]);
        return h;
    }

    Matrix backward(const std::vector<DenseCache>& caches, const Matrix& grad_out,
                    std::vector<DenseGrads>& grads) const {
        if (caches.size() != layers.size()) throw ValidationError("Mlp::backward: cache count mismatch");
        grads.resize(layers.size());
        Matrix g = grad_out;
        for (std::size_t i = layers.size(); i-- > 0;) g = dense_backward(layers[i], caches[i], g, &grads[i]);
        return g;
    }

    bool operator==(const Mlp& o) const { return layers == o.layers; }
};

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// A named, contiguous block of trainable values.
struct ParamBlock {
    std::string name;
    std::span<double> values;
};

/// Gradient for the parameter block at the same position.
using GradBlock = std::span<const double>;

inline std::span<double> as_span(Matrix& m) { return {m.data(), static_cast<std::size_t>(m.size())}; }
inline std::span<double> as_span(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
inline std::span<const double> as_span(const Matrix& m) {
    return {m.data(), static_cast<std::size_t>(m.size())};
}
inline std::span<const double> as_span(const Vector& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

inline void append_params(Mlp& net, const std::string& prefix, std::vector<ParamBlock>& out) {
    for (std::size_t i = 0; i < net.layers.size(); ++i) {
        const std::string base = prefix + "." + std::to_string(i);
        out.push_back({base + ".weight", as_span(net.layers[i].weights)});
        out.push_back({base + ".bias", as_span(net.layers[i].bias)});
    }
}

inline void append_grads(const std::vector<DenseGrads>& grads, std::vector<GradBlock>& out) {
    for (const auto& g : grads) {
        out.push_back(as_span(g.weights));
        out.push_back(as_span(g.bias));
    }
}

struct AdamState {
    std::vector<std::vector<double>> m;
    std::vector<std::vector<double>> v;
    std::uint64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

/// One Adam step with bias correction. Weight decay is coupled: wd * theta is
/// added to the gradient before the moment updates. Moment buffers are sized
/// lazily on the first call.
inline void adam_step(std::span<const ParamBlock> params, std::span<const GradBlock> grads, AdamState& state,
                      const TrainConfig& cfg) {
    if (params.size() != grads.size()) throw ValidationError("adam_step: parameter/gradient block count mismatch");
    if (state.m.empty()) {
        state.m.resize(params.size());
        state.v.resize(params.size());
        for (std::size_t b = 0; b < params.size(); ++b) {
            state.m[b].assign(params[b].values.size(), 0.0);
            state.v[b].assign(params[b].values.size(), 0.0);
        }
    }
    if (state.m.size() != params.size()) throw ValidationError("adam_step: state was built for other parameters");
    for (std::size_t b = 0; b < params.size(); ++b) {
        if (params[b].values.size() != grads[b].size() || state.m[b].size() != grads[b].size()) {
            throw ValidationError("adam_step: size mismatch in block '" + params[b].name + "'");
        }
        for (double g : grads[b]) {
            if (!std::isfinite(g)) throw RuntimeFailure("adam_step: non-finite gradient in block '" + params[b].name + "'");
        }
    }
    state.t += 1;
    const double t = static_cast<double>(state.t);
    const double c1 = 1.0 - std::pow(state.beta1, t);
    const double c2 = 1.0 - std::pow(state.beta2, t);
    for (std::size_t b = 0; b < params.size(); ++b) {
        auto theta = params[b].values;
        auto& m = state.m[b];
        auto& v = state.v[b];
        for (std::size_t i = 0; i < theta.size(); ++i) {
            const double g = grads[b][i] + cfg.weight_decay * theta[i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            const double mhat = m[i] / c1;
            const double vhat = v[i] / c2;
            theta[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + state.epsilon);
        }
    }
}

// ---------------------------------------------------------------------------
// Gradient check
// ---------------------------------------------------------------------------

using LossFn = std::function<LossResult(const Matrix& pred, const Matrix& target)>;

/// Max over every parameter of |analytic - central difference| /
/// max(|analytic|, |fd|, 1e-12).
inline double gradient_check(Mlp& net, const LossFn& loss_fn, const Matrix& x, const Matrix& y,
                             double h = 1e-5) {
    std::vector<DenseCache> caches;
    std::vector<DenseGrads> grads;
    const Matrix pred = net.forward(x, caches);
    net.backward(caches, loss_fn(pred, y).grad, grads);

    double worst = 0.0;
    auto probe = [&](double& slot, double analytic) {
        const double saved = slot;
        slot = saved + h;
        const double up = loss_fn(net.forward(x), y).loss;
        slot = saved - h;
        const double down = loss_fn(net.forward(x), y).loss;
        slot = saved;
        const double fd = (up - down) / (2.0 * h);
        const double denom = std::max({std::abs(analytic), std::abs(fd), 1e-12});
        worst = std::max(worst, std::abs(analytic - fd) / denom);
    };
    for (std::size_t l = 0; l < net.layers.size(); ++l) {
        auto& layer = net.layers[l];
        for (Index i = 0; i < layer.weights.size(); ++i) probe(layer.weights.data()[i], grads[l].weights.data()[i]);
        for (Index i = 0; i < layer.bias.size(); ++i) probe(layer.bias.data()[i], grads[l].bias.data()[i]);
    }
    return worst;
}

/// Index batches over a (possibly reshuffled) order. The final partial batch
/// is kept.
inline std::vector<std::pair<std::size_t, std::size_t>> batch_ranges(std::size_t n, std::size_t batch_size) {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t start = 0; start < n; start += batch_size) out.emplace_back(start, std::min(n, start + batch_size));
    return out;
}

} // namespace stardr
