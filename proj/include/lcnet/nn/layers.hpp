#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <type_traits>
#include <variant>
#include <vector>

#include "lcnet/error.hpp"
#include "lcnet/nn/weights.hpp"
#include "lcnet/rng.hpp"

namespace lcnet::nn {

using Vector = std::vector<double>;

enum class Activation { linear, tanh, relu };

inline std::string to_string(Activation a) {
    switch (a) {
    case Activation::linear: return "linear";
    case Activation::tanh: return "tanh";
    case Activation::relu: return "relu";
    }
    return "?";
}

inline Activation parse_activation(const std::string& s) {
    if (s == "linear") return Activation::linear;
    if (s == "tanh") return Activation::tanh;
    if (s == "relu") return Activation::relu;
    throw DomainError("unknown activation '" + s + "'");
}

inline double activate(Activation a, double z) {
    switch (a) {
    case Activation::linear: return z;
    case Activation::tanh: return std::tanh(z);
    case Activation::relu: return z > 0.0 ? z : 0.0;
    }
    return z;
}

/// Derivative at pre-activation z (relu'(0) taken as 0).
inline double activate_grad(Activation a, double z) {
    switch (a) {
    case Activation::linear: return 1.0;
    case Activation::tanh: {
        const double t = std::tanh(z);
        return 1.0 - t * t;
    }
    case Activation::relu: return z > 0.0 ? 1.0 : 0.0;
    }
    return 1.0;
}

enum class Mode { train, eval };

// ---------------------------------------------------------------------------
// Declarative layer description

enum class LayerKind { dense, lcn1d, conv1d, embedding, dropout, concat, scalar_multiply_add };

inline std::string to_string(LayerKind k) {
    switch (k) {
    case LayerKind::dense: return "dense";
    case LayerKind::lcn1d: return "lcn1d";
    case LayerKind::conv1d: return "conv1d";
    case LayerKind::embedding: return "embedding";
    case LayerKind::dropout: return "dropout";
    case LayerKind::concat: return "concat";
    case LayerKind::scalar_multiply_add: return "scalar-multiply-add";
    }
    return "?";
}

struct LayerSpec {
    LayerKind kind = LayerKind::dense;
    std::string name;
    std::size_t input = 0;    ///< input length d (dense, lcn1d, conv1d, dropout)
    std::size_t units = 0;    ///< dense output size
    std::size_t kernel = 0;   ///< m
    std::size_t stride = 0;   ///< s
    std::size_t filters = 1;  ///< lcn1d / conv1d filters
    std::size_t vocabulary = 0;
    std::size_t embedding_dim = 0;
    double rate = 0.0;
    Activation activation = Activation::linear;

    /// Number of receptive fields (d - m) / s + 1 for lcn1d/conv1d.
    std::size_t positions() const {
        if (kernel == 0 || stride == 0 || kernel > input || (input - kernel) % stride != 0)
            throw DomainError(name + ": (d - m)/s must be a nonnegative integer (d=" + std::to_string(input) +
                              ", m=" + std::to_string(kernel) + ", s=" + std::to_string(stride) + ")");
        return (input - kernel) / stride + 1;
    }

    void validate() const {
        switch (kind) {
        case LayerKind::dense:
            if (input == 0 || units == 0) throw DomainError(name + ": dense sizes must be positive");
            break;
        case LayerKind::lcn1d:
        case LayerKind::conv1d:
            if (filters == 0) throw DomainError(name + ": filters must be positive");
            (void)positions();
            break;
        case LayerKind::embedding:
            if (vocabulary == 0 || embedding_dim == 0) throw DomainError(name + ": embedding sizes must be positive");
            break;
        case LayerKind::dropout:
            if (!(rate >= 0.0 && rate < 1.0)) throw DomainError(name + ": dropout rate must lie in [0, 1)");
            break;
        case LayerKind::concat:
        case LayerKind::scalar_multiply_add: break;
        }
    }

    std::size_t output_size() const {
        switch (kind) {
        case LayerKind::dense: return units;
        case LayerKind::lcn1d:
        case LayerKind::conv1d: return positions() * filters;
        case LayerKind::embedding: return embedding_dim;
        case LayerKind::dropout: return input;
        case LayerKind::concat:
        case LayerKind::scalar_multiply_add: return input;
        }
        return 0;
    }
};

/// Trainable parameters of one layer.
inline std::size_t parameter_count(const LayerSpec& s) {
    s.validate();
    switch (s.kind) {
    case LayerKind::dense: return (s.input + 1) * s.units;
    case LayerKind::lcn1d: return s.positions() * s.filters * (s.kernel + 1);
    case LayerKind::conv1d: return s.filters * (s.kernel + 1);
    case LayerKind::embedding: return s.vocabulary * s.embedding_dim;
    case LayerKind::dropout:
    case LayerKind::concat:
    case LayerKind::scalar_multiply_add: return 0;
    }
    return 0;
}

inline std::size_t count_parameters(std::span<const LayerSpec> specs) {
    std::size_t n = 0;
    for (const auto& s : specs) n += parameter_count(s);
    return n;
}

// ---------------------------------------------------------------------------
// Layers

/// out[j] = act(b[j] + sum_l W[j,l] x[l]); W is units x input.
struct Dense {
    std::size_t input = 0, units = 0;
    Activation act = Activation::linear;
    std::size_t w = 0, b = 0; // blocks

    static Dense create(const LayerSpec& s, NetworkWeights& wts) {
        s.validate();
        Dense d{s.input, s.units, s.activation, 0, 0};
        d.w = wts.add(s.name + ".kernel", s.units, s.input, Init::glorot_uniform, s.input, s.units);
        d.b = wts.add(s.name + ".bias", 1, s.units, Init::zeros);
        return d;
    }

    std::size_t output_size() const { return units; }

    void forward(const NetworkWeights& wts, std::span<const double> x, Vector& pre, Vector& out) const {
        if (x.size() != input) throw DimensionError("dense: input length mismatch");
        const auto W = wts.block(w);
        const auto B = wts.block(b);
        pre.assign(units, 0.0);
        out.assign(units, 0.0);
        for (std::size_t j = 0; j < units; ++j) {
            double z = B[j];
            const double* row = W.data() + j * input;
            for (std::size_t l = 0; l < input; ++l) z += row[l] * x[l];
            pre[j] = z;
            out[j] = activate(act, z);
        }
    }

    void backward(const NetworkWeights& wts, std::span<const double> x, std::span<const double> pre,
                  std::span<const double> gout, std::span<double> grads, Vector* gin) const {
        const auto W = wts.block(w);
        auto gW = wts.slice(grads, w);
        auto gB = wts.slice(grads, b);
        if (gin) gin->assign(input, 0.0);
        for (std::size_t j = 0; j < units; ++j) {
            const double dz = gout[j] * activate_grad(act, pre[j]);
            if (dz == 0.0) continue;
            gB[j] += dz;
            double* grow = gW.data() + j * input;
            const double* row = W.data() + j * input;
            for (std::size_t l = 0; l < input; ++l) {
                grow[l] += dz * x[l];
                if (gin) (*gin)[l] += dz * row[l];
            }
        }
    }
};

/// 1-D layer over windows [k s, k s + m). Locally connected layers use a
/// separate filter per window; convolutional layers share one filter.
/// Output is position-major: out[k * filters + j].
struct Windowed1D {
    std::size_t input = 0, kernel = 0, stride = 0, filters = 1, positions = 0;
    bool shared = false;
    Activation act = Activation::linear;
    std::size_t w = 0, b = 0;

    static Windowed1D create(const LayerSpec& s, NetworkWeights& wts) {
        s.validate();
        Windowed1D l;
        l.input = s.input;
        l.kernel = s.kernel;
        l.stride = s.stride;
        l.filters = s.filters;
        l.positions = s.positions();
        l.shared = s.kind == LayerKind::conv1d;
        l.act = s.activation;
        const std::size_t banks = l.shared ? 1 : l.positions;
        l.w = wts.add(s.name + ".kernel", banks * l.filters, l.kernel, Init::glorot_uniform, l.kernel, l.filters);
        l.b = wts.add(s.name + ".bias", banks, l.filters, Init::zeros);
        return l;
    }

    std::size_t output_size() const { return positions * filters; }

    // Offsets of filter (k, j) into the kernel/bias blocks.
    std::size_t kernel_offset(std::size_t k, std::size_t j) const { return ((shared ? 0 : k) * filters + j) * kernel; }
    std::size_t bias_offset(std::size_t k, std::size_t j) const { return (shared ? 0 : k) * filters + j; }

    void forward(const NetworkWeights& wts, std::span<const double> x, Vector& pre, Vector& out) const {
        if (x.size() != input) throw DimensionError("lcn1d/conv1d: input length mismatch");
        const auto W = wts.block(w);
        const auto B = wts.block(b);
        pre.assign(output_size(), 0.0);
        out.assign(output_size(), 0.0);
        for (std::size_t k = 0; k < positions; ++k) {
            const double* window = x.data() + k * stride;
            for (std::size_t j = 0; j < filters; ++j) {
                const double* f = W.data() + kernel_offset(k, j);
                double z = B[bias_offset(k, j)];
                for (std::size_t l = 0; l < kernel; ++l) z += f[l] * window[l];
                pre[k * filters + j] = z;
                out[k * filters + j] = activate(act, z);
            }
        }
    }

    void backward(const NetworkWeights& wts, std::span<const double> x, std::span<const double> pre,
                  std::span<const double> gout, std::span<double> grads, Vector* gin) const {
        const auto W = wts.block(w);
        auto gW = wts.slice(grads, w);
        auto gB = wts.slice(grads, b);
        if (gin) gin->assign(input, 0.0);
        for (std::size_t k = 0; k < positions; ++k) {
            const double* window = x.data() + k * stride;
            for (std::size_t j = 0; j < filters; ++j) {
                const std::size_t o = k * filters + j;
                const double dz = gout[o] * activate_grad(act, pre[o]);
                if (dz == 0.0) continue;
                gB[bias_offset(k, j)] += dz;
                double* gf = gW.data() + kernel_offset(k, j);
                const double* f = W.data() + kernel_offset(k, j);
                for (std::size_t l = 0; l < kernel; ++l) {
                    gf[l] += dz * window[l];
                    if (gin) (*gin)[k * stride + l] += dz * f[l];
                }
            }
        }
    }
};

/// Inverted dropout: survivors scaled by 1/(1 - rate) at train time.
struct Dropout {
    std::size_t input = 0;
    double rate = 0.0;

    static Dropout create(const LayerSpec& s) {
        s.validate();
        return Dropout{s.input, s.rate};
    }

    std::size_t output_size() const { return input; }

    /// Fills `mask` with per-unit multipliers (all ones in eval mode).
    void forward(std::span<const double> x, Mode mode, Rng* rng, Vector& mask, Vector& out) const {
        mask.assign(x.size(), 1.0);
        if (mode == Mode::train && rate > 0.0) {
            if (!rng) throw DomainError("dropout: train mode needs a random generator");
            const double keep = 1.0 / (1.0 - rate);
            for (double& m : mask) m = rng->uniform() < rate ? 0.0 : keep;
        }
        out.resize(x.size());
        for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * mask[i];
    }
};

/// Table lookup; rows are the levels of a categorical variable.
struct Embedding {
    std::size_t vocabulary = 0, dim = 0;
    std::size_t table = 0;

    static Embedding create(const LayerSpec& s, NetworkWeights& wts) {
        s.validate();
        Embedding e{s.vocabulary, s.embedding_dim, 0};
        e.table = wts.add(s.name + ".embeddings", s.vocabulary, s.embedding_dim, Init::embedding_uniform);
        return e;
    }

    std::span<const double> lookup(const NetworkWeights& wts, std::size_t index) const {
        if (index >= vocabulary)
            throw DomainError("embedding: index " + std::to_string(index) + " outside [0, " +
                              std::to_string(vocabulary) + ")");
        return wts.block(table).subspan(index * dim, dim);
    }

    void backward(const NetworkWeights& wts, std::size_t index, std::span<const double> gout,
                  std::span<double> grads) const {
        if (index >= vocabulary) throw DomainError("embedding: index out of range");
        auto g = wts.slice(grads, table).subspan(index * dim, dim);
        for (std::size_t i = 0; i < dim; ++i) g[i] += gout[i];
    }
};

/// out = a + b * kappa for vectors a, b and a scalar kappa.
inline Vector scalar_multiply_add(std::span<const double> a, std::span<const double> b, double kappa) {
    if (a.size() != b.size()) throw DimensionError("scalar_multiply_add: length mismatch");
    Vector out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i] * kappa;
    return out;
}

inline Vector concat(std::span<const double> a, std::span<const double> b) {
    Vector out(a.begin(), a.end());
    out.insert(out.end(), b.begin(), b.end());
    return out;
}

// ---------------------------------------------------------------------------
// Free-standing forms over caller-owned arrays

/// component j = act(w0[j] + sum_l W[j,l] x[l]) with W row-major units x x.size().
inline Vector dense_forward(std::span<const double> x, std::span<const double> W, std::span<const double> w0,
                            Activation act) {
    if (w0.empty() || W.size() != w0.size() * x.size()) throw DimensionError("dense_forward: shape mismatch");
    Vector out(w0.size());
    for (std::size_t j = 0; j < w0.size(); ++j) {
        double z = w0[j];
        for (std::size_t l = 0; l < x.size(); ++l) z += W[j * x.size() + l] * x[l];
        out[j] = activate(act, z);
    }
    return out;
}

namespace detail {

inline Vector windowed_forward(std::span<const double> x, std::span<const double> W, std::span<const double> bias,
                               std::size_t m, std::size_t s, std::size_t filters, Activation act, bool shared) {
    LayerSpec spec;
    spec.kind = shared ? LayerKind::conv1d : LayerKind::lcn1d;
    spec.name = shared ? "conv1d" : "lcn1d";
    spec.input = x.size();
    spec.kernel = m;
    spec.stride = s;
    spec.filters = filters;
    spec.activation = act;
    NetworkWeights wts;
    const auto layer = Windowed1D::create(spec, wts);
    if (W.size() != wts.info(layer.w).size() || bias.size() != wts.info(layer.b).size())
        throw DimensionError(spec.name + "_forward: filter/bias shape mismatch");
    std::copy(W.begin(), W.end(), wts.block(layer.w).begin());
    std::copy(bias.begin(), bias.end(), wts.block(layer.b).begin());
    Vector pre, out;
    layer.forward(wts, x, pre, out);
    return out;
}

} // namespace detail

/// Locally connected: W holds positions*filters rows of m weights, bias positions*filters.
inline Vector lcn1d_forward(std::span<const double> x, std::span<const double> W, std::span<const double> bias,
                            std::size_t m, std::size_t s, std::size_t filters, Activation act) {
    return detail::windowed_forward(x, W, bias, m, s, filters, act, false);
}

/// Convolutional: one shared bank of `filters` rows of m weights.
inline Vector conv1d_forward(std::span<const double> x, std::span<const double> W, std::span<const double> bias,
                             std::size_t m, std::size_t s, std::size_t filters, Activation act) {
    return detail::windowed_forward(x, W, bias, m, s, filters, act, true);
}

inline Vector embedding_lookup(std::span<const double> table, std::size_t vocabulary, std::size_t dim,
                               std::size_t index) {
    if (table.size() != vocabulary * dim) throw DimensionError("embedding_lookup: table shape mismatch");
    if (index >= vocabulary) throw DomainError("embedding_lookup: index out of range");
    return Vector(table.begin() + static_cast<std::ptrdiff_t>(index * dim),
                  table.begin() + static_cast<std::ptrdiff_t>((index + 1) * dim));
}

struct DropoutResult {
    Vector output;
    Vector mask;
};

inline DropoutResult dropout_forward(std::span<const double> x, double rate, Mode mode, Rng& rng) {
    LayerSpec spec;
    spec.kind = LayerKind::dropout;
    spec.name = "dropout";
    spec.input = x.size();
    spec.rate = rate;
    DropoutResult r;
    Dropout::create(spec).forward(x, mode, &rng, r.mask, r.output);
    return r;
}

// ---------------------------------------------------------------------------
// Sequential stack with a recorded forward pass

using Layer = std::variant<Dense, Windowed1D, Dropout>;

/// Activations recorded by a forward pass, consumed by backward().
struct Tape {
    bool recorded = false;
    std::vector<Vector> inputs; ///< input of each layer
    std::vector<Vector> pre;    ///< pre-activations (dropout: mask)
    Vector output;
};

class Sequential {
public:
    Sequential() = default;

    static Sequential build(std::span<const LayerSpec> specs, NetworkWeights& wts) {
        Sequential s;
        for (const auto& spec : specs) {
            switch (spec.kind) {
            case LayerKind::dense: s.layers_.emplace_back(Dense::create(spec, wts)); break;
            case LayerKind::lcn1d:
            case LayerKind::conv1d: s.layers_.emplace_back(Windowed1D::create(spec, wts)); break;
            case LayerKind::dropout: s.layers_.emplace_back(Dropout::create(spec)); break;
            default: throw DomainError("Sequential: layer kind " + to_string(spec.kind) + " not supported in a stack");
            }
        }
        return s;
    }

    const std::vector<Layer>& layers() const noexcept { return layers_; }

    Vector forward(const NetworkWeights& wts, std::span<const double> x, Mode mode, Rng* rng, Tape& tape) const {
        tape.inputs.assign(layers_.size(), {});
        tape.pre.assign(layers_.size(), {});
        Vector cur(x.begin(), x.end());
        for (std::size_t i = 0; i < layers_.size(); ++i) {
            tape.inputs[i] = cur;
            Vector next;
            std::visit(
                [&](const auto& layer) {
                    using T = std::decay_t<decltype(layer)>;
                    if constexpr (std::is_same_v<T, Dropout>)
                        layer.forward(tape.inputs[i], mode, rng, tape.pre[i], next);
                    else
                        layer.forward(wts, tape.inputs[i], tape.pre[i], next);
                },
                layers_[i]);
            cur = std::move(next);
        }
        tape.output = cur;
        tape.recorded = true;
        return cur;
    }

    /// Reverse-mode pass: accumulates parameter gradients into `grads` and
    /// returns the gradient with respect to the stack input.
    Vector backward(const NetworkWeights& wts, Tape& tape, std::span<const double> gout, std::span<double> grads) const {
        if (!tape.recorded) throw DomainError("backward: no recorded forward pass");
        if (grads.size() != wts.size()) throw DimensionError("backward: gradient buffer has wrong length");
        if (gout.size() != tape.output.size()) throw DimensionError("backward: upstream gradient has wrong length");
        Vector g(gout.begin(), gout.end());
        for (std::size_t i = layers_.size(); i-- > 0;) {
            Vector gin;
            std::visit(
                [&](const auto& layer) {
                    using T = std::decay_t<decltype(layer)>;
                    if constexpr (std::is_same_v<T, Dropout>) {
                        gin.resize(g.size());
                        for (std::size_t u = 0; u < g.size(); ++u) gin[u] = g[u] * tape.pre[i][u];
                    } else {
                        layer.backward(wts, tape.inputs[i], tape.pre[i], g, grads, &gin);
                    }
                },
                layers_[i]);
            g = std::move(gin);
        }
        tape.recorded = false;
        return g;
    }

private:
    std::vector<Layer> layers_;
};

} // namespace lcnet::nn
