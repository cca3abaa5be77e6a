#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace lcnet;
using namespace lcnet::nn;

namespace {

LayerSpec dense_spec(std::size_t in, std::size_t units, Activation act, const std::string& name = "d") {
    LayerSpec s;
    s.kind = LayerKind::dense;
    s.name = name;
    s.input = in;
    s.units = units;
    s.activation = act;
    return s;
}

LayerSpec windowed_spec(LayerKind kind, std::size_t in, std::size_t m, std::size_t st, std::size_t filters,
                        Activation act) {
    LayerSpec s;
    s.kind = kind;
    s.name = kind == LayerKind::conv1d ? "conv" : "lcn";
    s.input = in;
    s.kernel = m;
    s.stride = st;
    s.filters = filters;
    s.activation = act;
    return s;
}

LayerSpec dropout_spec(std::size_t in, double rate) {
    LayerSpec s;
    s.kind = LayerKind::dropout;
    s.name = "drop";
    s.input = in;
    s.rate = rate;
    return s;
}

void fill(std::span<double> v, Rng& rng, double scale = 0.5) {
    for (double& x : v) x = scale * rng.normal();
}

/// Every pre-activation of a single-layer stack kept at least `gap` from zero.
bool clear_of_kinks(const Sequential& net, const NetworkWeights& w, const Vector& x, double gap) {
    Tape tape;
    net.forward(w, x, Mode::eval, nullptr, tape);
    for (const auto& pre : tape.pre)
        for (double z : pre)
            if (std::abs(z) < gap) return false;
    return true;
}

struct GradCheck {
    double params = 0.0;
    double input = 0.0;
};

/// Loss <net(x), g>; analytic gradients against central differences, for
/// both the weights and the input.
GradCheck check_gradients(const Sequential& net, NetworkWeights& w, Vector& x, const Vector& g) {
    Tape tape;
    net.forward(w, x, Mode::eval, nullptr, tape);
    Vector grads(w.size(), 0.0);
    const Vector gin = net.backward(w, tape, g, grads);

    const auto loss = [&] {
        Tape t;
        const Vector out = net.forward(w, x, Mode::eval, nullptr, t);
        return dot(out, g);
    };
    GradCheck r;
    r.params = oracle::relative_error(grads, oracle::fd_gradient(loss, w.values()));
    r.input = oracle::relative_error(gin, oracle::fd_gradient(loss, x));
    return r;
}

} // namespace

// --- forward passes -------------------------------------------------------

TEST(DenseForward, IdentityAndHandArithmetic) {
    const Vector x{0.3, -1.2, 4.0};
    Vector eye(9, 0.0);
    eye[0] = eye[4] = eye[8] = 1.0;
    EXPECT_EQ(dense_forward(x, eye, Vector(3, 0.0), Activation::linear), x);
    const Vector out = dense_forward(Vector{1, 2}, Vector{1, 1}, Vector{0.5}, Activation::linear);
    ASSERT_EQ(out.size(), 1u);
    EXPECT_DOUBLE_EQ(out[0], 3.5);
}

TEST(DenseForward, MatchesScalarLoopOracle) {
    Rng rng(1);
    for (Activation act : {Activation::linear, Activation::tanh, Activation::relu})
        for (int rep = 0; rep < 20; ++rep) {
            const std::size_t d = 1 + rng.uniform_index(12), q = 1 + rng.uniform_index(8);
            const Vector x = oracle::random_vector(d, rng), W = oracle::random_vector(d * q, rng),
                         w0 = oracle::random_vector(q, rng);
            const Vector got = dense_forward(x, W, w0, act), want = oracle::dense(x, W, w0, act);
            for (std::size_t j = 0; j < q; ++j) ASSERT_NEAR(got[j], want[j], 1e-12);
        }
}

TEST(DenseForward, ShapeMismatchIsAnError) {
    EXPECT_THROW(dense_forward(Vector{1, 2}, Vector{1, 1, 1}, Vector{0}, Activation::linear), DimensionError);
}

TEST(Lcn1dForward, AveragingKernel) {
    const Vector x{1, 2, 3, 4, 10, 20, 30, 40};
    const Vector out = lcn1d_forward(x, Vector(8, 0.25), Vector(2, 0.0), 4, 4, 1, Activation::linear);
    ASSERT_EQ(out.size(), 2u);
    EXPECT_DOUBLE_EQ(out[0], 2.5);
    EXPECT_DOUBLE_EQ(out[1], 25.0);
}

TEST(Lcn1dForward, HundredAgesGiveTwentyFivePositions) {
    EXPECT_EQ(windowed_spec(LayerKind::lcn1d, 100, 4, 4, 1, Activation::linear).positions(), 25u);
    const Vector out = lcn1d_forward(Vector(100, 1.0), Vector(100, 1.0), Vector(25, 0.0), 4, 4, 1, Activation::linear);
    EXPECT_EQ(out.size(), 25u);
}

TEST(Lcn1dForward, IncompatibleStrideIsAnError) {
    EXPECT_THROW(lcn1d_forward(Vector(10, 1.0), Vector(12, 1.0), Vector(3, 0.0), 4, 4, 1, Activation::linear),
                 DomainError);
    EXPECT_THROW(conv1d_forward(Vector(3, 1.0), Vector(4, 1.0), Vector(1, 0.0), 4, 1, 1, Activation::linear),
                 DomainError);
}

TEST(WindowedForward, MatchesLoopOracle) {
    Rng rng(2);
    for (bool shared : {false, true})
        for (Activation act : {Activation::linear, Activation::tanh, Activation::relu})
            for (int rep = 0; rep < 20; ++rep) {
                const std::size_t m = 1 + rng.uniform_index(5), s = 1 + rng.uniform_index(4);
                const std::size_t positions = 1 + rng.uniform_index(8), filters = 1 + rng.uniform_index(3);
                const std::size_t d = (positions - 1) * s + m;
                const std::size_t banks = shared ? 1 : positions;
                const Vector x = oracle::random_vector(d, rng), W = oracle::random_vector(banks * filters * m, rng),
                             b = oracle::random_vector(banks * filters, rng);
                const Vector got = shared ? conv1d_forward(x, W, b, m, s, filters, act)
                                          : lcn1d_forward(x, W, b, m, s, filters, act);
                const Vector want = oracle::windowed(x, W, b, m, s, filters, act, shared);
                ASSERT_EQ(got.size(), want.size());
                for (std::size_t i = 0; i < got.size(); ++i) ASSERT_NEAR(got[i], want[i], 1e-12);
            }
}

TEST(Conv1dForward, SelectorKernel) {
    Vector x(100);
    for (std::size_t i = 0; i < 100; ++i) x[i] = 0.1 * static_cast<double>(i * i) - 3.0;
    const Vector out = conv1d_forward(x, Vector{1, 0, 0, 0}, Vector{0.0}, 4, 4, 1, Activation::linear);
    ASSERT_EQ(out.size(), 25u);
    for (std::size_t k = 0; k < 25; ++k) EXPECT_EQ(out[k], x[4 * k]);
}

TEST(Conv1dForward, EqualsLcnWithReplicatedFiltersBitForBit) {
    Rng rng(3);
    for (Activation act : {Activation::linear, Activation::tanh, Activation::relu}) {
        const std::size_t d = 20, m = 4, s = 2, filters = 2, positions = 9;
        NetworkWeights wc, wl;
        const auto conv = Sequential::build(std::vector{windowed_spec(LayerKind::conv1d, d, m, s, filters, act)}, wc);
        const auto lcn = Sequential::build(std::vector{windowed_spec(LayerKind::lcn1d, d, m, s, filters, act)}, wl);
        fill(wc.values(), rng);
        const auto ck = wc.block(0), cb = wc.block(1);
        auto lk = wl.block(0), lb = wl.block(1);
        for (std::size_t k = 0; k < positions; ++k) {
            std::copy(ck.begin(), ck.end(), lk.begin() + static_cast<std::ptrdiff_t>(k * ck.size()));
            std::copy(cb.begin(), cb.end(), lb.begin() + static_cast<std::ptrdiff_t>(k * cb.size()));
        }
        const Vector x = oracle::random_vector(d, rng), g = oracle::random_vector(positions * filters, rng);
        Tape tc, tl;
        const Vector oc = conv.forward(wc, x, Mode::eval, nullptr, tc);
        const Vector ol = lcn.forward(wl, x, Mode::eval, nullptr, tl);
        EXPECT_EQ(oc, ol);

        Vector gc(wc.size(), 0.0), gl(wl.size(), 0.0);
        EXPECT_EQ(conv.backward(wc, tc, g, gc), lcn.backward(wl, tl, g, gl));
        // The shared filter's gradient is the sum of the positional ones, in position order.
        Vector summed(wc.size(), 0.0);
        for (std::size_t k = 0; k < positions; ++k) {
            for (std::size_t i = 0; i < ck.size(); ++i) summed[i] += gl[k * ck.size() + i];
            for (std::size_t i = 0; i < cb.size(); ++i) summed[ck.size() + i] += gl[wl.info(1).offset + k * cb.size() + i];
        }
        EXPECT_EQ(gc, summed);
    }
}

// --- embeddings -----------------------------------------------------------

TEST(Embedding, LookupReturnsTheRow) {
    const Vector table{1, 2, 3, 4, 5, 6};
    EXPECT_EQ(embedding_lookup(table, 2, 3, 1), (Vector{4, 5, 6}));
    EXPECT_THROW(embedding_lookup(table, 2, 3, 2), DomainError);
    EXPECT_THROW(embedding_lookup(table, 3, 3, 0), DimensionError);
}

TEST(Embedding, GradientTouchesOnlyTheLookedUpRow) {
    LayerSpec s;
    s.kind = LayerKind::embedding;
    s.name = "e";
    s.vocabulary = 4;
    s.embedding_dim = 3;
    NetworkWeights w;
    const auto e = Embedding::create(s, w);
    const Vector g{0.5, -1.0, 2.0};
    Vector grads(w.size(), 0.0);
    e.backward(w, 2, g, grads);
    for (std::size_t r = 0; r < 4; ++r)
        for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(grads[r * 3 + i], r == 2 ? g[i] : 0.0);
    EXPECT_THROW(e.backward(w, 4, g, grads), DomainError);
}

TEST(Embedding, RepeatedLookupsAccumulate) {
    LayerSpec s;
    s.kind = LayerKind::embedding;
    s.name = "e";
    s.vocabulary = 3;
    s.embedding_dim = 2;
    NetworkWeights w;
    const auto e = Embedding::create(s, w);
    Rng rng(4);
    w.initialize(rng);
    const Vector g{0.7, -0.3};
    const std::vector<std::size_t> batch{1, 0, 1, 1};
    Vector grads(w.size(), 0.0);
    for (std::size_t i : batch) e.backward(w, i, g, grads);
    const auto loss = [&] {
        double acc = 0.0;
        for (std::size_t i : batch) acc += dot(e.lookup(w, i), g);
        return acc;
    };
    const Vector numeric = oracle::fd_gradient(loss, w.values());
    for (std::size_t i = 0; i < 2; ++i) {
        EXPECT_NEAR(grads[2 + i], 3.0 * g[i], 1e-15);
        EXPECT_NEAR(numeric[2 + i], 3.0 * g[i], 1e-9);
        EXPECT_NEAR(numeric[i], g[i], 1e-9);
        EXPECT_EQ(grads[4 + i], 0.0);
    }
}

// --- dropout --------------------------------------------------------------

TEST(Dropout, IdentityCases) {
    Rng rng(5);
    const Vector x = oracle::random_vector(50, rng);
    EXPECT_EQ(dropout_forward(x, 0.0, Mode::train, rng).output, x);
    EXPECT_EQ(dropout_forward(x, 0.7, Mode::eval, rng).output, x);
}

TEST(Dropout, HalfRateStatistics) {
    Rng rng(6);
    const std::size_t n = 100000;
    Vector x(n);
    for (double& v : x) v = rng.uniform(1.0, 3.0);
    const auto r = dropout_forward(x, 0.5, Mode::train, rng);
    std::size_t zeros = 0;
    for (double m : r.mask) {
        zeros += m == 0.0;
        EXPECT_TRUE(m == 0.0 || m == 2.0);
    }
    EXPECT_NEAR(static_cast<double>(zeros) / n, 0.5, 0.01);
    EXPECT_NEAR(mean(r.output) / mean(x), 1.0, 0.01);
}

TEST(Dropout, RateOutsideRangeIsAnError) {
    Rng rng(7);
    EXPECT_THROW(dropout_forward(Vector(3, 1.0), 1.0, Mode::train, rng), DomainError);
    EXPECT_THROW(dropout_forward(Vector(3, 1.0), -0.1, Mode::train, rng), DomainError);
}

TEST(Dropout, BackwardUsesTheRecordedMask) {
    Rng rng(8);
    NetworkWeights w;
    const auto net = Sequential::build(std::vector{dropout_spec(40, 0.3)}, w);
    const Vector x = oracle::random_vector(40, rng), g = oracle::random_vector(40, rng);
    Tape tape;
    const Vector out = net.forward(w, x, Mode::train, &rng, tape);
    Vector grads;
    const Vector gin = net.backward(w, tape, g, grads);
    for (std::size_t i = 0; i < 40; ++i) {
        const double m = out[i] / x[i];
        EXPECT_DOUBLE_EQ(gin[i], g[i] * m);
    }
}

// --- reverse mode ---------------------------------------------------------

TEST(Backward, LinearChainClosedForm) {
    // y = w2 * (w1 x + b1) + b2 with scalars.
    NetworkWeights w;
    const auto net = Sequential::build(
        std::vector{dense_spec(1, 1, Activation::linear, "l1"), dense_spec(1, 1, Activation::linear, "l2")}, w);
    const double w1 = 1.5, b1 = -0.5, w2 = 2.0, b2 = 0.25, x = 3.0;
    w.assign({w1, b1, w2, b2});
    Tape tape;
    const Vector y = net.forward(w, Vector{x}, Mode::eval, nullptr, tape);
    EXPECT_DOUBLE_EQ(y[0], w2 * (w1 * x + b1) + b2);
    Vector grads(4, 0.0);
    const Vector gin = net.backward(w, tape, Vector{1.0}, grads);
    EXPECT_DOUBLE_EQ(grads[0], w2 * x);
    EXPECT_DOUBLE_EQ(grads[1], w2);
    EXPECT_DOUBLE_EQ(grads[2], w1 * x + b1);
    EXPECT_DOUBLE_EQ(grads[3], 1.0);
    EXPECT_DOUBLE_EQ(gin[0], w2 * w1);
}

TEST(Backward, FiniteDifferencesForEveryLayerKindAndActivation) {
    Rng rng(9);
    for (Activation act : {Activation::linear, Activation::tanh, Activation::relu}) {
        const double tol = act == Activation::relu ? 1e-4 : 1e-6;
        for (int rep = 0; rep < 10; ++rep) {
            const std::size_t m = 1 + rng.uniform_index(4), s = 1 + rng.uniform_index(3);
            const std::size_t positions = 2 + rng.uniform_index(5), filters = 1 + rng.uniform_index(2);
            const std::size_t d = (positions - 1) * s + m;
            const std::vector<std::vector<LayerSpec>> stacks{
                {dense_spec(d, 5, act)},
                {windowed_spec(LayerKind::lcn1d, d, m, s, filters, act)},
                {windowed_spec(LayerKind::conv1d, d, m, s, filters, act)},
                {windowed_spec(LayerKind::lcn1d, d, m, s, filters, act), dropout_spec(positions * filters, 0.2),
                 dense_spec(positions * filters, 3, act, "head")},
            };
            for (const auto& specs : stacks) {
                NetworkWeights w;
                const auto net = Sequential::build(specs, w);
                Vector x;
                // Nudge away from relu kinks, where the derivative is not defined.
                do {
                    fill(w.values(), rng);
                    x = oracle::random_vector(d, rng);
                } while (act == Activation::relu && !clear_of_kinks(net, w, x, 1e-3));
                const Vector g = oracle::random_vector(specs.back().output_size(), rng);
                const auto r = check_gradients(net, w, x, g);
                ASSERT_LE(r.params, tol) << to_string(specs.front().kind) << " " << to_string(act);
                ASSERT_LE(r.input, tol) << to_string(specs.front().kind) << " " << to_string(act);
            }
        }
    }
}

TEST(Backward, ZeroUpstreamGradientGivesZeroGradients) {
    Rng rng(10);
    NetworkWeights w;
    const auto net = Sequential::build(
        std::vector{windowed_spec(LayerKind::lcn1d, 12, 4, 4, 2, Activation::tanh), dense_spec(6, 2, Activation::tanh)},
        w);
    fill(w.values(), rng);
    Tape tape;
    net.forward(w, oracle::random_vector(12, rng), Mode::eval, nullptr, tape);
    Vector grads(w.size(), 0.0);
    const Vector gin = net.backward(w, tape, Vector(2, 0.0), grads);
    for (double v : grads) EXPECT_EQ(v, 0.0);
    for (double v : gin) EXPECT_EQ(v, 0.0);
}

TEST(Backward, RequiresARecordedForwardPass) {
    NetworkWeights w;
    const auto net = Sequential::build(std::vector{dense_spec(2, 2, Activation::linear)}, w);
    Tape tape;
    Vector grads(w.size(), 0.0);
    EXPECT_THROW(net.backward(w, tape, Vector(2, 1.0), grads), DomainError);
    net.forward(w, Vector{1, 2}, Mode::eval, nullptr, tape);
    net.backward(w, tape, Vector(2, 1.0), grads);
    EXPECT_THROW(net.backward(w, tape, Vector(2, 1.0), grads), DomainError);
}

// --- Adam -----------------------------------------------------------------

TEST(Adam, FirstStepMovesByTheLearningRate) {
    AdamState st;
    Vector p{1.0, -2.0, 0.5};
    const Vector g{3.0, -0.02, 150.0};
    adam_step(st, p, g);
    EXPECT_NEAR((1.0 - p[0]) / st.lr, 1.0, 1e-3);
    EXPECT_NEAR((p[1] + 2.0) / st.lr, 1.0, 1e-3);
    EXPECT_NEAR((0.5 - p[2]) / st.lr, 1.0, 1e-3);
    EXPECT_EQ(st.step, 1);
}

TEST(Adam, ZeroGradientLeavesParametersUnchanged) {
    AdamState st;
    Vector p{1.0, 2.0};
    for (int i = 0; i < 100; ++i) adam_step(st, p, Vector{0.0, 0.0});
    EXPECT_EQ(p, (Vector{1.0, 2.0}));
}

TEST(Adam, DefaultsMatchKeras) {
    const AdamState st;
    EXPECT_EQ(st.lr, 0.001);
    EXPECT_EQ(st.beta1, 0.9);
    EXPECT_EQ(st.beta2, 0.999);
    EXPECT_EQ(st.epsilon, 1e-7);
}

TEST(Adam, QuadraticBowl) {
    // f(p) = sum c_i (p_i - t_i)^2 from the origin with the default step size.
    const Vector c{0.5, 1.0, 2.0, 4.0}, t{0.2, -0.15, 0.1, -0.05};
    const auto f = [&](const Vector& p) {
        double s = 0.0;
        for (std::size_t i = 0; i < p.size(); ++i) s += c[i] * (p[i] - t[i]) * (p[i] - t[i]);
        return s;
    };
    AdamState st;
    Vector p(4, 0.0), g(4);
    std::vector<double> loss{f(p)};
    for (int step = 0; step < 500; ++step) {
        for (std::size_t i = 0; i < 4; ++i) g[i] = 2.0 * c[i] * (p[i] - t[i]);
        adam_step(st, p, g);
        loss.push_back(f(p));
    }
    for (std::size_t i = 11; i < loss.size(); ++i) ASSERT_LE(loss[i], loss[i - 1]) << "step " << i;
    EXPECT_LT(loss.back(), 1e-4);
}

TEST(Adam, RejectsNonFiniteGradientsAndMisalignedMoments) {
    AdamState st;
    Vector p{1.0};
    EXPECT_THROW(adam_step(st, p, Vector{std::nan("")}), NumericError);
    EXPECT_THROW(adam_step(st, p, Vector{1.0, 2.0}), DimensionError);
    adam_step(st, p, Vector{1.0});
    Vector q{1.0, 2.0};
    EXPECT_THROW(adam_step(st, q, Vector{1.0, 1.0}), DimensionError);
}

// --- parameter counting and determinism -----------------------------------

TEST(ParameterCount, ClosedFormsPerLayerKind) {
    EXPECT_EQ(parameter_count(dense_spec(7, 3, Activation::linear)), 7u * 3u + 3u);
    EXPECT_EQ(parameter_count(windowed_spec(LayerKind::lcn1d, 100, 4, 4, 2, Activation::linear)), 25u * 2u * 5u);
    EXPECT_EQ(parameter_count(windowed_spec(LayerKind::conv1d, 100, 4, 4, 2, Activation::linear)), 2u * 5u);
    EXPECT_EQ(parameter_count(dropout_spec(10, 0.5)), 0u);
    LayerSpec e;
    e.kind = LayerKind::embedding;
    e.name = "e";
    e.vocabulary = 40;
    e.embedding_dim = 5;
    EXPECT_EQ(parameter_count(e), 200u);

    const std::vector specs{windowed_spec(LayerKind::lcn1d, 100, 4, 4, 1, Activation::tanh),
                            dropout_spec(25, 0.05), dense_spec(25, 1, Activation::linear)};
    NetworkWeights w;
    Sequential::build(specs, w);
    EXPECT_EQ(count_parameters(specs), w.size());
    EXPECT_EQ(w.size(), 125u + 26u);
}

TEST(Determinism, SameSeedSameWeightsAfterTraining) {
    const auto run = [](std::uint64_t seed) {
        NetworkWeights w;
        const auto net = Sequential::build(
            std::vector{windowed_spec(LayerKind::lcn1d, 16, 4, 4, 1, Activation::tanh), dropout_spec(4, 0.25),
                        dense_spec(4, 1, Activation::linear)},
            w);
        Rng init(Rng::derive(seed, 1)), drop(Rng::derive(seed, 3)), data(99);
        w.initialize(init);
        AdamState st;
        for (int step = 0; step < 200; ++step) {
            const Vector x = oracle::random_vector(16, data);
            Tape tape;
            const Vector y = net.forward(w, x, Mode::train, &drop, tape);
            Vector grads(w.size(), 0.0);
            net.backward(w, tape, Vector{2.0 * (y[0] - sum(x) / 16.0)}, grads);
            adam_step(st, w.values(), grads);
        }
        return std::vector<double>(w.values().begin(), w.values().end());
    };
    EXPECT_EQ(run(42), run(42));
    EXPECT_NE(run(42), run(43));
}

TEST(Initialization, GlorotBoundsZeroBiasesAndSmallEmbeddings) {
    NetworkWeights w;
    Sequential::build(std::vector{dense_spec(30, 20, Activation::linear)}, w);
    w.add("emb.embeddings", 10, 5, Init::embedding_uniform);
    Rng rng(11);
    w.initialize(rng);
    const double limit = std::sqrt(6.0 / 50.0);
    for (double v : w.block(0)) EXPECT_LE(std::abs(v), limit);
    for (double v : w.block(1)) EXPECT_EQ(v, 0.0);
    for (double v : w.block(2)) EXPECT_LE(std::abs(v), 0.05);
}
