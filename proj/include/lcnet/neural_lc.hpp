#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "lcnet/data.hpp"
#include "lcnet/error.hpp"
#include "lcnet/lc_svd.hpp"
#include "lcnet/nn/adam.hpp"
#include "lcnet/nn/layers.hpp"
#include "lcnet/nn/weights.hpp"
#include "lcnet/rng.hpp"

namespace lcnet {

enum class NetworkVariant { fcn, lcn, cnn };
enum class LossKind { mse_scaled, poisson };

inline std::string to_string(NetworkVariant v) {
    switch (v) {
    case NetworkVariant::fcn: return "fcn";
    case NetworkVariant::lcn: return "lcn";
    case NetworkVariant::cnn: return "cnn";
    }
    return "?";
}

inline NetworkVariant parse_variant(const std::string& s) {
    if (s == "fcn") return NetworkVariant::fcn;
    if (s == "lcn") return NetworkVariant::lcn;
    if (s == "cnn" || s == "conv") return NetworkVariant::cnn;
    throw DomainError("unknown network variant '" + s + "'");
}

inline std::string to_string(LossKind l) { return l == LossKind::mse_scaled ? "mse" : "poisson"; }

inline LossKind parse_loss(const std::string& s) {
    if (s == "mse" || s == "mse-scaled") return LossKind::mse_scaled;
    if (s == "poisson") return LossKind::poisson;
    throw DomainError("unknown loss '" + s + "'");
}

struct NeuralLcConfig {
    NetworkVariant variant = NetworkVariant::lcn;
    std::size_t q_country_a = 5;
    std::size_t q_gender_a = 5;
    std::size_t q_country_b = 5;
    std::size_t q_gender_b = 5;
    std::size_t hidden = 25; ///< width of the first subnet-k layer
    std::size_t kernel = 4;
    std::size_t stride = 4;
    nn::Activation act_a = nn::Activation::linear;
    nn::Activation act_b = nn::Activation::linear;
    nn::Activation act_k1 = nn::Activation::linear;
    nn::Activation act_k2 = nn::Activation::linear;
    double dropout_a = 0.05; ///< on the concatenated subnet-a embeddings
    double dropout_b = 0.05; ///< on the concatenated subnet-b embeddings
    double dropout_k = 0.05; ///< on the subnet-k hidden layer
    LossKind loss = LossKind::mse_scaled;
    int epochs = 2000;
    std::size_t batch_size = 32; ///< 0 means full batch
    std::uint64_t seed = 1;
    double learning_rate = 0.001;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-7;

    /// e.g. "nlc-lcn-mse"
    std::string model_name() const { return "nlc-" + to_string(variant) + "-" + to_string(loss); }

    /// Everything except the seed (runs of one study must agree on this).
    bool same_except_seed(const NeuralLcConfig& o) const {
        NeuralLcConfig a = *this, b = o;
        a.seed = b.seed = 0;
        return a.variant == b.variant && a.q_country_a == b.q_country_a && a.q_gender_a == b.q_gender_a &&
               a.q_country_b == b.q_country_b && a.q_gender_b == b.q_gender_b && a.hidden == b.hidden &&
               a.kernel == b.kernel && a.stride == b.stride && a.act_a == b.act_a && a.act_b == b.act_b &&
               a.act_k1 == b.act_k1 && a.act_k2 == b.act_k2 && a.dropout_a == b.dropout_a &&
               a.dropout_b == b.dropout_b && a.dropout_k == b.dropout_k && a.loss == b.loss &&
               a.epochs == b.epochs && a.batch_size == b.batch_size && a.learning_rate == b.learning_rate &&
               a.beta1 == b.beta1 && a.beta2 == b.beta2 && a.epsilon == b.epsilon;
    }
};

/// Layer graph of the three-subnet model, in parameter-registration order.
struct NetworkSpec {
    NeuralLcConfig config;
    std::size_t n_countries = 0;
    std::size_t n_genders = kGenderCount;
    std::size_t n_ages = 0;
    std::vector<nn::LayerSpec> layers;

    std::size_t parameter_count() const { return nn::count_parameters(layers); }

    const nn::LayerSpec& layer(const std::string& name) const {
        for (const auto& l : layers)
            if (l.name == name) return l;
        throw DomainError("network has no layer '" + name + "'");
    }
};

/// subnet-a: embed(country) ++ embed(gender) -> dropout -> dense(ages)
/// subnet-b: same shape, own weights
/// subnet-k: dense(hidden) | lcn1d | conv1d -> dropout -> dense(1)
/// output:   a + b * k
inline NetworkSpec build_network(const NeuralLcConfig& cfg, std::size_t n_countries, std::size_t n_genders,
                                 std::size_t n_ages) {
    using nn::LayerKind;
    using nn::LayerSpec;
    if (n_countries == 0 || n_genders == 0 || n_ages == 0) throw DomainError("build_network: sizes must be positive");
    NetworkSpec ns{cfg, n_countries, n_genders, n_ages, {}};
    auto embedding = [](std::string name, std::size_t vocab, std::size_t dim) {
        LayerSpec l;
        l.kind = LayerKind::embedding;
        l.name = std::move(name);
        l.vocabulary = vocab;
        l.embedding_dim = dim;
        return l;
    };
    auto simple = [](LayerKind kind, std::string name, std::size_t input) {
        LayerSpec l;
        l.kind = kind;
        l.name = std::move(name);
        l.input = input;
        return l;
    };
    auto dense = [](std::string name, std::size_t input, std::size_t units, nn::Activation act) {
        LayerSpec l;
        l.kind = LayerKind::dense;
        l.name = std::move(name);
        l.input = input;
        l.units = units;
        l.activation = act;
        return l;
    };
    auto dropout = [](std::string name, std::size_t input, double rate) {
        LayerSpec l;
        l.kind = LayerKind::dropout;
        l.name = std::move(name);
        l.input = input;
        l.rate = rate;
        return l;
    };

    for (const char tag : {'a', 'b'}) {
        const std::string t(1, tag);
        const std::size_t qc = tag == 'a' ? cfg.q_country_a : cfg.q_country_b;
        const std::size_t qg = tag == 'a' ? cfg.q_gender_a : cfg.q_gender_b;
        ns.layers.push_back(embedding("embed_country_" + t, n_countries, qc));
        ns.layers.push_back(embedding("embed_gender_" + t, n_genders, qg));
        ns.layers.push_back(simple(LayerKind::concat, "concat_" + t, qc + qg));
        ns.layers.push_back(dropout("dropout_" + t, qc + qg, tag == 'a' ? cfg.dropout_a : cfg.dropout_b));
        ns.layers.push_back(dense("dense_" + t, qc + qg, n_ages, tag == 'a' ? cfg.act_a : cfg.act_b));
    }
    if (cfg.variant == NetworkVariant::fcn) {
        ns.layers.push_back(dense("k1", n_ages, cfg.hidden, cfg.act_k1));
    } else {
        LayerSpec l;
        l.kind = cfg.variant == NetworkVariant::lcn ? LayerKind::lcn1d : LayerKind::conv1d;
        l.name = "k1";
        l.input = n_ages;
        l.kernel = cfg.kernel;
        l.stride = cfg.stride;
        l.filters = 1;
        l.activation = cfg.act_k1;
        if (l.positions() != cfg.hidden)
            throw DomainError("build_network: (ages - kernel)/stride + 1 = " + std::to_string(l.positions()) +
                              " does not equal the hidden width " + std::to_string(cfg.hidden));
        ns.layers.push_back(l);
    }
    ns.layers.push_back(dropout("dropout_k", cfg.hidden, cfg.dropout_k));
    ns.layers.push_back(dense("k2", cfg.hidden, 1, cfg.act_k2));
    ns.layers.push_back(simple(LayerKind::scalar_multiply_add, "output", n_ages));
    for (const auto& l : ns.layers) l.validate();
    return ns;
}

/// Instantiated network with its flat weight store.
class NeuralLcNetwork {
public:
    explicit NeuralLcNetwork(NetworkSpec spec) : spec_(std::move(spec)) {
        // Embeddings first, then the dense heads, then subnet-k.
        emb_country_a_ = nn::Embedding::create(spec_.layer("embed_country_a"), weights_);
        emb_gender_a_ = nn::Embedding::create(spec_.layer("embed_gender_a"), weights_);
        emb_country_b_ = nn::Embedding::create(spec_.layer("embed_country_b"), weights_);
        emb_gender_b_ = nn::Embedding::create(spec_.layer("embed_gender_b"), weights_);
        head_a_ = nn::Sequential::build(std::vector<nn::LayerSpec>{spec_.layer("dropout_a"), spec_.layer("dense_a")},
                                        weights_);
        head_b_ = nn::Sequential::build(std::vector<nn::LayerSpec>{spec_.layer("dropout_b"), spec_.layer("dense_b")},
                                        weights_);
        subnet_k_ = nn::Sequential::build(
            std::vector<nn::LayerSpec>{spec_.layer("k1"), spec_.layer("dropout_k"), spec_.layer("k2")}, weights_);
        if (weights_.size() != spec_.parameter_count())
            throw DomainError("network weight layout does not match the analytic parameter count");
    }

    const NetworkSpec& spec() const noexcept { return spec_; }
    nn::NetworkWeights& weights() noexcept { return weights_; }
    const nn::NetworkWeights& weights() const noexcept { return weights_; }
    std::size_t n_ages() const noexcept { return spec_.n_ages; }

    void initialize(std::uint64_t seed) {
        Rng rng(Rng::derive(seed, 1));
        weights_.initialize(rng);
    }

    /// Everything backward() needs from one forward pass.
    struct Trace {
        std::size_t country = 0, gender = 0;
        nn::Tape tape_a, tape_b, tape_k;
        nn::Vector fa, fb;
        double kappa = 0.0;
        bool recorded = false;
    };

    nn::Vector forward(std::size_t country, std::size_t gender, std::span<const double> curve, nn::Mode mode,
                       Rng* rng, Trace& tr) const {
        check_inputs(country, gender, curve);
        tr.country = country;
        tr.gender = gender;
        const auto za = nn::concat(emb_country_a_.lookup(weights_, country), emb_gender_a_.lookup(weights_, gender));
        const auto zb = nn::concat(emb_country_b_.lookup(weights_, country), emb_gender_b_.lookup(weights_, gender));
        tr.fa = head_a_.forward(weights_, za, mode, rng, tr.tape_a);
        tr.fb = head_b_.forward(weights_, zb, mode, rng, tr.tape_b);
        tr.kappa = subnet_k_.forward(weights_, curve, mode, rng, tr.tape_k)[0];
        tr.recorded = true;
        return nn::scalar_multiply_add(tr.fa, tr.fb, tr.kappa);
    }

    /// Accumulate d(loss)/d(weights) given d(loss)/d(output curve).
    void backward(Trace& tr, std::span<const double> gout, std::span<double> grads) const {
        if (!tr.recorded) throw DomainError("backward: no recorded forward pass");
        if (gout.size() != spec_.n_ages) throw DimensionError("backward: upstream gradient length");
        nn::Vector gfb(gout.size());
        double gkappa = 0.0;
        for (std::size_t x = 0; x < gout.size(); ++x) {
            gfb[x] = gout[x] * tr.kappa;
            gkappa += gout[x] * tr.fb[x];
        }
        const auto gza = head_a_.backward(weights_, tr.tape_a, gout, grads);
        const auto gzb = head_b_.backward(weights_, tr.tape_b, gfb, grads);
        const double gk[1] = {gkappa};
        subnet_k_.backward(weights_, tr.tape_k, gk, grads);
        const std::size_t qca = spec_.config.q_country_a, qcb = spec_.config.q_country_b;
        emb_country_a_.backward(weights_, tr.country, std::span(gza).first(qca), grads);
        emb_gender_a_.backward(weights_, tr.gender, std::span(gza).subspan(qca), grads);
        emb_country_b_.backward(weights_, tr.country, std::span(gzb).first(qcb), grads);
        emb_gender_b_.backward(weights_, tr.gender, std::span(gzb).subspan(qcb), grads);
        tr.recorded = false;
    }

    /// Eval-mode prediction on the model's response scale.
    nn::Vector forward_curve(std::size_t country, std::size_t gender, std::span<const double> curve) const {
        Trace tr;
        return forward(country, gender, curve, nn::Mode::eval, nullptr, tr);
    }

    nn::Vector subnet_a(std::size_t country, std::size_t gender) const {
        nn::Tape tape;
        return head_a_.forward(weights_,
                               nn::concat(emb_country_a_.lookup(weights_, country), emb_gender_a_.lookup(weights_, gender)),
                               nn::Mode::eval, nullptr, tape);
    }

    nn::Vector subnet_b(std::size_t country, std::size_t gender) const {
        nn::Tape tape;
        return head_b_.forward(weights_,
                               nn::concat(emb_country_b_.lookup(weights_, country), emb_gender_b_.lookup(weights_, gender)),
                               nn::Mode::eval, nullptr, tape);
    }

    double subnet_k(std::span<const double> curve) const {
        if (curve.size() != spec_.n_ages) throw DimensionError("subnet_k: curve length");
        nn::Tape tape;
        return subnet_k_.forward(weights_, curve, nn::Mode::eval, nullptr, tape)[0];
    }

private:
    void check_inputs(std::size_t country, std::size_t gender, std::span<const double> curve) const {
        if (country >= spec_.n_countries) throw DomainError("country index out of range");
        if (gender >= spec_.n_genders) throw DomainError("gender index out of range");
        if (curve.size() != spec_.n_ages) throw DimensionError("input curve length does not match the age grid");
    }

    NetworkSpec spec_;
    nn::NetworkWeights weights_;
    nn::Embedding emb_country_a_, emb_gender_a_, emb_country_b_, emb_gender_b_;
    nn::Sequential head_a_, head_b_, subnet_k_;
};

// ---------------------------------------------------------------------------
// Training data and losses

struct TrainingExample {
    PopulationId id;
    std::size_t country = 0;
    std::size_t gender = 0;
    int year = 0;
    nn::Vector input;  ///< log-rate curve
    nn::Vector target; ///< log-rates, MinMax-scaled for the MSE loss
    nn::Vector deaths;
    nn::Vector exposures;
};

inline std::map<std::string, std::size_t> country_index(const std::vector<std::string>& countries) {
    std::map<std::string, std::size_t> idx;
    for (std::size_t i = 0; i < countries.size(); ++i) idx[countries[i]] = i;
    return idx;
}

/// One example per (population, training year).
inline std::vector<TrainingExample> make_examples(const PanelDataset& panel, LossKind loss,
                                                  const std::vector<std::string>& countries) {
    if (loss == LossKind::mse_scaled && !panel.scaling)
        throw DomainError("make_examples: the MSE loss needs a MinMax-scaled panel");
    const auto cidx = country_index(countries);
    std::vector<TrainingExample> out;
    for (const auto& [id, s] : panel.surfaces) {
        auto cit = cidx.find(id.country);
        if (cit == cidx.end()) throw DomainError("make_examples: unknown country " + id.country);
        if (loss == LossKind::poisson && !s.has_counts())
            throw DomainError(id.label() + ": Poisson loss needs deaths and exposures");
        for (int year : panel.training_years(id)) {
            const std::size_t j = s.year_index(year);
            TrainingExample ex;
            ex.id = id;
            ex.country = cit->second;
            ex.gender = static_cast<std::size_t>(id.gender);
            ex.year = year;
            ex.input.resize(s.ages.size());
            for (std::size_t i = 0; i < s.ages.size(); ++i) ex.input[i] = s.log_rates(i, j);
            if (loss == LossKind::mse_scaled) {
                ex.target.resize(ex.input.size());
                for (std::size_t i = 0; i < ex.input.size(); ++i) ex.target[i] = panel.scaling->scale(ex.input[i]);
            } else {
                ex.deaths.resize(s.ages.size());
                ex.exposures.resize(s.ages.size());
                for (std::size_t i = 0; i < s.ages.size(); ++i) {
                    const double d = (*s.deaths)(i, j), e = (*s.exposures)(i, j);
                    if (!std::isfinite(d) || d < 0.0 || !std::isfinite(e) || e <= 0.0)
                        throw DomainError(id.label() + ": missing or invalid deaths/exposures at age " +
                                          std::to_string(s.ages[i]) + ", year " + std::to_string(year));
                    ex.deaths[i] = d;
                    ex.exposures[i] = e;
                }
            }
            out.push_back(std::move(ex));
        }
    }
    return out;
}

/// Per-cell loss and its derivative with respect to the prediction.
/// MSE: (y - yhat)^2. Poisson: E exp(m) - D m (constant dropped).
inline double cell_loss(LossKind loss, const TrainingExample& ex, std::size_t x, double pred, double* dpred) {
    if (loss == LossKind::mse_scaled) {
        const double r = pred - ex.target[x];
        if (dpred) *dpred = 2.0 * r;
        return r * r;
    }
    const double mu = ex.exposures[x] * std::exp(pred);
    if (!std::isfinite(mu))
        throw NumericError("Poisson loss overflow at " + ex.id.label() + " year " + std::to_string(ex.year));
    if (dpred) *dpred = mu - ex.deaths[x];
    return mu - ex.deaths[x] * pred;
}

enum class Reduction { sum, mean };

/// Loss over `batch` in eval mode, optionally accumulating its gradient.
inline double batch_loss(const NeuralLcNetwork& net, LossKind loss, std::span<const TrainingExample* const> batch,
                         std::span<double> grads = {}, Reduction red = Reduction::mean) {
    if (batch.empty()) throw DomainError("batch_loss: empty batch");
    const double scale = red == Reduction::mean ? 1.0 / static_cast<double>(batch.size() * net.n_ages()) : 1.0;
    double total = 0.0;
    NeuralLcNetwork::Trace tr;
    nn::Vector gout(net.n_ages());
    for (const TrainingExample* ex : batch) {
        const auto pred = net.forward(ex->country, ex->gender, ex->input, nn::Mode::eval, nullptr, tr);
        for (std::size_t x = 0; x < pred.size(); ++x) {
            double d = 0.0;
            total += cell_loss(loss, *ex, x, pred[x], grads.empty() ? nullptr : &d);
            gout[x] = d * scale;
        }
        if (!grads.empty()) net.backward(tr, gout, grads);
    }
    return total * scale;
}

/// Sum over batch cells of E exp(m) - D m, the constant dropped.
inline double poisson_loss(const NeuralLcNetwork& net, std::span<const TrainingExample* const> batch,
                           std::span<double> grads = {}) {
    return batch_loss(net, LossKind::poisson, batch, grads, Reduction::sum);
}

// ---------------------------------------------------------------------------
// Training

class TrainingError : public NumericError {
public:
    TrainingError(const std::string& what, int epoch) : NumericError(what), epoch_(epoch) {}
    int epoch() const noexcept { return epoch_; }

private:
    int epoch_;
};

struct TrainingRun {
    NeuralLcConfig config;
    std::uint64_t seed = 0;
    std::vector<std::string> countries; ///< country label order used by the embeddings
    std::size_t n_ages = 0;
    std::optional<Scaling> scaling;
    std::vector<double> loss_curve; ///< [0] initial eval loss, [e] mean training loss of epoch e
    std::vector<double> weights;
    std::map<PopulationId, LcParameters> parameters;
    double wall_seconds = 0.0; ///< not serialized

    std::string model_name() const { return config.model_name(); }
};

inline NeuralLcNetwork make_network(const NeuralLcConfig& cfg, const std::vector<std::string>& countries,
                                    std::size_t n_ages) {
    return NeuralLcNetwork(build_network(cfg, countries.size(), kGenderCount, n_ages));
}

/// Rebuild the trained network held by a run.
inline NeuralLcNetwork restore_network(const TrainingRun& run) {
    NeuralLcNetwork net = make_network(run.config, run.countries, run.n_ages);
    net.weights().assign(run.weights);
    return net;
}

/// NN estimates of (a, b, k) per population, mapped back to the log scale
/// for the MinMax-scaled model and then normalized.
inline std::map<PopulationId, LcParameters> extract_parameters(const NeuralLcNetwork& net, const PanelDataset& panel,
                                                               const std::vector<std::string>& countries,
                                                               LossKind loss) {
    const auto cidx = country_index(countries);
    std::map<PopulationId, LcParameters> out;
    for (const auto& [id, s] : panel.surfaces) {
        auto cit = cidx.find(id.country);
        if (cit == cidx.end()) throw DomainError("extract_parameters: unknown country " + id.country);
        const std::size_t c = cit->second, g = static_cast<std::size_t>(id.gender);
        LcParameters p;
        p.id = id;
        p.ages = s.ages;
        p.years = panel.training_years(id);
        p.a = net.subnet_a(c, g);
        p.b = net.subnet_b(c, g);
        nn::Vector curve(s.ages.size());
        for (int year : p.years) {
            const std::size_t j = s.year_index(year);
            for (std::size_t i = 0; i < s.ages.size(); ++i) curve[i] = s.log_rates(i, j);
            p.k.push_back(net.subnet_k(curve));
        }
        if (loss == LossKind::mse_scaled) {
            if (!panel.scaling) throw DomainError("extract_parameters: scaled model needs the panel scaling");
            const double range = panel.scaling->range();
            for (double& v : p.a) v = v * range + panel.scaling->y_min;
            for (double& v : p.k) v *= range;
        }
        out.emplace(id, normalize_constraints(std::move(p)));
    }
    return out;
}

/// Predicted log-rate curve on the original log scale.
inline nn::Vector predict_log_curve(const NeuralLcNetwork& net, const std::optional<Scaling>& scaling, LossKind loss,
                                    std::size_t country, std::size_t gender, std::span<const double> curve) {
    auto out = net.forward_curve(country, gender, curve);
    if (loss == LossKind::mse_scaled) {
        if (!scaling) throw DomainError("predict_log_curve: scaled model needs the panel scaling");
        for (double& v : out) v = scaling->unscale(v);
    }
    return out;
}

/// Seeded mini-batch Adam training followed by parameter extraction.
inline TrainingRun train(const PanelDataset& panel_in, const NeuralLcConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    PanelDataset panel = panel_in;
    if (cfg.loss == LossKind::mse_scaled && !panel.scaling) panel = minmax_fit_transform(std::move(panel));
    if (cfg.epochs < 0) throw DomainError("train: epochs must be nonnegative");

    TrainingRun run;
    run.config = cfg;
    run.seed = cfg.seed;
    run.countries = panel.countries();
    run.n_ages = panel.ages.size();
    if (cfg.loss == LossKind::mse_scaled) run.scaling = panel.scaling;

    NeuralLcNetwork net = make_network(cfg, run.countries, run.n_ages);
    net.initialize(cfg.seed);

    const auto examples = make_examples(panel, cfg.loss, run.countries);
    if (examples.empty()) throw DomainError("train: no training examples");
    std::vector<const TrainingExample*> all;
    for (const auto& e : examples) all.push_back(&e);

    run.loss_curve.push_back(batch_loss(net, cfg.loss, all));
    if (!std::isfinite(run.loss_curve.back())) throw TrainingError("train: non-finite initial loss", 0);

    Rng shuffle_rng(Rng::derive(cfg.seed, 2));
    Rng dropout_rng(Rng::derive(cfg.seed, 3));
    nn::AdamState adam;
    adam.lr = cfg.learning_rate;
    adam.beta1 = cfg.beta1;
    adam.beta2 = cfg.beta2;
    adam.epsilon = cfg.epsilon;

    const std::size_t n = examples.size();
    const std::size_t batch = cfg.batch_size == 0 ? n : std::min(cfg.batch_size, n);
    std::vector<std::size_t> order(n);
    std::vector<double> grads(net.weights().size());
    nn::Vector gout(run.n_ages);
    NeuralLcNetwork::Trace tr;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        shuffle(order, shuffle_rng);
        double epoch_loss = 0.0;
        for (std::size_t start = 0; start < n; start += batch) {
            const std::size_t stop = std::min(n, start + batch);
            const double cells = static_cast<double>((stop - start) * run.n_ages);
            std::fill(grads.begin(), grads.end(), 0.0);
            for (std::size_t i = start; i < stop; ++i) {
                const TrainingExample& ex = examples[order[i]];
                nn::Vector pred;
                try {
                    pred = net.forward(ex.country, ex.gender, ex.input, nn::Mode::train, &dropout_rng, tr);
                    for (std::size_t x = 0; x < pred.size(); ++x) {
                        double d = 0.0;
                        epoch_loss += cell_loss(cfg.loss, ex, x, pred[x], &d);
                        gout[x] = d / cells;
                    }
                } catch (const NumericError& e) {
                    throw TrainingError(std::string("train: divergence in epoch ") + std::to_string(epoch) + ": " +
                                            e.what(),
                                        epoch);
                }
                net.backward(tr, gout, grads);
            }
            try {
                nn::adam_step(adam, net.weights().values(), grads);
            } catch (const NumericError&) {
                throw TrainingError("train: non-finite gradient in epoch " + std::to_string(epoch), epoch);
            }
        }
        const double mean_loss = epoch_loss / static_cast<double>(n * run.n_ages);
        if (!std::isfinite(mean_loss))
            throw TrainingError("train: non-finite loss in epoch " + std::to_string(epoch), epoch);
        run.loss_curve.push_back(mean_loss);
    }

    const auto w = net.weights().values();
    run.weights.assign(w.begin(), w.end());
    run.parameters = extract_parameters(net, panel, run.countries, cfg.loss);
    run.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return run;
}

/// Eval-mode mean per-cell training loss of a trained run.
inline double training_loss(const TrainingRun& run, const PanelDataset& panel_in) {
    PanelDataset panel = panel_in;
    if (run.config.loss == LossKind::mse_scaled) panel.scaling = run.scaling;
    const auto net = restore_network(run);
    const auto examples = make_examples(panel, run.config.loss, run.countries);
    std::vector<const TrainingExample*> all;
    for (const auto& e : examples) all.push_back(&e);
    return batch_loss(net, run.config.loss, all);
}

} // namespace lcnet
