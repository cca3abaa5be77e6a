#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace lcnet;
namespace fs = std::filesystem;

namespace {

SyntheticPanel poisson_panel() {
    GeneratorSpec g;
    g.n_populations = 3;
    g.n_ages = 12;
    g.n_years = 10;
    g.n_test_years = 3;
    g.noise = NoiseKind::poisson;
    g.exposure = 1e5;
    g.seed = 21;
    return generate(g);
}

} // namespace

TEST(Serialize, PanelRoundTripIsBitExact) {
    auto s = poisson_panel();
    s.panel.surfaces.begin()->second.exposures.reset();
    s.panel.surfaces.begin()->second.deaths.reset();
    s.panel.scaling = Scaling{-9.123456789012345, -0.1};
    const oracle::TempDir tmp("panel");
    const fs::path f = tmp / "panel.json";
    io::save_json(f, io::panel_json(s.panel));
    const PanelDataset back = io::panel_from(io::load_json(f));
    EXPECT_EQ(back.train_max_year, s.panel.train_max_year);
    EXPECT_EQ(back.ages, s.panel.ages);
    EXPECT_EQ(back.test_years, s.panel.test_years);
    EXPECT_EQ(back.scaling->y_min, s.panel.scaling->y_min);
    for (const auto& [id, surf] : s.panel.surfaces) {
        const auto& b = back.surfaces.at(id);
        EXPECT_EQ(b.log_rates, surf.log_rates);
        EXPECT_EQ(b.deaths.has_value(), surf.deaths.has_value());
        if (surf.deaths) {
            EXPECT_EQ(*b.deaths, *surf.deaths);
        }
        EXPECT_TRUE(b.imputed == surf.imputed);
    }
    // A second trip produces the same bytes.
    EXPECT_EQ(io::panel_json(back).dump(1), io::panel_json(s.panel).dump(1));
}

TEST(Serialize, ParametersSurviveWithNonFiniteEntries) {
    LcParameters p;
    p.id = {"ABC", Gender::female};
    p.ages = {0, 1, 2};
    p.years = {2000, 2001};
    p.a = {-1.0 / 3.0, 1e-300, 5e300};
    p.b = {0.1, 0.2, std::nan("")};
    p.k = {0.30000000000000004, -0.30000000000000004};
    p.normalized = true;
    const LcParameters q = io::params_from(io::json::parse(io::params_json(p).dump()));
    EXPECT_EQ(q.id, p.id);
    EXPECT_EQ(q.a, p.a);
    EXPECT_EQ(q.k, p.k);
    EXPECT_EQ(q.b[1], 0.2);
    EXPECT_TRUE(std::isnan(q.b[2]));
    EXPECT_TRUE(q.normalized);
}

TEST(Serialize, ClassicModelRoundTrip) {
    const auto s = poisson_panel();
    const auto m = fit_classic(s.panel, "lc-poisson");
    const auto back = io::classic_from(io::json::parse(io::classic_json(m).dump()));
    EXPECT_EQ(back.model, "lc-poisson");
    EXPECT_EQ(back.train_max_year, m.train_max_year);
    for (const auto& [id, p] : m.parameters) {
        EXPECT_EQ(back.parameters.at(id).a, p.a);
        EXPECT_EQ(back.parameters.at(id).b, p.b);
        EXPECT_EQ(back.parameters.at(id).k, p.k);
        EXPECT_EQ(back.diagnostics.at(id).objective, m.diagnostics.at(id).objective);
        EXPECT_EQ(back.diagnostics.at(id).converged, m.diagnostics.at(id).converged);
    }
}

TEST(Serialize, TrainingRunRoundTripRestoresTheNetwork) {
    const auto s = poisson_panel();
    NeuralLcConfig c;
    c.variant = NetworkVariant::fcn;
    c.hidden = 7;
    c.act_k1 = nn::Activation::tanh;
    c.epochs = 5;
    c.learning_rate = 0.003;
    const auto run = train(s.panel, c);
    const auto back = io::run_from(io::json::parse(io::run_json(run).dump()));
    EXPECT_TRUE(back.config.same_except_seed(run.config));
    EXPECT_EQ(back.seed, run.seed);
    EXPECT_EQ(back.countries, run.countries);
    EXPECT_EQ(back.weights, run.weights);
    EXPECT_EQ(back.loss_curve, run.loss_curve);
    EXPECT_EQ(back.scaling->y_max, run.scaling->y_max);
    // Same network, same predictions.
    const Vector curve(12, -5.0);
    EXPECT_EQ(restore_network(back).forward_curve(1, 0, curve), restore_network(run).forward_curve(1, 0, curve));
    EXPECT_EQ(training_loss(back, s.panel), training_loss(run, s.panel));
}

TEST(Serialize, RunWithTamperedLayoutIsRejected) {
    const auto s = poisson_panel();
    NeuralLcConfig c;
    c.epochs = 0;
    c.kernel = 2;
    c.stride = 2;
    c.hidden = 6;
    auto j = io::run_json(train(s.panel, c));
    auto bad = j;
    bad["weights"]["values"].erase(0);
    EXPECT_THROW(io::run_from(bad), DimensionError);
    bad = j;
    bad["config"]["hidden"] = 5;
    EXPECT_THROW(io::run_from(bad), DomainError);
    bad = j;
    bad["weights"]["values"][3] = nullptr;
    EXPECT_THROW(io::run_from(bad), DomainError);
    bad = j;
    bad["format"] = "lcnet-model";
    EXPECT_THROW(io::run_from(bad), DomainError);
}

TEST(Serialize, ConfigOverridesAndUnknownKeys) {
    const auto c = io::apply_config(NeuralLcConfig{}, io::json{{"hidden", 13}, {"act_k1", "tanh"}, {"dropout_k", 0.2}});
    EXPECT_EQ(c.hidden, 13u);
    EXPECT_EQ(c.act_k1, nn::Activation::tanh);
    EXPECT_EQ(c.dropout_k, 0.2);
    EXPECT_THROW(io::apply_config(NeuralLcConfig{}, io::json{{"hiden", 13}}), DomainError);
    const auto round = io::apply_config(NeuralLcConfig{}, io::config_json(c));
    EXPECT_TRUE(round.same_except_seed(c));
}

TEST(Serialize, TruthSidecarRoundTrip) {
    GeneratorSpec g;
    g.n_populations = 2;
    g.n_ages = 5;
    g.n_years = 6;
    g.sigma_k = 0.3;
    const auto s = generate(g);
    const auto back = io::truth_from(io::json::parse(io::truth_json(s, g).dump()));
    for (const auto& [id, t] : s.truth) {
        EXPECT_EQ(back.at(id).a, t.a);
        EXPECT_EQ(back.at(id).k, t.k);
        EXPECT_EQ(back.at(id).drift, t.drift);
    }
    const auto g2 = io::apply_generator(GeneratorSpec{}, io::generator_json(g));
    EXPECT_EQ(g2.n_ages, 5);
    EXPECT_EQ(g2.sigma_k, 0.3);
    EXPECT_THROW(io::apply_generator(GeneratorSpec{}, io::json{{"n_age", 3}}), DomainError);
}

TEST(Serialize, ShortestRoundTripNumbers) {
    EXPECT_EQ(to_text(0.95), "0.95");
    EXPECT_EQ(to_text(0.1 + 0.2), "0.30000000000000004");
    EXPECT_EQ(std::stod(to_text(1.0 / 3.0)), 1.0 / 3.0);
    EXPECT_EQ(to_text(-2.0), "-2");
}

TEST(Serialize, LoadingAMissingOrBrokenFileFails) {
    const oracle::TempDir tmp_dir("broken");
    const fs::path dir = tmp_dir.path();
    EXPECT_THROW(io::load_json(dir / "nope.json"), std::exception);
    io::write_text(dir / "bad.json", "{not json");
    EXPECT_THROW(io::load_json(dir / "bad.json"), std::exception);
}
