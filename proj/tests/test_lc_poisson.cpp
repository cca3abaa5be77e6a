#include <gtest/gtest.h>

#include <algorithm>

#include "oracles.hpp"

using namespace lcnet;

namespace {

/// A normalized Gompertz-like generator with a declining period index.
LcParameters generator(std::size_t nx, std::size_t nt, Rng& rng) {
    LcParameters p;
    for (std::size_t x = 0; x < nx; ++x) {
        p.ages.push_back(static_cast<int>(x));
        p.a.push_back(-7.5 + 5.5 * static_cast<double>(x) / static_cast<double>(nx) + rng.normal(0.0, 0.1));
        p.b.push_back(rng.uniform(0.5, 1.5));
    }
    for (std::size_t t = 0; t < nt; ++t) {
        p.years.push_back(static_cast<int>(2000 + t));
        p.k.push_back(-1.0 * static_cast<double>(t) + rng.normal(0.0, 0.5));
    }
    return normalize_constraints(p);
}

Matrix constant(std::size_t r, std::size_t c, double v) { return Matrix(r, c, v); }

Matrix sampled_deaths(const Matrix& exposures, const LcParameters& p, Rng& rng) {
    Matrix d = expected_deaths(exposures, p);
    for (double& v : d.data()) v = sample_poisson(v, rng);
    return d;
}

double parameter_error(const LcParameters& fit, const LcParameters& truth) {
    double e = 0.0;
    for (std::size_t x = 0; x < truth.a.size(); ++x) {
        e = std::max(e, std::abs(fit.a[x] - truth.a[x]));
        e = std::max(e, std::abs(fit.b[x] - truth.b[x]));
    }
    for (std::size_t t = 0; t < truth.k.size(); ++t) e = std::max(e, std::abs(fit.k[t] - truth.k[t]));
    return e;
}

} // namespace

TEST(PoissonDeviance, ClosedForms) {
    LcParameters p;
    p.ages = {0};
    p.years = {0};
    p.a = {std::log(2.0)};
    p.b = {1.0};
    p.k = {0.0};
    EXPECT_DOUBLE_EQ(poisson_deviance(constant(1, 1, 0.0), constant(1, 1, 1.0), p), 4.0);
    EXPECT_DOUBLE_EQ(poisson_deviance(constant(1, 1, 2.0), constant(1, 1, 1.0), p), 0.0);
}

TEST(PoissonDeviance, SaturatedFitIsZero) {
    Rng rng(1);
    const auto truth = generator(6, 5, rng);
    const Matrix e = constant(6, 5, 1e4);
    EXPECT_NEAR(poisson_deviance(expected_deaths(e, truth), e, truth), 0.0, 1e-9);
}

TEST(PoissonDeviance, MatchesDirectSummation) {
    Rng rng(2);
    for (int rep = 0; rep < 20; ++rep) {
        const auto truth = generator(7, 6, rng);
        Matrix e(7, 6);
        for (double& v : e.data()) v = rng.uniform(100.0, 5000.0);
        const Matrix d = sampled_deaths(e, truth, rng);
        double ref = 0.0;
        for (std::size_t x = 0; x < 7; ++x)
            for (std::size_t t = 0; t < 6; ++t) {
                const double mu = e(x, t) * std::exp(truth.a[x] + truth.b[x] * truth.k[t]);
                const double dd = d(x, t);
                ref += 2.0 * (dd == 0.0 ? mu : dd * std::log(dd / mu) - dd + mu);
            }
        EXPECT_NEAR(poisson_deviance(d, e, truth), ref, 1e-9 * std::max(1.0, ref));
    }
}

TEST(FitLcPoisson, ExactCountsRecoverTheGenerator) {
    Rng rng(3);
    for (int rep = 0; rep < 5; ++rep) {
        const auto truth = generator(12, 10, rng);
        Matrix e(12, 10);
        for (double& v : e.data()) v = rng.uniform(1e3, 1e5);
        const auto fit = fit_lc_poisson(expected_deaths(e, truth), e);
        EXPECT_TRUE(fit.state.converged);
        EXPECT_LE(parameter_error(fit.params, truth), 1e-6) << "instance " << rep;
    }
}

TEST(FitLcPoisson, FlatPeriodIndexGivesAgeProfileOnly) {
    Rng rng(4);
    auto truth = generator(8, 6, rng);
    std::fill(truth.k.begin(), truth.k.end(), 0.0);
    const Matrix e = constant(8, 6, 2e4);
    const auto fit = fit_lc_poisson(expected_deaths(e, truth), e);
    for (double k : fit.params.k) EXPECT_NEAR(k, 0.0, 1e-6);
    for (std::size_t x = 0; x < 8; ++x)
        for (std::size_t t = 0; t < 6; ++t) EXPECT_NEAR(fit.params.fitted(x, t), truth.a[x], 1e-6);
}

TEST(FitLcPoisson, ScoreVanishesAtTheSolution) {
    Rng rng(5);
    for (int rep = 0; rep < 20; ++rep) {
        const auto truth = generator(5, 4, rng);
        const Matrix e = constant(5, 4, 5e4);
        const Matrix d = sampled_deaths(e, truth, rng);
        const auto fit = fit_lc_poisson(d, e);
        ASSERT_TRUE(fit.state.converged) << "instance " << rep;
        const Vector g = poisson_score(d, e, fit.params);
        double total = 0.0;
        for (double v : d.data()) total += v;
        for (double v : g) ASSERT_LE(std::abs(v), 1e-6 * total) << "instance " << rep;
    }
}

TEST(FitLcPoisson, ScoreVanishesOnFullAgeGrids) {
    // 100 ages: with sum(b) = 1 the curvatures of b and k differ by many
    // orders of magnitude.
    GeneratorSpec g;
    g.n_populations = 4;
    g.noise = NoiseKind::poisson;
    g.seed = 12;
    const auto s = generate(g);
    for (const auto& [id, surf] : s.panel.surfaces) {
        const auto years = s.panel.training_years(id);
        const Matrix d = surf.columns(*surf.deaths, years), e = surf.columns(*surf.exposures, years);
        const auto fit = fit_lc_poisson(d, e);
        ASSERT_TRUE(fit.state.converged) << id.label();
        double total = 0.0;
        for (double v : d.data()) total += v;
        for (double v : poisson_score(d, e, fit.params)) ASSERT_LE(std::abs(v), 1e-6 * total) << id.label();
    }
}

TEST(FitLcPoisson, NoFiniteMaximumIsReportedAsNotConverged) {
    // One death in the first year and none after: the likelihood keeps
    // rising as b[0] k[t] runs off to minus infinity for t > 0.
    Matrix d(3, 4);
    const double rows[3][4] = {{2, 0, 0, 0}, {30, 25, 22, 20}, {150, 140, 120, 110}};
    for (std::size_t x = 0; x < 3; ++x)
        for (std::size_t t = 0; t < 4; ++t) d(x, t) = rows[x][t];
    PoissonOptions opt;
    opt.max_iter = 500;
    const auto fit = fit_lc_poisson(d, constant(3, 4, 1e4), std::nullopt, opt);
    EXPECT_FALSE(fit.state.converged);
    EXPECT_EQ(fit.state.iteration, 500);
}

TEST(FitLcPoisson, ScoreMatchesFiniteDifferences) {
    Rng rng(6);
    const auto truth = generator(5, 4, rng);
    const Matrix e = constant(5, 4, 1e3);
    const Matrix d = sampled_deaths(e, truth, rng);
    LcParameters p = truth;
    Vector flat;
    flat.insert(flat.end(), p.a.begin(), p.a.end());
    flat.insert(flat.end(), p.b.begin(), p.b.end());
    flat.insert(flat.end(), p.k.begin(), p.k.end());
    const auto objective = [&] {
        LcParameters q = p;
        std::copy_n(flat.begin(), 5, q.a.begin());
        std::copy_n(flat.begin() + 5, 5, q.b.begin());
        std::copy_n(flat.begin() + 10, 4, q.k.begin());
        return poisson_log_likelihood(d, e, q);
    };
    const Vector numeric = oracle::fd_gradient(objective, flat, 1e-6);
    EXPECT_LE(oracle::relative_error(poisson_score(d, e, p), numeric), 1e-6);
}

TEST(FitLcPoisson, DevianceNeverIncreases) {
    Rng rng(7);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t nx = 3 + rng.uniform_index(20), nt = 3 + rng.uniform_index(15);
        const auto truth = generator(nx, nt, rng);
        Matrix e(nx, nt);
        for (double& v : e.data()) v = rng.uniform(50.0, 5e4);
        const auto fit = fit_lc_poisson(sampled_deaths(e, truth, rng), e);
        const auto& h = fit.state.deviance_history;
        ASSERT_GE(h.size(), 2u);
        for (std::size_t i = 1; i < h.size(); ++i) ASSERT_LE(h[i], h[i - 1] + 1e-10) << "instance " << rep;
        EXPECT_TRUE(std::isfinite(fit.state.deviance));
    }
}

TEST(FitLcPoisson, NormalizationLeavesFittedDeathsUnchanged) {
    Rng rng(8);
    const auto truth = generator(10, 8, rng);
    const Matrix e = constant(10, 8, 1e4);
    LcParameters raw = truth;
    for (double& b : raw.b) b *= 2.5;
    for (double& k : raw.k) k /= 2.5;
    for (std::size_t x = 0; x < raw.a.size(); ++x) raw.a[x] -= raw.b[x] * 0.7;
    for (double& k : raw.k) k += 0.7;
    const Matrix before = expected_deaths(e, raw), after = expected_deaths(e, normalize_constraints(raw));
    for (std::size_t i = 0; i < before.size(); ++i)
        EXPECT_LE(std::abs(before.data()[i] - after.data()[i]), 1e-10 * before.data()[i]);
}

TEST(FitLcPoisson, LikelihoodImprovesOnTheSvdStart) {
    Rng rng(9);
    for (int rep = 0; rep < 30; ++rep) {
        const auto truth = generator(10, 8, rng);
        Matrix e(10, 8);
        for (double& v : e.data()) v = rng.uniform(20.0, 2e3);
        const Matrix d = sampled_deaths(e, truth, rng);
        Matrix start(10, 8);
        for (std::size_t i = 0; i < d.size(); ++i) start.data()[i] = std::log((d.data()[i] + 0.5) / e.data()[i]);
        const auto init = fit_lc_svd(start);
        const auto fit = fit_lc_poisson(d, e, init);
        EXPECT_GE(poisson_log_likelihood(d, e, fit.params), poisson_log_likelihood(d, e, init));
    }
}

TEST(FitLcPoisson, MoreExposureGivesSmallerError) {
    std::vector<double> ratios;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        Rng rng(seed);
        const auto truth = generator(15, 12, rng);
        const Matrix small = constant(15, 12, 1e3), large = constant(15, 12, 1e5);
        const double e1 = parameter_error(fit_lc_poisson(sampled_deaths(small, truth, rng), small).params, truth);
        const double e2 = parameter_error(fit_lc_poisson(sampled_deaths(large, truth, rng), large).params, truth);
        ratios.push_back(e2 / e1);
    }
    std::nth_element(ratios.begin(), ratios.begin() + 10, ratios.end());
    EXPECT_LT(ratios[10], 0.5);
}

TEST(FitLcPoisson, InputValidation) {
    const Matrix e = constant(3, 3, 100.0);
    EXPECT_THROW(fit_lc_poisson(constant(3, 3, -1.0), e), DomainError);
    EXPECT_THROW(fit_lc_poisson(constant(3, 3, 1.0), constant(3, 3, 0.0)), DomainError);
    EXPECT_THROW(fit_lc_poisson(constant(1, 3, 1.0), constant(1, 3, 1.0)), DomainError);
    EXPECT_THROW(fit_lc_poisson(constant(3, 3, 1.0), constant(3, 2, 1.0)), DimensionError);
}

TEST(FitLcPoisson, OverflowNamesTheCell) {
    LcParameters p;
    p.ages = {0, 1};
    p.years = {0, 1};
    p.a = {800.0, 0.0};
    p.b = {0.5, 0.5};
    p.k = {0.0, 0.0};
    try {
        fit_lc_poisson(constant(2, 2, 1.0), constant(2, 2, 1.0), p);
        FAIL();
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("age index 0"), std::string::npos);
    }
}

TEST(FitLcPoisson, ZeroCurvatureIsSkippedWithAWarning) {
    // b = 0 makes every k-step curvature vanish in the first sweep.
    LcParameters p;
    p.ages = {0, 1};
    p.years = {0, 1, 2};
    p.a = {-3.0, -2.0};
    p.b = {0.0, 0.0};
    p.k = {1.0, 0.0, -1.0};
    Matrix d(2, 3);
    const double rows[2][3] = {{60, 50, 40}, {150, 130, 120}};
    for (std::size_t x = 0; x < 2; ++x)
        for (std::size_t t = 0; t < 3; ++t) d(x, t) = rows[x][t];
    const auto fit = fit_lc_poisson(d, constant(2, 3, 1000.0), p);
    ASSERT_FALSE(fit.state.warnings.empty());
    EXPECT_NE(fit.state.warnings.front().find("zero curvature for k[0]"), std::string::npos);
}

TEST(FitLcPoisson, SurfaceOverloadNeedsCounts) {
    GeneratorSpec g;
    g.n_populations = 1;
    g.n_ages = 10;
    g.n_years = 8;
    g.noise = NoiseKind::poisson;
    const auto s = generate(g);
    const auto& surf = s.panel.surfaces.begin()->second;
    const auto fit = fit_lc_poisson(surf, s.panel.training_years(surf.id));
    EXPECT_EQ(fit.params.id, surf.id);
    EXPECT_EQ(fit.params.k.size(), 8u);

    MortalitySurface bare = surf;
    bare.deaths.reset();
    EXPECT_THROW(fit_lc_poisson(bare, s.panel.training_years(surf.id)), DomainError);
}
