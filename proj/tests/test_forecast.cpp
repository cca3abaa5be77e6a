#include <gtest/gtest.h>

#include "oracles.hpp"

using namespace lcnet;

namespace {

RwdModel model(double drift, double sigma, double last_k, int n) {
    RwdModel m;
    m.drift = drift;
    m.sigma = sigma;
    m.last_k = last_k;
    m.n_obs = n;
    return m;
}

LcParameters params(Vector a, Vector b, Vector k) {
    LcParameters p;
    p.a = std::move(a);
    p.b = std::move(b);
    p.k = std::move(k);
    for (std::size_t x = 0; x < p.a.size(); ++x) p.ages.push_back(static_cast<int>(x));
    for (std::size_t t = 0; t < p.k.size(); ++t) p.years.push_back(static_cast<int>(2000 + t));
    p.normalized = true;
    return p;
}

} // namespace

TEST(FitRwd, PerfectLine) {
    const auto m = fit_rwd({0, 1, 2, 3});
    EXPECT_DOUBLE_EQ(m.drift, 1.0);
    EXPECT_DOUBLE_EQ(m.sigma, 0.0);
    EXPECT_DOUBLE_EQ(m.last_k, 3.0);
    EXPECT_EQ(m.n_obs, 4);
}

TEST(FitRwd, HandComputedSpread) {
    const auto m = fit_rwd({0, 2, 2});
    EXPECT_DOUBLE_EQ(m.drift, 1.0);
    EXPECT_DOUBLE_EQ(m.sigma, std::sqrt(2.0));
}

TEST(FitRwd, ConstantAndTwoPointSeries) {
    const auto c = fit_rwd({4, 4, 4, 4, 4});
    EXPECT_EQ(c.drift, 0.0);
    EXPECT_EQ(c.sigma, 0.0);
    const auto two = fit_rwd({1, 5});
    EXPECT_DOUBLE_EQ(two.drift, 4.0);
    EXPECT_EQ(two.sigma, 0.0);
    EXPECT_THROW(fit_rwd({1}), DomainError);
    EXPECT_THROW(fit_rwd({}), DomainError);
}

TEST(FitRwd, MatchesDirectMoments) {
    Rng rng(1);
    for (int rep = 0; rep < 50; ++rep) {
        const std::size_t n = 3 + rng.uniform_index(40);
        const Vector k = oracle::random_vector(n, rng, 3.0);
        Vector d;
        for (std::size_t t = 1; t < n; ++t) d.push_back(k[t] - k[t - 1]);
        const double g = mean(d);
        double ss = 0.0;
        for (double v : d) ss += (v - g) * (v - g);
        const auto m = fit_rwd(k);
        EXPECT_NEAR(m.drift, g, 1e-12);
        EXPECT_NEAR(m.sigma, std::sqrt(ss / static_cast<double>(n - 2)), 1e-12);
        EXPECT_EQ(m.last_k, k.back());
    }
}

TEST(NormalQuantile, KnownValuesAndSymmetry) {
    EXPECT_NEAR(normal_quantile(0.975), 1.959963984540054, 1e-9);
    EXPECT_NEAR(normal_quantile(0.5), 0.0, 1e-12);
    EXPECT_NEAR(normal_quantile(0.995), 2.5758293035489004, 1e-9);
    EXPECT_NEAR(normal_quantile(1e-6), -4.753424308822899, 1e-8);
    for (double p : {0.001, 0.02, 0.3, 0.4999})
        EXPECT_NEAR(normal_quantile(p), -normal_quantile(1.0 - p), 1e-9);
    // Round trip through the CDF.
    for (double p = 0.0005; p < 1.0; p += 0.01237)
        EXPECT_NEAR(0.5 * std::erfc(-normal_quantile(p) / std::sqrt(2.0)), p, 1e-12);
    EXPECT_EQ(normal_quantile(0.0), -std::numeric_limits<double>::infinity());
    EXPECT_EQ(normal_quantile(1.0), std::numeric_limits<double>::infinity());
    EXPECT_THROW(normal_quantile(1.5), DomainError);
    EXPECT_THROW(normal_quantile(std::nan("")), DomainError);
}

TEST(ProjectK, ZeroSigmaCollapsesTheBounds) {
    const auto f = project_k(model(-0.7, 0.0, 3.0, 10), 6);
    for (int s = 0; s < 6; ++s) {
        EXPECT_DOUBLE_EQ(f.k_point[s], 3.0 - 0.7 * (s + 1));
        EXPECT_EQ(f.k_lower[s], f.k_point[s]);
        EXPECT_EQ(f.k_upper[s], f.k_point[s]);
    }
}

TEST(ProjectK, ClosedFormHalfWidth) {
    const auto f = project_k(model(1.0, 1.0, 0.0, 20), 4, 0.05);
    EXPECT_DOUBLE_EQ(f.k_point[3], 4.0);
    EXPECT_NEAR(f.k_upper[3] - f.k_point[3], 1.959963984540054 * 2.0, 1e-8);
    EXPECT_NEAR(f.k_point[3] - f.k_lower[3], 1.959963984540054 * 2.0, 1e-8);
    EXPECT_DOUBLE_EQ(f.level(), 0.95);
}

TEST(ProjectK, DriftUncertaintyAddsTheQuadraticTerm) {
    const int n = 11;
    const auto f = project_k(model(0.0, 1.5, 0.0, n), 5, 0.1, true);
    const double z = normal_quantile(0.95);
    for (int s = 1; s <= 5; ++s)
        EXPECT_NEAR(f.k_upper[s - 1], z * std::sqrt(s * 2.25 + s * s * 2.25 / (n - 1)), 1e-12);
}

TEST(ProjectK, HalfWidthIsNondecreasing) {
    Rng rng(2);
    for (int rep = 0; rep < 50; ++rep) {
        const auto m = model(rng.normal(), std::abs(rng.normal()), rng.normal(), 3 + static_cast<int>(rng.uniform_index(30)));
        const auto f = project_k(m, 25, rng.uniform(0.01, 0.5), rep % 2 == 0);
        for (int s = 1; s < 25; ++s)
            EXPECT_GE(f.k_upper[s] - f.k_point[s], f.k_upper[s - 1] - f.k_point[s - 1]);
    }
}

TEST(ProjectK, Validation) {
    EXPECT_THROW(project_k(model(0, 1, 0, 5), 0), DomainError);
    EXPECT_THROW(project_k(model(0, 1, 0, 5), 3, 0.0), DomainError);
    EXPECT_THROW(project_k(model(0, 1, 0, 5), 3, 1.0), DomainError);
}

TEST(ProjectK, RefitOnTheNoiselessProjectionRecoversTheDrift) {
    const auto m = fit_rwd({0.0, -1.3, -2.1, -4.0, -4.4});
    auto f = project_k(model(m.drift, 0.0, m.last_k, m.n_obs), 12);
    Vector path = {m.last_k};
    path.insert(path.end(), f.k_point.begin(), f.k_point.end());
    EXPECT_NEAR(fit_rwd(path).drift, m.drift, 1e-14);
    EXPECT_NEAR(fit_rwd(path).sigma, 0.0, 1e-14);
}

TEST(ForecastRates, ZeroBIsConstantAtA) {
    const auto p = params({-5, -4, -3}, {0, 0, 0}, {1, 0, -1});
    const auto f = forecast_population(p, 7);
    for (std::size_t x = 0; x < 3; ++x)
        for (std::size_t s = 0; s < 7; ++s) {
            EXPECT_EQ(f.log_point(x, s), p.a[x]);
            EXPECT_EQ(f.log_lower(x, s), p.a[x]);
            EXPECT_EQ(f.log_upper(x, s), p.a[x]);
        }
    EXPECT_EQ(f.years.front(), 2003);
    EXPECT_EQ(f.years.back(), 2009);
}

TEST(ForecastRates, NegativeBSwapsTheBounds) {
    const auto p = params({-5, -4}, {1.5, -0.5}, {2, -1, 0, -1});
    const auto f = forecast_population(p, 3);
    for (std::size_t s = 0; s < 3; ++s) {
        EXPECT_DOUBLE_EQ(f.log_lower(1, s), p.a[1] - 0.5 * f.k_upper[s]);
        EXPECT_DOUBLE_EQ(f.log_upper(1, s), p.a[1] - 0.5 * f.k_lower[s]);
        EXPECT_DOUBLE_EQ(f.log_lower(0, s), p.a[0] + 1.5 * f.k_lower[s]);
    }
}

TEST(ForecastRates, IntervalsAreOrderedForAnySignPattern) {
    Rng rng(3);
    for (int rep = 0; rep < 100; ++rep) {
        const auto p = params(oracle::random_vector(8, rng), oracle::random_vector(8, rng),
                              oracle::random_vector(12, rng, 2.0));
        const auto f = forecast_population(p, 10, 0.2, rep % 2 == 1);
        for (std::size_t x = 0; x < 8; ++x)
            for (std::size_t s = 0; s < 10; ++s) {
                ASSERT_LE(f.log_lower(x, s), f.log_point(x, s));
                ASSERT_LE(f.log_point(x, s), f.log_upper(x, s));
            }
    }
}

TEST(ForecastRates, HorizonMustCoverTheTestYears) {
    const auto p = params({-5}, {1}, {1, 0, -1});
    const auto fan = project_k(fit_rwd(p.k), 3);
    EXPECT_THROW(forecast_rates(p, fan, {2003, 2004, 2005, 2006}), DomainError);
    EXPECT_THROW(forecast_rates(p, fan, {2006}), DomainError);
    EXPECT_THROW(forecast_rates(p, fan, {2002}), DomainError);
    EXPECT_NO_THROW(forecast_rates(p, fan, {2003, 2005}));
}

TEST(ForecastRates, NoiselessLinearSurfaceIsReproducedExactly) {
    GeneratorSpec g;
    g.n_populations = 3;
    g.n_ages = 30;
    g.n_years = 20;
    g.n_test_years = 10;
    g.sigma_k = 0.0;
    const auto s = generate(g);
    for (const auto& [id, surf] : s.panel.surfaces) {
        const auto fit = fit_lc_svd(surf, s.panel.training_years(id));
        const auto test = s.panel.testing_years(id);
        ASSERT_EQ(test.size(), 10u);
        const Matrix f = forecast_log_rates(fit, test);
        const auto& t = s.truth.at(id);
        for (std::size_t j = 0; j < test.size(); ++j) {
            const std::size_t col = surf.year_index(test[j]);
            for (std::size_t x = 0; x < 30; ++x) EXPECT_NEAR(f(x, j), t.a[x] + t.b[x] * t.k[col], 1e-8);
        }
        const auto fan = forecast_population(fit, 10);
        for (std::size_t j = 0; j < 10; ++j) EXPECT_NEAR(fan.k_upper[j] - fan.k_lower[j], 0.0, 1e-8);
    }
}

TEST(ForecastRates, MonteCarloCoverageOfRefittedIntervals) {
    Rng rng(4);
    const int n = 30, h = 10, paths = 10000;
    const double drift = -0.8, sigma = 0.6;
    std::vector<int> covered(h, 0);
    for (int p = 0; p < paths; ++p) {
        Vector k = {0.0};
        for (int t = 1; t < n + h; ++t) k.push_back(k.back() + drift + sigma * rng.normal());
        const Vector past(k.begin(), k.begin() + n);
        const auto fan = project_k(fit_rwd(past), h, 0.05, true);
        for (int s = 0; s < h; ++s)
            if (fan.k_lower[s] <= k[n + s] && k[n + s] <= fan.k_upper[s]) ++covered[s];
    }
    for (int s = 0; s < h; ++s) EXPECT_NEAR(covered[s] / static_cast<double>(paths), 0.95, 0.02) << "step " << s + 1;
}
