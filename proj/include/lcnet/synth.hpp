#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <cstdint>
#include <map>
#include <numbers>
#include <string>
#include <vector>

#include "lcnet/data.hpp"
#include "lcnet/error.hpp"
#include "lcnet/linalg.hpp"
#include "lcnet/rng.hpp"

namespace lcnet {

/// Poisson variate: sequential inversion below 30, Hormann's PTRS
/// transformed rejection from 30 up.
inline double sample_poisson(double lambda, Rng& rng) {
    if (!(lambda >= 0.0) || !std::isfinite(lambda)) throw DomainError("sample_poisson: invalid mean");
    if (lambda == 0.0) return 0.0;
    if (lambda < 30.0) {
        const double u = rng.uniform();
        double p = std::exp(-lambda), F = p, x = 0.0;
        while (u > F) {
            x += 1.0;
            p *= lambda / x;
            F += p;
            if (p == 0.0 && F < u) break; // tail exhausted in floating point
        }
        return x;
    }
    const double slam = std::sqrt(lambda), loglam = std::log(lambda);
    const double b = 0.931 + 2.53 * slam;
    const double a = -0.059 + 0.02483 * b;
    const double inv_alpha = 1.1239 + 1.1328 / (b - 3.4);
    const double vr = 0.9277 - 3.6224 / (b - 2.0);
    for (;;) {
        const double U = rng.uniform() - 0.5;
        const double V = rng.uniform();
        const double us = 0.5 - std::abs(U);
        const double k = std::floor((2.0 * a / us + b) * U + lambda + 0.43);
        if (us >= 0.07 && V <= vr) return k;
        if (k < 0.0 || (us < 0.013 && V > us)) continue;
        if (std::log(V) + std::log(inv_alpha) - std::log(a / (us * us) + b) <= -lambda + k * loglam - std::lgamma(k + 1.0))
            return k;
    }
}

enum class NoiseKind { none, gaussian, poisson };

inline std::string to_string(NoiseKind n) {
    switch (n) {
    case NoiseKind::none: return "none";
    case NoiseKind::gaussian: return "gaussian";
    case NoiseKind::poisson: return "poisson";
    }
    return "?";
}

inline NoiseKind parse_noise(const std::string& s) {
    if (s == "none") return NoiseKind::none;
    if (s == "gaussian") return NoiseKind::gaussian;
    if (s == "poisson") return NoiseKind::poisson;
    throw DomainError("unknown noise kind '" + s + "'");
}

/// Ground truth of one synthetic population over all generated years.
/// b sums to 1 and k sums to 0 over the training years.
struct PopulationTruth {
    PopulationId id;
    Vector a, b, k;
    double drift = 0.0;
    double sigma = 0.0;
};

struct GeneratorSpec {
    int n_populations = 8;
    int n_ages = 100;
    int n_years = 30;      ///< training years
    int n_test_years = 0;  ///< extra years after the training window
    int first_year = 1970;
    double exposure = 1e5; ///< E0, the exposure scale
    NoiseKind noise = NoiseKind::none;
    double noise_sd = 0.0; ///< gaussian noise on log m
    double drift = -1.0;   ///< mean drift of k
    double sigma_k = 0.5;  ///< RWD innovation sd of k
    std::uint64_t seed = 1;
    /// Optional explicit truth, one entry per population; defaults are drawn otherwise.
    std::vector<PopulationTruth> truth;

    int train_max_year() const { return first_year + n_years - 1; }
    int total_years() const { return n_years + n_test_years; }
};

/// Population i lives in country "S" + (i/2 + 1), gender i % 2.
inline PopulationId synthetic_population(int i) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "S%02d", i / 2 + 1);
    return {buf, i % 2 == 0 ? Gender::female : Gender::male};
}

struct SyntheticPanel {
    PanelDataset panel;
    std::map<PopulationId, PopulationTruth> truth;
    std::vector<double> exposure_profile; ///< per-age exposure before the gender factor
};

namespace detail {

inline void check_spec(const GeneratorSpec& g) {
    if (g.n_populations < 1) throw DomainError("generator: need at least one population");
    if (g.n_ages < 2) throw DomainError("generator: need at least two ages");
    if (g.n_years < 2) throw DomainError("generator: need at least two training years");
    if (g.n_test_years < 0) throw DomainError("generator: negative test horizon");
    if (!(g.exposure > 0.0) || !std::isfinite(g.exposure)) throw DomainError("generator: exposure must be positive");
    if (g.noise == NoiseKind::gaussian && !(g.noise_sd >= 0.0)) throw DomainError("generator: noise sd must be nonnegative");
    if (!(g.sigma_k >= 0.0)) throw DomainError("generator: sigma_k must be nonnegative");
    if (!g.truth.empty() && static_cast<int>(g.truth.size()) != g.n_populations)
        throw DomainError("generator: explicit truth must cover every population");
}

/// Country-level shape parameters of the default truth.
struct CountryEffect {
    double level, tilt, b_amp, b_phase;
};

/// Default truth: a Gompertz ramp with an infant hump for a, a unimodal bump
/// for b, k a random walk with drift. Country and gender enter a and b
/// additively, so the panel lies inside the linear-activation network class.
/// The b perturbations have zero sum, so sum(b) = 1 holds by construction.
inline PopulationTruth default_truth(const GeneratorSpec& g, int i, const CountryEffect& ce, Rng& rng) {
    PopulationTruth t;
    t.id = synthetic_population(i);
    const bool male = t.id.gender == Gender::male;
    const std::size_t n = static_cast<std::size_t>(g.n_ages);
    Vector bump(n), pert(n);
    double bump_sum = 0.0, pert_mean = 0.0;
    for (std::size_t x = 0; x < n; ++x) {
        const double u = static_cast<double>(x) / static_cast<double>(n);
        const double z = (u - 0.45) / 0.3;
        bump[x] = std::exp(-z * z) + 0.15;
        bump_sum += bump[x];
        pert[x] = ce.b_amp * std::sin(2.0 * std::numbers::pi * u + ce.b_phase) +
                  (male ? 0.08 * std::cos(2.0 * std::numbers::pi * u) : 0.0);
        pert_mean += pert[x] / static_cast<double>(n);
    }
    for (std::size_t x = 0; x < n; ++x) {
        const double u = static_cast<double>(x) / static_cast<double>(n);
        const double age = 100.0 * u;
        const double base = std::log(2e-5 * std::exp(0.09 * age) + 4e-3 * std::exp(-age / 2.0) + 2e-4);
        const double hump = (age - 22.0) / 8.0;
        const double gender = male ? 0.4 + 0.3 * std::exp(-hump * hump) : 0.0;
        t.a.push_back(base + ce.level + ce.tilt * (u - 0.5) * 2.0 + gender);
        t.b.push_back(bump[x] / bump_sum + (pert[x] - pert_mean) / static_cast<double>(n));
    }
    t.drift = g.drift * rng.uniform(0.7, 1.3);
    t.sigma = g.sigma_k;
    double k = 0.0, mean = 0.0;
    for (int j = 0; j < g.total_years(); ++j) {
        if (j > 0) k += t.drift + (t.sigma > 0.0 ? t.sigma * rng.normal() : 0.0);
        t.k.push_back(k);
        if (j < g.n_years) mean += k / g.n_years;
    }
    for (double& v : t.k) v -= mean;
    return t;
}

inline void check_truth(const PopulationTruth& t, const GeneratorSpec& g) {
    if (static_cast<int>(t.a.size()) != g.n_ages || static_cast<int>(t.b.size()) != g.n_ages ||
        static_cast<int>(t.k.size()) != g.total_years())
        throw DimensionError("generator: truth for " + t.id.label() + " does not match the grid");
    double sb = 0.0, sk = 0.0;
    for (double v : t.b) sb += v;
    for (int j = 0; j < g.n_years; ++j) sk += t.k[static_cast<std::size_t>(j)];
    if (std::abs(sb - 1.0) > 1e-10 || std::abs(sk) > 1e-8 * g.n_years)
        throw DomainError("generator: truth for " + t.id.label() + " must have sum(b) = 1 and sum(k) = 0 on training years");
}

} // namespace detail

/// Draw a panel whose log-rates follow a + b k exactly (noise none), with iid
/// normal noise on log m (gaussian), or with Poisson deaths (poisson).
inline SyntheticPanel generate(const GeneratorSpec& g) {
    detail::check_spec(g);
    Rng truth_rng(Rng::derive(g.seed, 11));
    Rng noise_rng(Rng::derive(g.seed, 12));

    SyntheticPanel out;
    for (int x = 0; x < g.n_ages; ++x)
        out.exposure_profile.push_back(g.exposure * std::max(0.02, 1.0 - std::pow(x / 105.0, 3.0)));

    std::vector<detail::CountryEffect> countries;
    for (int c = 0; c < (g.n_populations + 1) / 2; ++c)
        countries.push_back({truth_rng.uniform(-0.3, 0.3), truth_rng.uniform(-0.15, 0.15), truth_rng.uniform(-0.1, 0.1),
                             truth_rng.uniform(0.0, 2.0 * std::numbers::pi)});

    SurfaceMap surfaces;
    const int n_total = g.total_years();
    for (int i = 0; i < g.n_populations; ++i) {
        PopulationTruth t;
        if (g.truth.empty()) {
            t = detail::default_truth(g, i, countries[static_cast<std::size_t>(i / 2)], truth_rng);
        } else {
            t = g.truth[static_cast<std::size_t>(i)];
            if (t.id.country.empty()) t.id = synthetic_population(i);
        }
        detail::check_truth(t, g);
        if (surfaces.count(t.id)) throw DomainError("generator: duplicate population " + t.id.label());

        MortalitySurface s;
        s.id = t.id;
        for (int x = 0; x < g.n_ages; ++x) s.ages.push_back(x);
        for (int j = 0; j < n_total; ++j) s.years.push_back(g.first_year + j);
        const std::size_t nx = s.ages.size(), nt = s.years.size();
        s.log_rates = Matrix(nx, nt);
        s.deaths = Matrix(nx, nt);
        s.exposures = Matrix(nx, nt);
        s.imputed = MaskMatrix(nx, nt);
        const double gender_factor = t.id.gender == Gender::female ? 1.05 : 0.95;
        for (std::size_t j = 0; j < nt; ++j)
            for (std::size_t x = 0; x < nx; ++x) {
                const double eta = t.a[x] + t.b[x] * t.k[j];
                const double e = out.exposure_profile[x] * gender_factor;
                (*s.exposures)(x, j) = e;
                switch (g.noise) {
                case NoiseKind::none:
                    s.log_rates(x, j) = eta;
                    (*s.deaths)(x, j) = e * std::exp(eta);
                    break;
                case NoiseKind::gaussian: {
                    const double y = eta + g.noise_sd * noise_rng.normal();
                    s.log_rates(x, j) = y;
                    (*s.deaths)(x, j) = e * std::exp(y);
                    break;
                }
                case NoiseKind::poisson: {
                    const double d = sample_poisson(e * std::exp(eta), noise_rng);
                    (*s.deaths)(x, j) = d;
                    if (d > 0.0) {
                        s.log_rates(x, j) = std::log(d / e);
                    } else {
                        s.log_rates(x, j) = std::numeric_limits<double>::quiet_NaN();
                        s.imputed.set(x, j, true);
                    }
                    break;
                }
                }
            }
        surfaces.emplace(t.id, std::move(s));
        out.truth.emplace(t.id, std::move(t));
    }
    if (g.noise == NoiseKind::poisson) surfaces = impute_missing(std::move(surfaces));
    out.panel = assemble_panel(surfaces, g.train_max_year(), g.n_ages);
    return out;
}

} // namespace lcnet
