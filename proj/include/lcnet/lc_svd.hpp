#pragma once

#include <cmath>
#include <vector>

#include "lcnet/data.hpp"
#include "lcnet/error.hpp"
#include "lcnet/linalg.hpp"

namespace lcnet {

/// Lee-Carter parameters of one population: log m(x,t) ~ a[x] + b[x] k[t].
struct LcParameters {
    PopulationId id;
    std::vector<int> ages;
    std::vector<int> years;
    Vector a;
    Vector b;
    Vector k;
    bool normalized = false;

    double fitted(std::size_t x, std::size_t t) const { return a[x] + b[x] * k[t]; }

    /// ages x years matrix of a + b k.
    Matrix fitted_log_rates() const {
        Matrix m(a.size(), k.size());
        for (std::size_t x = 0; x < a.size(); ++x)
            for (std::size_t t = 0; t < k.size(); ++t) m(x, t) = fitted(x, t);
        return m;
    }

    void validate() const {
        if (a.size() != b.size() || a.size() != ages.size() || k.size() != years.size())
            throw DimensionError(id.label() + ": LC parameter lengths do not match the age/year grids");
    }
};

/// Impose sum(b) = 1 and sum(k) = 0 without changing any fitted value:
/// with s = sum(b), m = mean(k): a += b m, b /= s, k = (k - m) s.
inline LcParameters normalize_constraints(LcParameters p) {
    p.validate();
    if (p.k.empty()) throw DomainError("normalize_constraints: empty k");
    double s = 0.0, scale = 0.0;
    for (double v : p.b) {
        s += v;
        scale += std::abs(v);
    }
    if (s == 0.0 || std::abs(s) <= 1e-14 * scale || !std::isfinite(s))
        throw DomainError(p.id.label() + ": sum of b is zero; scaling is unidentifiable");
    const double m = mean(p.k);
    for (std::size_t x = 0; x < p.a.size(); ++x) {
        p.a[x] += p.b[x] * m;
        p.b[x] /= s;
    }
    for (double& v : p.k) v = (v - m) * s;
    p.normalized = true;
    return p;
}

/// Classic fit on an ages x years log-rate matrix: a = row means, then the
/// leading singular triple of the centered matrix gives b = u, k = sigma v.
/// Constraints are imposed before returning.
inline LcParameters fit_lc_svd(const Matrix& log_rates, const Rank1Options& opt = {}) {
    if (log_rates.rows() < 2 || log_rates.cols() < 2)
        throw DomainError("fit_lc_svd: need at least 2 ages and 2 years");
    if (!log_rates.all_finite()) throw DomainError("fit_lc_svd: non-finite log-rates");
    const std::size_t nx = log_rates.rows(), nt = log_rates.cols();
    LcParameters p;
    p.a.resize(nx);
    Matrix centered(nx, nt);
    for (std::size_t x = 0; x < nx; ++x) {
        p.a[x] = mean(log_rates.row(x));
        for (std::size_t t = 0; t < nt; ++t) centered(x, t) = log_rates(x, t) - p.a[x];
    }
    p.b.assign(nx, 0.0);
    p.k.assign(nt, 0.0);
    p.ages.resize(nx);
    p.years.resize(nt);
    for (std::size_t x = 0; x < nx; ++x) p.ages[x] = static_cast<int>(x);
    for (std::size_t t = 0; t < nt; ++t) p.years[t] = static_cast<int>(t);

    const double fro = frobenius_norm(centered);
    double row_scale = 0.0;
    for (double v : p.a) row_scale = std::max(row_scale, std::abs(v));
    if (fro <= 1e-13 * std::max(1.0, row_scale) * std::sqrt(static_cast<double>(nx * nt))) {
        // No period variation: k = 0 and any b reproduces the data. Use a flat b.
        p.b.assign(nx, 1.0 / static_cast<double>(nx));
        p.normalized = true;
        return p;
    }
    const Rank1Factors f = rank1_svd(centered, opt);
    p.b = f.u;
    for (std::size_t t = 0; t < nt; ++t) p.k[t] = f.sigma * f.v[t];
    return normalize_constraints(std::move(p));
}

/// Fit one population on the given training years.
inline LcParameters fit_lc_svd(const MortalitySurface& surface, const std::vector<int>& train_years,
                               const Rank1Options& opt = {}) {
    if (train_years.size() < 2) throw DomainError(surface.id.label() + ": fit_lc_svd needs at least 2 years");
    LcParameters p = fit_lc_svd(surface.columns(surface.log_rates, train_years), opt);
    p.id = surface.id;
    p.ages = surface.ages;
    p.years = train_years;
    return p;
}

/// Sum of squared residuals of a + b k against `log_rates`.
inline double reconstruction_sse(const LcParameters& p, const Matrix& log_rates) {
    if (log_rates.rows() != p.a.size() || log_rates.cols() != p.k.size())
        throw DimensionError("reconstruction_sse: grid mismatch");
    double s = 0.0;
    for (std::size_t x = 0; x < p.a.size(); ++x)
        for (std::size_t t = 0; t < p.k.size(); ++t) {
            const double d = log_rates(x, t) - p.fitted(x, t);
            s += d * d;
        }
    return s;
}

} // namespace lcnet
