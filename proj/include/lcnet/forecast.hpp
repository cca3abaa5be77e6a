#pragma once

#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>
#include <string>
#include <vector>

#include "lcnet/error.hpp"
#include "lcnet/format.hpp"
#include "lcnet/lc_svd.hpp"
#include "lcnet/linalg.hpp"

namespace lcnet {

/// k(t) = k(t-1) + drift + e(t), e ~ N(0, sigma^2).
struct RwdModel {
    double drift = 0.0;
    double sigma = 0.0;
    double last_k = 0.0;
    int n_obs = 0;
};

inline RwdModel fit_rwd(const std::vector<double>& k) {
    if (k.size() < 2) throw DomainError("fit_rwd: need at least two observations");
    for (double v : k)
        if (!std::isfinite(v)) throw DomainError("fit_rwd: non-finite k");
    const std::size_t n = k.size();
    RwdModel m;
    m.n_obs = static_cast<int>(n);
    m.last_k = k.back();
    m.drift = (k.back() - k.front()) / static_cast<double>(n - 1);
    if (n > 2) {
        double ss = 0.0;
        for (std::size_t t = 1; t < n; ++t) {
            const double r = (k[t] - k[t - 1]) - m.drift;
            ss += r * r;
        }
        m.sigma = std::sqrt(ss / static_cast<double>(n - 2));
    }
    return m;
}

/// Inverse standard normal CDF: Acklam's rational approximation followed by
/// one Halley step against erfc, good to about 1e-15 in the body.
inline double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        if (p == 0.0) return -std::numeric_limits<double>::infinity();
        if (p == 1.0) return std::numeric_limits<double>::infinity();
        throw DomainError("normal_quantile: p outside [0, 1]");
    }
    static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                   1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
    static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                   6.680131188771972e+01,  -1.328068155288572e+01};
    static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                   -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
    static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                   3.754408661907416e+00};
    constexpr double p_low = 0.02425;
    double x;
    if (p < p_low) {
        const double q = std::sqrt(-2.0 * std::log(p));
        x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    } else if (p <= 1.0 - p_low) {
        const double q = p - 0.5, r = q * q;
        x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
            (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
    } else {
        const double q = std::sqrt(-2.0 * std::log1p(-p));
        x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
            ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
    }
    const double e = 0.5 * std::erfc(-x / std::sqrt(2.0)) - p;
    const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(x * x / 2.0);
    return x - u / (1.0 + x * u / 2.0);
}

/// Point path and bounds of k for s = 1..h, plus optional per-age log-rates.
struct ForecastFan {
    int horizon = 0;
    double alpha = 0.05;
    bool drift_uncertainty = false;
    Vector k_point, k_lower, k_upper;
    Matrix log_point, log_lower, log_upper; ///< ages x horizon
    std::vector<int> years;                 ///< calendar years of the horizon, when known

    double level() const { return 1.0 - alpha; }
};

inline ForecastFan project_k(const RwdModel& m, int h, double alpha = 0.05, bool drift_uncertainty = false) {
    if (h < 1) throw DomainError("project_k: horizon must be at least 1");
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("project_k: alpha must lie in (0, 1)");
    if (m.n_obs < 2 || m.sigma < 0.0) throw DomainError("project_k: invalid RWD model");
    ForecastFan f;
    f.horizon = h;
    f.alpha = alpha;
    f.drift_uncertainty = drift_uncertainty;
    const double z = normal_quantile(1.0 - alpha / 2.0);
    const double s2 = m.sigma * m.sigma;
    for (int s = 1; s <= h; ++s) {
        const double point = m.last_k + s * m.drift;
        double var = s * s2;
        if (drift_uncertainty) var += static_cast<double>(s) * s * s2 / (m.n_obs - 1);
        const double half = z * std::sqrt(var);
        f.k_point.push_back(point);
        f.k_lower.push_back(point - half);
        f.k_upper.push_back(point + half);
    }
    return f;
}

/// Map the k fan through a + b k with a and b held fixed. Where b < 0 the
/// k-interval endpoints swap so that lower <= point <= upper.
inline ForecastFan forecast_rates(const LcParameters& p, ForecastFan fan, const std::vector<int>& test_years = {}) {
    if (p.a.size() != p.b.size()) throw DimensionError("forecast_rates: a and b differ in length");
    if (!test_years.empty()) {
        if (static_cast<int>(test_years.size()) > fan.horizon)
            throw DomainError("forecast_rates: fan horizon " + std::to_string(fan.horizon) + " does not cover " +
                              std::to_string(test_years.size()) + " test years");
        if (!p.years.empty()) {
            const int last = p.years.back();
            for (int y : test_years)
                if (y <= last || y - last > fan.horizon)
                    throw DomainError("forecast_rates: test year " + std::to_string(y) + " outside the horizon");
        }
    }
    const std::size_t nx = p.a.size(), h = static_cast<std::size_t>(fan.horizon);
    fan.log_point = Matrix(nx, h);
    fan.log_lower = Matrix(nx, h);
    fan.log_upper = Matrix(nx, h);
    for (std::size_t x = 0; x < nx; ++x)
        for (std::size_t s = 0; s < h; ++s) {
            const double bx = p.b[x];
            fan.log_point(x, s) = p.a[x] + bx * fan.k_point[s];
            const double lo = p.a[x] + bx * (bx >= 0.0 ? fan.k_lower[s] : fan.k_upper[s]);
            const double hi = p.a[x] + bx * (bx >= 0.0 ? fan.k_upper[s] : fan.k_lower[s]);
            fan.log_lower(x, s) = lo;
            fan.log_upper(x, s) = hi;
        }
    fan.years.clear();
    if (!p.years.empty())
        for (int s = 1; s <= fan.horizon; ++s) fan.years.push_back(p.years.back() + s);
    return fan;
}

/// Fit the RWD on the fitted k and forecast log-rates `h` years ahead.
inline ForecastFan forecast_population(const LcParameters& p, int h, double alpha = 0.05,
                                       bool drift_uncertainty = false) {
    return forecast_rates(p, project_k(fit_rwd(p.k), h, alpha, drift_uncertainty));
}

/// Point log-rates for the given later calendar years (ages x years).
inline Matrix forecast_log_rates(const LcParameters& p, const std::vector<int>& years) {
    if (p.years.empty()) throw DomainError("forecast_log_rates: parameters carry no year grid");
    if (years.empty()) return Matrix(p.a.size(), 0);
    const int h = years.back() - p.years.back();
    const ForecastFan fan = forecast_rates(p, project_k(fit_rwd(p.k), std::max(h, 1)), years);
    Matrix out(p.a.size(), years.size());
    for (std::size_t j = 0; j < years.size(); ++j) {
        const std::size_t s = static_cast<std::size_t>(years[j] - p.years.back() - 1);
        for (std::size_t x = 0; x < p.a.size(); ++x) out(x, j) = fan.log_point(x, s);
    }
    return out;
}

inline void write_fan_csv_header(std::ostream& out) { out << "population,age,year,point,lower,upper,level\n"; }

inline void write_fan_csv(std::ostream& out, const LcParameters& p, const ForecastFan& fan) {
    for (std::size_t s = 0; s < static_cast<std::size_t>(fan.horizon); ++s)
        for (std::size_t x = 0; x < fan.log_point.rows(); ++x) {
            const int age = x < p.ages.size() ? p.ages[x] : static_cast<int>(x);
            const int year = s < fan.years.size() ? fan.years[s] : static_cast<int>(s + 1);
            out << p.id.label() << ',' << age << ',' << year << ',' << num(fan.log_point(x, s)) << ','
                << num(fan.log_lower(x, s)) << ',' << num(fan.log_upper(x, s)) << ',' << num(fan.level()) << '\n';
        }
}

} // namespace lcnet
