#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "lcnet/error.hpp"
#include "lcnet/lc_svd.hpp"
#include "lcnet/linalg.hpp"

namespace lcnet {

namespace detail {

inline void check_counts(const Matrix& deaths, const Matrix& exposures) {
    if (deaths.rows() != exposures.rows() || deaths.cols() != exposures.cols())
        throw DimensionError("deaths and exposures have different shapes");
    if (deaths.rows() < 2 || deaths.cols() < 2) throw DomainError("Poisson LC fit needs at least 2 ages and 2 years");
    for (std::size_t i = 0; i < deaths.size(); ++i) {
        const double d = deaths.data()[i], e = exposures.data()[i];
        if (!std::isfinite(d) || d < 0.0) throw DomainError("deaths must be finite and nonnegative");
        if (!std::isfinite(e) || e <= 0.0) throw DomainError("exposures must be finite and positive");
    }
}

inline void check_grid(const LcParameters& p, const Matrix& deaths) {
    if (p.a.size() != deaths.rows() || p.b.size() != deaths.rows() || p.k.size() != deaths.cols())
        throw DimensionError("LC parameters do not match the deaths grid");
}

/// Deviance of a trial point; infinite when the fitted deaths leave the
/// representable range, so the caller rejects the step.
///
/// Each cell is evaluated as D (u + expm1(-u)) with u = log D - log Dhat,
/// which keeps full relative precision near a perfect fit, where the
/// textbook form subtracts two numbers of size D.
inline double safe_deviance(const Matrix& deaths, const Matrix& exposures, const LcParameters& p) {
    double dev = 0.0;
    for (std::size_t x = 0; x < deaths.rows(); ++x)
        for (std::size_t t = 0; t < deaths.cols(); ++t) {
            const double d = deaths(x, t);
            const double log_dhat = std::log(exposures(x, t)) + p.a[x] + p.b[x] * p.k[t];
            const double dhat = std::exp(log_dhat);
            if (!(dhat > 0.0) || !std::isfinite(dhat)) return std::numeric_limits<double>::infinity();
            if (d > 0.0) {
                const double u = std::log(d) - log_dhat;
                dev += d * (u + std::expm1(-u));
            } else {
                dev += dhat;
            }
        }
    return 2.0 * dev;
}

inline Vector flatten(const LcParameters& p) {
    Vector v(p.a);
    v.insert(v.end(), p.b.begin(), p.b.end());
    v.insert(v.end(), p.k.begin(), p.k.end());
    return v;
}

inline LcParameters unflatten(LcParameters shape, const Vector& v) {
    const std::size_t nx = shape.a.size();
    std::copy_n(v.begin(), nx, shape.a.begin());
    std::copy_n(v.begin() + static_cast<std::ptrdiff_t>(nx), nx, shape.b.begin());
    std::copy(v.begin() + static_cast<std::ptrdiff_t>(2 * nx), v.end(), shape.k.begin());
    return shape;
}

/// Joint Newton direction for (a, b, k) maximizing the log-likelihood, with
/// the two gauge directions removed by holding sum(b) and sum(k) fixed.
/// Empty when the bordered Hessian is singular (e.g. k identically zero).
inline std::optional<Vector> joint_newton_step(const Matrix& deaths, const Matrix& exposures,
                                               const LcParameters& p) {
    const std::size_t nx = deaths.rows(), nt = deaths.cols();
    const std::size_t n = 2 * nx + nt;
    const auto ia = [](std::size_t x) { return x; };
    const auto ib = [nx](std::size_t x) { return nx + x; };
    const auto ik = [nx](std::size_t t) { return 2 * nx + t; };
    Matrix h(n + 2, n + 2);
    Vector g(n + 2, 0.0);
    for (std::size_t x = 0; x < nx; ++x)
        for (std::size_t t = 0; t < nt; ++t) {
            const double mu = exposures(x, t) * std::exp(p.fitted(x, t));
            const double r = deaths(x, t) - mu;
            const double b = p.b[x], k = p.k[t];
            g[ia(x)] += r;
            g[ib(x)] += r * k;
            g[ik(t)] += r * b;
            h(ia(x), ia(x)) += mu;
            h(ia(x), ib(x)) += mu * k;
            h(ib(x), ib(x)) += mu * k * k;
            h(ik(t), ik(t)) += mu * b * b;
            h(ia(x), ik(t)) = mu * b;
            h(ib(x), ik(t)) = mu * b * k - r;
        }
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = i + 1; j < n; ++j) h(j, i) = h(i, j);
    // Border entries sized like the blocks they constrain, so the relative
    // pivot test sees one scale.
    double cb = 0.0, ck = 0.0;
    for (std::size_t x = 0; x < nx; ++x) cb = std::max(cb, h(ib(x), ib(x)));
    for (std::size_t t = 0; t < nt; ++t) ck = std::max(ck, h(ik(t), ik(t)));
    if (!(cb > 0.0) || !(ck > 0.0)) return std::nullopt;
    for (std::size_t x = 0; x < nx; ++x) h(n, ib(x)) = h(ib(x), n) = cb;
    for (std::size_t t = 0; t < nt; ++t) h(n + 1, ik(t)) = h(ik(t), n + 1) = ck;
    try {
        Vector step = solve_linear(std::move(h), std::move(g));
        step.resize(n);
        for (double v : step)
            if (!std::isfinite(v)) return std::nullopt;
        return step;
    } catch (const NumericError&) {
        return std::nullopt;
    }
}

} // namespace detail

/// Expected deaths E exp(a + b k).
inline Matrix expected_deaths(const Matrix& exposures, const LcParameters& p) {
    Matrix out(exposures.rows(), exposures.cols());
    for (std::size_t x = 0; x < out.rows(); ++x)
        for (std::size_t t = 0; t < out.cols(); ++t) out(x, t) = exposures(x, t) * std::exp(p.fitted(x, t));
    return out;
}

/// 2 sum[D log(D / Dhat) - (D - Dhat)], the D = 0 term read as 2 Dhat.
inline double poisson_deviance(const Matrix& deaths, const Matrix& exposures, const LcParameters& p) {
    detail::check_grid(p, deaths);
    const double dev = detail::safe_deviance(deaths, exposures, p);
    if (!std::isfinite(dev)) throw NumericError("poisson_deviance: fitted deaths not positive");
    return dev;
}

/// Log-likelihood kernel sum[D (a + b k) - E exp(a + b k)] (constant dropped).
inline double poisson_log_likelihood(const Matrix& deaths, const Matrix& exposures, const LcParameters& p) {
    detail::check_grid(p, deaths);
    double ll = 0.0;
    for (std::size_t x = 0; x < deaths.rows(); ++x)
        for (std::size_t t = 0; t < deaths.cols(); ++t) {
            const double eta = p.fitted(x, t);
            ll += deaths(x, t) * eta - exposures(x, t) * std::exp(eta);
        }
    return ll;
}

/// Gradient of the log-likelihood kernel, laid out as (a[0..X), b[0..X), k[0..T)).
inline Vector poisson_score(const Matrix& deaths, const Matrix& exposures, const LcParameters& p) {
    detail::check_grid(p, deaths);
    const std::size_t nx = deaths.rows(), nt = deaths.cols();
    Vector g(2 * nx + nt, 0.0);
    for (std::size_t x = 0; x < nx; ++x)
        for (std::size_t t = 0; t < nt; ++t) {
            const double r = deaths(x, t) - exposures(x, t) * std::exp(p.fitted(x, t));
            g[x] += r;
            g[nx + x] += r * p.k[t];
            g[2 * nx + t] += r * p.b[x];
        }
    return g;
}

struct PoissonOptions {
    double tol = 1e-8;   ///< absolute deviance change per sweep
    int max_iter = 10000; ///< sweeps
    int max_halvings = 30;
    int polish_steps = 20; ///< joint Newton steps after the sweeps converge; 0 disables
};

struct PoissonFitState {
    double deviance = 0.0;
    int iteration = 0;
    bool converged = false;
    std::vector<double> deviance_history; ///< entry 0 is the initial deviance
    std::vector<std::string> warnings;
};

struct PoissonFit {
    LcParameters params;
    PoissonFitState state;
};

/// Poisson maximum likelihood by cyclic univariate Newton sweeps (a, then k,
/// then b). A sweep that raises the deviance is retried with all steps halved.
/// Constraints are imposed once, at the end.
inline PoissonFit fit_lc_poisson(const Matrix& deaths, const Matrix& exposures,
                                 const std::optional<LcParameters>& init = std::nullopt,
                                 const PoissonOptions& opt = {}) {
    detail::check_counts(deaths, exposures);
    const std::size_t nx = deaths.rows(), nt = deaths.cols();

    LcParameters p;
    if (init) {
        p = *init;
        detail::check_grid(p, deaths);
    } else {
        Matrix start(nx, nt);
        for (std::size_t x = 0; x < nx; ++x)
            for (std::size_t t = 0; t < nt; ++t) start(x, t) = std::log((deaths(x, t) + 0.5) / exposures(x, t));
        p = fit_lc_svd(start);
    }

    PoissonFit fit;
    PoissonFitState& st = fit.state;
    Matrix dhat(nx, nt);
    // Fills dhat; false when some fitted count leaves the representable range.
    auto refresh = [&](const LcParameters& q) {
        for (std::size_t x = 0; x < nx; ++x)
            for (std::size_t t = 0; t < nt; ++t) {
                const double v = exposures(x, t) * std::exp(q.fitted(x, t));
                if (!std::isfinite(v) || !(v > 0.0)) return false;
                dhat(x, t) = v;
            }
        return true;
    };
    auto warn = [&](const std::string& w) {
        if (st.warnings.size() < 100) st.warnings.push_back(w);
    };

    // One a -> k -> b cycle with every step scaled by factor; nullopt when
    // a step overflows, which the caller treats as a rejected sweep.
    auto sweep = [&](LcParameters q, double factor) -> std::optional<LcParameters> {
        if (!refresh(q)) return std::nullopt;
        for (std::size_t x = 0; x < nx; ++x) {
            double num = 0.0, den = 0.0;
            for (std::size_t t = 0; t < nt; ++t) {
                num += deaths(x, t) - dhat(x, t);
                den += dhat(x, t);
            }
            if (den > 0.0) q.a[x] += factor * num / den;
            else warn("sweep " + std::to_string(st.iteration) + ": zero curvature for a[" + std::to_string(x) + "]");
        }
        if (!refresh(q)) return std::nullopt;
        for (std::size_t t = 0; t < nt; ++t) {
            double num = 0.0, den = 0.0;
            for (std::size_t x = 0; x < nx; ++x) {
                num += (deaths(x, t) - dhat(x, t)) * q.b[x];
                den += dhat(x, t) * q.b[x] * q.b[x];
            }
            if (den > 0.0) q.k[t] += factor * num / den;
            else warn("sweep " + std::to_string(st.iteration) + ": zero curvature for k[" + std::to_string(t) + "]");
        }
        if (!refresh(q)) return std::nullopt;
        for (std::size_t x = 0; x < nx; ++x) {
            double num = 0.0, den = 0.0;
            for (std::size_t t = 0; t < nt; ++t) {
                num += (deaths(x, t) - dhat(x, t)) * q.k[t];
                den += dhat(x, t) * q.k[t] * q.k[t];
            }
            if (den > 0.0) q.b[x] += factor * num / den;
            else warn("sweep " + std::to_string(st.iteration) + ": zero curvature for b[" + std::to_string(x) + "]");
        }
        return q;
    };

    for (std::size_t x = 0; x < nx; ++x)
        for (std::size_t t = 0; t < nt; ++t) {
            const double v = exposures(x, t) * std::exp(p.fitted(x, t));
            if (!std::isfinite(v) || !(v > 0.0))
                throw NumericError("fit_lc_poisson: fitted deaths out of range at age index " + std::to_string(x) +
                                   ", year index " + std::to_string(t));
        }
    double dev = poisson_deviance(deaths, exposures, p);
    st.deviance_history.push_back(dev);
    // One damped sweep from `from`; false when no halving lowers the deviance.
    auto damped = [&](const LcParameters& from, double from_dev, LcParameters& out, double& out_dev) {
        double factor = 1.0;
        out_dev = std::numeric_limits<double>::infinity();
        for (int h = 0; h <= opt.max_halvings; ++h, factor *= 0.5) {
            auto trial = sweep(from, factor);
            if (!trial) continue;
            const double d = detail::safe_deviance(deaths, exposures, *trial);
            if (d <= from_dev) {
                out = std::move(*trial);
                out_dev = d;
                return true;
            }
            out_dev = d;
        }
        return false;
    };

    while (st.iteration < opt.max_iter) {
        ++st.iteration;
        LcParameters p1, p2;
        double d1 = 0.0, d2 = 0.0;
        if (!damped(p, dev, p1, d1)) {
            // No descent direction left at working precision.
            warn("sweep " + std::to_string(st.iteration) + ": deviance could not be decreased; stopping");
            st.converged = std::isfinite(d1) && std::abs(d1 - dev) < std::max(opt.tol, 1e-10 * std::abs(dev));
            break;
        }
        LcParameters next = p1;
        double next_dev = d1;
        if (damped(p1, d1, p2, d2)) {
            next = p2;
            next_dev = d2;
            // Squared extrapolation over the two sweeps. Cyclic Newton zigzags
            // along the b-k ridge and converges only linearly without it; the
            // candidate is kept only when it lowers the deviance further.
            const Vector x0 = detail::flatten(p), x1 = detail::flatten(p1), x2 = detail::flatten(p2);
            double rr = 0.0, vv = 0.0;
            for (std::size_t i = 0; i < x0.size(); ++i) {
                const double r = x1[i] - x0[i], v = x2[i] - 2.0 * x1[i] + x0[i];
                rr += r * r;
                vv += v * v;
            }
            if (vv > 0.0) {
                const double alpha = std::min(-1.0, -std::sqrt(rr / vv));
                Vector xc(x0.size());
                for (std::size_t i = 0; i < x0.size(); ++i) {
                    const double r = x1[i] - x0[i], v = x2[i] - 2.0 * x1[i] + x0[i];
                    xc[i] = x0[i] - 2.0 * alpha * r + alpha * alpha * v;
                }
                if (auto c = sweep(detail::unflatten(p, xc), 1.0)) {
                    const double dc = detail::safe_deviance(deaths, exposures, *c);
                    if (dc < next_dev) {
                        next = std::move(*c);
                        next_dev = dc;
                    }
                }
            }
        }
        const double change = dev - next_dev;
        p = std::move(next);
        dev = next_dev;
        st.deviance_history.push_back(dev);
        if (change < opt.tol) {
            st.converged = true;
            break;
        }
    }
    // Cyclic sweeps converge linearly, so the absolute stopping rule fires
    // while weakly identified coefficients are still off in the fifth digit.
    // A few joint Newton steps from there converge quadratically; each one
    // is damped like a sweep and kept only if the deviance does not rise.
    if (st.converged) {
        for (int it = 0; it < opt.polish_steps; ++it) {
            const auto step = detail::joint_newton_step(deaths, exposures, p);
            if (!step) break;
            const Vector x0 = detail::flatten(p);
            double factor = 1.0, trial_dev = 0.0;
            std::optional<LcParameters> accepted;
            for (int h = 0; h <= opt.max_halvings; ++h, factor *= 0.5) {
                Vector x1 = x0;
                for (std::size_t i = 0; i < x1.size(); ++i) x1[i] += factor * (*step)[i];
                LcParameters trial = detail::unflatten(p, x1);
                trial_dev = detail::safe_deviance(deaths, exposures, trial);
                if (trial_dev <= dev) {
                    accepted = std::move(trial);
                    break;
                }
            }
            if (!accepted) break;
            double size = 0.0, ref = 1.0;
            for (std::size_t i = 0; i < x0.size(); ++i) {
                size = std::max(size, std::abs(factor * (*step)[i]));
                ref = std::max(ref, std::abs(x0[i]));
            }
            const bool progressed = trial_dev < dev;
            p = std::move(*accepted);
            dev = trial_dev;
            st.deviance_history.push_back(dev);
            if (!progressed || size <= 1e-14 * ref) break;
        }
    }
    st.deviance = dev;
    fit.params = normalize_constraints(std::move(p));
    return fit;
}

/// Fit one population on its training years; requires deaths and exposures.
inline PoissonFit fit_lc_poisson(const MortalitySurface& surface, const std::vector<int>& train_years,
                                 const PoissonOptions& opt = {}) {
    if (!surface.has_counts())
        throw DomainError(surface.id.label() + ": Poisson fit needs deaths and exposures");
    const Matrix d = surface.columns(*surface.deaths, train_years);
    const Matrix e = surface.columns(*surface.exposures, train_years);
    if (!d.all_finite() || !e.all_finite())
        throw DomainError(surface.id.label() + ": deaths or exposures missing in the training years");
    PoissonFit fit = fit_lc_poisson(d, e, std::nullopt, opt);
    fit.params.id = surface.id;
    fit.params.ages = surface.ages;
    fit.params.years = train_years;
    return fit;
}

} // namespace lcnet
