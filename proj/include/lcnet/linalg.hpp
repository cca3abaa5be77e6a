#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lcnet/error.hpp"
#include "lcnet/rng.hpp"

namespace lcnet {

using Vector = std::vector<double>;

/// Dense row-major matrix of doubles.
class Matrix {
public:
    Matrix() = default;
    Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
        : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
    Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
        : rows_(rows), cols_(cols), data_(std::move(data)) {
        if (data_.size() != rows_ * cols_)
            throw DimensionError("matrix data length does not match rows*cols");
    }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }

    std::size_t rows() const noexcept { return rows_; }
    std::size_t cols() const noexcept { return cols_; }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
    double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

    std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
    std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }

    Vector column(std::size_t c) const {
        Vector out(rows_);
        for (std::size_t r = 0; r < rows_; ++r) out[r] = (*this)(r, c);
        return out;
    }

    std::span<double> data() noexcept { return data_; }
    std::span<const double> data() const noexcept { return data_; }

    Matrix transpose() const {
        Matrix t(cols_, rows_);
        for (std::size_t r = 0; r < rows_; ++r)
            for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
        return t;
    }

    bool all_finite() const {
        return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
    }

    friend bool operator==(const Matrix&, const Matrix&) = default;

private:
    std::size_t rows_ = 0;
    std::size_t cols_ = 0;
    std::vector<double> data_;
};

inline double dot(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw DimensionError("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline double sum(std::span<const double> a) {
    double s = 0.0;
    for (double v : a) s += v;
    return s;
}

inline double mean(std::span<const double> a) {
    if (a.empty()) throw DomainError("mean of empty sequence");
    return sum(a) / static_cast<double>(a.size());
}

inline double frobenius_norm(const Matrix& m) { return norm2(m.data()); }

/// y = M x
inline Vector multiply(const Matrix& m, std::span<const double> x) {
    if (x.size() != m.cols()) throw DimensionError("multiply: M.cols != x.size");
    Vector y(m.rows(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) y[r] = dot(m.row(r), x);
    return y;
}

/// y = M^T x
inline Vector multiply_transposed(const Matrix& m, std::span<const double> x) {
    if (x.size() != m.rows()) throw DimensionError("multiply_transposed: M.rows != x.size");
    Vector y(m.cols(), 0.0);
    for (std::size_t r = 0; r < m.rows(); ++r) {
        const auto row = m.row(r);
        for (std::size_t c = 0; c < m.cols(); ++c) y[c] += row[c] * x[r];
    }
    return y;
}

inline Matrix outer(std::span<const double> u, std::span<const double> v, double scale = 1.0) {
    Matrix m(u.size(), v.size());
    for (std::size_t r = 0; r < u.size(); ++r)
        for (std::size_t c = 0; c < v.size(); ++c) m(r, c) = scale * u[r] * v[c];
    return m;
}

/// Solve A x = b by LU with partial pivoting. A pivot below eps * max|A|
/// is treated as singular.
inline Vector solve_linear(Matrix a, Vector b, double eps = 1e-14) {
    const std::size_t n = a.rows();
    if (a.cols() != n || b.size() != n) throw DimensionError("solve_linear: shape mismatch");
    double scale = 0.0;
    for (double v : a.data()) scale = std::max(scale, std::abs(v));
    for (std::size_t c = 0; c < n; ++c) {
        std::size_t piv = c;
        for (std::size_t r = c + 1; r < n; ++r)
            if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
        if (!(std::abs(a(piv, c)) > eps * scale)) throw NumericError("solve_linear: matrix is singular");
        if (piv != c) {
            std::swap_ranges(a.row(c).begin(), a.row(c).end(), a.row(piv).begin());
            std::swap(b[c], b[piv]);
        }
        for (std::size_t r = c + 1; r < n; ++r) {
            const double f = a(r, c) / a(c, c);
            if (f == 0.0) continue;
            for (std::size_t j = c; j < n; ++j) a(r, j) -= f * a(c, j);
            b[r] -= f * b[c];
        }
    }
    Vector x(n);
    for (std::size_t i = n; i-- > 0;) {
        double acc = b[i];
        for (std::size_t j = i + 1; j < n; ++j) acc -= a(i, j) * x[j];
        x[i] = acc / a(i, i);
    }
    return x;
}

/// Leading singular triple: M ~= sigma * u * v^T.
struct Rank1Factors {
    double sigma = 0.0;
    Vector u;
    Vector v;
};

struct Rank1Options {
    double tol = 1e-10;
    int max_iter = 10000;
    std::uint64_t fallback_seed = 20240917;
    /// Called after every sweep with the sweep index, the current iterate and
    /// its stopping residual |Mv - sigma u|.
    std::function<void(int, const Rank1Factors&, double)> on_sweep;
};

/// Power iteration failed to reach the residual target.
class ConvergenceError : public NumericError {
public:
    ConvergenceError(const std::string& what, Rank1Factors last, double residual)
        : NumericError(what), last_(std::move(last)), residual_(residual) {}

    const Rank1Factors& last_iterate() const noexcept { return last_; }
    double residual() const noexcept { return residual_; }

private:
    Rank1Factors last_;
    double residual_;
};

namespace detail {

inline bool normalize_in_place(Vector& x) {
    const double n = norm2(x);
    if (!(n > 0.0) || !std::isfinite(n)) return false;
    for (double& v : x) v /= n;
    return true;
}

inline void fix_sign(Rank1Factors& f) {
    std::size_t arg = 0;
    for (std::size_t i = 1; i < f.u.size(); ++i)
        if (std::abs(f.u[i]) > std::abs(f.u[arg])) arg = i;
    if (!f.u.empty() && f.u[arg] < 0.0) {
        for (double& x : f.u) x = -x;
        for (double& x : f.v) x = -x;
    }
}

inline double triple_residual(const Matrix& m, const Rank1Factors& f) {
    Vector mv = multiply(m, f.v);
    double s = 0.0;
    for (std::size_t i = 0; i < mv.size(); ++i) {
        const double d = mv[i] - f.sigma * f.u[i];
        s += d * d;
    }
    return std::sqrt(s);
}

} // namespace detail

/// Dominant singular triple by alternating power iteration
/// (u <- Mv/|Mv|, v <- M^T u/|M^T u|). Converged when |Mv - sigma u| <= tol |M|_F.
///
/// Starts from the normalized ones vector; if M maps it to (numerically) zero,
/// as happens for any row-centered matrix, a seeded random start is used instead.
/// The entry of u with the largest magnitude is made positive.
inline Rank1Factors rank1_svd(const Matrix& m, const Rank1Options& opt = {}) {
    if (m.empty()) throw DimensionError("rank1_svd: empty matrix");
    if (!(opt.tol > 0.0)) throw DomainError("rank1_svd: tol must be positive");
    if (!m.all_finite()) throw DomainError("rank1_svd: matrix has non-finite entries");
    const double fro = frobenius_norm(m);
    if (fro == 0.0) throw DomainError("rank1_svd: zero matrix");

    Rank1Factors f;
    f.v.assign(m.cols(), 1.0 / std::sqrt(static_cast<double>(m.cols())));
    if (norm2(multiply(m, f.v)) <= 1e-8 * fro) {
        Rng rng(opt.fallback_seed);
        for (double& x : f.v) x = rng.normal();
        detail::normalize_in_place(f.v);
    }

    double residual = 0.0;
    for (int it = 0; it < opt.max_iter; ++it) {
        f.u = multiply(m, f.v);
        if (!detail::normalize_in_place(f.u))
            throw ConvergenceError("rank1_svd: iterate collapsed to zero", f, fro);
        f.v = multiply_transposed(m, f.u);
        f.sigma = norm2(f.v);
        if (!detail::normalize_in_place(f.v))
            throw ConvergenceError("rank1_svd: iterate collapsed to zero", f, fro);
        residual = detail::triple_residual(m, f);
        if (opt.on_sweep) opt.on_sweep(it, f, residual);
        if (residual <= opt.tol * fro) {
            detail::fix_sign(f);
            return f;
        }
    }
    throw ConvergenceError("rank1_svd: no convergence after " + std::to_string(opt.max_iter) +
                               " iterations (residual " + std::to_string(residual / fro) + " relative)",
                           f, residual);
}

/// |M - sigma u v^T|_F
inline double frobenius_residual(const Matrix& m, const Rank1Factors& f) {
    if (f.u.size() != m.rows() || f.v.size() != m.cols())
        throw DimensionError("frobenius_residual: factor lengths do not match matrix");
    double s = 0.0;
    for (std::size_t r = 0; r < m.rows(); ++r)
        for (std::size_t c = 0; c < m.cols(); ++c) {
            const double d = m(r, c) - f.sigma * f.u[r] * f.v[c];
            s += d * d;
        }
    return std::sqrt(s);
}

} // namespace lcnet
