#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace hqc {

/// Maps any integer index onto the storage slot 0..n-1 of an n-periodic sequence
/// whose index 1 lives in slot 0.
inline int slot(long i, int n) {
    long k = (i - 1) % n;
    if (k < 0) k += n;
    return static_cast<int>(k);
}

/// Residue of any integer in 0..n-1.
inline int mod(long i, int n) {
    long k = i % n;
    if (k < 0) k += n;
    return static_cast<int>(k);
}

struct PeriodicGrid1D {
    int n = 1;
    double delta = 1.0;

    PeriodicGrid1D() = default;
    PeriodicGrid1D(int n_, double delta_) : n(n_), delta(delta_) {
        if (n < 1) throw std::invalid_argument("PeriodicGrid1D: n must be >= 1");
        if (!(delta > 0)) throw std::invalid_argument("PeriodicGrid1D: delta must be > 0");
    }

    /// n sites on a period of length `length` (delta = length / n).
    static PeriodicGrid1D over(int n, double length = 1.0) { return {n, length / n}; }

    double length() const { return n * delta; }
    double position(long i) const { return static_cast<double>(i) * delta; }

    friend bool operator==(const PeriodicGrid1D&, const PeriodicGrid1D&) = default;
};

/// An n-periodic real function on the lattice delta*Z. Accessors take 1-based
/// (periodically extended) indices; `values()` exposes the 0-based storage.
class LatticeFn1D {
public:
    LatticeFn1D() = default;
    explicit LatticeFn1D(PeriodicGrid1D grid) : grid_(grid), v_(static_cast<std::size_t>(grid.n), 0.0) {}
    LatticeFn1D(PeriodicGrid1D grid, std::vector<double> values) : grid_(grid), v_(std::move(values)) {
        if (static_cast<int>(v_.size()) != grid_.n)
            throw std::invalid_argument("LatticeFn1D: value count does not match grid size");
    }

    /// Samples f(X_i) for i = 1..n.
    template <class F>
    static LatticeFn1D sample(PeriodicGrid1D grid, F&& f) {
        LatticeFn1D u(grid);
        for (int i = 1; i <= grid.n; ++i) u.v_[static_cast<std::size_t>(i - 1)] = f(grid.position(i));
        return u;
    }

    const PeriodicGrid1D& grid() const { return grid_; }
    int size() const { return grid_.n; }

    double operator()(long i) const { return v_[static_cast<std::size_t>(slot(i, grid_.n))]; }
    double& at(long i) { return v_[static_cast<std::size_t>(slot(i, grid_.n))]; }

    std::span<const double> values() const { return v_; }
    std::span<double> values() { return v_; }
    const std::vector<double>& vec() const { return v_; }

    LatticeFn1D& operator+=(const LatticeFn1D& o) {
        check_same(o);
        for (std::size_t k = 0; k < v_.size(); ++k) v_[k] += o.v_[k];
        return *this;
    }
    LatticeFn1D& operator-=(const LatticeFn1D& o) {
        check_same(o);
        for (std::size_t k = 0; k < v_.size(); ++k) v_[k] -= o.v_[k];
        return *this;
    }
    LatticeFn1D& operator*=(double a) {
        for (double& x : v_) x *= a;
        return *this;
    }
    LatticeFn1D& operator+=(double c) {
        for (double& x : v_) x += c;
        return *this;
    }

    friend LatticeFn1D operator+(LatticeFn1D a, const LatticeFn1D& b) { return a += b; }
    friend LatticeFn1D operator-(LatticeFn1D a, const LatticeFn1D& b) { return a -= b; }
    friend LatticeFn1D operator*(double s, LatticeFn1D a) { return a *= s; }
    friend LatticeFn1D operator*(LatticeFn1D a, double s) { return a *= s; }
    friend LatticeFn1D operator-(LatticeFn1D a) { return a *= -1.0; }

    void check_same(const LatticeFn1D& o) const {
        if (!(grid_ == o.grid_)) throw std::invalid_argument("LatticeFn1D: mismatched grids");
    }

private:
    PeriodicGrid1D grid_;
    std::vector<double> v_;
};

/// A lattice function whose average vanishes. Only constructible through a
/// projection or a checked conversion.
class ZeroMeanFn1D {
public:
    ZeroMeanFn1D() = default;

    /// Accepts `u` if |<u>| <= tol; tol < 0 selects 1e-12 * max|u| (with a floor of 1e-300).
    static ZeroMeanFn1D checked(LatticeFn1D u, double tol = -1.0) {
        double s = 0, m = 0;
        for (double x : u.values()) {
            s += x;
            m = std::max(m, std::abs(x));
        }
        const double mean = s / u.size();
        if (tol < 0) tol = 1e-12 * std::max(m, 1e-300);
        if (std::abs(mean) > tol) throw std::invalid_argument("ZeroMeanFn1D: function does not have zero mean");
        return ZeroMeanFn1D(std::move(u));
    }

    const LatticeFn1D& fn() const { return u_; }
    operator const LatticeFn1D&() const { return u_; }
    const PeriodicGrid1D& grid() const { return u_.grid(); }
    int size() const { return u_.size(); }
    double operator()(long i) const { return u_(i); }
    std::span<const double> values() const { return u_.values(); }

private:
    explicit ZeroMeanFn1D(LatticeFn1D u) : u_(std::move(u)) {}
    friend ZeroMeanFn1D project_zero_mean(const LatticeFn1D& u);

    LatticeFn1D u_;
};

/// A function of a slow index i (period N) and a fast index j (period p).
class TwoScaleFn {
public:
    TwoScaleFn() = default;
    TwoScaleFn(int N, int p) : N_(N), p_(p), v_(static_cast<std::size_t>(N) * p, 0.0) {
        if (N < 1 || p < 1) throw std::invalid_argument("TwoScaleFn: periods must be >= 1");
    }

    /// Builds the table from f(i, j), i = 1..N, j = 1..p.
    template <class F>
    static TwoScaleFn tabulate(int N, int p, F&& f) {
        TwoScaleFn t(N, p);
        for (int i = 1; i <= N; ++i)
            for (int j = 1; j <= p; ++j) t.at(i, j) = f(i, j);
        return t;
    }

    int slow_period() const { return N_; }
    int fast_period() const { return p_; }

    double operator()(long i, long j) const { return v_[index(i, j)]; }
    double& at(long i, long j) { return v_[index(i, j)]; }

    /// The fast row at slow index i (0-based storage of j = 1..p).
    std::span<const double> row(long i) const {
        return {v_.data() + static_cast<std::size_t>(slot(i, N_)) * p_, static_cast<std::size_t>(p_)};
    }
    std::span<const double> values() const { return v_; }

private:
    std::size_t index(long i, long j) const {
        return static_cast<std::size_t>(slot(i, N_)) * p_ + static_cast<std::size_t>(slot(j, p_));
    }

    int N_ = 1;
    int p_ = 1;
    std::vector<double> v_;
};

// ---------------------------------------------------------------------------
// Discrete calculus

/// (T^r u)(X_i) = u(X_{i+r}).
inline LatticeFn1D translate(const LatticeFn1D& u, long r) {
    LatticeFn1D out(u.grid());
    for (int i = 1; i <= u.size(); ++i) out.at(i) = u(i + r);
    return out;
}

/// r-step forward difference (u(X_{i+r}) - u(X_i)) / (r delta).
inline LatticeFn1D diff(const LatticeFn1D& u, long r = 1) {
    if (r == 0) throw std::invalid_argument("diff: step r must be nonzero");
    LatticeFn1D out(u.grid());
    const double h = static_cast<double>(r) * u.grid().delta;
    for (int i = 1; i <= u.size(); ++i) out.at(i) = (u(i + r) - u(i)) / h;
    return out;
}

/// Componentwise product.
inline LatticeFn1D product(const LatticeFn1D& a, const LatticeFn1D& b) {
    a.check_same(b);
    LatticeFn1D out(a.grid());
    for (int i = 1; i <= a.size(); ++i) out.at(i) = a(i) * b(i);
    return out;
}

inline double average(std::span<const double> v) {
    double s = 0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
}

inline double average(const LatticeFn1D& u) { return average(u.values()); }

inline double inner(const LatticeFn1D& u, const LatticeFn1D& v) {
    u.check_same(v);
    double s = 0;
    for (int k = 0; k < u.size(); ++k) s += u.values()[k] * v.values()[k];
    return s / u.size();
}

inline ZeroMeanFn1D project_zero_mean(const LatticeFn1D& u) {
    LatticeFn1D out = u;
    const double m = average(u);
    for (double& x : out.values()) x -= m;
    return ZeroMeanFn1D(std::move(out));
}

/// Av(u)_i = (u_i + u_{i+1}) / 2.
inline LatticeFn1D pair_average(const LatticeFn1D& u) {
    LatticeFn1D out(u.grid());
    for (int i = 1; i <= u.size(); ++i) out.at(i) = 0.5 * (u(i) + u(i + 1));
    return out;
}

// ---------------------------------------------------------------------------
// Norms

struct Norm {
    enum class Kind { Lq, Linf, W1q, H1, H2, Hm1 };
    Kind kind = Kind::Lq;
    double q = 2.0;

    static Norm lq(double q) { return {Kind::Lq, q}; }
    static Norm l2() { return {Kind::Lq, 2.0}; }
    static Norm linf() { return {Kind::Linf, std::numeric_limits<double>::infinity()}; }
    /// q = infinity is allowed and gives max|Du|.
    static Norm w1q(double q) { return {Kind::W1q, q}; }
    static Norm h1() { return {Kind::H1, 2.0}; }
    static Norm h2() { return {Kind::H2, 2.0}; }
    static Norm hm1() { return {Kind::Hm1, 2.0}; }
};

inline double lq_norm(std::span<const double> v, double q) {
    if (q < 1) throw std::invalid_argument("norm: q must be >= 1");
    if (std::isinf(q)) {
        double m = 0;
        for (double x : v) m = std::max(m, std::abs(x));
        return m;
    }
    double s = 0;
    if (q == 2.0) {
        for (double x : v) s += x * x;
        return std::sqrt(s / static_cast<double>(v.size()));
    }
    for (double x : v) s += std::pow(std::abs(x), q);
    return std::pow(s / static_cast<double>(v.size()), 1.0 / q);
}

/// |v|_{H^-1} for zero-mean v. The dual norm equals |z|_{H^1} where z is the
/// zero-mean Riesz representer, <Dz, Dw> = <v, w>. Its derivative q = Dz solves
/// -(q_i - q_{i-1}) / delta = v_i with <q> = 0, which is a running sum.
inline double hm1_norm(const LatticeFn1D& v) {
    const int n = v.size();
    double scale = 0;
    for (double x : v.values()) scale = std::max(scale, std::abs(x));
    if (std::abs(average(v)) > 1e-10 * std::max(scale, 1e-300))
        throw std::invalid_argument("norm: H^-1 requires a zero-mean argument");
    const double d = v.grid().delta;
    std::vector<double> q(static_cast<std::size_t>(n));
    double acc = 0;
    for (int k = 0; k < n; ++k) {
        acc -= d * v.values()[k];
        q[static_cast<std::size_t>(k)] = acc;
    }
    const double m = average(q);
    for (double& x : q) x -= m;
    return lq_norm(q, 2.0);
}

inline double norm(const LatticeFn1D& u, Norm kind) {
    switch (kind.kind) {
        case Norm::Kind::Lq: return lq_norm(u.values(), kind.q);
        case Norm::Kind::Linf: return lq_norm(u.values(), std::numeric_limits<double>::infinity());
        case Norm::Kind::W1q: return lq_norm(diff(u).values(), kind.q);
        case Norm::Kind::H1: return lq_norm(diff(u).values(), 2.0);
        case Norm::Kind::H2: return lq_norm(diff(diff(u)).values(), 2.0);
        case Norm::Kind::Hm1: return hm1_norm(u);
    }
    return 0;
}

}  // namespace hqc
