#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "hqc/errors.hpp"

namespace hqc {

/// Symmetric matrix whose nonzeros satisfy |i - j| <= b modulo n (0-based).
/// For n < 2b + 1 the cyclic band covers everything and a dense table is kept.
class CyclicBandedMatrix {
public:
    CyclicBandedMatrix() = default;
    CyclicBandedMatrix(int n, int b) : n_(n), b_(b) {
        if (n < 1 || b < 0) throw std::invalid_argument("CyclicBandedMatrix: bad dimensions");
        if (dense_mode())
            dense_.assign(static_cast<std::size_t>(n) * n, 0.0);
        else
            band_.assign(static_cast<std::size_t>(n) * (b + 1), 0.0);
    }

    int size() const { return n_; }
    int bandwidth() const { return b_; }
    bool dense_mode() const { return n_ < 2 * b_ + 1; }

    /// Adds v to A(i,j) and, for i != j, to A(j,i).
    void add(int i, int j, double v) {
        i = wrap(i);
        j = wrap(j);
        if (dense_mode()) {
            dense_[idx(i, j)] += v;
            if (i != j) dense_[idx(j, i)] += v;
            return;
        }
        double* e = entry(i, j);
        if (!e) throw std::invalid_argument("CyclicBandedMatrix: entry outside the cyclic band");
        *e += v;
    }

    double operator()(int i, int j) const {
        i = wrap(i);
        j = wrap(j);
        if (dense_mode()) return dense_[idx(i, j)];
        const double* e = const_cast<CyclicBandedMatrix*>(this)->entry(i, j);
        return e ? *e : 0.0;
    }

    void multiply(std::span<const double> x, std::span<double> y) const {
        if (dense_mode()) {
            for (int i = 0; i < n_; ++i) {
                double s = 0;
                for (int j = 0; j < n_; ++j) s += dense_[idx(i, j)] * x[j];
                y[i] = s;
            }
            return;
        }
        std::fill(y.begin(), y.end(), 0.0);
        for (int i = 0; i < n_; ++i) {
            const double* row = &band_[static_cast<std::size_t>(i) * (b_ + 1)];
            y[i] += row[0] * x[i];
            for (int d = 1; d <= b_; ++d) {
                const int j = (i + d) % n_;
                y[i] += row[d] * x[j];
                y[j] += row[d] * x[i];
            }
        }
    }

    Eigen::MatrixXd to_dense() const {
        Eigen::MatrixXd A(n_, n_);
        for (int i = 0; i < n_; ++i)
            for (int j = 0; j < n_; ++j) A(i, j) = (*this)(i, j);
        return A;
    }

private:
    int wrap(int i) const { return ((i % n_) + n_) % n_; }
    std::size_t idx(int i, int j) const { return static_cast<std::size_t>(i) * n_ + j; }

    // Stored as row i, forward offset d = (j - i) mod n in 0..b.
    double* entry(int i, int j) {
        const int d = ((j - i) % n_ + n_) % n_;
        if (d <= b_) return &band_[static_cast<std::size_t>(i) * (b_ + 1) + d];
        if (n_ - d <= b_) return &band_[static_cast<std::size_t>(j) * (b_ + 1) + (n_ - d)];
        return nullptr;
    }

    int n_ = 0;
    int b_ = 0;
    std::vector<double> band_;
    std::vector<double> dense_;
};

/// Cholesky factorization of a non-cyclic symmetric banded SPD matrix given
/// through an entry accessor on 0..m-1.
class BandCholesky {
public:
    BandCholesky() = default;

    template <class Entry>
    BandCholesky(int m, int b, Entry&& a) : m_(m), b_(b), L_(static_cast<std::size_t>(m) * (b + 1), 0.0) {
        double scale = 0;
        for (int i = 0; i < m; ++i) scale = std::max(scale, std::abs(a(i, i)));
        for (int i = 0; i < m; ++i) {
            for (int d = std::min(b, i); d >= 1; --d) {
                const int j = i - d;
                double s = a(i, j);
                for (int k = std::max(0, i - b); k < j; ++k) s -= l(i, k) * l(j, k);
                l(i, j) = s / l(j, j);
            }
            double s = a(i, i);
            for (int k = std::max(0, i - b); k < i; ++k) s -= l(i, k) * l(i, k);
            if (!(s > 1e-14 * scale)) throw SingularSystem("band Cholesky: non-positive pivot at row " + std::to_string(i), s);
            l(i, i) = std::sqrt(s);
        }
    }

    int size() const { return m_; }

    void solve_in_place(std::span<double> x) const {
        for (int i = 0; i < m_; ++i) {
            double s = x[i];
            for (int k = std::max(0, i - b_); k < i; ++k) s -= l(i, k) * x[k];
            x[i] = s / l(i, i);
        }
        for (int i = m_ - 1; i >= 0; --i) {
            double s = x[i];
            for (int k = i + 1; k <= std::min(m_ - 1, i + b_); ++k) s -= l(k, i) * x[k];
            x[i] = s / l(i, i);
        }
    }

private:
    double& l(int i, int j) { return L_[static_cast<std::size_t>(i) * (b_ + 1) + (i - j)]; }
    double l(int i, int j) const { return L_[static_cast<std::size_t>(i) * (b_ + 1) + (i - j)]; }

    int m_ = 0;
    int b_ = 0;
    std::vector<double> L_;
};

inline void check_zero_mean_rhs(std::span<const double> b) {
    double s = 0, m = 0;
    for (double x : b) {
        s += x;
        m = std::max(m, std::abs(x));
    }
    const double mean = s / static_cast<double>(b.size());
    if (std::abs(mean) > 1e-10 * std::max(m, 1e-300)) throw NonZeroMeanRhs(mean);
}

inline void remove_mean(std::span<double> x) {
    double s = 0;
    for (double v : x) s += v;
    s /= static_cast<double>(x.size());
    for (double& v : x) v -= s;
}

/// Factorization of the bordered system [A 1; 1' 0] for a cyclic banded A that is
/// SPD on zero-mean vectors. The last b unknowns are split off so the interior
/// block is plainly banded; the small border block (with the mean multiplier)
/// is handled by a dense Schur complement.
class ConstrainedCyclicSolver {
public:
    explicit ConstrainedCyclicSolver(const CyclicBandedMatrix& A) : n_(A.size()), b_(A.bandwidth()) {
        if (A.dense_mode() || b_ == 0) {
            dense_ = true;
            Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n_ + 1, n_ + 1);
            M.topLeftCorner(n_, n_) = A.to_dense();
            M.block(0, n_, n_, 1).setOnes();
            M.block(n_, 0, 1, n_).setOnes();
            full_lu_.compute(M);
            if (!full_lu_.isInvertible()) throw SingularSystem("constrained dense solve", 0.0);
            return;
        }
        m_ = n_ - b_;
        chol_ = BandCholesky(m_, b_, [&](int i, int j) { return A(i, j); });

        // Coupling columns: A(I, B) and the constraint column 1_I.
        W_ = Eigen::MatrixXd::Zero(m_, b_ + 1);
        for (int c = 0; c < b_; ++c)
            for (int i = 0; i < m_; ++i) W_(i, c) = A(i, m_ + c);
        W_.col(b_).setOnes();
        const Eigen::MatrixXd M = W_;
        for (int c = 0; c <= b_; ++c) chol_.solve_in_place(std::span<double>(W_.col(c).data(), static_cast<std::size_t>(m_)));
        M_ = M;

        Eigen::MatrixXd Nb = Eigen::MatrixXd::Zero(b_ + 1, b_ + 1);
        for (int r = 0; r < b_; ++r) {
            for (int c = 0; c < b_; ++c) Nb(r, c) = A(m_ + r, m_ + c);
            Nb(r, b_) = 1.0;
            Nb(b_, r) = 1.0;
        }
        S_ = Nb - M.transpose() * W_;
        schur_lu_.compute(S_);
        if (!schur_lu_.isInvertible()) throw SingularSystem("constrained cyclic solve: singular border block", 0.0);
    }

    /// Solves A x = rhs with <x> = 0. rhs must have zero mean.
    std::vector<double> solve(std::span<const double> rhs) const {
        if (static_cast<int>(rhs.size()) != n_) throw std::invalid_argument("solve: dimension mismatch");
        check_zero_mean_rhs(rhs);
        std::vector<double> x(static_cast<std::size_t>(n_));
        if (dense_) {
            Eigen::VectorXd r = Eigen::VectorXd::Zero(n_ + 1);
            for (int i = 0; i < n_; ++i) r(i) = rhs[i];
            const Eigen::VectorXd y = full_lu_.solve(r);
            for (int i = 0; i < n_; ++i) x[i] = y(i);
            remove_mean(x);
            return x;
        }
        std::vector<double> xi(rhs.begin(), rhs.begin() + m_);
        chol_.solve_in_place(xi);
        Eigen::VectorXd g(b_ + 1);
        for (int r = 0; r < b_; ++r) g(r) = rhs[m_ + r];
        g(b_) = 0.0;
        const Eigen::Map<const Eigen::VectorXd> xim(xi.data(), m_);
        g -= M_.transpose() * xim;
        const Eigen::VectorXd y = schur_lu_.solve(g);
        const Eigen::VectorXd corr = W_ * y;
        for (int i = 0; i < m_; ++i) x[i] = xi[i] - corr(i);
        for (int r = 0; r < b_; ++r) x[m_ + r] = y(r);
        remove_mean(x);
        return x;
    }

private:
    int n_ = 0;
    int b_ = 0;
    int m_ = 0;
    bool dense_ = false;
    BandCholesky chol_;
    Eigen::MatrixXd W_, M_, S_;
    Eigen::FullPivLU<Eigen::MatrixXd> schur_lu_;
    Eigen::FullPivLU<Eigen::MatrixXd> full_lu_;
};

inline std::vector<double> solve_constrained_direct(const CyclicBandedMatrix& A, std::span<const double> b) {
    return ConstrainedCyclicSolver(A).solve(b);
}

/// Matrix-free symmetric operator. `diagonal` (optional) enables Jacobi preconditioning.
struct LinearOperator {
    int n = 0;
    std::function<void(std::span<const double>, std::span<double>)> apply;
    std::vector<double> diagonal;
};

struct CgResult {
    std::vector<double> x;
    int iterations = 0;
    double relative_residual = 0;
};

/// Preconditioned CG restricted to zero-mean vectors; every update is projected.
inline CgResult solve_constrained_cg(const LinearOperator& A, std::span<const double> b, double tol = 1e-12,
                                     int max_iter = 10000, std::span<const double> x0 = {}) {
    const int n = A.n;
    if (static_cast<int>(b.size()) != n) throw std::invalid_argument("cg: dimension mismatch");
    check_zero_mean_rhs(b);
    CgResult res;
    res.x.assign(static_cast<std::size_t>(n), 0.0);
    if (!x0.empty()) {
        std::copy(x0.begin(), x0.end(), res.x.begin());
        remove_mean(res.x);
    }
    auto dot = [n](const std::vector<double>& a, const std::vector<double>& c) {
        double s = 0;
        for (int i = 0; i < n; ++i) s += a[i] * c[i];
        return s;
    };
    std::vector<double> r(b.begin(), b.end()), Ap(static_cast<std::size_t>(n)), z(static_cast<std::size_t>(n)), p;
    remove_mean(r);
    const double bnorm = std::sqrt(dot(r, r));
    if (bnorm == 0.0) {
        std::fill(res.x.begin(), res.x.end(), 0.0);
        return res;
    }
    if (!x0.empty()) {
        A.apply(res.x, Ap);
        for (int i = 0; i < n; ++i) r[i] -= Ap[i];
        remove_mean(r);
    }
    const bool precond = static_cast<int>(A.diagonal.size()) == n;
    auto precondition = [&] {
        for (int i = 0; i < n; ++i) z[i] = precond ? r[i] / A.diagonal[i] : r[i];
        remove_mean(z);
    };
    precondition();
    p = z;
    double rz = dot(r, z);
    double rnorm = std::sqrt(dot(r, r));
    int it = 0;
    while (rnorm > tol * bnorm) {
        if (it >= max_iter) throw NoConvergence("projected CG", it, rnorm / bnorm);
        A.apply(p, Ap);
        remove_mean(Ap);
        const double pAp = dot(p, Ap);
        if (!(pAp > 0)) throw SingularSystem("projected CG: non-positive curvature", pAp);
        const double alpha = rz / pAp;
        for (int i = 0; i < n; ++i) {
            res.x[i] += alpha * p[i];
            r[i] -= alpha * Ap[i];
        }
        remove_mean(r);
        precondition();
        const double rz_new = dot(r, z);
        const double beta = rz_new / rz;
        rz = rz_new;
        for (int i = 0; i < n; ++i) p[i] = z[i] + beta * p[i];
        rnorm = std::sqrt(dot(r, r));
        ++it;
    }
    remove_mean(res.x);
    res.iterations = it;
    res.relative_residual = rnorm / bnorm;
    return res;
}

}  // namespace hqc
