#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <mutex>
#include <shared_mutex>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>

#include "hqc/errors.hpp"
#include "hqc/grid.hpp"
#include "hqc/model.hpp"
#include "hqc/potential.hpp"

namespace hqc {

// Cell problems live on the fast lattice Z with spacing 1 and period p. Rows are
// 0-based vectors of length p holding the values at Y_1..Y_p.

namespace detail {

inline int wrapp(int j, int p) { return ((j % p) + p) % p; }

/// Basis of the zero-mean subspace: columns e_k - e_{p-1}, k = 0..p-2.
inline Eigen::MatrixXd zero_mean_basis(int p) {
    Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(p, p - 1);
    for (int k = 0; k < p - 1; ++k) {
        Q(k, k) = 1;
        Q(p - 1, k) = -1;
    }
    return Q;
}

/// Assembled p x p matrix of sum_r sum_j c_r(j) (e_{j+r} - e_j)(e_{j+r} - e_j)'.
template <class Coef>
Eigen::MatrixXd assemble_cell_matrix(int p, int R, Coef&& c) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(p, p);
    for (int r = 1; r <= R; ++r)
        for (int j = 0; j < p; ++j) {
            const int k = wrapp(j + r, p);
            if (k == j) continue;
            const double v = c(j, r);
            A(j, j) += v;
            A(k, k) += v;
            A(j, k) -= v;
            A(k, j) -= v;
        }
    return A;
}

/// Solves the reduced system Q'AQ y = Q'b and returns x = Qy shifted to zero mean.
/// Throws NonCoercive if the reduced matrix is not positive definite.
inline std::vector<double> reduced_solve(const Eigen::MatrixXd& A, const Eigen::VectorXd& b, const char* what) {
    const int p = static_cast<int>(A.rows());
    if (p == 1) return {0.0};
    const Eigen::MatrixXd Q = zero_mean_basis(p);
    const Eigen::MatrixXd Ar = Q.transpose() * A * Q;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Ar, Eigen::EigenvaluesOnly);
    const double lmin = es.eigenvalues().minCoeff();
    const double scale = std::max(1e-300, es.eigenvalues().cwiseAbs().maxCoeff());
    if (!(lmin > 1e-12 * scale)) throw NonCoercive(what, lmin);
    const Eigen::VectorXd y = Ar.ldlt().solve(Q.transpose() * b);
    Eigen::VectorXd x = Q * y;
    x.array() -= x.mean();
    return {x.data(), x.data() + p};
}

}  // namespace detail

/// Corrector row for nearest-neighbour bonds: <psi (1 + D_Y chi), D_Y s>_Y = 0.
/// Solved as a linear system (the closed form below is kept as an independent check).
inline std::vector<double> solve_cell_nn(std::span<const double> psi) {
    const int p = static_cast<int>(psi.size());
    if (p < 1) throw std::invalid_argument("solve_cell_nn: empty row");
    const double mn = *std::min_element(psi.begin(), psi.end());
    if (!(mn > 0)) throw NonCoercive("solve_cell_nn: stiffness must be positive", mn);
    const Eigen::MatrixXd A = detail::assemble_cell_matrix(p, 1, [&](int j, int) { return psi[j]; });
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    for (int j = 0; j < p; ++j) {
        b(j) += psi[j];
        b(detail::wrapp(j + 1, p)) -= psi[j];
    }
    return detail::reduced_solve(A, b, "solve_cell_nn");
}

inline double harmonic_mean(std::span<const double> psi) {
    double s = 0;
    for (double x : psi) {
        if (!(x > 0)) throw NonCoercive("harmonic_mean: stiffness must be positive", x);
        s += 1.0 / x;
    }
    return static_cast<double>(psi.size()) / s;
}

/// chi(Y_j) = psi0 <g(Y_j - .) / psi(.)>_Y with the sawtooth g(Y_m) = (p+1)/2 - m, 1 <= m <= p.
inline std::vector<double> chi_closed_form(std::span<const double> psi) {
    const int p = static_cast<int>(psi.size());
    const double psi0 = harmonic_mean(psi);
    auto g = [p](int m) { return (p + 1) / 2.0 - (detail::wrapp(m - 1, p) + 1); };
    std::vector<double> chi(p);
    for (int j = 1; j <= p; ++j) {
        double s = 0;
        for (int b = 1; b <= p; ++b) s += g(j - b) / psi[b - 1];
        chi[j - 1] = psi0 * s / p;
    }
    return chi;
}

/// Corrector for several ranges: sum_r <psi_r (1 + D_{Y,r} chi), D_{Y,r} s>_Y = 0.
/// psi[r-1] is the fast row of psi_r.
inline std::vector<double> solve_cell_finite_range(const std::vector<std::vector<double>>& psi) {
    if (psi.empty()) throw std::invalid_argument("solve_cell_finite_range: no ranges");
    const int p = static_cast<int>(psi.front().size());
    const int R = static_cast<int>(psi.size());
    const Eigen::MatrixXd A =
        detail::assemble_cell_matrix(p, R, [&](int j, int r) { return psi[r - 1][j] / (double(r) * r); });
    Eigen::VectorXd b = Eigen::VectorXd::Zero(p);
    for (int r = 1; r <= R; ++r)
        for (int j = 0; j < p; ++j) {
            const int k = detail::wrapp(j + r, p);
            if (k == j) continue;
            b(j) += psi[r - 1][j] / r;
            b(k) -= psi[r - 1][j] / r;
        }
    return detail::reduced_solve(A, b, "solve_cell_finite_range: reduced cell matrix is not positive definite");
}

/// D_{Y,r} chi at fast site j (0-based).
inline double cell_strain(std::span<const double> chi, int j, int r) {
    const int p = static_cast<int>(chi.size());
    return (chi[detail::wrapp(j + r, p)] - chi[j]) / r;
}

/// psi0 = sum_r <psi_r (1 + D_{Y,r} chi)>_Y.
inline double homogenize_finite_range(const std::vector<std::vector<double>>& psi, std::span<const double> chi) {
    const int p = static_cast<int>(chi.size());
    double s = 0;
    for (int r = 1; r <= static_cast<int>(psi.size()); ++r)
        for (int j = 0; j < p; ++j) s += psi[r - 1][j] * (1 + cell_strain(chi, j, r));
    s /= p;
    if (!(s > 0)) throw NonCoercive("homogenized stiffness is not positive", s);
    return s;
}

/// Residual of the linear cell problem (gradient vector of the cell energy at unit strain).
inline double cell_residual(const std::vector<std::vector<double>>& psi, std::span<const double> chi) {
    const int p = static_cast<int>(chi.size());
    std::vector<double> g(p, 0.0);
    for (int r = 1; r <= static_cast<int>(psi.size()); ++r)
        for (int j = 0; j < p; ++j) {
            const double a = psi[r - 1][j] * (1 + cell_strain(chi, j, r)) / r;
            g[detail::wrapp(j + r, p)] += a;
            g[j] -= a;
        }
    double m = 0;
    for (double x : g) m = std::max(m, std::abs(x));
    return m;
}

// ---------------------------------------------------------------------------
// Two-scale tensors

class CellTensor1D {
public:
    CellTensor1D() = default;
    explicit CellTensor1D(TwoScaleFn psi) : psi_(std::move(psi)) {
        lo_ = *std::min_element(psi_.values().begin(), psi_.values().end());
        hi_ = *std::max_element(psi_.values().begin(), psi_.values().end());
        if (!(lo_ > 0)) throw NonCoercive("CellTensor1D: tensor must be uniformly positive", lo_);
    }

    const TwoScaleFn& values() const { return psi_; }
    int N() const { return psi_.slow_period(); }
    int p() const { return psi_.fast_period(); }
    double c_psi() const { return lo_; }
    double C_psi() const { return hi_; }

private:
    TwoScaleFn psi_;
    double lo_ = 0, hi_ = 0;
};

struct HomogenizedTensor1D {
    LatticeFn1D psi0;            // harmonic-mean route
    LatticeFn1D psi0_corrector;  // <psi (1 + D_Y chi)>_Y route
    TwoScaleFn chi;
    double discrepancy = 0;  // max relative difference between the two routes
};

inline HomogenizedTensor1D homogenize_nn(const CellTensor1D& t, double length = 1.0) {
    const int N = t.N(), p = t.p();
    auto g = PeriodicGrid1D::over(N, length);
    HomogenizedTensor1D h{LatticeFn1D(g), LatticeFn1D(g), TwoScaleFn(N, p), 0.0};
    for (int i = 1; i <= N; ++i) {
        const auto row = t.values().row(i);
        const double a = harmonic_mean(row);
        const auto chi = solve_cell_nn(row);
        const double b = homogenize_finite_range({std::vector<double>(row.begin(), row.end())}, chi);
        h.psi0.at(i) = a;
        h.psi0_corrector.at(i) = b;
        for (int j = 1; j <= p; ++j) h.chi.at(i, j) = chi[j - 1];
        h.discrepancy = std::max(h.discrepancy, std::abs(a - b) / a);
    }
    return h;
}

struct ModelBounds {
    double c_psi = 0;
    double C_psi = 0;
    double Cprime_psi = 0;  // ||D_X psi||_inf
    double C2_psi0 = 0;     // ||D_X^2 psi0||_inf
    double C_coll = 0;
};

inline ModelBounds model_bounds(const CellTensor1D& t, const LatticeFn1D& psi0, double C_coll = 1.0) {
    ModelBounds b;
    b.c_psi = t.c_psi();
    b.C_psi = t.C_psi();
    const double eps = psi0.grid().delta;
    for (int i = 1; i <= t.N(); ++i)
        for (int j = 1; j <= t.p(); ++j)
            b.Cprime_psi = std::max(b.Cprime_psi, std::abs(t.values()(i + 1, j) - t.values()(i, j)) / eps);
    b.C2_psi0 = norm(diff(diff(psi0)), Norm::linf());
    b.C_coll = C_coll;
    return b;
}

// ---------------------------------------------------------------------------
// Homogenized problem and corrector

inline ZeroMeanFn1D solve_homogenized(const LatticeFn1D& psi0, const LatticeFn1D& f) { return solve_linear_nn(psi0, f); }

/// u^c(X_i) = u0(X_i) + eps chi(X_i, Y_i) D_X u0(X_i), with Y_i the fast index of site i.
inline LatticeFn1D corrector(const LatticeFn1D& u0, const TwoScaleFn& chi) {
    const int N = u0.size(), p = chi.fast_period();
    if (chi.slow_period() != N || N % p != 0) throw std::invalid_argument("corrector: dimension mismatch");
    const double eps = u0.grid().delta;
    const LatticeFn1D du = diff(u0);
    LatticeFn1D uc = u0;
    for (int i = 1; i <= N; ++i) uc.at(i) += eps * chi(i, fast_index(i, p)) * du(i);
    return uc;
}

// ---------------------------------------------------------------------------
// Nonlinear cell problem

/// pots[j][r-1]: potential of the bond (j, j+r) at fast site j (0-based).
using CellPotentials = std::vector<std::vector<PairPotential>>;

struct CellOptions {
    double tol = 1e-12;
    int max_iter = 50;
    bool check_stability = true;
    // When false, stop quietly after max_iter steps (used for one-step micro updates).
    bool throw_on_max_iter = true;
};

struct CellState {
    std::vector<double> chi;
    double energy = 0;     // W(z) = sum_r <Phi_r(z + D_{Y,r} chi)>_Y
    double flux = 0;       // W'(z) = sum_r <Phi_r'(z + D_{Y,r} chi)>_Y
    double stiffness = 0;  // W''(z), including the relaxation of chi
    std::vector<double> dchi;  // d chi / dz
    int iterations = 0;
    double residual = 0;
};

namespace detail {

inline int cell_range(const CellPotentials& pots) {
    if (pots.empty() || pots.front().empty()) throw std::invalid_argument("cell: empty potential table");
    return static_cast<int>(pots.front().size());
}

inline Eigen::VectorXd cell_gradient(const CellPotentials& pots, double z, std::span<const double> chi) {
    const int p = static_cast<int>(chi.size()), R = cell_range(pots);
    Eigen::VectorXd g = Eigen::VectorXd::Zero(p);
    for (int r = 1; r <= R; ++r)
        for (int j = 0; j < p; ++j) {
            const int k = wrapp(j + r, p);
            if (k == j) continue;
            const double a = bond_flux(pots[j][r - 1], r, z + cell_strain(chi, j, r), j + 1) / r;
            g(k) += a;
            g(j) -= a;
        }
    return g;
}

inline Eigen::MatrixXd cell_hessian(const CellPotentials& pots, double z, std::span<const double> chi) {
    const int p = static_cast<int>(chi.size()), R = cell_range(pots);
    return assemble_cell_matrix(p, R, [&](int j, int r) {
        return bond_stiffness(pots[j][r - 1], r, z + cell_strain(chi, j, r), j + 1) / (double(r) * r);
    });
}

inline double cell_energy(const CellPotentials& pots, double z, std::span<const double> chi) {
    const int p = static_cast<int>(chi.size()), R = cell_range(pots);
    double e = 0;
    for (int r = 1; r <= R; ++r)
        for (int j = 0; j < p; ++j) e += bond_energy(pots[j][r - 1], r, z + cell_strain(chi, j, r), j + 1);
    return e / p;
}

}  // namespace detail

/// Finite-range stiffness rows psi_r(j) = Phi_r''(z + D_{Y,r} chi) of a cell state.
inline std::vector<std::vector<double>> cell_tangent_rows(const CellPotentials& pots, double z, std::span<const double> chi) {
    const int p = static_cast<int>(chi.size()), R = detail::cell_range(pots);
    std::vector<std::vector<double>> psi(R, std::vector<double>(p));
    for (int r = 1; r <= R; ++r)
        for (int j = 0; j < p; ++j) psi[r - 1][j] = bond_stiffness(pots[j][r - 1], r, z + cell_strain(chi, j, r), j + 1);
    return psi;
}

/// Solves sum_r <Phi_r'(z + D_{Y,r} chi), D_{Y,r} s>_Y = 0 over zero-mean chi by Newton's
/// method from chi0 (zero if empty), then evaluates energy, flux and relaxed stiffness.
inline CellState solve_cell_nonlinear(double z, const CellPotentials& pots, std::span<const double> chi0 = {},
                                      CellOptions opt = {}) {
    const int p = static_cast<int>(pots.size());
    CellState st;
    st.chi.assign(static_cast<std::size_t>(p), 0.0);
    if (!chi0.empty()) {
        if (static_cast<int>(chi0.size()) != p) throw std::invalid_argument("solve_cell_nonlinear: bad initial guess");
        std::copy(chi0.begin(), chi0.end(), st.chi.begin());
        remove_mean(st.chi);
    }
    const Eigen::MatrixXd Q = detail::zero_mean_basis(std::max(p, 1));
    for (int it = 0;; ++it) {
        const Eigen::VectorXd g = detail::cell_gradient(pots, z, st.chi);
        double flux_scale = 0;
        for (int r = 1; r <= detail::cell_range(pots); ++r)
            for (int j = 0; j < p; ++j)
                flux_scale = std::max(flux_scale, std::abs(bond_flux(pots[j][r - 1], r, z + cell_strain(st.chi, j, r))));
        st.residual = g.cwiseAbs().maxCoeff();
        st.iterations = it;
        if (p == 1 || st.residual <= opt.tol * std::max(1.0, flux_scale)) break;
        if (it >= opt.max_iter) {
            if (opt.throw_on_max_iter) throw NoConvergence("solve_cell_nonlinear", it, st.residual);
            break;
        }
        const Eigen::MatrixXd Hr = Q.transpose() * detail::cell_hessian(pots, z, st.chi) * Q;
        Eigen::LDLT<Eigen::MatrixXd> ldlt(Hr);
        Eigen::VectorXd step = Q * ldlt.solve(-(Q.transpose() * g));
        step.array() -= step.mean();
        // Halve on domain violation; the cell energy serves as merit function.
        const double E0 = detail::cell_energy(pots, z, st.chi);
        double t = 1;
        for (int h = 0;; ++h) {
            std::vector<double> trial(st.chi);
            for (int j = 0; j < p; ++j) trial[j] += t * step(j);
            try {
                const double E1 = detail::cell_energy(pots, z, trial);
                if (E1 <= E0 + 1e-12 * std::max(1.0, std::abs(E0)) || h >= 30) {
                    st.chi = std::move(trial);
                    break;
                }
            } catch (const DomainViolation&) {
                if (h >= 30) throw;
            }
            t *= 0.5;
        }
    }
    st.energy = detail::cell_energy(pots, z, st.chi);
    const auto psi = cell_tangent_rows(pots, z, st.chi);
    double flux = 0;
    for (int r = 1; r <= detail::cell_range(pots); ++r)
        for (int j = 0; j < p; ++j) flux += bond_flux(pots[j][r - 1], r, z + cell_strain(st.chi, j, r), j + 1);
    st.flux = flux / p;
    if (opt.check_stability && p > 1) {
        const Eigen::MatrixXd Hr = Q.transpose() * detail::cell_hessian(pots, z, st.chi) * Q;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Hr, Eigen::EigenvaluesOnly);
        if (!(es.eigenvalues().minCoeff() > 0))
            throw NonCoercive("solve_cell_nonlinear: relaxed cell state is not a stable equilibrium",
                              es.eigenvalues().minCoeff());
    }
    st.dchi = solve_cell_finite_range(psi);
    st.stiffness = homogenize_finite_range(psi, st.dchi);
    return st;
}

inline double homogenized_flux(double z, const CellPotentials& pots) { return solve_cell_nonlinear(z, pots).flux; }

/// Memo for chi(z) keyed by (material key, z rounded to 1e-14). Safe for
/// concurrent lookups and inserts.
class CellMemo {
public:
    template <class Compute>
    CellState get(std::int64_t key, double z, Compute&& compute) {
        const auto k = std::make_pair(key, static_cast<std::int64_t>(std::llround(z * 1e14)));
        {
            std::shared_lock lock(mu_);
            auto it = map_.find(k);
            if (it != map_.end()) {
                ++hits_;
                return it->second;
            }
        }
        CellState st = compute();
        std::unique_lock lock(mu_);
        map_.emplace(k, st);
        return st;
    }

    void clear() {
        std::unique_lock lock(mu_);
        map_.clear();
    }
    std::size_t size() const {
        std::shared_lock lock(mu_);
        return map_.size();
    }
    std::size_t hits() const { return hits_; }

private:
    mutable std::shared_mutex mu_;
    std::map<std::pair<std::int64_t, std::int64_t>, CellState> map_;
    std::atomic<std::size_t> hits_{0};
};

}  // namespace hqc
