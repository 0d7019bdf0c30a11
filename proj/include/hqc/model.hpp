#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <memory>
#include <stdexcept>
#include <vector>

#include "hqc/errors.hpp"
#include "hqc/grid.hpp"
#include "hqc/potential.hpp"
#include "hqc/solver.hpp"

namespace hqc {

/// Potential of the bond (i, i+r) as a function of the slow index i, the fast
/// index j (1..p) and the range r. The actual material evaluates it at
/// j = i mod p; collocated variants freeze i and keep j.
using MaterialLaw = std::function<PairPotential(long i, int j, int r)>;

/// Fast index in 1..p of site i.
inline int fast_index(long i, int p) { return slot(i, p) + 1; }

class AtomisticModel {
public:
    AtomisticModel() = default;

    AtomisticModel(int N, int R, int p, MaterialLaw law, const LatticeFn1D& f, double length = 1.0)
        : N_(N), R_(R), p_(p), grid_(PeriodicGrid1D::over(N, length)), law_(std::move(law)),
          f_(ZeroMeanFn1D::checked(f, 1e-12 * std::max(1.0, norm(f, Norm::linf())))) {
        if (R < 1) throw std::invalid_argument("AtomisticModel: R must be >= 1");
        if (p < 1 || N % p != 0) throw std::invalid_argument("AtomisticModel: p must divide N");
        if (!(f.grid().n == N)) throw std::invalid_argument("AtomisticModel: force has the wrong size");
        bonds_.reserve(static_cast<std::size_t>(N) * R);
        for (int i = 1; i <= N; ++i)
            for (int r = 1; r <= R; ++r) bonds_.push_back(law_(i, fast_index(i, p), r));
    }

    /// Purely p-periodic material: table[j-1][r-1] is the potential of fast site j.
    static AtomisticModel periodic(int N, const std::vector<std::vector<PairPotential>>& table, const LatticeFn1D& f,
                                   double length = 1.0) {
        if (table.empty() || table.front().empty()) throw std::invalid_argument("AtomisticModel: empty table");
        const int p = static_cast<int>(table.size());
        const int R = static_cast<int>(table.front().size());
        for (const auto& row : table)
            if (static_cast<int>(row.size()) != R) throw std::invalid_argument("AtomisticModel: ragged table");
        auto t = std::make_shared<std::vector<std::vector<PairPotential>>>(table);
        return AtomisticModel(N, R, p, [t](long, int j, int r) { return (*t)[j - 1][r - 1]; }, f, length);
    }

    /// Arbitrary per-bond potentials pot(i, r); the fast period is N itself.
    static AtomisticModel per_site(int N, int R, std::function<PairPotential(long, int)> pot, const LatticeFn1D& f,
                                   double length = 1.0) {
        return AtomisticModel(N, R, N, [pot](long i, int, int r) { return pot(i, r); }, f, length);
    }

    int N() const { return N_; }
    int R() const { return R_; }
    int p() const { return p_; }
    double epsilon() const { return grid_.delta; }
    const PeriodicGrid1D& grid() const { return grid_; }
    const ZeroMeanFn1D& force() const { return f_; }
    const MaterialLaw& law() const { return law_; }

    const PairPotential& bond(long i, int r) const {
        return bonds_[static_cast<std::size_t>(slot(i, N_)) * R_ + static_cast<std::size_t>(r - 1)];
    }

    bool all_harmonic() const {
        return std::all_of(bonds_.begin(), bonds_.end(), [](const PairPotential& b) { return b.is_harmonic(); });
    }

    AtomisticModel with_force(const LatticeFn1D& f) const {
        AtomisticModel m = *this;
        m.f_ = ZeroMeanFn1D::checked(f, 1e-12 * std::max(1.0, norm(f, Norm::linf())));
        return m;
    }

private:
    int N_ = 1;
    int R_ = 1;
    int p_ = 1;
    PeriodicGrid1D grid_;
    MaterialLaw law_;
    std::vector<PairPotential> bonds_;
    ZeroMeanFn1D f_;
};

/// D_r u at site i.
inline double strain(const LatticeFn1D& u, long i, int r) {
    return (u(i + r) - u(i)) / (r * u.grid().delta);
}

/// Phi_r(z) = phi(r + r z) and its first two derivatives in z.
inline double bond_energy(const PairPotential& phi, int r, double z, long site = 0) {
    const double x = r + r * z;
    if (!phi.admissible(x)) throw DomainViolation(static_cast<int>(site), r, x);
    return phi.eval(x);
}
inline double bond_flux(const PairPotential& phi, int r, double z, long site = 0) {
    const double x = r + r * z;
    if (!phi.admissible(x)) throw DomainViolation(static_cast<int>(site), r, x);
    return r * phi.deriv(x);
}
inline double bond_stiffness(const PairPotential& phi, int r, double z, long site = 0) {
    const double x = r + r * z;
    if (!phi.admissible(x)) throw DomainViolation(static_cast<int>(site), r, x);
    return static_cast<double>(r) * r * phi.deriv2(x);
}

inline void check_state(const AtomisticModel& m, const LatticeFn1D& u) {
    if (!(u.grid() == m.grid())) throw std::invalid_argument("model: displacement lives on a different grid");
}

inline double internal_energy(const AtomisticModel& m, const LatticeFn1D& u) {
    check_state(m, u);
    double e = 0;
    for (int i = 1; i <= m.N(); ++i)
        for (int r = 1; r <= m.R(); ++r) e += bond_energy(m.bond(i, r), r, strain(u, i, r), i);
    return e / m.N();
}

inline double energy(const AtomisticModel& m, const LatticeFn1D& u) {
    return internal_energy(m, u) - inner(m.force(), u);
}

/// Gradient with respect to the discrete inner product: inner(residual, v) = Pi'(u; v).
inline LatticeFn1D residual(const AtomisticModel& m, const LatticeFn1D& u) {
    check_state(m, u);
    const double eps = m.epsilon();
    LatticeFn1D res(m.grid());
    for (int i = 1; i <= m.N(); ++i) {
        for (int r = 1; r <= m.R(); ++r) {
            const double a = bond_flux(m.bond(i, r), r, strain(u, i, r), i) / (r * eps);
            res.at(i) -= a;
            res.at(i + r) += a;
        }
    }
    res -= m.force().fn();
    return res;
}

inline LatticeFn1D tangent_apply(const AtomisticModel& m, const LatticeFn1D& u, const LatticeFn1D& w) {
    check_state(m, u);
    check_state(m, w);
    const double eps = m.epsilon();
    LatticeFn1D out(m.grid());
    for (int i = 1; i <= m.N(); ++i) {
        for (int r = 1; r <= m.R(); ++r) {
            const double a = bond_stiffness(m.bond(i, r), r, strain(u, i, r), i) * strain(w, i, r) / (r * eps);
            out.at(i) -= a;
            out.at(i + r) += a;
        }
    }
    return out;
}

/// Adds the stiffness c of the bond (i, i+r) (0-based i) to a cyclic banded matrix.
inline void add_bond(CyclicBandedMatrix& K, int i, int r, double c) {
    const int n = K.size();
    if (r % n == 0) return;
    K.add(i, i, c);
    K.add(i + r, i + r, c);
    K.add(i, i + r, -c);
}

inline CyclicBandedMatrix tangent_matrix(const AtomisticModel& m, const LatticeFn1D& u) {
    check_state(m, u);
    const double eps = m.epsilon();
    CyclicBandedMatrix K(m.N(), m.R());
    for (int i = 1; i <= m.N(); ++i)
        for (int r = 1; r <= m.R(); ++r) {
            const double c = bond_stiffness(m.bond(i, r), r, strain(u, i, r), i) / ((r * eps) * (r * eps));
            add_bond(K, i - 1, r, c);
        }
    return K;
}

struct NewtonOptions {
    double tol = 1e-10;
    int max_iter = 50;
    int max_halvings = 30;
};

struct FullSolution {
    ZeroMeanFn1D u;
    int iterations = 0;
    double residual = 0;
};

/// Newton's method in the zero-mean subspace with step halving on energy
/// increase or domain violation. Converged when the next Newton correction is below
/// tol and ||residual||_inf <= tol * max(1, ||f||_inf), or below the roundoff floor of
/// the residual evaluation (bond lengths r(1 + z) lose about eps * r absolutely, which
/// the strong form amplifies by the tangent diagonal times r * eps).
inline FullSolution solve_full(const AtomisticModel& m, const LatticeFn1D& u0, NewtonOptions opt = {}) {
    check_state(m, u0);
    LatticeFn1D u = project_zero_mean(u0).fn();
    const double rtol = opt.tol * std::max(1.0, norm(m.force().fn(), Norm::linf()));
    double E = energy(m, u);
    int it = 0;
    for (;;) {
        LatticeFn1D res = residual(m, u);
        const double rn = norm(res, Norm::linf());
        const CyclicBandedMatrix Kt = tangent_matrix(m, u);
        double diag = 0;
        for (int i = 0; i < m.N(); ++i) diag = std::max(diag, std::abs(Kt(i, i)));
        const double floor = 100 * std::numeric_limits<double>::epsilon() * m.R() * m.epsilon() * diag;
        const ConstrainedCyclicSolver solver(Kt);
        std::vector<double> rhs(res.values().begin(), res.values().end());
        for (double& x : rhs) x = -x;
        remove_mean(rhs);
        const LatticeFn1D delta(m.grid(), solver.solve(rhs));
        const double step = norm(delta, Norm::linf());
        if (rn <= std::max(rtol, floor) && step <= opt.tol) {
            u += delta;
            return {project_zero_mean(u), it, norm(residual(m, u), Norm::linf())};
        }
        if (it >= opt.max_iter) throw NoConvergence("solve_full", it, rn);
        double t = 1.0;
        for (int h = 0;; ++h) {
            LatticeFn1D trial = u + t * delta;
            try {
                const double Et = energy(m, trial);
                if (Et <= E + 1e-12 * std::max(1.0, std::abs(E)) || h == opt.max_halvings) {
                    u = std::move(trial);
                    E = Et;
                    break;
                }
            } catch (const DomainViolation&) {
                if (h == opt.max_halvings) throw;
            }
            t *= 0.5;
        }
        ++it;
    }
}

inline FullSolution solve_full(const AtomisticModel& m, NewtonOptions opt = {}) {
    return solve_full(m, LatticeFn1D(m.grid()), opt);
}

struct LinearizedModel {
    std::vector<LatticeFn1D> psi;  // psi[r-1]
    std::vector<LatticeFn1D> xi;
    ZeroMeanFn1D f_eff;
};

/// Linearization about ubar: psi_r = r^2 phi''(r + r D_r ubar), xi_r = r phi' - psi_r D_r ubar.
/// The prestress is moved to the load: sum_r <xi_r, D_r v> = -<sum_r T^{-r} D_r xi_r, v>,
/// so f_eff = f + sum_r T^{-r} D_r xi_r.
inline LinearizedModel linearize(const AtomisticModel& m, const LatticeFn1D& ubar) {
    check_state(m, ubar);
    LinearizedModel lin;
    LatticeFn1D f = m.force().fn();
    for (int r = 1; r <= m.R(); ++r) {
        LatticeFn1D psi(m.grid()), xi(m.grid());
        for (int i = 1; i <= m.N(); ++i) {
            const double z = strain(ubar, i, r);
            psi.at(i) = bond_stiffness(m.bond(i, r), r, z, i);
            xi.at(i) = bond_flux(m.bond(i, r), r, z, i) - psi(i) * z;
        }
        f += translate(diff(xi, r), -r);
        lin.psi.push_back(std::move(psi));
        lin.xi.push_back(std::move(xi));
    }
    lin.f_eff = project_zero_mean(f);
    return lin;
}

/// The linear problem sum_r <psi_r D_r u, D_r v> = <f, v> as a harmonic model
/// (k = psi / r^2, rest length r).
inline AtomisticModel linear_model(const std::vector<LatticeFn1D>& psi, const LatticeFn1D& f) {
    if (psi.empty()) throw std::invalid_argument("linear_model: no bonds");
    const int N = psi.front().size();
    auto tab = std::make_shared<std::vector<LatticeFn1D>>(psi);
    return AtomisticModel::per_site(
        N, static_cast<int>(psi.size()),
        [tab](long i, int r) { return PairPotential(Harmonic{(*tab)[r - 1](i) / (r * r), static_cast<double>(r)}); }, f,
        psi.front().grid().length());
}

inline CyclicBandedMatrix stiffness_matrix(const std::vector<LatticeFn1D>& psi) {
    const int N = psi.front().size();
    const double eps = psi.front().grid().delta;
    CyclicBandedMatrix K(N, static_cast<int>(psi.size()));
    for (int r = 1; r <= static_cast<int>(psi.size()); ++r)
        for (int i = 1; i <= N; ++i) add_bond(K, i - 1, r, psi[r - 1](i) / ((r * eps) * (r * eps)));
    return K;
}

/// sum_r <psi_r D_r u, D_r v> = <f, v>, <u> = 0, by the cyclic banded direct solver.
inline ZeroMeanFn1D solve_linear(const std::vector<LatticeFn1D>& psi, const LatticeFn1D& f) {
    for (const auto& p : psi) p.check_same(f);
    const ConstrainedCyclicSolver solver(stiffness_matrix(psi));
    return project_zero_mean(LatticeFn1D(f.grid(), solver.solve(f.values())));
}

inline ZeroMeanFn1D solve_linear_nn(const LatticeFn1D& psi, const LatticeFn1D& f) {
    const double mn = *std::min_element(psi.values().begin(), psi.values().end());
    if (!(mn > 0)) throw NonCoercive("solve_linear_nn: bond stiffness must be positive", mn);
    return solve_linear({psi}, f);
}

}  // namespace hqc
