#pragma once

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "hqc/cell.hpp"
#include "hqc/errors.hpp"
#include "hqc/grid.hpp"
#include "hqc/model.hpp"
#include "hqc/parallel.hpp"
#include "hqc/solver.hpp"

namespace hqc {

// ---------------------------------------------------------------------------
// Macro mesh

/// Nodes i_1 = 1 < i_2 < ... < i_K on the N-periodic lattice; element k (0-based)
/// holds the sites i_k .. i_{k+1} - 1 with i_{K+1} = N + 1.
class MacroMesh {
public:
    MacroMesh() = default;
    MacroMesh(int N, std::vector<long> nodes, double length = 1.0)
        : N_(N), eps_(length / N), nodes_(std::move(nodes)) {
        if (nodes_.empty() || nodes_.front() != 1) throw std::invalid_argument("MacroMesh: first node must be 1");
        for (std::size_t k = 1; k < nodes_.size(); ++k)
            if (nodes_[k] <= nodes_[k - 1]) throw std::invalid_argument("MacroMesh: nodes must increase");
        if (nodes_.back() > N) throw std::invalid_argument("MacroMesh: node beyond the period");
    }

    /// K elements whose sizes differ by at most one site.
    static MacroMesh uniform(int N, int K, double length = 1.0) {
        if (K < 1 || K > N) throw std::invalid_argument("MacroMesh: need 1 <= K <= N");
        std::vector<long> nodes(static_cast<std::size_t>(K));
        for (int k = 0; k < K; ++k) nodes[k] = 1 + static_cast<long>(k) * N / K;
        return MacroMesh(N, std::move(nodes), length);
    }

    int N() const { return N_; }
    int K() const { return static_cast<int>(nodes_.size()); }
    double epsilon() const { return eps_; }
    PeriodicGrid1D grid() const { return PeriodicGrid1D(N_, eps_); }

    /// 1-based index of node k; node(K) = N + 1.
    long node(int k) const { return k == K() ? N_ + 1 : nodes_[k]; }
    int size(int k) const { return static_cast<int>(node(k + 1) - node(k)); }
    double H(int k) const { return eps_ * size(k); }
    /// Quadrature weight n_k / N of element k in the lattice average.
    double weight(int k) const { return static_cast<double>(size(k)) / N_; }
    double H() const {
        double h = 0;
        for (int k = 0; k < K(); ++k) h = std::max(h, H(k));
        return h;
    }
    const std::vector<long>& nodes() const { return nodes_; }

    /// Element containing site i (1-based index, folded into 1..N).
    int element_of(long i) const {
        const long s = slot(i, N_) + 1;
        auto it = std::upper_bound(nodes_.begin(), nodes_.end(), s);
        return static_cast<int>(it - nodes_.begin()) - 1;
    }

private:
    int N_ = 1;
    double eps_ = 1.0;
    std::vector<long> nodes_{1};
};

/// Continuous piecewise-affine lattice function given by nodal values.
class MacroFn {
public:
    MacroFn() = default;
    MacroFn(MacroMesh mesh, std::vector<double> values) : mesh_(std::move(mesh)), U_(std::move(values)) {
        if (static_cast<int>(U_.size()) != mesh_.K()) throw std::invalid_argument("MacroFn: wrong number of values");
    }

    const MacroMesh& mesh() const { return mesh_; }
    const std::vector<double>& nodal() const { return U_; }
    std::vector<double>& nodal() { return U_; }
    double value(int k) const { return U_[static_cast<std::size_t>(k % mesh_.K())]; }

    double strain(int k) const { return (value(k + 1) - value(k)) / mesh_.H(k); }

    LatticeFn1D lattice() const {
        LatticeFn1D u(mesh_.grid());
        for (int k = 0; k < mesh_.K(); ++k) {
            const double a = value(k), s = strain(k);
            for (long i = mesh_.node(k); i < mesh_.node(k + 1); ++i) u.at(i) = a + s * mesh_.epsilon() * (i - mesh_.node(k));
        }
        return u;
    }

    /// Shifts the nodal values so that the induced lattice function has zero mean.
    void recenter() {
        const double m = average(lattice());
        for (double& x : U_) x -= m;
    }

private:
    MacroMesh mesh_;
    std::vector<double> U_;
};

/// Nodal interpolant minus its lattice mean.
inline MacroFn interpolate_nodal(const LatticeFn1D& u, const MacroMesh& mesh) {
    std::vector<double> U(static_cast<std::size_t>(mesh.K()));
    for (int k = 0; k < mesh.K(); ++k) U[k] = u(mesh.node(k));
    MacroFn I(mesh, std::move(U));
    I.recenter();
    return I;
}

// ---------------------------------------------------------------------------
// Sampling domains

enum class Placement { Centered, Left };

struct SamplingDomain {
    int element = 0;
    long rep_start = 1;  // first atom of the window
    int width = 1;
    long coll = 1;  // collocation atom
};

/// One window of p atoms per element. Centered placement puts the window as close to
/// the element midpoint as the integer grid allows (ties to the left) and collocates
/// at the window's central atom (left of centre for even p).
inline std::vector<SamplingDomain> choose_sampling(const MacroMesh& mesh, int p, Placement placement = Placement::Centered) {
    if (p < 1) throw std::invalid_argument("choose_sampling: p must be >= 1");
    std::vector<SamplingDomain> out;
    out.reserve(static_cast<std::size_t>(mesh.K()));
    for (int k = 0; k < mesh.K(); ++k) {
        const long lo = mesh.node(k), hi = mesh.node(k + 1) - 1;
        if (hi - lo + 1 < p) throw std::invalid_argument("choose_sampling: element " + std::to_string(k) + " is smaller than p");
        long a = lo;
        if (placement == Placement::Centered) {
            // Window midpoint a + (p-1)/2 as close as possible to the element midpoint (lo+hi)/2.
            a = static_cast<long>(std::floor((lo + hi - (p - 1)) / 2.0));
            a = std::clamp(a, lo, hi - p + 1);
        }
        out.push_back({k, a, p, a + (p - 1) / 2});
    }
    return out;
}

// ---------------------------------------------------------------------------
// HQC solver

enum class LoadMode { Exact, Sampled };
enum class Reconstruction { Relaxed, Identity };
enum class MicroUpdate { Newton, LinearizedPrevious };

struct HqcOptions {
    double tol = 1e-10;
    int max_iter = 50;
    LoadMode load = LoadMode::Exact;
    bool collocate = false;
    Reconstruction reconstruction = Reconstruction::Relaxed;
    MicroUpdate micro_update = MicroUpdate::Newton;
    Placement placement = Placement::Centered;
    CellOptions cell;
};

/// Relaxed state of one sampling window: R_k(u^H) = u^H + eps * omega on the window.
struct MicroState {
    int element = 0;
    long rep_start = 1;
    double strain = 0;
    std::vector<double> omega;   // periodic fluctuation, indexed by offset from rep_start
    std::vector<double> domega;  // derivative of omega with respect to the strain
    double energy = 0;           // W_k
    double flux = 0;             // W_k'
    double stiffness = 0;        // W_k''
    double residual = 0;
    int iterations = 0;
};

struct HqcSolution {
    MacroFn uH;
    std::vector<MicroState> micro;
    int iterations = 0;
};

class HqcSolver {
public:
    HqcSolver(const AtomisticModel& model, MacroMesh mesh, HqcOptions opt = {})
        : model_(model), mesh_(std::move(mesh)), opt_(opt) {
        if (mesh_.N() != model.N()) throw std::invalid_argument("HqcSolver: mesh and model sizes differ");
        sampling_ = choose_sampling(mesh_, model.p(), opt.placement);
        build_potentials();
        build_load();
    }

    HqcSolver(const AtomisticModel& model, MacroMesh mesh, std::vector<SamplingDomain> sampling, HqcOptions opt)
        : model_(model), mesh_(std::move(mesh)), sampling_(std::move(sampling)), opt_(opt) {
        if (static_cast<int>(sampling_.size()) != mesh_.K()) throw std::invalid_argument("HqcSolver: one window per element");
        build_potentials();
        build_load();
    }

    const MacroMesh& mesh() const { return mesh_; }
    const std::vector<SamplingDomain>& sampling() const { return sampling_; }
    const std::vector<double>& load() const { return load_; }
    const CellPotentials& window_potentials(int k) const { return pots_[static_cast<std::size_t>(k)]; }

    /// Relaxes window k at macro strain s, starting from `warm` if given.
    MicroState micro_solve(int k, double s, const MicroState* warm = nullptr, bool single_step = false) const {
        const auto& sd = sampling_[static_cast<std::size_t>(k)];
        const auto& pots = pots_[static_cast<std::size_t>(k)];
        MicroState ms;
        ms.element = k;
        ms.rep_start = sd.rep_start;
        ms.strain = s;
        const int p = sd.width;
        if (opt_.reconstruction == Reconstruction::Identity) {
            ms.omega.assign(static_cast<std::size_t>(p), 0.0);
            ms.domega.assign(static_cast<std::size_t>(p), 0.0);
            for (int j = 0; j < p; ++j)
                for (int r = 1; r <= model_.R(); ++r) {
                    ms.energy += bond_energy(pots[j][r - 1], r, s, sd.rep_start + j);
                    ms.flux += bond_flux(pots[j][r - 1], r, s, sd.rep_start + j);
                    ms.stiffness += bond_stiffness(pots[j][r - 1], r, s, sd.rep_start + j);
                }
            ms.energy /= p;
            ms.flux /= p;
            ms.stiffness /= p;
            return ms;
        }
        CellOptions co = opt_.cell;
        if (single_step) {
            co.max_iter = 1;
            co.throw_on_max_iter = false;
            co.check_stability = false;
        }
        std::span<const double> chi0;
        if (warm && static_cast<int>(warm->omega.size()) == p) chi0 = warm->omega;
        CellState st = solve_cell_nonlinear(s, pots, chi0, co);
        ms.omega = std::move(st.chi);
        ms.domega = std::move(st.dchi);
        ms.energy = st.energy;
        ms.flux = st.flux;
        ms.stiffness = st.stiffness;
        ms.residual = st.residual;
        ms.iterations = st.iterations;
        if (single_step) {
            // Report the residual of the updated state.
            ms.residual = detail::cell_gradient(pots, s, ms.omega).cwiseAbs().maxCoeff();
        }
        return ms;
    }

    std::vector<MicroState> relax_all(const MacroFn& uH, const std::vector<MicroState>* warm = nullptr,
                                      bool single_step = false) const {
        std::vector<MicroState> out(static_cast<std::size_t>(mesh_.K()));
        parallel_for(0, mesh_.K(), [&](int k) {
            const MicroState* w = warm && !warm->empty() ? &(*warm)[static_cast<std::size_t>(k)] : nullptr;
            out[static_cast<std::size_t>(k)] = micro_solve(k, uH.strain(k), w, single_step);
        });
        return out;
    }

    /// E^HQC(u^H) = sum_k (n_k / N) W_k(s_k) - F(u^H), with freshly relaxed windows.
    double energy(const MacroFn& uH) const {
        const auto micro = relax_all(uH);
        double e = 0;
        for (int k = 0; k < mesh_.K(); ++k) e += mesh_.weight(k) * micro[k].energy;
        for (int k = 0; k < mesh_.K(); ++k) e -= load_[k] * uH.value(k);
        return e;
    }

    /// Nodal gradient: (E^HQC)'(u^H; phi_l).
    std::vector<double> gradient(const MacroFn& uH, const std::vector<MicroState>& micro) const {
        const int K = mesh_.K();
        std::vector<double> g(static_cast<std::size_t>(K), 0.0);
        if (K == 1) {
            g[0] = -load_[0];
            return g;
        }
        for (int k = 0; k < K; ++k) {
            const double a = mesh_.weight(k) * micro[k].flux / mesh_.H(k);
            g[k] -= a;
            g[(k + 1) % K] += a;
        }
        for (int k = 0; k < K; ++k) g[k] -= load_[k];
        (void)uH;
        return g;
    }

    /// Nodal hessian: spring c_k = (n_k / N) W_k'' / H_k^2 between nodes k and k+1.
    CyclicBandedMatrix hessian(const std::vector<MicroState>& micro) const {
        const int K = mesh_.K();
        CyclicBandedMatrix A(K, 1);
        if (K == 1) return A;
        for (int k = 0; k < K; ++k) add_bond(A, k, 1, mesh_.weight(k) * micro[k].stiffness / (mesh_.H(k) * mesh_.H(k)));
        return A;
    }

    HqcSolution solve(const MacroFn* initial = nullptr) const {
        const int K = mesh_.K();
        MacroFn uH = initial ? *initial : MacroFn(mesh_, std::vector<double>(static_cast<std::size_t>(K), 0.0));
        const bool one_step = opt_.micro_update == MicroUpdate::LinearizedPrevious;
        std::vector<MicroState> micro = relax_all(uH, nullptr, one_step);
        int it = 0;
        for (;;) {
            const auto g = gradient(uH, micro);
            std::vector<double> delta = newton_step(micro, g);
            double step = 0, size = 0, micro_res = 0;
            for (int k = 0; k < K; ++k) {
                step = std::max(step, std::abs(delta[k]));
                size = std::max(size, std::abs(uH.value(k)));
            }
            for (const auto& m : micro) micro_res = std::max(micro_res, m.residual);
            const bool micro_ok = !one_step || micro_res <= opt_.cell.tol * std::max(1.0, max_flux(micro));
            if (step <= opt_.tol * std::max(size, 1e-300) || (step == 0.0)) {
                if (micro_ok) break;
            }
            if (it >= opt_.max_iter) throw NoConvergence("HQC macro Newton", it, step);
            // Step halving on micro failure or energy increase (nonlinear windows only).
            double t = 1.0;
            for (int h = 0;; ++h) {
                MacroFn trial = uH;
                for (int k = 0; k < K; ++k) trial.nodal()[k] += t * delta[k];
                try {
                    auto m2 = relax_all(trial, &micro, one_step);
                    uH = std::move(trial);
                    micro = std::move(m2);
                    break;
                } catch (const DomainViolation&) {
                    if (h >= 30) throw;
                } catch (const NoConvergence&) {
                    if (h >= 30) throw;
                }
                t *= 0.5;
            }
            ++it;
        }
        uH.recenter();
        return {uH, micro, it};
    }

    /// u^{H,c}(X_i) = u^H(X_i) + eps * omega_k((i - rep_start_k) mod p) on element k.
    LatticeFn1D reconstruct(const HqcSolution& sol) const {
        LatticeFn1D u = sol.uH.lattice();
        const double eps = mesh_.epsilon();
        for (int k = 0; k < mesh_.K(); ++k) {
            const auto& ms = sol.micro[static_cast<std::size_t>(k)];
            const int p = static_cast<int>(ms.omega.size());
            for (long i = mesh_.node(k); i < mesh_.node(k + 1); ++i)
                u.at(i) += eps * ms.omega[static_cast<std::size_t>(mod(i - ms.rep_start, p))];
        }
        return u;
    }

    /// Window values of the reconstruction variation for a macro function with strain t on element k.
    std::vector<double> micro_tangent_solve(const MicroState& ms, const MacroFn& wH) const {
        const int k = ms.element;
        const double t = wH.strain(k);
        const int p = static_cast<int>(ms.domega.size());
        const LatticeFn1D w = wH.lattice();
        std::vector<double> out(static_cast<std::size_t>(p));
        for (int j = 0; j < p; ++j) out[j] = w(ms.rep_start + j) + mesh_.epsilon() * t * ms.domega[j];
        return out;
    }

private:
    void build_potentials() {
        pots_.resize(static_cast<std::size_t>(mesh_.K()));
        for (int k = 0; k < mesh_.K(); ++k) {
            const auto& sd = sampling_[static_cast<std::size_t>(k)];
            if (sd.width % model_.p() != 0) throw std::invalid_argument("HqcSolver: window width must be a multiple of p");
            auto& pk = pots_[static_cast<std::size_t>(k)];
            pk.resize(static_cast<std::size_t>(sd.width));
            for (int j = 0; j < sd.width; ++j) {
                const long i = sd.rep_start + j;
                for (int r = 1; r <= model_.R(); ++r)
                    pk[j].push_back(opt_.collocate ? model_.law()(sd.coll, fast_index(i, model_.p()), r) : model_.bond(i, r));
            }
        }
    }

    void build_load() {
        const int K = mesh_.K();
        const LatticeFn1D& f = model_.force().fn();
        load_.assign(static_cast<std::size_t>(K), 0.0);
        const double invN = 1.0 / mesh_.N();
        // Exact <f, phi_l>_X, accumulated element by element.
        std::vector<double> exact(static_cast<std::size_t>(K), 0.0), mass(static_cast<std::size_t>(K), 0.0);
        for (int k = 0; k < K; ++k) {
            const long a = mesh_.node(k);
            const int n = mesh_.size(k);
            for (int m = 0; m < n; ++m) {
                const double w = static_cast<double>(m) / n;  // weight of the right node
                exact[k] += invN * f(a + m) * (1 - w);
                exact[(k + 1) % K] += invN * f(a + m) * w;
                mass[k] += invN * (1 - w);
                mass[(k + 1) % K] += invN * w;
            }
        }
        if (opt_.load == LoadMode::Exact) {
            load_ = exact;
            return;
        }
        // Sampled: (n_k / N) <f, phi_l>_window, then remove the constant-mode load F(1).
        std::vector<double> sampled(static_cast<std::size_t>(K), 0.0);
        double F1 = 0;
        for (int k = 0; k < K; ++k) {
            const auto& sd = sampling_[static_cast<std::size_t>(k)];
            const long a = mesh_.node(k);
            const int n = mesh_.size(k);
            double fk = 0;
            for (int j = 0; j < sd.width; ++j) {
                const long i = sd.rep_start + j;
                const double w = static_cast<double>(i - a) / n;
                const double c = mesh_.weight(k) * f(i) / sd.width;
                sampled[k] += c * (1 - w);
                sampled[(k + 1) % K] += c * w;
                fk += c;
            }
            F1 += fk;
        }
        for (int k = 0; k < K; ++k) load_[k] = sampled[k] - mass[k] * F1;
    }

    double max_flux(const std::vector<MicroState>& micro) const {
        double m = 0;
        for (const auto& s : micro) m = std::max(m, std::abs(s.flux));
        return m;
    }

    /// Solves hessian * delta = -g with node 0 held fixed.
    std::vector<double> newton_step(const std::vector<MicroState>& micro, const std::vector<double>& g) const {
        const int K = mesh_.K();
        std::vector<double> delta(static_cast<std::size_t>(K), 0.0);
        if (K == 1) return delta;
        const CyclicBandedMatrix A = hessian(micro);
        // Reduced matrix on nodes 1..K-1 is a plain tridiagonal block.
        BandCholesky chol(K - 1, 1, [&](int i, int j) { return A(i + 1, j + 1); });
        std::vector<double> rhs(static_cast<std::size_t>(K - 1));
        for (int k = 1; k < K; ++k) rhs[k - 1] = -g[k];
        chol.solve_in_place(rhs);
        for (int k = 1; k < K; ++k) delta[k] = rhs[k - 1];
        return delta;
    }

    AtomisticModel model_;
    MacroMesh mesh_;
    std::vector<SamplingDomain> sampling_;
    HqcOptions opt_;
    std::vector<CellPotentials> pots_;
    std::vector<double> load_;
};

inline HqcSolution solve_hqc(const AtomisticModel& model, const MacroMesh& mesh, HqcOptions opt = {}) {
    return HqcSolver(model, mesh, opt).solve();
}

/// Naive QC: the same macro problem with the reconstruction forced to identity.
inline HqcSolution naive_qc(const AtomisticModel& model, const MacroMesh& mesh, HqcOptions opt = {}) {
    opt.reconstruction = Reconstruction::Identity;
    return HqcSolver(model, mesh, opt).solve();
}

// ---------------------------------------------------------------------------
// QC applied to the homogenized problem

/// P1 solve of <a D u^H, D v^H>_X = <f, v^H>_X where the form is given by per-element
/// coefficients c_k = sum_{i in S_k} a(X_i) / N; result recentered to zero lattice mean.
inline MacroFn qc_solve(const MacroMesh& mesh, const std::vector<double>& coef, const LatticeFn1D& f) {
    const int K = mesh.K();
    std::vector<double> U(static_cast<std::size_t>(K), 0.0);
    if (K > 1) {
        for (double c : coef)
            if (!(c > 0)) throw NonCoercive("qc_solve: element stiffness must be positive", c);
        CyclicBandedMatrix A(K, 1);
        for (int k = 0; k < K; ++k) add_bond(A, k, 1, coef[k] / (mesh.H(k) * mesh.H(k)));
        std::vector<double> F(static_cast<std::size_t>(K), 0.0);
        const double invN = 1.0 / mesh.N();
        for (int k = 0; k < K; ++k)
            for (int m = 0; m < mesh.size(k); ++m) {
                const double w = static_cast<double>(m) / mesh.size(k);
                F[k] += invN * f(mesh.node(k) + m) * (1 - w);
                F[(k + 1) % K] += invN * f(mesh.node(k) + m) * w;
            }
        BandCholesky chol(K - 1, 1, [&](int i, int j) { return A(i + 1, j + 1); });
        std::vector<double> rhs(F.begin() + 1, F.end());
        chol.solve_in_place(rhs);
        for (int k = 1; k < K; ++k) U[k] = rhs[k - 1];
    }
    MacroFn u(mesh, std::move(U));
    u.recenter();
    return u;
}

/// Reference QC solution with the pointwise homogenized tensor.
inline MacroFn qc_on_psi0(const LatticeFn1D& psi0, const LatticeFn1D& f, const MacroMesh& mesh) {
    std::vector<double> coef(static_cast<std::size_t>(mesh.K()), 0.0);
    for (int k = 0; k < mesh.K(); ++k)
        for (long i = mesh.node(k); i < mesh.node(k + 1); ++i) coef[k] += psi0(i) / mesh.N();
    return qc_solve(mesh, coef, f);
}

/// QC with the tensor frozen at the collocation atoms.
inline MacroFn qc_on_psi0_collocated(const LatticeFn1D& psi0, const std::vector<SamplingDomain>& sampling,
                                     const LatticeFn1D& f, const MacroMesh& mesh) {
    std::vector<double> coef(static_cast<std::size_t>(mesh.K()));
    for (int k = 0; k < mesh.K(); ++k) coef[k] = mesh.weight(k) * psi0(sampling[k].coll);
    return qc_solve(mesh, coef, f);
}

struct ModelingError {
    LatticeFn1D e;
    double l2 = 0;
    double h1 = 0;
};

/// e_mod = u^H (collocated tensor) - u~^H (pointwise tensor).
inline ModelingError modeling_error(const LatticeFn1D& psi0, const std::vector<SamplingDomain>& sampling,
                                    const LatticeFn1D& f, const MacroMesh& mesh) {
    LatticeFn1D e = qc_on_psi0_collocated(psi0, sampling, f, mesh).lattice() - qc_on_psi0(psi0, f, mesh).lattice();
    return {e, norm(e, Norm::l2()), norm(e, Norm::h1())};
}

}  // namespace hqc
