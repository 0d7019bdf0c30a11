#pragma once

#include <Eigen/Dense>

#include <array>
#include <cmath>
#include <functional>
#include <limits>
#include <stdexcept>
#include <vector>

#include "hqc/errors.hpp"
#include "hqc/grid.hpp"
#include "hqc/parallel.hpp"
#include "hqc/solver.hpp"

namespace hqc {

// Square-lattice springs with zero rest length. A scalar stiffness psi_r acts on the
// vector bond u_{i+r} - u_i, so the two displacement components decouple and every
// solve below runs once per component on a scalar field.
//
// Bond differences are D_r u_i = (u_{i+r} - u_i) / eps (not divided by |r|). The
// homogenized form is sum_{a,b} <A_ab D_a u, D_b v>, and the reported tensors are
// psi0_ab = 4 A_ab I; with this convention the checkerboard closed forms hold.

using Offset2 = std::array<int, 2>;
using Index2 = std::array<long, 2>;

struct Grid2D {
    int n1 = 1, n2 = 1;
    double delta = 1.0;

    static Grid2D square(int n, double length = 1.0) { return {n, n, length / n}; }

    int size() const { return n1 * n2; }
    /// Storage slot of the 1-based index (i1, i2), i1 fastest.
    int index(long i1, long i2) const { return slot(i1, n1) + n1 * slot(i2, n2); }
    Index2 site(int k) const { return {k % n1 + 1, k / n1 + 1}; }
    friend bool operator==(const Grid2D&, const Grid2D&) = default;
};

/// A periodic scalar lattice field; vector fields are pairs of these.
class Field2D {
public:
    Field2D() = default;
    explicit Field2D(Grid2D g) : g_(g), v_(static_cast<std::size_t>(g.size()), 0.0) {}
    Field2D(Grid2D g, std::vector<double> v) : g_(g), v_(std::move(v)) {
        if (static_cast<int>(v_.size()) != g.size()) throw std::invalid_argument("Field2D: wrong number of values");
    }

    template <class F>
    static Field2D sample(Grid2D g, F&& f) {
        Field2D u(g);
        for (int k = 0; k < g.size(); ++k) {
            const auto s = u.g_.site(k);
            u.v_[static_cast<std::size_t>(k)] = f(s[0], s[1]);
        }
        return u;
    }

    const Grid2D& grid() const { return g_; }
    double operator()(long i1, long i2) const { return v_[static_cast<std::size_t>(g_.index(i1, i2))]; }
    double& at(long i1, long i2) { return v_[static_cast<std::size_t>(g_.index(i1, i2))]; }
    const std::vector<double>& values() const { return v_; }
    std::vector<double>& values() { return v_; }

    Field2D operator-(const Field2D& o) const {
        Field2D r = *this;
        for (std::size_t k = 0; k < v_.size(); ++k) r.v_[k] -= o.v_[k];
        return r;
    }
    Field2D operator+(const Field2D& o) const {
        Field2D r = *this;
        for (std::size_t k = 0; k < v_.size(); ++k) r.v_[k] += o.v_[k];
        return r;
    }

private:
    Grid2D g_;
    std::vector<double> v_;
};

struct VectorFn2D {
    std::array<Field2D, 2> c;

    VectorFn2D() = default;
    explicit VectorFn2D(Grid2D g) : c{Field2D(g), Field2D(g)} {}
    VectorFn2D(Field2D a, Field2D b) : c{std::move(a), std::move(b)} {}

    const Grid2D& grid() const { return c[0].grid(); }
    VectorFn2D operator-(const VectorFn2D& o) const { return {c[0] - o.c[0], c[1] - o.c[1]}; }
    VectorFn2D operator+(const VectorFn2D& o) const { return {c[0] + o.c[0], c[1] + o.c[1]}; }
};

inline double average(const Field2D& u) { return average(std::span<const double>(u.values())); }

inline void remove_mean(VectorFn2D& u) {
    for (auto& f : u.c) remove_mean(f.values());
}

/// Lattice L2 norm with the 1/(N1 N2) weight, summed over components.
inline double l2_norm(const VectorFn2D& u) {
    double s = 0;
    for (const auto& f : u.c)
        for (double x : f.values()) s += x * x;
    return std::sqrt(s / u.grid().size());
}

/// H1 seminorm: sum over components and both axis differences.
inline double h1_seminorm(const VectorFn2D& u) {
    const Grid2D& g = u.grid();
    double s = 0;
    for (const auto& f : u.c)
        for (long i2 = 1; i2 <= g.n2; ++i2)
            for (long i1 = 1; i1 <= g.n1; ++i1) {
                const double d1 = (f(i1 + 1, i2) - f(i1, i2)) / g.delta;
                const double d2 = (f(i1, i2 + 1) - f(i1, i2)) / g.delta;
                s += d1 * d1 + d2 * d2;
            }
    return std::sqrt(s / g.size());
}

// ---------------------------------------------------------------------------
// Neighbours and bonds

class NeighborSet {
public:
    NeighborSet() = default;
    explicit NeighborSet(std::vector<Offset2> r) : r_(std::move(r)) {
        for (std::size_t a = 0; a < r_.size(); ++a) {
            if (r_[a][0] == 0 && r_[a][1] == 0) throw std::invalid_argument("NeighborSet: zero offset");
            for (std::size_t b = 0; b < a; ++b)
                if (r_[a] == r_[b] || (r_[a][0] == -r_[b][0] && r_[a][1] == -r_[b][1]))
                    throw std::invalid_argument("NeighborSet: duplicate or reflected offset");
        }
    }

    /// (1,0), (1,1), (0,1), (-1,1).
    static NeighborSet square_with_diagonals() { return NeighborSet({{1, 0}, {1, 1}, {0, 1}, {-1, 1}}); }

    int size() const { return static_cast<int>(r_.size()); }
    const Offset2& operator[](int k) const { return r_[static_cast<std::size_t>(k)]; }
    const std::vector<Offset2>& offsets() const { return r_; }

private:
    std::vector<Offset2> r_;
};

/// psi(r, i1, i2): stiffness of the bond between site i and i + r.
using BondLaw2D = std::function<double(int r, long i1, long i2)>;

/// Fast-periodic bond stiffnesses: values[r][j] with j the slot of (j1, j2) in a p1 x p2 cell.
struct BondTensors2D {
    NeighborSet neighbors;
    int p1 = 1, p2 = 1;
    std::vector<std::vector<double>> values;

    double operator()(int r, long j1, long j2) const {
        return values[static_cast<std::size_t>(r)][static_cast<std::size_t>(slot(j1, p1) + p1 * slot(j2, p2))];
    }

    template <class F>
    static BondTensors2D tabulate(NeighborSet nb, int p1, int p2, F&& psi) {
        BondTensors2D t{std::move(nb), p1, p2, {}};
        t.values.assign(static_cast<std::size_t>(t.neighbors.size()), std::vector<double>(static_cast<std::size_t>(p1 * p2)));
        for (int r = 0; r < t.neighbors.size(); ++r)
            for (int j2 = 1; j2 <= p2; ++j2)
                for (int j1 = 1; j1 <= p1; ++j1) t.values[r][slot(j1, p1) + p1 * slot(j2, p2)] = psi(r, j1, j2);
        return t;
    }
};

class Model2D {
public:
    Model2D(Grid2D g, NeighborSet nb, const BondLaw2D& law, VectorFn2D f) : g_(g), nb_(std::move(nb)), f_(std::move(f)) {
        if (!(f_.grid() == g_)) throw std::invalid_argument("Model2D: force on a different grid");
        for (const auto& c : f_.c) check_zero_mean_rhs(c.values());
        psi_.assign(static_cast<std::size_t>(nb_.size()), std::vector<double>(static_cast<std::size_t>(g.size())));
        for (int r = 0; r < nb_.size(); ++r)
            for (int k = 0; k < g.size(); ++k) {
                const auto s = g.site(k);
                psi_[r][k] = law(r, s[0], s[1]);
            }
    }

    /// Material repeating a fast-periodic bond table over the whole lattice.
    static Model2D periodic(Grid2D g, const BondTensors2D& t, VectorFn2D f) {
        return Model2D(g, t.neighbors, [t](int r, long i1, long i2) { return t(r, i1, i2); }, std::move(f));
    }

    const Grid2D& grid() const { return g_; }
    const NeighborSet& neighbors() const { return nb_; }
    const VectorFn2D& force() const { return f_; }
    double psi(int r, long i1, long i2) const { return psi_[static_cast<std::size_t>(r)][static_cast<std::size_t>(g_.index(i1, i2))]; }

    /// Strong form (A u)_i of the per-component equilibrium operator.
    void apply(std::span<const double> u, std::span<double> out) const {
        const double s = 1.0 / (g_.delta * g_.delta);
        parallel_for(1, g_.n2 + 1, [&](int i2) {
            for (long i1 = 1; i1 <= g_.n1; ++i1) {
                const int k = g_.index(i1, i2);
                double acc = 0;
                for (int r = 0; r < nb_.size(); ++r) {
                    const auto& o = nb_[r];
                    const int kp = g_.index(i1 + o[0], i2 + o[1]), km = g_.index(i1 - o[0], i2 - o[1]);
                    acc += psi_[r][k] * (u[k] - u[kp]) + psi_[r][km] * (u[k] - u[km]);
                }
                out[k] = s * acc;
            }
        }, 8);
    }

    std::vector<double> diagonal() const {
        const double s = 1.0 / (g_.delta * g_.delta);
        std::vector<double> d(static_cast<std::size_t>(g_.size()), 0.0);
        for (int k = 0; k < g_.size(); ++k) {
            const auto st = g_.site(k);
            for (int r = 0; r < nb_.size(); ++r) {
                const auto& o = nb_[r];
                if (slot(o[0], g_.n1) == 0 && slot(o[1], g_.n2) == 0) continue;
                d[k] += s * (psi_[r][k] + psi_[r][g_.index(st[0] - o[0], st[1] - o[1])]);
            }
        }
        return d;
    }

    LinearOperator op() const {
        return {g_.size(), [this](std::span<const double> u, std::span<double> out) { apply(u, out); }, diagonal()};
    }

    /// Sum_r <psi_r D_r u, D_r v> for one component.
    double form(const Field2D& u, const Field2D& v) const {
        double s = 0;
        for (int r = 0; r < nb_.size(); ++r)
            for (int k = 0; k < g_.size(); ++k) {
                const auto st = g_.site(k);
                const auto& o = nb_[r];
                s += psi_[r][k] * (u(st[0] + o[0], st[1] + o[1]) - u(st[0], st[1])) *
                     (v(st[0] + o[0], st[1] + o[1]) - v(st[0], st[1]));
            }
        return s / (g_.delta * g_.delta) / g_.size();
    }

    /// Residual A u - f, componentwise.
    VectorFn2D residual(const VectorFn2D& u) const {
        VectorFn2D r(g_);
        for (int c = 0; c < 2; ++c) {
            apply(u.c[c].values(), r.c[c].values());
            for (int k = 0; k < g_.size(); ++k) r.c[c].values()[k] -= f_.c[c].values()[k];
        }
        return r;
    }

private:
    Grid2D g_;
    NeighborSet nb_;
    VectorFn2D f_;
    std::vector<std::vector<double>> psi_;
};

struct Full2DSolution {
    VectorFn2D u;
    int iterations = 0;
};

inline Full2DSolution solve_full_2d(const Model2D& m, double tol = 1e-12, int max_iter = 100000) {
    Full2DSolution s{VectorFn2D(m.grid()), 0};
    const auto op = m.op();
    for (double d : op.diagonal)
        if (!(d > 0)) throw NonCoercive("solve_full_2d: bond stiffness must be positive", d);
    for (int c = 0; c < 2; ++c) {
        auto r = solve_constrained_cg(op, m.force().c[c].values(), tol, max_iter);
        s.u.c[c].values() = std::move(r.x);
        s.iterations += r.iterations;
    }
    return s;
}

// ---------------------------------------------------------------------------
// Cell problem and homogenized tensor

struct Cell2DSolution {
    int p1 = 1, p2 = 1;
    std::array<std::vector<double>, 2> chi;  // scalar factor of chi_alpha = chi[alpha] * I
    Eigen::Matrix2d a = Eigen::Matrix2d::Zero();
    double residual = 0;

    double chi_at(int alpha, long j1, long j2) const {
        return chi[static_cast<std::size_t>(alpha)][static_cast<std::size_t>(slot(j1, p1) + p1 * slot(j2, p2))];
    }
};

struct HomogenizedTensor2D {
    Eigen::Matrix2d a = Eigen::Matrix2d::Zero();  // coefficients of the scalar macro form

    /// psi0_{alpha beta} as a 2x2 matrix acting on the displacement.
    Eigen::Matrix2d psi0(int alpha, int beta) const { return 4.0 * a(alpha, beta) * Eigen::Matrix2d::Identity(); }
};

namespace detail {

/// Cell matrix M and right-hand sides for both macro directions.
inline void assemble_cell_2d(const BondTensors2D& t, Eigen::MatrixXd& M, std::array<Eigen::VectorXd, 2>& b) {
    const int p1 = t.p1, p2 = t.p2, n = p1 * p2;
    M = Eigen::MatrixXd::Zero(n, n);
    b = {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Zero(n)};
    for (int r = 0; r < t.neighbors.size(); ++r) {
        const auto& o = t.neighbors[r];
        for (int j2 = 0; j2 < p2; ++j2)
            for (int j1 = 0; j1 < p1; ++j1) {
                const int j = j1 + p1 * j2;
                const int k = mod(j1 + o[0], p1) + p1 * mod(j2 + o[1], p2);
                const double c = t.values[r][j];
                for (int alpha = 0; alpha < 2; ++alpha) {
                    b[alpha](k) -= c * o[alpha];
                    b[alpha](j) += c * o[alpha];
                }
                if (k == j) continue;
                M(j, j) += c;
                M(k, k) += c;
                M(j, k) -= c;
                M(k, j) -= c;
            }
    }
}

}  // namespace detail

/// Solves sum_r <psi_r (r_alpha + D_{Y,r} chi_alpha), D_{Y,r} s>_Y = 0 for zero-mean chi_alpha.
inline Cell2DSolution solve_cell_2d(const BondTensors2D& t) {
    const int n = t.p1 * t.p2;
    Eigen::MatrixXd M;
    std::array<Eigen::VectorXd, 2> b;
    detail::assemble_cell_2d(t, M, b);
    Cell2DSolution s;
    s.p1 = t.p1;
    s.p2 = t.p2;
    if (n > 1) {
        // Basis e_k - e_{n-1} of the zero-mean subspace.
        Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(n, n - 1);
        for (int k = 0; k < n - 1; ++k) {
            Q(k, k) = 1;
            Q(n - 1, k) = -1;
        }
        const Eigen::MatrixXd Mr = Q.transpose() * M * Q;
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(Mr, Eigen::EigenvaluesOnly);
        const double lo = es.eigenvalues().minCoeff();
        if (!(lo > 1e-12 * std::max(1.0, es.eigenvalues().maxCoeff())))
            throw NonCoercive("solve_cell_2d: reduced cell matrix is not positive definite", lo);
        Eigen::LLT<Eigen::MatrixXd> llt(Mr);
        for (int alpha = 0; alpha < 2; ++alpha) {
            Eigen::VectorXd x = Q * llt.solve(Q.transpose() * b[alpha]);
            x.array() -= x.mean();
            s.chi[alpha].assign(x.data(), x.data() + n);
            s.residual = std::max(s.residual, (M * x - b[alpha]).cwiseAbs().maxCoeff());
        }
    } else {
        s.chi = {std::vector<double>{0.0}, std::vector<double>{0.0}};
    }
    // A_ab = sum_r <psi_r (r_a + D_{Y,r} chi_a)(r_b + D_{Y,r} chi_b)>_Y
    for (int r = 0; r < t.neighbors.size(); ++r) {
        const auto& o = t.neighbors[r];
        for (int j2 = 0; j2 < t.p2; ++j2)
            for (int j1 = 0; j1 < t.p1; ++j1) {
                const int j = j1 + t.p1 * j2;
                const int k = mod(j1 + o[0], t.p1) + t.p1 * mod(j2 + o[1], t.p2);
                std::array<double, 2> g{};
                for (int alpha = 0; alpha < 2; ++alpha) g[alpha] = o[alpha] + s.chi[alpha][k] - s.chi[alpha][j];
                for (int alpha = 0; alpha < 2; ++alpha)
                    for (int beta = 0; beta < 2; ++beta) s.a(alpha, beta) += t.values[r][j] * g[alpha] * g[beta] / n;
            }
    }
    return s;
}

inline HomogenizedTensor2D homogenize_2d(const Cell2DSolution& cell) { return {cell.a}; }
inline HomogenizedTensor2D homogenize_2d(const BondTensors2D& t) { return homogenize_2d(solve_cell_2d(t)); }

// ---------------------------------------------------------------------------
// Triangulated HQC

/// t x t nodes spaced n = N / t atoms apart; square (a, b) splits along the
/// diagonal from (a+1, b) to (a, b+1) into a lower triangle (x + y < n in local
/// atom offsets) and an upper triangle (x + y >= n).
class Triangulation2D {
public:
    Triangulation2D(Grid2D g, int t) : g_(g), t_(t) {
        if (g.n1 != g.n2) throw std::invalid_argument("Triangulation2D: square lattices only");
        if (t < 1 || g.n1 % t != 0) throw std::invalid_argument("Triangulation2D: t must divide N");
        n_ = g.n1 / t;
    }

    int t() const { return t_; }
    int spacing() const { return n_; }
    int nodes() const { return t_ * t_; }
    int elements() const { return 2 * t_ * t_; }
    double H() const { return n_ * g_.delta; }
    double area() const { return 0.5 * H() * H(); }
    const Grid2D& grid() const { return g_; }

    int node(int a, int b) const { return mod(a, t_) + t_ * mod(b, t_); }
    Index2 node_site(int a, int b) const { return {1 + static_cast<long>(a) * n_, 1 + static_cast<long>(b) * n_}; }

    /// Element id 2 * (a + t b) + upper; its three nodes.
    std::array<int, 3> element_nodes(int e) const {
        const int sq = e / 2, a = sq % t_, b = sq / t_;
        if (e % 2 == 0) return {node(a, b), node(a + 1, b), node(a, b + 1)};
        return {node(a + 1, b + 1), node(a, b + 1), node(a + 1, b)};
    }

    /// Gradients (per unit length) of the three nodal basis functions on element e.
    std::array<std::array<double, 2>, 3> gradients(int e) const {
        const double h = H();
        if (e % 2 == 0) return {{{-1 / h, -1 / h}, {1 / h, 0}, {0, 1 / h}}};
        return {{{1 / h, 1 / h}, {-1 / h, 0}, {0, -1 / h}}};
    }

    struct Location {
        int element;
        std::array<int, 3> nodes;
        std::array<double, 3> weights;
    };

    /// Element and barycentric weights of the atom (i1, i2).
    Location locate(long i1, long i2) const {
        const int x1 = slot(i1, g_.n1), x2 = slot(i2, g_.n2);
        const int a = x1 / n_, b = x2 / n_;
        const int x = x1 - a * n_, y = x2 - b * n_;
        const double xi = static_cast<double>(x) / n_, eta = static_cast<double>(y) / n_;
        const int sq = a + t_ * b;
        if (x + y < n_) return {2 * sq, element_nodes(2 * sq), {1 - xi - eta, xi, eta}};
        return {2 * sq + 1, element_nodes(2 * sq + 1), {xi + eta - 1, 1 - xi, 1 - eta}};
    }

    /// First atom of the p1 x p2 sampling rectangle of element e: the rectangle
    /// inside the element whose centre is nearest the centroid (ties: smallest offset).
    Index2 sampling_start(int e, int p1, int p2) const {
        const int sq = e / 2, a = sq % t_, b = sq / t_;
        const bool upper = e % 2 == 1;
        const double c = upper ? 2.0 * n_ / 3 : n_ / 3.0;
        double best = std::numeric_limits<double>::infinity();
        Index2 out{-1, -1};
        for (int s2 = 0; s2 + p2 <= n_; ++s2)
            for (int s1 = 0; s1 + p1 <= n_; ++s1) {
                const bool inside = upper ? (s1 + s2 >= n_) : (s1 + p1 - 1 + s2 + p2 - 1 < n_);
                if (!inside) continue;
                const double d1 = s1 + (p1 - 1) / 2.0 - c, d2 = s2 + (p2 - 1) / 2.0 - c;
                const double d = d1 * d1 + d2 * d2;
                if (d < best - 1e-12) {
                    best = d;
                    out = {1 + static_cast<long>(a) * n_ + s1, 1 + static_cast<long>(b) * n_ + s2};
                }
            }
        if (out[0] < 0) throw std::invalid_argument("Triangulation2D: element too small for the sampling rectangle");
        return out;
    }

private:
    Grid2D g_;
    int t_ = 1;
    int n_ = 1;
};

/// Piecewise-affine macro field: nodal values per component.
struct MacroFn2D {
    std::array<std::vector<double>, 2> U;

    VectorFn2D lattice(const Triangulation2D& tri) const {
        const Grid2D& g = tri.grid();
        VectorFn2D u(g);
        for (int k = 0; k < g.size(); ++k) {
            const auto s = g.site(k);
            const auto loc = tri.locate(s[0], s[1]);
            for (int c = 0; c < 2; ++c) {
                double v = 0;
                for (int m = 0; m < 3; ++m) v += loc.weights[m] * U[c][loc.nodes[m]];
                u.c[c].values()[k] = v;
            }
        }
        return u;
    }

    /// Constant gradient of component c on element e.
    std::array<double, 2> gradient(const Triangulation2D& tri, int e, int c) const {
        const auto nodes = tri.element_nodes(e);
        const auto G = tri.gradients(e);
        std::array<double, 2> d{0, 0};
        for (int m = 0; m < 3; ++m)
            for (int x = 0; x < 2; ++x) d[x] += G[m][x] * U[c][nodes[m]];
        return d;
    }
};

struct Micro2D {
    Index2 start{1, 1};
    Cell2DSolution cell;
};

struct Hqc2DSolution {
    MacroFn2D uH;
    std::vector<Micro2D> micro;
    int iterations = 0;
};

class Hqc2DSolver {
public:
    Hqc2DSolver(const Model2D& m, Triangulation2D tri, int p1, int p2) : m_(m), tri_(std::move(tri)), p1_(p1), p2_(p2) {
        if (!(tri_.grid() == m.grid())) throw std::invalid_argument("Hqc2DSolver: triangulation on a different grid");
    }

    const Triangulation2D& triangulation() const { return tri_; }

    /// Relaxes the sampling rectangle of element e: a cell problem with the window's bonds.
    Micro2D micro_solve(int e) const {
        Micro2D ms;
        ms.start = tri_.sampling_start(e, p1_, p2_);
        auto t = BondTensors2D::tabulate(m_.neighbors(), p1_, p2_, [&](int r, int j1, int j2) {
            return m_.psi(r, ms.start[0] + j1 - 1, ms.start[1] + j2 - 1);
        });
        ms.cell = solve_cell_2d(t);
        return ms;
    }

    /// Exact load <f, phi_l>_X per component.
    std::array<std::vector<double>, 2> load() const {
        const Grid2D& g = m_.grid();
        std::array<std::vector<double>, 2> F;
        for (auto& v : F) v.assign(static_cast<std::size_t>(tri_.nodes()), 0.0);
        for (int k = 0; k < g.size(); ++k) {
            const auto s = g.site(k);
            const auto loc = tri_.locate(s[0], s[1]);
            for (int c = 0; c < 2; ++c)
                for (int m = 0; m < 3; ++m) F[c][loc.nodes[m]] += loc.weights[m] * m_.force().c[c].values()[k] / g.size();
        }
        return F;
    }

    Hqc2DSolution solve(double tol = 1e-12) const {
        const int E = tri_.elements(), n = tri_.nodes();
        Hqc2DSolution sol;
        sol.micro.resize(static_cast<std::size_t>(E));
        parallel_for(0, E, [&](int e) { sol.micro[e] = micro_solve(e); }, 64);
        // Element matrices |S_k| G A_k G^T, shared by both components.
        std::vector<Eigen::Matrix3d> Ke(static_cast<std::size_t>(E));
        std::vector<double> diag(static_cast<std::size_t>(n), 0.0);
        for (int e = 0; e < E; ++e) {
            const auto G = tri_.gradients(e);
            Eigen::Matrix<double, 3, 2> B;
            for (int m = 0; m < 3; ++m) B.row(m) << G[m][0], G[m][1];
            Ke[e] = tri_.area() * B * sol.micro[e].cell.a * B.transpose();
            const auto nodes = tri_.element_nodes(e);
            for (int m = 0; m < 3; ++m) diag[nodes[m]] += Ke[e](m, m);
        }
        LinearOperator op{n,
                          [&](std::span<const double> x, std::span<double> y) {
                              std::fill(y.begin(), y.end(), 0.0);
                              for (int e = 0; e < E; ++e) {
                                  const auto nodes = tri_.element_nodes(e);
                                  for (int a = 0; a < 3; ++a)
                                      for (int b = 0; b < 3; ++b) y[nodes[a]] += Ke[e](a, b) * x[nodes[b]];
                              }
                          },
                          diag};
        const auto F = load();
        for (int c = 0; c < 2; ++c) {
            auto r = solve_constrained_cg(op, F[c], tol, 100000);
            sol.uH.U[c] = std::move(r.x);
            sol.iterations += r.iterations;
        }
        // Zero lattice mean rather than zero nodal mean.
        const VectorFn2D ul = sol.uH.lattice(tri_);
        for (int c = 0; c < 2; ++c) {
            const double mean = average(ul.c[c]);
            for (double& x : sol.uH.U[c]) x -= mean;
        }
        return sol;
    }

    /// u^{H,c}(X_i) = u^H(X_i) + eps sum_alpha chi_alpha(i - start) D_alpha u^H on the element of i.
    VectorFn2D reconstruct(const Hqc2DSolution& sol) const {
        const Grid2D& g = m_.grid();
        VectorFn2D u = sol.uH.lattice(tri_);
        for (int k = 0; k < g.size(); ++k) {
            const auto s = g.site(k);
            const int e = tri_.locate(s[0], s[1]).element;
            const auto& ms = sol.micro[static_cast<std::size_t>(e)];
            const long j1 = s[0] - ms.start[0] + 1, j2 = s[1] - ms.start[1] + 1;
            for (int c = 0; c < 2; ++c) {
                const auto G = sol.uH.gradient(tri_, e, c);
                u.c[c].values()[k] += g.delta * (ms.cell.chi_at(0, j1, j2) * G[0] + ms.cell.chi_at(1, j1, j2) * G[1]);
            }
        }
        return u;
    }

private:
    const Model2D& m_;
    Triangulation2D tri_;
    int p1_, p2_;
};

// ---------------------------------------------------------------------------
// Test-case materials and loads

/// Checkerboard nearest-neighbour springs k1 / k2 (i1 + i2 even / odd) and diagonal springs k3.
inline BondTensors2D checkerboard_bonds(double k1, double k2, double k3) {
    return BondTensors2D::tabulate(NeighborSet::square_with_diagonals(), 2, 2, [=](int r, int j1, int j2) {
        if (r == 1 || r == 3) return k3;
        return (j1 + j2) % 2 == 0 ? k1 : k2;
    });
}

/// Fixed parity tables: values listed for (i1, i2) parity (even,even), (even,odd), (odd,even), (odd,odd).
inline BondTensors2D parity_table_bonds() {
    const std::array<std::array<double, 4>, 4> tab = {{
        {1.3, 1.6, 1.8, 1.2},  // (1,0)
        {0.3, 0.8, 0.6, 0.4},  // (1,1)
        {1.5, 1.7, 1.5, 2.0},  // (0,1)
        {0.4, 0.9, 0.4, 0.1},  // (-1,1)
    }};
    return BondTensors2D::tabulate(NeighborSet::square_with_diagonals(), 2, 2, [tab](int r, int j1, int j2) {
        const int idx = 2 * (j1 % 2) + (j2 % 2);
        return tab[r][idx];
    });
}

/// 10 exp(-cos^2(pi i1/N1) - cos^2(pi i2/N2)) (sin(2 pi i1/N1), sin(2 pi i2/N2)) minus its mean.
inline VectorFn2D bump_force(Grid2D g, double amp = 10.0) {
    const double pi = std::acos(-1.0);
    auto env = [=](long i1, long i2) {
        const double c1 = std::cos(pi * i1 / g.n1), c2 = std::cos(pi * i2 / g.n2);
        return amp * std::exp(-c1 * c1 - c2 * c2);
    };
    VectorFn2D f(Field2D::sample(g, [&](long i1, long i2) { return env(i1, i2) * std::sin(2 * pi * i1 / g.n1); }),
                 Field2D::sample(g, [&](long i1, long i2) { return env(i1, i2) * std::sin(2 * pi * i2 / g.n2); }));
    remove_mean(f);
    return f;
}

}  // namespace hqc
