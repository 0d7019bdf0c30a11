#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "hqc/cell.hpp"
#include "hqc/hqc.hpp"
#include "hqc/lattice2d.hpp"
#include "hqc/model.hpp"

namespace hqc {

// ---------------------------------------------------------------------------
// Convergence-order estimation

struct SlopeFit {
    double slope = 0;
    double intercept = 0;  // log(error - floor) = intercept + slope log(H)
    double residual = 0;   // rms deviation in log space
    int first = 0, last = 0;  // fitted window, indices into the H-descending order
    bool has_plateau = false;
    double plateau = 0;  // mean error over the plateau points
    int plateau_points = 0;
    double floor = 0;    // fitted saturation level of the model C H^a + P (0 without plateau)
};

namespace detail {

inline SlopeFit loglog_fit(const std::vector<std::pair<double, double>>& pts, int m) {
    SlopeFit fit;
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (int i = 0; i < m; ++i) {
        const double x = std::log(pts[i].first), y = std::log(pts[i].second);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
    }
    fit.slope = (m * sxy - sx * sy) / (m * sxx - sx * sx);
    fit.intercept = (sy - fit.slope * sx) / m;
    double r = 0;
    for (int i = 0; i < m; ++i) {
        const double d = std::log(pts[i].second) - fit.intercept - fit.slope * std::log(pts[i].first);
        r += d * d;
    }
    fit.residual = std::sqrt(r / m);
    fit.last = m - 1;
    return fit;
}

// Levenberg-Marquardt for log e = log(C H^a + P) in the parameters (log C, a, log P).
inline void saturating_fit(const std::vector<std::pair<double, double>>& pts, SlopeFit& fit) {
    const int n = static_cast<int>(pts.size());
    double q[3] = {fit.intercept, fit.slope, std::log(fit.plateau)};
    auto residuals = [&](const double* x, double* r, std::vector<std::array<double, 3>>* J) {
        double s = 0;
        for (int i = 0; i < n; ++i) {
            const double lh = std::log(pts[i].first);
            const double t = std::exp(x[0] + x[1] * lh), P = std::exp(x[2]), m = t + P;
            r[i] = std::log(m) - std::log(pts[i].second);
            s += r[i] * r[i];
            if (J) (*J)[i] = {t / m, t * lh / m, P / m};
        }
        return s;
    };
    std::vector<double> r(n), rt(n);
    std::vector<std::array<double, 3>> J(n);
    double lambda = 1e-3;
    double cost = residuals(q, r.data(), &J);
    for (int it = 0; it < 500; ++it) {
        double A[3][3] = {}, g[3] = {};
        for (int i = 0; i < n; ++i)
            for (int a = 0; a < 3; ++a) {
                g[a] += J[i][a] * r[i];
                for (int b = 0; b < 3; ++b) A[a][b] += J[i][a] * J[i][b];
            }
        bool improved = false;
        while (lambda < 1e12) {
            Eigen::Matrix3d M;
            Eigen::Vector3d rhs;
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) M(a, b) = A[a][b];
                M(a, a) += lambda * (A[a][a] + 1e-12);
                rhs(a) = -g[a];
            }
            const Eigen::Vector3d d = M.ldlt().solve(rhs);
            double x[3] = {q[0] + d(0), q[1] + d(1), q[2] + d(2)};
            const double c = residuals(x, rt.data(), nullptr);
            if (std::isfinite(c) && c < cost) {
                std::copy(x, x + 3, q);
                const bool done = cost - c < 1e-15 * (1 + cost);
                cost = residuals(q, r.data(), &J);
                lambda = std::max(lambda / 10, 1e-12);
                improved = !done;
                break;
            }
            lambda *= 10;
        }
        if (!improved) break;
    }
    fit.intercept = q[0];
    fit.slope = q[1];
    fit.floor = std::exp(q[2]);
    fit.residual = std::sqrt(cost / n);
    fit.first = 0;
    fit.last = n - 1;
}

}  // namespace detail

/// Convergence order of an error sweep.
///
/// Points are ordered from coarse to fine H. The plateau starts after the first
/// refinement that reduces the error by less than 5%; its level is the mean of the
/// remaining points. With four or more points the slope is the exponent a of the model
/// C H^a + P fitted in log space over all points, so a saturation level (reached or
/// only approached) does not bend the order. With three points it is the log-log
/// least-squares slope over the pre-plateau window.
inline SlopeFit fit_slope(std::vector<std::pair<double, double>> pts) {
    if (pts.size() < 3) throw std::invalid_argument("fit_slope: need at least 3 points");
    for (const auto& [h, e] : pts)
        if (!(h > 0) || !(e > 0)) throw std::invalid_argument("fit_slope: H and error must be positive");
    std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    const int n = static_cast<int>(pts.size());
    int stop = n - 1;
    for (int i = 0; i + 1 < n; ++i)
        if (pts[i + 1].second > 0.95 * pts[i].second) {
            stop = i;
            break;
        }
    if (stop < 1) throw std::invalid_argument("fit_slope: fewer than 2 points before the plateau");

    double plateau = 0;
    const int plateau_points = n - 1 - stop;
    for (int i = stop + 1; i < n; ++i) plateau += pts[i].second;
    if (plateau_points > 0) plateau /= plateau_points;
    // starting guess: log-log fit over the points well above the plateau
    int knee = stop;
    if (plateau_points > 0)
        while (knee >= 0 && pts[knee].second < 10 * plateau) --knee;
    SlopeFit fit = detail::loglog_fit(pts, knee >= 2 ? knee + 1 : stop + 1);
    fit.has_plateau = plateau_points > 0;
    fit.plateau = plateau;
    fit.plateau_points = plateau_points;
    if (n >= 4) {
        if (!fit.has_plateau) {
            double lo = pts[0].second;
            for (const auto& q : pts) lo = std::min(lo, q.second);
            fit.plateau = lo / 10;  // initial guess only
        }
        detail::saturating_fit(pts, fit);
        if (!fit.has_plateau) fit.plateau = 0;
    }
    return fit;
}

// ---------------------------------------------------------------------------
// Configuration

enum class Potential { Harmonic, LennardJones };

struct ExperimentConfig {
    std::string id = "linear1d";
    Potential potential = Potential::Harmonic;
    int N = 1 << 14;
    int R = 3;
    int p = 2;
    /// Per residue class c = i mod p: stiffness k (harmonic) or equilibrium distance l (LJ).
    std::vector<double> values{1.0, 2.0};
    double amplitude = 1.0;       // f_i = amplitude * sin(1 + 2 pi X_i), mean removed
    std::vector<double> H;        // empty: 2^-1 ... down to two windows per element
    LoadMode load = LoadMode::Exact;
    double tol = 1e-10;
    std::uint64_t seed = 20100917;
    bool naive = true;
    std::string out_dir;

    static ExperimentConfig linear1d() { return {}; }

    static ExperimentConfig nonlinear1d() {
        ExperimentConfig c;
        c.id = "nonlinear1d";
        c.potential = Potential::LennardJones;
        c.N = 1 << 12;
        c.values = {1.0, 9.0 / 8};
        c.amplitude = 50.0;
        return c;
    }

    /// Dyadic mesh list H = 2^-1, 2^-2, ... with at least p atoms per element.
    std::vector<double> mesh_list() const {
        if (!H.empty()) return H;
        std::vector<double> out;
        for (long K = 2; K * p <= N; K *= 2) out.push_back(1.0 / K);
        return out;
    }

    void validate() const {
        if (N < 2 || (N & (N - 1)) != 0) throw std::invalid_argument("config: N must be a power of two");
        if (p < 1 || N % p != 0) throw std::invalid_argument("config: p must divide N");
        if (static_cast<int>(values.size()) != p) throw std::invalid_argument("config: need one value per residue class");
        for (double h : mesh_list()) {
            const double K = std::round(1.0 / h);
            if (std::abs(K * h - 1) > 1e-12 || static_cast<long>(K) < 1 || N % static_cast<long>(K) != 0)
                throw std::invalid_argument("config: mesh size " + std::to_string(h) + " does not divide the lattice");
            if (N / static_cast<long>(K) < p)
                throw std::invalid_argument("config: mesh size " + std::to_string(h) + " leaves fewer than p atoms per element");
        }
    }
};

inline LatticeFn1D sine_load(int N, double amplitude) {
    const double pi = std::acos(-1.0);
    return project_zero_mean(LatticeFn1D::sample(PeriodicGrid1D::over(N), [=](double x) {
        return amplitude * std::sin(1 + 2 * pi * x);
    }));
}

/// phi_r(z) = 1/2 k 3^(1-r) (z - r)^2 or Lennard-Jones with distance l, chosen by the
/// residue class i mod p (the fast index j = ((i-1) mod p) + 1 has residue j mod p).
inline MaterialLaw residue_law(Potential kind, std::vector<double> values) {
    const int p = static_cast<int>(values.size());
    return [kind, values = std::move(values), p](long, int j, int r) -> PairPotential {
        const double v = values[static_cast<std::size_t>(mod(j, p))];
        if (kind == Potential::Harmonic) return Harmonic{v * std::pow(3.0, 1 - r), static_cast<double>(r)};
        return LennardJones{v};
    };
}

inline AtomisticModel build_model(const ExperimentConfig& c) {
    return AtomisticModel(c.N, c.R, c.p, residue_law(c.potential, c.values), sine_load(c.N, c.amplitude));
}

/// Per-residue values drawn uniformly in [lo, hi] from a seeded 64-bit generator.
inline std::vector<double> random_values(std::uint64_t seed, int p, double lo, double hi) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> d(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(p));
    for (double& x : v) x = d(rng);
    return v;
}

// ---------------------------------------------------------------------------
// 1D error sweeps

struct ErrorRow {
    int N = 0;
    int K = 0;
    double H = 0;
    double l2_uH = 0, h1_uH = 0;    // u^H - u
    double l2_uHc = 0, h1_uHc = 0;  // u^{H,c} - u
    double l2_qc = 0, h1_qc = 0, linf_qc = 0;           // u^QC - u
    double l2_qc_av = 0, h1_qc_av = 0, linf_qc_av = 0;  // u^QC - Av(u)
    double emod_l2 = std::numeric_limits<double>::quiet_NaN();
    double emod_h1 = std::numeric_limits<double>::quiet_NaN();
    int iterations = 0;
};

struct ErrorReport {
    std::string id;
    std::vector<ErrorRow> rows;
    int full_iterations = 0;
    double seconds = 0;

    std::vector<std::pair<double, double>> series(double ErrorRow::*field) const {
        std::vector<std::pair<double, double>> out;
        for (const auto& r : rows) out.emplace_back(r.H, r.*field);
        return out;
    }
    SlopeFit fit(double ErrorRow::*field) const { return fit_slope(series(field)); }
};

/// Pointwise homogenized stiffness of a linear finite-range law: the relaxed cell
/// stiffness at zero strain with the bonds of X_i frozen.
inline LatticeFn1D pointwise_psi0(const AtomisticModel& m) {
    LatticeFn1D psi0(m.grid());
    const int p = m.p();
    std::vector<double> cache;
    for (int i = 1; i <= m.N(); ++i) {
        CellPotentials pots(static_cast<std::size_t>(p));
        for (int j = 0; j < p; ++j)
            for (int r = 1; r <= m.R(); ++r) pots[j].push_back(m.law()(i, j + 1, r));
        std::vector<std::vector<double>> psi(static_cast<std::size_t>(m.R()), std::vector<double>(static_cast<std::size_t>(p)));
        for (int r = 1; r <= m.R(); ++r)
            for (int j = 0; j < p; ++j) psi[r - 1][j] = pots[j][r - 1].deriv2(r) * r * r;
        psi0.at(i) = homogenize_finite_range(psi, solve_cell_finite_range(psi));
    }
    return psi0;
}

inline ErrorReport run_1d(const ExperimentConfig& c) {
    c.validate();
    const auto t0 = std::chrono::steady_clock::now();
    const AtomisticModel model = build_model(c);
    NewtonOptions nopt;
    nopt.tol = c.tol;
    const FullSolution full = solve_full(model, nopt);
    const LatticeFn1D& u = full.u.fn();
    const LatticeFn1D avu = pair_average(u);
    const bool linear = model.all_harmonic();
    LatticeFn1D psi0;
    if (linear) psi0 = pointwise_psi0(model);

    ErrorReport rep;
    rep.id = c.id;
    rep.full_iterations = full.iterations;
    for (double h : c.mesh_list()) {
        const int K = static_cast<int>(std::lround(1.0 / h));
        const MacroMesh mesh = MacroMesh::uniform(c.N, K);
        HqcOptions opt;
        opt.tol = c.tol;
        opt.load = c.load;
        HqcSolver solver(model, mesh, opt);
        const HqcSolution sol = solver.solve();
        const LatticeFn1D uH = sol.uH.lattice();
        const LatticeFn1D uHc = solver.reconstruct(sol);
        ErrorRow row;
        row.N = c.N;
        row.K = K;
        row.H = mesh.H();
        row.iterations = sol.iterations;
        row.l2_uH = norm(uH - u, Norm::l2());
        row.h1_uH = norm(uH - u, Norm::h1());
        row.l2_uHc = norm(uHc - u, Norm::l2());
        row.h1_uHc = norm(uHc - u, Norm::h1());
        if (c.naive) {
            const LatticeFn1D uq = naive_qc(model, mesh, opt).uH.lattice();
            row.l2_qc = norm(uq - u, Norm::l2());
            row.h1_qc = norm(uq - u, Norm::h1());
            row.linf_qc = norm(uq - u, Norm::linf());
            row.l2_qc_av = norm(uq - avu, Norm::l2());
            row.h1_qc_av = norm(uq - avu, Norm::h1());
            row.linf_qc_av = norm(uq - avu, Norm::linf());
        }
        if (linear) {
            const auto em = modeling_error(psi0, solver.sampling(), model.force().fn(), mesh);
            row.emod_l2 = em.l2;
            row.emod_h1 = em.h1;
        }
        rep.rows.push_back(row);
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

inline ErrorReport run_linear_1d(ExperimentConfig c) {
    c.potential = Potential::Harmonic;
    return run_1d(c);
}

inline ErrorReport run_nonlinear_1d(ExperimentConfig c) {
    c.potential = Potential::LennardJones;
    return run_1d(c);
}

struct PStudyRow {
    int p = 0;
    std::uint64_t seed = 0;
    std::vector<double> values;
    double C8 = 0;
};

/// C_8 = max_H |u^{H,c} - u|_H1 / H over H = 2^-1 ... 2^-7, with random residue values per p.
inline std::vector<PStudyRow> run_p_study(const ExperimentConfig& base, const std::vector<int>& ps = {2, 4, 8, 16}) {
    std::vector<PStudyRow> out;
    for (int p : ps) {
        ExperimentConfig c = base;
        c.p = p;
        c.naive = false;
        c.H = {};
        for (int k = 1; k <= 7; ++k) c.H.push_back(std::ldexp(1.0, -k));
        const bool lj = c.potential == Potential::LennardJones;
        const std::uint64_t seed = c.seed + static_cast<std::uint64_t>(p);
        c.values = random_values(seed, p, 1.0, lj ? 1.1 : 2.0);
        const ErrorReport rep = run_1d(c);
        PStudyRow row{p, seed, c.values, 0.0};
        for (const auto& r : rep.rows) row.C8 = std::max(row.C8, r.h1_uHc / r.H);
        out.push_back(row);
    }
    return out;
}

// ---------------------------------------------------------------------------
// 2D sweeps

struct Row2D {
    int N = 0;
    int t = 0;
    double H = 0;
    double l2_uH = 0, h1_uH = 0, l2_uHc = 0, h1_uHc = 0;
};

struct Report2D {
    int which = 1;
    HomogenizedTensor2D psi0;
    std::vector<Row2D> rows;
    int cg_iterations = 0;
    double seconds = 0;

    std::vector<std::pair<double, double>> series(double Row2D::*field) const {
        std::vector<std::pair<double, double>> out;
        for (const auto& r : rows) out.emplace_back(r.H, r.*field);
        return out;
    }
    SlopeFit fit(double Row2D::*field) const { return fit_slope(series(field)); }
};

inline BondTensors2D case_bonds(int which) {
    if (which == 1) return checkerboard_bonds(1.0, 2.0, 0.25);
    if (which == 2) return parity_table_bonds();
    throw std::invalid_argument("2D case must be 1 or 2");
}

/// Triangulated HQC on t x t nodes, t = 2, 4, ... up to N/4.
inline Report2D run_2d(int which, int N = 256, std::vector<int> ts = {}, double tol = 1e-12) {
    const auto t0 = std::chrono::steady_clock::now();
    const Grid2D g = Grid2D::square(N);
    const BondTensors2D bonds = case_bonds(which);
    const Model2D model = Model2D::periodic(g, bonds, bump_force(g));
    if (ts.empty())
        for (int t = 2; 4 * t <= N; t *= 2) ts.push_back(t);
    Report2D rep;
    rep.which = which;
    rep.psi0 = homogenize_2d(bonds);
    const auto full = solve_full_2d(model, tol);
    rep.cg_iterations = full.iterations;
    for (int t : ts) {
        Hqc2DSolver solver(model, Triangulation2D(g, t), bonds.p1, bonds.p2);
        const auto sol = solver.solve(tol);
        const VectorFn2D uH = sol.uH.lattice(solver.triangulation());
        const VectorFn2D uHc = solver.reconstruct(sol);
        Row2D r;
        r.N = N;
        r.t = t;
        r.H = solver.triangulation().H();
        r.l2_uH = l2_norm(uH - full.u);
        r.h1_uH = h1_seminorm(uH - full.u);
        r.l2_uHc = l2_norm(uHc - full.u);
        r.h1_uHc = h1_seminorm(uHc - full.u);
        rep.rows.push_back(r);
    }
    rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return rep;
}

// ---------------------------------------------------------------------------
// CSV

struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;
};

inline void write_csv(std::ostream& os, const CsvTable& t) {
    for (std::size_t k = 0; k < t.header.size(); ++k) os << (k ? "," : "") << t.header[k];
    os << '\n';
    os << std::setprecision(17);
    for (const auto& r : t.rows) {
        if (r.size() != t.header.size()) throw std::invalid_argument("write_csv: row width differs from header");
        for (std::size_t k = 0; k < r.size(); ++k) os << (k ? "," : "") << r[k];
        os << '\n';
    }
}

inline CsvTable read_csv(std::istream& is) {
    CsvTable t;
    std::string line;
    auto split = [](const std::string& s) {
        std::vector<std::string> out;
        std::stringstream ss(s);
        std::string cell;
        while (std::getline(ss, cell, ',')) out.push_back(cell);
        return out;
    };
    if (!std::getline(is, line)) throw std::runtime_error("read_csv: empty input");
    t.header = split(line);
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<double> row;
        for (const auto& cell : split(line)) row.push_back(std::stod(cell));
        if (row.size() != t.header.size()) throw std::runtime_error("read_csv: ragged row");
        t.rows.push_back(std::move(row));
    }
    return t;
}

inline void write_csv(const std::filesystem::path& path, const CsvTable& t) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path.string());
    write_csv(os, t);
}

inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path.string());
    return read_csv(is);
}

inline CsvTable to_csv(const ErrorReport& rep) {
    CsvTable t{{"N", "K", "H", "l2_uH", "h1_uH", "l2_uHc", "h1_uHc", "l2_qc", "h1_qc", "linf_qc", "l2_qc_av", "h1_qc_av",
                "linf_qc_av", "emod_l2", "emod_h1", "iterations"},
               {}};
    for (const auto& r : rep.rows)
        t.rows.push_back({double(r.N), double(r.K), r.H, r.l2_uH, r.h1_uH, r.l2_uHc, r.h1_uHc, r.l2_qc, r.h1_qc, r.linf_qc,
                          r.l2_qc_av, r.h1_qc_av, r.linf_qc_av, r.emod_l2, r.emod_h1, double(r.iterations)});
    return t;
}

inline CsvTable to_csv(const Report2D& rep) {
    CsvTable t{{"N", "t", "H", "l2_uH", "h1_uH", "l2_uHc", "h1_uHc"}, {}};
    for (const auto& r : rep.rows) t.rows.push_back({double(r.N), double(r.t), r.H, r.l2_uH, r.h1_uH, r.l2_uHc, r.h1_uHc});
    return t;
}

inline CsvTable to_csv(const std::vector<PStudyRow>& rows) {
    CsvTable t{{"p", "seed", "C8"}, {}};
    for (const auto& r : rows) t.rows.push_back({double(r.p), double(r.seed), r.C8});
    return t;
}

/// Plain-text slope summary of a 1D report.
inline std::string summary(const ErrorReport& rep) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << rep.id << ": N=" << (rep.rows.empty() ? 0 : rep.rows.front().N) << ", " << rep.rows.size() << " meshes, "
       << rep.seconds << " s\n";
    auto line = [&](const char* name, double ErrorRow::*f) {
        const auto fit = rep.fit(f);
        os << "  " << std::left << std::setw(22) << name << " slope " << std::setw(7) << fit.slope;
        if (fit.has_plateau) os << " plateau " << std::scientific << fit.plateau << std::fixed;
        os << '\n';
    };
    line("|u^H - u|_L2", &ErrorRow::l2_uH);
    if (!rep.rows.empty()) {
        // not expected to converge; report how much of the initial error survives
        const double ratio = rep.rows.back().h1_uH / rep.rows.front().h1_uH;
        os << "  " << std::left << std::setw(22) << "|u^H - u|_H1" << " final/initial " << ratio << '\n';
    }
    line("|u^{H,c} - u|_L2", &ErrorRow::l2_uHc);
    line("|u^{H,c} - u|_H1", &ErrorRow::h1_uHc);
    return os.str();
}

/// Plain-text slope summary of a 2D report.
inline std::string summary(const Report2D& rep) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3);
    os << "case2d-" << rep.which << ": N=" << (rep.rows.empty() ? 0 : rep.rows.front().N) << ", " << rep.rows.size()
       << " meshes, " << rep.seconds << " s\n";
    os << "  psi0_11 = " << 4 * rep.psi0.a(0, 0) << " I, psi0_12 = " << 4 * rep.psi0.a(0, 1)
       << " I, psi0_22 = " << 4 * rep.psi0.a(1, 1) << " I\n";
    auto line = [&](const char* name, double Row2D::*f) {
        const auto fit = rep.fit(f);
        os << "  " << std::left << std::setw(22) << name << " slope " << fit.slope << '\n';
    };
    line("|u^H - u|_L2", &Row2D::l2_uH);
    line("|u^{H,c} - u|_L2", &Row2D::l2_uHc);
    line("|u^{H,c} - u|_H1", &Row2D::h1_uHc);
    return os.str();
}

inline std::string summary(const std::vector<PStudyRow>& rows) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(4);
    double lo = std::numeric_limits<double>::infinity(), hi = 0;
    for (const auto& r : rows) {
        os << "  p=" << std::left << std::setw(3) << r.p << " seed " << r.seed << "  C8 = " << r.C8 << '\n';
        lo = std::min(lo, r.C8);
        hi = std::max(hi, r.C8);
    }
    if (!rows.empty()) os << "  spread max/min = " << hi / lo << '\n';
    return os.str();
}

}  // namespace hqc
