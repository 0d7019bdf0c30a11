#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hqc/hqc.hpp"

using namespace hqc;

namespace {

constexpr double kPi = 3.14159265358979323846;

LatticeFn1D sine_force(int N, double amp = 1.0) {
    return project_zero_mean(
        LatticeFn1D::sample(PeriodicGrid1D::over(N), [amp](double x) { return amp * std::sin(2 * kPi * x); }));
}

// Nearest-neighbour harmonic chain with stiffness k(X, j).
template <class K>
AtomisticModel nn_model(int N, int p, K k, const LatticeFn1D& f) {
    const double eps = 1.0 / N;
    return AtomisticModel(N, 1, p, [k, eps](long i, int j, int) { return PairPotential(Harmonic{k(i * eps, j), 1.0}); }, f);
}

template <class K>
LatticeFn1D pointwise_psi0(int N, int p, K k) {
    const double eps = 1.0 / N;
    return homogenize_nn(CellTensor1D(TwoScaleFn::tabulate(N, p, [&](int i, int j) { return k(i * eps, j); }))).psi0;
}

AtomisticModel lj_model(int N, const LatticeFn1D& f) {
    std::vector<std::vector<PairPotential>> table = {
        {LennardJones{9.0 / 8}, LennardJones{9.0 / 8}, LennardJones{9.0 / 8}},
        {LennardJones{1.0}, LennardJones{1.0}, LennardJones{1.0}}};
    return AtomisticModel::periodic(N, table, f);
}

// Discrete energy norm |v|_psi0 = <psi0 D v, D v>^(1/2).
double energy_norm(const LatticeFn1D& psi0, const LatticeFn1D& v) {
    const LatticeFn1D dv = diff(v);
    return std::sqrt(inner(product(psi0, dv), dv));
}

double max_abs_diff(const LatticeFn1D& a, const LatticeFn1D& b) { return norm(a - b, Norm::linf()); }

}  // namespace

TEST(Mesh, UniformNodesAndSizes) {
    auto m = MacroMesh::uniform(10, 3);
    EXPECT_EQ(m.nodes(), (std::vector<long>{1, 4, 7}));
    EXPECT_EQ(m.size(0), 3);
    EXPECT_EQ(m.size(2), 4);
    EXPECT_NEAR(m.H(), 0.4, 1e-15);
    EXPECT_EQ(m.element_of(1), 0);
    EXPECT_EQ(m.element_of(6), 1);
    EXPECT_EQ(m.element_of(10), 2);
    EXPECT_EQ(m.element_of(11), 0);
    EXPECT_THROW(MacroMesh(8, {2, 5}), std::invalid_argument);
    EXPECT_THROW(MacroMesh(8, {1, 5, 5}), std::invalid_argument);
}

TEST(Mesh, CenteredSamplingExample) {
    auto s = choose_sampling(MacroMesh::uniform(8, 2), 2);
    ASSERT_EQ(s.size(), 2u);
    EXPECT_EQ(s[0].rep_start, 2);
    EXPECT_EQ(s[0].coll, 2);
    EXPECT_EQ(s[1].rep_start, 6);
    EXPECT_EQ(s[1].coll, 6);
    auto l = choose_sampling(MacroMesh::uniform(8, 2), 2, Placement::Left);
    EXPECT_EQ(l[1].rep_start, 5);
    auto odd = choose_sampling(MacroMesh::uniform(12, 2), 3);
    // Element {1..6}: windows {2,3,4} and {3,4,5} are equally central; the left one wins.
    EXPECT_EQ(odd[0].rep_start, 2);
    EXPECT_EQ(odd[0].coll, 3);
    EXPECT_THROW(choose_sampling(MacroMesh::uniform(8, 4), 3), std::invalid_argument);
}

TEST(Mesh, SamplingStaysInsideElement) {
    std::mt19937_64 rng(7);
    for (int t = 0; t < 100; ++t) {
        const int p = 1 + static_cast<int>(rng() % 6);
        const int K = 1 + static_cast<int>(rng() % 10);
        const int N = K * (p + static_cast<int>(rng() % 9));
        auto mesh = MacroMesh::uniform(N, K);
        for (auto pl : {Placement::Centered, Placement::Left}) {
            auto s = choose_sampling(mesh, p, pl);
            for (int k = 0; k < K; ++k) {
                EXPECT_GE(s[k].rep_start, mesh.node(k));
                EXPECT_LE(s[k].rep_start + p - 1, mesh.node(k + 1) - 1);
                EXPECT_GE(s[k].coll, s[k].rep_start);
                EXPECT_LT(s[k].coll, s[k].rep_start + p);
            }
        }
    }
}

TEST(Mesh, MacroFnLatticeAndRecenter) {
    auto mesh = MacroMesh::uniform(8, 2);
    MacroFn u(mesh, {0.0, 1.0});
    auto v = u.lattice();
    EXPECT_NEAR(v(1), 0.0, 1e-15);
    EXPECT_NEAR(v(3), 0.5, 1e-15);
    EXPECT_NEAR(v(5), 1.0, 1e-15);
    EXPECT_NEAR(v(7), 0.5, 1e-15);
    EXPECT_NEAR(u.strain(0), 2.0, 1e-14);
    EXPECT_NEAR(u.strain(1), -2.0, 1e-14);
    u.recenter();
    EXPECT_NEAR(average(u.lattice()), 0.0, 1e-15);
}

TEST(Mesh, InterpolationBound) {
    // |u - I u|_H1 <= H |u|_H2 for lattice P1 interpolation.
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> d(-1, 1);
    for (int t = 0; t < 100; ++t) {
        const int K = 2 + static_cast<int>(rng() % 8);
        const int N = K * (2 + static_cast<int>(rng() % 10)) + static_cast<int>(rng() % K);
        auto mesh = MacroMesh::uniform(N, K);
        auto u = LatticeFn1D::sample(PeriodicGrid1D::over(N), [&](double) { return d(rng); });
        auto Iu = interpolate_nodal(u, mesh).lattice();
        EXPECT_NEAR(average(Iu), 0.0, 1e-13);
        for (int k = 0; k < K; ++k) EXPECT_NEAR(Iu(mesh.node(k)) - Iu(1), u(mesh.node(k)) - u(1), 1e-12);
        EXPECT_LE(norm(u - Iu, Norm::h1()), mesh.H() * norm(u, Norm::h2()) + 1e-12);
    }
}

TEST(Micro, HarmonicWindowMatchesClosedForm) {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(0.5, 3.0);
    for (int t = 0; t < 100; ++t) {
        const int p = 1 + static_cast<int>(rng() % 7);
        std::vector<double> kj(p);
        for (double& x : kj) x = d(rng);
        const int K = 3, N = K * p * 2;
        auto model = nn_model(N, p, [&](double, int j) { return kj[j - 1]; }, sine_force(N));
        HqcSolver s(model, MacroMesh::uniform(N, K));
        const double z = 0.1 * d(rng);
        auto ms = s.micro_solve(1, z);
        // The window is aligned with fast index of its first atom.
        const int j0 = fast_index(s.sampling()[1].rep_start, p);
        std::vector<double> row(p);
        for (int j = 0; j < p; ++j) row[j] = kj[(j0 - 1 + j) % p];
        auto chi = chi_closed_form(row);
        const double psi0 = harmonic_mean(row);
        for (int j = 0; j < p; ++j) EXPECT_NEAR(ms.omega[j], z * chi[j], 1e-12);
        for (int j = 0; j < p; ++j) EXPECT_NEAR(ms.domega[j], chi[j], 1e-12);
        EXPECT_NEAR(ms.stiffness, psi0, 1e-12 * psi0);
        EXPECT_NEAR(ms.flux, psi0 * z, 1e-12 * psi0);
        EXPECT_NEAR(ms.energy, 0.5 * psi0 * z * z, 1e-12 * psi0);
    }
}

TEST(Micro, TangentSolveAddsCorrector) {
    const int N = 16, p = 2;
    auto model = nn_model(N, p, [](double, int j) { return j == 1 ? 1.0 : 2.0; }, sine_force(N));
    HqcSolver s(model, MacroMesh::uniform(N, 2));
    auto ms = s.micro_solve(0, 0.3);
    MacroFn w(s.mesh(), {0.0, 0.5});
    auto v = s.micro_tangent_solve(ms, w);
    const double t = w.strain(0);
    const auto wl = w.lattice();
    for (int j = 0; j < p; ++j)
        EXPECT_NEAR(v[j], wl(ms.rep_start + j) + s.mesh().epsilon() * t * ms.domega[j], 1e-15);
    // chi for psi = (1, 2) starting at fast site 2 (the window begins at atom 4).
    EXPECT_EQ(ms.rep_start, 4);
    auto chi = chi_closed_form(std::vector<double>{2.0, 1.0});
    EXPECT_NEAR(ms.domega[0], chi[0], 1e-14);
}

TEST(Hqc, GradientAndHessianMatchFiniteDifferences) {
    const int N = 64, K = 8;
    auto model = lj_model(N, sine_force(N, 5.0));
    HqcSolver s(model, MacroMesh::uniform(N, K));
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> d(-0.004, 0.004);
    for (int t = 0; t < 5; ++t) {
        std::vector<double> U(K);
        for (double& x : U) x = d(rng);
        MacroFn u(s.mesh(), U);
        auto micro = s.relax_all(u);
        auto g = s.gradient(u, micro);
        const auto A = s.hessian(micro);
        const double h = 1e-6;
        for (int l = 0; l < K; ++l) {
            MacroFn up = u, um = u;
            up.nodal()[l] += h;
            um.nodal()[l] -= h;
            const double fd = (s.energy(up) - s.energy(um)) / (2 * h);
            EXPECT_NEAR(g[l], fd, 1e-6 * std::max(1.0, std::abs(fd)));
            auto gp = s.gradient(up, s.relax_all(up));
            auto gm = s.gradient(um, s.relax_all(um));
            for (int m = 0; m < K; ++m) {
                const double fd2 = (gp[m] - gm[m]) / (2 * h);
                EXPECT_NEAR(A(m, l), fd2, 1e-4 * std::max(1.0, std::abs(fd2)));
                EXPECT_DOUBLE_EQ(A(m, l), A(l, m));
            }
        }
    }
}

TEST(Hqc, HomogeneousP1Stiffness) {
    // X-independent two-phase chain: the macro springs are the harmonic mean over H.
    const int N = 32, K = 4;
    auto model = nn_model(N, 2, [](double, int j) { return j == 1 ? 1.0 : 3.0; }, sine_force(N));
    HqcSolver s(model, MacroMesh::uniform(N, K));
    MacroFn u(s.mesh(), std::vector<double>(K, 0.0));
    auto A = s.hessian(s.relax_all(u));
    const double H = 1.0 / K;
    EXPECT_NEAR(A(0, 0), 2 * 1.5 / H, 1e-12);
    EXPECT_NEAR(A(0, 1), -1.5 / H, 1e-12);
}

TEST(Hqc, LinearProblemConvergesInOneStep) {
    const int N = 64;
    auto model = nn_model(N, 4, [](double x, int j) { return 1.0 + 0.5 * j + 0.3 * std::sin(2 * kPi * x); }, sine_force(N));
    auto sol = solve_hqc(model, MacroMesh::uniform(N, 8));
    EXPECT_EQ(sol.iterations, 1);
    EXPECT_NEAR(average(sol.uH.lattice()), 0.0, 1e-15);
}

TEST(Hqc, FullResolutionReproducesAtomistic) {
    // K = N, p = 1 and nearest-neighbour bonds: every atom is a node and its own window.
    for (int N : {8, 17, 40}) {
        auto k = [](double x, int) { return 1.0 + 0.5 * std::cos(2 * kPi * x); };
        auto model = nn_model(N, 1, k, sine_force(N, 3.0));
        auto sol = solve_hqc(model, MacroMesh::uniform(N, N));
        auto ref = solve_full(model);
        EXPECT_LT(max_abs_diff(sol.uH.lattice(), ref.u), 1e-12);
    }
    const int N = 32;
    auto lj = AtomisticModel(N, 1, 1, [](long i, int, int) { return PairPotential(LennardJones{i % 3 == 0 ? 1.1 : 1.0}); },
                             sine_force(N, 5.0));
    auto sol = solve_hqc(lj, MacroMesh::uniform(N, N));
    EXPECT_LT(max_abs_diff(sol.uH.lattice(), solve_full(lj).u), 1e-10);
}

TEST(Hqc, CollocatedEqualsQcOnCollocatedTensor) {
    std::mt19937_64 rng(17);
    std::uniform_real_distribution<double> d(0.5, 2.5), ph(0, 2 * kPi);
    for (int t = 0; t < 20; ++t) {
        const int p = 1 + static_cast<int>(rng() % 5);
        const int K = 2 + static_cast<int>(rng() % 6);
        const int N = p * K * (1 + static_cast<int>(rng() % 4));
        std::vector<double> base(p), phase(p);
        for (double& x : base) x = d(rng);
        for (double& x : phase) x = ph(rng);
        auto k = [&](double x, int j) { return base[j - 1] * (1.2 + std::sin(2 * kPi * x + phase[j - 1])) / 1.2 + 0.1; };
        auto f = sine_force(N, 2.0);
        auto model = nn_model(N, p, k, f);
        auto mesh = MacroMesh::uniform(N, K);
        HqcOptions opt;
        opt.collocate = true;
        HqcSolver s(model, mesh, opt);
        auto sol = s.solve();
        auto ref = qc_on_psi0_collocated(pointwise_psi0(N, p, k), s.sampling(), f, mesh);
        EXPECT_LT(max_abs_diff(sol.uH.lattice(), ref.lattice()), 1e-12);
    }
}

TEST(Hqc, GalerkinOrthogonalityAndBestApproximation) {
    std::mt19937_64 rng(19);
    std::uniform_real_distribution<double> d(-1, 1);
    const int N = 120, K = 10, p = 3;
    auto k = [](double x, int j) { return 1.0 + 0.4 * j + 0.5 * std::sin(2 * kPi * x); };
    auto f = sine_force(N, 4.0);
    auto psi0 = pointwise_psi0(N, p, k);
    auto mesh = MacroMesh::uniform(N, K);
    auto u0 = solve_homogenized(psi0, f).fn();
    auto uh = qc_on_psi0(psi0, f, mesh);
    auto e = u0 - uh.lattice();
    for (int l = 0; l < K; ++l) {
        std::vector<double> phi(K, 0.0);
        phi[l] = 1.0;
        auto v = MacroFn(mesh, phi).lattice();
        EXPECT_NEAR(inner(product(psi0, diff(e)), diff(v)), 0.0, 1e-12);
    }
    const double best = energy_norm(psi0, e);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> V(uh.nodal());
        for (double& x : V) x += 0.01 * d(rng);
        EXPECT_LE(best, energy_norm(psi0, u0 - MacroFn(mesh, V).lattice()) + 1e-14);
    }
}

TEST(Hqc, PeriodicMaterialMatchesQcOnPsi0) {
    // With no slow variation the modelling error vanishes and HQC is QC on psi0.
    const int N = 96, K = 8, p = 4;
    auto k = [](double, int j) { return 0.5 + j; };
    auto f = sine_force(N);
    auto model = nn_model(N, p, k, f);
    auto mesh = MacroMesh::uniform(N, K);
    auto sol = solve_hqc(model, mesh);
    auto psi0 = pointwise_psi0(N, p, k);
    EXPECT_LT(max_abs_diff(sol.uH.lattice(), qc_on_psi0(psi0, f, mesh).lattice()), 1e-13);
    auto em = modeling_error(psi0, choose_sampling(mesh, p), f, mesh);
    EXPECT_LT(norm(em.e, Norm::linf()), 1e-14);
}

TEST(Hqc, NaiveQcUsesArithmeticMean) {
    const int N = 32, K = 4;
    auto model = nn_model(N, 2, [](double, int j) { return j == 1 ? 1.0 : 3.0; }, sine_force(N));
    HqcOptions opt;
    opt.reconstruction = Reconstruction::Identity;
    HqcSolver s(model, MacroMesh::uniform(N, K), opt);
    auto ms = s.micro_solve(0, 0.2);
    EXPECT_NEAR(ms.stiffness, 2.0, 1e-14);
    EXPECT_NEAR(ms.flux, 0.4, 1e-14);
    for (double w : ms.omega) EXPECT_EQ(w, 0.0);
    // Naive QC is stiffer, so its displacement is smaller.
    auto naive = naive_qc(model, s.mesh());
    auto hqc = solve_hqc(model, s.mesh());
    EXPECT_LT(norm(naive.uH.lattice(), Norm::l2()), norm(hqc.uH.lattice(), Norm::l2()));
}

TEST(Hqc, ReconstructionAddsScaledFluctuation) {
    const int N = 24, K = 3, p = 2;
    auto model = nn_model(N, p, [](double, int j) { return j == 1 ? 1.0 : 4.0; }, sine_force(N));
    HqcSolver s(model, MacroMesh::uniform(N, K));
    auto sol = s.solve();
    auto uc = s.reconstruct(sol);
    auto uh = sol.uH.lattice();
    const double eps = 1.0 / N;
    for (int k = 0; k < K; ++k) {
        const auto& ms = sol.micro[k];
        for (long i = s.mesh().node(k); i < s.mesh().node(k + 1); ++i)
            EXPECT_NEAR(uc(i) - uh(i), eps * ms.omega[mod(i - ms.rep_start, p)], 1e-15);
        // The relaxed window agrees with the corrector eps * chi * s_k.
        auto chi = chi_closed_form(std::vector<double>{ms.rep_start % 2 == 1 ? 1.0 : 4.0, ms.rep_start % 2 == 1 ? 4.0 : 1.0});
        for (int j = 0; j < p; ++j) EXPECT_NEAR(ms.omega[j], chi[j] * ms.strain, 1e-12);
    }
}

TEST(Hqc, SampledLoadEqualsExactAtFullResolution) {
    const int N = 20;
    auto f = sine_force(N, 2.0);
    auto model = nn_model(N, 1, [](double, int) { return 1.0; }, f);
    HqcOptions ex, sa;
    sa.load = LoadMode::Sampled;
    HqcSolver a(model, MacroMesh::uniform(N, N), ex), b(model, MacroMesh::uniform(N, N), sa);
    for (int k = 0; k < N; ++k) EXPECT_NEAR(a.load()[k], b.load()[k], 1e-15);
}

TEST(Hqc, SampledLoadIsBalanced) {
    std::mt19937_64 rng(23);
    for (int t = 0; t < 100; ++t) {
        const int p = 1 + static_cast<int>(rng() % 4);
        const int K = 2 + static_cast<int>(rng() % 6);
        const int N = p * K * (1 + static_cast<int>(rng() % 5));
        std::uniform_real_distribution<double> d(-1, 1);
        auto f = project_zero_mean(LatticeFn1D::sample(PeriodicGrid1D::over(N), [&](double) { return d(rng); }));
        auto model = nn_model(N, p, [](double, int j) { return 1.0 + j; }, f);
        HqcOptions opt;
        opt.load = LoadMode::Sampled;
        HqcSolver s(model, MacroMesh::uniform(N, K), opt);
        double sum = 0;
        for (double x : s.load()) sum += x;
        EXPECT_NEAR(sum, 0.0, 1e-13);
        EXPECT_NO_THROW(s.solve());
    }
}

TEST(Hqc, LennardJonesNewtonAndLinearizedUpdatesAgree) {
    const int N = 256, K = 16;
    auto model = lj_model(N, sine_force(N, 50.0));
    auto mesh = MacroMesh::uniform(N, K);
    auto a = solve_hqc(model, mesh);
    HqcOptions opt;
    opt.micro_update = MicroUpdate::LinearizedPrevious;
    auto b = solve_hqc(model, mesh, opt);
    EXPECT_LE(a.iterations, 10);
    EXPECT_LT(max_abs_diff(a.uH.lattice(), b.uH.lattice()), 1e-10);
    for (const auto& m : b.micro) EXPECT_LT(m.residual, 1e-10);
}

TEST(Hqc, LennardJonesUniformStrainIsExact) {
    // A single element relaxes exactly like the full chain under zero load.
    const int N = 16;
    auto model = lj_model(N, LatticeFn1D(PeriodicGrid1D::over(N)));
    auto sol = solve_hqc(model, MacroMesh::uniform(N, 1));
    auto full = solve_full(model);
    HqcSolver s(model, MacroMesh::uniform(N, 1));
    EXPECT_LT(max_abs_diff(s.reconstruct(sol) - LatticeFn1D(full.u.fn().grid(), std::vector<double>(N, average(s.reconstruct(sol)))),
                           full.u),
              1e-10);
}
