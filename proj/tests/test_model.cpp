#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "hqc/model.hpp"

using namespace hqc;

namespace {

LatticeFn1D random_fn(std::mt19937_64& rng, PeriodicGrid1D g, double amp = 1.0) {
    std::uniform_real_distribution<double> d(-amp, amp);
    return LatticeFn1D::sample(g, [&](double) { return d(rng); });
}

LatticeFn1D sine_force(int N, double amp = 1.0) {
    return project_zero_mean(LatticeFn1D::sample(PeriodicGrid1D::over(N), [amp](double x) {
               return amp * std::sin(1 + 2 * M_PI * x);
           })).fn();
}

// The two-scale test material with k = 1 (i even) / 2 (i odd) and weights 3^{1-r}.
AtomisticModel linear_chain(int N, int R = 3) {
    std::vector<std::vector<PairPotential>> table(2);
    for (int j = 1; j <= 2; ++j)
        for (int r = 1; r <= R; ++r)
            table[j - 1].push_back(Harmonic{(j % 2 == 0 ? 1.0 : 2.0) * std::pow(3.0, 1 - r), double(r)});
    return AtomisticModel::periodic(N, table, sine_force(N));
}

AtomisticModel lj_chain(int N, double amp) {
    std::vector<std::vector<PairPotential>> table(2);
    for (int j = 1; j <= 2; ++j)
        for (int r = 1; r <= 3; ++r) table[j - 1].push_back(LennardJones{j % 2 == 0 ? 1.0 : 9.0 / 8.0});
    return AtomisticModel::periodic(N, table, sine_force(N, amp));
}

// Random heterogeneous model with small random displacement for derivative checks.
AtomisticModel random_model(std::mt19937_64& rng, int N, int R, bool lj) {
    std::uniform_real_distribution<double> d(1.0, 2.0), l(1.0, 1.1);
    return AtomisticModel::per_site(
        N, R,
        [&rng, d, l, lj](long, int r) mutable -> PairPotential {
            if (lj) return LennardJones{l(rng)};
            return Harmonic{d(rng), r * l(rng)};
        },
        project_zero_mean(random_fn(rng, PeriodicGrid1D::over(N))).fn());
}

}  // namespace

TEST(Potential, LennardJonesValues) {
    PairPotential lj = LennardJones{1.0};
    EXPECT_DOUBLE_EQ(lj.eval(1.0), -1.0);
    EXPECT_NEAR(lj.deriv(1.0), 0.0, 1e-15);
    EXPECT_NEAR(lj.deriv2(1.0), 72.0, 1e-12);
    PairPotential lj2 = LennardJones{1.125};
    EXPECT_NEAR(lj2.deriv2(1.125), 72.0 / (1.125 * 1.125), 1e-12);
    EXPECT_FALSE(lj.admissible(0.3));
    EXPECT_TRUE(lj.admissible(0.31));
}

TEST(Potential, DerivativesMatchFiniteDifferences) {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> zl(0.7, 3.0), par(0.5, 2.0);
    for (int t = 0; t < 200; ++t) {
        PairPotential phi = (t % 2) ? PairPotential(LennardJones{par(rng)}) : PairPotential(Harmonic{par(rng), par(rng)});
        double z = zl(rng) * (phi.lennard_jones() ? phi.lennard_jones()->l : 1.0);
        const double h = 1e-5 * std::max(1.0, std::abs(z));
        const double d1 = (phi.eval(z + h) - phi.eval(z - h)) / (2 * h);
        const double d2 = (phi.deriv(z + h) - phi.deriv(z - h)) / (2 * h);
        EXPECT_NEAR(d1, phi.deriv(z), 1e-6 * std::max(1.0, std::abs(phi.deriv(z))));
        EXPECT_NEAR(d2, phi.deriv2(z), 1e-6 * std::max(1.0, std::abs(phi.deriv2(z))));
    }
}

TEST(Model, EnergyExamples) {
    const int N = 2;
    auto f0 = LatticeFn1D(PeriodicGrid1D::over(N));
    auto m = AtomisticModel::periodic(N, {{Harmonic{1, 1}}, {Harmonic{2, 1}}}, f0);
    EXPECT_EQ(energy(m, LatticeFn1D(m.grid())), 0.0);
    LatticeFn1D u(m.grid(), {0, 0.25});
    EXPECT_NEAR(internal_energy(m, u), 0.1875, 1e-15);
    EXPECT_NEAR(energy(m, u), 0.1875, 1e-15);
}

TEST(Model, DomainViolationReported) {
    auto m = lj_chain(8, 0.0);
    LatticeFn1D u(m.grid());
    u.at(3) = 0.1;  // bond 2->3 stretched, 3->4 compressed to 0.2 atomic spacings
    try {
        energy(m, u);
        FAIL() << "expected DomainViolation";
    } catch (const DomainViolation& e) {
        EXPECT_EQ(e.site(), 3);
        EXPECT_EQ(e.range(), 1);
        EXPECT_NEAR(e.argument(), 1 - 0.8, 1e-12);
    }
}

TEST(Model, ResidualIsEnergyGradient) {
    std::mt19937_64 rng(2);
    for (int t = 0; t < 100; ++t) {
        const int N = 4 + static_cast<int>(rng() % 12);
        const bool lj = t % 2;
        auto m = random_model(rng, N, 1 + t % 3, lj);
        auto u = random_fn(rng, m.grid(), 0.02 * m.epsilon());
        auto v = random_fn(rng, m.grid());
        const double exact = inner(residual(m, u), v);
        double prev = 0;
        for (double h : {1e-4, 1e-5, 1e-6}) {
            const double hh = h * m.epsilon();
            const double fd = (energy(m, u + hh * v) - energy(m, u - hh * v)) / (2 * hh);
            const double err = std::abs(fd - exact);
            EXPECT_LE(err, 1e-5 * std::max(1.0, std::abs(exact)));
            if (h == 1e-5 && prev > 1e-9) {
                EXPECT_LT(err, prev);
            }
            prev = err;
        }
    }
}

TEST(Model, TangentMatchesResidualDifferences) {
    std::mt19937_64 rng(3);
    for (int t = 0; t < 100; ++t) {
        const int N = 4 + static_cast<int>(rng() % 12);
        auto m = random_model(rng, N, 1 + t % 3, t % 2);
        auto u = random_fn(rng, m.grid(), 0.02 * m.epsilon());
        auto w = random_fn(rng, m.grid());
        auto v = random_fn(rng, m.grid());
        const double h = 1e-6 * m.epsilon();
        auto fd = (residual(m, u + h * w) - residual(m, u - h * w)) * (1 / (2 * h));
        auto Tw = tangent_apply(m, u, w);
        const double scale = norm(Tw, Norm::linf());
        for (int i = 1; i <= N; ++i) EXPECT_NEAR(fd(i), Tw(i), 1e-5 * scale);
        // Symmetry and agreement with the assembled matrix.
        EXPECT_NEAR(inner(Tw, v), inner(tangent_apply(m, u, v), w), 1e-12 * scale * N);
        auto K = tangent_matrix(m, u);
        std::vector<double> y(N);
        K.multiply(w.values(), y);
        for (int i = 1; i <= N; ++i) EXPECT_NEAR(y[i - 1], Tw(i), 1e-10 * scale);
    }
}

TEST(Model, TangentAnnihilatesConstants) {
    auto m = linear_chain(16);
    std::mt19937_64 rng(4);
    auto u = random_fn(rng, m.grid(), 0.01);
    LatticeFn1D c(m.grid());
    c += 3.0;
    EXPECT_NEAR(norm(tangent_apply(m, u, c), Norm::linf()), 0.0, 1e-9);
    auto K1 = tangent_matrix(m, u), K2 = tangent_matrix(m, LatticeFn1D(m.grid()));
    for (int i = 0; i < 16; ++i)
        for (int j = 0; j < 16; ++j) EXPECT_EQ(K1(i, j), K2(i, j));
}

TEST(Model, TranslationInvariance) {
    std::mt19937_64 rng(5);
    auto m = lj_chain(32, 5.0);
    auto u = random_fn(rng, m.grid(), 0.1 * m.epsilon());
    auto v = u;
    v += 0.37;
    EXPECT_NEAR(energy(m, v), energy(m, u), 1e-12 * std::abs(energy(m, u)));
    auto r1 = residual(m, u), r2 = residual(m, v);
    for (int i = 1; i <= 32; ++i) EXPECT_NEAR(r1(i), r2(i), 1e-9);
}

TEST(Model, LinearNNStrongForm) {
    std::mt19937_64 rng(6);
    const int N = 12;
    auto g = PeriodicGrid1D::over(N);
    std::uniform_real_distribution<double> d(1, 2);
    auto psi = LatticeFn1D::sample(g, [&](double) { return d(rng); });
    auto f = project_zero_mean(random_fn(rng, g)).fn();
    auto m = linear_model({psi}, f);
    auto u = random_fn(rng, g);
    auto lhs = translate(residual(m, u), 1);
    auto rhs = -diff(product(psi, diff(u))) - translate(f, 1);
    for (int i = 1; i <= N; ++i) EXPECT_NEAR(lhs(i), rhs(i), 1e-10 * norm(rhs, Norm::linf()));
}

TEST(Model, SolveFullTrivial) {
    auto m = linear_chain(16).with_force(LatticeFn1D(PeriodicGrid1D::over(16)));
    auto sol = solve_full(m);
    EXPECT_EQ(norm(sol.u, Norm::linf()), 0.0);
}

TEST(Model, SolveFullQuadraticOneStep) {
    auto m = linear_chain(64);
    std::mt19937_64 rng(7);
    auto sol = solve_full(m, random_fn(rng, m.grid(), 0.1 * m.epsilon()));
    EXPECT_EQ(sol.iterations, 1);
    EXPECT_LE(sol.residual, 1e-10);
}

TEST(Model, SolveFullLinearMatchesDirectLinearSolve) {
    const int N = 256;
    auto m = linear_chain(N);
    auto sol = solve_full(m);
    EXPECT_LE(sol.iterations, 2);
    EXPECT_LE(norm(residual(m, sol.u), Norm::linf()), 1e-10);
    auto lin = linearize(m, LatticeFn1D(m.grid()));
    for (const auto& x : lin.xi) EXPECT_NEAR(norm(x, Norm::linf()), 0.0, 1e-14);
    // Independent dense oracle on the linear system.
    const double eps = m.epsilon();
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(N + 1, N + 1);
    for (int i = 0; i < N; ++i)
        for (int r = 1; r <= 3; ++r) {
            const double c = lin.psi[r - 1](i + 1) / (r * eps * r * eps);
            const int j = (i + r) % N;
            A(i, i) += c;
            A(j, j) += c;
            A(i, j) -= c;
            A(j, i) -= c;
        }
    A.block(0, N, N, 1).setOnes();
    A.block(N, 0, 1, N).setOnes();
    Eigen::VectorXd b = Eigen::VectorXd::Zero(N + 1);
    for (int i = 0; i < N; ++i) b(i) = m.force()(i + 1);
    Eigen::VectorXd x = A.fullPivLu().solve(b);
    for (int i = 0; i < N; ++i) EXPECT_NEAR(sol.u(i + 1), x(i), 1e-10 * x.head(N).cwiseAbs().maxCoeff());
}

TEST(Model, LinearizePsiAndPrestress) {
    auto m = lj_chain(16, 0.0);
    auto lin = linearize(m, LatticeFn1D(m.grid()));
    // psi_1 = phi''(1) for l=1 sites (i even): 72; check against finite differences of phi'.
    const double h = 1e-6;
    PairPotential lj = LennardJones{1.0};
    EXPECT_NEAR(lin.psi[0](2), (lj.deriv(1 + h) - lj.deriv(1 - h)) / (2 * h), 1e-5);
    EXPECT_NEAR(lin.psi[0](2), 72.0, 1e-12);
    // Second-neighbour bonds are stretched beyond the inflection point.
    EXPECT_LT(lin.psi[1](2), 0.0);
    // Harmonic bonds at rest: psi_r = r^2 k, xi = 0.
    auto ml = linear_chain(16);
    auto ll = linearize(ml, LatticeFn1D(ml.grid()));
    EXPECT_NEAR(ll.psi[1](1), 4.0 * 2.0 / 3.0, 1e-14);
    EXPECT_NEAR(ll.psi[2](2), 9.0 * 1.0 / 9.0, 1e-14);
}

TEST(Model, LinearizedProblemReproducesLinearizedNewtonStep) {
    std::mt19937_64 rng(8);
    for (int t = 0; t < 20; ++t) {
        auto m = lj_chain(32, 20.0);
        auto ubar = random_fn(rng, m.grid(), 0.05 * m.epsilon());
        auto lin = linearize(m, ubar);
        auto ulin = solve_linear(lin.psi, lin.f_eff);
        // Newton step from ubar solves the same linear problem.
        auto res = residual(m, ubar);
        std::vector<double> rhs(res.values().begin(), res.values().end());
        for (double& x : rhs) x = -x;
        remove_mean(rhs);
        auto step = ConstrainedCyclicSolver(tangent_matrix(m, ubar)).solve(rhs);
        auto unew = project_zero_mean(ubar + LatticeFn1D(m.grid(), step));
        for (int i = 1; i <= 32; ++i) EXPECT_NEAR(ulin(i), unew(i), 1e-10 * norm(unew, Norm::linf()));
        // And solving the harmonic model built from it agrees.
        auto harmonic = solve_full(linear_model(lin.psi, lin.f_eff));
        for (int i = 1; i <= 32; ++i) EXPECT_NEAR(harmonic.u(i), ulin(i), 1e-10 * norm(ulin, Norm::linf()));
    }
}

TEST(Model, SolveLinearNN) {
    std::mt19937_64 rng(9);
    const int N = 4;
    auto g = PeriodicGrid1D::over(N);
    std::uniform_real_distribution<double> d(0.5, 3);
    for (int t = 0; t < 20; ++t) {
        auto psi = LatticeFn1D::sample(g, [&](double) { return d(rng); });
        auto f = project_zero_mean(random_fn(rng, g)).fn();
        auto u = solve_linear_nn(psi, f);
        Eigen::MatrixXd A = Eigen::MatrixXd::Zero(N + 1, N + 1);
        for (int i = 0; i < N; ++i) {
            const double c = psi(i + 1) * N * N;
            const int j = (i + 1) % N;
            A(i, i) += c;
            A(j, j) += c;
            A(i, j) -= c;
            A(j, i) -= c;
            A(i, N) = A(N, i) = 1;
        }
        Eigen::VectorXd b = Eigen::VectorXd::Zero(N + 1);
        for (int i = 0; i < N; ++i) b(i) = f(i + 1);
        Eigen::VectorXd x = A.fullPivLu().solve(b);
        for (int i = 0; i < N; ++i) EXPECT_NEAR(u(i + 1), x(i), 1e-13);
    }
    LatticeFn1D zero(PeriodicGrid1D::over(8));
    LatticeFn1D one(PeriodicGrid1D::over(8));
    one += 1.0;
    EXPECT_EQ(norm(solve_linear_nn(one, zero), Norm::linf()), 0.0);
    auto bad = one;
    bad.at(3) = 0.0;
    EXPECT_THROW(solve_linear_nn(bad, zero), NonCoercive);
    EXPECT_THROW(solve_linear_nn(one, one), NonZeroMeanRhs);
}

TEST(Model, ConstantStiffnessScalesInverse) {
    auto g = PeriodicGrid1D::over(32);
    auto f = sine_force(32);
    LatticeFn1D k1(g), k3(g);
    k1 += 1.0;
    k3 += 3.0;
    auto u1 = solve_linear_nn(k1, f), u3 = solve_linear_nn(k3, f);
    for (int i = 1; i <= 32; ++i) EXPECT_NEAR(u3(i), u1(i) / 3, 1e-15);
}

TEST(Model, LennardJonesChainConverges) {
    auto m = lj_chain(1024, 50.0);
    auto sol = solve_full(m);
    EXPECT_LE(sol.iterations, 20);
    EXPECT_LE(norm(residual(m, sol.u), Norm::linf()), 1e-10 * 50);
    EXPECT_NEAR(average(sol.u.fn()), 0.0, 1e-16);
}
