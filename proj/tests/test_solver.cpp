#include <gtest/gtest.h>

#include <random>

#include "hqc/solver.hpp"

using namespace hqc;

namespace {

// Independent oracle: dense bordered system with a Lagrange multiplier for the mean.
Eigen::VectorXd dense_constrained(const Eigen::MatrixXd& A, const Eigen::VectorXd& b) {
    const int n = static_cast<int>(A.rows());
    Eigen::MatrixXd M = Eigen::MatrixXd::Zero(n + 1, n + 1);
    M.topLeftCorner(n, n) = A;
    M.block(0, n, n, 1).setOnes();
    M.block(n, 0, 1, n).setOnes();
    Eigen::VectorXd r = Eigen::VectorXd::Zero(n + 1);
    r.head(n) = b;
    return M.fullPivLu().solve(r).head(n);
}

// Random spring network on a ring: sum of positive bond stiffnesses of range 1..b.
CyclicBandedMatrix random_ring(std::mt19937_64& rng, int n, int b) {
    std::uniform_real_distribution<double> d(0.5, 2.0);
    CyclicBandedMatrix A(n, b);
    for (int i = 0; i < n; ++i)
        for (int r = 1; r <= b; ++r) {
            if (r % n == 0) continue;
            const double c = d(rng);
            A.add(i, i, c);
            A.add(i + r, i + r, c);
            A.add(i, i + r, -c);
        }
    return A;
}

std::vector<double> random_zero_mean(std::mt19937_64& rng, int n) {
    std::uniform_real_distribution<double> d(-1, 1);
    std::vector<double> b(n);
    for (double& x : b) x = d(rng);
    remove_mean(b);
    return b;
}

}  // namespace

TEST(Solver, LaplacianN4) {
    CyclicBandedMatrix A(4, 1);
    for (int i = 0; i < 4; ++i) {
        A.add(i, i, 2);
        A.add(i, i + 1, -1);
    }
    std::vector<double> b = {1, -1, 1, -1};
    auto x = solve_constrained_direct(A, b);
    auto ref = dense_constrained(A.to_dense(), Eigen::Map<Eigen::VectorXd>(b.data(), 4));
    for (int i = 0; i < 4; ++i) EXPECT_NEAR(x[i], ref(i), 1e-14);
    EXPECT_NEAR(x[0], 0.25, 1e-14);
}

TEST(Solver, ZeroRhs) {
    std::mt19937_64 rng(1);
    auto A = random_ring(rng, 10, 2);
    std::vector<double> b(10, 0.0);
    for (double x : solve_constrained_direct(A, b)) EXPECT_EQ(x, 0.0);
}

TEST(Solver, RejectsNonZeroMean) {
    std::mt19937_64 rng(1);
    auto A = random_ring(rng, 10, 1);
    std::vector<double> b(10, 1.0);
    EXPECT_THROW(solve_constrained_direct(A, b), NonZeroMeanRhs);
}

TEST(Solver, SingularDetected) {
    CyclicBandedMatrix A(8, 1);  // disconnected: only even bonds present
    for (int i = 0; i < 8; i += 2) {
        A.add(i, i, 1);
        A.add(i + 1, i + 1, 1);
        A.add(i, i + 1, -1);
    }
    std::vector<double> b = {1, -1, 0, 0, 0, 0, 0, 0};
    EXPECT_THROW(solve_constrained_direct(A, b), SingularSystem);
}

TEST(Solver, DirectMatchesDenseOracle) {
    std::mt19937_64 rng(2);
    for (int b : {1, 2, 3})
        for (int n : {1, 2, 3, 4, 5, 6, 7, 9, 16, 33}) {
            auto A = random_ring(rng, n, b);
            auto rhs = random_zero_mean(rng, n);
            if (n == 1) rhs = {0.0};
            auto x = solve_constrained_direct(A, rhs);
            auto ref = dense_constrained(A.to_dense(), Eigen::Map<Eigen::VectorXd>(rhs.data(), n));
            double mean = 0;
            for (int i = 0; i < n; ++i) {
                EXPECT_NEAR(x[i], ref(i), 1e-12 * (1 + ref.cwiseAbs().maxCoeff())) << "n=" << n << " b=" << b;
                mean += x[i];
            }
            EXPECT_NEAR(mean / n, 0.0, 1e-15);
        }
}

TEST(Solver, MultiplyMatchesDense) {
    std::mt19937_64 rng(3);
    for (int n : {3, 7, 12}) {
        auto A = random_ring(rng, n, 2);
        auto x = random_zero_mean(rng, n);
        std::vector<double> y(n);
        A.multiply(x, y);
        Eigen::VectorXd ref = A.to_dense() * Eigen::Map<Eigen::VectorXd>(x.data(), n);
        for (int i = 0; i < n; ++i) EXPECT_NEAR(y[i], ref(i), 1e-13);
    }
}

TEST(Solver, CgIdentityPlusProjection) {
    LinearOperator op{5, [](std::span<const double> x, std::span<double> y) { std::copy(x.begin(), x.end(), y.begin()); }, {}};
    std::vector<double> b = {1, 2, -3, 0, 0};
    auto res = solve_constrained_cg(op, b, 1e-12);
    EXPECT_LE(res.iterations, 2);
    for (int i = 0; i < 5; ++i) EXPECT_NEAR(res.x[i], b[i], 1e-14);
}

TEST(Solver, CgMatchesDirect) {
    std::mt19937_64 rng(4);
    for (int n : {5, 20, 64}) {
        auto A = random_ring(rng, n, 3);
        auto rhs = random_zero_mean(rng, n);
        std::vector<double> diag(n);
        for (int i = 0; i < n; ++i) diag[i] = A(i, i);
        LinearOperator op{n, [&A](std::span<const double> x, std::span<double> y) { A.multiply(x, y); }, diag};
        const double tol = 1e-12;
        auto cg = solve_constrained_cg(op, rhs, tol);
        auto direct = solve_constrained_direct(A, rhs);
        double scale = 0;
        for (double v : direct) scale = std::max(scale, std::abs(v));
        for (int i = 0; i < n; ++i) EXPECT_NEAR(cg.x[i], direct[i], 1e3 * tol * scale);
    }
}

TEST(Solver, Cg2dLaplacian) {
    const int m = 8, n = m * m;
    auto id = [m](int a, int b) { return ((a + m) % m) * m + (b + m) % m; };
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(n, n);
    for (int a = 0; a < m; ++a)
        for (int b = 0; b < m; ++b) {
            for (auto [da, db] : {std::pair{1, 0}, std::pair{0, 1}}) {
                const int i = id(a, b), j = id(a + da, b + db);
                A(i, i) += 1;
                A(j, j) += 1;
                A(i, j) -= 1;
                A(j, i) -= 1;
            }
        }
    std::mt19937_64 rng(5);
    auto rhs = random_zero_mean(rng, n);
    LinearOperator op{n, [&A, n](std::span<const double> x, std::span<double> y) {
                          Eigen::Map<Eigen::VectorXd>(y.data(), n) = A * Eigen::Map<const Eigen::VectorXd>(x.data(), n);
                      }, {}};
    auto cg = solve_constrained_cg(op, rhs, 1e-12);
    auto ref = dense_constrained(A, Eigen::Map<Eigen::VectorXd>(rhs.data(), n));
    for (int i = 0; i < n; ++i) EXPECT_NEAR(cg.x[i], ref(i), 1e-10);
}

TEST(Solver, CgReportsNonConvergence) {
    std::mt19937_64 rng(6);
    auto A = random_ring(rng, 50, 1);
    auto rhs = random_zero_mean(rng, 50);
    LinearOperator op{50, [&A](std::span<const double> x, std::span<double> y) { A.multiply(x, y); }, {}};
    EXPECT_THROW(solve_constrained_cg(op, rhs, 1e-14, 2), NoConvergence);
}
