#include "hjblab/hilbert_core.hpp"
#include "hjblab/rng.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>
#include <numbers>

using namespace hjblab;

namespace {

Vector random_vector(std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::normal_distribution<double> normal;
    Vector v(static_cast<Eigen::Index>(n));
    for (auto& e : v) e = normal(rng);
    return v;
}

}  // namespace

TEST(Laplacian, SpectrumMatchesClosedForm) {
    for (int n : {1, 5, 16}) {
        const auto op = make_dirichlet_laplacian(n, 1.0, 1.0);
        const double h = 1.0 / (n + 1);
        Eigen::SelfAdjointEigenSolver<Matrix> es(op.matrix());
        std::vector<double> expect;
        for (int k = 1; k <= n; ++k) {
            const double s = std::sin(k * std::numbers::pi / (2.0 * (n + 1)));
            expect.push_back(-(4.0 / (h * h)) * s * s);
        }
        std::sort(expect.begin(), expect.end());
        for (int k = 0; k < n; ++k) EXPECT_NEAR(es.eigenvalues()[k], expect[k], 1e-10) << "n=" << n << " k=" << k;
    }
}

TEST(Laplacian, SemigroupOnFirstEigenvector) {
    const int n = 12;
    const auto op = make_dirichlet_laplacian(n, 1.0, 0.1);
    const double h = 1.0 / (n + 1);
    Vector v(n);
    for (int i = 0; i < n; ++i) v[i] = std::sin(std::numbers::pi * (i + 1) * h);
    const double s = std::sin(std::numbers::pi / (2.0 * (n + 1)));
    const double mu = -0.1 * (4.0 / (h * h)) * s * s;
    for (double dt : {1e-3, 0.1, 1.0}) {
        const Vector got = semigroup_apply(op, dt, v);
        EXPECT_LT((got - std::exp(dt * mu) * v).cwiseAbs().maxCoeff(), 1e-8);
    }
}

TEST(Laplacian, ExponentialIsCachedPerStep) {
    const auto op = make_dirichlet_laplacian(4, 1.0, 1.0);
    const Matrix* a = &op.exponential(0.01);
    const auto copy = op;
    EXPECT_EQ(a, &copy.exponential(0.01));
}

TEST(DelayGenerator, HandAssembledThreeByThree) {
    const auto lift = make_delay_generator(1, 1.0, 2);
    Matrix expect(3, 3);
    expect << -1, 0, 0, 0, -2, 2, 2, 0, -2;
    EXPECT_EQ(lift.op.matrix(), expect);
    EXPECT_DOUBLE_EQ(lift.h, 0.5);
}

TEST(DelayGenerator, TransportsThePastBlock) {
    // x1(s, xi) = phi(xi + s) while xi + s < 0 (method of characteristics).
    auto phi = [](double xi) { return 1.0 + std::sin(2.0 * xi); };
    const double s = 0.3;
    double previous = 0.0;
    for (int n_past : {32, 64, 128}) {
        const auto lift = make_delay_generator(1, 1.0, n_past);
        Vector x(n_past + 1);
        x[0] = phi(0.0);
        for (int j = 0; j < n_past; ++j) x[1 + j] = phi(lift.past_nodes[j]);
        const Vector y = semigroup_apply(lift.op, s, x);
        double err = 0.0;
        for (int j = 0; j < n_past; ++j) {
            const double xi = lift.past_nodes[j];
            if (xi + s < -0.2) err = std::max(err, std::abs(y[1 + j] - phi(xi + s)));
        }
        EXPECT_LT(err, 3.0 * lift.h) << "n_past=" << n_past;
        if (previous > 0.0) EXPECT_LT(err, 0.75 * previous);
        previous = err;
    }
}

TEST(BOperator, MinusOneNormOfDelayLiftIsInverseSolve) {
    const auto lift = make_delay_generator(1, 1.0, 8);
    const auto b = BOperatorSpec::inverse_gram(lift.space, lift.op, 0.0, BMode::weak);
    for (std::uint64_t k = 0; k < 20; ++k) {
        const Vector x = random_vector(lift.space.dim(), k);
        const Vector y = lift.op.matrix().colPivHouseholderQr().solve(x);
        EXPECT_NEAR(b_norm(b, x), lift.space.norm(y), 1e-10 * (1.0 + lift.space.norm(y)));
    }
}

TEST(BOperator, PresentComponentBoundedByMinusOneNorm) {
    const auto lift = make_delay_generator(1, 1.0, 16);
    const auto b = BOperatorSpec::inverse_gram(lift.space, lift.op, 0.0, BMode::weak);
    for (std::uint64_t k = 0; k < 1000; ++k) {
        const Vector x = random_vector(lift.space.dim(), 100 + k);
        EXPECT_LE(std::abs(x[0]), b_norm(b, x) * (1.0 + 1e-12));
    }
}

TEST(BOperator, RejectsNonSelfAdjoint) {
    const auto space = SpaceSpec::euclidean(2);
    Matrix m(2, 2);
    m << 2, 1, 0, 2;
    EXPECT_THROW(BOperatorSpec(space, m, 1.0, BMode::strong), std::invalid_argument);
}

TEST(BCondition, ZeroGeneratorIdentityStrong) {
    const auto space = SpaceSpec::euclidean(3);
    const auto r = check_b_condition(DiscreteOperator::zero(3), BOperatorSpec::identity(space, 1.0, BMode::strong));
    EXPECT_TRUE(r.passed());
    EXPECT_NEAR(r.estimate("min_eigenvalue"), 0.0, 1e-12);
}

TEST(BCondition, DelayInverseGramWeak) {
    for (int n_past : {4, 16, 32}) {
        const auto lift = make_delay_generator(1, 1.0, n_past);
        const auto b = BOperatorSpec::inverse_gram(lift.space, lift.op, 0.0, BMode::weak);
        EXPECT_TRUE(check_b_condition(lift.op, b).passed()) << n_past;
    }
}

TEST(BCondition, StrongFailsWithoutShift) {
    // A = 0, B = I, c0 = 0: -A*B + c0 B = 0 is not >= I.
    const auto space = SpaceSpec::euclidean(2);
    const auto r = check_b_condition(DiscreteOperator::zero(2), BOperatorSpec::identity(space, 0.0, BMode::strong));
    EXPECT_FALSE(r.passed());
}

TEST(Positivity, LaplacianAcrossSteps) {
    const auto op = make_dirichlet_laplacian(10, 1.0, 1.0);
    EXPECT_TRUE(check_positivity_preserving(op, {1e-3, 1e-2, 1e-1}, 100, 3).passed());
    // Independent check: symmetric eigendecomposition of the exponential.
    Eigen::SelfAdjointEigenSolver<Matrix> es(op.matrix());
    for (double dt : {1e-3, 1e-2, 1e-1}) {
        const Matrix e = es.eigenvectors() * (dt * es.eigenvalues()).array().exp().matrix().asDiagonal() *
                         es.eigenvectors().transpose();
        EXPECT_GE(e.minCoeff(), -1e-14);
        EXPECT_LT((e - op.exponential(dt)).cwiseAbs().maxCoeff(), 1e-10);
    }
}

TEST(Positivity, NegativeOffDiagonalFails) {
    Matrix m = make_dirichlet_laplacian(6, 1.0, 1.0).matrix();
    m(0, 3) = -1.0;
    const auto op = DiscreteOperator::custom(m);
    EXPECT_FALSE(check_positivity_preserving(op, {1e-3}, 100, 3).passed());
}

TEST(SpaceSpec, WeightedNormProperties) {
    const auto space = dirichlet_space(9, 2.0);
    for (std::uint64_t k = 0; k < 50; ++k) {
        const Vector x = random_vector(9, k), y = random_vector(9, 1000 + k);
        EXPECT_NEAR(space.norm(-2.5 * x), 2.5 * space.norm(x), 1e-12);
        EXPECT_LE(space.norm(x + y), space.norm(x) + space.norm(y) + 1e-12);
        EXPECT_NEAR(space.inner(x, x), space.norm(x) * space.norm(x), 1e-12);
    }
    EXPECT_THROW(SpaceSpec(Vector::Constant(2, -1.0)), std::invalid_argument);
}
