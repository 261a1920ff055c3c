#include "hjblab/problem_models.hpp"
#include "hjblab/rng.hpp"

#include <gtest/gtest.h>

#include <Eigen/Eigenvalues>
#include <cmath>

using namespace hjblab;

namespace {

Vector random_vector(Eigen::Index n, std::uint64_t seed, double scale = 1.0) {
    Rng rng(seed);
    std::normal_distribution<double> normal(0.0, scale);
    Vector v(n);
    for (auto& e : v) e = normal(rng);
    return v;
}

}  // namespace

// -- Riccati ----------------------------------------------------------------

TEST(Riccati, PureControlCostReciprocalSolution) {
    // -P' = -P^2, P(1) = 1  =>  P(t) = 1 / (2 - t).
    RiccatiOracle o;
    o.q_state = 0.0;
    const auto sol = riccati_solve(o);
    for (double t : {0.0, 0.25, 0.5, 0.9, 1.0}) EXPECT_NEAR(sol.p_at(t), 1.0 / (2.0 - t), 1e-8) << t;
    EXPECT_NEAR(sol.p_at(0.0), 0.5, 1e-10);
    EXPECT_NEAR(sol.value(0.0, 2.0), 2.0, 1e-8);
}

TEST(Riccati, TanhSolutionAndNoiseOffset) {
    // q = r = 1, q_T = 0: P = tanh(T - t), offset = sigma^2 log cosh(T - t).
    RiccatiOracle o;
    o.q_terminal = 0.0;
    o.sigma0 = 0.7;
    o.horizon = 2.0;
    const auto sol = riccati_solve(o);
    for (double t : {0.0, 0.3, 1.1, 1.9}) {
        EXPECT_NEAR(sol.p_at(t), std::tanh(2.0 - t), 1e-8);
        EXPECT_NEAR(sol.offset_at(t), 0.49 * std::log(std::cosh(2.0 - t)), 1e-8);
        EXPECT_NEAR(sol.gain_at(t), -std::tanh(2.0 - t), 1e-8);
    }
}

TEST(Riccati, StationaryTerminalWeightStaysConstant) {
    RiccatiOracle o;
    o.a_lin = 0.3;
    o.alpha = 1.5;
    o.q_state = 2.0;
    o.r_control = 0.5;
    const double p_star = o.r_control * (o.a_lin + std::sqrt(o.a_lin * o.a_lin + o.alpha * o.alpha * o.q_state / o.r_control)) /
                          (o.alpha * o.alpha);
    o.q_terminal = p_star;
    const auto sol = riccati_solve(o);
    for (double t : {0.0, 0.5, 1.0}) EXPECT_NEAR(sol.p_at(t), p_star, 1e-10);
}

TEST(Riccati, MatrixSolverAgreesWithScalar) {
    RiccatiOracle o;
    o.a_lin = 0.3;
    o.sigma0 = 0.5;
    const auto [problem, oracle] = build_lq_benchmark(o);
    const auto scalar = riccati_solve(oracle);
    const auto matrix = riccati_solve_matrix(problem);
    for (double t : {0.0, 0.4, 0.8}) {
        EXPECT_NEAR(matrix.s_at(t)(0, 0), scalar.p_at(t), 1e-8);
        EXPECT_NEAR(matrix.offset_at(t), scalar.offset_at(t), 1e-8);
    }
}

TEST(Riccati, MatrixSolverDecouplesOnLaplacianModes) {
    // Linear RD: A + kI is diagonal in the sine basis, Q = hI, R = nu h I,
    // so each mode solves a scalar Riccati equation.
    ReactionDiffusionConfig cfg;
    cfg.n_grid = 6;
    cfg.reaction = ScalarReaction::linear(-0.5);
    const auto problem = build_reaction_diffusion(cfg);
    ASSERT_TRUE(problem.lq.has_value());
    const auto sol = riccati_solve_matrix(problem);

    const double h = 1.0 / (cfg.n_grid + 1);
    Eigen::SelfAdjointEigenSolver<Matrix> es(problem.op.matrix());
    Vector s_modes(cfg.n_grid);
    for (int k = 0; k < cfg.n_grid; ++k) {
        RiccatiOracle o;
        o.a_lin = es.eigenvalues()[k] - 0.5;
        o.alpha = 1.0;
        o.q_state = h;
        o.r_control = cfg.nu * h;
        o.q_terminal = h;
        s_modes[k] = riccati_solve(o).p_at(0.0);
    }
    const Matrix expect = es.eigenvectors() * s_modes.asDiagonal() * es.eigenvectors().transpose();
    EXPECT_LT((sol.s_at(0.0) - expect).cwiseAbs().maxCoeff(), 1e-7);
}

TEST(Riccati, RejectsBadData) {
    RiccatiOracle o;
    o.r_control = 0.0;
    EXPECT_THROW(riccati_solve(o), std::invalid_argument);
    EXPECT_THROW(riccati_solve(RiccatiOracle{}, std::vector<double>{0.0, 0.5}), std::invalid_argument);
}

// -- Control sets -----------------------------------------------------------

TEST(ControlSpec, ProjectionLandsInBallAndBox) {
    Box box{Vector::Constant(3, -1.0), Vector::Constant(3, 0.5)};
    const ControlSpec spec(Vector::Constant(3, 0.25), box);
    for (std::uint64_t k = 0; k < 200; ++k) {
        const Vector a = random_vector(3, k, 3.0);
        const Vector p = spec.project_truncated(a, 0.4);
        EXPECT_TRUE(spec.contains(p, 1e-9));
        EXPECT_LE(spec.norm(p), 0.4 + 1e-9);
        EXPECT_LT((spec.project_truncated(p, 0.4) - p).norm(), 1e-9);
    }
    const Vector inside = Vector::Constant(3, 0.1);
    EXPECT_EQ(spec.project_truncated(inside, 10.0), inside);
}

TEST(ControlSpec, ClipReportsWhetherItMoved) {
    const ControlSpec spec = ControlSpec::euclidean(2, Box{Vector::Constant(2, -1.0), Vector::Constant(2, 1.0)});
    Vector a(2);
    a << 0.5, -0.2;
    EXPECT_FALSE(spec.clip(a));
    a << 2.0, -0.2;
    EXPECT_TRUE(spec.clip(a));
    EXPECT_DOUBLE_EQ(a[0], 1.0);
    EXPECT_THROW(ControlSpec(Vector::Ones(1), std::nullopt, 2.0), std::invalid_argument);
}

// -- Scalar reactions -------------------------------------------------------

TEST(ScalarReaction, DerivativesMatchFiniteDifferences) {
    for (const auto& f : {ScalarReaction::linear(-0.7), ScalarReaction::clipped_cubic(1.5),
                          ScalarReaction::neg_softplus(), ScalarReaction::zero()}) {
        for (double r = -3.0; r <= 3.0; r += 0.173) {
            const double fd = (f.f(r + 1e-6) - f.f(r - 1e-6)) / 2e-6;
            EXPECT_NEAR(f.df(r), fd, 1e-5) << f.name << " r=" << r;
            if (f.derivative_bound) EXPECT_LE(std::abs(f.df(r)), *f.derivative_bound + 1e-12);
        }
    }
}

TEST(ScalarReaction, NegSoftplusIsConcave) {
    EXPECT_TRUE(is_concave_on_grid(ScalarReaction::neg_softplus().f, -10.0, 10.0, 401));
    EXPECT_FALSE(is_concave_on_grid([](double r) { return r * r; }, -1.0, 1.0, 21));
}

TEST(ScalarReaction, ClippedCubicContinuousDerivativeAtKnots) {
    const auto f = ScalarReaction::clipped_cubic(1.2);
    for (double knot : {-1.2, 1.2}) EXPECT_NEAR(f.df(knot - 1e-9), f.df(knot + 1e-9), 1e-6);
    EXPECT_NEAR(f.f(0.5), -0.125, 1e-15);
}

// -- Builders and audits ----------------------------------------------------

TEST(Builders, LqIsLinearConvex) {
    const auto problem = build_lq_problem(RiccatiOracle{});
    EXPECT_NO_THROW(problem.validate());
    EXPECT_TRUE(audit_linear_convex(problem, 200, 2.0, 5).passed());
    EXPECT_TRUE(audit_lipschitz(problem, 200, 2.0, 5).passed());
}

TEST(Builders, CubicReactionDiffusionIsNotAffine) {
    ReactionDiffusionConfig cfg;
    cfg.reaction = ScalarReaction::clipped_cubic(2.0);
    const auto problem = build_reaction_diffusion(cfg);
    EXPECT_NO_THROW(problem.validate());
    EXPECT_FALSE(audit_linear_convex(problem, 200, 1.0, 5).passed());
    EXPECT_TRUE(audit_lipschitz(problem, 200, 1.0, 5).passed());
}

TEST(Builders, SddeLiftDriftAndLipschitz) {
    SddeConfig cfg;
    cfg.beta = 0.5;
    cfg.sigma_z = 0.2;
    const auto lift = build_sdde_lift(cfg);
    EXPECT_NO_THROW(lift.problem.validate());
    EXPECT_FALSE(lift.problem.lq.has_value());
    EXPECT_TRUE(audit_lipschitz(lift.problem, 200, 1.0, 9).passed());

    // b(x, a) + A x on the present block reproduces b0(y, z, a).
    const Vector x = random_vector(static_cast<Eigen::Index>(lift.problem.dim()), 3);
    const Vector a = Vector::Constant(1, 0.4);
    const double y = x[0], z = lift.kernel_integral(x, 1);
    const double softplus = std::log1p(std::exp(y)) - std::log(2.0);
    const double b0 = cfg.k_y * y + cfg.k_z * z + cfg.beta * softplus - 0.4;
    const Vector full = lift.problem.drift_at(x, a) + lift.problem.op.matrix() * x;
    EXPECT_NEAR(full[0], b0, 1e-12);
}

TEST(Builders, SddeKernelIntegralBoundedByMinusOneNorm) {
    // |<e, x>_H| <= ||A^* e||_H ||A^{-1} x||_H with A^* = W^{-1} A^T W.
    const auto lift = build_sdde_lift(SddeConfig{});
    const auto& p = lift.problem;
    const auto n = static_cast<Eigen::Index>(p.dim());
    const Vector w = p.space.weights();
    for (int which : {1, 2}) {
        const Vector& k = which == 1 ? lift.eta1_weights : lift.eta2_weights;
        Vector e = Vector::Zero(n);
        e.tail(k.size()) = k.cwiseQuotient(w.tail(k.size()));
        const Vector adj = w.cwiseInverse().asDiagonal() * (p.op.matrix().transpose() * (w.asDiagonal() * e));
        const double c = p.space.norm(adj);
        double sampled = 0.0;
        for (std::uint64_t s = 0; s < 1000; ++s) {
            const Vector x = random_vector(n, 500 + s);
            const double lhs = std::abs(lift.kernel_integral(x, which));
            const double rhs = b_norm(p.b_op, x);
            EXPECT_LE(lhs, c * rhs * (1.0 + 1e-10));
            sampled = std::max(sampled, lhs / rhs);
        }
        EXPECT_GT(sampled, 0.0);
    }
}

TEST(Builders, SddeLinearCaseCarriesLqData) {
    const auto lift = build_sdde_lift(SddeConfig{});
    ASSERT_TRUE(lift.problem.lq.has_value());
    const auto sol = riccati_solve_matrix(lift.problem);
    const Matrix s = sol.s_at(0.0);
    EXPECT_LT((s - s.transpose()).cwiseAbs().maxCoeff(), 1e-10);
    Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (s + s.transpose()));
    EXPECT_GE(es.eigenvalues().minCoeff(), -1e-10);
}

TEST(Builders, ValidationCatchesMissingCostFloor) {
    auto problem = build_lq_problem(RiccatiOracle{});
    problem.cost_floor = -std::numeric_limits<double>::infinity();
    EXPECT_THROW(problem.validate(), std::invalid_argument);
}
