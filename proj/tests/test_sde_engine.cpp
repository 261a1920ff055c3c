#include "hjblab/parallel.hpp"
#include "hjblab/rng.hpp"
#include "hjblab/sde_engine.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

using namespace hjblab;

namespace {

ControlProblem ou_problem(double a_lin, double sigma0, double horizon = 1.0) {
    RiccatiOracle o;
    o.a_lin = a_lin;
    o.sigma0 = sigma0;
    o.horizon = horizon;
    return build_lq_problem(o);
}

const ControlSignal kZero = ControlSignal::zero(1);

}  // namespace

TEST(Engine, OrnsteinUhlenbeckMeanAndVariance) {
    const auto problem = ou_problem(-1.0, 1.0);
    const std::size_t n = 10000;
    const Vector x = Vector::Constant(1, 0.8);
    std::vector<double> xt(n);
    const TimeGrid grid(0.0, 1.0, 200);
    parallel::parallel_for(n, [&](std::size_t i) {
        run_coupled(problem, grid, {x}, {open_loop(kZero)}, 11, i, [&](const StepView& v) { xt[i] = v.after[0][0]; });
    });
    double mean = 0.0;
    for (double v : xt) mean += v;
    mean /= n;
    std::vector<double> sq(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sq[i] = (xt[i] - mean) * (xt[i] - mean);
        var += sq[i];
    }
    var /= n;
    double var_of_sq = 0.0;
    for (double s : sq) var_of_sq += (s - var) * (s - var);
    const double se_var = std::sqrt(var_of_sq / n / n);
    const double se_mean = std::sqrt(var / n);

    EXPECT_NEAR(mean, 0.8 * std::exp(-1.0), 3.0 * se_mean);
    EXPECT_NEAR(var, (1.0 - std::exp(-2.0)) / 2.0, 3.0 * se_var);
}

TEST(Engine, LinearDriftSameControlDifferenceIsDeterministic) {
    // Additive noise cancels; the difference solves y' = a y.
    const auto problem = ou_problem(0.7, 0.5);
    const Vector x0 = Vector::Constant(1, 0.2), x1 = Vector::Constant(1, 0.5);
    const auto set = simulate_coupled(problem, 0.0, {x0, x1}, {kZero, kZero}, 5, 1000, 3);
    for (std::size_t k = 0; k <= 1000; k += 100) {
        const double s = set.members[0].grid.time(k);
        const double diff = set.members[1].states[k][0] - set.members[0].states[k][0];
        EXPECT_NEAR(diff, 0.3 * std::exp(0.7 * s), 2e-3 * 0.3 * std::exp(0.7 * s)) << s;
    }
}

TEST(Engine, SamePathIndexReplaysBitwise) {
    const auto problem = ou_problem(-0.5, 1.0);
    const Vector x = Vector::Constant(1, 1.0);
    const auto a = simulate_path(problem, 0.0, x, kZero, 99, 50, 4);
    const auto b = simulate_path(problem, 0.0, x, kZero, 99, 50, 4);
    const auto c = simulate_path(problem, 0.0, x, kZero, 99, 50, 5);
    for (std::size_t k = 0; k <= 50; ++k) EXPECT_EQ(a.states[k][0], b.states[k][0]);
    EXPECT_NE(a.states[50][0], c.states[50][0]);
    EXPECT_EQ(a.path_seed, derive_seed(99, streams::paths, 4));
}

TEST(Engine, EnsembleIndependentOfJobs) {
    const auto problem = ou_problem(-0.5, 1.0);
    const Vector x = Vector::Constant(1, 1.0);
    parallel::set_jobs(1);
    const auto a = simulate_ensemble(problem, 0.0, x, kZero, 64, 7, 40);
    parallel::set_jobs(8);
    const auto b = simulate_ensemble(problem, 0.0, x, kZero, 64, 7, 40);
    parallel::set_jobs(1);
    for (std::size_t i = 0; i < 64; ++i) EXPECT_EQ(a.trajectories[i].states.back()[0], b.trajectories[i].states.back()[0]);
}

TEST(Engine, HeatEquationWithoutNoiseIsTheSemigroup) {
    ReactionDiffusionConfig cfg;
    cfg.n_grid = 10;
    cfg.noise_scale = 0.0;
    cfg.reaction = ScalarReaction::zero();
    const auto problem = build_reaction_diffusion(cfg);
    Vector x(10);
    for (int i = 0; i < 10; ++i) x[i] = std::sin(0.3 * i) + 1.0;
    const auto traj = simulate_path(problem, 0.0, x, ControlSignal::zero(problem.control.dim()), 1, 64);
    const Vector expect = semigroup_apply(problem.op, 1.0, x);
    EXPECT_LT((traj.states.back() - expect).cwiseAbs().maxCoeff(), 1e-10);
}

TEST(Engine, DivergenceNamesStepAndPath) {
    const auto problem = ou_problem(3000.0, 0.0);
    try {
        simulate_path(problem, 0.0, Vector::Constant(1, 1.0), kZero, 1, 100, 7);
        FAIL() << "expected divergence";
    } catch (const SimulationDivergence& e) {
        EXPECT_EQ(e.path(), 7u);
        EXPECT_GT(e.step(), 0u);
        EXPECT_NE(std::string(e.what()).find("path 7"), std::string::npos);
    }
}

TEST(Engine, RejectsStartAtHorizon) {
    const auto problem = ou_problem(0.0, 1.0);
    EXPECT_THROW(simulate_path(problem, 1.0, Vector::Constant(1, 1.0), kZero, 1, 10), std::invalid_argument);
}

TEST(Engine, TrajectoryCsvLayout) {
    const auto problem = ou_problem(0.0, 1.0);
    const auto traj = simulate_path(problem, 0.0, Vector::Constant(1, 1.0), kZero, 1, 4, 2);
    std::ostringstream os;
    write_trajectory_csv(os, {traj});
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "path_id,step,time,x0");
    int rows = 0;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, 5);
}

TEST(Moments, DoublingStateScalesAtMostByPowerOfTwo) {
    const auto problem = ou_problem(0.3, 0.0);
    const double p = 3.0;
    const auto m1 = sup_moment(problem, 0.0, Vector::Constant(1, 1.0), kZero, p, 200, 100, 3);
    const auto m2 = sup_moment(problem, 0.0, Vector::Constant(1, 2.0), kZero, p, 200, 100, 3);
    EXPECT_LE(m2.sup_moment, std::pow(2.0, p) * m1.sup_moment * (1.0 + 1e-9));
}

TEST(Moments, OuEstimateStableAcrossSeeds) {
    const auto problem = ou_problem(-1.0, 1.0);
    const Vector x = Vector::Constant(1, 0.5);
    const auto a = sup_moment(problem, 0.0, x, kZero, 3.0, 1000, 100, 1);
    const auto b = sup_moment(problem, 0.0, x, kZero, 3.0, 1000, 100, 2);
    EXPECT_TRUE(std::isfinite(a.sup_moment));
    EXPECT_NEAR(a.sup_moment, b.sup_moment, 0.1 * a.sup_moment);
}

TEST(Moments, CalibratedConstantHoldsAtFreshPoints) {
    const auto problem = ou_problem(-0.5, 1.0);
    const double p = problem.control.p_integrability();
    const auto control = ControlSignal::constant(Vector::Constant(1, 0.5));
    const std::vector<Vector> calib{Vector::Constant(1, 0.0), Vector::Constant(1, 1.0), Vector::Constant(1, -2.0)};
    const double c = calibrate_moment_constant(problem, 0.0, calib, control, p, 500, 100, 4);
    for (double x : {0.5, -1.5, 3.0}) {
        EXPECT_TRUE(moment_bound_check(problem, 0.0, Vector::Constant(1, x), control, p, c, 500, 100, 5).passed()) << x;
    }
    EXPECT_THROW(moment_bound_check(problem, 0.0, calib[0], control, 2.5, c, 10, 10, 5), std::invalid_argument);
}
