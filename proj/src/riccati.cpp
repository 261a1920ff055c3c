#include "hjblab/problem_models.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hjblab {

namespace {

double interpolate(const std::vector<double>& times, const std::vector<double>& values, double t) {
    if (t <= times.front()) return values.front();
    if (t >= times.back()) return values.back();
    auto it = std::upper_bound(times.begin(), times.end(), t);
    const auto i = static_cast<std::size_t>(it - times.begin());
    const double w = (t - times[i - 1]) / (times[i] - times[i - 1]);
    return (1.0 - w) * values[i - 1] + w * values[i];
}

}  // namespace

double RiccatiSolution::p_at(double t) const { return interpolate(times, p, t); }
double RiccatiSolution::offset_at(double t) const { return interpolate(times, offset, t); }
double RiccatiSolution::gain_at(double t) const { return interpolate(times, gain, t); }

RiccatiSolution riccati_solve(const RiccatiOracle& o, const std::vector<double>& grid) {
    o.validate();
    if (grid.size() < 2) throw std::invalid_argument("riccati_solve: time grid needs two nodes");
    for (std::size_t i = 1; i < grid.size(); ++i) {
        if (!(grid[i] > grid[i - 1])) throw std::invalid_argument("riccati_solve: time grid must increase");
    }
    if (std::abs(grid.back() - o.horizon) > 1e-12 * std::max(1.0, o.horizon)) {
        throw std::invalid_argument("riccati_solve: time grid must end at the horizon");
    }

    const double beta = o.alpha * o.alpha / o.r_control;
    // Backward time tau = T - t: dP/dtau = q + 2aP - beta P^2, drho/dtau = sigma0^2 P.
    auto fp = [&](double p) { return o.q_state + 2.0 * o.a_lin * p - beta * p * p; };
    const double s2 = o.sigma0 * o.sigma0;

    const std::size_t n = grid.size();
    RiccatiSolution sol;
    sol.times = grid;
    sol.p.assign(n, 0.0);
    sol.offset.assign(n, 0.0);
    sol.gain.assign(n, 0.0);
    sol.p[n - 1] = o.q_terminal;
    for (std::size_t i = n - 1; i > 0; --i) {
        const double dt = grid[i] - grid[i - 1];
        const double p0 = sol.p[i];
        const double k1 = fp(p0);
        const double k2 = fp(p0 + 0.5 * dt * k1);
        const double k3 = fp(p0 + 0.5 * dt * k2);
        const double k4 = fp(p0 + dt * k3);
        const double p1 = p0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!std::isfinite(p1) || std::abs(p1) > 1e12) {
            throw FiniteEscapeError("riccati_solve: P escapes to infinity near t = " + std::to_string(grid[i - 1]));
        }
        // rho' is linear in the stage values of P.
        const double r1 = s2 * p0;
        const double r2 = s2 * (p0 + 0.5 * dt * k1);
        const double r3 = s2 * (p0 + 0.5 * dt * k2);
        const double r4 = s2 * (p0 + dt * k3);
        sol.p[i - 1] = p1;
        sol.offset[i - 1] = sol.offset[i] + dt / 6.0 * (r1 + 2.0 * r2 + 2.0 * r3 + r4);
    }
    for (std::size_t i = 0; i < n; ++i) sol.gain[i] = -o.alpha * sol.p[i] / o.r_control;
    return sol;
}

RiccatiSolution riccati_solve(const RiccatiOracle& oracle, int n_steps) {
    if (n_steps < 1) throw std::invalid_argument("riccati_solve: n_steps must be positive");
    std::vector<double> grid(static_cast<std::size_t>(n_steps) + 1);
    for (int i = 0; i <= n_steps; ++i) grid[static_cast<std::size_t>(i)] = oracle.horizon * i / n_steps;
    grid.back() = oracle.horizon;
    return riccati_solve(oracle, grid);
}

Matrix MatrixRiccatiSolution::s_at(double t) const {
    if (t <= times.front()) return s.front();
    if (t >= times.back()) return s.back();
    auto it = std::upper_bound(times.begin(), times.end(), t);
    const auto i = static_cast<std::size_t>(it - times.begin());
    const double w = (t - times[i - 1]) / (times[i] - times[i - 1]);
    return (1.0 - w) * s[i - 1] + w * s[i];
}

double MatrixRiccatiSolution::offset_at(double t) const { return interpolate(times, offset, t); }

Vector MatrixRiccatiSolution::h_gradient(const SpaceSpec& space, double t, const Vector& x) const {
    return space.weights().cwiseInverse().asDiagonal() * (2.0 * (s_at(t) * x));
}

MatrixRiccatiSolution riccati_solve_matrix(const ControlProblem& problem, int n_steps) {
    if (!problem.lq) throw std::invalid_argument("riccati_solve_matrix: problem '" + problem.name + "' is not LQ");
    const auto& lq = *problem.lq;
    const Matrix a = problem.op.matrix() + lq.drift_linear;
    const Matrix g = lq.coupling * lq.r.ldlt().solve(lq.coupling.transpose());
    const Matrix sst = lq.sigma * lq.sigma.transpose();
    const double horizon = problem.horizon;

    // RK4 stability on the Lyapunov part needs dt * 2 ||A|| well inside 2.78.
    const double a_norm = a.cwiseAbs().rowwise().sum().maxCoeff();
    const int needed = static_cast<int>(std::ceil(horizon * 2.0 * a_norm / 0.5));
    const int steps = std::max(n_steps, needed);

    auto f = [&](const Matrix& s) -> Matrix {
        Matrix d = a.transpose() * s + s * a + lq.q - s * g * s;
        return 0.5 * (d + d.transpose());
    };

    MatrixRiccatiSolution sol;
    const auto n = static_cast<std::size_t>(steps) + 1;
    sol.times.resize(n);
    sol.s.resize(n);
    sol.offset.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) sol.times[i] = horizon * static_cast<double>(i) / steps;
    sol.times.back() = horizon;
    sol.s[n - 1] = lq.q_terminal;
    const double dt = horizon / steps;
    for (std::size_t i = n - 1; i > 0; --i) {
        const Matrix& s0 = sol.s[i];
        const Matrix k1 = f(s0);
        const Matrix s_half1 = s0 + 0.5 * dt * k1;
        const Matrix k2 = f(s_half1);
        const Matrix s_half2 = s0 + 0.5 * dt * k2;
        const Matrix k3 = f(s_half2);
        const Matrix s_full = s0 + dt * k3;
        const Matrix k4 = f(s_full);
        Matrix s1 = s0 + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if (!s1.allFinite() || s1.cwiseAbs().maxCoeff() > 1e12) {
            throw FiniteEscapeError("riccati_solve_matrix: S escapes to infinity near t = " +
                                    std::to_string(sol.times[i - 1]));
        }
        const double r = (sst.cwiseProduct(s0).sum() + 2.0 * sst.cwiseProduct(s_half1).sum() +
                          2.0 * sst.cwiseProduct(s_half2).sum() + sst.cwiseProduct(s_full).sum()) / 6.0;
        sol.s[i - 1] = std::move(s1);
        sol.offset[i - 1] = sol.offset[i] + dt * r;
    }
    return sol;
}

}  // namespace hjblab
