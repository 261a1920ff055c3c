#pragma once

// Exponential-Euler simulation of the mild state equation
//
//     X_{k+1} = exp(dt A) (X_k + dt b(X_k, a_k) + sigma(X_k) dW_k),
//
// with Brownian increments drawn per path from derive_seed(seed, "paths", i).
// Any number of members can share one increment stream (coupling).

#include "hjblab/control_signal.hpp"
#include "hjblab/linalg.hpp"
#include "hjblab/problem_models.hpp"
#include "hjblab/report.hpp"

#include <cstdint>
#include <functional>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hjblab {

class SimulationDivergence : public std::runtime_error {
public:
    SimulationDivergence(std::size_t step, std::size_t path, const std::string& what);
    std::size_t step() const { return step_; }
    std::size_t path() const { return path_; }

private:
    std::size_t step_;
    std::size_t path_;
};

/// Control chosen at step k from the current state; open-loop signals ignore x.
using ControlRule = std::function<void(std::size_t path, std::size_t step, double s, const Vector& x, Vector& out)>;

ControlRule open_loop(const ControlSignal& signal);

/// Extra additive drift term f(s), per path (used by the comparison checks).
using Forcing = std::function<void(std::size_t path, double s, Vector& out)>;

struct StepView {
    std::size_t step;
    double s0;
    double s1;
    const std::vector<Vector>& before;
    const std::vector<Vector>& controls;
    const std::vector<Vector>& after;
};

using StepVisitor = std::function<void(const StepView&)>;

/// Runs every member along path `path_index` with one shared increment stream.
/// `forcing`, when given, must have one entry per member.
void run_coupled(const ControlProblem& problem, const TimeGrid& grid, const std::vector<Vector>& inits,
                 const std::vector<ControlRule>& rules, std::uint64_t seed, std::size_t path_index,
                 const StepVisitor& visit, const std::vector<Forcing>* forcing = nullptr);

/// Pathwise cost of each member: trapezoid rule in time with the control held
/// over the step, plus the terminal cost.
std::vector<double> path_costs(const ControlProblem& problem, const TimeGrid& grid, const std::vector<Vector>& inits,
                               const std::vector<ControlRule>& rules, std::uint64_t seed, std::size_t path_index);

struct Trajectory {
    TimeGrid grid;
    std::vector<Vector> states;    ///< n_steps + 1
    std::vector<Vector> controls;  ///< n_steps
    std::uint64_t seed = 0;        ///< master seed
    std::size_t path_index = 0;
    std::uint64_t path_seed = 0;   ///< derived increment seed

    std::vector<double> times() const;
};

struct PathEnsemble {
    std::vector<Trajectory> trajectories;
    std::uint64_t master_seed = 0;
};

enum class CouplingTag { same_control, different_controls, midpoint_triple };

struct CoupledSet {
    std::vector<Trajectory> members;
    CouplingTag tag = CouplingTag::different_controls;
};

Trajectory simulate_path(const ControlProblem& problem, double t, const Vector& x, const ControlSignal& control,
                         std::uint64_t seed, std::size_t n_steps, std::size_t path_index = 0);

Trajectory simulate_rule(const ControlProblem& problem, double t, const Vector& x, const ControlRule& rule,
                         std::uint64_t seed, std::size_t n_steps, std::size_t path_index = 0);

PathEnsemble simulate_ensemble(const ControlProblem& problem, double t, const Vector& x, const ControlSignal& control,
                               std::size_t n_paths, std::uint64_t seed, std::size_t n_steps);

CoupledSet simulate_coupled(const ControlProblem& problem, double t, const std::vector<Vector>& inits,
                            const std::vector<ControlSignal>& controls, std::uint64_t seed, std::size_t n_steps,
                            std::size_t path_index = 0);

/// CSV rows: path_id, step, time, x0..x{N-1}.
void write_trajectory_csv(std::ostream& os, const std::vector<Trajectory>& paths);

/// Sample mean of sup_s ||X(s)||_H^p and of int ||a||^p ds over n_paths.
struct MomentSample {
    double sup_moment = 0.0;
    double sup_moment_se = 0.0;
    double control_moment = 0.0;
};

MomentSample sup_moment(const ControlProblem& problem, double t, const Vector& x, const ControlSignal& control,
                        double p, std::size_t n_paths, std::size_t n_steps, std::uint64_t seed);

/// Empirical C_p: twice the largest ratio E sup ||X||^p / (1 + ||x||^p + E int ||a||^p)
/// over the calibration points. Computed once per problem, then frozen.
double calibrate_moment_constant(const ControlProblem& problem, double t, const std::vector<Vector>& points,
                                 const ControlSignal& control, double p, std::size_t n_paths, std::size_t n_steps,
                                 std::uint64_t seed);

/// Pass iff E sup ||X||^p <= C_p (1 + ||x||^p + E int ||a||^p).
DiagnosticReport moment_bound_check(const ControlProblem& problem, double t, const Vector& x,
                                    const ControlSignal& control, double p, double c_p, std::size_t n_paths,
                                    std::size_t n_steps, std::uint64_t seed);

}  // namespace hjblab
