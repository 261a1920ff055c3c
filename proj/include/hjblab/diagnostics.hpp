#pragma once

// Numerical audits of value-function regularity and comparison principles.
// The estimates involve unknown constants; the scans estimate the constants
// and test their finiteness, stability and scaling.

#include "hjblab/control_signal.hpp"
#include "hjblab/cost_value.hpp"
#include "hjblab/hilbert_core.hpp"
#include "hjblab/linalg.hpp"
#include "hjblab/problem_models.hpp"
#include "hjblab/report.hpp"
#include "hjblab/sde_engine.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace hjblab {

struct PointPair {
    double t = 0.0;
    Vector x;
    Vector y;
};

/// max |V(t,x) - V(t,y)| / ||x - y|| with common random numbers. Pass iff the
/// ratio minus its MC slack is within `declared_bound` (finite when absent).
DiagnosticReport lipschitz_estimate(const ValueEvaluator& value, const std::vector<PointPair>& pairs,
                                    const NormSpec& norm, std::optional<double> declared_bound, std::uint64_t seed,
                                    double se_multiplier = 3.0);

/// lambda V(x) + (1 - lambda) V(x') - V(lambda x + (1 - lambda) x'), paired.
MCEstimate three_point_defect(const ValueEvaluator& value, double t, const Vector& x, const Vector& x_prime,
                              double lambda, std::uint64_t seed);

struct ScanConfig {
    double t = 0.0;
    Vector center;
    double radius = 1.0;
    std::size_t n_triples = 200;  ///< the first half gives the "before doubling" constant
    std::vector<double> lambdas{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    double se_multiplier = 3.0;
    double stability_tol = 0.2;
};

/// C-hat = max defect / (lambda (1 - lambda) ||x - x'||^2). Pass iff finite and
/// the first-half and full-sample constants agree within stability_tol.
DiagnosticReport semiconcavity_scan(const ValueEvaluator& value, const ScanConfig& cfg, const NormSpec& norm,
                                    std::uint64_t seed);

/// Sign-flipped scan. With expect_convex the verdict is instead: every
/// triple has -defect <= se_multiplier std errors (V convex).
DiagnosticReport semiconvexity_scan(const ValueEvaluator& value, const ScanConfig& cfg, const NormSpec& norm,
                                    std::uint64_t seed, bool expect_convex = false);

struct MidpointProbe {
    double t = 0.0;
    Vector x0;
    Vector x1;
    double lambda = 0.5;
    ControlSignal a0;
    ControlSignal a1;

    Vector x_lambda() const { return convex_combination(x0, x1, lambda); }
    ControlSignal a_lambda() const { return ControlSignal::convex_combination(a0, a1, lambda); }
};

/// Functional-level defect for nu' in nu_list: controls stay frozen, only
/// the nu ||a||^2 part of l changes, so the defect is affine in nu'.
/// Reports the worst normalized semiconvexity defect per nu and the smallest
/// nu with a nonpositive one; pass iff the sweep is monotone.
DiagnosticReport nu_sweep(const ControlProblem& problem, const std::vector<MidpointProbe>& probes,
                          const std::vector<double>& nu_list, std::size_t n_paths, std::size_t n_steps,
                          std::uint64_t seed, double se_multiplier = 3.0);

using GradientEvaluator = std::function<GradientEstimate(double t, const Vector& x, std::uint64_t seed)>;

/// 2 (C_cave^+ + C_vex^+) (1 + rel_slack): the gradient Lipschitz bound implied
/// by two-sided quadratic defects (the defect of c ||x||^2 is c, its gradient
/// modulus 2c).
double c11_bound(double c_semiconcave, double c_semiconvex, double rel_slack = 0.1);

/// max ||DV(x) - DV(y)||_H / ||x - y||; identical points are skipped. Pass iff
/// the ratio is within `bound` plus the propagated gradient noise.
DiagnosticReport c11_modulus(const GradientEvaluator& gradient, const std::vector<PointPair>& pairs,
                             const NormSpec& norm, double bound, std::uint64_t seed, double se_multiplier = 3.0);

enum class StabilityVariant { state, control };

struct StabilityProbe {
    double t = 0.0;
    Vector x0;
    Vector dx;          ///< state variant: x1 = x0 + eps dx
    ControlSignal a0;
    ControlSignal da;   ///< control variant: a1 = a0 + eps da
};

struct StabilityConfig {
    std::vector<double> magnitudes{1e-3, 1e-2, 1e-1, 1.0};
    std::size_t n_paths = 500;
    std::size_t n_steps = 100;
    double slope_target = 1.0;
    double slope_tol = 0.1;
};

struct LogLogFit {
    double slope = 0.0;
    double intercept = 0.0;
};

LogLogFit fit_log_log(const std::vector<double>& x, const std::vector<double>& y);

/// Regresses log E sup ||X1 - X0||^2 on log ||x1 - x0||^2 (state) or on
/// log E int ||a1 - a0||^2 (control). Pass iff the slope is within tolerance.
DiagnosticReport trajectory_stability_check(const ControlProblem& problem, const StabilityProbe& probe,
                                            StabilityVariant variant, const NormSpec& norm,
                                            const StabilityConfig& cfg, std::uint64_t seed);

struct MidpointConfig {
    std::size_t n_paths = 200;  ///< doubled for the stability comparison
    std::size_t n_steps = 100;
    double stability_tol = 0.2;
    std::vector<double> magnitudes;  ///< scaling regression along the first probe's direction
    double slope_target = 2.0;
    double slope_tol = 0.2;
};

/// K-hat = max over probes of E sup ||X^lambda - X_lambda|| / (lambda (1 - lambda) ||x1 - x0||^2),
/// where X^lambda is the convex combination of the coupled X0, X1 and X_lambda
/// starts from x_lambda under a_lambda. Probes with lambda in {0, 1} must give 0.
DiagnosticReport midpoint_trajectory_check(const ControlProblem& problem, const std::vector<MidpointProbe>& probes,
                                           const NormSpec& norm, const MidpointConfig& cfg, std::uint64_t seed);

struct ComparisonConfig {
    double t = 0.0;
    std::size_t n_paths = 1000;
    std::size_t n_steps = 200;
    /// Simulate Y = e^{C (s - t)} X so the reaction becomes nondecreasing.
    bool nemytskii_transform = false;
    std::optional<double> transform_rate;  ///< defaults to the reaction's derivative bound
    double order_tol = 1e-8;
};

/// Coupled runs of dX_i = [A X_i + b(X_i, 0) + f_i] ds + sigma dW from x1 >= x2.
/// Pass iff min over (path, step, component) of X1 - X2 >= -order_tol * scale.
/// Throws std::invalid_argument on violated preconditions.
DiagnosticReport comparison_check(const ControlProblem& problem, const Vector& x1, const Vector& x2,
                                  const Forcing& f1, const Forcing& f2, const ComparisonConfig& cfg,
                                  std::uint64_t seed);

/// Gaussian point around `center` with E ||x - center||_H^2 = radius^2.
Vector sample_point(const SpaceSpec& space, const Vector& center, double radius, std::uint64_t seed);

}  // namespace hjblab
