#pragma once

#include "hjblab/cost_value.hpp"
#include "hjblab/linalg.hpp"
#include "hjblab/problem_models.hpp"
#include "hjblab/report.hpp"
#include "hjblab/sde_engine.hpp"

#include <atomic>
#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

namespace hjblab {

enum class PolicyProvenance { closed_form_gamma, policy_iteration, oracle };

std::string to_string(PolicyProvenance p);

/// Feedback control a = pi(t, x). Outputs are clipped into Lambda_0; clip
/// events are counted across all copies of the policy.
class Policy {
public:
    Policy() = default;
    Policy(ControlSpec spec, FeedbackFn raw, PolicyProvenance provenance, std::string gradient_source);

    static Policy zero(const ControlSpec& spec);

    /// Returns true when the raw output had to be clipped.
    bool apply(double t, const Vector& x, Vector& out) const;
    void operator()(double t, const Vector& x, Vector& out) const { apply(t, x, out); }

    FeedbackFn feedback() const;
    ControlRule rule() const;
    /// (gain) * raw feedback, clipped: the corrupted-gain negative control.
    Policy scaled(double gain) const;

    PolicyProvenance provenance() const { return provenance_; }
    const std::string& gradient_source() const { return gradient_source_; }
    const ControlSpec& control_spec() const { return spec_; }
    std::size_t evaluations() const { return counters_->evaluations.load(); }
    std::size_t clips() const { return counters_->clips.load(); }
    double clip_fraction() const;
    void reset_counters() const;

private:
    struct Counters {
        std::atomic<std::size_t> evaluations{0};
        std::atomic<std::size_t> clips{0};
    };

    ControlSpec spec_;
    FeedbackFn raw_;
    PolicyProvenance provenance_ = PolicyProvenance::oracle;
    std::string gradient_source_;
    std::shared_ptr<Counters> counters_ = std::make_shared<Counters>();
};

/// F(x, p, a) = <p, b(x, a)>_H + l(x, a).
double hamiltonian_objective(const ControlProblem& problem, const Vector& x, const Vector& p, const Vector& a);

struct HamiltonianProbe {
    Vector x;
    Vector p;
    double m = 0.0;
    Vector argmin;
    double value = 0.0;
    bool converged = false;
    int iterations = 0;
};

struct HamiltonianSolverConfig {
    int n_starts = 4;
    int max_iterations = 2000;
    double tol = 1e-13;
    double fd_step = 1e-6;
    std::uint64_t seed = 1;
};

/// Multi-start projected gradient (Armijo backtracking, gradient in the
/// control inner product) over Lambda_0 intersected with {||a|| <= m}. Start 0 is
/// a = 0 projected, the rest are deterministic draws from the seed; the
/// first start attaining the best value wins.
HamiltonianProbe hamiltonian_min(const ControlProblem& problem, const Vector& x, const Vector& p, double m,
                                 const HamiltonianSolverConfig& cfg = {});

/// Dl2^{-1}(-C^* p) clipped into Lambda_0, for b(x, a) = f(x) + C a.
Vector gamma_separated(const ControlProblem& problem, const Vector& p);

GammaSelector separated_selector(const ControlProblem& problem);

/// pi(t, x) = gamma(x, grad(t, x)).
Policy gamma_policy(const ControlProblem& problem, std::function<Vector(double, const Vector&)> gradient,
                    PolicyProvenance provenance, std::string source);

/// u = k(t) x from the scalar Riccati solution.
Policy riccati_policy(const ControlProblem& problem, const RiccatiSolution& sol);

/// gamma applied to the H-gradient W^{-1} 2 S(t) x.
Policy matrix_riccati_policy(const ControlProblem& problem, std::shared_ptr<const MatrixRiccatiSolution> sol);

struct ClosedLoopRun {
    Trajectory trajectory;
    std::size_t clip_events = 0;
    double clip_fraction() const;
};

ClosedLoopRun closed_loop_simulate(const ControlProblem& problem, const Policy& policy, double t, const Vector& x,
                                   std::uint64_t seed, std::size_t n_steps, std::size_t path_index = 0);

/// Feedback values along each closed-loop path, dim x n_steps per path, for
/// open-loop replay on the same seeds.
std::shared_ptr<const std::vector<Matrix>> closed_loop_traces(const ControlProblem& problem, const Policy& policy,
                                                               double t, const Vector& x, std::size_t n_paths,
                                                               std::size_t n_steps, std::uint64_t seed);

MCEstimate feynman_kac_value(const ControlProblem& problem, const Policy& policy, double t, const Vector& x,
                             std::size_t n_paths, std::size_t n_steps, std::uint64_t seed);

struct OptimalityConfig {
    std::size_t n_paths = 2000;
    std::size_t n_steps = 100;
    int n_pieces = 4;
    double challenger_radius = 2.0;
    double perturb_min = 0.1;
    double perturb_max = 0.3;
    double shift_fraction = 0.2;  ///< perturbed-policy offset size, relative to the radius
    double se_multiplier = 3.0;
    std::vector<std::pair<std::string, ControlSignal>> extra_signals;
    std::vector<std::pair<std::string, Policy>> extra_policies;
};

/// Policy cost against n_challengers random open-loop signals, n_challengers
/// perturbed policies (1 + eps) pi + delta(s), and any extras, all on the same
/// paths. Pass iff J(pi) <= J(c) + k * paired std error for every challenger.
DiagnosticReport verify_optimality(const ControlProblem& problem, const Policy& policy, double t, const Vector& x,
                                   std::size_t n_challengers, const OptimalityConfig& cfg, std::uint64_t seed);

struct DppConfig {
    std::size_t n_outer = 1000;
    std::size_t n_inner = 200;
    std::size_t n_steps = 100;
    double se_multiplier = 3.0;
};

/// V(t, x) against E[int_t^s l ds + V(s, X(s))] along closed-loop paths, with
/// V(s, .) re-estimated by inner simulations. Outer paths reuse the increments
/// of the left-hand side, so the comparison is paired.
DiagnosticReport dpp_check(const ControlProblem& problem, const Policy& policy, double t, const Vector& x,
                           double s_mid, const DppConfig& cfg, std::uint64_t seed);

}  // namespace hjblab
