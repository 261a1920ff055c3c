#pragma once

#include "hjblab/control_signal.hpp"
#include "hjblab/linalg.hpp"
#include "hjblab/problem_models.hpp"
#include "hjblab/report.hpp"
#include "hjblab/sde_engine.hpp"

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

namespace hjblab {

/// Monte Carlo mean with its standard error. Per-path samples are kept so
/// that differences of estimates driven by the same paths get paired errors.
struct MCEstimate {
    double mean = 0.0;
    double std_error = 0.0;
    std::size_t n_paths = 0;
    std::vector<double> samples;

    static MCEstimate from_samples(std::vector<double> samples);
    static MCEstimate exact(double value);
};

/// sum_i c_i X_i computed path by path. All estimates must share n_paths
/// (or be exact, i.e. carry no samples).
MCEstimate linear_combination(const std::vector<double>& coeffs, const std::vector<const MCEstimate*>& terms);

/// Paired estimate of a - b.
MCEstimate paired_difference(const MCEstimate& a, const MCEstimate& b);

/// V-hat(t, x) with common random numbers for a fixed seed.
using ValueEvaluator = std::function<MCEstimate(double t, const Vector& x, std::uint64_t seed)>;

MCEstimate evaluate_cost(const ControlProblem& problem, double t, const Vector& x, const ControlSignal& control,
                         std::size_t n_paths, std::size_t n_steps, std::uint64_t seed);

MCEstimate evaluate_rule_cost(const ControlProblem& problem, double t, const Vector& x, const ControlRule& rule,
                              std::size_t n_paths, std::size_t n_steps, std::uint64_t seed);

/// Costs of several (initial state, rule) members sharing every path.
std::vector<MCEstimate> evaluate_coupled_costs(const ControlProblem& problem, double t, const std::vector<Vector>& inits,
                                               const std::vector<ControlRule>& rules, std::size_t n_paths,
                                               std::size_t n_steps, std::uint64_t seed);

/// Open-loop candidates in Lambda_0 intersected with {||a|| <= m}: explicit
/// members first, then random piecewise-constant signals whose piece values
/// are uniform in the ball (weighted norm) and projected onto the box.
class ControlFamily {
public:
    ControlFamily(const ControlSpec& spec, double t0, double t1, int n_pieces, double m, std::uint64_t seed);

    /// Adds an explicit member, truncated into the family's set.
    void add(const ControlSignal& signal);

    std::size_t n_explicit() const { return explicit_.size(); }
    double m_truncation() const { return m_; }
    /// Index i < n_explicit selects an explicit member, otherwise random
    /// member i - n_explicit (deterministic in the family seed).
    ControlSignal member(std::size_t i) const;
    ControlSignal random_member(std::size_t i) const;

private:
    ControlSpec spec_;
    double t0_, t1_;
    int n_pieces_;
    double m_;
    std::uint64_t seed_;
    std::vector<ControlSignal> explicit_;
};

struct FamilyEstimate {
    MCEstimate value;
    std::size_t argmin = 0;
    std::vector<Vector> argmin_parameters;
    std::vector<double> candidate_means;
};

/// Minimum over the first n_candidates members, all candidates evaluated on
/// the same paths. Ties go to the lowest index.
FamilyEstimate estimate_value_family(const ControlProblem& problem, double t, const Vector& x,
                                     const ControlFamily& family, std::size_t n_candidates,
                                     std::size_t paths_per_candidate, std::size_t n_steps, std::uint64_t seed);

struct TruncationConfig {
    int n_pieces = 4;
    std::size_t n_random = 16;
    std::size_t n_paths = 2000;
    std::size_t n_steps = 100;
    double se_multiplier = 2.0;
    /// Optional explicit signal per point (e.g. a replayed feedback trace),
    /// truncated to each m in turn.
    std::vector<ControlSignal> explicit_members;
};

struct TruncationPoint {
    double t = 0.0;
    Vector x;
};

/// V^m over m_list. Family m_j is the union of the families built at
/// m_i <= m_j, so the scan is monotone by construction. m-bar is the
/// smallest m after which every estimate stays within se_multiplier paired
/// standard errors of the last one.
DiagnosticReport truncation_scan(const ControlProblem& problem, const std::vector<TruncationPoint>& points,
                                 const std::vector<double>& m_list, const TruncationConfig& cfg, std::uint64_t seed);

struct GradientEstimate {
    Vector gradient;          ///< in H: sum_e d_e e
    Vector directional;       ///< central differences per direction
    Vector directional_se;    ///< paired standard errors per direction
    bool noisy = false;       ///< some direction had |difference| < its std error
    std::vector<std::string> warnings;
};

/// Central differences of V-hat along H-orthonormal directions (default
/// e_i / sqrt(w_i)); every evaluation uses `seed`. h <= 0 selects
/// 1e-3 (1 + ||x||_H).
GradientEstimate gradient_fd(const ControlProblem& problem, const ValueEvaluator& value, double t, const Vector& x,
                             double h, std::uint64_t seed, const std::vector<Vector>& directions = {});

enum class ValueMethod { family_inf, policy_iteration };

std::string to_string(ValueMethod m);

struct ValueField {
    std::vector<double> times;
    std::vector<Vector> states;
    std::vector<MCEstimate> values;
    std::optional<std::vector<Vector>> gradients;
    ValueMethod method = ValueMethod::family_inf;
};

/// CSV rows: t, x0.., value, std_error, g0..
void write_value_field_csv(std::ostream& os, const ValueField& field);

/// Feedback map built from nodal gradients: nearest x node per time node,
/// corrected by a least-squares Jacobian fitted over neighbouring nodes,
/// then linear in t. States outside the node bounding box use the nearest
/// node only and are counted.
class GradientInterpolator {
public:
    GradientInterpolator(std::vector<double> t_nodes, std::vector<Vector> x_nodes,
                         std::vector<std::vector<Vector>> gradients);

    void operator()(double t, const Vector& x, Vector& out) const;
    std::size_t extrapolations() const { return extrapolations_->load(); }

private:
    void at_time_node(std::size_t it, const Vector& x, Vector& out, bool& outside) const;

    std::vector<double> t_nodes_;
    std::vector<Vector> x_nodes_;
    std::vector<std::vector<Vector>> gradients_;  ///< [time][node]
    std::vector<std::vector<Matrix>> jacobians_;
    Vector lo_, hi_;
    std::shared_ptr<std::atomic<std::size_t>> extrapolations_ = std::make_shared<std::atomic<std::size_t>>(0);
};

using FeedbackFn = std::function<void(double t, const Vector& x, Vector& out)>;
/// gamma(x, p): control from state and H-gradient.
using GammaSelector = std::function<Vector(const Vector& x, const Vector& p)>;

struct PolicyIterationConfig {
    std::size_t n_paths = 2000;
    std::size_t n_steps = 100;
    double fd_step = 0.0;
    double tol = 1e-3;
    FeedbackFn initial;  ///< defaults to a = 0
};

struct PolicyIterationResult {
    ValueField field;
    FeedbackFn policy;                      ///< final feedback, clipped into Lambda_0
    std::vector<double> sup_changes;        ///< sup over nodes of |V^{k+1} - V^k|
    std::vector<std::vector<double>> round_values;
    bool converged = false;
    std::size_t rounds = 0;
};

/// V^k from closed-loop runs of pi^k, DV^k by gradient_fd on the nodes,
/// pi^{k+1}(t, x) = gamma(x, DV^k(t, x)). Nodes at t >= T use g directly.
PolicyIterationResult policy_iteration(const ControlProblem& problem, const std::vector<double>& t_grid,
                                       const std::vector<Vector>& x_grid, const GammaSelector& gamma,
                                       std::size_t n_rounds, const PolicyIterationConfig& cfg, std::uint64_t seed);

/// Closed-loop cost of a feedback map with the same paths as evaluate_cost.
MCEstimate evaluate_feedback_cost(const ControlProblem& problem, const FeedbackFn& feedback, double t,
                                  const Vector& x, std::size_t n_paths, std::size_t n_steps, std::uint64_t seed);

}  // namespace hjblab
