#pragma once

#include "hjblab/hilbert_core.hpp"
#include "hjblab/linalg.hpp"
#include "hjblab/report.hpp"

#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

namespace hjblab {

// ---------------------------------------------------------------------------
// Control set

struct Box {
    Vector lo;
    Vector hi;
};

/// Lambda_0 as a subset of R^q with the weighted norm ||a||^2 = sum_i w_i a_i^2
/// (weights 1 for R^q, quadrature weights for a discretized L^2 control).
class ControlSpec {
public:
    ControlSpec() = default;
    ControlSpec(Vector weights, std::optional<Box> box = std::nullopt, double p_integrability = 3.0);

    static ControlSpec euclidean(std::size_t dim, std::optional<Box> box = std::nullopt, double p = 3.0);

    std::size_t dim() const { return static_cast<std::size_t>(weights_.size()); }
    const Vector& weights() const { return weights_; }
    const std::optional<Box>& box() const { return box_; }
    double p_integrability() const { return p_; }
    bool bounded() const { return box_.has_value(); }

    double norm(const Vector& a) const;
    bool contains(const Vector& a, double tol = 0.0) const;
    /// Clip into Lambda_0 (identity when unbounded). Returns true if clipped.
    bool clip(Vector& a) const;
    /// Projection onto Lambda_0 intersected with the ball ||a|| <= m
    /// (Dykstra alternation between the box and the ball).
    Vector project_truncated(const Vector& a, double m) const;

private:
    Vector weights_;
    std::optional<Box> box_;
    double p_ = 3.0;
};

// ---------------------------------------------------------------------------
// Scalar building blocks

/// Scalar C^{1,1} function with a declared Lipschitz bound on its derivative
/// image (i.e. sup |f'|), used for reaction terms.
struct ScalarReaction {
    std::string name;
    std::function<double(double)> f;
    std::function<double(double)> df;
    std::optional<double> derivative_bound;
    std::optional<double> linear_coefficient;  ///< set when f(r) = k r

    static ScalarReaction zero();
    static ScalarReaction linear(double k);
    /// -r^3 on [-R, R], continued linearly (C^{1,1}) outside.
    static ScalarReaction clipped_cubic(double radius);
    /// -log(1 + e^r): concave, derivative in (-1, 0).
    static ScalarReaction neg_softplus();
};

/// Pointwise cost c(r) applied node-by-node and integrated with quadrature.
struct NemytskiiCost {
    std::string name;
    std::function<double(double)> f;
    std::function<double(double)> df;
    std::optional<double> quadratic_coefficient;  ///< set when f(r) = c r^2
    double lower_bound = -std::numeric_limits<double>::infinity();

    static NemytskiiCost quadratic(double c);
    static NemytskiiCost zero();
};

// ---------------------------------------------------------------------------
// Problem instance

using DriftFn = std::function<void(const Vector& x, const Vector& a, Vector& out)>;
using NoiseFn = std::function<void(const Vector& x, Matrix& out)>;
using RunningCostFn = std::function<double(const Vector& x, const Vector& a)>;
using TerminalCostFn = std::function<double(const Vector& x)>;

/// sigma(x), control-independent. `constant` is set for additive noise.
struct NoiseModel {
    std::size_t modes = 0;
    std::optional<Matrix> constant;
    NoiseFn fn;

    bool active() const { return modes > 0; }
};

/// l(x, a) = l1(x) + l2(a) with drift b(x, a) = f(x) + C a. Gradients of l2
/// and its inverse are taken in the control inner product.
struct SeparatedCost {
    std::function<double(const Vector&)> l1;
    std::function<double(const Vector&)> l2;
    std::function<Vector(const Vector&)> dl2;
    std::function<Vector(const Vector&)> dl2_inverse;
    Matrix coupling;   ///< C, N x q
    double nu = 0.0;   ///< l2 - nu ||a||^2 convex; gamma is 1/(2 nu)-Lipschitz
};

/// Euclidean-coordinate LQ data: dX = ((A + F) X + C a) dt + Sigma dW,
/// cost x^T Q x + a^T R a, terminal x^T Q_T x.
struct LinearQuadraticData {
    Matrix drift_linear;  ///< F (excluding the generator A)
    Matrix coupling;      ///< C
    Matrix q;
    Matrix r;
    Matrix q_terminal;
    Matrix sigma;
};

struct ControlProblem {
    std::string name;
    SpaceSpec space;
    DiscreteOperator op;
    BOperatorSpec b_op;
    DriftFn drift;
    NoiseModel noise;
    RunningCostFn running_cost;
    TerminalCostFn terminal_cost;
    ControlSpec control;
    double horizon = 1.0;
    std::optional<SeparatedCost> cost_structure;
    std::optional<LinearQuadraticData> lq;
    std::optional<ScalarReaction> reaction;  ///< Nemytskii reaction for RD problems
    double drift_lipschitz = 0.0;            ///< declared, in ||.||_H
    double noise_lipschitz = 0.0;            ///< declared, Hilbert-Schmidt in H
    double cost_floor = -std::numeric_limits<double>::infinity();

    std::size_t dim() const { return space.dim(); }
    Vector drift_at(const Vector& x, const Vector& a) const;
    Matrix noise_at(const Vector& x) const;

    /// Structural checks: shapes, cost floor for unbounded controls,
    /// dl2_inverse(dl2(a)) = a on sampled controls. Throws on violation.
    void validate(std::uint64_t seed = 7) const;
};

/// Empirical Lipschitz audit of drift and noise in the state variable over
/// sampled pairs; pass iff every ratio is within the declared constants.
DiagnosticReport audit_lipschitz(const ControlProblem& problem, int n_pairs, double radius, std::uint64_t seed);

/// Affine drift check b(mid) = mid(b) and convexity of l on sampled triples.
DiagnosticReport audit_linear_convex(const ControlProblem& problem, int n_samples, double radius,
                                     std::uint64_t seed);

/// Second-difference concavity test of a scalar function on a grid.
bool is_concave_on_grid(const std::function<double(double)>& f, double lo, double hi, int n);

// ---------------------------------------------------------------------------
// Builders

struct ReactionDiffusionConfig {
    int n_grid = 8;
    double length = 1.0;
    double diffusivity = 0.1;
    ScalarReaction reaction = ScalarReaction::zero();
    double noise_scale = 0.2;
    int noise_modes = 4;
    std::optional<Matrix> noise;  ///< overrides the sine-mode construction
    NemytskiiCost l1 = NemytskiiCost::quadratic(1.0);
    double nu = 0.5;              ///< l2(r) = nu r^2
    NemytskiiCost g = NemytskiiCost::quadratic(1.0);
    double horizon = 1.0;
    std::optional<double> control_bound;  ///< |a(xi)| <= bound, else unbounded
};

ControlProblem build_reaction_diffusion(const ReactionDiffusionConfig& cfg);

/// Scalar SDDE dy = b0(y, z1, a) ds + sigma0(y, z2) dW with z_i = int eta_i x1.
struct SddeConfig {
    double delay = 1.0;
    int n_past = 16;
    std::function<double(double)> eta1;  ///< defaults to e^xi - e^{-d}
    std::function<double(double)> eta2;
    // b0(y, z, a) = k_y y + k_z z + beta (softplus(y) - log 2) - a
    double k_y = -0.5;
    double k_z = 0.5;
    double beta = 0.0;
    // sigma0(y, z) = s_c + s_z z
    double sigma_c = 0.3;
    double sigma_z = 0.0;
    // l0(y, a) = q y^2 + nu a^2, g0(y) = q_T y^2
    double q_state = 1.0;
    double nu = 0.5;
    double q_terminal = 1.0;
    double horizon = 1.0;
};

struct SddeLift {
    ControlProblem problem;
    double h = 0.0;
    std::vector<double> past_nodes;
    Vector eta1_weights;  ///< quadrature row: z1 = eta1_weights . x1
    Vector eta2_weights;

    double kernel_integral(const Vector& x, int which) const;
};

SddeLift build_sdde_lift(const SddeConfig& cfg);

/// Scalar LQ data: dX = (a X + alpha u) dt + sigma0 dW, cost q X^2 + r u^2,
/// terminal q_T X^2.
struct RiccatiOracle {
    double a_lin = 0.0;
    double alpha = 1.0;
    double sigma0 = 0.0;
    double q_state = 1.0;
    double r_control = 1.0;
    double q_terminal = 1.0;
    double horizon = 1.0;

    void validate() const;
};

ControlProblem build_lq_problem(const RiccatiOracle& oracle);
std::pair<ControlProblem, RiccatiOracle> build_lq_benchmark(const RiccatiOracle& oracle);

/// V(t, x) = P(t) x^2 + r(t) on a time grid, with optimal gain
/// u = k(t) x, k = -alpha P / r_control.
struct RiccatiSolution {
    std::vector<double> times;
    std::vector<double> p;
    std::vector<double> offset;
    std::vector<double> gain;

    double p_at(double t) const;
    double offset_at(double t) const;
    double gain_at(double t) const;
    double value(double t, double x) const { return p_at(t) * x * x + offset_at(t); }
};

class FiniteEscapeError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Backward RK4 for -P' = q + 2 a P - (alpha^2 / r) P^2, -r' = sigma0^2 P.
RiccatiSolution riccati_solve(const RiccatiOracle& oracle, const std::vector<double>& time_grid);
RiccatiSolution riccati_solve(const RiccatiOracle& oracle, int n_steps = 2000);

/// Matrix counterpart for problems carrying LinearQuadraticData:
/// V(t, x) = x^T S(t) x + rho(t) in Euclidean coordinates.
struct MatrixRiccatiSolution {
    std::vector<double> times;
    std::vector<Matrix> s;
    std::vector<double> offset;

    Matrix s_at(double t) const;
    double offset_at(double t) const;
    double value(double t, const Vector& x) const { return x.dot(s_at(t) * x) + offset_at(t); }
    /// Gradient in the H inner product: W^{-1} 2 S x.
    Vector h_gradient(const SpaceSpec& space, double t, const Vector& x) const;
};

MatrixRiccatiSolution riccati_solve_matrix(const ControlProblem& problem, int n_steps = 2000);

}  // namespace hjblab
