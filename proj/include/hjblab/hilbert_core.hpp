#pragma once

// Finite-dimensional stand-ins for the state space H, the generator A and its
// semigroup, and the bounded operator B that defines the weaker norm
// ||x||_{-1} = <Bx, x>^{1/2}.

#include "hjblab/linalg.hpp"
#include "hjblab/report.hpp"

#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

namespace hjblab {

/// Split of the state vector for delay lifts: `present` leading entries
/// hold x0 in R^n, the remaining `past` entries discretize x1 on [-d, 0).
struct BlockLayout {
    std::size_t present = 0;
    std::size_t past = 0;
};

/// Discrete Hilbert space R^N with the weighted inner product
/// <x, y>_H = sum_i w_i x_i y_i.
class SpaceSpec {
public:
    SpaceSpec() = default;
    SpaceSpec(Vector weights, std::optional<BlockLayout> layout = std::nullopt);

    static SpaceSpec euclidean(std::size_t dim);
    /// Uniform quadrature weight h on every node, i.e. L^2 of a grid.
    static SpaceSpec uniform(std::size_t dim, double h);

    std::size_t dim() const { return static_cast<std::size_t>(weights_.size()); }
    const Vector& weights() const { return weights_; }
    const std::optional<BlockLayout>& layout() const { return layout_; }

    double inner(const Vector& x, const Vector& y) const;
    double norm(const Vector& x) const;

private:
    Vector weights_;
    std::optional<BlockLayout> layout_;
};

enum class OperatorKind { dirichlet_laplacian_fd, delay_generator, zero, custom };

std::string to_string(OperatorKind kind);

/// Matrix representation of the generator A. Immutable; copies share one
/// thread-safe cache of exp(dt A) keyed on dt.
class DiscreteOperator {
public:
    DiscreteOperator() = default;
    DiscreteOperator(Matrix matrix, OperatorKind kind, double dissipativity_shift = 0.0);

    static DiscreteOperator zero(std::size_t dim);
    static DiscreteOperator custom(Matrix matrix, double dissipativity_shift = 0.0);

    const Matrix& matrix() const { return matrix_; }
    OperatorKind kind() const { return kind_; }
    double dissipativity_shift() const { return shift_; }
    std::size_t dim() const { return static_cast<std::size_t>(matrix_.rows()); }
    bool is_zero() const { return kind_ == OperatorKind::zero; }

    /// exp(dt A), computed once per dt by scaling and squaring.
    const Matrix& exponential(double dt) const;

private:
    struct Cache {
        std::mutex mutex;
        std::map<double, std::unique_ptr<Matrix>> entries;
    };

    Matrix matrix_;
    OperatorKind kind_ = OperatorKind::zero;
    double shift_ = 0.0;
    std::shared_ptr<Cache> cache_ = std::make_shared<Cache>();
};

enum class BMode { strong, weak };

/// The operator B of the B-condition, stored with its Gram matrix
/// G = W B so that ||x||_{-1}^2 = x^T G x.
class BOperatorSpec {
public:
    BOperatorSpec() = default;
    /// Validates self-adjointness in H (W B symmetric to 1e-12 relative)
    /// and positivity; throws std::invalid_argument otherwise.
    BOperatorSpec(const SpaceSpec& space, Matrix matrix, double c0, BMode mode);

    static BOperatorSpec identity(const SpaceSpec& space, double c0, BMode mode);
    /// B = (A^{-1})^* A^{-1}, the adjoint taken in the weighted inner product.
    static BOperatorSpec inverse_gram(const SpaceSpec& space, const DiscreteOperator& op, double c0, BMode mode);

    const Matrix& matrix() const { return matrix_; }
    const Matrix& gram() const { return gram_; }
    double c0() const { return c0_; }
    BMode mode() const { return mode_; }
    const SpaceSpec& space() const { return space_; }

private:
    SpaceSpec space_;
    Matrix matrix_;
    Matrix gram_;
    double c0_ = 0.0;
    BMode mode_ = BMode::strong;
};

/// Chooses between ||.||_H and ||.||_{-1} for the diagnostics.
enum class NormTag { H, minus1 };

std::string to_string(NormTag tag);

struct NormSpec {
    SpaceSpec space;
    std::optional<BOperatorSpec> b;
    NormTag tag = NormTag::H;

    double operator()(const Vector& x) const;
};

/// Second-difference Laplacian on n_grid interior nodes of (0, length),
/// h = length / (n_grid + 1), scaled by diffusivity / h^2.
DiscreteOperator make_dirichlet_laplacian(int n_grid, double length, double diffusivity);

/// L^2 space matching make_dirichlet_laplacian: weight h per node.
SpaceSpec dirichlet_space(int n_grid, double length);

struct DelayLift {
    DiscreteOperator op;
    SpaceSpec space;
    double h = 0.0;                 ///< past-grid spacing d / n_past
    std::vector<double> past_nodes; ///< xi_j = -d + j h, j = 0..n_past-1
};

/// Upwind discretization of A(x0, x1) = (-x0, x1') on R^n x L^2([-d,0]; R^n).
///
/// Layout: x0 occupies entries [0, n); component c of x1 at node j sits at
/// n + c * n_past + j. The derivative at node j is (x1[j+1] - x1[j]) / h with
/// x1[n_past] := x0, which imposes x1(0) = x0. For n = 1, d = 1, n_past = 2:
///
///     [ -1   0   0 ]
///     [  0  -2   2 ]
///     [  2   0  -2 ]
DelayLift make_delay_generator(int n, double d, int n_past);

/// exp(dt A) x.
Vector semigroup_apply(const DiscreteOperator& op, double dt, const Vector& x);

double b_norm(const BOperatorSpec& b, const Vector& x);

/// Smallest eigenvalue of the symmetrized form -A^*B + c0 B (minus I in
/// strong mode), measured relative to the H inner product. Pass iff >= -1e-8.
DiagnosticReport check_b_condition(const DiscreteOperator& op, const BOperatorSpec& b);

/// Samples nonnegative vectors (half the entries zeroed at random) and
/// reports the most negative entry of exp(dt A) x relative to ||x||_inf.
DiagnosticReport check_positivity_preserving(const DiscreteOperator& op, const std::vector<double>& dt_list,
                                             int n_samples, std::uint64_t seed);

}  // namespace hjblab
