#include "hjblab/hilbert_core.hpp"

#include "hjblab/rng.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace hjblab {

// ---------------------------------------------------------------------------
// SpaceSpec

SpaceSpec::SpaceSpec(Vector weights, std::optional<BlockLayout> layout)
    : weights_(std::move(weights)), layout_(layout) {
    if (weights_.size() == 0) throw std::invalid_argument("SpaceSpec: dimension must be positive");
    for (Eigen::Index i = 0; i < weights_.size(); ++i) {
        if (!(weights_[i] > 0.0) || !std::isfinite(weights_[i])) {
            throw std::invalid_argument("SpaceSpec: weight " + std::to_string(i) + " is not strictly positive");
        }
    }
    if (layout_ && layout_->present + layout_->past != dim()) {
        throw std::invalid_argument("SpaceSpec: block layout does not partition the index set");
    }
}

SpaceSpec SpaceSpec::euclidean(std::size_t dim) {
    return SpaceSpec(Vector::Ones(static_cast<Eigen::Index>(dim)));
}

SpaceSpec SpaceSpec::uniform(std::size_t dim, double h) {
    return SpaceSpec(Vector::Constant(static_cast<Eigen::Index>(dim), h));
}

double SpaceSpec::inner(const Vector& x, const Vector& y) const {
    return (weights_.array() * x.array() * y.array()).sum();
}

double SpaceSpec::norm(const Vector& x) const { return std::sqrt(inner(x, x)); }

// ---------------------------------------------------------------------------
// DiscreteOperator

std::string to_string(OperatorKind kind) {
    switch (kind) {
        case OperatorKind::dirichlet_laplacian_fd: return "dirichlet_laplacian_fd";
        case OperatorKind::delay_generator: return "delay_generator";
        case OperatorKind::zero: return "zero";
        case OperatorKind::custom: return "custom";
    }
    return "custom";
}

DiscreteOperator::DiscreteOperator(Matrix matrix, OperatorKind kind, double dissipativity_shift)
    : matrix_(std::move(matrix)), kind_(kind), shift_(dissipativity_shift) {
    if (matrix_.rows() != matrix_.cols() || matrix_.rows() == 0) {
        throw std::invalid_argument("DiscreteOperator: matrix must be square and nonempty");
    }
    if (shift_ < 0.0) throw std::invalid_argument("DiscreteOperator: dissipativity shift must be >= 0");
    if (kind_ == OperatorKind::zero && !matrix_.isZero(0.0)) {
        throw std::invalid_argument("DiscreteOperator: kind zero requires the zero matrix");
    }
    if (kind_ == OperatorKind::dirichlet_laplacian_fd) {
        for (Eigen::Index i = 0; i < matrix_.rows(); ++i) {
            for (Eigen::Index j = 0; j < matrix_.cols(); ++j) {
                if (i != j && matrix_(i, j) < 0.0) {
                    throw std::invalid_argument("DiscreteOperator: Laplacian stencil must be Metzler");
                }
            }
            if (matrix_.row(i).sum() > 1e-12 * matrix_.row(i).cwiseAbs().sum()) {
                throw std::invalid_argument("DiscreteOperator: Laplacian row sums must be <= 0");
            }
        }
    }
}

DiscreteOperator DiscreteOperator::zero(std::size_t dim) {
    const auto n = static_cast<Eigen::Index>(dim);
    return DiscreteOperator(Matrix::Zero(n, n), OperatorKind::zero);
}

DiscreteOperator DiscreteOperator::custom(Matrix matrix, double dissipativity_shift) {
    return DiscreteOperator(std::move(matrix), OperatorKind::custom, dissipativity_shift);
}

const Matrix& DiscreteOperator::exponential(double dt) const {
    if (dt < 0.0) throw std::invalid_argument("exponential: dt must be nonnegative");
    std::lock_guard lock(cache_->mutex);
    auto it = cache_->entries.find(dt);
    if (it != cache_->entries.end()) return *it->second;
    auto e = std::make_unique<Matrix>();
    if (kind_ == OperatorKind::zero || dt == 0.0) {
        *e = Matrix::Identity(matrix_.rows(), matrix_.cols());
    } else {
        const Matrix scaled = dt * matrix_;
        *e = scaled.exp();
    }
    const Matrix& ref = *e;
    cache_->entries.emplace(dt, std::move(e));
    return ref;
}

// ---------------------------------------------------------------------------
// BOperatorSpec

BOperatorSpec::BOperatorSpec(const SpaceSpec& space, Matrix matrix, double c0, BMode mode)
    : space_(space), matrix_(std::move(matrix)), c0_(c0), mode_(mode) {
    const auto n = static_cast<Eigen::Index>(space_.dim());
    if (matrix_.rows() != n || matrix_.cols() != n) throw std::invalid_argument("BOperatorSpec: shape mismatch");
    if (c0_ < 0.0) throw std::invalid_argument("BOperatorSpec: c0 must be nonnegative");
    const Matrix g = space_.weights().asDiagonal() * matrix_;
    const double scale = std::max(g.norm(), std::numeric_limits<double>::min());
    if ((g - g.transpose()).norm() > 1e-12 * scale) {
        throw std::invalid_argument("BOperatorSpec: B is not self-adjoint in H");
    }
    gram_ = 0.5 * (g + g.transpose());
    // Positivity in H: eigenvalues of W^{-1/2} G W^{-1/2}.
    const Vector inv_sqrt_w = space_.weights().cwiseSqrt().cwiseInverse();
    const Matrix normalized = inv_sqrt_w.asDiagonal() * gram_ * inv_sqrt_w.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(normalized, Eigen::EigenvaluesOnly);
    if (!(eig.eigenvalues().minCoeff() > 0.0)) {
        throw std::invalid_argument("BOperatorSpec: B must be positive definite");
    }
}

BOperatorSpec BOperatorSpec::identity(const SpaceSpec& space, double c0, BMode mode) {
    const auto n = static_cast<Eigen::Index>(space.dim());
    return BOperatorSpec(space, Matrix::Identity(n, n), c0, mode);
}

BOperatorSpec BOperatorSpec::inverse_gram(const SpaceSpec& space, const DiscreteOperator& op, double c0,
                                          BMode mode) {
    // <Bx, x>_H = ||A^{-1} x||_H^2  =>  W B = A^{-T} W A^{-1}.
    const Matrix a_inv = op.matrix().fullPivLu().inverse();
    Matrix gram = a_inv.transpose() * space.weights().asDiagonal() * a_inv;
    gram = 0.5 * (gram + gram.transpose());
    Matrix b = space.weights().cwiseInverse().asDiagonal() * gram;
    return BOperatorSpec(space, std::move(b), c0, mode);
}

std::string to_string(NormTag tag) { return tag == NormTag::H ? "H" : "minus1"; }

double NormSpec::operator()(const Vector& x) const {
    if (tag == NormTag::H) return space.norm(x);
    if (!b) throw std::logic_error("NormSpec: minus1 norm requested without a B operator");
    return b_norm(*b, x);
}

// ---------------------------------------------------------------------------
// Operator constructors

DiscreteOperator make_dirichlet_laplacian(int n_grid, double length, double diffusivity) {
    if (n_grid < 1) throw std::invalid_argument("make_dirichlet_laplacian: n_grid must be >= 1");
    if (!(length > 0.0)) throw std::invalid_argument("make_dirichlet_laplacian: length must be positive");
    if (!(diffusivity > 0.0)) throw std::invalid_argument("make_dirichlet_laplacian: diffusivity must be positive");
    const double h = length / (n_grid + 1);
    const double c = diffusivity / (h * h);
    Matrix a = Matrix::Zero(n_grid, n_grid);
    for (int i = 0; i < n_grid; ++i) {
        a(i, i) = -2.0 * c;
        if (i > 0) a(i, i - 1) = c;
        if (i + 1 < n_grid) a(i, i + 1) = c;
    }
    return DiscreteOperator(std::move(a), OperatorKind::dirichlet_laplacian_fd);
}

SpaceSpec dirichlet_space(int n_grid, double length) {
    if (n_grid < 1 || !(length > 0.0)) throw std::invalid_argument("dirichlet_space: degenerate grid");
    return SpaceSpec::uniform(static_cast<std::size_t>(n_grid), length / (n_grid + 1));
}

DelayLift make_delay_generator(int n, double d, int n_past) {
    if (n < 1) throw std::invalid_argument("make_delay_generator: n must be >= 1");
    if (n_past < 2) throw std::invalid_argument("make_delay_generator: n_past must be >= 2");
    if (!(d > 0.0)) throw std::invalid_argument("make_delay_generator: delay must be positive");

    const double h = d / n_past;
    const int dim = n + n * n_past;
    Matrix a = Matrix::Zero(dim, dim);
    for (int c = 0; c < n; ++c) {
        a(c, c) = -1.0;
        const int base = n + c * n_past;
        for (int j = 0; j < n_past; ++j) {
            const int row = base + j;
            a(row, row) = -1.0 / h;
            const int right = (j + 1 < n_past) ? row + 1 : c;
            a(row, right) += 1.0 / h;
        }
    }

    Vector w(dim);
    w.head(n).setOnes();
    w.tail(dim - n).setConstant(h);

    DelayLift lift{DiscreteOperator(std::move(a), OperatorKind::delay_generator),
                   SpaceSpec(std::move(w), BlockLayout{static_cast<std::size_t>(n),
                                                       static_cast<std::size_t>(n * n_past)}),
                   h,
                   {}};
    lift.past_nodes.resize(static_cast<std::size_t>(n_past));
    for (int j = 0; j < n_past; ++j) lift.past_nodes[static_cast<std::size_t>(j)] = -d + j * h;
    return lift;
}

// ---------------------------------------------------------------------------
// Operations

Vector semigroup_apply(const DiscreteOperator& op, double dt, const Vector& x) {
    if (dt < 0.0) throw std::invalid_argument("semigroup_apply: dt must be nonnegative");
    if (static_cast<std::size_t>(x.size()) != op.dim()) throw std::invalid_argument("semigroup_apply: shape mismatch");
    if (dt == 0.0 || op.is_zero()) return x;
    return op.exponential(dt) * x;
}

double b_norm(const BOperatorSpec& b, const Vector& x) {
    if (x.size() != b.gram().rows()) throw std::invalid_argument("b_norm: shape mismatch");
    return std::sqrt(std::max(0.0, x.dot(b.gram() * x)));
}

DiagnosticReport check_b_condition(const DiscreteOperator& op, const BOperatorSpec& b) {
    if (op.dim() != b.space().dim()) throw std::invalid_argument("check_b_condition: shape mismatch");
    const SpaceSpec& space = b.space();
    // x^T M x = <(-A^*B + c0 B - [strong] I) x, x>_H
    Matrix m = -op.matrix().transpose() * b.gram() + b.c0() * b.gram();
    if (b.mode() == BMode::strong) m -= Matrix(space.weights().asDiagonal());
    m = 0.5 * (m + m.transpose());
    const Vector inv_sqrt_w = space.weights().cwiseSqrt().cwiseInverse();
    const Matrix normalized = inv_sqrt_w.asDiagonal() * m * inv_sqrt_w.asDiagonal();
    Eigen::SelfAdjointEigenSolver<Matrix> eig(normalized);
    const double min_eig = eig.eigenvalues().minCoeff();

    DiagnosticReport r;
    r.name = "b_condition";
    r.samples_used = 1;
    r.tolerance = 1e-8;
    r.estimates["min_eigenvalue"] = min_eig;
    r.estimates["c0"] = b.c0();
    r.verdict = min_eig >= -r.tolerance ? Verdict::pass : Verdict::fail;
    r.witness = {{"operator_kind", to_string(op.kind())},
                 {"mode", b.mode() == BMode::strong ? "strong" : "weak"}};
    Eigen::Index arg = 0;
    eig.eigenvalues().minCoeff(&arg);
    std::vector<double> vec(eig.eigenvectors().col(arg).data(),
                            eig.eigenvectors().col(arg).data() + eig.eigenvectors().rows());
    r.witness["min_eigenvector"] = vec;
    return r;
}

DiagnosticReport check_positivity_preserving(const DiscreteOperator& op, const std::vector<double>& dt_list,
                                             int n_samples, std::uint64_t seed) {
    if (dt_list.empty()) throw std::invalid_argument("check_positivity_preserving: dt_list is empty");
    const auto n = static_cast<Eigen::Index>(op.dim());
    double worst = 0.0;
    double worst_dt = dt_list.front();
    int worst_sample = -1;
    for (int s = 0; s < n_samples; ++s) {
        Rng rng(derive_seed(seed, streams::probes, static_cast<std::uint64_t>(s)));
        std::uniform_real_distribution<double> unif(0.0, 1.0);
        std::bernoulli_distribution keep(0.5);
        Vector x(n);
        for (Eigen::Index i = 0; i < n; ++i) x[i] = keep(rng) ? unif(rng) : 0.0;
        const double xinf = x.cwiseAbs().maxCoeff();
        if (xinf == 0.0) continue;
        for (double dt : dt_list) {
            const Vector y = semigroup_apply(op, dt, x);
            const double rel = y.minCoeff() / xinf;
            if (rel < worst) {
                worst = rel;
                worst_dt = dt;
                worst_sample = s;
            }
        }
    }
    DiagnosticReport r;
    r.name = "positivity_preserving";
    r.samples_used = static_cast<std::size_t>(n_samples) * dt_list.size();
    r.tolerance = 1e-10;
    r.estimates["worst_relative_min"] = worst;
    r.verdict = worst >= -r.tolerance ? Verdict::pass : Verdict::fail;
    r.witness = {{"seed", seed}, {"sample", worst_sample}, {"dt", worst_dt}, {"operator_kind", to_string(op.kind())}};
    return r;
}

}  // namespace hjblab
