#pragma once

#include "hjblab/linalg.hpp"
#include "hjblab/problem_models.hpp"

#include <cstddef>
#include <functional>
#include <memory>
#include <vector>

namespace hjblab {

/// Uniform grid s_k = t0 + k dt on [t0, t1].
struct TimeGrid {
    double t0 = 0.0;
    double t1 = 1.0;
    std::size_t n_steps = 1;

    TimeGrid() = default;
    TimeGrid(double start, double end, std::size_t steps);

    double dt() const { return (t1 - t0) / static_cast<double>(n_steps); }
    double time(std::size_t k) const {
        return k == n_steps ? t1 : t0 + static_cast<double>(k) * dt();
    }
};

/// Open-loop control process a(s), possibly path dependent (for replayed
/// feedback traces). Values are held constant on [s_k, s_{k+1}).
class ControlSignal {
public:
    using Fn = std::function<void(std::size_t path, std::size_t step, double s, Vector& out)>;

    ControlSignal() = default;
    ControlSignal(std::size_t dim, Fn fn, std::vector<Vector> parameters = {});

    static ControlSignal constant(Vector a);
    static ControlSignal zero(std::size_t dim) { return constant(Vector::Zero(static_cast<Eigen::Index>(dim))); }
    /// Equal-length pieces on [t0, t1]; piece i holds values[i].
    static ControlSignal piecewise_constant(double t0, double t1, std::vector<Vector> values);
    /// traces[path] is dim x n_steps; the step index selects the column.
    static ControlSignal from_traces(std::shared_ptr<const std::vector<Matrix>> traces);
    static ControlSignal from_function(std::size_t dim, std::function<Vector(double)> f);
    /// Pointwise lambda a1 + (1 - lambda) a0.
    static ControlSignal convex_combination(const ControlSignal& a0, const ControlSignal& a1, double lambda);
    static ControlSignal sum(const ControlSignal& a, const ControlSignal& b, double scale_b = 1.0);

    /// Composition with the projection onto Lambda_0 and ||a|| <= m.
    ControlSignal truncated(const ControlSpec& spec, double m) const;

    std::size_t dim() const { return dim_; }
    bool valid() const { return static_cast<bool>(fn_); }
    void value(std::size_t path, std::size_t step, double s, Vector& out) const { fn_(path, step, s, out); }
    Vector value(std::size_t path, std::size_t step, double s) const;
    /// Parameters describing the signal (piece values for piecewise controls).
    const std::vector<Vector>& parameters() const { return parameters_; }

private:
    std::size_t dim_ = 0;
    Fn fn_;
    std::vector<Vector> parameters_;
};

}  // namespace hjblab
