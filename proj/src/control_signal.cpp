#include "hjblab/control_signal.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace hjblab {

TimeGrid::TimeGrid(double start, double end, std::size_t steps) : t0(start), t1(end), n_steps(steps) {
    if (!(end > start)) throw std::invalid_argument("TimeGrid: end must exceed start");
    if (steps < 1) throw std::invalid_argument("TimeGrid: n_steps must be >= 1");
}

ControlSignal::ControlSignal(std::size_t dim, Fn fn, std::vector<Vector> parameters)
    : dim_(dim), fn_(std::move(fn)), parameters_(std::move(parameters)) {}

Vector ControlSignal::value(std::size_t path, std::size_t step, double s) const {
    Vector out(static_cast<Eigen::Index>(dim_));
    fn_(path, step, s, out);
    return out;
}

ControlSignal ControlSignal::constant(Vector a) {
    const std::size_t dim = static_cast<std::size_t>(a.size());
    std::vector<Vector> params{a};
    return ControlSignal(
        dim, [a = std::move(a)](std::size_t, std::size_t, double, Vector& out) { out = a; }, std::move(params));
}

ControlSignal ControlSignal::piecewise_constant(double t0, double t1, std::vector<Vector> values) {
    if (values.empty()) throw std::invalid_argument("piecewise_constant: no pieces");
    if (!(t1 > t0)) throw std::invalid_argument("piecewise_constant: empty interval");
    const std::size_t dim = static_cast<std::size_t>(values.front().size());
    const double width = (t1 - t0) / static_cast<double>(values.size());
    auto shared = std::make_shared<const std::vector<Vector>>(values);
    return ControlSignal(
        dim,
        [shared, t0, width](std::size_t, std::size_t, double s, Vector& out) {
            const auto n = shared->size();
            auto i = static_cast<std::size_t>(std::max(0.0, std::floor((s - t0) / width)));
            out = (*shared)[std::min(i, n - 1)];
        },
        std::move(values));
}

ControlSignal ControlSignal::from_traces(std::shared_ptr<const std::vector<Matrix>> traces) {
    if (!traces || traces->empty()) throw std::invalid_argument("from_traces: no traces");
    const std::size_t dim = static_cast<std::size_t>(traces->front().rows());
    return ControlSignal(dim, [traces](std::size_t path, std::size_t step, double, Vector& out) {
        const Matrix& m = traces->at(path);
        out = m.col(static_cast<Eigen::Index>(std::min<std::size_t>(step, static_cast<std::size_t>(m.cols()) - 1)));
    });
}

ControlSignal ControlSignal::from_function(std::size_t dim, std::function<Vector(double)> f) {
    return ControlSignal(dim, [f = std::move(f)](std::size_t, std::size_t, double s, Vector& out) { out = f(s); });
}

ControlSignal ControlSignal::convex_combination(const ControlSignal& a0, const ControlSignal& a1, double lambda) {
    if (a0.dim() != a1.dim()) throw std::invalid_argument("convex_combination: dimension mismatch");
    const auto n = static_cast<Eigen::Index>(a0.dim());
    return ControlSignal(a0.dim(), [a0, a1, lambda, n](std::size_t path, std::size_t step, double s, Vector& out) {
        thread_local Vector v0, v1;
        v0.resize(n);
        v1.resize(n);
        a0.value(path, step, s, v0);
        a1.value(path, step, s, v1);
        out = lambda * v1 + (1.0 - lambda) * v0;
    });
}

ControlSignal ControlSignal::sum(const ControlSignal& a, const ControlSignal& b, double scale_b) {
    if (a.dim() != b.dim()) throw std::invalid_argument("sum: dimension mismatch");
    const auto n = static_cast<Eigen::Index>(a.dim());
    return ControlSignal(a.dim(), [a, b, scale_b, n](std::size_t path, std::size_t step, double s, Vector& out) {
        thread_local Vector vb;
        vb.resize(n);
        a.value(path, step, s, out);
        b.value(path, step, s, vb);
        out += scale_b * vb;
    });
}

ControlSignal ControlSignal::truncated(const ControlSpec& spec, double m) const {
    if (spec.dim() != dim_) throw std::invalid_argument("truncated: dimension mismatch");
    std::vector<Vector> params;
    params.reserve(parameters_.size());
    for (const auto& p : parameters_) params.push_back(spec.project_truncated(p, m));
    auto inner = fn_;
    return ControlSignal(
        dim_,
        [inner, spec, m](std::size_t path, std::size_t step, double s, Vector& out) {
            inner(path, step, s, out);
            out = spec.project_truncated(out, m);
        },
        std::move(params));
}

}  // namespace hjblab
