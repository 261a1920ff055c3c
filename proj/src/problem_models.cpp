#include "hjblab/problem_models.hpp"

#include "hjblab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hjblab {

// ---------------------------------------------------------------------------
// ControlSpec

ControlSpec::ControlSpec(Vector weights, std::optional<Box> box, double p_integrability)
    : weights_(std::move(weights)), box_(std::move(box)), p_(p_integrability) {
    if (weights_.size() == 0) throw std::invalid_argument("ControlSpec: dimension must be positive");
    if ((weights_.array() <= 0.0).any()) throw std::invalid_argument("ControlSpec: weights must be positive");
    if (!(p_ > 2.0)) throw std::invalid_argument("ControlSpec: p_integrability must exceed 2");
    if (box_) {
        if (box_->lo.size() != weights_.size() || box_->hi.size() != weights_.size()) {
            throw std::invalid_argument("ControlSpec: box shape mismatch");
        }
        if ((box_->lo.array() > box_->hi.array()).any()) throw std::invalid_argument("ControlSpec: empty box");
    }
}

ControlSpec ControlSpec::euclidean(std::size_t dim, std::optional<Box> box, double p) {
    return ControlSpec(Vector::Ones(static_cast<Eigen::Index>(dim)), std::move(box), p);
}

double ControlSpec::norm(const Vector& a) const {
    return std::sqrt((weights_.array() * a.array().square()).sum());
}

bool ControlSpec::contains(const Vector& a, double tol) const {
    if (!box_) return true;
    return ((a.array() >= box_->lo.array() - tol) && (a.array() <= box_->hi.array() + tol)).all();
}

bool ControlSpec::clip(Vector& a) const {
    if (!box_) return false;
    bool clipped = false;
    for (Eigen::Index i = 0; i < a.size(); ++i) {
        const double c = std::clamp(a[i], box_->lo[i], box_->hi[i]);
        if (c != a[i]) {
            a[i] = c;
            clipped = true;
        }
    }
    return clipped;
}

Vector ControlSpec::project_truncated(const Vector& a, double m) const {
    const bool finite_ball = std::isfinite(m);
    auto ball = [&](const Vector& v) -> Vector {
        if (!finite_ball) return v;
        const double n = norm(v);
        return n > m ? Vector(v * (m / n)) : v;
    };
    auto boxed = [&](Vector v) {
        clip(v);
        return v;
    };
    if (!box_) return ball(a);
    if (!finite_ball) return boxed(a);

    // Dykstra alternation; both projections are exact in the weighted metric.
    Vector x = a;
    Vector p = Vector::Zero(a.size());
    Vector q = Vector::Zero(a.size());
    for (int it = 0; it < 200; ++it) {
        const Vector y = boxed(x + p);
        p = x + p - y;
        const Vector x_next = ball(y + q);
        q = y + q - x_next;
        const double change = (x_next - x).cwiseAbs().maxCoeff();
        x = x_next;
        if (change < 1e-15) break;
    }
    return ball(boxed(x));
}

// ---------------------------------------------------------------------------
// Scalar building blocks

ScalarReaction ScalarReaction::zero() {
    return {"zero", [](double) { return 0.0; }, [](double) { return 0.0; }, 0.0, 0.0};
}

ScalarReaction ScalarReaction::linear(double k) {
    return {"linear", [k](double r) { return k * r; }, [k](double) { return k; }, std::abs(k), k};
}

ScalarReaction ScalarReaction::clipped_cubic(double radius) {
    if (!(radius > 0.0)) throw std::invalid_argument("clipped_cubic: radius must be positive");
    const double rr = radius;
    auto f = [rr](double r) {
        if (r > rr) return -rr * rr * rr - 3.0 * rr * rr * (r - rr);
        if (r < -rr) return rr * rr * rr - 3.0 * rr * rr * (r + rr);
        return -r * r * r;
    };
    auto df = [rr](double r) {
        const double c = std::clamp(r, -rr, rr);
        return -3.0 * c * c;
    };
    return {"clipped_cubic", f, df, 3.0 * rr * rr, std::nullopt};
}

ScalarReaction ScalarReaction::neg_softplus() {
    auto f = [](double r) { return -(std::max(r, 0.0) + std::log1p(std::exp(-std::abs(r)))); };
    auto df = [](double r) { return -1.0 / (1.0 + std::exp(-r)); };
    return {"neg_softplus", f, df, 1.0, std::nullopt};
}

NemytskiiCost NemytskiiCost::quadratic(double c) {
    return {"quadratic", [c](double r) { return c * r * r; }, [c](double r) { return 2.0 * c * r; }, c,
            c >= 0.0 ? 0.0 : -std::numeric_limits<double>::infinity()};
}

NemytskiiCost NemytskiiCost::zero() { return quadratic(0.0); }

// ---------------------------------------------------------------------------
// ControlProblem

Vector ControlProblem::drift_at(const Vector& x, const Vector& a) const {
    Vector out(x.size());
    drift(x, a, out);
    return out;
}

Matrix ControlProblem::noise_at(const Vector& x) const {
    if (!noise.active()) return Matrix::Zero(x.size(), 0);
    if (noise.constant) return *noise.constant;
    Matrix out(x.size(), static_cast<Eigen::Index>(noise.modes));
    noise.fn(x, out);
    return out;
}

void ControlProblem::validate(std::uint64_t seed) const {
    const auto n = static_cast<Eigen::Index>(space.dim());
    if (op.dim() != space.dim()) throw std::invalid_argument(name + ": operator/space dimension mismatch");
    if (b_op.space().dim() != space.dim()) throw std::invalid_argument(name + ": B/space dimension mismatch");
    if (!(horizon > 0.0)) throw std::invalid_argument(name + ": horizon must be positive");
    if (!drift || !running_cost || !terminal_cost) throw std::invalid_argument(name + ": missing coefficient");
    if (noise.active() && !noise.constant && !noise.fn) throw std::invalid_argument(name + ": noise has no model");
    if (noise.constant && (noise.constant->rows() != n ||
                           noise.constant->cols() != static_cast<Eigen::Index>(noise.modes))) {
        throw std::invalid_argument(name + ": noise matrix shape mismatch");
    }
    if (!control.bounded() && !std::isfinite(cost_floor)) {
        throw std::invalid_argument(name + ": unbounded control set requires costs bounded below");
    }
    if (cost_structure) {
        const auto& cs = *cost_structure;
        if (cs.coupling.rows() != n || cs.coupling.cols() != static_cast<Eigen::Index>(control.dim())) {
            throw std::invalid_argument(name + ": coupling shape mismatch");
        }
        Rng rng(derive_seed(seed, streams::probes, 0));
        std::normal_distribution<double> z(0.0, 1.0);
        for (int s = 0; s < 16; ++s) {
            Vector a(static_cast<Eigen::Index>(control.dim()));
            for (auto& v : a) v = 2.0 * z(rng);
            const Vector back = cs.dl2_inverse(cs.dl2(a));
            if ((back - a).cwiseAbs().maxCoeff() > 1e-8 * (1.0 + a.cwiseAbs().maxCoeff())) {
                throw std::invalid_argument(name + ": dl2_inverse is not the inverse of dl2");
            }
        }
    }
}

namespace {

Vector random_state(Rng& rng, Eigen::Index n, double radius) {
    std::normal_distribution<double> z(0.0, 1.0);
    Vector x(n);
    for (auto& v : x) v = radius * z(rng);
    return x;
}

}  // namespace

DiagnosticReport audit_lipschitz(const ControlProblem& problem, int n_pairs, double radius, std::uint64_t seed) {
    const auto n = static_cast<Eigen::Index>(problem.dim());
    const auto q = static_cast<Eigen::Index>(problem.control.dim());
    double worst_drift = 0.0;
    double worst_noise = 0.0;
    int worst_index = -1;
    for (int i = 0; i < n_pairs; ++i) {
        Rng rng(derive_seed(seed, streams::probes, static_cast<std::uint64_t>(i)));
        const Vector x = random_state(rng, n, radius);
        const Vector y = random_state(rng, n, radius);
        Vector a = random_state(rng, q, radius);
        problem.control.clip(a);
        const double dx = problem.space.norm(x - y);
        if (dx == 0.0) continue;
        const double rd = problem.space.norm(problem.drift_at(x, a) - problem.drift_at(y, a)) / dx;
        // Hilbert-Schmidt norm of sigma(x) - sigma(y) as a map R^q -> H.
        const Matrix ds = problem.noise_at(x) - problem.noise_at(y);
        const double hs = std::sqrt((problem.space.weights().asDiagonal() * ds.cwiseAbs2()).sum());
        const double rn = hs / dx;
        if (rd > worst_drift) {
            worst_drift = rd;
            worst_index = i;
        }
        worst_noise = std::max(worst_noise, rn);
    }
    DiagnosticReport r;
    r.name = "lipschitz_coefficients";
    r.samples_used = static_cast<std::size_t>(n_pairs);
    r.tolerance = 1e-9;
    r.estimates["drift_ratio"] = worst_drift;
    r.estimates["drift_declared"] = problem.drift_lipschitz;
    r.estimates["noise_ratio"] = worst_noise;
    r.estimates["noise_declared"] = problem.noise_lipschitz;
    const bool ok = worst_drift <= problem.drift_lipschitz * (1.0 + r.tolerance) + r.tolerance &&
                    worst_noise <= problem.noise_lipschitz * (1.0 + r.tolerance) + r.tolerance;
    r.verdict = ok ? Verdict::pass : Verdict::fail;
    r.witness = {{"seed", seed}, {"pair", worst_index}, {"radius", radius}};
    return r;
}

DiagnosticReport audit_linear_convex(const ControlProblem& problem, int n_samples, double radius,
                                     std::uint64_t seed) {
    const auto n = static_cast<Eigen::Index>(problem.dim());
    const auto q = static_cast<Eigen::Index>(problem.control.dim());
    double worst_affine = 0.0;
    double worst_convexity = 0.0;  // most negative midpoint defect of l
    for (int i = 0; i < n_samples; ++i) {
        Rng rng(derive_seed(seed, streams::probes, static_cast<std::uint64_t>(i)));
        const Vector x0 = random_state(rng, n, radius);
        const Vector x1 = random_state(rng, n, radius);
        const Vector a0 = random_state(rng, q, radius);
        const Vector a1 = random_state(rng, q, radius);
        const double lambda = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
        const Vector xm = convex_combination(x0, x1, lambda);
        const Vector am = convex_combination(a0, a1, lambda);
        const Vector bmix = lambda * problem.drift_at(x1, a1) + (1.0 - lambda) * problem.drift_at(x0, a0);
        const double scale = 1.0 + bmix.cwiseAbs().maxCoeff();
        worst_affine = std::max(worst_affine, (problem.drift_at(xm, am) - bmix).cwiseAbs().maxCoeff() / scale);
        const double defect = lambda * problem.running_cost(x1, a1) + (1.0 - lambda) * problem.running_cost(x0, a0) -
                              problem.running_cost(xm, am);
        worst_convexity = std::min(worst_convexity, defect);
    }
    DiagnosticReport r;
    r.name = "linear_convex_structure";
    r.samples_used = static_cast<std::size_t>(n_samples);
    r.tolerance = 1e-10;
    r.estimates["affine_defect"] = worst_affine;
    r.estimates["cost_midpoint_defect_min"] = worst_convexity;
    r.verdict = (worst_affine <= r.tolerance && worst_convexity >= -r.tolerance) ? Verdict::pass : Verdict::fail;
    r.witness = {{"seed", seed}};
    return r;
}

bool is_concave_on_grid(const std::function<double(double)>& f, double lo, double hi, int n) {
    const double h = (hi - lo) / n;
    for (int i = 1; i < n; ++i) {
        const double r = lo + i * h;
        const double second = f(r + h) - 2.0 * f(r) + f(r - h);
        if (second > 1e-12 * (1.0 + std::abs(f(r)))) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Reaction-diffusion

ControlProblem build_reaction_diffusion(const ReactionDiffusionConfig& cfg) {
    if (!cfg.reaction.derivative_bound) {
        throw std::invalid_argument("build_reaction_diffusion: reaction '" + cfg.reaction.name +
                                    "' has no declared derivative bound");
    }
    if (!(cfg.nu > 0.0)) throw std::invalid_argument("build_reaction_diffusion: nu must be positive");

    ControlProblem p;
    p.name = "reaction_diffusion";
    p.op = make_dirichlet_laplacian(cfg.n_grid, cfg.length, cfg.diffusivity);
    p.space = dirichlet_space(cfg.n_grid, cfg.length);
    p.b_op = BOperatorSpec::identity(p.space, 1.0, BMode::strong);
    p.horizon = cfg.horizon;

    const auto n = static_cast<Eigen::Index>(cfg.n_grid);
    const double h = cfg.length / (cfg.n_grid + 1);
    const Vector w = p.space.weights();

    std::optional<Box> box;
    if (cfg.control_bound) box = Box{Vector::Constant(n, -*cfg.control_bound), Vector::Constant(n, *cfg.control_bound)};
    p.control = ControlSpec(w, box);

    const auto reaction = cfg.reaction;
    p.reaction = reaction;
    p.drift = [reaction](const Vector& x, const Vector& a, Vector& out) {
        for (Eigen::Index i = 0; i < x.size(); ++i) out[i] = reaction.f(x[i]) - a[i];
    };
    p.drift_lipschitz = *reaction.derivative_bound;

    Matrix sigma;
    if (cfg.noise) {
        sigma = *cfg.noise;
    } else {
        sigma = Matrix::Zero(n, cfg.noise_modes);
        for (int k = 0; k < cfg.noise_modes; ++k) {
            for (Eigen::Index j = 0; j < n; ++j) {
                const double xi = (j + 1) * h;
                sigma(j, k) = cfg.noise_scale * std::sqrt(2.0 / cfg.length) *
                              std::sin((k + 1) * std::numbers::pi * xi / cfg.length);
            }
        }
    }
    p.noise.modes = static_cast<std::size_t>(sigma.cols());
    p.noise.constant = sigma;
    p.noise_lipschitz = 0.0;

    const auto l1 = cfg.l1;
    const auto g = cfg.g;
    const double nu = cfg.nu;
    p.running_cost = [l1, nu, h](const Vector& x, const Vector& a) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) s += l1.f(x[i]) + nu * a[i] * a[i];
        return h * s;
    };
    p.terminal_cost = [g, h](const Vector& x) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) s += g.f(x[i]);
        return h * s;
    };
    p.cost_floor = cfg.length * (cfg.horizon * l1.lower_bound + g.lower_bound);

    SeparatedCost cs;
    cs.l1 = [l1, h](const Vector& x) {
        double s = 0.0;
        for (Eigen::Index i = 0; i < x.size(); ++i) s += l1.f(x[i]);
        return h * s;
    };
    cs.l2 = [nu, h](const Vector& a) { return h * nu * a.squaredNorm(); };
    cs.dl2 = [nu](const Vector& a) -> Vector { return 2.0 * nu * a; };
    cs.dl2_inverse = [nu](const Vector& v) -> Vector { return v / (2.0 * nu); };
    cs.coupling = -Matrix::Identity(n, n);
    cs.nu = nu;
    p.cost_structure = cs;

    if (reaction.linear_coefficient && l1.quadratic_coefficient && g.quadratic_coefficient) {
        LinearQuadraticData lq;
        lq.drift_linear = *reaction.linear_coefficient * Matrix::Identity(n, n);
        lq.coupling = -Matrix::Identity(n, n);
        lq.q = *l1.quadratic_coefficient * Matrix(w.asDiagonal());
        lq.r = nu * Matrix(w.asDiagonal());
        lq.q_terminal = *g.quadratic_coefficient * Matrix(w.asDiagonal());
        lq.sigma = sigma;
        p.lq = lq;
    }
    return p;
}

// ---------------------------------------------------------------------------
// Delay lift

double SddeLift::kernel_integral(const Vector& x, int which) const {
    const Vector& wts = which == 1 ? eta1_weights : eta2_weights;
    return wts.dot(x.tail(wts.size()));
}

SddeLift build_sdde_lift(const SddeConfig& cfg) {
    const double d = cfg.delay;
    auto default_kernel = [d](double xi) { return std::exp(xi) - std::exp(-d); };
    const auto eta1 = cfg.eta1 ? cfg.eta1 : std::function<double(double)>(default_kernel);
    const auto eta2 = cfg.eta2 ? cfg.eta2 : std::function<double(double)>(default_kernel);
    if (std::abs(eta1(-d)) > 1e-12 || std::abs(eta2(-d)) > 1e-12) {
        throw std::invalid_argument("build_sdde_lift: kernels must vanish at -d");
    }
    if (!(cfg.nu > 0.0)) throw std::invalid_argument("build_sdde_lift: nu must be positive");

    DelayLift lift = make_delay_generator(1, d, cfg.n_past);
    SddeLift out;
    out.h = lift.h;
    out.past_nodes = lift.past_nodes;
    const auto np = static_cast<Eigen::Index>(cfg.n_past);
    out.eta1_weights.resize(np);
    out.eta2_weights.resize(np);
    for (Eigen::Index j = 0; j < np; ++j) {
        out.eta1_weights[j] = lift.h * eta1(lift.past_nodes[static_cast<std::size_t>(j)]);
        out.eta2_weights[j] = lift.h * eta2(lift.past_nodes[static_cast<std::size_t>(j)]);
    }

    ControlProblem& p = out.problem;
    p.name = "sdde_lift";
    p.op = lift.op;
    p.space = lift.space;
    p.b_op = BOperatorSpec::inverse_gram(p.space, p.op, 0.0, BMode::weak);
    p.horizon = cfg.horizon;
    p.control = ControlSpec::euclidean(1);
    p.cost_floor = 0.0;

    const Vector w1 = out.eta1_weights;
    const Vector w2 = out.eta2_weights;
    const double ky = cfg.k_y, kz = cfg.k_z, beta = cfg.beta;
    const double log2 = std::log(2.0);
    p.drift = [w1, ky, kz, beta, log2, np](const Vector& x, const Vector& a, Vector& o) {
        const double y = x[0];
        const double z = w1.dot(x.tail(np));
        double b0 = ky * y + kz * z - a[0];
        if (beta != 0.0) b0 += beta * (std::max(y, 0.0) + std::log1p(std::exp(-std::abs(y))) - log2);
        o.setZero();
        o[0] = b0 + y;
    };
    // ||eta||_{L^2} on the quadrature grid, from the weights h eta(xi_j).
    const double eta1_norm = std::sqrt(w1.squaredNorm() / lift.h);
    const double eta2_norm = std::sqrt(w2.squaredNorm() / lift.h);
    p.drift_lipschitz = std::hypot(std::abs(ky + 1.0) + std::abs(beta), std::abs(kz) * eta1_norm);
    p.noise_lipschitz = std::abs(cfg.sigma_z) * eta2_norm;

    const auto dim = static_cast<Eigen::Index>(p.space.dim());
    p.noise.modes = 1;
    if (cfg.sigma_z == 0.0) {
        Matrix s = Matrix::Zero(dim, 1);
        s(0, 0) = cfg.sigma_c;
        p.noise.constant = s;
    } else {
        const double sc = cfg.sigma_c, sz = cfg.sigma_z;
        p.noise.fn = [w2, sc, sz, np](const Vector& x, Matrix& o) {
            o.setZero();
            o(0, 0) = sc + sz * w2.dot(x.tail(np));
        };
    }

    const double q = cfg.q_state, nu = cfg.nu, qt = cfg.q_terminal;
    p.running_cost = [q, nu](const Vector& x, const Vector& a) { return q * x[0] * x[0] + nu * a[0] * a[0]; };
    p.terminal_cost = [qt](const Vector& x) { return qt * x[0] * x[0]; };

    SeparatedCost cs;
    cs.l1 = [q](const Vector& x) { return q * x[0] * x[0]; };
    cs.l2 = [nu](const Vector& a) { return nu * a.squaredNorm(); };
    cs.dl2 = [nu](const Vector& a) -> Vector { return 2.0 * nu * a; };
    cs.dl2_inverse = [nu](const Vector& v) -> Vector { return v / (2.0 * nu); };
    cs.coupling = Matrix::Zero(dim, 1);
    cs.coupling(0, 0) = -1.0;
    cs.nu = nu;
    p.cost_structure = cs;

    if (beta == 0.0 && cfg.sigma_z == 0.0) {
        LinearQuadraticData lq;
        lq.drift_linear = Matrix::Zero(dim, dim);
        lq.drift_linear(0, 0) = ky + 1.0;
        lq.drift_linear.block(0, 1, 1, np) = kz * w1.transpose();
        lq.coupling = cs.coupling;
        lq.q = Matrix::Zero(dim, dim);
        lq.q(0, 0) = q;
        lq.r = Matrix::Constant(1, 1, nu);
        lq.q_terminal = Matrix::Zero(dim, dim);
        lq.q_terminal(0, 0) = qt;
        lq.sigma = *p.noise.constant;
        p.lq = lq;
    }
    return out;
}

// ---------------------------------------------------------------------------
// Scalar LQ benchmark

void RiccatiOracle::validate() const {
    if (!(r_control > 0.0)) throw std::invalid_argument("RiccatiOracle: r_control must be positive");
    if (q_state < 0.0) throw std::invalid_argument("RiccatiOracle: q_state must be nonnegative");
    if (q_terminal < 0.0) throw std::invalid_argument("RiccatiOracle: q_terminal must be nonnegative");
    if (!(horizon > 0.0)) throw std::invalid_argument("RiccatiOracle: horizon must be positive");
}

ControlProblem build_lq_problem(const RiccatiOracle& o) {
    o.validate();
    ControlProblem p;
    p.name = "lq_scalar";
    p.space = SpaceSpec::euclidean(1);
    p.op = DiscreteOperator::zero(1);
    p.b_op = BOperatorSpec::identity(p.space, 1.0, BMode::strong);
    p.horizon = o.horizon;
    p.control = ControlSpec::euclidean(1);
    p.cost_floor = 0.0;

    const double a = o.a_lin, alpha = o.alpha;
    p.drift = [a, alpha](const Vector& x, const Vector& u, Vector& out) { out[0] = a * x[0] + alpha * u[0]; };
    p.drift_lipschitz = std::abs(a);
    p.noise.modes = 1;
    p.noise.constant = Matrix::Constant(1, 1, o.sigma0);

    const double q = o.q_state, r = o.r_control, qt = o.q_terminal;
    p.running_cost = [q, r](const Vector& x, const Vector& u) { return q * x[0] * x[0] + r * u[0] * u[0]; };
    p.terminal_cost = [qt](const Vector& x) { return qt * x[0] * x[0]; };

    SeparatedCost cs;
    cs.l1 = [q](const Vector& x) { return q * x[0] * x[0]; };
    cs.l2 = [r](const Vector& u) { return r * u.squaredNorm(); };
    cs.dl2 = [r](const Vector& u) -> Vector { return 2.0 * r * u; };
    cs.dl2_inverse = [r](const Vector& v) -> Vector { return v / (2.0 * r); };
    cs.coupling = Matrix::Constant(1, 1, alpha);
    cs.nu = r;
    p.cost_structure = cs;

    LinearQuadraticData lq;
    lq.drift_linear = Matrix::Constant(1, 1, a);
    lq.coupling = Matrix::Constant(1, 1, alpha);
    lq.q = Matrix::Constant(1, 1, q);
    lq.r = Matrix::Constant(1, 1, r);
    lq.q_terminal = Matrix::Constant(1, 1, qt);
    lq.sigma = Matrix::Constant(1, 1, o.sigma0);
    p.lq = lq;
    return p;
}

std::pair<ControlProblem, RiccatiOracle> build_lq_benchmark(const RiccatiOracle& oracle) {
    return {build_lq_problem(oracle), oracle};
}

}  // namespace hjblab
