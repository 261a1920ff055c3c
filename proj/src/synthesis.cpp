#include "hjblab/synthesis.hpp"

#include "hjblab/parallel.hpp"
#include "hjblab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace hjblab {

std::string to_string(PolicyProvenance p) {
    switch (p) {
        case PolicyProvenance::closed_form_gamma: return "closed_form_gamma";
        case PolicyProvenance::policy_iteration: return "policy_iteration";
        case PolicyProvenance::oracle: return "oracle";
    }
    return "unknown";
}

// ---------------------------------------------------------------------------
// Policy

Policy::Policy(ControlSpec spec, FeedbackFn raw, PolicyProvenance provenance, std::string gradient_source)
    : spec_(std::move(spec)), raw_(std::move(raw)), provenance_(provenance), gradient_source_(std::move(gradient_source)) {
    if (!raw_) throw std::invalid_argument("Policy: empty feedback");
}

Policy Policy::zero(const ControlSpec& spec) {
    const auto q = static_cast<Eigen::Index>(spec.dim());
    return Policy(spec, [q](double, const Vector&, Vector& out) { out = Vector::Zero(q); }, PolicyProvenance::oracle,
                  "none");
}

bool Policy::apply(double t, const Vector& x, Vector& out) const {
    raw_(t, x, out);
    const bool clipped = spec_.clip(out);
    counters_->evaluations.fetch_add(1, std::memory_order_relaxed);
    if (clipped) counters_->clips.fetch_add(1, std::memory_order_relaxed);
    return clipped;
}

FeedbackFn Policy::feedback() const {
    Policy self = *this;
    return [self](double t, const Vector& x, Vector& out) { self.apply(t, x, out); };
}

ControlRule Policy::rule() const {
    Policy self = *this;
    return [self](std::size_t, std::size_t, double s, const Vector& x, Vector& out) { self.apply(s, x, out); };
}

Policy Policy::scaled(double gain) const {
    auto raw = raw_;
    return Policy(spec_, [raw, gain](double t, const Vector& x, Vector& out) {
        raw(t, x, out);
        out *= gain;
    }, provenance_, gradient_source_ + " (gain x" + std::to_string(gain) + ")");
}

double Policy::clip_fraction() const {
    const auto n = evaluations();
    return n == 0 ? 0.0 : static_cast<double>(clips()) / static_cast<double>(n);
}

void Policy::reset_counters() const {
    counters_->evaluations.store(0);
    counters_->clips.store(0);
}

// ---------------------------------------------------------------------------
// Hamiltonian

double hamiltonian_objective(const ControlProblem& problem, const Vector& x, const Vector& p, const Vector& a) {
    Vector b(x.size());
    problem.drift(x, a, b);
    return problem.space.inner(p, b) + problem.running_cost(x, a);
}

HamiltonianProbe hamiltonian_min(const ControlProblem& problem, const Vector& x, const Vector& p, double m,
                                 const HamiltonianSolverConfig& cfg) {
    if (!(m > 0.0)) throw std::invalid_argument("hamiltonian_min: m must be positive");
    const ControlSpec& spec = problem.control;
    const auto q = static_cast<Eigen::Index>(spec.dim());
    const Vector winv = spec.weights().cwiseInverse();
    auto f = [&](const Vector& a) { return hamiltonian_objective(problem, x, p, a); };
    auto grad = [&](const Vector& a) {
        Vector g(q);
        Vector ap = a, am = a;
        for (Eigen::Index i = 0; i < q; ++i) {
            const double h = cfg.fd_step * (1.0 + std::abs(a[i]));
            ap[i] = a[i] + h;
            am[i] = a[i] - h;
            g[i] = (f(ap) - f(am)) / (2.0 * h);
            ap[i] = a[i];
            am[i] = a[i];
        }
        return Vector(winv.cwiseProduct(g));
    };

    Rng rng(derive_seed(cfg.seed, streams::probes, 0));
    std::normal_distribution<double> normal;

    HamiltonianProbe best;
    best.x = x;
    best.p = p;
    best.m = m;
    best.value = std::numeric_limits<double>::infinity();
    bool all_converged = true;
    int total_iter = 0;

    for (int s = 0; s < std::max(1, cfg.n_starts); ++s) {
        Vector a = Vector::Zero(q);
        if (s > 0) {
            for (Eigen::Index i = 0; i < q; ++i) a[i] = normal(rng);
            const double na = spec.norm(a);
            if (na > 0.0) a *= m * 0.5 / na;
        }
        a = spec.project_truncated(a, m);
        double fa = f(a);
        double step = 1.0;
        bool converged = false;
        int it = 0;
        for (; it < cfg.max_iterations; ++it) {
            const Vector g = grad(a);
            bool accepted = false;
            Vector next;
            double fn = fa;
            for (int bt = 0; bt < 60; ++bt) {
                next = spec.project_truncated(a - step * g, m);
                fn = f(next);
                const Vector d = next - a;
                // Armijo on the projected arc.
                if (fn <= fa + 1e-4 * spec.weights().dot(g.cwiseProduct(d))) {
                    accepted = true;
                    break;
                }
                step *= 0.5;
            }
            if (!accepted) {
                converged = true;
                break;
            }
            const double move = spec.norm(next - a);
            a = next;
            const double drop = fa - fn;
            fa = fn;
            step = std::min(1.0, step * 2.0);
            if (move <= cfg.tol * (1.0 + spec.norm(a)) || drop <= cfg.tol * (1.0 + std::abs(fa))) {
                converged = true;
                break;
            }
        }
        total_iter += it;
        all_converged = all_converged && converged;
        if (fa < best.value) {
            best.value = fa;
            best.argmin = a;
        }
    }
    best.converged = all_converged;
    best.iterations = total_iter;
    return best;
}

Vector gamma_separated(const ControlProblem& problem, const Vector& p) {
    if (!problem.cost_structure) {
        throw std::invalid_argument("gamma_separated: problem '" + problem.name + "' has no separated cost structure");
    }
    const auto& cs = *problem.cost_structure;
    const Vector& w = problem.space.weights();
    const Vector& wc = problem.control.weights();
    // <p, C a>_H = <W_c^{-1} C^T W p, a>_Lambda.
    const Vector dual = wc.cwiseInverse().cwiseProduct(cs.coupling.transpose() * w.cwiseProduct(p));
    Vector a = cs.dl2_inverse(-dual);
    problem.control.clip(a);
    return a;
}

GammaSelector separated_selector(const ControlProblem& problem) {
    return [problem](const Vector&, const Vector& p) { return gamma_separated(problem, p); };
}

Policy gamma_policy(const ControlProblem& problem, std::function<Vector(double, const Vector&)> gradient,
                    PolicyProvenance provenance, std::string source) {
    if (!problem.cost_structure) throw std::invalid_argument("gamma_policy: separated cost structure required");
    auto cs = *problem.cost_structure;
    const Vector w = problem.space.weights();
    const Vector wc_inv = problem.control.weights().cwiseInverse();
    const Matrix ct = cs.coupling.transpose();
    auto inv = cs.dl2_inverse;
    return Policy(
        problem.control,
        [gradient, w, wc_inv, ct, inv](double t, const Vector& x, Vector& out) {
            const Vector p = gradient(t, x);
            const Vector dual = wc_inv.cwiseProduct(ct * w.cwiseProduct(p));
            out = inv(-dual);
        },
        provenance, std::move(source));
}

Policy riccati_policy(const ControlProblem& problem, const RiccatiSolution& sol) {
    auto shared = std::make_shared<const RiccatiSolution>(sol);
    return Policy(
        problem.control,
        [shared](double t, const Vector& x, Vector& out) {
            out.resize(1);
            out[0] = shared->gain_at(t) * x[0];
        },
        PolicyProvenance::oracle, "scalar_riccati");
}

Policy matrix_riccati_policy(const ControlProblem& problem, std::shared_ptr<const MatrixRiccatiSolution> sol) {
    const SpaceSpec space = problem.space;
    return gamma_policy(
        problem, [sol, space](double t, const Vector& x) { return sol->h_gradient(space, t, x); },
        PolicyProvenance::closed_form_gamma, "matrix_riccati");
}

// ---------------------------------------------------------------------------
// Closed loop

double ClosedLoopRun::clip_fraction() const {
    const auto n = trajectory.controls.size();
    return n == 0 ? 0.0 : static_cast<double>(clip_events) / static_cast<double>(n);
}

ClosedLoopRun closed_loop_simulate(const ControlProblem& problem, const Policy& policy, double t, const Vector& x,
                                   std::uint64_t seed, std::size_t n_steps, std::size_t path_index) {
    ClosedLoopRun run;
    std::size_t clips = 0;
    ControlRule rule = [&policy, &clips](std::size_t, std::size_t, double s, const Vector& state, Vector& out) {
        if (policy.apply(s, state, out)) ++clips;
    };
    run.trajectory = simulate_rule(problem, t, x, rule, seed, n_steps, path_index);
    run.clip_events = clips;
    return run;
}

std::shared_ptr<const std::vector<Matrix>> closed_loop_traces(const ControlProblem& problem, const Policy& policy,
                                                               double t, const Vector& x, std::size_t n_paths,
                                                               std::size_t n_steps, std::uint64_t seed) {
    auto traces = std::make_shared<std::vector<Matrix>>(n_paths);
    const auto q = static_cast<Eigen::Index>(problem.control.dim());
    const TimeGrid grid(t, problem.horizon, n_steps);
    const auto rule = policy.rule();
    parallel::parallel_for(n_paths, [&](std::size_t i) {
        Matrix m(q, static_cast<Eigen::Index>(n_steps));
        run_coupled(problem, grid, {x}, {rule}, seed, i, [&](const StepView& v) {
            m.col(static_cast<Eigen::Index>(v.step)) = v.controls[0];
        });
        (*traces)[i] = std::move(m);
    });
    return traces;
}

MCEstimate feynman_kac_value(const ControlProblem& problem, const Policy& policy, double t, const Vector& x,
                             std::size_t n_paths, std::size_t n_steps, std::uint64_t seed) {
    return evaluate_rule_cost(problem, t, x, policy.rule(), n_paths, n_steps, seed);
}

// ---------------------------------------------------------------------------
// Optimality

DiagnosticReport verify_optimality(const ControlProblem& problem, const Policy& policy, double t, const Vector& x,
                                   std::size_t n_challengers, const OptimalityConfig& cfg, std::uint64_t seed) {
    const auto q = static_cast<Eigen::Index>(problem.control.dim());
    std::vector<std::string> names{"policy"};
    std::vector<ControlRule> rules{policy.rule()};

    ControlFamily family(problem.control, t, problem.horizon, cfg.n_pieces, cfg.challenger_radius,
                         derive_seed(seed, streams::challenger, 0));
    for (std::size_t i = 0; i < n_challengers; ++i) {
        names.push_back("open_loop_" + std::to_string(i));
        rules.push_back(open_loop(family.random_member(i)));
    }

    ControlFamily shifts(problem.control, t, problem.horizon, cfg.n_pieces, cfg.shift_fraction * cfg.challenger_radius,
                         derive_seed(seed, streams::challenger, 1));
    for (std::size_t i = 0; i < n_challengers; ++i) {
        Rng rng(derive_seed(seed, streams::challenger, 2 + i));
        std::uniform_real_distribution<double> mag(cfg.perturb_min, cfg.perturb_max);
        const double eps = (rng() & 1u ? 1.0 : -1.0) * mag(rng);
        const ControlSignal delta = shifts.random_member(i);
        const ControlSpec spec = problem.control;
        names.push_back("perturbed_" + std::to_string(i));
        rules.push_back([policy, eps, delta, spec, q](std::size_t path, std::size_t step, double s, const Vector& state,
                                                      Vector& out) {
            thread_local Vector d;
            d.resize(q);
            policy.apply(s, state, out);
            delta.value(path, step, s, d);
            out = (1.0 + eps) * out + d;
            spec.clip(out);
        });
    }
    for (const auto& [name, sig] : cfg.extra_signals) {
        names.push_back(name);
        rules.push_back(open_loop(sig));
    }
    for (const auto& [name, pol] : cfg.extra_policies) {
        names.push_back(name);
        rules.push_back(pol.rule());
    }

    const std::vector<Vector> inits(rules.size(), x);
    const auto costs = evaluate_coupled_costs(problem, t, inits, rules, cfg.n_paths, cfg.n_steps, seed);

    double min_margin = std::numeric_limits<double>::infinity();
    std::string worst;
    std::size_t losses = 0;
    nlohmann::json table = nlohmann::json::array();
    for (std::size_t c = 1; c < costs.size(); ++c) {
        const auto d = paired_difference(costs[c], costs[0]);
        const double margin = d.mean + cfg.se_multiplier * d.std_error;
        if (margin < 0.0) ++losses;
        if (margin < min_margin) {
            min_margin = margin;
            worst = names[c];
        }
        table.push_back({{"name", names[c]}, {"cost", costs[c].mean}, {"diff", d.mean}, {"diff_se", d.std_error}});
    }
    if (costs.size() == 1) min_margin = 0.0;

    DiagnosticReport r;
    r.name = "verify_optimality";
    r.samples_used = cfg.n_paths * costs.size();
    r.tolerance = cfg.se_multiplier;
    r.estimates = {{"policy_cost", costs[0].mean},
                   {"policy_cost_se", costs[0].std_error},
                   {"min_margin", min_margin},
                   {"challengers", static_cast<double>(costs.size() - 1)},
                   {"losses", static_cast<double>(losses)}};
    r.witness = {{"t", t},
                 {"x", std::vector<double>(x.data(), x.data() + x.size())},
                 {"seed", seed},
                 {"worst_challenger", worst},
                 {"challengers", table}};
    r.verdict = losses == 0 ? Verdict::pass : Verdict::fail;
    r.notes = "statistical dominance: J(policy) <= J(challenger) + " + std::to_string(cfg.se_multiplier) +
              " paired std errors";
    return r;
}

DiagnosticReport dpp_check(const ControlProblem& problem, const Policy& policy, double t, const Vector& x,
                           double s_mid, const DppConfig& cfg, std::uint64_t seed) {
    const double horizon = problem.horizon;
    if (!(t < horizon)) throw std::invalid_argument("dpp_check: t must be below the horizon");
    if (s_mid < t || !(s_mid < horizon)) throw std::invalid_argument("dpp_check: need t <= s_mid < T");

    DiagnosticReport r;
    r.name = "dpp_check";
    r.tolerance = cfg.se_multiplier;
    const auto lhs = feynman_kac_value(problem, policy, t, x, cfg.n_outer, cfg.n_steps, seed);

    const double dt = (horizon - t) / static_cast<double>(cfg.n_steps);
    const auto n1 = static_cast<std::size_t>(std::lround((s_mid - t) / dt));
    if (n1 == 0) {
        // s_mid = t: the right-hand side is the left-hand side.
        r.samples_used = cfg.n_outer;
        r.estimates = {{"lhs", lhs.mean}, {"rhs", lhs.mean}, {"diff", 0.0}, {"diff_se", 0.0}, {"s_mid", t}};
        r.verdict = Verdict::pass;
        r.notes = "degenerate split s_mid = t";
        return r;
    }
    if (n1 >= cfg.n_steps) throw std::invalid_argument("dpp_check: s_mid too close to the horizon for the grid");
    const double s_eff = t + static_cast<double>(n1) * dt;
    const std::size_t n2 = cfg.n_steps - n1;
    const TimeGrid first(t, s_eff, n1);
    const TimeGrid second(s_eff, horizon, n2);
    const auto rule = policy.rule();

    std::vector<double> rhs(cfg.n_outer);
    parallel::parallel_for(cfg.n_outer, [&](std::size_t i) {
        double running = 0.0;
        Vector end;
        run_coupled(problem, first, {x}, {rule}, seed, i, [&](const StepView& v) {
            running += 0.5 * (v.s1 - v.s0) *
                       (problem.running_cost(v.before[0], v.controls[0]) + problem.running_cost(v.after[0], v.controls[0]));
            if (v.step + 1 == first.n_steps) end = v.after[0];
        });
        const std::uint64_t inner_seed = derive_seed(seed, streams::inner, i);
        double inner = 0.0;
        for (std::size_t j = 0; j < cfg.n_inner; ++j) inner += path_costs(problem, second, {end}, {rule}, inner_seed, j)[0];
        rhs[i] = running + inner / static_cast<double>(cfg.n_inner);
    });
    const auto rhs_est = MCEstimate::from_samples(std::move(rhs));
    const auto d = paired_difference(lhs, rhs_est);

    r.samples_used = cfg.n_outer * (1 + cfg.n_inner);
    r.estimates = {{"lhs", lhs.mean},   {"lhs_se", lhs.std_error}, {"rhs", rhs_est.mean},
                   {"rhs_se", rhs_est.std_error}, {"diff", d.mean}, {"diff_se", d.std_error},
                   {"s_mid", s_eff}};
    r.witness = {{"t", t}, {"x", std::vector<double>(x.data(), x.data() + x.size())}, {"seed", seed}};
    r.verdict = std::abs(d.mean) <= cfg.se_multiplier * d.std_error + 1e-12 * (1.0 + std::abs(lhs.mean))
                    ? Verdict::pass
                    : Verdict::fail;
    r.notes = "outer paths share increments with the left-hand side; inner values re-simulated from X(s_mid)";
    return r;
}

}  // namespace hjblab
