#include "hjblab/cost_value.hpp"

#include "hjblab/parallel.hpp"
#include "hjblab/rng.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace hjblab {

MCEstimate MCEstimate::from_samples(std::vector<double> samples) {
    MCEstimate e;
    e.n_paths = samples.size();
    if (samples.empty()) return e;
    const double n = static_cast<double>(samples.size());
    double sum = 0.0;
    for (double v : samples) sum += v;
    e.mean = sum / n;
    if (samples.size() > 1) {
        double ss = 0.0;
        for (double v : samples) ss += (v - e.mean) * (v - e.mean);
        e.std_error = std::sqrt(ss / (n - 1.0) / n);
    }
    e.samples = std::move(samples);
    return e;
}

MCEstimate MCEstimate::exact(double value) {
    MCEstimate e;
    e.mean = value;
    return e;
}

MCEstimate linear_combination(const std::vector<double>& coeffs, const std::vector<const MCEstimate*>& terms) {
    if (coeffs.size() != terms.size()) throw std::invalid_argument("linear_combination: size mismatch");
    std::size_t n = 0;
    double constant = 0.0;
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (terms[i]->samples.empty()) {
            constant += coeffs[i] * terms[i]->mean;
            continue;
        }
        if (n == 0) n = terms[i]->samples.size();
        if (terms[i]->samples.size() != n) throw std::invalid_argument("linear_combination: path counts differ");
    }
    if (n == 0) return MCEstimate::exact(constant);
    std::vector<double> out(n, constant);
    for (std::size_t i = 0; i < terms.size(); ++i) {
        if (terms[i]->samples.empty()) continue;
        const double c = coeffs[i];
        const auto& s = terms[i]->samples;
        for (std::size_t k = 0; k < n; ++k) out[k] += c * s[k];
    }
    return MCEstimate::from_samples(std::move(out));
}

MCEstimate paired_difference(const MCEstimate& a, const MCEstimate& b) {
    return linear_combination({1.0, -1.0}, {&a, &b});
}

std::vector<MCEstimate> evaluate_coupled_costs(const ControlProblem& problem, double t, const std::vector<Vector>& inits,
                                               const std::vector<ControlRule>& rules, std::size_t n_paths,
                                               std::size_t n_steps, std::uint64_t seed) {
    if (n_paths < 1) throw std::invalid_argument("evaluate_cost: n_paths must be positive");
    if (!(t < problem.horizon)) throw std::invalid_argument("evaluate_cost: t must be below the horizon");
    const TimeGrid grid(t, problem.horizon, n_steps);
    const std::size_t members = inits.size();
    std::vector<std::vector<double>> per_path(n_paths);
    parallel::parallel_for(n_paths, [&](std::size_t i) {
        per_path[i] = path_costs(problem, grid, inits, rules, seed, i);
    });
    std::vector<MCEstimate> out;
    out.reserve(members);
    for (std::size_t m = 0; m < members; ++m) {
        std::vector<double> s(n_paths);
        for (std::size_t i = 0; i < n_paths; ++i) s[i] = per_path[i][m];
        out.push_back(MCEstimate::from_samples(std::move(s)));
    }
    return out;
}

MCEstimate evaluate_rule_cost(const ControlProblem& problem, double t, const Vector& x, const ControlRule& rule,
                              std::size_t n_paths, std::size_t n_steps, std::uint64_t seed) {
    return evaluate_coupled_costs(problem, t, {x}, {rule}, n_paths, n_steps, seed).front();
}

MCEstimate evaluate_cost(const ControlProblem& problem, double t, const Vector& x, const ControlSignal& control,
                         std::size_t n_paths, std::size_t n_steps, std::uint64_t seed) {
    return evaluate_rule_cost(problem, t, x, open_loop(control), n_paths, n_steps, seed);
}

MCEstimate evaluate_feedback_cost(const ControlProblem& problem, const FeedbackFn& feedback, double t,
                                  const Vector& x, std::size_t n_paths, std::size_t n_steps, std::uint64_t seed) {
    ControlRule rule = [feedback](std::size_t, std::size_t, double s, const Vector& state, Vector& out) {
        feedback(s, state, out);
    };
    return evaluate_rule_cost(problem, t, x, rule, n_paths, n_steps, seed);
}

// ---------------------------------------------------------------------------
// Families

ControlFamily::ControlFamily(const ControlSpec& spec, double t0, double t1, int n_pieces, double m,
                             std::uint64_t seed)
    : spec_(spec), t0_(t0), t1_(t1), n_pieces_(n_pieces), m_(m), seed_(seed) {
    if (n_pieces < 1) throw std::invalid_argument("ControlFamily: n_pieces must be positive");
    if (!(m > 0.0)) throw std::invalid_argument("ControlFamily: m must be positive");
    if (!(t1 > t0)) throw std::invalid_argument("ControlFamily: empty interval");
}

void ControlFamily::add(const ControlSignal& signal) { explicit_.push_back(signal.truncated(spec_, m_)); }

ControlSignal ControlFamily::member(std::size_t i) const {
    if (i < explicit_.size()) return explicit_[i];
    return random_member(i - explicit_.size());
}

ControlSignal ControlFamily::random_member(std::size_t i) const {
    Rng rng(derive_seed(seed_, streams::family, i));
    std::normal_distribution<double> normal;
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    const auto q = static_cast<Eigen::Index>(spec_.dim());
    std::vector<Vector> values;
    values.reserve(static_cast<std::size_t>(n_pieces_));
    for (int k = 0; k < n_pieces_; ++k) {
        Vector z(q);
        for (Eigen::Index j = 0; j < q; ++j) z[j] = normal(rng);
        const double nz = spec_.norm(z);
        const double radius = m_ * std::pow(unif(rng), 1.0 / static_cast<double>(q));
        Vector v = nz > 0.0 ? Vector(radius / nz * z) : Vector(Vector::Zero(q));
        values.push_back(spec_.project_truncated(v, m_));
    }
    return ControlSignal::piecewise_constant(t0_, t1_, std::move(values));
}

FamilyEstimate estimate_value_family(const ControlProblem& problem, double t, const Vector& x,
                                     const ControlFamily& family, std::size_t n_candidates,
                                     std::size_t paths_per_candidate, std::size_t n_steps, std::uint64_t seed) {
    if (n_candidates < 1) throw std::invalid_argument("estimate_value_family: need at least one candidate");
    std::vector<ControlSignal> members;
    std::vector<ControlRule> rules;
    for (std::size_t i = 0; i < n_candidates; ++i) {
        members.push_back(family.member(i));
        rules.push_back(open_loop(members.back()));
    }
    const std::vector<Vector> inits(n_candidates, x);
    auto costs = evaluate_coupled_costs(problem, t, inits, rules, paths_per_candidate, n_steps, seed);

    FamilyEstimate out;
    out.candidate_means.reserve(n_candidates);
    for (std::size_t i = 0; i < n_candidates; ++i) {
        out.candidate_means.push_back(costs[i].mean);
        if (costs[i].mean < costs[out.argmin].mean) out.argmin = i;
    }
    out.value = std::move(costs[out.argmin]);
    out.argmin_parameters = members[out.argmin].parameters();
    return out;
}

// ---------------------------------------------------------------------------
// Truncation

DiagnosticReport truncation_scan(const ControlProblem& problem, const std::vector<TruncationPoint>& points,
                                 const std::vector<double>& m_list, const TruncationConfig& cfg, std::uint64_t seed) {
    if (m_list.empty()) throw std::invalid_argument("truncation_scan: empty m_list");
    for (std::size_t i = 1; i < m_list.size(); ++i) {
        if (!(m_list[i] > m_list[i - 1])) throw std::invalid_argument("truncation_scan: m_list must increase");
    }
    if (!cfg.explicit_members.empty() && cfg.explicit_members.size() != points.size()) {
        throw std::invalid_argument("truncation_scan: one explicit member per point");
    }

    DiagnosticReport r;
    r.name = "truncation_scan";
    r.tolerance = cfg.se_multiplier;
    r.witness = nlohmann::json::array();
    const auto q = static_cast<std::size_t>(problem.control.dim());

    bool monotone = true;
    bool flat = true;
    double m_bar_max = m_list.front();
    std::size_t samples = 0;

    for (std::size_t ip = 0; ip < points.size(); ++ip) {
        const auto& pt = points[ip];
        // Members of sub-family i: zero control, the explicit member, random draws.
        std::vector<ControlRule> rules;
        std::vector<std::size_t> owner;
        for (std::size_t i = 0; i < m_list.size(); ++i) {
            const double m = m_list[i];
            ControlFamily fam(problem.control, pt.t, problem.horizon, cfg.n_pieces, m,
                              derive_seed(seed, streams::family, i));
            fam.add(ControlSignal::zero(q));
            if (!cfg.explicit_members.empty()) fam.add(cfg.explicit_members[ip]);
            for (std::size_t c = 0; c < fam.n_explicit() + cfg.n_random; ++c) {
                rules.push_back(open_loop(fam.member(c)));
                owner.push_back(i);
            }
        }
        const std::vector<Vector> inits(rules.size(), pt.x);
        const auto costs = evaluate_coupled_costs(problem, pt.t, inits, rules, cfg.n_paths, cfg.n_steps, seed);
        samples += cfg.n_paths * rules.size();

        std::vector<std::size_t> best(m_list.size());
        std::size_t running = 0;
        bool have = false;
        for (std::size_t i = 0; i < m_list.size(); ++i) {
            for (std::size_t c = 0; c < rules.size(); ++c) {
                if (owner[c] != i) continue;
                if (!have || costs[c].mean < costs[running].mean) {
                    running = c;
                    have = true;
                }
            }
            best[i] = running;
        }

        std::vector<double> means, ses;
        for (std::size_t i = 0; i < m_list.size(); ++i) {
            means.push_back(costs[best[i]].mean);
            ses.push_back(costs[best[i]].std_error);
            if (i > 0 && means[i] > means[i - 1]) monotone = false;
        }
        const MCEstimate& last = costs[best.back()];
        std::size_t bar = m_list.size() - 1;
        for (std::size_t i = m_list.size(); i-- > 0;) {
            const auto d = paired_difference(costs[best[i]], last);
            if (std::abs(d.mean) <= cfg.se_multiplier * d.std_error + 1e-12 * (1.0 + std::abs(last.mean))) {
                bar = i;
            } else {
                break;
            }
        }
        const double m_bar = m_list[bar];
        m_bar_max = std::max(m_bar_max, m_bar);
        if (m_list.size() > 1 && bar + 1 == m_list.size()) flat = false;
        r.witness.push_back({{"t", pt.t},
                             {"x", std::vector<double>(pt.x.data(), pt.x.data() + pt.x.size())},
                             {"m", m_list},
                             {"value", means},
                             {"std_error", ses},
                             {"m_bar", m_bar},
                             {"seed", seed}});
    }
    r.samples_used = samples;
    r.estimates = {{"m_bar", m_bar_max}, {"m_max", m_list.back()}, {"monotone", monotone ? 1.0 : 0.0}};
    r.verdict = monotone && flat ? Verdict::pass : Verdict::fail;
    r.notes = "V^m non-increasing in m and flat beyond m_bar within paired standard errors";
    return r;
}

// ---------------------------------------------------------------------------
// Gradients

GradientEstimate gradient_fd(const ControlProblem& problem, const ValueEvaluator& value, double t, const Vector& x,
                             double h, std::uint64_t seed, const std::vector<Vector>& directions) {
    const auto& space = problem.space;
    const auto n = static_cast<Eigen::Index>(space.dim());
    if (h <= 0.0) h = 1e-3 * (1.0 + space.norm(x));

    std::vector<Vector> dirs = directions;
    if (dirs.empty()) {
        for (Eigen::Index i = 0; i < n; ++i) {
            Vector e = Vector::Zero(n);
            e[i] = 1.0 / std::sqrt(space.weights()[i]);
            dirs.push_back(e);
        }
    }

    GradientEstimate g;
    g.gradient = Vector::Zero(n);
    g.directional.resize(static_cast<Eigen::Index>(dirs.size()));
    g.directional_se.resize(static_cast<Eigen::Index>(dirs.size()));
    for (std::size_t k = 0; k < dirs.size(); ++k) {
        const Vector xp = x + h * dirs[k];
        const Vector xm = x - h * dirs[k];
        const auto vp = value(t, xp, seed);
        const auto vm = value(t, xm, seed);
        const auto diff = paired_difference(vp, vm);
        const auto ki = static_cast<Eigen::Index>(k);
        g.directional[ki] = diff.mean / (2.0 * h);
        g.directional_se[ki] = diff.std_error / (2.0 * h);
        g.gradient += g.directional[ki] * dirs[k];
        if (diff.std_error > std::abs(diff.mean)) {
            g.noisy = true;
            g.warnings.push_back("direction " + std::to_string(k) + ": std error exceeds the difference");
        }
    }
    return g;
}

std::string to_string(ValueMethod m) { return m == ValueMethod::family_inf ? "family_inf" : "policy_iteration"; }

void write_value_field_csv(std::ostream& os, const ValueField& field) {
    const std::size_t dim = field.states.empty() ? 0 : static_cast<std::size_t>(field.states.front().size());
    os << "t";
    for (std::size_t i = 0; i < dim; ++i) os << ",x" << i;
    os << ",value,std_error";
    if (field.gradients) {
        for (std::size_t i = 0; i < dim; ++i) os << ",g" << i;
    }
    os << '\n' << std::setprecision(17);
    for (std::size_t k = 0; k < field.states.size(); ++k) {
        os << field.times[k];
        for (Eigen::Index i = 0; i < field.states[k].size(); ++i) os << ',' << field.states[k][i];
        os << ',' << field.values[k].mean << ',' << field.values[k].std_error;
        if (field.gradients) {
            const Vector& g = (*field.gradients)[k];
            for (Eigen::Index i = 0; i < g.size(); ++i) os << ',' << g[i];
        }
        os << '\n';
    }
}

// ---------------------------------------------------------------------------
// Interpolation of nodal gradients

GradientInterpolator::GradientInterpolator(std::vector<double> t_nodes, std::vector<Vector> x_nodes,
                                           std::vector<std::vector<Vector>> gradients)
    : t_nodes_(std::move(t_nodes)), x_nodes_(std::move(x_nodes)), gradients_(std::move(gradients)) {
    if (t_nodes_.empty() || x_nodes_.empty()) throw std::invalid_argument("GradientInterpolator: empty grid");
    if (gradients_.size() != t_nodes_.size()) throw std::invalid_argument("GradientInterpolator: shape mismatch");
    const auto n = x_nodes_.front().size();
    lo_ = x_nodes_.front();
    hi_ = x_nodes_.front();
    for (const auto& x : x_nodes_) {
        lo_ = lo_.cwiseMin(x);
        hi_ = hi_.cwiseMax(x);
    }
    const std::size_t j_count = x_nodes_.size();
    const std::size_t k_nb = std::min<std::size_t>(j_count - 1, std::max<std::size_t>(2, 2 * static_cast<std::size_t>(n)));
    jacobians_.resize(t_nodes_.size());
    for (std::size_t it = 0; it < t_nodes_.size(); ++it) {
        if (gradients_[it].size() != j_count) throw std::invalid_argument("GradientInterpolator: shape mismatch");
        jacobians_[it].assign(j_count, Matrix::Zero(n, n));
        if (k_nb == 0) continue;
        for (std::size_t j = 0; j < j_count; ++j) {
            std::vector<std::size_t> order(j_count);
            std::iota(order.begin(), order.end(), 0);
            std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
                return (x_nodes_[a] - x_nodes_[j]).squaredNorm() < (x_nodes_[b] - x_nodes_[j]).squaredNorm();
            });
            Matrix dx(static_cast<Eigen::Index>(k_nb), n), dg(static_cast<Eigen::Index>(k_nb), n);
            for (std::size_t k = 0; k < k_nb; ++k) {
                const std::size_t o = order[k + 1];
                dx.row(static_cast<Eigen::Index>(k)) = (x_nodes_[o] - x_nodes_[j]).transpose();
                dg.row(static_cast<Eigen::Index>(k)) = (gradients_[it][o] - gradients_[it][j]).transpose();
            }
            // dx J^T = dg in the least-squares (minimum norm) sense.
            jacobians_[it][j] = dx.completeOrthogonalDecomposition().solve(dg).transpose();
        }
    }
}

void GradientInterpolator::at_time_node(std::size_t it, const Vector& x, Vector& out, bool& outside) const {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < x_nodes_.size(); ++j) {
        const double d = (x - x_nodes_[j]).squaredNorm();
        if (d < best_d) {
            best_d = d;
            best = j;
        }
    }
    outside = (x.array() < lo_.array()).any() || (x.array() > hi_.array()).any();
    if (outside) {
        out = gradients_[it][best];
    } else {
        out = gradients_[it][best] + jacobians_[it][best] * (x - x_nodes_[best]);
    }
}

void GradientInterpolator::operator()(double t, const Vector& x, Vector& out) const {
    bool outside = false;
    if (t <= t_nodes_.front() || t_nodes_.size() == 1) {
        at_time_node(0, x, out, outside);
    } else if (t >= t_nodes_.back()) {
        at_time_node(t_nodes_.size() - 1, x, out, outside);
    } else {
        const auto up = static_cast<std::size_t>(std::upper_bound(t_nodes_.begin(), t_nodes_.end(), t) - t_nodes_.begin());
        const double w = (t - t_nodes_[up - 1]) / (t_nodes_[up] - t_nodes_[up - 1]);
        Vector lo_val, hi_val;
        bool o1 = false, o2 = false;
        at_time_node(up - 1, x, lo_val, o1);
        at_time_node(up, x, hi_val, o2);
        out = (1.0 - w) * lo_val + w * hi_val;
        outside = o1 || o2;
    }
    if (outside) extrapolations_->fetch_add(1, std::memory_order_relaxed);
}

// ---------------------------------------------------------------------------
// Policy iteration

PolicyIterationResult policy_iteration(const ControlProblem& problem, const std::vector<double>& t_grid,
                                       const std::vector<Vector>& x_grid, const GammaSelector& gamma,
                                       std::size_t n_rounds, const PolicyIterationConfig& cfg, std::uint64_t seed) {
    if (!problem.cost_structure) {
        throw std::invalid_argument("policy_iteration: problem '" + problem.name + "' has no separated cost structure");
    }
    if (t_grid.empty() || x_grid.empty()) throw std::invalid_argument("policy_iteration: empty grid");
    for (std::size_t i = 1; i < t_grid.size(); ++i) {
        if (!(t_grid[i] > t_grid[i - 1])) throw std::invalid_argument("policy_iteration: t_grid must increase");
    }
    if (n_rounds < 1) throw std::invalid_argument("policy_iteration: n_rounds must be positive");

    const auto q = static_cast<Eigen::Index>(problem.control.dim());
    const double horizon = problem.horizon;
    FeedbackFn policy = cfg.initial ? cfg.initial : FeedbackFn([q](double, const Vector&, Vector& out) {
        out = Vector::Zero(q);
    });

    // Terminal gradient of g by central differences (deterministic).
    auto terminal_gradient = [&](const Vector& x) {
        const double h = cfg.fd_step > 0.0 ? cfg.fd_step : 1e-3 * (1.0 + problem.space.norm(x));
        Vector g = Vector::Zero(x.size());
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            Vector e = Vector::Zero(x.size());
            e[i] = 1.0 / std::sqrt(problem.space.weights()[i]);
            const double d = (problem.terminal_cost(x + h * e) - problem.terminal_cost(x - h * e)) / (2.0 * h);
            g += d * e;
        }
        return g;
    };
    auto steps_for = [&](double t) {
        const double frac = (horizon - t) / horizon;
        return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(frac * static_cast<double>(cfg.n_steps))));
    };

    PolicyIterationResult res;
    std::vector<double> previous;
    for (std::size_t round = 0; round < n_rounds; ++round) {
        ValueField field;
        field.method = ValueMethod::policy_iteration;
        std::vector<std::vector<Vector>> grads(t_grid.size());
        std::vector<Vector> flat_grads;
        std::vector<double> current;

        const FeedbackFn pol = policy;
        ValueEvaluator evaluator = [&problem, pol, &cfg, &steps_for](double t, const Vector& x, std::uint64_t s) {
            return evaluate_feedback_cost(problem, pol, t, x, cfg.n_paths, steps_for(t), s);
        };

        for (std::size_t it = 0; it < t_grid.size(); ++it) {
            const double t = t_grid[it];
            for (const auto& x : x_grid) {
                MCEstimate v;
                Vector g;
                if (t >= horizon) {
                    v = MCEstimate::exact(problem.terminal_cost(x));
                    g = terminal_gradient(x);
                } else {
                    v = evaluator(t, x, seed);
                    g = gradient_fd(problem, evaluator, t, x, cfg.fd_step, seed).gradient;
                }
                current.push_back(v.mean);
                field.times.push_back(t);
                field.states.push_back(x);
                field.values.push_back(std::move(v));
                grads[it].push_back(g);
                flat_grads.push_back(g);
            }
        }
        field.gradients = flat_grads;
        res.round_values.push_back(current);

        double change = std::numeric_limits<double>::infinity();
        if (!previous.empty()) {
            change = 0.0;
            for (std::size_t i = 0; i < current.size(); ++i) change = std::max(change, std::abs(current[i] - previous[i]));
        }
        if (round > 0) res.sup_changes.push_back(change);
        previous = current;

        auto interp = std::make_shared<GradientInterpolator>(t_grid, x_grid, grads);
        const ControlSpec spec = problem.control;
        policy = [interp, gamma, spec](double t, const Vector& x, Vector& out) {
            Vector p;
            (*interp)(t, x, p);
            out = gamma(x, p);
            spec.clip(out);
        };
        res.field = std::move(field);
        res.rounds = round + 1;

        double scale = 1.0;
        for (double v : current) scale = std::max(scale, std::abs(v));
        if (change < cfg.tol * scale) {
            res.converged = true;
            break;
        }
    }
    res.policy = policy;
    return res;
}

}  // namespace hjblab
