// Runs the eight acceptance criteria and prints one PASS/FAIL line each.
// Exit status is 0 iff every criterion passes.

#include "hjblab/diagnostics.hpp"
#include "hjblab/experiment.hpp"
#include "hjblab/rng.hpp"
#include "hjblab/synthesis.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

using namespace hjblab;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

constexpr std::uint64_t kSeed = 20240601;

std::uint64_t seed(const std::string& label, std::uint64_t i = 0) { return derive_seed(kSeed, label, i); }

Vector scalar(double v) { return Vector::Constant(1, v); }

bool within(double est, double oracle, double se) { return std::abs(est - oracle) <= std::max(0.05 * std::abs(oracle), 3.0 * se); }

std::size_t steps_from(double t) { return std::max<std::size_t>(20, static_cast<std::size_t>(std::lround(100 * (1.0 - t)))); }

struct Lq {
    ControlProblem problem;
    RiccatiSolution sol;
    Policy policy;
};

Lq make_lq() {
    RiccatiOracle o;
    o.a_lin = 0.3;
    o.sigma0 = 0.5;
    auto [problem, oracle] = build_lq_benchmark(o);
    auto sol = riccati_solve(oracle);
    auto pol = riccati_policy(problem, sol);
    return {problem, sol, pol};
}

struct Rd {
    ControlProblem problem;
    std::shared_ptr<const MatrixRiccatiSolution> sol;
    Policy policy;
    Vector profile;
};

Rd make_rd() {
    ReactionDiffusionConfig cfg;
    cfg.n_grid = 8;
    cfg.reaction = ScalarReaction::linear(-0.5);
    auto problem = build_reaction_diffusion(cfg);
    auto sol = std::make_shared<const MatrixRiccatiSolution>(riccati_solve_matrix(problem));
    auto pol = matrix_riccati_policy(problem, sol);
    Vector profile(8);
    for (int i = 0; i < 8; ++i) profile[i] = std::sin(M_PI * (i + 1) / 9.0);
    return {problem, sol, pol, profile};
}

const std::vector<std::pair<double, double>> kLqPoints{{0.0, -1.0}, {0.0, 0.5}, {0.0, 1.5}, {0.3, -1.0}, {0.3, 0.5},
                                                       {0.3, 1.5},  {0.6, -1.0}, {0.6, 0.5}, {0.6, 1.5}};

FamilyEstimate family_value(const ControlProblem& problem, const Policy& pol, double t, const Vector& x,
                            std::size_t n_paths, std::uint64_t s) {
    const auto n_steps = steps_from(t);
    ControlFamily fam(problem.control, t, problem.horizon, 4, 2.0, derive_seed(s, "family", 0));
    fam.add(ControlSignal::zero(problem.control.dim()));
    fam.add(ControlSignal::from_traces(closed_loop_traces(problem, pol, t, x, n_paths, n_steps, s)));
    return estimate_value_family(problem, t, x, fam, 16 + fam.n_explicit(), n_paths, n_steps, s);
}

// 1 -------------------------------------------------------------------------
Outcome criterion_lq_oracle() {
    Outcome o;
    const auto lq = make_lq();
    const std::size_t n = 10000;
    double worst_v = 0.0, worst_pi = 0.0, worst_g = 0.0;

    std::vector<Vector> x_grid;
    for (int k = -4; k <= 4; ++k) x_grid.push_back(scalar(0.5 * k));
    PolicyIterationConfig pc;
    pc.n_paths = 2000;
    pc.n_steps = 100;
    const auto pi = policy_iteration(lq.problem, {0.0, 0.25, 0.5, 0.75, 1.0}, x_grid, separated_selector(lq.problem),
                                     3, pc, seed("c1/pi"));

    std::uint64_t k = 0;
    for (auto [t, xv] : kLqPoints) {
        const Vector x = scalar(xv);
        const double v = lq.sol.value(t, xv);
        const auto fam = family_value(lq.problem, lq.policy, t, x, n, seed("c1/family", k));
        o.require(within(fam.value.mean, v, fam.value.std_error), "family value at t=" + std::to_string(t));
        worst_v = std::max(worst_v, std::abs(fam.value.mean - v) / std::abs(v));

        const auto pv = evaluate_feedback_cost(lq.problem, pi.policy, t, x, n, steps_from(t), seed("c1/pi_eval", k));
        o.require(within(pv.mean, v, pv.std_error), "policy iteration value at t=" + std::to_string(t));
        worst_pi = std::max(worst_pi, std::abs(pv.mean - v) / std::abs(v));

        const ValueEvaluator fk = [&](double tt, const Vector& xx, std::uint64_t s) {
            return feynman_kac_value(lq.problem, lq.policy, tt, xx, n, steps_from(t), s);
        };
        const auto g = gradient_fd(lq.problem, fk, t, x, 0.0, seed("c1/grad", k));
        const double go = 2.0 * lq.sol.p_at(t) * xv;
        o.require(within(g.gradient[0], go, g.directional_se[0]), "gradient at t=" + std::to_string(t));
        worst_g = std::max(worst_g, std::abs(g.gradient[0] - go) / std::abs(go));
        ++k;
    }
    o.detail << "9 points, worst relative error: family " << worst_v << ", policy iteration " << worst_pi
             << ", gradient " << worst_g;
    return o;
}

// 2 -------------------------------------------------------------------------
Outcome criterion_synthesis() {
    Outcome o;
    const auto lq = make_lq();
    const auto rd = make_rd();
    OptimalityConfig oc;
    oc.n_paths = 2000;
    std::size_t checked = 0;
    for (auto [t, xv] : {std::pair{0.0, 1.0}, std::pair{0.3, -1.5}, std::pair{0.6, 0.5}}) {
        oc.n_steps = steps_from(t);
        const auto r = verify_optimality(lq.problem, lq.policy, t, scalar(xv), 50, oc, seed("c2/lq", checked++));
        o.require(r.passed(), "LQ policy lost at t=" + std::to_string(t));
    }
    for (auto [t, amp] : {std::pair{0.0, 1.0}, std::pair{0.5, -0.5}}) {
        oc.n_steps = steps_from(t);
        const auto r = verify_optimality(rd.problem, rd.policy, t, amp * rd.profile, 50, oc, seed("c2/rd", checked++));
        o.require(r.passed(), "reaction-diffusion policy lost at t=" + std::to_string(t));
    }
    OptimalityConfig bad = oc;
    bad.n_steps = 100;
    bad.extra_policies.push_back({"riccati", lq.policy});
    const auto corrupted = verify_optimality(lq.problem, lq.policy.scaled(2.0), 0.0, scalar(1.0), 50, bad,
                                             seed("c2/corrupt"));
    o.require(!corrupted.passed(), "corrupted gain was not rejected");
    o.detail << checked << " (t,x) points x 100 challengers; corrupted gain losses "
             << corrupted.estimate("losses");
    return o;
}

// 3 -------------------------------------------------------------------------
Outcome criterion_fk_dpp() {
    Outcome o;
    const auto lq = make_lq();
    const auto rd = make_rd();
    DppConfig dc;
    dc.n_outer = 400;
    dc.n_inner = 100;
    double worst = 0.0;
    auto fk_vs_family = [&](const ControlProblem& p, const Policy& pol, double t, const Vector& x, double oracle,
                            const std::string& tag, std::uint64_t k) {
        const auto fk = feynman_kac_value(p, pol, t, x, 4000, steps_from(t), seed("c3/fk/" + tag, k));
        const auto fam = family_value(p, pol, t, x, 4000, seed("c3/family/" + tag, k));
        const double se = std::hypot(fk.std_error, fam.value.std_error);
        o.require(std::abs(fk.mean - fam.value.mean) <= 3.0 * se + 1e-12, tag + " FK vs value estimate");
        o.require(within(fk.mean, oracle, fk.std_error), tag + " FK vs oracle");
        worst = std::max(worst, std::abs(fk.mean - fam.value.mean) / std::max(se, 1e-300));
    };
    fk_vs_family(lq.problem, lq.policy, 0.0, scalar(1.0), lq.sol.value(0.0, 1.0), "lq", 0);
    fk_vs_family(lq.problem, lq.policy, 0.4, scalar(-0.8), lq.sol.value(0.4, -0.8), "lq", 1);
    fk_vs_family(rd.problem, rd.policy, 0.0, rd.profile, rd.sol->value(0.0, rd.profile), "rd", 0);
    for (double s : {0.3, 0.6}) {
        dc.n_steps = 100;
        o.require(dpp_check(lq.problem, lq.policy, 0.0, scalar(1.0), s, dc, seed("c3/dpp_lq")).passed(),
                  "LQ dpp at s=" + std::to_string(s));
        o.require(dpp_check(rd.problem, rd.policy, 0.0, rd.profile, s, dc, seed("c3/dpp_rd")).passed(),
                  "reaction-diffusion dpp at s=" + std::to_string(s));
    }
    o.detail << "FK vs value estimate worst |diff|/se " << worst << "; dpp at s in {0.3, 0.6} on LQ and RD";
    return o;
}

// 4 -------------------------------------------------------------------------
Outcome criterion_comparison() {
    Outcome o;
    ComparisonConfig cc;
    cc.n_paths = 1000;
    cc.n_steps = 200;
    cc.order_tol = 1e-8;
    const int n = 8;
    auto forcing = [](double c) {
        return Forcing([c](std::size_t, double, Vector& out) { out = Vector::Constant(n, c); });
    };
    Vector x2(n);
    for (int i = 0; i < n; ++i) x2[i] = std::sin(M_PI * (i + 1) / (n + 1)) - 0.3;
    const Vector x1 = x2 + Vector::Constant(n, 0.05);

    ReactionDiffusionConfig hc;
    hc.n_grid = n;
    const auto heat = build_reaction_diffusion(hc);
    const auto r0 = comparison_check(heat, x1, x2, forcing(0.0), forcing(-0.1), cc, seed("c4/heat"));
    o.require(r0.passed(), "heat equation order");

    hc.reaction = ScalarReaction::neg_softplus();
    const auto nemytskii = build_reaction_diffusion(hc);
    cc.nemytskii_transform = true;
    const auto r1 = comparison_check(nemytskii, x1, x2, forcing(0.0), forcing(-0.1), cc, seed("c4/nemytskii"));
    o.require(r1.passed(), "heat with Lipschitz Nemytskii drift");

    auto broken = heat;
    Matrix a = heat.op.matrix();
    a(1, 0) = -std::abs(a(1, 0)) - 50.0;
    broken.op = DiscreteOperator::custom(a);
    cc.nemytskii_transform = false;
    Vector y1 = x2;
    y1[0] += 1.0;
    const auto r2 = comparison_check(broken, y1, x2, forcing(0.0), forcing(0.0), cc, seed("c4/non_metzler"));
    o.require(!r2.passed(), "non-Metzler generator was not caught");
    o.detail << "worst gap heat " << r0.estimate("worst_gap") << ", nemytskii " << r1.estimate("worst_gap")
             << ", non-Metzler " << r2.estimate("worst_gap");
    return o;
}

// 5 -------------------------------------------------------------------------
Outcome criterion_regularity() {
    Outcome o;
    const auto rd = make_rd();
    o.require(audit_linear_convex(rd.problem, 50, 2.0, seed("c5/audit")).passed(), "instance is not linear-convex");
    const ValueEvaluator fk = [&](double t, const Vector& x, std::uint64_t s) {
        return feynman_kac_value(rd.problem, rd.policy, t, x, 300, steps_from(t), s);
    };
    const NormSpec h{rd.problem.space, std::nullopt, NormTag::H};
    ScanConfig sc;
    sc.center = Vector::Zero(8);
    sc.radius = 1.0;
    sc.n_triples = 200;
    sc.stability_tol = 0.2;
    const auto convex = semiconvexity_scan(fk, sc, h, seed("c5/convexity"), true);
    o.require(convex.passed(), "convexity defect beyond MC slack");
    const auto cave = semiconcavity_scan(fk, sc, h, seed("c5/semiconcavity"));
    o.require(cave.passed() && std::isfinite(cave.estimate("constant")), "semiconcavity constant unstable");

    const auto lq = make_lq();
    const NormSpec hl{lq.problem.space, std::nullopt, NormTag::H};
    double worst = 0.0;
    for (double t : {0.0, 0.5}) {
        const ValueEvaluator v = [&](double tt, const Vector& x, std::uint64_t s) {
            return feynman_kac_value(lq.problem, lq.policy, tt, x, 2000, steps_from(t), s);
        };
        const GradientEvaluator g = [&](double tt, const Vector& x, std::uint64_t s) {
            return gradient_fd(lq.problem, v, tt, x, 0.0, s);
        };
        std::vector<PointPair> pairs;
        for (std::uint64_t k = 0; k < 10; ++k) {
            pairs.push_back({t, sample_point(lq.problem.space, scalar(0.0), 1.5, seed("c5/pairs", 2 * k)),
                             sample_point(lq.problem.space, scalar(0.0), 1.5, seed("c5/pairs", 2 * k + 1))});
        }
        const double target = 2.0 * lq.sol.p_at(t);
        const auto r = c11_modulus(g, pairs, hl, target * 1.1, seed("c5/c11"));
        const double rel = std::abs(r.estimate("ratio_max") - target) / target;
        worst = std::max(worst, rel);
        o.require(r.passed() && rel <= 0.1, "c11 modulus off 2P(t) at t=" + std::to_string(t));
    }
    o.detail << "convexity violations " << convex.estimate("violations") << "/200, semiconcavity constant "
             << cave.estimate("constant") << " (change " << cave.estimate("relative_change")
             << "), c11 worst relative error " << worst;
    return o;
}

// 6 -------------------------------------------------------------------------
Outcome criterion_trajectories() {
    Outcome o;
    SddeConfig c;
    c.beta = 1.0;
    const auto lift = build_sdde_lift(c);
    const auto& p = lift.problem;
    const auto n = static_cast<Eigen::Index>(p.dim());
    StabilityProbe sp{0.0, 0.5 * Vector::Ones(n), Vector::Ones(n), ControlSignal::zero(1),
                      ControlSignal::constant(scalar(1.0))};
    StabilityConfig stc;
    stc.n_paths = 500;
    stc.n_steps = 100;
    MidpointProbe mp{0.0, -Vector::Ones(n), Vector::Ones(n), 0.5, ControlSignal::zero(1),
                     ControlSignal::constant(scalar(0.5))};
    MidpointProbe edge = mp;
    edge.lambda = 0.0;
    MidpointConfig mc;
    mc.n_paths = 300;
    mc.n_steps = 100;
    mc.magnitudes = {0.1, 0.2, 0.4, 0.8};
    for (const auto& norm : {NormSpec{p.space, std::nullopt, NormTag::H}, NormSpec{p.space, p.b_op, NormTag::minus1}}) {
        const auto tag = to_string(norm.tag);
        for (auto variant : {StabilityVariant::state, StabilityVariant::control}) {
            const auto r = trajectory_stability_check(p, sp, variant, norm, stc, seed("c6/stability/" + tag));
            o.require(r.passed() && std::abs(r.estimate("slope") - 1.0) <= 0.1, r.name);
            o.detail << r.name << " slope " << r.estimate("slope") << "; ";
        }
        const auto m = midpoint_trajectory_check(p, {mp, edge}, norm, mc, seed("c6/midpoint/" + tag));
        o.require(m.passed() && std::abs(m.estimate("scaling_slope") - 2.0) <= 0.2, m.name);
        o.detail << m.name << " slope " << m.estimate("scaling_slope") << "; ";
    }
    return o;
}

// 7 -------------------------------------------------------------------------
Outcome criterion_truncation() {
    Outcome o;
    const auto lq = make_lq();
    TruncationConfig tc;
    tc.n_paths = 4000;
    tc.n_steps = 100;
    const std::uint64_t s = seed("c7/truncation");
    std::vector<TruncationPoint> pts{{0.0, scalar(1.0)}, {0.0, scalar(-1.5)}};
    std::vector<double> sup_amp;
    for (const auto& pt : pts) {
        const auto traces = closed_loop_traces(lq.problem, lq.policy, pt.t, pt.x, tc.n_paths, tc.n_steps, s);
        tc.explicit_members.push_back(ControlSignal::from_traces(traces));
        for (const auto& tr : *traces) sup_amp.push_back(tr.cwiseAbs().maxCoeff());
    }
    std::sort(sup_amp.begin(), sup_amp.end());
    const double a_med = sup_amp[sup_amp.size() / 2];
    const double a_95 = sup_amp[sup_amp.size() * 95 / 100];
    const std::vector<double> m_list{0.25, 0.5, 1.0, 2.0, 4.0, 8.0};
    const auto r = truncation_scan(lq.problem, pts, m_list, tc, s);
    const double m_bar = r.estimate("m_bar");
    double ceil_grid = m_list.back();
    for (double m : m_list) {
        if (m >= a_95) {
            ceil_grid = m;
            break;
        }
    }
    o.require(r.passed(), "scan not monotone or not flat");
    o.require(m_bar <= ceil_grid && m_bar >= 0.5 * a_med, "m-bar inconsistent with feedback amplitude");
    o.detail << "m_bar " << m_bar << ", oracle sup|u| median " << a_med << ", 95% " << a_95;
    return o;
}

// 8 -------------------------------------------------------------------------
std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome criterion_structure(const std::string& cli, const fs::path& workdir) {
    Outcome o;
    const auto e3 = SpaceSpec::euclidean(3);
    o.require(check_b_condition(DiscreteOperator::zero(3), BOperatorSpec::identity(e3, 1.0, BMode::strong)).passed(),
              "A=0, B=I strong");
    const auto lift = make_delay_generator(1, 1.0, 16);
    o.require(
        check_b_condition(lift.op, BOperatorSpec::inverse_gram(lift.space, lift.op, 0.0, BMode::weak)).passed(),
        "delay generator weak");
    const auto lap = make_dirichlet_laplacian(16, 1.0, 1.0);
    o.require(check_positivity_preserving(lap, {1e-3, 1e-2, 1e-1}, 200, seed("c8/positivity")).passed(),
              "Laplacian positivity");

    fs::create_directories(workdir);
    const auto config = workdir / "repro.yaml";
    std::ofstream(config) << "problem: {kind: reaction_diffusion, reaction: linear, n_grid: 6}\n"
                             "simulation: {n_steps: 100, n_paths: 500}\n"
                             "value: {family_size: 8, value_paths: 1000}\n"
                             "synthesis: {n_challengers: 10, eval_paths: 500, dpp_outer: 100, dpp_inner: 40}\n"
                             "diagnostics: {n_triples: 16, n_paths: 200, scans: [b_condition, positivity, lipschitz, "
                             "convexity, trajectory_stability, midpoint, truncation, comparison]}\n";
    const auto out = workdir / "repro_out";
    std::string manifests[2];
    int idx = 0;
    for (int jobs : {1, 8}) {
        fs::remove_all(out);
        const std::string cmd = "\"" + cli + "\" run-all --config \"" + config.string() + "\" --out \"" +
                                out.string() + "\" --jobs " + std::to_string(jobs) + " > \"" +
                                (workdir / ("repro_jobs" + std::to_string(jobs) + ".log")).string() + "\" 2>&1";
        const int rc = std::system(cmd.c_str());
        o.require(rc == 0, "cli run with --jobs " + std::to_string(jobs) + " exited " + std::to_string(rc));
        manifests[idx++] = slurp(out / "manifest.json");
    }
    o.require(!manifests[0].empty() && manifests[0] == manifests[1], "manifest differs between --jobs 1 and 8");
    o.detail << "B-condition pairs, positivity over 3 steps, manifests " << (manifests[0] == manifests[1] ? "identical" : "differ");
    return o;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Acceptance criteria"};
    std::string cli;
    std::string workdir = "acceptance_runs";
    std::vector<int> only;
    app.add_option("--cli", cli, "path to the hjblab executable")->required();
    app.add_option("--workdir", workdir, "scratch directory");
    app.add_option("--only", only, "run a subset of criteria");
    CLI11_PARSE(app, argc, argv);

    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
        {"lq oracle equivalence", criterion_lq_oracle},
        {"synthesis optimality", criterion_synthesis},
        {"feynman-kac and dpp consistency", criterion_fk_dpp},
        {"comparison", criterion_comparison},
        {"regularity scans", criterion_regularity},
        {"trajectory estimates", criterion_trajectories},
        {"truncation stabilization", criterion_truncation},
        {"structural checks and reproducibility", [&] { return criterion_structure(cli, workdir); }},
    };
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i + 1);
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
        const auto start = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception& e) {
            o.pass = false;
            o.detail << "exception: " << e.what();
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        all = all && o.pass;
        std::printf("%s criterion %d: %s (%.1fs) %s\n", o.pass ? "PASS" : "FAIL", id, criteria[i].first.c_str(), secs,
                    o.detail.str().c_str());
        std::fflush(stdout);
    }
    return all ? 0 : 1;
}
