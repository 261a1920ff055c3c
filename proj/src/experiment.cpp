#include "hjblab/experiment.hpp"

#include "hjblab/cost_value.hpp"
#include "hjblab/diagnostics.hpp"
#include "hjblab/hilbert_core.hpp"
#include "hjblab/parallel.hpp"
#include "hjblab/problem_models.hpp"
#include "hjblab/rng.hpp"
#include "hjblab/sde_engine.hpp"
#include "hjblab/synthesis.hpp"

#include <openssl/evp.h>
#include <yaml-cpp/yaml.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <memory>
#include <numbers>
#include <optional>
#include <set>
#include <sstream>

namespace hjblab {

StageError::StageError(std::string stage, const std::string& what)
    : std::runtime_error("stage '" + stage + "': " + what), stage_(std::move(stage)) {}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

template <class T>
struct TypeName;
template <>
struct TypeName<double> { static constexpr const char* value = "number"; };
template <>
struct TypeName<int> { static constexpr const char* value = "integer"; };
template <>
struct TypeName<std::size_t> { static constexpr const char* value = "non-negative integer"; };
template <>
struct TypeName<std::string> { static constexpr const char* value = "string"; };

template <class T>
T scalar_as(const YAML::Node& node, const std::string& key) {
    if (!node.IsScalar()) throw ConfigError("key '" + key + "': expected " + TypeName<T>::value);
    try {
        if constexpr (std::is_same_v<T, std::size_t>) {
            const auto& text = node.Scalar();
            if (!text.empty() && text.front() == '-') throw YAML::BadConversion(node.Mark());
            return static_cast<std::size_t>(node.as<unsigned long long>());
        } else {
            return node.as<T>();
        }
    } catch (const YAML::BadConversion&) {
        throw ConfigError("key '" + key + "': expected " + TypeName<T>::value);
    }
}

class SectionReader {
public:
    SectionReader(const YAML::Node& node, std::string section) : node_(node), section_(std::move(section)) {
        if (node_ && !node_.IsNull() && !node_.IsMap()) throw ConfigError("key '" + section_ + "': expected mapping");
    }

    template <class T>
    void field(const std::string& key, T& out) {
        known_.insert(key);
        if (!node_ || node_.IsNull()) return;
        const YAML::Node v = node_[key];
        if (!v) return;
        const std::string path = section_ + "." + key;
        if constexpr (std::is_same_v<T, std::uint64_t> && !std::is_same_v<T, std::size_t>) {
            out = static_cast<std::uint64_t>(scalar_as<std::size_t>(v, path));
        } else if constexpr (std::is_same_v<T, std::vector<double>> || std::is_same_v<T, std::vector<std::string>>) {
            if (!v.IsSequence()) throw ConfigError("key '" + path + "': expected list");
            out.clear();
            for (const auto& e : v) out.push_back(scalar_as<typename T::value_type>(e, path));
        } else if constexpr (std::is_same_v<T, std::vector<std::vector<double>>>) {
            if (!v.IsSequence()) throw ConfigError("key '" + path + "': expected list of [t, amplitude]");
            out.clear();
            for (const auto& row : v) {
                if (!row.IsSequence()) throw ConfigError("key '" + path + "': expected list of [t, amplitude]");
                std::vector<double> r;
                for (const auto& e : row) r.push_back(scalar_as<double>(e, path));
                out.push_back(std::move(r));
            }
        } else {
            out = scalar_as<T>(v, path);
        }
    }

    void finish() const {
        if (!node_ || node_.IsNull()) return;
        for (const auto& kv : node_) {
            const auto key = kv.first.as<std::string>();
            if (!known_.count(key)) throw ConfigError("unknown key '" + section_ + "." + key + "'");
        }
    }

private:
    YAML::Node node_;
    std::string section_;
    std::set<std::string> known_;
};

template <class Visitor>
void visit_problem(ProblemSection& p, Visitor&& f) {
    f("kind", p.kind);
    f("horizon", p.horizon);
    f("a_lin", p.a_lin);
    f("alpha", p.alpha);
    f("sigma0", p.sigma0);
    f("q_state", p.q_state);
    f("r_control", p.r_control);
    f("q_terminal", p.q_terminal);
    f("n_grid", p.n_grid);
    f("length", p.length);
    f("diffusivity", p.diffusivity);
    f("reaction", p.reaction);
    f("reaction_param", p.reaction_param);
    f("noise_scale", p.noise_scale);
    f("noise_modes", p.noise_modes);
    f("nu", p.nu);
    f("control_bound", p.control_bound);
    f("delay", p.delay);
    f("n_past", p.n_past);
    f("k_y", p.k_y);
    f("k_z", p.k_z);
    f("beta", p.beta);
    f("sigma_c", p.sigma_c);
    f("sigma_z", p.sigma_z);
}

template <class Visitor>
void visit_simulation(SimulationSection& s, Visitor&& f) {
    f("n_steps", s.n_steps);
    f("n_paths", s.n_paths);
    f("master_seed", s.master_seed);
    f("dump_paths", s.dump_paths);
}

template <class Visitor>
void visit_value(ValueSection& v, Visitor&& f) {
    f("family_size", v.family_size);
    f("family_pieces", v.family_pieces);
    f("family_radius", v.family_radius);
    f("truncation_list", v.truncation_list);
    f("fd_step", v.fd_step);
    f("value_paths", v.value_paths);
    f("eval_points", v.eval_points);
}

template <class Visitor>
void visit_synthesis(SynthesisSection& s, Visitor&& f) {
    f("policy", s.policy);
    f("gain_scale", s.gain_scale);
    f("n_challengers", s.n_challengers);
    f("challenger_radius", s.challenger_radius);
    f("dpp_times", s.dpp_times);
    f("pi_rounds", s.pi_rounds);
    f("pi_paths", s.pi_paths);
    f("eval_paths", s.eval_paths);
    f("dpp_outer", s.dpp_outer);
    f("dpp_inner", s.dpp_inner);
}

template <class Visitor>
void visit_diagnostics(DiagnosticsSection& d, Visitor&& f) {
    f("scans", d.scans);
    f("n_triples", d.n_triples);
    f("radius", d.radius);
    f("slack_sigma", d.slack_sigma);
    f("stability_tol", d.stability_tol);
    f("order_tol", d.order_tol);
    f("n_paths", d.n_paths);
}

template <class Visitor>
void visit_output(OutputSection& o, Visitor&& f) {
    f("directory", o.directory);
    f("formats", o.formats);
}

const std::set<std::string> kKinds{"lq", "reaction_diffusion", "sdde"};
const std::set<std::string> kReactions{"zero", "linear", "clipped_cubic", "neg_softplus"};
const std::set<std::string> kPolicies{"oracle", "policy_iteration"};
const std::set<std::string> kScans{"b_condition",   "positivity",   "lipschitz",   "lipschitz_minus1",
                                   "semiconcavity", "semiconvexity", "convexity",  "c11",
                                   "trajectory_stability", "midpoint", "truncation", "comparison"};
const std::set<std::string> kFormats{"json", "text", "csv"};

void check_choice(const std::string& key, const std::string& value, const std::set<std::string>& allowed) {
    if (!allowed.count(value)) {
        std::string list;
        for (const auto& a : allowed) list += (list.empty() ? "" : ", ") + a;
        throw ConfigError("key '" + key + "': '" + value + "' is not one of {" + list + "}");
    }
}

void validate(const ExperimentConfig& c) {
    check_choice("problem.kind", c.problem.kind, kKinds);
    check_choice("problem.reaction", c.problem.reaction, kReactions);
    check_choice("synthesis.policy", c.synthesis.policy, kPolicies);
    for (const auto& s : c.diagnostics.scans) check_choice("diagnostics.scans", s, kScans);
    for (const auto& f : c.output.formats) check_choice("output.formats", f, kFormats);
    if (!(c.problem.horizon > 0.0)) throw ConfigError("key 'problem.horizon': expected positive number");
    if (c.simulation.n_steps == 0) throw ConfigError("key 'simulation.n_steps': expected positive integer");
    if (c.simulation.n_paths == 0) throw ConfigError("key 'simulation.n_paths': expected positive integer");
    if (c.value.family_size == 0) throw ConfigError("key 'value.family_size': expected positive integer");
    for (const auto& pt : c.value.eval_points) {
        if (pt.size() != 2) throw ConfigError("key 'value.eval_points': expected list of [t, amplitude]");
        // Regularity constants may blow up at the horizon; stay clear of it.
        if (pt[0] < 0.0 || pt[0] > 0.99 * c.problem.horizon) {
            throw ConfigError("key 'value.eval_points': t must lie in [0, 0.99 horizon]");
        }
    }
    for (std::size_t i = 1; i < c.value.truncation_list.size(); ++i) {
        if (!(c.value.truncation_list[i] > c.value.truncation_list[i - 1])) {
            throw ConfigError("key 'value.truncation_list': expected increasing values");
        }
    }
}

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
    YAML::Node root;
    try {
        root = YAML::Load(text);
    } catch (const YAML::Exception& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    ExperimentConfig cfg;
    if (!root || root.IsNull()) {
        validate(cfg);
        return cfg;
    }
    if (!root.IsMap()) throw ConfigError("config root: expected mapping of sections");
    const std::set<std::string> sections{"problem", "simulation", "value", "synthesis", "diagnostics", "output"};
    for (const auto& kv : root) {
        const auto key = kv.first.as<std::string>();
        if (!sections.count(key)) throw ConfigError("unknown key '" + key + "'");
    }
    auto read = [&](const char* name, auto& section, auto visit) {
        SectionReader r(root[name], name);
        visit(section, [&](const char* key, auto& field) { r.field(key, field); });
        r.finish();
    };
    read("problem", cfg.problem, [](auto& s, auto&& f) { visit_problem(s, f); });
    read("simulation", cfg.simulation, [](auto& s, auto&& f) { visit_simulation(s, f); });
    read("value", cfg.value, [](auto& s, auto&& f) { visit_value(s, f); });
    read("synthesis", cfg.synthesis, [](auto& s, auto&& f) { visit_synthesis(s, f); });
    read("diagnostics", cfg.diagnostics, [](auto& s, auto&& f) { visit_diagnostics(s, f); });
    read("output", cfg.output, [](auto& s, auto&& f) { visit_output(s, f); });
    validate(cfg);
    return cfg;
}

ExperimentConfig parse_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    return parse_config_text(ss.str());
}

namespace {

struct Emit {
    YAML::Emitter& out;

    template <class T>
    void operator()(const char* key, const T& v) {
        out << YAML::Key << key << YAML::Value;
        if constexpr (std::is_same_v<T, std::vector<double>> || std::is_same_v<T, std::vector<std::string>>) {
            out << YAML::Flow << YAML::BeginSeq;
            for (const auto& e : v) out << e;
            out << YAML::EndSeq;
        } else if constexpr (std::is_same_v<T, std::vector<std::vector<double>>>) {
            out << YAML::BeginSeq;
            for (const auto& row : v) {
                out << YAML::Flow << YAML::BeginSeq;
                for (double e : row) out << e;
                out << YAML::EndSeq;
            }
            out << YAML::EndSeq;
        } else {
            out << v;
        }
    }
};

}  // namespace

std::string emit_config(const ExperimentConfig& cfg) {
    ExperimentConfig c = cfg;
    YAML::Emitter out;
    out.SetDoublePrecision(17);
    Emit e{out};
    auto section = [&](const char* name, auto& s, auto visit) {
        out << YAML::Key << name << YAML::Value << YAML::BeginMap;
        visit(s, e);
        out << YAML::EndMap;
    };
    out << YAML::BeginMap;
    section("problem", c.problem, [](auto& s, auto& f) { visit_problem(s, f); });
    section("simulation", c.simulation, [](auto& s, auto& f) { visit_simulation(s, f); });
    section("value", c.value, [](auto& s, auto& f) { visit_value(s, f); });
    section("synthesis", c.synthesis, [](auto& s, auto& f) { visit_synthesis(s, f); });
    section("diagnostics", c.diagnostics, [](auto& s, auto& f) { visit_diagnostics(s, f); });
    section("output", c.output, [](auto& s, auto& f) { visit_output(s, f); });
    out << YAML::EndMap;
    return std::string(out.c_str()) + "\n";
}

// ---------------------------------------------------------------------------
// Stages

std::string to_string(Stage s) {
    switch (s) {
        case Stage::build: return "build";
        case Stage::simulate: return "simulate";
        case Stage::value: return "value";
        case Stage::synthesize: return "synthesize";
        case Stage::diagnose: return "diagnose";
        case Stage::compare: return "compare";
        case Stage::verify: return "verify";
    }
    return "unknown";
}

std::vector<Stage> stages_for(const std::string& sub) {
    if (sub == "simulate") return {Stage::build, Stage::simulate, Stage::verify};
    if (sub == "value") return {Stage::build, Stage::value, Stage::verify};
    if (sub == "synthesize") return {Stage::build, Stage::synthesize, Stage::verify};
    if (sub == "diagnose") return {Stage::build, Stage::diagnose, Stage::verify};
    if (sub == "compare") return {Stage::build, Stage::compare, Stage::verify};
    if (sub == "run-all") {
        return {Stage::build, Stage::simulate, Stage::value, Stage::synthesize, Stage::diagnose, Stage::verify};
    }
    throw ConfigError("unknown subcommand '" + sub + "'");
}

void print_plan(std::ostream& os, const ExperimentConfig& cfg, const std::vector<Stage>& stages) {
    os << "problem      " << cfg.problem.kind << " (horizon " << cfg.problem.horizon << ")\n";
    os << "simulation   " << cfg.simulation.n_paths << " paths x " << cfg.simulation.n_steps << " steps, seed "
       << cfg.simulation.master_seed << "\n";
    os << "policy       " << cfg.synthesis.policy << " (gain " << cfg.synthesis.gain_scale << ")\n";
    os << "eval points  " << cfg.value.eval_points.size() << "\n";
    os << "output       " << cfg.output.directory << "\n";
    os << "stages      ";
    for (auto s : stages) os << " " << to_string(s);
    os << "\n";
    if (std::find(stages.begin(), stages.end(), Stage::diagnose) != stages.end()) {
        os << "scans       ";
        for (const auto& s : cfg.diagnostics.scans) os << " " << s;
        os << "\n";
    }
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char digest[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr) != 1) {
        throw std::runtime_error("sha256 failed");
    }
    std::ostringstream os;
    for (unsigned int i = 0; i < len; ++i) os << std::hex << std::setw(2) << std::setfill('0') << int(digest[i]);
    return os.str();
}

namespace {

struct Built {
    ControlProblem problem;
    Vector profile;  ///< unit state direction scaled by eval-point amplitudes
    std::optional<RiccatiSolution> scalar_oracle;
    std::shared_ptr<const MatrixRiccatiSolution> matrix_oracle;
};

ScalarReaction make_reaction(const ProblemSection& p) {
    if (p.reaction == "zero") return ScalarReaction::zero();
    if (p.reaction == "linear") return ScalarReaction::linear(p.reaction_param);
    if (p.reaction == "clipped_cubic") return ScalarReaction::clipped_cubic(p.reaction_param);
    return ScalarReaction::neg_softplus();
}

Built build(const ExperimentConfig& cfg) {
    const auto& p = cfg.problem;
    Built b;
    if (p.kind == "lq") {
        RiccatiOracle o;
        o.a_lin = p.a_lin;
        o.alpha = p.alpha;
        o.sigma0 = p.sigma0;
        o.q_state = p.q_state;
        o.r_control = p.r_control;
        o.q_terminal = p.q_terminal;
        o.horizon = p.horizon;
        auto [problem, oracle] = build_lq_benchmark(o);
        b.problem = std::move(problem);
        b.scalar_oracle = riccati_solve(oracle);
        b.profile = Vector::Ones(1);
    } else if (p.kind == "reaction_diffusion") {
        ReactionDiffusionConfig rd;
        rd.n_grid = p.n_grid;
        rd.length = p.length;
        rd.diffusivity = p.diffusivity;
        rd.reaction = make_reaction(p);
        rd.noise_scale = p.noise_scale;
        rd.noise_modes = p.noise_modes;
        rd.nu = p.nu;
        rd.horizon = p.horizon;
        if (p.control_bound > 0.0) rd.control_bound = p.control_bound;
        b.problem = build_reaction_diffusion(rd);
        const double h = p.length / (p.n_grid + 1);
        b.profile = Vector(p.n_grid);
        for (int i = 0; i < p.n_grid; ++i) b.profile[i] = std::sin(std::numbers::pi * (i + 1) * h / p.length);
    } else {
        SddeConfig sd;
        sd.delay = p.delay;
        sd.n_past = p.n_past;
        sd.k_y = p.k_y;
        sd.k_z = p.k_z;
        sd.beta = p.beta;
        sd.sigma_c = p.sigma_c;
        sd.sigma_z = p.sigma_z;
        sd.q_state = p.q_state;
        sd.nu = p.nu;
        sd.q_terminal = p.q_terminal;
        sd.horizon = p.horizon;
        b.problem = build_sdde_lift(sd).problem;
        b.profile = Vector::Ones(static_cast<Eigen::Index>(b.problem.dim()));
    }
    b.problem.validate(cfg.simulation.master_seed);
    if (!b.scalar_oracle && b.problem.lq) {
        b.matrix_oracle = std::make_shared<const MatrixRiccatiSolution>(riccati_solve_matrix(b.problem));
    }
    return b;
}

std::size_t steps_for(const ExperimentConfig& cfg, double t) {
    const double frac = (cfg.problem.horizon - t) / cfg.problem.horizon;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(frac * double(cfg.simulation.n_steps))));
}

std::optional<double> oracle_value(const Built& b, double t, const Vector& x) {
    if (b.scalar_oracle) return b.scalar_oracle->value(t, x[0]);
    if (b.matrix_oracle) return b.matrix_oracle->value(t, x);
    return std::nullopt;
}

std::optional<Vector> oracle_gradient(const Built& b, double t, const Vector& x) {
    if (b.scalar_oracle) return Vector::Constant(1, 2.0 * b.scalar_oracle->p_at(t) * x[0]);
    if (b.matrix_oracle) return b.matrix_oracle->h_gradient(b.problem.space, t, x);
    return std::nullopt;
}

std::vector<double> to_std(const Vector& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

class Runner {
public:
    explicit Runner(const ExperimentConfig& cfg) : cfg_(cfg), dir_(cfg.output.directory) {}

    ExperimentResult run(const std::vector<Stage>& stages) {
        for (auto s : stages) {
            current_ = to_string(s);
            try {
                switch (s) {
                    case Stage::build: built_ = build(cfg_); break;
                    case Stage::simulate: simulate(); break;
                    case Stage::value: value(); break;
                    case Stage::synthesize: synthesize(); break;
                    case Stage::diagnose: diagnose(); break;
                    case Stage::compare: compare(); break;
                    case Stage::verify: verify(); break;
                }
            } catch (const StageError&) {
                throw;
            } catch (const std::exception& e) {
                throw StageError(current_, e.what());
            }
        }
        ExperimentResult res;
        res.reports = reports_;
        res.directory = dir_;
        res.exit_code = all_passed(reports_) ? 0 : 1;
        return res;
    }

private:
    bool wants(const std::string& format) const {
        const auto& f = cfg_.output.formats;
        return std::find(f.begin(), f.end(), format) != f.end();
    }

    std::uint64_t seed(std::uint64_t index = 0) const {
        return derive_seed(cfg_.simulation.master_seed, "stage/" + current_, index);
    }

    const Built& built() const {
        if (!built_) throw std::logic_error("problem not built");
        return *built_;
    }

    Vector point_state(std::size_t i) const { return cfg_.value.eval_points[i][1] * built().profile; }
    double point_time(std::size_t i) const { return cfg_.value.eval_points[i][0]; }

    void write_file(const std::string& name, const std::string& content) {
        std::filesystem::create_directories(dir_);
        std::ofstream(dir_ / name, std::ios::binary) << content;
        files_[name] = content;
    }

    const Policy& policy() {
        if (policy_) return *policy_;
        const auto& b = built();
        const auto& s = cfg_.synthesis;
        Policy pol;
        if (s.policy == "oracle") {
            if (b.scalar_oracle) {
                pol = riccati_policy(b.problem, *b.scalar_oracle);
            } else if (b.matrix_oracle) {
                pol = matrix_riccati_policy(b.problem, b.matrix_oracle);
            } else {
                throw StageError(current_, "oracle policy needs linear-quadratic data; use policy_iteration");
            }
        } else {
            const double T = cfg_.problem.horizon;
            const std::vector<double> t_grid{0.0, 0.25 * T, 0.5 * T, 0.75 * T, T};
            std::vector<Vector> x_grid;
            for (int k = -4; k <= 4; ++k) x_grid.push_back((0.5 * k) * cfg_.diagnostics.radius * b.profile);
            PolicyIterationConfig pc;
            pc.n_paths = s.pi_paths;
            pc.n_steps = cfg_.simulation.n_steps;
            pc.fd_step = cfg_.value.fd_step;
            const auto res = policy_iteration(b.problem, t_grid, x_grid, separated_selector(b.problem), s.pi_rounds,
                                              pc, derive_seed(cfg_.simulation.master_seed, "policy_iteration", 0));
            pol = Policy(b.problem.control, res.policy, PolicyProvenance::policy_iteration, "policy_iteration");
        }
        if (s.gain_scale != 1.0) pol = pol.scaled(s.gain_scale);
        policy_ = pol;
        return *policy_;
    }

    ValueEvaluator fk_evaluator(std::size_t n_paths) {
        const Policy pol = policy();
        const ControlProblem* problem = &built().problem;
        const ExperimentConfig* cfg = &cfg_;
        return [pol, problem, cfg, n_paths](double t, const Vector& x, std::uint64_t s) {
            return feynman_kac_value(*problem, pol, t, x, n_paths, steps_for(*cfg, t), s);
        };
    }

    // -- stages --------------------------------------------------------------

    void simulate() {
        const auto& b = built();
        const double t = cfg_.value.eval_points.empty() ? 0.0 : point_time(0);
        const Vector x = cfg_.value.eval_points.empty() ? b.profile : point_state(0);
        const std::size_t n_steps = steps_for(cfg_, t);
        const TimeGrid grid(t, cfg_.problem.horizon, n_steps);
        const auto zero = open_loop(ControlSignal::zero(b.problem.control.dim()));
        const std::uint64_t s = seed();

        std::vector<double> terminal(cfg_.simulation.n_paths), sup(cfg_.simulation.n_paths);
        parallel::parallel_for(cfg_.simulation.n_paths, [&](std::size_t i) {
            double m = b.problem.space.norm(x);
            Vector last = x;
            run_coupled(b.problem, grid, {x}, {zero}, s, i, [&](const StepView& v) {
                m = std::max(m, b.problem.space.norm(v.after[0]));
                last = v.after[0];
            });
            const double n = b.problem.space.norm(last);
            terminal[i] = n * n;
            sup[i] = m;
        });
        const auto term = MCEstimate::from_samples(terminal);
        DiagnosticReport r;
        r.name = "simulation";
        r.samples_used = cfg_.simulation.n_paths;
        r.estimates = {{"mean_terminal_norm2", term.mean},
                       {"mean_terminal_norm2_se", term.std_error},
                       {"max_sup_norm", *std::max_element(sup.begin(), sup.end())}};
        r.witness = {{"t", t}, {"x", to_std(x)}, {"seed", s}};
        r.verdict = std::isfinite(term.mean) ? Verdict::pass : Verdict::fail;
        r.notes = "uncontrolled ensemble from the first evaluation point";
        reports_.push_back(r);

        if (wants("csv") && cfg_.simulation.dump_paths > 0) {
            const std::size_t n = std::min(cfg_.simulation.dump_paths, cfg_.simulation.n_paths);
            const auto ens = simulate_ensemble(b.problem, t, x, ControlSignal::zero(b.problem.control.dim()), n, s,
                                               n_steps);
            std::ostringstream os;
            write_trajectory_csv(os, ens.trajectories);
            write_file("paths.csv", os.str());
        }
    }

    void value() {
        const auto& b = built();
        const auto& v = cfg_.value;
        ValueField field;
        nlohmann::json oracle_rows = nlohmann::json::array();
        nlohmann::json grad_rows = nlohmann::json::array();
        bool oracle_ok = true, grad_ok = true, have_oracle = false;
        std::vector<Vector> gradients;
        for (std::size_t i = 0; i < v.eval_points.size(); ++i) {
            const double t = point_time(i);
            const Vector x = point_state(i);
            const std::size_t n_steps = steps_for(cfg_, t);
            const std::uint64_t s = seed(i);
            ControlFamily fam(b.problem.control, t, cfg_.problem.horizon, v.family_pieces, v.family_radius,
                              derive_seed(s, streams::family, 0));
            fam.add(ControlSignal::zero(b.problem.control.dim()));
            if (b.scalar_oracle || b.matrix_oracle) {
                const Policy pol = b.scalar_oracle ? riccati_policy(b.problem, *b.scalar_oracle)
                                                   : matrix_riccati_policy(b.problem, b.matrix_oracle);
                fam.add(ControlSignal::from_traces(closed_loop_traces(b.problem, pol, t, x, v.value_paths, n_steps, s)));

                const ControlProblem* problem = &b.problem;
                const std::size_t n_paths = v.value_paths;
                const ValueEvaluator fk = [problem, pol, n_paths, n_steps](double tt, const Vector& xx,
                                                                          std::uint64_t ss) {
                    return feynman_kac_value(*problem, pol, tt, xx, n_paths, n_steps, ss);
                };
                const auto g = gradient_fd(b.problem, fk, t, x, v.fd_step, s);
                const Vector go = *oracle_gradient(b, t, x);
                const double err = b.problem.space.norm(g.gradient - go);
                const double tol = std::max(0.05 * b.problem.space.norm(go), 3.0 * g.directional_se.norm());
                grad_ok = grad_ok && err <= tol;
                grad_rows.push_back({{"t", t}, {"x", to_std(x)}, {"estimate", to_std(g.gradient)},
                                     {"oracle", to_std(go)}, {"error", err}, {"tolerance", tol}, {"seed", s}});
                gradients.push_back(g.gradient);
            }
            const auto est = estimate_value_family(b.problem, t, x, fam, v.family_size + fam.n_explicit(),
                                                   v.value_paths, n_steps, s);
            field.times.push_back(t);
            field.states.push_back(x);
            field.values.push_back(est.value);
            if (const auto ov = oracle_value(b, t, x)) {
                have_oracle = true;
                const double err = std::abs(est.value.mean - *ov);
                const double tol = std::max(0.05 * std::abs(*ov), 3.0 * est.value.std_error);
                oracle_ok = oracle_ok && err <= tol;
                oracle_rows.push_back({{"t", t}, {"x", to_std(x)}, {"estimate", est.value.mean},
                                       {"std_error", est.value.std_error}, {"oracle", *ov}, {"tolerance", tol},
                                       {"seed", s}});
            }
        }
        if (have_oracle) {
            DiagnosticReport r;
            r.name = "value_vs_oracle";
            r.samples_used = v.value_paths * v.eval_points.size();
            r.tolerance = 0.05;
            double worst = 0.0;
            for (const auto& row : oracle_rows) {
                worst = std::max(worst, std::abs(row["estimate"].get<double>() - row["oracle"].get<double>()) /
                                            row["tolerance"].get<double>());
            }
            r.estimates = {{"worst_error_over_tolerance", worst}};
            r.witness = oracle_rows;
            r.verdict = oracle_ok ? Verdict::pass : Verdict::fail;
            r.notes = "family infimum against the Riccati value; tolerance max(5%, 3 std errors)";
            reports_.push_back(r);

            DiagnosticReport g;
            g.name = "gradient_vs_oracle";
            g.samples_used = v.value_paths * v.eval_points.size();
            g.tolerance = 0.05;
            g.witness = grad_rows;
            g.verdict = grad_ok ? Verdict::pass : Verdict::fail;
            g.notes = "central differences of the closed-loop cost against the Riccati gradient";
            reports_.push_back(g);
            field.gradients = gradients;
        }
        if (wants("csv")) {
            std::ostringstream os;
            write_value_field_csv(os, field);
            write_file("value_field.csv", os.str());
        }
    }

    void synthesize() {
        const auto& b = built();
        const auto& s = cfg_.synthesis;
        const Policy& pol = policy();
        for (std::size_t i = 0; i < cfg_.value.eval_points.size(); ++i) {
            const double t = point_time(i);
            const Vector x = point_state(i);
            OptimalityConfig oc;
            oc.n_paths = s.eval_paths;
            oc.n_steps = steps_for(cfg_, t);
            oc.n_pieces = cfg_.value.family_pieces;
            oc.challenger_radius = s.challenger_radius;
            oc.se_multiplier = cfg_.diagnostics.slack_sigma;
            if (b.scalar_oracle) oc.extra_policies.push_back({"riccati", riccati_policy(b.problem, *b.scalar_oracle)});
            if (b.matrix_oracle) {
                oc.extra_policies.push_back({"riccati", matrix_riccati_policy(b.problem, b.matrix_oracle)});
            }
            auto r = verify_optimality(b.problem, pol, t, x, s.n_challengers, oc, seed(i));
            r.name += "_" + std::to_string(i);
            reports_.push_back(r);

            if (const auto ov = oracle_value(b, t, x)) {
                const auto fk = feynman_kac_value(b.problem, pol, t, x, s.eval_paths, steps_for(cfg_, t), seed(i));
                DiagnosticReport f;
                f.name = "feynman_kac_" + std::to_string(i);
                f.samples_used = s.eval_paths;
                const double tol = std::max(0.05 * std::abs(*ov), cfg_.diagnostics.slack_sigma * fk.std_error);
                f.tolerance = tol;
                f.estimates = {{"feynman_kac", fk.mean}, {"std_error", fk.std_error}, {"oracle", *ov}};
                f.witness = {{"t", t}, {"x", to_std(x)}, {"seed", seed(i)}};
                f.verdict = std::abs(fk.mean - *ov) <= tol ? Verdict::pass : Verdict::fail;
                f.notes = "closed-loop cost of the policy against the oracle value";
                reports_.push_back(f);
            }
        }
        if (!cfg_.value.eval_points.empty()) {
            const double t = point_time(0);
            const Vector x = point_state(0);
            for (std::size_t k = 0; k < s.dpp_times.size(); ++k) {
                const double mid = s.dpp_times[k];
                if (!(mid > t && mid < cfg_.problem.horizon)) {
                    throw StageError(current_, "dpp time " + std::to_string(mid) + " outside (t, horizon)");
                }
                DppConfig dc;
                dc.n_outer = s.dpp_outer;
                dc.n_inner = s.dpp_inner;
                dc.n_steps = steps_for(cfg_, t);
                dc.se_multiplier = cfg_.diagnostics.slack_sigma;
                auto r = dpp_check(b.problem, pol, t, x, mid, dc, seed(100 + k));
                r.name += "_" + std::to_string(k);
                reports_.push_back(r);
            }
            if (wants("csv") && cfg_.simulation.dump_paths > 0) {
                std::vector<Trajectory> paths;
                for (std::size_t i = 0; i < cfg_.simulation.dump_paths; ++i) {
                    paths.push_back(closed_loop_simulate(b.problem, pol, t, x, seed(200), steps_for(cfg_, t), i)
                                        .trajectory);
                }
                std::ostringstream os;
                write_trajectory_csv(os, paths);
                write_file("closed_loop_paths.csv", os.str());
            }
        }
    }

    void diagnose() {
        const auto& b = built();
        const auto& d = cfg_.diagnostics;
        const double t = cfg_.value.eval_points.empty() ? 0.0 : point_time(0);
        const Vector center = Vector::Zero(static_cast<Eigen::Index>(b.problem.dim()));
        const NormSpec h_norm{b.problem.space, std::nullopt, NormTag::H};
        const NormSpec m_norm{b.problem.space, b.problem.b_op, NormTag::minus1};
        auto has = [&](const char* name) { return std::find(d.scans.begin(), d.scans.end(), name) != d.scans.end(); };
        std::uint64_t idx = 0;

        ScanConfig sc;
        sc.t = t;
        sc.center = center;
        sc.radius = d.radius;
        sc.n_triples = d.n_triples;
        sc.se_multiplier = d.slack_sigma;
        sc.stability_tol = d.stability_tol;

        auto pairs = [&](std::size_t n, std::uint64_t s) {
            std::vector<PointPair> out;
            for (std::size_t k = 0; k < n; ++k) {
                out.push_back({t, sample_point(b.problem.space, center, d.radius, derive_seed(s, streams::probes, 2 * k)),
                               sample_point(b.problem.space, center, d.radius,
                                            derive_seed(s, streams::probes, 2 * k + 1))});
            }
            return out;
        };

        if (has("b_condition")) reports_.push_back(check_b_condition(b.problem.op, b.problem.b_op));
        if (has("positivity")) {
            reports_.push_back(check_positivity_preserving(b.problem.op, {1e-3, 1e-2, 1e-1}, 50, seed(idx++)));
        }
        const bool needs_value = has("lipschitz") || has("lipschitz_minus1") || has("semiconcavity") ||
                                 has("semiconvexity") || has("convexity") || has("c11");
        ValueEvaluator value;
        if (needs_value) value = fk_evaluator(d.n_paths);
        if (has("lipschitz")) {
            reports_.push_back(lipschitz_estimate(value, pairs(d.n_triples / 4 + 1, seed(idx)), h_norm, std::nullopt,
                                                  seed(idx + 1), d.slack_sigma));
            idx += 2;
        }
        if (has("lipschitz_minus1")) {
            reports_.push_back(lipschitz_estimate(value, pairs(d.n_triples / 4 + 1, seed(idx)), m_norm, std::nullopt,
                                                  seed(idx + 1), d.slack_sigma));
            idx += 2;
        }
        std::optional<double> c_cave, c_vex;
        if (has("semiconcavity") || has("c11")) {
            auto r = semiconcavity_scan(value, sc, h_norm, seed(idx++));
            c_cave = r.estimate("constant");
            if (has("semiconcavity")) reports_.push_back(r);
        }
        if (has("semiconvexity") || has("c11")) {
            auto r = semiconvexity_scan(value, sc, h_norm, seed(idx++));
            c_vex = r.estimate("constant");
            if (has("semiconvexity")) reports_.push_back(r);
        }
        if (has("convexity")) reports_.push_back(semiconvexity_scan(value, sc, h_norm, seed(idx++), true));
        if (has("c11")) {
            const auto* problem = &b.problem;
            const double fd = cfg_.value.fd_step;
            GradientEvaluator grad = [problem, value, fd](double tt, const Vector& x, std::uint64_t s) {
                return gradient_fd(*problem, value, tt, x, fd, s);
            };
            reports_.push_back(c11_modulus(grad, pairs(d.n_triples / 8 + 1, seed(idx)), h_norm,
                                           c11_bound(*c_cave, *c_vex), seed(idx + 1), d.slack_sigma));
            idx += 2;
        }
        if (has("trajectory_stability")) {
            StabilityConfig stc;
            stc.n_paths = d.n_paths;
            stc.n_steps = steps_for(cfg_, t);
            const auto q = b.problem.control.dim();
            StabilityProbe probe{t, b.profile * 0.5, b.profile, ControlSignal::zero(q),
                                 ControlSignal::constant(Vector::Ones(static_cast<Eigen::Index>(q)))};
            for (auto variant : {StabilityVariant::state, StabilityVariant::control}) {
                reports_.push_back(trajectory_stability_check(b.problem, probe, variant, h_norm, stc, seed(idx++)));
            }
        }
        if (has("midpoint")) {
            const auto q = b.problem.control.dim();
            MidpointProbe probe{t, -0.5 * d.radius * b.profile, d.radius * b.profile, 0.5, ControlSignal::zero(q),
                                ControlSignal::constant(Vector::Constant(static_cast<Eigen::Index>(q), 0.5))};
            MidpointConfig mc;
            mc.n_paths = d.n_paths / 2 + 1;
            mc.n_steps = steps_for(cfg_, t);
            mc.stability_tol = d.stability_tol;
            mc.magnitudes = {0.1, 0.2, 0.4, 0.8};
            reports_.push_back(midpoint_trajectory_check(b.problem, {probe}, h_norm, mc, seed(idx++)));
        }
        if (has("truncation")) {
            TruncationConfig tc;
            tc.n_pieces = cfg_.value.family_pieces;
            tc.n_paths = d.n_paths;
            tc.n_steps = cfg_.simulation.n_steps;
            std::vector<TruncationPoint> pts;
            for (std::size_t i = 0; i < cfg_.value.eval_points.size(); ++i) {
                pts.push_back({point_time(i), point_state(i)});
                tc.explicit_members.push_back(ControlSignal::from_traces(
                    closed_loop_traces(b.problem, policy(), point_time(i), point_state(i), tc.n_paths,
                                       tc.n_steps, seed(idx))));
            }
            // Same seed as the traces so the replayed feedback sees its own noise.
            reports_.push_back(truncation_scan(b.problem, pts, cfg_.value.truncation_list, tc, seed(idx++)));
        }
        if (has("comparison")) compare();
    }

    void compare() {
        const auto& b = built();
        ComparisonConfig cc;
        cc.t = cfg_.value.eval_points.empty() ? 0.0 : point_time(0);
        cc.n_paths = cfg_.diagnostics.n_paths;
        cc.n_steps = steps_for(cfg_, cc.t);
        cc.order_tol = cfg_.diagnostics.order_tol;
        cc.nemytskii_transform = b.problem.reaction.has_value();
        const Vector x2 = cfg_.value.eval_points.empty() ? b.profile : point_state(0);
        const Vector x1 = x2 + 0.1 * b.profile.cwiseAbs();
        const auto n = static_cast<Eigen::Index>(b.problem.dim());
        const Forcing f1 = [n](std::size_t, double, Vector& out) { out = Vector::Zero(n); };
        const Forcing f2 = [n](std::size_t, double, Vector& out) { out = Vector::Constant(n, -0.1); };
        reports_.push_back(comparison_check(b.problem, x1, x2, f1, f2, cc, seed(900)));
    }

    void verify() {
        write_file("resolved-config.yaml", emit_config(cfg_));
        if (wants("json")) {
            nlohmann::json arr = nlohmann::json::array();
            for (const auto& r : reports_) arr.push_back(to_json(r));
            write_file("reports.json", arr.dump(2) + "\n");
        }
        if (wants("text")) {
            std::ostringstream os;
            for (const auto& r : reports_) {
                write_text(os, r);
                os << "\n";
            }
            std::size_t passed = 0;
            for (const auto& r : reports_) passed += r.passed() ? 1 : 0;
            os << passed << "/" << reports_.size() << " reports passed\n";
            write_file("summary.txt", os.str());
        }
        nlohmann::json manifest;
        manifest["master_seed"] = cfg_.simulation.master_seed;
        manifest["files"] = nlohmann::json::array();
        for (const auto& [name, content] : files_) {
            manifest["files"].push_back({{"name", name}, {"bytes", content.size()}, {"sha256", sha256_hex(content)}});
        }
        manifest["all_passed"] = all_passed(reports_);
        std::filesystem::create_directories(dir_);
        std::ofstream(dir_ / "manifest.json", std::ios::binary) << manifest.dump(2) << "\n";
    }

    const ExperimentConfig& cfg_;
    std::filesystem::path dir_;
    std::string current_;
    std::optional<Built> built_;
    std::optional<Policy> policy_;
    std::vector<DiagnosticReport> reports_;
    std::map<std::string, std::string> files_;
};

}  // namespace

ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::vector<Stage>& stages) {
    Runner runner(cfg);
    return runner.run(stages);
}

}  // namespace hjblab
