#pragma once

// Config ingestion and the build -> simulate -> value -> synthesize ->
// diagnose -> verify pipeline behind the command line tool.

#include "hjblab/report.hpp"

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <stdexcept>
#include <string>
#include <vector>

namespace hjblab {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Raised by run_experiment; `stage()` names the pipeline stage that failed.
class StageError : public std::runtime_error {
public:
    StageError(std::string stage, const std::string& what);
    const std::string& stage() const { return stage_; }

private:
    std::string stage_;
};

struct ProblemSection {
    std::string kind = "lq";  ///< lq | reaction_diffusion | sdde
    double horizon = 1.0;
    // lq
    double a_lin = 0.3;
    double alpha = 1.0;
    double sigma0 = 0.5;
    double q_state = 1.0;
    double r_control = 1.0;
    double q_terminal = 1.0;
    // reaction_diffusion
    int n_grid = 8;
    double length = 1.0;
    double diffusivity = 0.1;
    std::string reaction = "linear";  ///< zero | linear | clipped_cubic | neg_softplus
    double reaction_param = -0.5;     ///< slope (linear) or radius (clipped_cubic)
    double noise_scale = 0.2;
    int noise_modes = 4;
    double nu = 0.5;
    double control_bound = 0.0;       ///< <= 0: unbounded
    // sdde
    double delay = 1.0;
    int n_past = 16;
    double k_y = -0.5;
    double k_z = 0.5;
    double beta = 0.0;
    double sigma_c = 0.3;
    double sigma_z = 0.0;

    bool operator==(const ProblemSection&) const = default;
};

struct SimulationSection {
    std::size_t n_steps = 200;
    std::size_t n_paths = 10000;
    std::uint64_t master_seed = 42;
    std::size_t dump_paths = 16;

    bool operator==(const SimulationSection&) const = default;
};

struct ValueSection {
    std::size_t family_size = 16;
    int family_pieces = 4;
    double family_radius = 2.0;
    std::vector<double> truncation_list{0.5, 1.0, 2.0, 4.0, 8.0};
    double fd_step = 0.0;  ///< <= 0: 1e-3 (1 + ||x||)
    std::size_t value_paths = 2000;
    /// (t, amplitude) pairs; the amplitude scales the problem's state profile.
    std::vector<std::vector<double>> eval_points{{0.0, 0.5}, {0.0, 1.0}, {0.5, 1.0}};

    bool operator==(const ValueSection&) const = default;
};

struct SynthesisSection {
    std::string policy = "oracle";  ///< oracle | policy_iteration
    double gain_scale = 1.0;
    std::size_t n_challengers = 50;
    double challenger_radius = 2.0;
    std::vector<double> dpp_times{0.3, 0.6};
    std::size_t pi_rounds = 3;
    std::size_t pi_paths = 1000;
    std::size_t eval_paths = 2000;
    std::size_t dpp_outer = 400;
    std::size_t dpp_inner = 100;

    bool operator==(const SynthesisSection&) const = default;
};

struct DiagnosticsSection {
    std::vector<std::string> scans{"b_condition", "lipschitz", "semiconcavity", "trajectory_stability"};
    std::size_t n_triples = 40;
    double radius = 1.0;
    double slack_sigma = 3.0;
    double stability_tol = 0.2;
    double order_tol = 1e-8;
    std::size_t n_paths = 500;

    bool operator==(const DiagnosticsSection&) const = default;
};

struct OutputSection {
    std::string directory = "runs/default";
    std::vector<std::string> formats{"json", "text", "csv"};

    bool operator==(const OutputSection&) const = default;
};

struct ExperimentConfig {
    ProblemSection problem;
    SimulationSection simulation;
    ValueSection value;
    SynthesisSection synthesis;
    DiagnosticsSection diagnostics;
    OutputSection output;

    bool operator==(const ExperimentConfig&) const = default;
};

/// Strict parse: unknown keys and type mismatches raise ConfigError naming
/// the key; missing keys keep their defaults.
ExperimentConfig parse_config_text(const std::string& text);
ExperimentConfig parse_config(const std::filesystem::path& path);
/// Every field, defaults included.
std::string emit_config(const ExperimentConfig& cfg);

enum class Stage { build, simulate, value, synthesize, diagnose, compare, verify };

std::string to_string(Stage s);

/// Stages run by a subcommand (simulate | value | synthesize | diagnose |
/// compare | run-all). Throws ConfigError on an unknown name.
std::vector<Stage> stages_for(const std::string& subcommand);

/// Human-readable plan for --dry-run.
void print_plan(std::ostream& os, const ExperimentConfig& cfg, const std::vector<Stage>& stages);

struct ExperimentResult {
    std::vector<DiagnosticReport> reports;
    std::filesystem::path directory;
    int exit_code = 0;  ///< 0 iff every report passed
};

/// Runs the stages and writes resolved-config.yaml, reports.json,
/// summary.txt, CSV tables and manifest.json (SHA-256 per file) into the
/// output directory.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const std::vector<Stage>& stages);

std::string sha256_hex(const std::string& bytes);

}  // namespace hjblab
