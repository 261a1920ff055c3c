#include "hjblab/experiment.hpp"
#include "hjblab/parallel.hpp"

#include <CLI11.hpp>

#include <iostream>
#include <optional>

int main(int argc, char** argv) {
    CLI::App app{"Monte Carlo audits for stochastic optimal control in Hilbert spaces"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool dry_run = false;
    std::size_t jobs = 1;

    for (const char* name : {"simulate", "value", "synthesize", "diagnose", "compare", "run-all"}) {
        auto* sub = app.add_subcommand(name);
        sub->add_option("--config", config_path, "experiment config (YAML)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "override simulation.master_seed");
        sub->add_option("--out", out_dir, "override output.directory");
        sub->add_flag("--dry-run", dry_run, "validate and print the plan only");
        sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    }
    CLI11_PARSE(app, argc, argv);
    const std::string subcommand = app.get_subcommands().front()->get_name();

    try {
        auto cfg = hjblab::parse_config(config_path);
        if (seed) cfg.simulation.master_seed = *seed;
        if (!out_dir.empty()) cfg.output.directory = out_dir;
        const auto stages = hjblab::stages_for(subcommand);
        if (dry_run) {
            hjblab::print_plan(std::cout, cfg, stages);
            return 0;
        }
        hjblab::parallel::set_jobs(jobs);
        const auto res = hjblab::run_experiment(cfg, stages);
        std::size_t passed = 0;
        for (const auto& r : res.reports) {
            passed += r.passed() ? 1 : 0;
            std::cout << (r.passed() ? "PASS " : "FAIL ") << r.name << "\n";
        }
        std::cout << passed << "/" << res.reports.size() << " passed; artifacts in " << res.directory.string()
                  << "\n";
        return res.exit_code;
    } catch (const hjblab::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const hjblab::StageError& e) {
        std::cerr << "error in " << e.what() << "\n";
        return 3;
    }
}
