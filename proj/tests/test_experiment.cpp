#include "hjblab/experiment.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <nlohmann/json.hpp>
#include <sstream>

using namespace hjblab;
namespace fs = std::filesystem;

namespace {

std::string config_error(const std::string& text) {
    try {
        parse_config_text(text);
    } catch (const ConfigError& e) {
        return e.what();
    }
    return "";
}

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("hjblab_test_" + name);
    fs::remove_all(dir);
    return dir;
}

ExperimentConfig small_lq(const fs::path& out) {
    auto cfg = parse_config_text(R"(
problem: {kind: lq}
simulation: {n_steps: 50, n_paths: 400, dump_paths: 4}
value: {family_size: 8, value_paths: 400, eval_points: [[0.0, 1.0]]}
synthesis: {n_challengers: 10, eval_paths: 600, dpp_times: [0.5], dpp_outer: 100, dpp_inner: 50}
diagnostics: {n_triples: 12, n_paths: 200}
)");
    cfg.output.directory = out.string();
    return cfg;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace

TEST(Config, EmptyDocumentGivesDefaults) {
    const auto cfg = parse_config_text("{}");
    EXPECT_EQ(cfg.simulation.n_paths, 10000u);
    EXPECT_EQ(cfg.simulation.n_steps, 200u);
    EXPECT_EQ(cfg.simulation.master_seed, 42u);
    EXPECT_EQ(cfg, ExperimentConfig{});
}

TEST(Config, UnknownKeyIsNamed) {
    EXPECT_NE(config_error("problem: {sigma_control_dependent: 1}").find("problem.sigma_control_dependent"),
              std::string::npos);
    EXPECT_NE(config_error("extras: {}").find("extras"), std::string::npos);
}

TEST(Config, TypeMismatchIsNamed) {
    EXPECT_NE(config_error("simulation: {n_paths: many}").find("simulation.n_paths"), std::string::npos);
    EXPECT_NE(config_error("simulation: {n_steps: -3}").find("simulation.n_steps"), std::string::npos);
    EXPECT_NE(config_error("problem: {kind: wave}").find("problem.kind"), std::string::npos);
    EXPECT_NE(config_error("value: {eval_points: [[1.0, 1.0]]}").find("value.eval_points"), std::string::npos);
    EXPECT_NE(config_error("value: {eval_points: [[0.995, 1.0]]}").find("value.eval_points"), std::string::npos);
    EXPECT_EQ(config_error("value: {eval_points: [[0.99, 1.0]]}"), "");
    EXPECT_NE(config_error("value: {truncation_list: [2, 1]}").find("value.truncation_list"), std::string::npos);
    EXPECT_NE(config_error("simulation: [").find("malformed"), std::string::npos);
}

TEST(Config, EmitParseRoundTrip) {
    auto cfg = parse_config_text("problem: {kind: reaction_diffusion, reaction: clipped_cubic, reaction_param: 1.3}");
    cfg.simulation.master_seed = 0xFFFFFFFFFFFFFFFFull;
    cfg.value.eval_points = {{0.1, 0.3333333333333333}};
    cfg.diagnostics.scans = {"c11", "midpoint"};
    EXPECT_EQ(parse_config_text(emit_config(cfg)), cfg);
    EXPECT_EQ(parse_config_text(emit_config(ExperimentConfig{})), ExperimentConfig{});
}

TEST(Stages, SubcommandMapping) {
    using S = Stage;
    EXPECT_EQ(stages_for("simulate"), (std::vector<S>{S::build, S::simulate, S::verify}));
    EXPECT_EQ(stages_for("compare"), (std::vector<S>{S::build, S::compare, S::verify}));
    EXPECT_EQ(stages_for("run-all"),
              (std::vector<S>{S::build, S::simulate, S::value, S::synthesize, S::diagnose, S::verify}));
    EXPECT_THROW(stages_for("launch"), ConfigError);
}

TEST(Sha256, KnownVectors) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    EXPECT_EQ(sha256_hex(""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
}

TEST(Plan, ListsStagesAndScans) {
    std::ostringstream os;
    print_plan(os, ExperimentConfig{}, stages_for("diagnose"));
    const auto s = os.str();
    EXPECT_NE(s.find("build diagnose verify"), std::string::npos);
    EXPECT_NE(s.find("semiconcavity"), std::string::npos);
    EXPECT_NE(s.find("10000 paths x 200 steps, seed 42"), std::string::npos);
}

TEST(Pipeline, SmallLqRunPassesAndWritesArtifacts) {
    const auto out = scratch("lq");
    const auto res = run_experiment(small_lq(out), stages_for("run-all"));
    for (const auto& r : res.reports) EXPECT_TRUE(r.passed()) << r.name << " " << r.witness.dump();
    EXPECT_EQ(res.exit_code, 0);
    for (const char* f : {"resolved-config.yaml", "reports.json", "summary.txt", "manifest.json", "paths.csv",
                          "value_field.csv", "closed_loop_paths.csv"}) {
        EXPECT_TRUE(fs::exists(out / f)) << f;
    }
    const auto manifest = nlohmann::json::parse(slurp(out / "manifest.json"));
    EXPECT_TRUE(manifest["all_passed"].get<bool>());
    for (const auto& f : manifest["files"]) {
        EXPECT_EQ(f["sha256"], sha256_hex(slurp(out / f["name"].get<std::string>())));
    }
    EXPECT_EQ(parse_config(out / "resolved-config.yaml"), small_lq(out));
}

TEST(Pipeline, CorruptedGainFailsOptimality) {
    const auto out = scratch("gain");
    auto cfg = small_lq(out);
    cfg.synthesis.gain_scale = 2.0;
    const auto res = run_experiment(cfg, stages_for("synthesize"));
    EXPECT_EQ(res.exit_code, 1);
    bool found = false;
    for (const auto& r : res.reports) {
        if (r.name.rfind("verify_optimality", 0) == 0) {
            found = true;
            EXPECT_FALSE(r.passed());
        }
    }
    EXPECT_TRUE(found);
}

TEST(Pipeline, StageErrorNamesTheStage) {
    auto cfg = small_lq(scratch("stage"));
    cfg.synthesis.dpp_times = {1.5};
    try {
        run_experiment(cfg, stages_for("synthesize"));
        FAIL() << "expected StageError";
    } catch (const StageError& e) {
        EXPECT_EQ(e.stage(), "synthesize");
        EXPECT_NE(std::string(e.what()).find("stage 'synthesize'"), std::string::npos);
    }
}

TEST(Pipeline, OracleNeedsLqData) {
    auto cfg = small_lq(scratch("oracle"));
    cfg.problem.kind = "reaction_diffusion";
    cfg.problem.reaction = "clipped_cubic";
    cfg.problem.reaction_param = 1.0;
    EXPECT_THROW(run_experiment(cfg, stages_for("synthesize")), StageError);
}
