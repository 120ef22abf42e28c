#include <gtest/gtest.h>

#include <cstdio>
#include <fstream>
#include <regex>
#include <sys/wait.h>

#include "support.hpp"
#include "tsim/bench.hpp"

using namespace tsim;

namespace {

struct Command {
    int exit_code;
    std::string output;
};

// Runs the CLI with stderr folded into the captured output.
Command cli(const std::string& args) {
    const std::string cmd = std::string(TSIM_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (pipe == nullptr) return {-1, ""};
    std::string out;
    char buf[512];
    while (std::fgets(buf, sizeof buf, pipe) != nullptr) out += buf;
    const int status = pclose(pipe);
    return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::filesystem::path scratch_dir(const std::string& name) {
    auto dir = std::filesystem::temp_directory_path() / ("tsim_test_" + name);
    std::filesystem::remove_all(dir);
    return dir;
}

std::vector<std::string> lines(const std::filesystem::path& p) {
    std::ifstream is(p);
    std::vector<std::string> out;
    for (std::string l; std::getline(is, l);) out.push_back(l);
    return out;
}

ComparisonMatrix smib_matrix(double t_end) {
    ComparisonMatrix m;
    m.scenario = test::bundled_scenario("smib_fault");
    m.scenario.t_end = t_end;
    m.formulations = {Formulation::full(), Formulation::split({"genrou.flux"})};
    m.repetitions = 1;
    return m;
}

}  // namespace

TEST(Comparison, ArmsCoverTheMatrix) {
    const ComparisonSummary s = run_comparison(test::bundled_case("smib"), smib_matrix(1.0));
    ASSERT_EQ(s.arms.size(), 4u);
    EXPECT_EQ(s.arms[0].id, "full_h1-120");
    EXPECT_EQ(s.arms[3].id, "split-genrou.flux_h1-30");
    for (const auto& a : s.arms) EXPECT_FALSE(a.failed) << a.id << ": " << a.error;
    EXPECT_EQ(s.arms[0].report.steps.size(), s.arms[2].report.steps.size());
    EXPECT_EQ(s.arms[1].report.steps.size(), s.arms[3].report.steps.size());
    EXPECT_EQ(s.arms[0].trajectory_max_dev, 0.0);
    EXPECT_LT(s.arms[2].trajectory_max_dev, 1e-3);
}

TEST(Comparison, SplitNeedsAtLeastAsManyIterationsAtLargeStep) {
    const ComparisonSummary s = run_comparison(test::bundled_case("smib"), smib_matrix(3.0));
    const auto ratio = s.iteration_ratio(1.0 / 30.0);
    ASSERT_TRUE(ratio.has_value());
    EXPECT_GE(*ratio, 1.0);
}

TEST(Comparison, RepetitionsAreDeterministic) {
    ComparisonMatrix m = smib_matrix(0.5);
    m.steps = {1.0 / 120.0};
    m.repetitions = 3;
    const ComparisonSummary s = run_comparison(test::bundled_case("smib"), m);
    for (const auto& a : s.arms) {
        EXPECT_TRUE(a.deterministic) << a.id;
        EXPECT_EQ(a.wall_times.size(), 3u);
    }
}

TEST(Comparison, ParallelArmsMatchSequential) {
    ComparisonMatrix m = smib_matrix(0.5);
    const ComparisonSummary seq = run_comparison(test::bundled_case("smib"), m);
    m.threads = 3;
    const ComparisonSummary par = run_comparison(test::bundled_case("smib"), m);
    ASSERT_EQ(seq.arms.size(), par.arms.size());
    for (std::size_t i = 0; i < seq.arms.size(); ++i) {
        EXPECT_EQ(seq.arms[i].report.digest, par.arms[i].report.digest);
        EXPECT_EQ(seq.arms[i].report.total_iterations, par.arms[i].report.total_iterations);
    }
}

TEST(Comparison, FailedArmIsRecorded) {
    ComparisonMatrix m = smib_matrix(0.5);
    m.steps = {1.0 / 120.0, 0.07};  // events at 0.1 and 0.2 are off the 0.07 grid
    const ComparisonSummary s = run_comparison(test::bundled_case("smib"), m);
    EXPECT_FALSE(s.arms[0].failed);
    EXPECT_TRUE(s.arms[1].failed);
    EXPECT_FALSE(s.arms[1].error.empty());
}

TEST(Report, LayoutAndRowCounts) {
    ComparisonMatrix m;
    m.scenario = test::flat_scenario("smib", 5.0, 1.0 / 120.0);
    m.formulations = {Formulation::full()};
    m.steps = {1.0 / 120.0};
    m.repetitions = 1;
    const ComparisonSummary s = run_comparison(test::bundled_case("smib"), m);
    const auto dir = scratch_dir("report");
    emit_report(s, dir);
    const auto steps = lines(dir / "full_h1-120" / "steps.csv");
    EXPECT_EQ(steps.size(), 601u);
    const auto summary = lines(dir / "summary.csv");
    ASSERT_EQ(summary.size(), 2u);
    EXPECT_EQ(summary[0], "formulation,h,steps,total_iterations,total_factorizations,wall_time_s,trajectory_max_dev");
    EXPECT_EQ(summary[1].rfind("full,0.008333333333333333,600,", 0), 0u) << summary[1];
    std::filesystem::remove_all(dir);
}

TEST(Cli, CompareProducesFourArms) {
    const auto dir = scratch_dir("cli_compare");
    const Command c = cli("compare --case smib --h 1/120 --h 1/30 --t-end 0.5 --repetitions 1 --out " + dir.string());
    ASSERT_EQ(c.exit_code, 0) << c.output;
    EXPECT_EQ(lines(dir / "summary.csv").size(), 5u);
    int arms = 0;
    for (const auto& e : std::filesystem::directory_iterator(dir)) arms += e.is_directory() ? 1 : 0;
    EXPECT_EQ(arms, 4);
    std::filesystem::remove_all(dir);
}

TEST(Cli, EmptySplitBehavesLikeFull) {
    const Command full = cli("run --case smib --t-end 0.5 --formulation full");
    const Command none = cli("run --case smib --t-end 0.5 --formulation split --split-blocks none");
    ASSERT_EQ(full.exit_code, 0) << full.output;
    ASSERT_EQ(none.exit_code, 0) << none.output;
    // Everything but the formulation label and wall time must match.
    auto strip = [](std::string s) {
        s = std::regex_replace(s, std::regex("formulation=\\S+ "), "");
        return std::regex_replace(s, std::regex("wall_time_s=\\S+ "), "");
    };
    EXPECT_EQ(strip(full.output), strip(none.output));
}

TEST(Cli, RunWritesOutputs) {
    const auto dir = scratch_dir("cli_run");
    const Command c = cli("run --scenario smib_fault --t-end 0.5 --out " + dir.string());
    ASSERT_EQ(c.exit_code, 0) << c.output;
    EXPECT_EQ(lines(dir / "steps.csv").size(), 61u);
    EXPECT_EQ(lines(dir / "trajectory.csv").size(), 62u);
    EXPECT_TRUE(std::filesystem::exists(dir / "report.json"));
    std::filesystem::remove_all(dir);
}

TEST(Cli, ValidateNamesViolatedInvariant) {
    const auto dir = scratch_dir("cli_validate");
    std::filesystem::create_directories(dir);
    std::string text;
    for (const auto& l : lines(data_dir() / "cases" / "smib.yaml")) {
        std::string line = l;
        if (const auto at = line.find("x_d_pp: 0.25"); at != std::string::npos) line.replace(at, 12, "x_d_pp: 0.30");
        text += line + "\n";
    }
    std::ofstream(dir / "bad.yaml") << text;
    const Command c = cli("validate --case " + (dir / "bad.yaml").string());
    EXPECT_EQ(c.exit_code, 1);
    EXPECT_NE(c.output.find("x_d_p > x_d_pp"), std::string::npos) << c.output;
    EXPECT_NE(c.output.find("error: validation:"), std::string::npos) << c.output;

    const Command ok = cli("validate --case smib");
    EXPECT_EQ(ok.exit_code, 0) << ok.output;
    EXPECT_EQ(ok.output.rfind("ok: case=smib", 0), 0u) << ok.output;
    std::filesystem::remove_all(dir);
}

TEST(Cli, UsageErrorsExitTwo) {
    EXPECT_EQ(cli("run").exit_code, 2);
    EXPECT_EQ(cli("run --case smib --formulation full --split-blocks flux").exit_code, 2);
    EXPECT_EQ(cli("run --case smib --formulation sideways").exit_code, 2);
    EXPECT_EQ(cli("bogus").exit_code, 2);
    EXPECT_EQ(cli("compare --case smib --h abc").exit_code, 2);
}

TEST(Cli, LibraryErrorsExitOne) {
    const Command c = cli("run --case does_not_exist");
    EXPECT_EQ(c.exit_code, 1);
    EXPECT_EQ(c.output.rfind("error: ", 0), 0u) << c.output;
}

TEST(Cli, DumpEmitsJson) {
    const Command c = cli("dump --case smib");
    ASSERT_EQ(c.exit_code, 0) << c.output;
    EXPECT_NE(c.output.find("\"jacobian\""), std::string::npos);
    EXPECT_NE(c.output.find("\"GENROU_1.delta\""), std::string::npos);
}
