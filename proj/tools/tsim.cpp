#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "tsim/bench.hpp"
#include "tsim/scenario.hpp"

using namespace tsim;
using json = nlohmann::json;

namespace {

constexpr int kUsageExit = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Options {
    std::string case_ref;
    std::string scenario_ref;
    std::string formulation;
    std::vector<std::string> split_blocks;
    std::vector<std::string> steps;
    std::optional<double> tol;
    std::optional<double> t_end;
    std::string out;
    int repetitions = 3;
};

std::set<std::string> parse_blocks(const std::vector<std::string>& items) {
    std::set<std::string> out;
    for (const auto& item : items) {
        std::stringstream ss(item);
        for (std::string tok; std::getline(ss, tok, ',');) {
            if (tok.empty() || tok == "none") continue;
            out.insert(resolve_block_alias(tok));
        }
    }
    return out;
}

double parse_step(const std::string& s) {
    try {
        return parse_fraction(s);
    } catch (const ParseError&) {
        throw UsageError("--h: not a number: '" + s + "'");
    }
}

struct Loaded {
    CaseData data;
    Scenario scenario;
};

Loaded load(const Options& o) {
    if (o.case_ref.empty() && o.scenario_ref.empty()) throw UsageError("one of --case or --scenario is required");
    Loaded l;
    if (!o.scenario_ref.empty()) {
        l.scenario = parse_scenario(resolve_scenario_path(o.scenario_ref));
    } else {
        l.scenario.name = o.case_ref;
        l.scenario.case_ref = o.case_ref;
    }
    const std::string case_ref = o.case_ref.empty() ? l.scenario.case_ref : o.case_ref;
    l.data = parse_case(resolve_case_path(case_ref, o.case_ref.empty() ? l.scenario.base_dir : std::filesystem::path{}));
    if (o.tol) l.scenario.solver.tol = *o.tol;
    if (o.t_end) l.scenario.t_end = *o.t_end;
    return l;
}

// Selection for a split run: explicit flag, else the scenario's, else every block.
std::set<std::string> split_selection(const Options& o, const Scenario& s) {
    if (!o.split_blocks.empty()) return parse_blocks(o.split_blocks);
    if (s.formulation.mode == FormulationMode::split) return s.formulation.selection;
    return {"all"};
}

Formulation pick_formulation(const Options& o, const Scenario& s) {
    if (o.formulation.empty()) {
        if (!o.split_blocks.empty()) throw UsageError("--split-blocks requires --formulation split");
        return s.formulation;
    }
    if (o.formulation == "full") {
        if (!o.split_blocks.empty()) throw UsageError("--split-blocks is not valid with --formulation full");
        return Formulation::full();
    }
    return Formulation::split(split_selection(o, s));
}

json counts_json(const RegistryCounts& c) {
    return {{"n_x", c.n_x},
            {"n_y_full", c.n_y_full},
            {"n_y_split", c.n_y_split},
            {"n_split_eligible", c.n_split_eligible},
            {"n_split_selected", c.n_split_selected}};
}

std::ofstream open_out(const std::filesystem::path& p) {
    std::ofstream os(p);
    if (!os) throw IoError("cannot write " + p.string());
    return os;
}

int cmd_run(const Options& o) {
    Loaded l = load(o);
    l.scenario.formulation = pick_formulation(o, l.scenario);
    if (o.steps.size() > 1) throw UsageError("run takes a single --h");
    if (!o.steps.empty()) l.scenario.solver.h = parse_step(o.steps.front());

    const ScenarioResult res = run_scenario(l.data, l.scenario);
    const RunReport& r = res.report;
    std::printf("case=%s formulation=%s h=%s steps=%zu iterations=%ld factorizations=%ld wall_time_s=%.6f digest=%016llx\n",
                l.data.name.c_str(), r.formulation.c_str(), format_double(r.h).c_str(), r.steps.size(),
                r.total_iterations, r.total_factorizations, r.wall_time_s,
                static_cast<unsigned long long>(r.digest));

    if (!o.out.empty()) {
        const std::filesystem::path dir(o.out);
        std::filesystem::create_directories(dir);
        res.trajectory.write_csv(dir / "trajectory.csv");
        auto steps = open_out(dir / "steps.csv");
        write_steps_csv(r.steps, steps);
        json rep = {{"case", l.data.name},
                    {"formulation", r.formulation},
                    {"h", r.h},
                    {"steps", r.steps.size()},
                    {"total_iterations", r.total_iterations},
                    {"total_factorizations", r.total_factorizations},
                    {"event_iterations", r.event_iterations},
                    {"wall_time_s", r.wall_time_s},
                    {"counts", counts_json(r.counts)}};
        char digest[20];
        std::snprintf(digest, sizeof digest, "%016llx", static_cast<unsigned long long>(r.digest));
        rep["digest"] = digest;
        open_out(dir / "report.json") << rep.dump(2) << '\n';
    }
    return 0;
}

int cmd_compare(const Options& o) {
    Loaded l = load(o);
    if (!o.formulation.empty()) throw UsageError("compare runs both formulations; drop --formulation");
    ComparisonMatrix m;
    m.scenario = l.scenario;
    m.formulations = {Formulation::full(), Formulation::split(split_selection(o, l.scenario))};
    if (!o.steps.empty()) {
        m.steps.clear();
        for (const auto& s : o.steps) m.steps.push_back(parse_step(s));
    }
    if (o.repetitions < 1) throw UsageError("--repetitions must be >= 1");
    m.repetitions = o.repetitions;

    const ComparisonSummary summary = run_comparison(l.data, m);
    std::printf("%-32s %10s %7s %10s %10s %12s %12s\n", "arm", "h", "steps", "iterations", "factorize",
                "wall_time_s", "max_dev");
    int failures = 0;
    for (const auto& a : summary.arms) {
        if (a.failed) {
            ++failures;
            std::printf("%-32s %10s failed: %s\n", a.id.c_str(), format_double(a.h).c_str(), a.error.c_str());
            continue;
        }
        std::printf("%-32s %10.6f %7zu %10ld %10ld %12.6f %12.3e\n", a.id.c_str(), a.h, a.report.steps.size(),
                    a.report.total_iterations, a.report.total_factorizations, a.report.wall_time_s,
                    a.trajectory_max_dev);
    }
    if (!o.out.empty()) emit_report(summary, o.out);
    if (failures == static_cast<int>(summary.arms.size())) {
        throw ConvergenceError("every arm failed", 0.0);
    }
    return 0;
}

int cmd_dump(const Options& o) {
    Loaded l = load(o);
    const Formulation f = pick_formulation(o, l.scenario);
    PreparedSystem p = prepare_system(l.data, f);
    PowerSystemDae& sys = *p.system;

    std::vector<double> res(sys.size());
    sys.begin_iteration(p.z0);
    sys.eval(0.0, p.z0, res);
    TripletList trip;
    sys.jacobian(0.0, p.z0, trip);

    json names = json::array();
    json kinds = json::array();
    for (Index i : sys.active()) {
        names.push_back(sys.registry().names()[i]);
        kinds.push_back(sys.registry().is_state(i) ? "state" : "algebraic");
    }
    json jac = json::array();
    for (const auto& t : trip) jac.push_back({t.row, t.col, t.value});
    json doc = {{"case", l.data.name},
                {"formulation", f.label()},
                {"counts", counts_json(sys.registry().counts())},
                {"variables", names},
                {"kinds", kinds},
                {"z", p.z0},
                {"residual", res},
                {"jacobian", jac}};
    if (o.out.empty()) {
        std::cout << doc.dump(1) << '\n';
    } else {
        open_out(o.out) << doc.dump(1) << '\n';
    }
    return 0;
}

int cmd_validate(const Options& o) {
    Loaded l = load(o);
    PreparedSystem p = prepare_system(l.data, Formulation::full());
    const auto& c = p.system->registry().counts();
    std::printf("ok: case=%s buses=%zu branches=%zu devices=%zu n_x=%zu n_y=%zu split_eligible=%zu\n",
                l.data.name.c_str(), l.data.grid.bus_count(), l.data.grid.branches.size(),
                l.data.devices.size(), c.n_x, c.n_y_full, c.n_split_eligible);
    return 0;
}

void add_common(CLI::App* cmd, Options& o, bool formulation, bool steps_many) {
    cmd->add_option("--case", o.case_ref, "bundled case name or path to a case file");
    cmd->add_option("--scenario", o.scenario_ref, "bundled scenario name or path to a scenario file");
    if (formulation) {
        cmd->add_option("--formulation", o.formulation, "full or split")->check(CLI::IsMember({"full", "split"}));
    }
    cmd->add_option("--split-blocks", o.split_blocks, "blocks to split: flux, lvpl, vdev, iqinj, all, none")
        ->delimiter(',');
    cmd->add_option("--tol", o.tol, "Newton residual tolerance")->check(CLI::PositiveNumber);
    cmd->add_option("--t-end", o.t_end, "end time, s")->check(CLI::PositiveNumber);
    cmd->add_option("--out", o.out, "output directory (dump: output file)");
    if (steps_many) {
        cmd->add_option("--h", o.steps, "step size, e.g. 1/120; repeatable");
    } else {
        cmd->add_option("--h", o.steps, "step size, e.g. 1/120")->expected(1);
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Transient-stability simulator with full and split DAE formulations"};
    app.set_help_flag("--help", "print help");
    app.require_subcommand(1);
    Options o;

    auto* run = app.add_subcommand("run", "simulate one scenario");
    add_common(run, o, true, false);
    auto* cmp = app.add_subcommand("compare", "full vs split over a set of step sizes");
    add_common(cmp, o, false, true);
    cmp->add_option("--repetitions", o.repetitions, "timing repetitions per arm");
    auto* dump = app.add_subcommand("dump", "residual and Jacobian at the initial point as JSON");
    add_common(dump, o, true, false);
    auto* val = app.add_subcommand("validate", "parse and initialize a case");
    add_common(val, o, false, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::fprintf(stderr, "error: usage: %s\n", e.what());
        return kUsageExit;
    }

    try {
        if (run->parsed()) return cmd_run(o);
        if (cmp->parsed()) return cmd_compare(o);
        if (dump->parsed()) return cmd_dump(o);
        return cmd_validate(o);
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: usage: %s\n", e.what());
        return kUsageExit;
    } catch (const Error& e) {
        std::fprintf(stderr, "error: %s: %s\n", std::string(to_string(e.kind())).c_str(), e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: internal: %s\n", e.what());
        return 1;
    }
}
