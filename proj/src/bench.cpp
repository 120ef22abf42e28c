#include "tsim/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <thread>

namespace tsim {

namespace {

std::string h_label(double h) {
    const double inv = 1.0 / h;
    if (std::abs(inv - std::round(inv)) < 1e-9 * inv) return "1-" + std::to_string(std::llround(inv));
    std::string s = format_double(h);
    std::replace(s.begin(), s.end(), '.', 'p');
    return s;
}

double median(std::vector<double> v) {
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

void run_arm(const CaseData& data, const Scenario& base, int repetitions, ArmReport& arm) {
    Scenario s = base;
    s.formulation = arm.formulation;
    s.solver.h = arm.h;
    try {
        for (int r = 0; r < repetitions; ++r) {
            ScenarioResult res = run_scenario(data, s);
            arm.wall_times.push_back(res.report.wall_time_s);
            if (r == 0) {
                arm.report = std::move(res.report);
                arm.trajectory = std::move(res.trajectory);
            } else if (res.report.total_iterations != arm.report.total_iterations ||
                       res.report.total_factorizations != arm.report.total_factorizations ||
                       res.report.digest != arm.report.digest) {
                arm.deterministic = false;
            }
        }
        arm.report.wall_time_s = median(arm.wall_times);
    } catch (const std::exception& e) {
        arm.failed = true;
        arm.error = e.what();
        arm.trajectory = {};
    }
}

}  // namespace

int env_threads() {
    const char* env = std::getenv("TSIM_THREADS");
    if (env == nullptr) return 1;
    const int n = std::atoi(env);
    return n > 0 ? n : 1;
}

std::string arm_id(const Formulation& f, double h) {
    std::string label = f.label();
    std::replace(label.begin(), label.end(), ':', '-');
    std::replace(label.begin(), label.end(), '+', '-');
    return label + "_h" + h_label(h);
}

const ArmReport* ComparisonSummary::find(FormulationMode mode, double h) const {
    for (const auto& a : arms) {
        if (a.formulation.mode == mode && std::abs(a.h - h) < 1e-12 && !a.failed) return &a;
    }
    return nullptr;
}

std::optional<double> ComparisonSummary::iteration_ratio(double h) const {
    const ArmReport* f = find(FormulationMode::full, h);
    const ArmReport* s = find(FormulationMode::split, h);
    if (f == nullptr || s == nullptr || f->report.total_iterations == 0) return std::nullopt;
    return static_cast<double>(s->report.total_iterations) / static_cast<double>(f->report.total_iterations);
}

std::optional<double> ComparisonSummary::time_ratio(double h) const {
    const ArmReport* f = find(FormulationMode::full, h);
    const ArmReport* s = find(FormulationMode::split, h);
    if (f == nullptr || s == nullptr || s->report.wall_time_s <= 0.0) return std::nullopt;
    return f->report.wall_time_s / s->report.wall_time_s;
}

ComparisonSummary run_comparison(const CaseData& data, const ComparisonMatrix& matrix) {
    if (matrix.repetitions < 1) throw ConfigurationError("compare: repetitions must be >= 1");
    if (matrix.formulations.empty() || matrix.steps.empty()) {
        throw ConfigurationError("compare: need at least one formulation and one step size");
    }
    ComparisonSummary summary;
    for (const auto& f : matrix.formulations) {
        for (double h : matrix.steps) {
            if (!(h > 0.0)) throw ConfigurationError("compare: step sizes must be > 0");
            ArmReport a;
            a.id = arm_id(f, h);
            a.formulation = f;
            a.h = h;
            summary.arms.push_back(std::move(a));
        }
    }

    // Timing runs stay sequential so that arms do not compete for cores.
    const int threads = matrix.repetitions > 1 ? 1 : (matrix.threads > 0 ? matrix.threads : env_threads());
    if (threads <= 1) {
        for (auto& a : summary.arms) run_arm(data, matrix.scenario, matrix.repetitions, a);
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (int i = 0; i < threads; ++i) {
            pool.emplace_back([&] {
                for (std::size_t k; (k = next++) < summary.arms.size();) {
                    run_arm(data, matrix.scenario, matrix.repetitions, summary.arms[k]);
                }
            });
        }
    }

    for (auto& a : summary.arms) {
        a.trajectory_max_dev = std::numeric_limits<double>::quiet_NaN();
        const ArmReport* ref = summary.find(FormulationMode::full, a.h);
        if (a.failed || ref == nullptr) continue;
        a.trajectory_max_dev = &a == ref ? 0.0 : max_state_deviation(ref->trajectory, a.trajectory);
    }
    return summary;
}

void emit_report(const ComparisonSummary& summary, const std::filesystem::path& out) {
    std::error_code ec;
    std::filesystem::create_directories(out, ec);
    if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());

    for (const auto& a : summary.arms) {
        const auto dir = out / a.id;
        std::filesystem::create_directories(dir, ec);
        if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
        const auto path = dir / "steps.csv";
        std::ofstream os(path);
        if (!os) throw IoError("cannot write " + path.string());
        write_steps_csv(a.report.steps, os);
        if (!os) throw IoError("write failed: " + path.string());
    }

    const auto path = out / "summary.csv";
    std::ofstream os(path);
    if (!os) throw IoError("cannot write " + path.string());
    os << "formulation,h,steps,total_iterations,total_factorizations,wall_time_s,trajectory_max_dev\n";
    for (const auto& a : summary.arms) {
        os << a.formulation.label() << ',' << format_double(a.h) << ',';
        if (a.failed) {
            os << ",,,,\n";
            continue;
        }
        os << a.report.steps.size() << ',' << a.report.total_iterations << ','
           << a.report.total_factorizations << ',' << format_double(a.report.wall_time_s) << ',';
        if (!std::isnan(a.trajectory_max_dev)) os << format_double(a.trajectory_max_dev);
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace tsim
