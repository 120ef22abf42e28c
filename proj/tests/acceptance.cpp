// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any fails.

#include <chrono>
#include <cstdio>
#include <string>

#include "support.hpp"
#include "tsim/bench.hpp"

using namespace tsim;

namespace {

// Pinned tolerances.
constexpr double kInitResidual = 1e-8;
constexpr double kFlatDrift = 1e-6;
constexpr double kFlatRuntime = 5.0;
constexpr double kTrajectoryDev = 1e-3;
constexpr double kEquivalenceRuntime = 30.0;
constexpr std::size_t kFluxDelta = 15;
constexpr double kLinearSplitBand = 0.05;
constexpr int kTimingRepetitions = 9;
constexpr double kOrderLo = 1.9;
constexpr double kOrderHi = 2.1;
constexpr double kJacobianRelErr = 1e-6;
constexpr int kJacobianPoints = 100;
constexpr double kExplicitAgreement = 1e-12;
constexpr int kExplicitPoints = 1000;

constexpr double kFine = 1.0 / 120.0;
constexpr double kCoarse = 1.0 / 30.0;

int failures = 0;

void report(int n, bool pass, const std::string& detail) {
    std::printf("criterion %2d: %s  %s\n", n, pass ? "PASS" : "FAIL", detail.c_str());
    std::fflush(stdout);
    if (!pass) ++failures;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

double inf_norm(std::span<const double> v) {
    double m = 0.0;
    for (double x : v) m = std::max(m, std::abs(x));
    return m;
}

void equilibrium_fidelity() {
    bool ok = true;
    std::string detail;
    for (const auto& name : test::bundled_case_names()) {
        const auto t0 = std::chrono::steady_clock::now();
        const CaseData data = test::bundled_case(name);
        PreparedSystem p = prepare_system(data, Formulation::full());
        std::vector<double> r(p.system->stored().size());
        p.system->residual_full(p.system->stored(), r);
        const double res = inf_norm(r);
        double drift = 0.0;
        for (double h : {kFine, kCoarse}) {
            drift = std::max(drift, test::max_drift(run_scenario(data, test::flat_scenario(name, 5.0, h)).trajectory));
        }
        const double wall = seconds_since(t0);
        ok = ok && res < kInitResidual && drift < kFlatDrift && wall < kFlatRuntime;
        detail += fmt("%s: residual %.1e drift %.1e %.2fs; ", name.c_str(), res, drift, wall);
    }
    report(1, ok, detail);
}

void trajectory_equivalence() {
    const auto t0 = std::chrono::steady_clock::now();
    const CaseData data = test::bundled_case("ieee14");
    Scenario s = test::bundled_scenario("ieee14_line_trip");
    s.solver.h = kFine;
    s.formulation = Formulation::full();
    const ScenarioResult full = run_scenario(data, s);
    s.formulation = Formulation::split({"genrou.flux"});
    const ScenarioResult split = run_scenario(data, s);
    const double dev = max_state_deviation(full.trajectory, split.trajectory);
    const double wall = seconds_since(t0);
    report(2, dev < kTrajectoryDev && wall < kEquivalenceRuntime,
           fmt("ieee14 line trip, h=1/120: max state deviation %.3e (limit %.0e), %.2fs", dev, kTrajectoryDev, wall));
}

void variable_accounting() {
    const CaseData data = test::bundled_case("ieee14");
    const PreparedSystem full = prepare_system(data, Formulation::full());
    const PreparedSystem split = prepare_system(data, Formulation::split({"genrou.flux"}));
    const std::size_t machines = std::count_if(data.devices.begin(), data.devices.end(),
                                               [](const DeviceEntry& e) { return e.device->model() == "GENROU"; });
    const std::size_t delta = full.system->registry().counts().n_y_full - split.system->registry().counts().n_y_split;
    report(3, machines == 5 && delta == kFluxDelta,
           fmt("%zu machines, n_y(full) - n_y(split) = %zu", machines, delta));
}

ComparisonSummary compare(const std::string& case_name, const std::string& scenario, const Formulation& split,
                          int repetitions) {
    ComparisonMatrix m;
    m.scenario = test::bundled_scenario(scenario);
    m.formulations = {Formulation::full(), split};
    m.steps = {kFine, kCoarse};
    m.repetitions = repetitions;
    return run_comparison(test::bundled_case(case_name), m);
}

long iterations(const ComparisonSummary& s, FormulationMode mode, double h) {
    const ArmReport* a = s.find(mode, h);
    return a == nullptr ? -1 : a->report.total_iterations;
}

void nonlinear_split_penalty() {
    const ComparisonSummary s = compare("ieee14", "ieee14_fault", Formulation::split({"genrou.flux"}), 1);
    const auto fine = s.iteration_ratio(kFine), coarse = s.iteration_ratio(kCoarse);
    if (!fine || !coarse) {
        report(4, false, "an arm failed");
        return;
    }
    const bool ordered = iterations(s, FormulationMode::split, kCoarse) >= iterations(s, FormulationMode::full, kCoarse);
    const bool shrinks = std::abs(*fine - 1.0) < std::abs(*coarse - 1.0);
    report(4, ordered && shrinks,
           fmt("ieee14 fault: h=1/30 split %ld vs full %ld (ratio %.3f); h=1/120 ratio %.3f",
               iterations(s, FormulationMode::split, kCoarse), iterations(s, FormulationMode::full, kCoarse), *coarse,
               *fine));
}

void linear_split_neutrality() {
    const Formulation linear = Formulation::split({"regca.lvpl", "reeca.vdev", "reeca.iqinj"});
    const ComparisonSummary s = compare("ieee14_renewable", "ieee14_renewable_fault", linear, 1);
    bool ok = true;
    std::string detail = "renewable fault:";
    for (double h : {kFine, kCoarse}) {
        const auto r = s.iteration_ratio(h);
        ok = ok && r && std::abs(*r - 1.0) <= kLinearSplitBand;
        detail += fmt(" h=1/%d split %ld full %ld (%+.1f%%);", static_cast<int>(std::lround(1.0 / h)),
                      iterations(s, FormulationMode::split, h), iterations(s, FormulationMode::full, h),
                      r ? 100.0 * (*r - 1.0) : 0.0);
    }
    report(5, ok, detail + fmt(" band %.0f%%", 100.0 * kLinearSplitBand));
}

void step_size_scaling() {
    struct Item {
        const char* case_name;
        const char* scenario;
    };
    bool ok = true;
    std::string detail;
    for (const Item& it : {Item{"smib", "smib_fault"}, Item{"ieee14", "ieee14_fault"},
                           Item{"ieee14_renewable", "ieee14_renewable_fault"}}) {
        const Scenario sc = test::bundled_scenario(it.scenario);
        const ComparisonSummary s = compare(it.case_name, it.scenario, sc.formulation, kTimingRepetitions);
        const ArmReport* ff = s.find(FormulationMode::full, kFine);
        const ArmReport* fc = s.find(FormulationMode::full, kCoarse);
        const ArmReport* sf = s.find(FormulationMode::split, kFine);
        const ArmReport* scs = s.find(FormulationMode::split, kCoarse);
        if (!ff || !fc || !sf || !scs) {
            ok = false;
            detail += std::string(it.case_name) + ": arm failed; ";
            continue;
        }
        const double full_speedup = ff->report.wall_time_s / fc->report.wall_time_s;
        const double split_speedup = sf->report.wall_time_s / scs->report.wall_time_s;
        ok = ok && fc->report.wall_time_s < ff->report.wall_time_s && split_speedup <= full_speedup;
        detail += fmt("%s: full x%.2f split x%.2f; ", it.case_name, full_speedup, split_speedup);
    }
    report(6, ok, detail);
}

void integrator_order() {
    class Decay final : public DaeSystem {
    public:
        std::size_t size() const override { return 1; }
        std::span<const std::uint8_t> differential() const override { return diff_; }
        void eval(double, std::span<const double> z, std::span<double> out) override { out[0] = -z[0]; }
        void jacobian(double, std::span<const double>, TripletList& out) override { out.push_back({0, 0, -1.0}); }

    private:
        std::vector<std::uint8_t> diff_{1};
    };
    std::vector<double> err;
    for (double h : {1.0 / 30.0, 1.0 / 60.0, 1.0 / 120.0}) {
        Decay d;
        SolverConfig cfg;
        cfg.h = h;
        cfg.tol = 1e-14;
        SparseLu lu;
        std::vector<double> z{1.0}, f{-1.0};
        for (long k = 0; k < step_count(1.0, h); ++k) {
            StepOutcome s = newton_solve_step(d, k * h, z, f, cfg, false, lu);
            z = s.z;
            f = s.f;
        }
        err.push_back(std::abs(z[0] - std::exp(-1.0)));
    }
    const double o1 = std::log2(err[0] / err[1]), o2 = std::log2(err[1] / err[2]);
    report(7, o1 >= kOrderLo && o1 <= kOrderHi && o2 >= kOrderLo && o2 <= kOrderHi,
           fmt("observed order %.4f (1/30->1/60), %.4f (1/60->1/120)", o1, o2));
}

// A point is away from breakpoints when one-sided differences agree with
// the central difference in every column.
bool smooth_at(PowerSystemDae& sys, const std::vector<double>& w, const test::Dense& central) {
    const std::size_t n = w.size();
    std::vector<double> r0(n), rp(n), x = w;
    sys.residual_full(w, r0);
    for (std::size_t j = 0; j < n; ++j) {
        const double step = 1e-6 * std::max(1.0, std::abs(w[j]));
        x[j] = w[j] + step;
        sys.residual_full(x, rp);
        x[j] = w[j];
        double scale = 1.0;
        for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(central[i][j]));
        for (std::size_t i = 0; i < n; ++i) {
            if (std::abs((rp[i] - r0[i]) / step - central[i][j]) > 1e-3 * scale) return false;
        }
    }
    return true;
}

void jacobian_correctness() {
    bool ok = true;
    std::string detail;
    for (const auto& name : test::bundled_case_names()) {
        PreparedSystem p = prepare_system(test::bundled_case(name), Formulation::full());
        PowerSystemDae& sys = *p.system;
        const std::vector<double> base(sys.stored().begin(), sys.stored().end());
        std::mt19937_64 rng(2024);
        std::uniform_real_distribution<double> d(-0.05, 0.05);
        double worst = 0.0;
        int accepted = 0, rejected = 0;
        while (accepted < kJacobianPoints) {
            std::vector<double> w = base;
            for (double& x : w) x += d(rng);
            const auto fd = test::fd_jacobian([&](std::span<const double> x, std::span<double> out) { sys.residual_full(x, out); }, w);
            if (!smooth_at(sys, w, fd)) {
                ++rejected;
                continue;
            }
            TripletList trip;
            sys.jacobian_full(w, trip);
            worst = std::max(worst, test::jacobian_mismatch(test::to_dense(trip, w.size()), fd));
            ++accepted;
        }
        ok = ok && worst < kJacobianRelErr;
        detail += fmt("%s: worst %.1e over %d points (%d near breakpoints skipped); ", name.c_str(), worst, accepted,
                      rejected);
    }
    report(8, ok, detail);
}

void split_explicit_consistency() {
    bool ok = true;
    std::size_t blocks = 0;
    double worst_zero = 0.0, weakest_nonzero = 1.0;
    for (const auto& name : test::bundled_case_names()) {
        PreparedSystem p = prepare_system(test::bundled_case(name), Formulation::full());
        PowerSystemDae& sys = *p.system;
        const auto& reg = sys.registry();
        const std::vector<double> base(sys.stored().begin(), sys.stored().end());
        std::mt19937_64 rng(99);
        std::uniform_real_distribution<double> d(-0.3, 0.3), vmag(0.2, 1.3);
        std::vector<double> r(base.size());
        for (std::size_t di = 0; di < sys.device_count(); ++di) {
            const Device& dev = sys.device(di);
            const auto decls = dev.split_blocks();
            for (std::size_t b = 0; b < decls.size(); ++b) {
                ++blocks;
                std::vector<double> vals(decls[b].outputs.size());
                for (int trial = 0; trial < kExplicitPoints; ++trial) {
                    std::vector<double> w = base;
                    for (double& x : w) x += d(rng);
                    for (std::size_t bus = 0; bus < sys.grid().bus_count(); ++bus) w[reg.bus_v(bus)] = vmag(rng);
                    dev.explicit_block(b, w, vals);
                    for (std::size_t o = 0; o < vals.size(); ++o) w[dev.address().vars[decls[b].outputs[o]]] = vals[o];
                    sys.residual_full(w, r);
                    for (std::size_t o = 0; o < vals.size(); ++o) {
                        worst_zero = std::max(worst_zero, std::abs(r[dev.address().vars[decls[b].outputs[o]]]));
                    }
                    // Converse: moving any output off its explicit value leaves a nonzero residual.
                    for (std::size_t o = 0; o < vals.size(); ++o) {
                        const Index row = dev.address().vars[decls[b].outputs[o]];
                        w[row] = vals[o] + 1e-6;
                        sys.residual_full(w, r);
                        weakest_nonzero = std::min(weakest_nonzero, std::abs(r[row]));
                        w[row] = vals[o];
                    }
                }
            }
        }
    }
    ok = worst_zero < kExplicitAgreement && weakest_nonzero > kExplicitAgreement;
    report(9, ok, fmt("%zu blocks x %d points: max |residual| at explicit value %.1e, min off-value %.1e", blocks,
                      kExplicitPoints, worst_zero, weakest_nonzero));
}

// Residual of 1 for the first `needed` iterations, then 0.
class Scripted final : public DaeSystem {
public:
    explicit Scripted(int needed) : needed_(needed) {}
    std::size_t size() const override { return 1; }
    std::span<const std::uint8_t> differential() const override { return diff_; }
    void eval(double, std::span<const double>, std::span<double> out) override { out[0] = count_ <= needed_ ? 1.0 : 0.0; }
    void jacobian(double, std::span<const double>, TripletList& out) override { out.push_back({0, 0, 1.0}); }
    void begin_iteration(std::span<const double>) override { ++count_; }

private:
    int needed_;
    int count_ = 0;
    std::vector<std::uint8_t> diff_{0};
};

void dishonest_accounting() {
    SolverConfig cfg;
    bool ok = true;
    std::string mismatches;
    for (int k = 1; k <= 10; ++k) {
        // Honest: one factorization per iteration. Dishonest: reuse, rebuild at
        // iterations 4, 7, 10; plus iteration 1 when nothing is factorized yet.
        const int honest_expected = k, warm_expected = (k - 1) / 3, cold_expected = 1 + (k - 1) / 3;
        std::vector<double> z{0.0}, f{0.0};
        SparseLu lu;
        Scripted h(k);
        const StepStats sh = newton_solve_step(h, 0.0, z, f, cfg, true, lu).stats;
        Scripted w(k);
        const StepStats sw = newton_solve_step(w, 0.0, z, f, cfg, false, lu).stats;
        SparseLu cold;
        Scripted c(k);
        const StepStats sc = newton_solve_step(c, 0.0, z, f, cfg, false, cold).stats;
        const bool row_ok = sh.iterations == k && sw.iterations == k && sc.iterations == k &&
                            sh.factorizations == honest_expected && sw.factorizations == warm_expected &&
                            sc.factorizations == cold_expected;
        if (!row_ok) mismatches += fmt(" k=%d(%d/%d/%d)", k, sh.factorizations, sw.factorizations, sc.factorizations);
        ok = ok && row_ok;
    }
    report(10, ok, ok ? "k = 1..10 honest, dishonest warm and cold all match the schedule" : "mismatch:" + mismatches);
}

template <typename F>
void guarded(int n, F&& f) {
    try {
        f();
    } catch (const std::exception& e) {
        report(n, false, std::string("error: ") + e.what());
    }
}

}  // namespace

// With no arguments every criterion runs; otherwise only the listed numbers.
int main(int argc, char** argv) {
    using Check = void (*)();
    const Check checks[] = {equilibrium_fidelity,    trajectory_equivalence,     variable_accounting,
                            nonlinear_split_penalty, linear_split_neutrality,    step_size_scaling,
                            integrator_order,        jacobian_correctness,       split_explicit_consistency,
                            dishonest_accounting};
    std::vector<int> selected;
    for (int i = 1; i < argc; ++i) {
        const int n = std::atoi(argv[i]);
        if (n < 1 || n > 10) {
            std::fprintf(stderr, "usage: acceptance [criterion 1-10 ...]\n");
            return 2;
        }
        selected.push_back(n);
    }
    if (selected.empty()) {
        for (int n = 1; n <= 10; ++n) selected.push_back(n);
    }
    for (int n : selected) guarded(n, checks[n - 1]);
    std::printf("%d of %zu criteria failed\n", failures, selected.size());
    return failures == 0 ? 0 : 1;
}
