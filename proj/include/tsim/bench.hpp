#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "tsim/scenario.hpp"

namespace tsim {

/// Every (formulation, h) pair of a scenario, each run `repetitions` times.
struct ComparisonMatrix {
    Scenario scenario;
    std::vector<Formulation> formulations;
    std::vector<double> steps{1.0 / 120.0, 1.0 / 30.0};
    int repetitions = 3;
    /// Parallel arms when repetitions == 1; 0 reads TSIM_THREADS (default 1).
    int threads = 0;
};

struct ArmReport {
    std::string id;
    Formulation formulation;
    double h = 0.0;
    bool failed = false;
    std::string error;
    RunReport report;  // wall_time_s holds the median over repetitions
    std::vector<double> wall_times;
    /// Iteration/factorization totals and digest agreed across repetitions.
    bool deterministic = true;
    /// Max state deviation against the full arm at the same h; NaN if none.
    double trajectory_max_dev = 0.0;
    Trajectory trajectory;
};

struct ComparisonSummary {
    std::vector<ArmReport> arms;

    const ArmReport* find(FormulationMode mode, double h) const;
    /// total_iterations(split) / total_iterations(full) at step h.
    std::optional<double> iteration_ratio(double h) const;
    /// wall(full) / wall(split) at step h.
    std::optional<double> time_ratio(double h) const;
};

/// "full_h1-120", "split-genrou.flux_h1-30"
std::string arm_id(const Formulation& f, double h);

ComparisonSummary run_comparison(const CaseData& data, const ComparisonMatrix& matrix);

/// Writes <out>/<arm-id>/steps.csv per arm and <out>/summary.csv.
void emit_report(const ComparisonSummary& summary, const std::filesystem::path& out);

/// Thread count from TSIM_THREADS, at least 1.
int env_threads();

}  // namespace tsim
