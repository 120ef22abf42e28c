#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "tsim/dae.hpp"
#include "tsim/solver.hpp"

namespace tsim {

/// Parsed case: network plus devices on system base, links unresolved.
struct CaseData {
    std::string name;
    Grid grid;
    std::vector<DeviceEntry> devices;

    CaseData() = default;
    CaseData(const CaseData& other);
    CaseData& operator=(const CaseData& other);
    CaseData(CaseData&&) = default;
    CaseData& operator=(CaseData&&) = default;
};

CaseData parse_case(const std::filesystem::path& path);
CaseData parse_case_text(const std::string& text, const std::string& name = "inline");

/// Directory holding the bundled cases/ and scenarios/.
std::filesystem::path data_dir();
/// A bare bundled name ("smib") maps to data_dir()/cases/<name>.yaml;
/// anything else is a path, taken relative to `base` when not absolute.
std::filesystem::path resolve_case_path(const std::string& ref, const std::filesystem::path& base = {});
std::filesystem::path resolve_scenario_path(const std::string& ref);

/// Parses "0.5", "1e-3" or "1/120".
double parse_fraction(const std::string& text);

enum class EventKind { line_trip, line_reconnect, bus_fault_apply, bus_fault_clear, generator_trip };

std::string_view to_string(EventKind kind);

struct Event {
    double t = 0.0;
    EventKind kind = EventKind::line_trip;
    /// Branch id, bus id or device id depending on the kind.
    int target = 0;
    /// Device model for generator_trip.
    std::string model = "GENROU";
    /// Fault impedance for bus_fault_apply.
    Complex fault_impedance{0.0, 1e-4};
};

struct Scenario {
    std::string name;
    std::string case_ref;
    std::filesystem::path base_dir;
    double t_end = 5.0;
    Formulation formulation;
    SolverConfig solver;
    std::vector<Event> events;

    /// Checks ordering, t_end and fault pairing; targets are checked at run time.
    void validate() const;
};

Scenario parse_scenario(const std::filesystem::path& path);
Scenario parse_scenario_text(const std::string& text, const std::filesystem::path& base_dir = {},
                             const std::string& name = "inline");

/// Applies one event to a running system. `w` is the full vector at the
/// event instant; the stored vector is updated to it before the change.
void apply_event(PowerSystemDae& system, const Event& event);

/// One sample per accepted step plus the initial point, every column of the
/// full variable vector.
struct Trajectory {
    std::vector<std::string> names;
    std::vector<std::uint8_t> is_state;
    std::vector<double> t;
    std::vector<std::vector<double>> samples;

    void write_csv(std::ostream& os) const;
    void write_csv(const std::filesystem::path& path) const;
    /// FNV-1a over the bit patterns of t and every sample.
    std::uint64_t digest() const;
};

/// Largest |a - b| over state columns and common samples. Throws when the
/// grids or column sets differ.
double max_state_deviation(const Trajectory& a, const Trajectory& b);

struct RunReport {
    std::string formulation;
    double h = 0.0;
    std::vector<StepStats> steps;
    long total_iterations = 0;
    long total_factorizations = 0;
    int event_iterations = 0;
    double wall_time_s = 0.0;
    std::uint64_t digest = 0;
    RegistryCounts counts;
};

struct ScenarioResult {
    Trajectory trajectory;
    RunReport report;
};

/// Power flow, initialization, then the fixed-step march with events.
ScenarioResult run_scenario(const CaseData& data, const Scenario& scenario);

/// Builds and initializes the system for a case under a formulation.
struct PreparedSystem {
    std::unique_ptr<PowerSystemDae> system;
    std::vector<double> z0;
};
PreparedSystem prepare_system(const CaseData& data, const Formulation& formulation);

/// Shortest round-trip decimal form.
std::string format_double(double v);

void write_steps_csv(const std::vector<StepStats>& steps, std::ostream& os);

}  // namespace tsim
