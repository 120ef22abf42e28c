#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "tsim/device.hpp"
#include "tsim/grid.hpp"
#include "tsim/solver.hpp"

namespace tsim {

enum class FormulationMode { full, split };

/// Which internal algebraic blocks enter the Newton system. In split mode
/// the selected blocks are evaluated explicitly from the previous iterate
/// and held constant while solving the current iteration.
struct Formulation {
    FormulationMode mode = FormulationMode::full;
    std::set<std::string> selection;

    static Formulation full() { return {}; }
    static Formulation split(std::set<std::string> blocks) {
        return {FormulationMode::split, std::move(blocks)};
    }
    bool selects(const std::string& block) const {
        return mode == FormulationMode::split && selection.contains(block);
    }
    /// "full" or "split:<block>+<block>..."
    std::string label() const;
};

/// Expands user-facing block names: "flux" -> "genrou.flux", "lvpl" ->
/// "regca.lvpl", "vdev" -> "reeca.vdev", "iqinj" -> "reeca.iqinj".
/// Fully qualified ids pass through.
std::string resolve_block_alias(const std::string& name);

struct RegistryCounts {
    std::size_t n_x = 0;
    std::size_t n_y_full = 0;
    std::size_t n_y_split = 0;
    std::size_t n_split_eligible = 0;
    std::size_t n_split_selected = 0;
};

/// Global index assignment. The full vector is laid out as
/// [states x | internal algebraics y_i | external algebraics y_e], with
/// y_e holding (theta, v) for every bus. Each variable owns the equation
/// row with the same index.
class VariableRegistry {
public:
    struct SelectedBlock {
        std::size_t device;
        std::size_t block;
        std::vector<Index> outputs;
    };

    static VariableRegistry build(const Grid& grid, std::span<const Device* const> devices,
                                  const Formulation& formulation);

    std::size_t size() const { return names_.size(); }
    const std::vector<std::string>& names() const { return names_; }
    VarKind kind(Index i) const { return kinds_[i]; }
    bool is_state(Index i) const { return kinds_[i] == VarKind::state; }
    bool split_eligible(Index i) const { return eligible_[i] != 0; }
    bool selected(Index i) const { return selected_[i] != 0; }
    Index bus_theta(std::size_t bus_index) const { return ye_offset_ + 2 * bus_index; }
    Index bus_v(std::size_t bus_index) const { return ye_offset_ + 2 * bus_index + 1; }
    const DeviceAddress& address(std::size_t device) const { return addresses_[device]; }
    const std::vector<SelectedBlock>& selected_blocks() const { return blocks_; }
    const RegistryCounts& counts() const { return counts_; }
    Index find(const std::string& name) const;

private:
    std::vector<std::string> names_;
    std::vector<VarKind> kinds_;
    std::vector<std::uint8_t> eligible_;
    std::vector<std::uint8_t> selected_;
    std::vector<DeviceAddress> addresses_;
    std::vector<SelectedBlock> blocks_;
    std::size_t ye_offset_ = 0;
    RegistryCounts counts_;
};

/// Power-flow dispatch attached to an injecting device.
struct Dispatch {
    double p0 = 0.0;
    double q0 = 0.0;
    double mva = 100.0;
};

struct DeviceEntry {
    std::unique_ptr<Device> device;
    Dispatch dispatch;
};

/// Network plus devices assembled into one DAE under a chosen formulation.
/// Holds the full variable vector; entries outside the Newton set (frozen
/// split values, tripped devices) live only here.
class PowerSystemDae final : public DaeSystem {
public:
    PowerSystemDae(Grid grid, std::vector<DeviceEntry> devices, Formulation formulation);

    /// Power flow, load conversion and device initialization. Returns the
    /// initial Newton vector.
    std::vector<double> initialize(double pf_tol = 1e-12);

    // DaeSystem
    std::size_t size() const override { return active_.size(); }
    std::span<const std::uint8_t> differential() const override { return differential_; }
    void eval(double t, std::span<const double> z, std::span<double> out) override;
    void jacobian(double t, std::span<const double> z, TripletList& out) override;
    void begin_iteration(std::span<const double> z) override;

    /// Full-space residual F(w): f on state rows, g elsewhere, every row.
    void residual_full(std::span<const double> w, std::span<double> out) const;
    /// d F / d w over rows and columns that are currently in service.
    void jacobian_full(std::span<const double> w, TripletList& out) const;

    /// Explicit evaluation of every selected block from `w_prev` (Jacobi:
    /// all reads from w_prev). Writes the results into the frozen store.
    void split_update(std::span<const double> w_prev);

    std::vector<double> full_vector(std::span<const double> z) const;
    std::vector<double> newton_vector(std::span<const double> w) const;
    std::span<const double> stored() const { return w_; }
    void set_stored(std::span<const double> w);

    const VariableRegistry& registry() const { return registry_; }
    const Formulation& formulation() const { return formulation_; }
    const Grid& grid() const { return grid_; }
    Grid& grid() { return grid_; }
    std::size_t device_count() const { return devices_.size(); }
    const Device& device(std::size_t i) const { return *devices_[i].device; }
    Device* find_device(std::string_view model, int id);
    std::size_t device_index(const Device& d) const;
    bool is_fixed_bus(std::size_t bus_index) const { return fixed_bus_[bus_index] != 0; }
    const AdmittanceMatrix& ybus() const { return ybus_; }
    std::uint64_t topology_version() const { return topology_version_; }
    /// Full indices of the Newton vector, ascending.
    const std::vector<Index>& active() const { return active_; }

    /// Rebuilds Y after a branch or shunt change.
    void rebuild_network();
    /// Takes a device (and every controller attached to it) in or out of service.
    void set_device_in_service(std::size_t device, bool on);
    std::size_t in_service_machines() const;

    /// Keeps a copy of every algebraic value in the stored vector under `key`.
    void save_algebraic_snapshot(int key);
    /// Writes a saved snapshot back over the algebraic entries (states are
    /// untouched) and drops it. Returns false when no snapshot exists.
    bool restore_algebraic_snapshot(int key);

private:
    void refresh_active_set();
    void link_devices();

    Grid grid_;
    std::vector<DeviceEntry> devices_;
    Formulation formulation_;
    VariableRegistry registry_;
    AdmittanceMatrix ybus_;
    std::vector<std::uint8_t> fixed_bus_;
    std::vector<double> fixed_theta_;
    std::vector<double> fixed_v_;

    std::vector<double> w_;
    std::vector<Index> active_;
    std::vector<long> newton_of_;
    std::vector<std::uint8_t> differential_;
    std::vector<std::uint8_t> row_live_;
    std::uint64_t topology_version_ = 0;

    mutable std::vector<double> scratch_w_;
    mutable std::vector<double> scratch_f_;
    TripletList scratch_trip_;
    std::uint64_t pattern_version_ = ~std::uint64_t{0};
    std::vector<std::pair<Index, Index>> pattern_;
    std::map<int, std::vector<double>> snapshots_;
};

}  // namespace tsim
