#pragma once

#include <complex>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/SparseCore>

#include "tsim/error.hpp"

namespace tsim {

using Complex = std::complex<double>;
using AdmittanceMatrix = Eigen::SparseMatrix<Complex>;

enum class BusKind { slack, pv, pq };
enum class BranchStatus { in_service, tripped };
enum class ShuntTag { fixed, fault };

/// Network node. Voltages are polar: v_mag in pu, theta in radians.
struct Bus {
    int id = 0;
    BusKind kind = BusKind::pq;
    double v_mag = 1.0;
    double theta = 0.0;
    double base_kv = 1.0;
};

/// Pi-model line or transformer. The off-nominal tap sits on the from side.
struct Branch {
    int id = 0;
    int from_bus = 0;
    int to_bus = 0;
    double r = 0.0;
    double x = 0.0;
    double b = 0.0;
    double tap = 1.0;
    BranchStatus status = BranchStatus::in_service;
};

struct ShuntElement {
    int bus = 0;
    double g = 0.0;
    double b = 0.0;
    ShuntTag tag = ShuntTag::fixed;
};

/// Constant-power load at nominal voltage. Once `admittance` is set the load
/// is represented as a shunt in the admittance matrix.
struct Load {
    int bus = 0;
    double p = 0.0;
    double q = 0.0;
    std::optional<Complex> admittance;
};

/// Static network data. Mutated only through explicit event application.
class Grid {
public:
    double base_mva = 100.0;
    double frequency = 60.0;
    std::vector<Bus> buses;
    std::vector<Branch> branches;
    std::vector<ShuntElement> shunts;
    std::vector<Load> loads;

    /// Rebuilds the id lookup tables. Call after editing the element lists.
    void reindex();

    std::size_t bus_count() const { return buses.size(); }
    std::size_t bus_index(int bus_id) const;
    bool has_bus(int bus_id) const { return bus_lookup_.contains(bus_id); }
    std::size_t branch_index(int branch_id) const;
    Branch& branch(int branch_id) { return branches[branch_index(branch_id)]; }
    const Branch& branch(int branch_id) const { return branches[branch_index(branch_id)]; }

    /// Checks structural and parameter invariants; throws on the first violation.
    void validate() const;

    /// Converts every load to y = (p - jq) / v^2 using the current bus voltages.
    void convert_loads_to_admittance();

private:
    std::unordered_map<int, std::size_t> bus_lookup_;
    std::unordered_map<int, std::size_t> branch_lookup_;
};

/// Assembles Y from in-service branches, shunts and converted loads.
AdmittanceMatrix build_ybus(const Grid& grid, bool include_load_admittance = true);

/// Calculated injections S_i = V_i conj(sum_j Y_ij V_j) split into P and Q.
struct BusPowers {
    std::vector<double> p;
    std::vector<double> q;
};

BusPowers network_power(const AdmittanceMatrix& y, std::span<const double> theta,
                        std::span<const double> v);

/// Power-balance mismatch, two entries per bus: [P_inj - P_calc, Q_inj - Q_calc].
std::vector<double> network_residual(std::span<const double> theta, std::span<const double> v,
                                     const AdmittanceMatrix& y, std::span<const double> p_inj,
                                     std::span<const double> q_inj);

struct NetworkJacobianEntry {
    std::size_t row;  // 2*i for P balance, 2*i+1 for Q balance
    std::size_t col;  // 2*j for theta_j, 2*j+1 for v_j
    double value;
};

/// Partial derivatives of network_residual with respect to (theta, v).
/// Emits one entry per structural nonzero of Y, four per pair, so the pattern
/// depends only on the topology.
std::vector<NetworkJacobianEntry> network_jacobian(const AdmittanceMatrix& y,
                                                   std::span<const double> theta,
                                                   std::span<const double> v);

struct PowerFlowResult {
    std::vector<double> v;
    std::vector<double> theta;
    /// Generation per bus that balances the solution (net injection + load).
    std::vector<double> p_gen;
    std::vector<double> q_gen;
    int iterations = 0;
    double mismatch = 0.0;
};

/// Newton-Raphson power flow with constant-power loads. `p_gen` is the
/// scheduled generation per bus index (ignored at the slack bus); `q_gen` is
/// used only at pq buses.
PowerFlowResult solve_powerflow(const Grid& grid, std::span<const double> p_gen,
                                std::span<const double> q_gen, double tol = 1e-10,
                                int max_iter = 30);

}  // namespace tsim
