#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace tsim {

using Index = std::size_t;
inline constexpr Index npos = std::numeric_limits<Index>::max();

enum class VarKind { state, internal_algebraic, external_ref };

struct VariableDecl {
    std::string name;
    VarKind kind = VarKind::state;
    /// The device provides an explicit evaluator for this variable.
    bool split_eligible = false;
    /// The defining equation is (piecewise) linear in its inputs.
    bool linear = true;
};

/// A group of split-eligible internal algebraic variables evaluated together
/// by one explicit evaluator. Outputs are local variable indices.
struct SplitBlockDecl {
    std::string id;
    std::vector<std::size_t> outputs;
};

/// Global indices assigned by the variable registry. `inputs` are slots that
/// other devices (controllers) may bind to one of their own variables; `refs`
/// are variables of other devices that this device reads.
struct DeviceAddress {
    std::vector<Index> vars;
    Index theta = npos;
    Index v = npos;
    std::vector<Index> inputs;
    std::vector<Index> refs;
};

struct Triplet {
    Index row;
    Index col;
    double value;
};
using TripletList = std::vector<Triplet>;

class Device;
using DeviceLookup = std::function<Device*(std::string_view model, int id)>;

struct InitContext {
    std::span<double> w;
    double v = 1.0;
    double theta = 0.0;
    /// Power-flow generation assigned to this device, system base.
    double p = 0.0;
    double q = 0.0;
};

/// Dynamic device interface. Every device owns one equation row per declared
/// variable, indexed like the variable itself in the global vector. State
/// rows receive the time derivative f; algebraic rows receive the residual
/// g, written as (explicit expression - variable) for output equations.
/// Injecting devices add their (P, Q) into the network rows of their bus
/// (the theta row holds active power, the v row reactive power).
class Device {
public:
    Device(int id, int bus) : id_(id), bus_(bus) {}
    virtual ~Device() = default;

    virtual std::string_view model() const = 0;
    virtual std::unique_ptr<Device> clone() const = 0;

    int id() const { return id_; }
    int bus() const { return bus_; }
    void set_bus(int bus) { bus_ = bus; }
    std::string name() const { return std::string(model()) + "_" + std::to_string(id_); }

    virtual std::span<const VariableDecl> variables() const = 0;
    virtual std::span<const SplitBlockDecl> split_blocks() const { return {}; }
    virtual std::size_t input_count() const { return 0; }
    /// Equilibrium value of an input slot, valid after initialize().
    virtual double input_setpoint(std::size_t /*slot*/) const { return 0.0; }

    /// True for devices that inject current into the network.
    virtual bool injects() const { return false; }
    /// Device this one controls, if any (valid after resolve_links).
    virtual const Device* target() const { return nullptr; }

    virtual void residual(std::span<const double> w, std::span<double> out) const = 0;
    /// Appends d(residual)/dw. The emitted pattern must not depend on the
    /// operating point.
    virtual void jacobian(std::span<const double> w, TripletList& out) const = 0;
    /// Evaluates the explicit form of a split block from `w`, writing one
    /// value per block output.
    virtual void explicit_block(std::size_t /*block*/, std::span<const double> /*w*/,
                                std::span<double> /*values*/) const {}

    virtual void initialize(InitContext& ctx) = 0;
    /// Binds controller links after every device has an address.
    virtual void resolve_links(const DeviceLookup& /*lookup*/) {}

    void bind(DeviceAddress address);
    void bind_input(std::size_t slot, Index index);
    const DeviceAddress& address() const { return addr_; }

    bool in_service() const { return in_service_; }
    void set_in_service(bool on) { in_service_ = on; }

protected:
    Index at(std::size_t local) const { return addr_.vars[local]; }
    double get(std::span<const double> w, std::size_t local) const { return w[addr_.vars[local]]; }
    double bus_v(std::span<const double> w) const { return w[addr_.v]; }
    double bus_theta(std::span<const double> w) const { return w[addr_.theta]; }
    bool input_bound(std::size_t slot) const {
        return slot < addr_.inputs.size() && addr_.inputs[slot] != npos;
    }

    DeviceAddress addr_;

private:
    int id_;
    int bus_;
    bool in_service_ = true;
};

/// Binds a device to a private layout: its own variables at [0, n), then
/// theta, v, and one slot per reference. Returns the vector length. Used by
/// tests and by single-device harnesses.
std::size_t bind_standalone(Device& device, std::size_t n_refs = 0);

/// Half-open piecewise clamp: below lo -> lo, [lo, hi) -> x, at or above hi -> hi.
inline double clamp_pw(double x, double lo, double hi) {
    if (x < lo) return lo;
    if (x < hi) return x;
    return hi;
}
inline double clamp_pw_slope(double x, double lo, double hi) {
    return (x >= lo && x < hi) ? 1.0 : 0.0;
}

}  // namespace tsim
