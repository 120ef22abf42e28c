#include "tsim/dae.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "tsim/devices.hpp"

namespace tsim {

std::string Formulation::label() const {
    if (mode == FormulationMode::full) return "full";
    std::string out = "split:";
    bool first = true;
    for (const auto& b : selection) {
        if (!first) out += '+';
        out += b;
        first = false;
    }
    if (selection.empty()) out += "none";
    return out;
}

std::string resolve_block_alias(const std::string& name) {
    static const std::map<std::string, std::string> aliases = {
        {"flux", "genrou.flux"},
        {"lvpl", "regca.lvpl"},
        {"vdev", "reeca.vdev"},
        {"iqinj", "reeca.iqinj"},
    };
    const auto it = aliases.find(name);
    return it == aliases.end() ? name : it->second;
}

// ---------------------------------------------------------------------------

VariableRegistry VariableRegistry::build(const Grid& grid,
                                         std::span<const Device* const> devices,
                                         const Formulation& formulation) {
    VariableRegistry reg;
    std::set<std::string> declared;
    std::size_t n_x = 0, n_yi = 0;
    for (const auto& d : devices) {
        for (const auto& v : d->variables()) {
            (v.kind == VarKind::state ? n_x : n_yi) += 1;
        }
        for (const auto& b : d->split_blocks()) declared.insert(b.id);
    }
    if (formulation.mode == FormulationMode::split) {
        for (const auto& b : formulation.selection) {
            if (!declared.contains(b)) {
                throw ConfigurationError("split selection references unknown block '" + b + "'");
            }
        }
    }

    const std::size_t n_bus = grid.bus_count();
    const std::size_t n = n_x + n_yi + 2 * n_bus;
    reg.names_.resize(n);
    reg.kinds_.resize(n);
    reg.eligible_.assign(n, 0);
    reg.selected_.assign(n, 0);
    reg.ye_offset_ = n_x + n_yi;

    std::size_t next_x = 0, next_y = n_x;
    for (std::size_t di = 0; di < devices.size(); ++di) {
        const Device& d = *devices[di];
        if (!grid.has_bus(d.bus())) {
            throw ValidationError(d.name() + ": unknown bus " + std::to_string(d.bus()));
        }
        const std::size_t b = grid.bus_index(d.bus());
        DeviceAddress a;
        a.theta = reg.bus_theta(b);
        a.v = reg.bus_v(b);
        const std::string prefix = d.name() + ".";
        for (const auto& v : d.variables()) {
            const Index i = v.kind == VarKind::state ? next_x++ : next_y++;
            a.vars.push_back(i);
            reg.names_[i] = prefix + v.name;
            reg.kinds_[i] = v.kind;
            reg.eligible_[i] = v.split_eligible ? 1 : 0;
            if (v.split_eligible) ++reg.counts_.n_split_eligible;
        }
        const auto blocks = d.split_blocks();
        for (std::size_t bi = 0; bi < blocks.size(); ++bi) {
            if (!formulation.selects(blocks[bi].id)) continue;
            SelectedBlock sb{di, bi, {}};
            for (std::size_t local : blocks[bi].outputs) {
                sb.outputs.push_back(a.vars[local]);
                reg.selected_[a.vars[local]] = 1;
                ++reg.counts_.n_split_selected;
            }
            reg.blocks_.push_back(std::move(sb));
        }
        reg.addresses_.push_back(std::move(a));
    }
    for (std::size_t b = 0; b < n_bus; ++b) {
        const std::string prefix = "bus_" + std::to_string(grid.buses[b].id) + ".";
        reg.names_[reg.bus_theta(b)] = prefix + "theta";
        reg.names_[reg.bus_v(b)] = prefix + "v";
        reg.kinds_[reg.bus_theta(b)] = VarKind::external_ref;
        reg.kinds_[reg.bus_v(b)] = VarKind::external_ref;
    }

    reg.counts_.n_x = n_x;
    reg.counts_.n_y_full = n_yi + 2 * n_bus;
    reg.counts_.n_y_split = reg.counts_.n_y_full - reg.counts_.n_split_selected;
    return reg;
}

Index VariableRegistry::find(const std::string& name) const {
    const auto it = std::find(names_.begin(), names_.end(), name);
    if (it == names_.end()) throw ConfigurationError("unknown variable '" + name + "'");
    return static_cast<Index>(it - names_.begin());
}

// ---------------------------------------------------------------------------

PowerSystemDae::PowerSystemDae(Grid grid, std::vector<DeviceEntry> devices, Formulation formulation)
    : grid_(std::move(grid)), devices_(std::move(devices)), formulation_(std::move(formulation)) {
    grid_.reindex();
    grid_.validate();
    for (const auto& e : devices_) {
        if (!e.device) throw InternalError("null device");
    }
    std::vector<const Device*> list;
    for (const auto& e : devices_) list.push_back(e.device.get());
    registry_ = VariableRegistry::build(grid_, list, formulation_);
    for (std::size_t i = 0; i < devices_.size(); ++i) devices_[i].device->bind(registry_.address(i));
    link_devices();

    w_.assign(registry_.size(), 0.0);
    for (std::size_t b = 0; b < grid_.bus_count(); ++b) {
        w_[registry_.bus_theta(b)] = grid_.buses[b].theta;
        w_[registry_.bus_v(b)] = grid_.buses[b].v_mag;
    }
    fixed_bus_.assign(grid_.bus_count(), 0);
    fixed_theta_.assign(grid_.bus_count(), 0.0);
    fixed_v_.assign(grid_.bus_count(), 0.0);
    ybus_ = build_ybus(grid_);
    refresh_active_set();
}

void PowerSystemDae::link_devices() {
    const DeviceLookup lookup = [this](std::string_view model, int id) { return find_device(model, id); };
    for (auto& e : devices_) e.device->resolve_links(lookup);
    for (auto& e : devices_) {
        const Device* t = e.device->target();
        if (t != nullptr && t->bus() != e.device->bus()) {
            throw ValidationError(e.device->name() + ": bus differs from its target " + t->name());
        }
    }
}

Device* PowerSystemDae::find_device(std::string_view model, int id) {
    for (auto& e : devices_) {
        if (e.device->model() == model && e.device->id() == id) return e.device.get();
    }
    return nullptr;
}

std::size_t PowerSystemDae::device_index(const Device& d) const {
    for (std::size_t i = 0; i < devices_.size(); ++i) {
        if (devices_[i].device.get() == &d) return i;
    }
    throw InternalError("device not owned by this system");
}

std::vector<double> PowerSystemDae::initialize(double pf_tol) {
    const std::size_t n_bus = grid_.bus_count();
    std::vector<double> p_sched(n_bus, 0.0), q_sched(n_bus, 0.0), mva_at(n_bus, 0.0);
    std::vector<int> injectors_at(n_bus, 0);
    for (const auto& e : devices_) {
        if (!e.device->injects() || !e.device->in_service()) continue;
        const std::size_t b = grid_.bus_index(e.device->bus());
        p_sched[b] += e.dispatch.p0;
        q_sched[b] += e.dispatch.q0;
        mva_at[b] += e.dispatch.mva;
        ++injectors_at[b];
    }
    for (std::size_t b = 0; b < n_bus; ++b) {
        if (grid_.buses[b].kind == BusKind::pv && injectors_at[b] == 0) {
            throw ValidationError("bus " + std::to_string(grid_.buses[b].id) +
                                  ": pv bus without an injecting device");
        }
    }

    const PowerFlowResult pf = solve_powerflow(grid_, p_sched, q_sched, pf_tol);
    for (std::size_t b = 0; b < n_bus; ++b) {
        grid_.buses[b].v_mag = pf.v[b];
        grid_.buses[b].theta = pf.theta[b];
    }
    grid_.convert_loads_to_admittance();
    ybus_ = build_ybus(grid_);

    w_.assign(registry_.size(), 0.0);
    for (std::size_t b = 0; b < n_bus; ++b) {
        w_[registry_.bus_theta(b)] = pf.theta[b];
        w_[registry_.bus_v(b)] = pf.v[b];
        fixed_bus_[b] = grid_.buses[b].kind == BusKind::slack && injectors_at[b] == 0;
        fixed_theta_[b] = pf.theta[b];
        fixed_v_[b] = pf.v[b];
    }

    // Injectors first: controllers read their target's setpoints.
    auto init_one = [&](DeviceEntry& e) {
        Device& d = *e.device;
        const std::size_t b = grid_.bus_index(d.bus());
        InitContext ctx{w_, pf.v[b], pf.theta[b], 0.0, 0.0};
        if (d.injects()) {
            const bool slack = grid_.buses[b].kind == BusKind::slack;
            const bool pq = grid_.buses[b].kind == BusKind::pq;
            const double share = e.dispatch.mva / mva_at[b];
            ctx.p = slack ? pf.p_gen[b] * share : e.dispatch.p0;
            ctx.q = pq ? e.dispatch.q0 : pf.q_gen[b] * share;
        }
        d.initialize(ctx);
    };
    for (auto& e : devices_) {
        if (e.device->injects() && e.device->in_service()) init_one(e);
    }
    for (auto& e : devices_) {
        if (!e.device->injects() && e.device->in_service()) init_one(e);
    }

    ++topology_version_;
    refresh_active_set();

    std::vector<double> f(registry_.size());
    residual_full(w_, f);
    double norm = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        if (row_live_[i]) norm = std::max(norm, std::abs(f[i]));
    }
    if (!(norm < 1e-8)) {
        throw InitializationError("initial residual " + std::to_string(norm) + " exceeds 1e-8");
    }
    return newton_vector(w_);
}

void PowerSystemDae::refresh_active_set() {
    const std::size_t n = registry_.size();
    row_live_.assign(n, 1);
    for (const auto& e : devices_) {
        const Device& d = *e.device;
        bool live = d.in_service();
        for (const Device* t = d.target(); live && t != nullptr; t = t->target()) live = t->in_service();
        if (live) continue;
        for (Index i : d.address().vars) row_live_[i] = 0;
    }
    active_.clear();
    differential_.clear();
    newton_of_.assign(n, -1);
    for (Index i = 0; i < n; ++i) {
        if (!row_live_[i] || registry_.selected(i)) continue;
        newton_of_[i] = static_cast<long>(active_.size());
        active_.push_back(i);
        differential_.push_back(registry_.is_state(i) ? 1 : 0);
    }
}

void PowerSystemDae::residual_full(std::span<const double> w, std::span<double> out) const {
    const std::size_t n = registry_.size();
    if (w.size() != n || out.size() != n) throw StructuralError("residual: vector length mismatch");
    std::fill(out.begin(), out.end(), 0.0);
    for (const auto& e : devices_) {
        const Device& d = *e.device;
        if (row_live_[d.address().vars.front()]) d.residual(w, out);
    }
    const std::size_t n_bus = grid_.bus_count();
    std::vector<double> th(n_bus), v(n_bus);
    for (std::size_t b = 0; b < n_bus; ++b) {
        th[b] = w[registry_.bus_theta(b)];
        v[b] = w[registry_.bus_v(b)];
    }
    const BusPowers calc = network_power(ybus_, th, v);
    for (std::size_t b = 0; b < n_bus; ++b) {
        const Index rt = registry_.bus_theta(b), rv = registry_.bus_v(b);
        if (fixed_bus_[b]) {
            out[rt] = fixed_theta_[b] - th[b];
            out[rv] = fixed_v_[b] - v[b];
        } else {
            out[rt] -= calc.p[b];
            out[rv] -= calc.q[b];
        }
    }
}

void PowerSystemDae::jacobian_full(std::span<const double> w, TripletList& out) const {
    const std::size_t n_bus = grid_.bus_count();
    const std::size_t first = out.size();
    for (const auto& e : devices_) {
        const Device& d = *e.device;
        if (row_live_[d.address().vars.front()]) d.jacobian(w, out);
    }
    // A fixed bus's rows hold only the fixing constraint.
    const Index ye = registry_.bus_theta(0);
    const auto last = std::remove_if(out.begin() + static_cast<long>(first), out.end(), [&](const Triplet& t) {
        return t.row >= ye && fixed_bus_[(t.row - ye) / 2];
    });
    out.erase(last, out.end());

    std::vector<double> th(n_bus), v(n_bus);
    for (std::size_t b = 0; b < n_bus; ++b) {
        th[b] = w[registry_.bus_theta(b)];
        v[b] = w[registry_.bus_v(b)];
    }
    auto net_index = [&](std::size_t k) {
        const std::size_t b = k / 2;
        return k % 2 == 0 ? registry_.bus_theta(b) : registry_.bus_v(b);
    };
    for (const auto& e : network_jacobian(ybus_, th, v)) {
        if (fixed_bus_[e.row / 2]) continue;
        out.push_back({net_index(e.row), net_index(e.col), e.value});
    }
    for (std::size_t b = 0; b < n_bus; ++b) {
        if (!fixed_bus_[b]) continue;
        out.push_back({registry_.bus_theta(b), registry_.bus_theta(b), -1.0});
        out.push_back({registry_.bus_v(b), registry_.bus_v(b), -1.0});
    }
}

void PowerSystemDae::split_update(std::span<const double> w_prev) {
    const auto& blocks = registry_.selected_blocks();
    if (blocks.empty()) return;
    std::vector<double> values;
    std::vector<std::pair<Index, double>> pending;
    for (const auto& sb : blocks) {
        const Device& d = *devices_[sb.device].device;
        if (!row_live_[d.address().vars.front()]) continue;
        values.assign(sb.outputs.size(), 0.0);
        d.explicit_block(sb.block, w_prev, values);
        for (std::size_t k = 0; k < sb.outputs.size(); ++k) pending.emplace_back(sb.outputs[k], values[k]);
    }
    for (const auto& [i, val] : pending) w_[i] = val;
}

void PowerSystemDae::begin_iteration(std::span<const double> z) {
    if (registry_.selected_blocks().empty()) return;
    scratch_w_ = w_;
    for (std::size_t k = 0; k < active_.size(); ++k) scratch_w_[active_[k]] = z[k];
    split_update(scratch_w_);
}

std::vector<double> PowerSystemDae::full_vector(std::span<const double> z) const {
    if (z.size() != active_.size()) throw StructuralError("Newton vector length mismatch");
    std::vector<double> w = w_;
    for (std::size_t k = 0; k < active_.size(); ++k) w[active_[k]] = z[k];
    return w;
}

std::vector<double> PowerSystemDae::newton_vector(std::span<const double> w) const {
    if (w.size() != registry_.size()) throw StructuralError("full vector length mismatch");
    std::vector<double> z(active_.size());
    for (std::size_t k = 0; k < active_.size(); ++k) z[k] = w[active_[k]];
    return z;
}

void PowerSystemDae::set_stored(std::span<const double> w) {
    if (w.size() != registry_.size()) throw StructuralError("full vector length mismatch");
    w_.assign(w.begin(), w.end());
}

void PowerSystemDae::eval(double /*t*/, std::span<const double> z, std::span<double> out) {
    if (z.size() != active_.size() || out.size() != active_.size()) {
        throw StructuralError("residual: Newton vector length mismatch");
    }
    scratch_w_ = w_;
    for (std::size_t k = 0; k < active_.size(); ++k) scratch_w_[active_[k]] = z[k];
    scratch_f_.resize(registry_.size());
    residual_full(scratch_w_, scratch_f_);
    for (std::size_t k = 0; k < active_.size(); ++k) out[k] = scratch_f_[active_[k]];
}

void PowerSystemDae::jacobian(double /*t*/, std::span<const double> z, TripletList& out) {
    if (z.size() != active_.size()) throw StructuralError("jacobian: Newton vector length mismatch");
    scratch_w_ = w_;
    for (std::size_t k = 0; k < active_.size(); ++k) scratch_w_[active_[k]] = z[k];
    scratch_trip_.clear();
    jacobian_full(scratch_w_, scratch_trip_);

    std::vector<std::pair<Index, Index>> pattern;
    pattern.reserve(scratch_trip_.size());
    for (const auto& t : scratch_trip_) {
        const long r = newton_of_[t.row], c = newton_of_[t.col];
        if (r < 0 || c < 0) continue;
        out.push_back({static_cast<Index>(r), static_cast<Index>(c), t.value});
        pattern.emplace_back(static_cast<Index>(r), static_cast<Index>(c));
    }
    if (pattern_version_ == topology_version_) {
        if (pattern != pattern_) {
            throw InternalError("Jacobian sparsity pattern changed without a topology event");
        }
    } else {
        pattern_ = std::move(pattern);
        pattern_version_ = topology_version_;
    }
}

void PowerSystemDae::rebuild_network() {
    ybus_ = build_ybus(grid_);
    ++topology_version_;
}

void PowerSystemDae::set_device_in_service(std::size_t device, bool on) {
    devices_.at(device).device->set_in_service(on);
    refresh_active_set();
    ++topology_version_;
}

void PowerSystemDae::save_algebraic_snapshot(int key) { snapshots_[key] = w_; }

bool PowerSystemDae::restore_algebraic_snapshot(int key) {
    const auto it = snapshots_.find(key);
    if (it == snapshots_.end()) return false;
    for (Index i = 0; i < w_.size(); ++i) {
        if (!registry_.is_state(i)) w_[i] = it->second[i];
    }
    snapshots_.erase(it);
    return true;
}

std::size_t PowerSystemDae::in_service_machines() const {
    std::size_t n = 0;
    for (const auto& e : devices_) {
        if (e.device->model() == "GENROU" && e.device->in_service()) ++n;
    }
    return n;
}

}  // namespace tsim
