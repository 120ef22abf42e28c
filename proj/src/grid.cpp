#include "tsim/grid.hpp"

#include <algorithm>
#include <cmath>
#include <queue>
#include <unordered_set>

#include <Eigen/SparseLU>

namespace tsim {

void Grid::reindex() {
    bus_lookup_.clear();
    branch_lookup_.clear();
    for (std::size_t i = 0; i < buses.size(); ++i) {
        if (!bus_lookup_.emplace(buses[i].id, i).second) {
            throw ValidationError("bus " + std::to_string(buses[i].id) + ": duplicate id");
        }
    }
    for (std::size_t i = 0; i < branches.size(); ++i) {
        if (!branch_lookup_.emplace(branches[i].id, i).second) {
            throw ValidationError("branch " + std::to_string(branches[i].id) + ": duplicate id");
        }
    }
}

std::size_t Grid::bus_index(int bus_id) const {
    auto it = bus_lookup_.find(bus_id);
    if (it == bus_lookup_.end()) {
        throw StructuralError("reference to unknown bus " + std::to_string(bus_id));
    }
    return it->second;
}

std::size_t Grid::branch_index(int branch_id) const {
    auto it = branch_lookup_.find(branch_id);
    if (it == branch_lookup_.end()) {
        throw StructuralError("reference to unknown branch " + std::to_string(branch_id));
    }
    return it->second;
}

void Grid::validate() const {
    if (bus_lookup_.size() != buses.size() || branch_lookup_.size() != branches.size()) {
        throw InternalError("grid lookup tables are stale; call reindex()");
    }
    int slack_count = 0;
    for (const auto& bus : buses) {
        if (!(bus.v_mag > 0.0)) {
            throw ValidationError("bus " + std::to_string(bus.id) + ": v_mag must be > 0");
        }
        if (bus.kind == BusKind::slack) ++slack_count;
    }
    if (slack_count != 1) {
        throw StructuralError("expected exactly one slack bus, found " + std::to_string(slack_count));
    }
    for (const auto& br : branches) {
        const std::string tag = "branch " + std::to_string(br.id);
        if (!has_bus(br.from_bus) || !has_bus(br.to_bus)) {
            throw StructuralError(tag + ": dangling bus reference");
        }
        if (br.from_bus == br.to_bus) {
            throw StructuralError(tag + ": from_bus equals to_bus");
        }
        if (br.status == BranchStatus::in_service && br.x == 0.0) {
            throw ParameterError(tag + ": zero series reactance");
        }
        if (!(br.tap > 0.0)) {
            throw ParameterError(tag + ": tap must be > 0");
        }
    }
    for (const auto& sh : shunts) {
        if (!has_bus(sh.bus)) throw StructuralError("shunt: dangling bus " + std::to_string(sh.bus));
    }
    for (const auto& ld : loads) {
        if (!has_bus(ld.bus)) throw StructuralError("load: dangling bus " + std::to_string(ld.bus));
    }
}

void Grid::convert_loads_to_admittance() {
    for (auto& ld : loads) {
        const double v = buses[bus_index(ld.bus)].v_mag;
        ld.admittance = Complex(ld.p, -ld.q) / (v * v);
    }
}

AdmittanceMatrix build_ybus(const Grid& grid, bool include_load_admittance) {
    const auto n = static_cast<Eigen::Index>(grid.bus_count());
    std::vector<Eigen::Triplet<Complex>> triplets;
    triplets.reserve(grid.branches.size() * 4 + grid.shunts.size() + grid.loads.size() + grid.bus_count());

    for (const auto& br : grid.branches) {
        if (br.status != BranchStatus::in_service) continue;
        if (br.x == 0.0 && br.r == 0.0) {
            throw ParameterError("branch " + std::to_string(br.id) + ": zero series impedance");
        }
        const auto f = static_cast<Eigen::Index>(grid.bus_index(br.from_bus));
        const auto t = static_cast<Eigen::Index>(grid.bus_index(br.to_bus));
        const Complex ys = 1.0 / Complex(br.r, br.x);
        const Complex ych(0.0, br.b / 2.0);
        triplets.emplace_back(f, f, (ys + ych) / (br.tap * br.tap));
        triplets.emplace_back(t, t, ys + ych);
        triplets.emplace_back(f, t, -ys / br.tap);
        triplets.emplace_back(t, f, -ys / br.tap);
    }
    for (const auto& sh : grid.shunts) {
        const auto i = static_cast<Eigen::Index>(grid.bus_index(sh.bus));
        triplets.emplace_back(i, i, Complex(sh.g, sh.b));
    }
    if (include_load_admittance) {
        for (const auto& ld : grid.loads) {
            if (!ld.admittance) continue;
            const auto i = static_cast<Eigen::Index>(grid.bus_index(ld.bus));
            triplets.emplace_back(i, i, *ld.admittance);
        }
    }

    AdmittanceMatrix y(n, n);
    y.setFromTriplets(triplets.begin(), triplets.end());
    y.makeCompressed();
    return y;
}

namespace {

void check_dimensions(const AdmittanceMatrix& y, std::size_t n_theta, std::size_t n_v) {
    const auto n = static_cast<std::size_t>(y.rows());
    if (static_cast<std::size_t>(y.cols()) != n || n_theta != n || n_v != n) {
        throw StructuralError("network: voltage vector length does not match admittance matrix");
    }
}

// Per-bus partial sums: a_i = sum_j v_j (G cos + B sin), b_i = sum_j v_j (G sin - B cos).
void accumulate_sums(const AdmittanceMatrix& y, std::span<const double> theta,
                     std::span<const double> v, std::vector<double>& a, std::vector<double>& b) {
    const auto n = static_cast<std::size_t>(y.rows());
    a.assign(n, 0.0);
    b.assign(n, 0.0);
    for (Eigen::Index col = 0; col < y.outerSize(); ++col) {
        for (AdmittanceMatrix::InnerIterator it(y, col); it; ++it) {
            const auto i = static_cast<std::size_t>(it.row());
            const auto j = static_cast<std::size_t>(it.col());
            const double g = it.value().real();
            const double bb = it.value().imag();
            const double ang = theta[i] - theta[j];
            const double c = std::cos(ang);
            const double s = std::sin(ang);
            a[i] += v[j] * (g * c + bb * s);
            b[i] += v[j] * (g * s - bb * c);
        }
    }
}

}  // namespace

BusPowers network_power(const AdmittanceMatrix& y, std::span<const double> theta,
                        std::span<const double> v) {
    check_dimensions(y, theta.size(), v.size());
    std::vector<double> a, b;
    accumulate_sums(y, theta, v, a, b);
    BusPowers out;
    out.p.resize(a.size());
    out.q.resize(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.p[i] = v[i] * a[i];
        out.q[i] = v[i] * b[i];
    }
    return out;
}

std::vector<double> network_residual(std::span<const double> theta, std::span<const double> v,
                                     const AdmittanceMatrix& y, std::span<const double> p_inj,
                                     std::span<const double> q_inj) {
    check_dimensions(y, theta.size(), v.size());
    if (p_inj.size() != theta.size() || q_inj.size() != theta.size()) {
        throw StructuralError("network: injection vector length does not match bus count");
    }
    const auto calc = network_power(y, theta, v);
    std::vector<double> out(2 * theta.size());
    for (std::size_t i = 0; i < theta.size(); ++i) {
        out[2 * i] = p_inj[i] - calc.p[i];
        out[2 * i + 1] = q_inj[i] - calc.q[i];
    }
    return out;
}

std::vector<NetworkJacobianEntry> network_jacobian(const AdmittanceMatrix& y,
                                                   std::span<const double> theta,
                                                   std::span<const double> v) {
    check_dimensions(y, theta.size(), v.size());
    const std::size_t n = theta.size();
    std::vector<double> a, b;
    accumulate_sums(y, theta, v, a, b);

    std::vector<double> g_diag(n, 0.0), b_diag(n, 0.0);
    std::vector<NetworkJacobianEntry> out;
    out.reserve(4 * static_cast<std::size_t>(y.nonZeros()) + 4 * n);

    // Entries are derivatives of (inj - calc), hence the negations.
    for (Eigen::Index col = 0; col < y.outerSize(); ++col) {
        for (AdmittanceMatrix::InnerIterator it(y, col); it; ++it) {
            const auto i = static_cast<std::size_t>(it.row());
            const auto j = static_cast<std::size_t>(it.col());
            const double g = it.value().real();
            const double bb = it.value().imag();
            if (i == j) {
                g_diag[i] += g;
                b_diag[i] += bb;
                continue;
            }
            const double ang = theta[i] - theta[j];
            const double c = std::cos(ang);
            const double s = std::sin(ang);
            const double ga = g * c + bb * s;
            const double gb = g * s - bb * c;
            out.push_back({2 * i, 2 * j, -v[i] * v[j] * gb});
            out.push_back({2 * i, 2 * j + 1, -v[i] * ga});
            out.push_back({2 * i + 1, 2 * j, v[i] * v[j] * ga});
            out.push_back({2 * i + 1, 2 * j + 1, -v[i] * gb});
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        const double vi = v[i];
        out.push_back({2 * i, 2 * i, -(-vi * b[i] - b_diag[i] * vi * vi)});
        out.push_back({2 * i, 2 * i + 1, -(a[i] + g_diag[i] * vi)});
        out.push_back({2 * i + 1, 2 * i, -(vi * a[i] - g_diag[i] * vi * vi)});
        out.push_back({2 * i + 1, 2 * i + 1, -(b[i] - b_diag[i] * vi)});
    }
    return out;
}

namespace {

void require_connected(const Grid& grid) {
    const std::size_t n = grid.bus_count();
    std::vector<std::vector<std::size_t>> adj(n);
    for (const auto& br : grid.branches) {
        if (br.status != BranchStatus::in_service) continue;
        const auto f = grid.bus_index(br.from_bus);
        const auto t = grid.bus_index(br.to_bus);
        adj[f].push_back(t);
        adj[t].push_back(f);
    }
    std::vector<bool> seen(n, false);
    std::queue<std::size_t> todo;
    for (std::size_t i = 0; i < n; ++i) {
        if (grid.buses[i].kind == BusKind::slack) {
            seen[i] = true;
            todo.push(i);
        }
    }
    while (!todo.empty()) {
        const auto i = todo.front();
        todo.pop();
        for (auto j : adj[i]) {
            if (!seen[j]) {
                seen[j] = true;
                todo.push(j);
            }
        }
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (!seen[i]) {
            throw StructuralError("bus " + std::to_string(grid.buses[i].id) +
                                  " is not connected to the slack bus");
        }
    }
}

}  // namespace

PowerFlowResult solve_powerflow(const Grid& grid, std::span<const double> p_gen,
                                std::span<const double> q_gen, double tol, int max_iter) {
    if (!(tol > 0.0)) throw ConfigurationError("power flow: tol must be > 0");
    const std::size_t n = grid.bus_count();
    if (p_gen.size() != n || q_gen.size() != n) {
        throw StructuralError("power flow: generation vector length does not match bus count");
    }
    if (std::none_of(grid.buses.begin(), grid.buses.end(),
                     [](const Bus& b) { return b.kind == BusKind::slack; })) {
        throw StructuralError("power flow: no slack bus");
    }
    require_connected(grid);

    const AdmittanceMatrix y = build_ybus(grid, false);

    std::vector<double> p_sched(p_gen.begin(), p_gen.end());
    std::vector<double> q_sched(q_gen.begin(), q_gen.end());
    std::vector<double> p_load(n, 0.0), q_load(n, 0.0);
    for (const auto& ld : grid.loads) {
        const auto i = grid.bus_index(ld.bus);
        p_load[i] += ld.p;
        q_load[i] += ld.q;
    }
    for (std::size_t i = 0; i < n; ++i) {
        p_sched[i] -= p_load[i];
        q_sched[i] -= q_load[i];
    }

    PowerFlowResult res;
    res.v.resize(n);
    res.theta.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        res.v[i] = grid.buses[i].v_mag;
        res.theta[i] = grid.buses[i].theta;
    }

    // Unknown ordering: theta for every non-slack bus, v for every pq bus.
    std::vector<int> theta_col(n, -1), v_col(n, -1);
    int n_unknown = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (grid.buses[i].kind != BusKind::slack) theta_col[i] = n_unknown++;
    }
    for (std::size_t i = 0; i < n; ++i) {
        if (grid.buses[i].kind == BusKind::pq) v_col[i] = n_unknown++;
    }
    // Mismatch rows use the same numbering: P rows follow theta, Q rows follow v.
    const auto& p_row = theta_col;
    const auto& q_row = v_col;

    auto mismatch = [&](Eigen::VectorXd& r) {
        const auto rr = network_residual(res.theta, res.v, y, p_sched, q_sched);
        r.setZero(n_unknown);
        double worst = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            if (p_row[i] >= 0) r[p_row[i]] = rr[2 * i];
            if (q_row[i] >= 0) r[q_row[i]] = rr[2 * i + 1];
        }
        if (n_unknown > 0) worst = r.lpNorm<Eigen::Infinity>();
        return worst;
    };

    Eigen::VectorXd r;
    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
    double worst = mismatch(r);
    int iter = 0;
    while (!(worst < tol)) {
        if (iter >= max_iter || !std::isfinite(worst)) {
            throw ConvergenceError("power flow did not converge after " + std::to_string(iter) +
                                       " iterations (mismatch " + std::to_string(worst) + ")",
                                   worst);
        }
        std::vector<Eigen::Triplet<double>> trip;
        for (const auto& e : network_jacobian(y, res.theta, res.v)) {
            const std::size_t bus_r = e.row / 2, bus_c = e.col / 2;
            const int row = (e.row % 2 == 0) ? p_row[bus_r] : q_row[bus_r];
            const int col = (e.col % 2 == 0) ? theta_col[bus_c] : v_col[bus_c];
            if (row >= 0 && col >= 0) trip.emplace_back(row, col, e.value);
        }
        Eigen::SparseMatrix<double> jac(n_unknown, n_unknown);
        jac.setFromTriplets(trip.begin(), trip.end());
        jac.makeCompressed();
        lu.compute(jac);
        if (lu.info() != Eigen::Success) {
            throw LinearSolverError("power flow Jacobian factorization failed: " + lu.lastErrorMessage());
        }
        const Eigen::VectorXd dx = lu.solve(r);
        for (std::size_t i = 0; i < n; ++i) {
            if (theta_col[i] >= 0) res.theta[i] -= dx[theta_col[i]];
            if (v_col[i] >= 0) res.v[i] -= dx[v_col[i]];
        }
        ++iter;
        worst = mismatch(r);
    }

    const auto calc = network_power(y, res.theta, res.v);
    res.p_gen.resize(n);
    res.q_gen.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        res.p_gen[i] = calc.p[i] + p_load[i];
        res.q_gen[i] = calc.q[i] + q_load[i];
    }
    res.iterations = iter;
    res.mismatch = worst;
    return res;
}

}  // namespace tsim
