#include "tsim/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

namespace tsim {

void SolverConfig::validate() const {
    if (!(h > 0.0)) throw ConfigurationError("solver: h must be > 0");
    if (!(tol > 0.0)) throw ConfigurationError("solver: tol must be > 0");
    if (max_iter < 1) throw ConfigurationError("solver: max_iter must be >= 1");
    if (refresh_every < 1) throw ConfigurationError("solver: refresh_every must be >= 1");
    if (!(honest_window >= 0.0)) throw ConfigurationError("solver: honest_window must be >= 0");
}

// ---------------------------------------------------------------------------

void SparseLu::factorize(const SparseMatrix& a) {
    if (a.rows() != a.cols()) throw StructuralError("linear solve: matrix is not square");
    if (!a.isCompressed()) throw InternalError("linear solve: matrix must be compressed");
    const auto nnz = static_cast<std::size_t>(a.nonZeros());
    const auto cols = static_cast<std::size_t>(a.cols());
    const bool same_pattern = ready_ && n_ == a.rows() && inner_.size() == nnz &&
                              std::equal(outer_.begin(), outer_.end(), a.outerIndexPtr()) &&
                              std::equal(inner_.begin(), inner_.end(), a.innerIndexPtr());
    ready_ = false;
    if (!same_pattern) {
        lu_.analyzePattern(a);
        outer_.assign(a.outerIndexPtr(), a.outerIndexPtr() + cols + 1);
        inner_.assign(a.innerIndexPtr(), a.innerIndexPtr() + nnz);
        ++analyses_;
    }
    lu_.factorize(a);
    if (lu_.info() != Eigen::Success) {
        outer_.clear();
        inner_.clear();
        throw LinearSolverError("factorization failed (n = " + std::to_string(a.rows()) +
                                "): " + lu_.lastErrorMessage());
    }
    n_ = a.rows();
    ready_ = true;
}

Eigen::VectorXd SparseLu::solve(const Eigen::VectorXd& rhs) const {
    if (!ready_) throw InternalError("linear solve: no factorization available");
    if (rhs.size() != n_) throw StructuralError("linear solve: rhs length does not match matrix");
    Eigen::VectorXd x = lu_.solve(rhs);
    if (!x.allFinite()) throw LinearSolverError("linear solve produced non-finite values");
    return x;
}

Eigen::VectorXd linear_solve(const SparseMatrix& a, const Eigen::VectorXd& rhs) {
    SparseMatrix m = a;
    m.makeCompressed();
    SparseLu lu;
    lu.factorize(m);
    return lu.solve(rhs);
}

void trapezoidal_residual(std::span<const double> z, std::span<const double> z0,
                          std::span<const double> f, std::span<const double> f0,
                          std::span<const std::uint8_t> differential, double h,
                          std::span<double> out) {
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = differential[i] ? z[i] - z0[i] - 0.5 * h * (f[i] + f0[i]) : f[i];
    }
}

// ---------------------------------------------------------------------------

namespace {

double inf_norm(std::span<const double> r) {
    double m = 0.0;
    for (double v : r) {
        if (!std::isfinite(v)) return std::numeric_limits<double>::infinity();
        m = std::max(m, std::abs(v));
    }
    return m;
}

// Newton matrix of the trapezoidal residual: I - (h/2) df/dz on
// differential rows, dg/dz on algebraic rows.
SparseMatrix newton_matrix(DaeSystem& system, double t, std::span<const double> z, double h,
                           TripletList& scratch) {
    const auto diff = system.differential();
    const auto n = static_cast<Eigen::Index>(system.size());
    scratch.clear();
    system.jacobian(t, z, scratch);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(scratch.size() + static_cast<std::size_t>(n));
    for (const auto& e : scratch) {
        const double val = diff[e.row] ? -0.5 * h * e.value : e.value;
        trip.emplace_back(static_cast<int>(e.row), static_cast<int>(e.col), val);
    }
    for (Eigen::Index i = 0; i < n; ++i) {
        if (diff[static_cast<std::size_t>(i)]) trip.emplace_back(static_cast<int>(i), static_cast<int>(i), 1.0);
    }
    SparseMatrix a(n, n);
    a.setFromTriplets(trip.begin(), trip.end());
    a.makeCompressed();
    return a;
}

}  // namespace

StepOutcome newton_solve_step(DaeSystem& system, double t0, std::span<const double> z0,
                              std::span<const double> f0, const SolverConfig& config, bool honest,
                              SparseLu& lu) {
    const std::size_t n = system.size();
    if (z0.size() != n || f0.size() != n) throw StructuralError("newton step: vector length mismatch");
    const double h = config.h;
    const double t1 = t0 + h;
    const auto diff = system.differential();

    StepOutcome out;
    out.z.assign(z0.begin(), z0.end());
    out.f.assign(n, 0.0);
    out.stats.t = t1;
    std::vector<double> r(n);
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(n));
    TripletList scratch;

    for (int k = 1;; ++k) {
        if (config.per_iteration_split_update || k == 1) system.begin_iteration(out.z);
        system.eval(t1, out.z, out.f);
        trapezoidal_residual(out.z, z0, out.f, f0, diff, h, r);
        out.stats.residual = inf_norm(r);

        if (!std::isfinite(out.stats.residual)) {
            out.stats.iterations = k - 1;
            throw StepFailure("non-finite residual at t = " + std::to_string(t1), out.stats);
        }
        if (k > 1 && out.stats.residual < config.tol) {
            out.stats.iterations = k - 1;
            out.stats.converged = true;
            return out;
        }
        if (k > config.max_iter) {
            out.stats.iterations = config.max_iter;
            throw StepFailure("Newton did not converge at t = " + std::to_string(t1) +
                                  " (residual " + std::to_string(out.stats.residual) + ")",
                              out.stats);
        }

        const bool rebuild = honest || !lu.ready() || lu.size() != static_cast<Eigen::Index>(n) ||
                             (k > 1 && (k - 1) % config.refresh_every == 0);
        if (rebuild) {
            lu.factorize(newton_matrix(system, t1, out.z, h, scratch));
            ++out.stats.factorizations;
        }
        for (std::size_t i = 0; i < n; ++i) rhs[static_cast<Eigen::Index>(i)] = r[i];
        const Eigen::VectorXd dz = lu.solve(rhs);
        for (std::size_t i = 0; i < n; ++i) out.z[i] -= dz[static_cast<Eigen::Index>(i)];
    }
}

int solve_algebraic(DaeSystem& system, double t, std::vector<double>& z, const SolverConfig& config) {
    const std::size_t n = system.size();
    const auto diff = system.differential();
    std::vector<int> sub(n, -1);
    int m = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!diff[i]) sub[i] = m++;
    }
    if (m == 0) return 0;

    std::vector<double> f(n);
    Eigen::VectorXd r(m);
    TripletList scratch;
    SparseLu lu;
    for (int k = 1;; ++k) {
        system.begin_iteration(z);
        system.eval(t, z, f);
        for (std::size_t i = 0; i < n; ++i) {
            if (sub[i] >= 0) r[sub[i]] = f[i];
        }
        const double norm = inf_norm({r.data(), static_cast<std::size_t>(m)});
        if (!std::isfinite(norm)) {
            throw ConvergenceError("algebraic re-solve produced non-finite residual at t = " + std::to_string(t), norm);
        }
        if (norm < config.tol) return k - 1;
        if (k > config.max_iter) {
            throw ConvergenceError("algebraic re-solve did not converge at t = " + std::to_string(t), norm);
        }
        scratch.clear();
        system.jacobian(t, z, scratch);
        std::vector<Eigen::Triplet<double>> trip;
        trip.reserve(scratch.size());
        for (const auto& e : scratch) {
            if (sub[e.row] >= 0 && sub[e.col] >= 0) trip.emplace_back(sub[e.row], sub[e.col], e.value);
        }
        SparseMatrix a(m, m);
        a.setFromTriplets(trip.begin(), trip.end());
        a.makeCompressed();
        lu.factorize(a);
        const Eigen::VectorXd dz = lu.solve(r);
        for (std::size_t i = 0; i < n; ++i) {
            if (sub[i] >= 0) z[i] -= dz[sub[i]];
        }
    }
}

// ---------------------------------------------------------------------------

long step_count(double t_end, double h) {
    return static_cast<long>(std::ceil(t_end / h - 1e-9));
}

bool on_step_grid(double t, double h) {
    const double k = t / h;
    return std::abs(k - std::round(k)) <= 1e-9 * std::max(1.0, std::abs(k));
}

SimulationResult run_simulation(DaeSystem& system, std::vector<double> z, double t_end,
                                const SolverConfig& config, const EventSchedule& events,
                                const StepObserver& observer) {
    config.validate();
    if (!(t_end > 0.0)) throw ConfigurationError("simulation: t_end must be > 0");
    for (std::size_t i = 0; i < events.times.size(); ++i) {
        const double te = events.times[i];
        if (!on_step_grid(te, config.h)) {
            throw ConfigurationError("event at t = " + std::to_string(te) + " is not on the step grid");
        }
        if (i > 0 && !(te > events.times[i - 1])) throw ConfigurationError("event times must increase");
    }

    const long n_steps = step_count(t_end, config.h);
    SimulationResult result;
    result.steps.reserve(static_cast<std::size_t>(n_steps));
    SparseLu lu;

    std::vector<double> f0(system.size());
    system.eval(0.0, z, f0);
    if (observer) observer(0.0, z);

    std::size_t next_event = 0;
    double last_event = -std::numeric_limits<double>::infinity();
    const auto start = std::chrono::steady_clock::now();

    for (long k = 0; k < n_steps; ++k) {
        const double t = static_cast<double>(k) * config.h;
        while (next_event < events.times.size() &&
               std::llround(events.times[next_event] / config.h) == k) {
            z = events.apply(t, z);
            lu.reset();
            result.event_iterations += solve_algebraic(system, t, z, config);
            f0.assign(system.size(), 0.0);
            system.eval(t, z, f0);
            last_event = t;
            ++next_event;
        }
        const bool honest = (t + config.h) - last_event <= config.honest_window + 1e-9;
        StepOutcome step = newton_solve_step(system, t, z, f0, config, honest, lu);
        z = std::move(step.z);
        f0 = std::move(step.f);
        result.steps.push_back(step.stats);
        if (observer) observer(static_cast<double>(k + 1) * config.h, z);
    }

    result.wall_time_s =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return result;
}

}  // namespace tsim
