#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include <Eigen/SparseCore>
#include <Eigen/SparseLU>

#include "tsim/device.hpp"
#include "tsim/error.hpp"

namespace tsim {

using SparseMatrix = Eigen::SparseMatrix<double>;

/// Semi-explicit index-1 DAE as seen by the integrator: z = [x; y] in
/// Newton ordering, with f on differential rows and g on algebraic rows.
class DaeSystem {
public:
    virtual ~DaeSystem() = default;

    virtual std::size_t size() const = 0;
    /// 1 on differential rows/columns, 0 on algebraic ones.
    virtual std::span<const std::uint8_t> differential() const = 0;
    virtual void eval(double t, std::span<const double> z, std::span<double> out) = 0;
    virtual void jacobian(double t, std::span<const double> z, TripletList& out) = 0;
    /// Called at the top of a Newton iteration with the previous iterate.
    virtual void begin_iteration(std::span<const double> /*z*/) {}
};

struct SolverConfig {
    double h = 1.0 / 120.0;
    double tol = 1e-4;
    int max_iter = 15;
    int refresh_every = 3;
    double honest_window = 0.1;
    bool per_iteration_split_update = true;

    void validate() const;
};

struct StepStats {
    double t = 0.0;
    int iterations = 0;
    int factorizations = 0;
    double residual = 0.0;
    bool converged = false;
};

/// A Newton step that exhausted max_iter or produced non-finite values.
class StepFailure : public ConvergenceError {
public:
    StepFailure(const std::string& what, StepStats stats)
        : ConvergenceError(what, stats.residual), stats_(stats) {}
    const StepStats& stats() const noexcept { return stats_; }

private:
    StepStats stats_;
};

/// Sparse direct solver whose factorization is reused across right-hand
/// sides and Newton iterations. The symbolic analysis is redone only when
/// the sparsity pattern changes.
class SparseLu {
public:
    void factorize(const SparseMatrix& a);
    Eigen::VectorXd solve(const Eigen::VectorXd& rhs) const;
    bool ready() const { return ready_; }
    Eigen::Index size() const { return n_; }
    void reset() { ready_ = false; }
    int symbolic_analyses() const { return analyses_; }

private:
    Eigen::SparseLU<SparseMatrix, Eigen::COLAMDOrdering<int>> lu_;
    std::vector<int> outer_;
    std::vector<int> inner_;
    Eigen::Index n_ = 0;
    bool ready_ = false;
    int analyses_ = 0;
};

Eigen::VectorXd linear_solve(const SparseMatrix& a, const Eigen::VectorXd& rhs);

/// x - x0 - (h/2)(f + f0) on differential rows, f unchanged on algebraic rows.
void trapezoidal_residual(std::span<const double> z, std::span<const double> z0,
                          std::span<const double> f, std::span<const double> f0,
                          std::span<const std::uint8_t> differential, double h,
                          std::span<double> out);

struct StepOutcome {
    std::vector<double> z;
    /// [f; g] evaluated at the accepted iterate, reused as f0 for the next step.
    std::vector<double> f;
    StepStats stats;
};

/// One implicit trapezoidal step from t0 to t0 + h. Honest mode rebuilds
/// and factorizes the Jacobian every iteration; otherwise the current
/// factorization is reused and rebuilt at iterations 1 + refresh_every,
/// 1 + 2 refresh_every, ... (or at iteration 1 if none exists).
StepOutcome newton_solve_step(DaeSystem& system, double t0, std::span<const double> z0,
                              std::span<const double> f0, const SolverConfig& config, bool honest,
                              SparseLu& lu);

/// Honest Newton on the algebraic rows with every state held fixed.
/// Returns the iteration count (0 when already within tolerance).
int solve_algebraic(DaeSystem& system, double t, std::vector<double>& z, const SolverConfig& config);

struct EventSchedule {
    /// Distinct event instants, strictly increasing, each on the step grid.
    std::vector<double> times;
    /// Applies every event at `t` and returns the (possibly resized) iterate.
    std::function<std::vector<double>(double t, std::span<const double> z)> apply;
};

using StepObserver = std::function<void(double t, std::span<const double> z)>;

struct SimulationResult {
    std::vector<StepStats> steps;
    double wall_time_s = 0.0;
    int event_iterations = 0;
};

/// Fixed-step march over [0, t_end]. The observer sees t = 0 and every
/// accepted step. Steps ending within honest_window of an event are honest.
SimulationResult run_simulation(DaeSystem& system, std::vector<double> z, double t_end,
                                const SolverConfig& config, const EventSchedule& events,
                                const StepObserver& observer);

/// Number of steps on the grid k*h covering [0, t_end].
long step_count(double t_end, double h);
/// True when t is an integer multiple of h up to rounding.
bool on_step_grid(double t, double h);

}  // namespace tsim
