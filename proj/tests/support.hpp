#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <random>
#include <vector>

#include "tsim/dae.hpp"
#include "tsim/devices.hpp"
#include "tsim/scenario.hpp"
#include "tsim/solver.hpp"

namespace tsim::test {

// Root of f on [lo, hi] by plain bisection; f(lo) and f(hi) must differ in sign.
inline double bisect(const std::function<double(double)>& f, double lo, double hi, double tol = 1e-15) {
    double flo = f(lo);
    for (int i = 0; i < 200 && hi - lo > tol; ++i) {
        const double mid = 0.5 * (lo + hi);
        const double fm = f(mid);
        if ((fm < 0.0) == (flo < 0.0)) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    return 0.5 * (lo + hi);
}

using Dense = std::vector<std::vector<double>>;

inline Dense to_dense(const TripletList& trip, std::size_t n) {
    Dense m(n, std::vector<double>(n, 0.0));
    for (const auto& t : trip) m[t.row][t.col] += t.value;
    return m;
}

// Central differences of r(w), column by column.
inline Dense fd_jacobian(const std::function<void(std::span<const double>, std::span<double>)>& r,
                         std::vector<double> w, double eps = 1e-6) {
    const std::size_t n = w.size();
    Dense m(n, std::vector<double>(n, 0.0));
    std::vector<double> rp(n), rm(n);
    for (std::size_t j = 0; j < n; ++j) {
        const double w0 = w[j];
        const double step = eps * std::max(1.0, std::abs(w0));
        w[j] = w0 + step;
        r(w, rp);
        w[j] = w0 - step;
        r(w, rm);
        w[j] = w0;
        for (std::size_t i = 0; i < n; ++i) m[i][j] = (rp[i] - rm[i]) / (2.0 * step);
    }
    return m;
}

// max_ij |a - b| / max(1, max|b|) over each column.
inline double jacobian_mismatch(const Dense& analytic, const Dense& fd) {
    double worst = 0.0;
    const std::size_t n = fd.size();
    for (std::size_t j = 0; j < n; ++j) {
        double scale = 1.0;
        for (std::size_t i = 0; i < n; ++i) scale = std::max(scale, std::abs(fd[i][j]));
        for (std::size_t i = 0; i < n; ++i) {
            worst = std::max(worst, std::abs(analytic[i][j] - fd[i][j]) / scale);
        }
    }
    return worst;
}

// One device bound standalone. Bus angle, bus voltage and reference slots are
// held at fixed values by identity rows, so the result is a closed DAE.
class DeviceHarness final : public DaeSystem {
public:
    DeviceHarness(Device& device, std::size_t n_refs = 0) : device_(device) {
        n_ = bind_standalone(device, n_refs);
        w_.assign(n_, 0.0);
        diff_.assign(n_, 0);
        const auto vars = device.variables();
        n_vars_ = vars.size();
        for (std::size_t i = 0; i < n_vars_; ++i) diff_[i] = vars[i].kind == VarKind::state ? 1 : 0;
        fixed_.assign(n_, 0.0);
    }

    std::vector<double>& w() { return w_; }
    std::size_t n_vars() const { return n_vars_; }
    /// Pins slot `i` (bus theta, v or a reference) at `value`.
    void pin(std::size_t i, double value) {
        fixed_[i] = value;
        w_[i] = value;
    }

    std::size_t size() const override { return n_; }
    std::span<const std::uint8_t> differential() const override { return diff_; }
    void eval(double, std::span<const double> z, std::span<double> out) override {
        std::fill(out.begin(), out.end(), 0.0);
        device_.residual(z, out);
        for (std::size_t i = n_vars_; i < n_; ++i) out[i] = fixed_[i] - z[i];
    }
    void jacobian(double, std::span<const double> z, TripletList& out) override {
        TripletList t;
        device_.jacobian(z, t);
        for (const auto& e : t) {
            if (e.row < n_vars_) out.push_back(e);
        }
        for (std::size_t i = n_vars_; i < n_; ++i) out.push_back({i, i, -1.0});
    }

private:
    Device& device_;
    std::size_t n_ = 0;
    std::size_t n_vars_ = 0;
    std::vector<double> w_;
    std::vector<double> fixed_;
    std::vector<std::uint8_t> diff_;
};

inline CaseData bundled_case(const std::string& name) { return parse_case(resolve_case_path(name)); }
inline Scenario bundled_scenario(const std::string& name) { return parse_scenario(resolve_scenario_path(name)); }

inline const std::vector<std::string>& bundled_case_names() {
    static const std::vector<std::string> names{"smib", "ieee14", "ieee14_renewable"};
    return names;
}

inline Scenario flat_scenario(const std::string& case_name, double t_end, double h) {
    Scenario s;
    s.name = case_name + "_flat";
    s.case_ref = case_name;
    s.t_end = t_end;
    s.solver.h = h;
    return s;
}

// Largest |w(t) - w(0)| over every column of a trajectory.
inline double max_drift(const Trajectory& tr) {
    double m = 0.0;
    for (const auto& row : tr.samples) {
        for (std::size_t j = 0; j < row.size(); ++j) m = std::max(m, std::abs(row[j] - tr.samples.front()[j]));
    }
    return m;
}

}  // namespace tsim::test
