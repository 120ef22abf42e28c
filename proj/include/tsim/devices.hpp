#pragma once

#include <array>
#include <optional>

#include "tsim/device.hpp"
#include "tsim/error.hpp"

namespace tsim {

// ---------------------------------------------------------------------------
// Generator building blocks

struct DqVoltage {
    double v_d;
    double v_q;
};

/// Projects the bus voltage onto the rotor reference: v_d = v cos(delta - theta),
/// v_q = v sin(delta - theta).
DqVoltage d_axis_projection(double v, double theta, double delta);

/// Two-axis stator equations with internal EMFs (e_d, e_q) behind reactances
/// (x_d, x_q):
///   [0] v_q + r_a I_q - e_q + x_d I_d
///   [1] v_d + r_a I_d - e_d - x_q I_q
std::array<double, 2> stator_residual(double v_d, double v_q, double i_d, double i_q, double e_d,
                                      double e_q, double r_a, double x_d, double x_q);

struct FluxCoefficients {
    double gamma_d1 = 0.0;
    double gamma_d2 = 0.0;
    double gamma_q1 = 0.0;
    double xd_p_minus_xl = 0.0;
};

struct FluxLinkage {
    double psi_aq;
    double psi_ad;
    double psi_a;
};

/// Air-gap flux block, the split-eligible part of GENROU.
FluxLinkage flux_linkage_eval(double e1d, double e1q, double psi_kd, double psi_kq,
                              const FluxCoefficients& c);

/// Quadratic saturation S(psi) = B (psi - A)^2 / psi for psi > A, else 0,
/// fitted through S(1.0) = s10 and S(1.2) = s12.
class Saturation {
public:
    Saturation() = default;
    Saturation(double s10, double s12);

    double value(double psi) const;
    double derivative(double psi) const;
    bool enabled() const { return enabled_; }
    double a() const { return a_; }
    double b() const { return b_; }

private:
    bool enabled_ = false;
    double a_ = 0.0;
    double b_ = 0.0;
};

inline double saturation(double psi, double s10, double s12) { return Saturation(s10, s12).value(psi); }

// ---------------------------------------------------------------------------
// GENROU

struct GenrouParams {
    double x_d = 1.8;
    double x_q = 1.7;
    double x_d_p = 0.3;
    double x_q_p = 0.55;
    double x_d_pp = 0.25;  // also x''_q
    double x_l = 0.2;
    double r_a = 0.0;
    double T_d0_p = 8.0;
    double T_q0_p = 0.4;
    double T_d0_pp = 0.03;
    double T_q0_pp = 0.05;
    double H = 4.0;
    double D = 0.0;
    double S10 = 0.0;
    double S12 = 0.0;

    /// Throws ParameterError naming the violated invariant.
    void validate() const;
    /// Converts reactances, inertia and damping from machine base to system base.
    GenrouParams to_system_base(double mva, double base_mva) const;
    FluxCoefficients flux_coefficients() const;
};

class Genrou final : public Device {
public:
    enum Var : std::size_t {
        delta, omega, e1q, e1d, psi_kd, psi_kq,
        v_d, v_q, i_d, i_q, psi_aq, psi_ad, psi_a, tau_e,
        var_count
    };
    enum Input : std::size_t { tm_input, vf_input };

    /// `params` must already be on system base.
    Genrou(int id, int bus, const GenrouParams& params, double omega_base);

    std::string_view model() const override { return "GENROU"; }
    std::unique_ptr<Device> clone() const override { return std::make_unique<Genrou>(*this); }
    std::span<const VariableDecl> variables() const override;
    std::span<const SplitBlockDecl> split_blocks() const override;
    std::size_t input_count() const override { return 2; }
    double input_setpoint(std::size_t slot) const override { return slot == tm_input ? tm0_ : vf0_; }
    bool injects() const override { return true; }

    void residual(std::span<const double> w, std::span<double> out) const override;
    void jacobian(std::span<const double> w, TripletList& out) const override;
    void explicit_block(std::size_t block, std::span<const double> w,
                        std::span<double> values) const override;
    void initialize(InitContext& ctx) override;

    const GenrouParams& params() const { return p_; }
    void set_inputs(double tm, double vf) { tm0_ = tm; vf0_ = vf; }

private:
    double input(std::span<const double> w, std::size_t slot) const;

    GenrouParams p_;
    FluxCoefficients fc_;
    Saturation sat_;
    double omega_base_;
    double gamma_q2_;
    double sat_q_ratio_;
    double tm0_ = 0.0;
    double vf0_ = 1.0;
};

// ---------------------------------------------------------------------------
// Controllers

struct ExstParams {
    double T_r = 0.02;
    double K_a = 20.0;
    double T_a = 0.2;
    double v_min = -5.0;
    double v_max = 5.0;
    void validate() const;
};

/// First-order exciter: voltage transducer lag, regulator lag, clamped field output.
class ExstLite final : public Device {
public:
    enum Var : std::size_t { v_m, e_fd, v_f, var_count };

    ExstLite(int id, int gen_id, const ExstParams& params);

    std::string_view model() const override { return "EXST_LITE"; }
    std::unique_ptr<Device> clone() const override { return std::make_unique<ExstLite>(*this); }
    std::span<const VariableDecl> variables() const override;
    const Device* target() const override { return gen_; }
    int gen_id() const { return gen_id_; }

    void residual(std::span<const double> w, std::span<double> out) const override;
    void jacobian(std::span<const double> w, TripletList& out) const override;
    void initialize(InitContext& ctx) override;
    void resolve_links(const DeviceLookup& lookup) override;

    double reference() const { return v_ref_; }
    void set_reference(double v_ref) { v_ref_ = v_ref; }

private:
    ExstParams p_;
    int gen_id_;
    Device* gen_ = nullptr;
    double v_ref_ = 1.0;
    double vf0_ = 1.0;
};

struct TgovParams {
    double R = 0.05;
    double T_1 = 0.5;
    double T_3 = 2.0;
    double v_min = 0.0;
    double v_max = 1.2;
    double D_t = 0.0;
    void validate() const;
    TgovParams to_system_base(double mva, double base_mva) const;
};

/// Droop governor with clamped valve lag followed by a turbine lag.
class TgovLite final : public Device {
public:
    enum Var : std::size_t { p_g, p_t, p_m, var_count };

    TgovLite(int id, int gen_id, const TgovParams& params);

    std::string_view model() const override { return "TGOV_LITE"; }
    std::unique_ptr<Device> clone() const override { return std::make_unique<TgovLite>(*this); }
    std::span<const VariableDecl> variables() const override;
    const Device* target() const override { return gen_; }
    int gen_id() const { return gen_id_; }

    void residual(std::span<const double> w, std::span<double> out) const override;
    void jacobian(std::span<const double> w, TripletList& out) const override;
    void initialize(InitContext& ctx) override;
    void resolve_links(const DeviceLookup& lookup) override;

    double reference() const { return p_ref_; }
    void set_reference(double p_ref) { p_ref_ = p_ref; }

private:
    TgovParams p_;
    int gen_id_;
    Device* gen_ = nullptr;
    double p_ref_ = 0.0;
};

// ---------------------------------------------------------------------------
// Renewable converter and electrical control

struct RegcaParams {
    double T_g = 0.02;
    double lvpl1 = 1.22;
    double zerox = 0.4;
    double brkpt = 0.9;
    void validate() const;
    RegcaParams to_system_base(double mva, double base_mva) const;
};

/// Low-voltage power logic gain: 0 below zerox, linear up to lvpl1 at brkpt,
/// unconstrained (infinity) at or above brkpt.
double lvpl_gain(double v, const RegcaParams& p);
/// Active current after low-voltage limiting: min(ip, gain(v)).
double regca_lvpl_eval(double v, double ip, const RegcaParams& p);

class RegcaLite final : public Device {
public:
    enum Var : std::size_t { i_p, i_q, i_p_out, var_count };
    enum Input : std::size_t { ip_cmd_input, iq_cmd_input };

    RegcaLite(int id, int bus, const RegcaParams& params);

    std::string_view model() const override { return "REGCA_LITE"; }
    std::unique_ptr<Device> clone() const override { return std::make_unique<RegcaLite>(*this); }
    std::span<const VariableDecl> variables() const override;
    std::span<const SplitBlockDecl> split_blocks() const override;
    std::size_t input_count() const override { return 2; }
    double input_setpoint(std::size_t slot) const override { return slot == ip_cmd_input ? ip0_ : iq0_; }
    bool injects() const override { return true; }

    void residual(std::span<const double> w, std::span<double> out) const override;
    void jacobian(std::span<const double> w, TripletList& out) const override;
    void explicit_block(std::size_t block, std::span<const double> w,
                        std::span<double> values) const override;
    void initialize(InitContext& ctx) override;

    const RegcaParams& params() const { return p_; }

private:
    double input(std::span<const double> w, std::size_t slot) const;

    RegcaParams p_;
    double ip0_ = 0.0;
    double iq0_ = 0.0;
};

struct ReecaParams {
    std::optional<double> v_ref0;  // defaults to the initial voltage
    double K_qv = 2.0;
    double i_ql1 = -1.0;
    double i_qh1 = 1.0;
    double T_rv = 0.02;
    void validate() const;
    ReecaParams to_system_base(double mva, double base_mva) const;
};

double reeca_voltage_dev_eval(double v_filtered, double v_ref0);
double reeca_iq_injection_eval(double dv, const ReecaParams& p);

class ReecaLite final : public Device {
public:
    enum Var : std::size_t { v_filt, dv, iq_inj, ip_cmd, iq_cmd, var_count };

    ReecaLite(int id, int regca_id, const ReecaParams& params);

    std::string_view model() const override { return "REECA_LITE"; }
    std::unique_ptr<Device> clone() const override { return std::make_unique<ReecaLite>(*this); }
    std::span<const VariableDecl> variables() const override;
    std::span<const SplitBlockDecl> split_blocks() const override;
    const Device* target() const override { return conv_; }
    int regca_id() const { return regca_id_; }

    void residual(std::span<const double> w, std::span<double> out) const override;
    void jacobian(std::span<const double> w, TripletList& out) const override;
    void explicit_block(std::size_t block, std::span<const double> w,
                        std::span<double> values) const override;
    void initialize(InitContext& ctx) override;
    void resolve_links(const DeviceLookup& lookup) override;

    double v_ref0() const { return v_ref0_; }

private:
    ReecaParams p_;
    int regca_id_;
    Device* conv_ = nullptr;
    double v_ref0_ = 1.0;
    double ip0_ = 0.0;
    double iq0_ = 0.0;
};

}  // namespace tsim
