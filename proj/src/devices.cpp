#include "tsim/devices.hpp"

#include <cmath>
#include <complex>
#include <numbers>

namespace tsim {

using Complex = std::complex<double>;

void Device::bind(DeviceAddress address) {
    if (address.vars.size() != variables().size()) {
        throw InternalError(name() + ": address size does not match variable count");
    }
    address.inputs.resize(input_count(), npos);
    addr_ = std::move(address);
}

void Device::bind_input(std::size_t slot, Index index) {
    if (slot >= input_count()) throw InternalError(name() + ": input slot out of range");
    if (addr_.inputs.size() < input_count()) addr_.inputs.resize(input_count(), npos);
    addr_.inputs[slot] = index;
}

std::size_t bind_standalone(Device& device, std::size_t n_refs) {
    const std::size_t n = device.variables().size();
    DeviceAddress a;
    for (std::size_t i = 0; i < n; ++i) a.vars.push_back(i);
    a.theta = n;
    a.v = n + 1;
    for (std::size_t i = 0; i < n_refs; ++i) a.refs.push_back(n + 2 + i);
    device.bind(std::move(a));
    return n + 2 + n_refs;
}

// ---------------------------------------------------------------------------

DqVoltage d_axis_projection(double v, double theta, double delta) {
    const double ang = delta - theta;
    return {v * std::cos(ang), v * std::sin(ang)};
}

std::array<double, 2> stator_residual(double v_d, double v_q, double i_d, double i_q, double e_d,
                                      double e_q, double r_a, double x_d, double x_q) {
    return {v_q + r_a * i_q - e_q + x_d * i_d, v_d + r_a * i_d - e_d - x_q * i_q};
}

FluxLinkage flux_linkage_eval(double e1d, double e1q, double psi_kd, double psi_kq,
                              const FluxCoefficients& c) {
    FluxLinkage out{};
    out.psi_aq = c.gamma_q1 * e1d + psi_kq * (1.0 - c.gamma_q1);
    out.psi_ad = c.gamma_d1 * e1q + c.gamma_d2 * psi_kd * c.xd_p_minus_xl;
    out.psi_a = std::sqrt(out.psi_ad * out.psi_ad + out.psi_aq * out.psi_aq);
    return out;
}

Saturation::Saturation(double s10, double s12) {
    if (s10 < 0.0 || s12 < 0.0) throw ParameterError("saturation: S10 and S12 must be >= 0");
    if (s12 < s10) throw ParameterError("saturation: S12 < S10");
    if (s10 == 0.0) {
        if (s12 != 0.0) throw ParameterError("saturation: S10 = 0 with S12 > 0 cannot be fitted");
        return;
    }
    // (1.2 - A) / (1 - A) = sqrt(1.2 S12 / S10)
    const double r = std::sqrt(1.2 * s12 / s10);
    a_ = (r - 1.2) / (r - 1.0);
    b_ = s10 / ((1.0 - a_) * (1.0 - a_));
    enabled_ = true;
}

double Saturation::value(double psi) const {
    if (!enabled_ || psi <= a_ || psi <= 0.0) return 0.0;
    const double d = psi - a_;
    return b_ * d * d / psi;
}

double Saturation::derivative(double psi) const {
    if (!enabled_ || psi <= a_ || psi <= 0.0) return 0.0;
    return b_ * (psi - a_) * (psi + a_) / (psi * psi);
}

// ---------------------------------------------------------------------------
// GENROU

void GenrouParams::validate() const {
    auto fail = [](const std::string& what) { throw ParameterError("GENROU: " + what); };
    if (!(x_d > x_d_p)) fail("x_d > x_d_p violated");
    if (!(x_d_p > x_d_pp)) fail("x_d_p > x_d_pp violated");
    if (!(x_d_pp > x_l)) fail("x_d_pp > x_l violated");
    if (!(x_l >= 0.0)) fail("x_l >= 0 violated");
    if (!(x_q > x_q_p)) fail("x_q > x_q_p violated");
    if (!(x_q_p > x_d_pp)) fail("x_q_p > x_q_pp violated");
    if (!(r_a >= 0.0)) fail("r_a >= 0 violated");
    if (!(T_d0_p > 0.0 && T_q0_p > 0.0 && T_d0_pp > 0.0 && T_q0_pp > 0.0)) {
        fail("time constants must be > 0");
    }
    if (!(H > 0.0)) fail("H > 0 violated");
    if (!(D >= 0.0)) fail("D >= 0 violated");
    if (S12 < S10) fail("S12 < S10");
    Saturation(S10, S12);
}

GenrouParams GenrouParams::to_system_base(double mva, double base_mva) const {
    GenrouParams out = *this;
    const double z = base_mva / mva;
    for (double* x : {&out.x_d, &out.x_q, &out.x_d_p, &out.x_q_p, &out.x_d_pp, &out.x_l, &out.r_a}) {
        *x *= z;
    }
    out.H = H / z;
    out.D = D / z;
    return out;
}

FluxCoefficients GenrouParams::flux_coefficients() const {
    FluxCoefficients c;
    c.xd_p_minus_xl = x_d_p - x_l;
    c.gamma_d1 = (x_d_pp - x_l) / (x_d_p - x_l);
    c.gamma_d2 = (1.0 - c.gamma_d1) / (x_d_p - x_l);
    c.gamma_q1 = (x_d_pp - x_l) / (x_q_p - x_l);
    return c;
}

namespace {

const VariableDecl kGenrouVars[] = {
    {"delta", VarKind::state},
    {"omega", VarKind::state},
    {"e1q", VarKind::state},
    {"e1d", VarKind::state},
    {"psi_kd", VarKind::state},
    {"psi_kq", VarKind::state},
    {"v_d", VarKind::internal_algebraic},
    {"v_q", VarKind::internal_algebraic},
    {"i_d", VarKind::internal_algebraic},
    {"i_q", VarKind::internal_algebraic},
    {"psi_aq", VarKind::internal_algebraic, true, true},
    {"psi_ad", VarKind::internal_algebraic, true, true},
    {"psi_a", VarKind::internal_algebraic, true, false},
    {"tau_e", VarKind::internal_algebraic},
};

const SplitBlockDecl kGenrouBlocks[] = {
    {"genrou.flux", {Genrou::psi_aq, Genrou::psi_ad, Genrou::psi_a}},
};

}  // namespace

Genrou::Genrou(int id, int bus, const GenrouParams& params, double omega_base)
    : Device(id, bus), p_(params), omega_base_(omega_base) {
    p_.validate();
    fc_ = p_.flux_coefficients();
    sat_ = Saturation(p_.S10, p_.S12);
    gamma_q2_ = (1.0 - fc_.gamma_q1) / (p_.x_q_p - p_.x_l);
    sat_q_ratio_ = (p_.x_q - p_.x_l) / (p_.x_d - p_.x_l);
}

std::span<const VariableDecl> Genrou::variables() const { return kGenrouVars; }
std::span<const SplitBlockDecl> Genrou::split_blocks() const { return kGenrouBlocks; }

double Genrou::input(std::span<const double> w, std::size_t slot) const {
    if (input_bound(slot)) return w[addr_.inputs[slot]];
    return slot == tm_input ? tm0_ : vf0_;
}

void Genrou::residual(std::span<const double> w, std::span<double> out) const {
    const double dlt = get(w, delta), om = get(w, omega);
    const double eq1 = get(w, e1q), ed1 = get(w, e1d);
    const double kd = get(w, psi_kd), kq = get(w, psi_kq);
    const double vd = get(w, v_d), vq = get(w, v_q);
    const double id = get(w, i_d), iq = get(w, i_q);
    const double aq = get(w, psi_aq), ad = get(w, psi_ad), a = get(w, psi_a);
    const double te = get(w, tau_e);
    const double v = bus_v(w), th = bus_theta(w);
    const double sat = sat_.value(a);

    const double c1 = p_.x_d - p_.x_d_p;
    const double c2 = p_.x_q - p_.x_q_p;
    const double xad_ifd = eq1 + c1 * (fc_.gamma_d1 * id + fc_.gamma_d2 * (eq1 - kd)) + sat * ad;
    const double xaq_ilq =
        ed1 - c2 * (fc_.gamma_q1 * iq - gamma_q2_ * (ed1 - kq)) + sat_q_ratio_ * sat * aq;

    out[at(delta)] = omega_base_ * (om - 1.0);
    out[at(omega)] = (input(w, tm_input) - te - p_.D * (om - 1.0)) / (2.0 * p_.H);
    out[at(e1q)] = (input(w, vf_input) - xad_ifd) / p_.T_d0_p;
    out[at(e1d)] = -xaq_ilq / p_.T_q0_p;
    out[at(psi_kd)] = (-kd + eq1 - (p_.x_d_p - p_.x_l) * id) / p_.T_d0_pp;
    out[at(psi_kq)] = (-kq + ed1 + (p_.x_q_p - p_.x_l) * iq) / p_.T_q0_pp;

    // q axis aligned with the rotor angle
    out[at(v_d)] = v * std::sin(dlt - th) - vd;
    out[at(v_q)] = v * std::cos(dlt - th) - vq;

    const auto st = stator_residual(vd, vq, id, iq, aq, ad, p_.r_a, p_.x_d_pp, p_.x_d_pp);
    out[at(i_d)] = st[0];
    out[at(i_q)] = st[1];

    const auto flux = flux_linkage_eval(ed1, eq1, kd, kq, fc_);
    out[at(psi_aq)] = flux.psi_aq - aq;
    out[at(psi_ad)] = flux.psi_ad - ad;
    out[at(psi_a)] = std::sqrt(ad * ad + aq * aq) - a;
    out[at(tau_e)] = ad * iq + aq * id - te;

    out[addr_.theta] += vd * id + vq * iq;
    out[addr_.v] += vq * id - vd * iq;
}

void Genrou::jacobian(std::span<const double> w, TripletList& out) const {
    const double dlt = get(w, delta);
    const double vd = get(w, v_d), vq = get(w, v_q);
    const double id = get(w, i_d), iq = get(w, i_q);
    const double aq = get(w, psi_aq), ad = get(w, psi_ad), a = get(w, psi_a);
    const double v = bus_v(w), th = bus_theta(w);
    const double sat = sat_.value(a);
    const double dsat = sat_.derivative(a);
    const double s = std::sin(dlt - th), c = std::cos(dlt - th);

    auto add = [&out](Index r, Index col, double val) { out.push_back({r, col, val}); };

    add(at(delta), at(omega), omega_base_);

    const double inv2h = 1.0 / (2.0 * p_.H);
    add(at(omega), at(omega), -p_.D * inv2h);
    add(at(omega), at(tau_e), -inv2h);
    if (input_bound(tm_input)) add(at(omega), addr_.inputs[tm_input], inv2h);

    const double c1 = p_.x_d - p_.x_d_p;
    const double tdp = 1.0 / p_.T_d0_p;
    add(at(e1q), at(e1q), -(1.0 + c1 * fc_.gamma_d2) * tdp);
    add(at(e1q), at(psi_kd), c1 * fc_.gamma_d2 * tdp);
    add(at(e1q), at(i_d), -c1 * fc_.gamma_d1 * tdp);
    add(at(e1q), at(psi_ad), -sat * tdp);
    add(at(e1q), at(psi_a), -dsat * ad * tdp);
    if (input_bound(vf_input)) add(at(e1q), addr_.inputs[vf_input], tdp);

    const double c2 = p_.x_q - p_.x_q_p;
    const double tqp = 1.0 / p_.T_q0_p;
    add(at(e1d), at(e1d), -(1.0 + c2 * gamma_q2_) * tqp);
    add(at(e1d), at(i_q), c2 * fc_.gamma_q1 * tqp);
    add(at(e1d), at(psi_kq), c2 * gamma_q2_ * tqp);
    add(at(e1d), at(psi_aq), -sat_q_ratio_ * sat * tqp);
    add(at(e1d), at(psi_a), -sat_q_ratio_ * dsat * aq * tqp);

    const double tdpp = 1.0 / p_.T_d0_pp;
    add(at(psi_kd), at(psi_kd), -tdpp);
    add(at(psi_kd), at(e1q), tdpp);
    add(at(psi_kd), at(i_d), -(p_.x_d_p - p_.x_l) * tdpp);

    const double tqpp = 1.0 / p_.T_q0_pp;
    add(at(psi_kq), at(psi_kq), -tqpp);
    add(at(psi_kq), at(e1d), tqpp);
    add(at(psi_kq), at(i_q), (p_.x_q_p - p_.x_l) * tqpp);

    add(at(v_d), addr_.v, s);
    add(at(v_d), at(delta), v * c);
    add(at(v_d), addr_.theta, -v * c);
    add(at(v_d), at(v_d), -1.0);
    add(at(v_q), addr_.v, c);
    add(at(v_q), at(delta), -v * s);
    add(at(v_q), addr_.theta, v * s);
    add(at(v_q), at(v_q), -1.0);

    add(at(i_d), at(v_q), 1.0);
    add(at(i_d), at(i_q), p_.r_a);
    add(at(i_d), at(psi_ad), -1.0);
    add(at(i_d), at(i_d), p_.x_d_pp);
    add(at(i_q), at(v_d), 1.0);
    add(at(i_q), at(i_d), p_.r_a);
    add(at(i_q), at(psi_aq), -1.0);
    add(at(i_q), at(i_q), -p_.x_d_pp);

    add(at(psi_aq), at(e1d), fc_.gamma_q1);
    add(at(psi_aq), at(psi_kq), 1.0 - fc_.gamma_q1);
    add(at(psi_aq), at(psi_aq), -1.0);
    add(at(psi_ad), at(e1q), fc_.gamma_d1);
    add(at(psi_ad), at(psi_kd), fc_.gamma_d2 * fc_.xd_p_minus_xl);
    add(at(psi_ad), at(psi_ad), -1.0);

    const double mag = std::sqrt(ad * ad + aq * aq);
    add(at(psi_a), at(psi_ad), mag > 0.0 ? ad / mag : 0.0);
    add(at(psi_a), at(psi_aq), mag > 0.0 ? aq / mag : 0.0);
    add(at(psi_a), at(psi_a), -1.0);

    add(at(tau_e), at(psi_ad), iq);
    add(at(tau_e), at(i_q), ad);
    add(at(tau_e), at(psi_aq), id);
    add(at(tau_e), at(i_d), aq);
    add(at(tau_e), at(tau_e), -1.0);

    add(addr_.theta, at(v_d), id);
    add(addr_.theta, at(i_d), vd);
    add(addr_.theta, at(v_q), iq);
    add(addr_.theta, at(i_q), vq);
    add(addr_.v, at(v_q), id);
    add(addr_.v, at(i_d), vq);
    add(addr_.v, at(v_d), -iq);
    add(addr_.v, at(i_q), -vd);
}

void Genrou::explicit_block(std::size_t block, std::span<const double> w,
                            std::span<double> values) const {
    if (block != 0) throw InternalError("GENROU: unknown split block");
    const auto flux = flux_linkage_eval(get(w, e1d), get(w, e1q), get(w, psi_kd), get(w, psi_kq), fc_);
    values[0] = flux.psi_aq;
    values[1] = flux.psi_ad;
    values[2] = flux.psi_a;
}

void Genrou::initialize(InitContext& ctx) {
    const Complex vt = std::polar(ctx.v, ctx.theta);
    const Complex it = std::conj(Complex(ctx.p, ctx.q) / vt);
    const double xpp = p_.x_d_pp;

    struct Point {
        double vd, vq, id, iq, aq, ad, a, sat;
    };
    auto at_angle = [&](double dl) {
        const Complex rot = std::exp(Complex(0.0, std::numbers::pi / 2.0 - dl));
        const Complex vdq = vt * rot;
        const Complex idq = it * rot;
        Point pt{};
        pt.vd = vdq.real();
        pt.vq = vdq.imag();
        pt.id = idq.real();
        pt.iq = idq.imag();
        pt.ad = pt.vq + p_.r_a * pt.iq + xpp * pt.id;
        pt.aq = pt.vd + p_.r_a * pt.id - xpp * pt.iq;
        pt.a = std::sqrt(pt.ad * pt.ad + pt.aq * pt.aq);
        pt.sat = sat_.value(pt.a);
        return pt;
    };
    // q-axis steady state: psi_aq (1 + k S) = (x_q - x'') I_q
    auto mismatch = [&](double dl) {
        const Point pt = at_angle(dl);
        return pt.aq * (1.0 + sat_q_ratio_ * pt.sat) - (p_.x_q - xpp) * pt.iq;
    };

    double dl = std::arg(vt + Complex(p_.r_a, p_.x_q) * it);
    bool ok = false;
    for (int k = 0; k < 60; ++k) {
        const double f = mismatch(dl);
        if (!std::isfinite(f)) break;
        if (std::abs(f) < 1e-14) {
            ok = true;
            break;
        }
        const double step = 1e-7;
        const double df = (mismatch(dl + step) - mismatch(dl - step)) / (2.0 * step);
        if (df == 0.0 || !std::isfinite(df)) break;
        dl -= f / df;
    }
    if (!ok && std::abs(mismatch(dl)) < 1e-12) ok = true;
    if (!ok) {
        throw InitializationError(name() + ": rotor angle does not satisfy the saturated steady state");
    }

    const Point pt = at_angle(dl);
    const double ed1 = (p_.x_q - p_.x_q_p) * pt.iq - sat_q_ratio_ * pt.sat * pt.aq;
    const double kq = ed1 + (p_.x_q_p - p_.x_l) * pt.iq;
    const double eq1 = pt.ad + (p_.x_d_p - xpp) * pt.id;
    const double kd = eq1 - (p_.x_d_p - p_.x_l) * pt.id;
    const double vf = eq1 + (p_.x_d - p_.x_d_p) * pt.id + pt.sat * pt.ad;
    const double te = pt.ad * pt.iq + pt.aq * pt.id;

    for (double val : {dl, ed1, kq, eq1, kd, vf, te}) {
        if (!std::isfinite(val)) throw InitializationError(name() + ": non-finite initial value");
    }

    auto w = ctx.w;
    w[at(delta)] = dl;
    w[at(omega)] = 1.0;
    w[at(e1q)] = eq1;
    w[at(e1d)] = ed1;
    w[at(psi_kd)] = kd;
    w[at(psi_kq)] = kq;
    w[at(v_d)] = pt.vd;
    w[at(v_q)] = pt.vq;
    w[at(i_d)] = pt.id;
    w[at(i_q)] = pt.iq;
    w[at(psi_aq)] = pt.aq;
    w[at(psi_ad)] = pt.ad;
    w[at(psi_a)] = pt.a;
    w[at(tau_e)] = te;
    tm0_ = te;
    vf0_ = vf;
}

// ---------------------------------------------------------------------------
// EXST_LITE

void ExstParams::validate() const {
    if (!(T_r > 0.0 && T_a > 0.0)) throw ParameterError("EXST_LITE: time constants must be > 0");
    if (!(v_max > v_min)) throw ParameterError("EXST_LITE: v_max > v_min violated");
    if (!(K_a >= 0.0)) throw ParameterError("EXST_LITE: K_a >= 0 violated");
}

namespace {

const VariableDecl kExstVars[] = {
    {"v_m", VarKind::state},
    {"e_fd", VarKind::state},
    {"v_f", VarKind::internal_algebraic},
};

}  // namespace

ExstLite::ExstLite(int id, int gen_id, const ExstParams& params)
    : Device(id, 0), p_(params), gen_id_(gen_id) {
    p_.validate();
}

std::span<const VariableDecl> ExstLite::variables() const { return kExstVars; }

void ExstLite::resolve_links(const DeviceLookup& lookup) {
    gen_ = lookup("GENROU", gen_id_);
    if (gen_ == nullptr) {
        throw ValidationError(name() + ": unknown GENROU " + std::to_string(gen_id_));
    }
    gen_->bind_input(Genrou::vf_input, at(v_f));
}

void ExstLite::residual(std::span<const double> w, std::span<double> out) const {
    const double vm = get(w, v_m), e = get(w, e_fd);
    out[at(v_m)] = (bus_v(w) - vm) / p_.T_r;
    out[at(e_fd)] = (vf0_ + p_.K_a * (v_ref_ - vm) - e) / p_.T_a;
    out[at(v_f)] = clamp_pw(e, p_.v_min, p_.v_max) - get(w, v_f);
}

void ExstLite::jacobian(std::span<const double> w, TripletList& out) const {
    out.push_back({at(v_m), addr_.v, 1.0 / p_.T_r});
    out.push_back({at(v_m), at(v_m), -1.0 / p_.T_r});
    out.push_back({at(e_fd), at(v_m), -p_.K_a / p_.T_a});
    out.push_back({at(e_fd), at(e_fd), -1.0 / p_.T_a});
    out.push_back({at(v_f), at(e_fd), clamp_pw_slope(get(w, e_fd), p_.v_min, p_.v_max)});
    out.push_back({at(v_f), at(v_f), -1.0});
}

void ExstLite::initialize(InitContext& ctx) {
    vf0_ = gen_ != nullptr ? gen_->input_setpoint(Genrou::vf_input) : vf0_;
    if (vf0_ < p_.v_min || vf0_ >= p_.v_max) {
        throw InitializationError(name() + ": initial field voltage outside [v_min, v_max)");
    }
    v_ref_ = ctx.v;
    ctx.w[at(v_m)] = ctx.v;
    ctx.w[at(e_fd)] = vf0_;
    ctx.w[at(v_f)] = vf0_;
}

// ---------------------------------------------------------------------------
// TGOV_LITE

void TgovParams::validate() const {
    if (!(R > 0.0)) throw ParameterError("TGOV_LITE: R > 0 violated");
    if (!(T_1 > 0.0 && T_3 > 0.0)) throw ParameterError("TGOV_LITE: time constants must be > 0");
    if (!(v_max > v_min)) throw ParameterError("TGOV_LITE: v_max > v_min violated");
}

TgovParams TgovParams::to_system_base(double mva, double base_mva) const {
    TgovParams out = *this;
    const double k = mva / base_mva;
    out.R = R / k;
    out.v_min = v_min * k;
    out.v_max = v_max * k;
    out.D_t = D_t * k;
    return out;
}

namespace {

const VariableDecl kTgovVars[] = {
    {"p_g", VarKind::state},
    {"p_t", VarKind::state},
    {"p_m", VarKind::internal_algebraic},
};

}  // namespace

TgovLite::TgovLite(int id, int gen_id, const TgovParams& params)
    : Device(id, 0), p_(params), gen_id_(gen_id) {
    p_.validate();
}

std::span<const VariableDecl> TgovLite::variables() const { return kTgovVars; }

void TgovLite::resolve_links(const DeviceLookup& lookup) {
    gen_ = lookup("GENROU", gen_id_);
    if (gen_ == nullptr) {
        throw ValidationError(name() + ": unknown GENROU " + std::to_string(gen_id_));
    }
    addr_.refs = {gen_->address().vars[Genrou::omega]};
    gen_->bind_input(Genrou::tm_input, at(p_m));
}

void TgovLite::residual(std::span<const double> w, std::span<double> out) const {
    const double om = w[addr_.refs[0]];
    const double pg = get(w, p_g), pt = get(w, p_t);
    out[at(p_g)] = (p_ref_ + (1.0 - om) / p_.R - pg) / p_.T_1;
    out[at(p_t)] = (clamp_pw(pg, p_.v_min, p_.v_max) - pt) / p_.T_3;
    out[at(p_m)] = pt - p_.D_t * (om - 1.0) - get(w, p_m);
}

void TgovLite::jacobian(std::span<const double> w, TripletList& out) const {
    const Index om = addr_.refs[0];
    out.push_back({at(p_g), om, -1.0 / (p_.R * p_.T_1)});
    out.push_back({at(p_g), at(p_g), -1.0 / p_.T_1});
    out.push_back({at(p_t), at(p_g), clamp_pw_slope(get(w, p_g), p_.v_min, p_.v_max) / p_.T_3});
    out.push_back({at(p_t), at(p_t), -1.0 / p_.T_3});
    out.push_back({at(p_m), at(p_t), 1.0});
    out.push_back({at(p_m), om, -p_.D_t});
    out.push_back({at(p_m), at(p_m), -1.0});
}

void TgovLite::initialize(InitContext& ctx) {
    const double tm0 = gen_ != nullptr ? gen_->input_setpoint(Genrou::tm_input) : p_ref_;
    if (tm0 < p_.v_min || tm0 >= p_.v_max) {
        throw InitializationError(name() + ": initial mechanical power outside [v_min, v_max)");
    }
    p_ref_ = tm0;
    ctx.w[at(p_g)] = tm0;
    ctx.w[at(p_t)] = tm0;
    ctx.w[at(p_m)] = tm0;
}

// ---------------------------------------------------------------------------
// REGCA_LITE

void RegcaParams::validate() const {
    if (!(T_g > 0.0)) throw ParameterError("REGCA_LITE: T_g > 0 violated");
    if (!(brkpt > zerox && zerox >= 0.0)) throw ParameterError("REGCA_LITE: brkpt > zerox >= 0 violated");
    if (!(lvpl1 >= 0.0)) throw ParameterError("REGCA_LITE: lvpl1 >= 0 violated");
}

RegcaParams RegcaParams::to_system_base(double mva, double base_mva) const {
    RegcaParams out = *this;
    out.lvpl1 = lvpl1 * mva / base_mva;
    return out;
}

double lvpl_gain(double v, const RegcaParams& p) {
    if (v < p.zerox) return 0.0;
    if (v < p.brkpt) return p.lvpl1 * (v - p.zerox) / (p.brkpt - p.zerox);
    return std::numeric_limits<double>::infinity();
}

double regca_lvpl_eval(double v, double ip, const RegcaParams& p) {
    const double cap = lvpl_gain(v, p);
    return ip < cap ? ip : cap;
}

namespace {

const VariableDecl kRegcaVars[] = {
    {"i_p", VarKind::state},
    {"i_q", VarKind::state},
    {"i_p_out", VarKind::internal_algebraic, true, true},
};

const SplitBlockDecl kRegcaBlocks[] = {
    {"regca.lvpl", {RegcaLite::i_p_out}},
};

}  // namespace

RegcaLite::RegcaLite(int id, int bus, const RegcaParams& params) : Device(id, bus), p_(params) {
    p_.validate();
}

std::span<const VariableDecl> RegcaLite::variables() const { return kRegcaVars; }
std::span<const SplitBlockDecl> RegcaLite::split_blocks() const { return kRegcaBlocks; }

double RegcaLite::input(std::span<const double> w, std::size_t slot) const {
    if (input_bound(slot)) return w[addr_.inputs[slot]];
    return slot == ip_cmd_input ? ip0_ : iq0_;
}

void RegcaLite::residual(std::span<const double> w, std::span<double> out) const {
    const double ip = get(w, i_p), iq = get(w, i_q), ipo = get(w, i_p_out);
    const double v = bus_v(w);
    out[at(i_p)] = (input(w, ip_cmd_input) - ip) / p_.T_g;
    out[at(i_q)] = (input(w, iq_cmd_input) - iq) / p_.T_g;
    out[at(i_p_out)] = regca_lvpl_eval(v, ip, p_) - ipo;
    out[addr_.theta] += v * ipo;
    out[addr_.v] += v * iq;
}

void RegcaLite::jacobian(std::span<const double> w, TripletList& out) const {
    const double ip = get(w, i_p), iq = get(w, i_q), ipo = get(w, i_p_out);
    const double v = bus_v(w);
    const double inv = 1.0 / p_.T_g;
    out.push_back({at(i_p), at(i_p), -inv});
    if (input_bound(ip_cmd_input)) out.push_back({at(i_p), addr_.inputs[ip_cmd_input], inv});
    out.push_back({at(i_q), at(i_q), -inv});
    if (input_bound(iq_cmd_input)) out.push_back({at(i_q), addr_.inputs[iq_cmd_input], inv});

    double d_ip = 1.0, d_v = 0.0;
    if (v < p_.brkpt) {
        const double cap = lvpl_gain(v, p_);
        if (!(ip < cap)) {
            d_ip = 0.0;
            d_v = v < p_.zerox ? 0.0 : p_.lvpl1 / (p_.brkpt - p_.zerox);
        }
    }
    out.push_back({at(i_p_out), at(i_p), d_ip});
    out.push_back({at(i_p_out), addr_.v, d_v});
    out.push_back({at(i_p_out), at(i_p_out), -1.0});

    out.push_back({addr_.theta, addr_.v, ipo});
    out.push_back({addr_.theta, at(i_p_out), v});
    out.push_back({addr_.v, addr_.v, iq});
    out.push_back({addr_.v, at(i_q), v});
}

void RegcaLite::explicit_block(std::size_t block, std::span<const double> w,
                               std::span<double> values) const {
    if (block != 0) throw InternalError("REGCA_LITE: unknown split block");
    values[0] = regca_lvpl_eval(bus_v(w), get(w, i_p), p_);
}

void RegcaLite::initialize(InitContext& ctx) {
    ip0_ = ctx.p / ctx.v;
    iq0_ = ctx.q / ctx.v;
    if (regca_lvpl_eval(ctx.v, ip0_, p_) != ip0_) {
        throw InitializationError(name() + ": initial active current is limited by LVPL");
    }
    ctx.w[at(i_p)] = ip0_;
    ctx.w[at(i_q)] = iq0_;
    ctx.w[at(i_p_out)] = ip0_;
}

// ---------------------------------------------------------------------------
// REECA_LITE

void ReecaParams::validate() const {
    if (!(T_rv > 0.0)) throw ParameterError("REECA_LITE: T_rv > 0 violated");
    if (!(i_qh1 >= i_ql1)) throw ParameterError("REECA_LITE: i_qh1 >= i_ql1 violated");
}

ReecaParams ReecaParams::to_system_base(double mva, double base_mva) const {
    ReecaParams out = *this;
    const double k = mva / base_mva;
    out.K_qv = K_qv * k;
    out.i_ql1 = i_ql1 * k;
    out.i_qh1 = i_qh1 * k;
    return out;
}

double reeca_voltage_dev_eval(double v_filtered, double v_ref0) { return v_filtered - v_ref0; }

double reeca_iq_injection_eval(double dv, const ReecaParams& p) {
    return clamp_pw(-p.K_qv * dv, p.i_ql1, p.i_qh1);
}

namespace {

const VariableDecl kReecaVars[] = {
    {"v_filt", VarKind::state},
    {"dv", VarKind::internal_algebraic, true, true},
    {"iq_inj", VarKind::internal_algebraic, true, true},
    {"ip_cmd", VarKind::internal_algebraic},
    {"iq_cmd", VarKind::internal_algebraic},
};

const SplitBlockDecl kReecaBlocks[] = {
    {"reeca.vdev", {ReecaLite::dv}},
    {"reeca.iqinj", {ReecaLite::iq_inj}},
};

}  // namespace

ReecaLite::ReecaLite(int id, int regca_id, const ReecaParams& params)
    : Device(id, 0), p_(params), regca_id_(regca_id) {
    p_.validate();
}

std::span<const VariableDecl> ReecaLite::variables() const { return kReecaVars; }
std::span<const SplitBlockDecl> ReecaLite::split_blocks() const { return kReecaBlocks; }

void ReecaLite::resolve_links(const DeviceLookup& lookup) {
    conv_ = lookup("REGCA_LITE", regca_id_);
    if (conv_ == nullptr) {
        throw ValidationError(name() + ": unknown REGCA_LITE " + std::to_string(regca_id_));
    }
    conv_->bind_input(RegcaLite::ip_cmd_input, at(ip_cmd));
    conv_->bind_input(RegcaLite::iq_cmd_input, at(iq_cmd));
}

void ReecaLite::residual(std::span<const double> w, std::span<double> out) const {
    const double vf = get(w, v_filt);
    const double d = get(w, dv);
    out[at(v_filt)] = (bus_v(w) - vf) / p_.T_rv;
    out[at(dv)] = reeca_voltage_dev_eval(vf, v_ref0_) - d;
    out[at(iq_inj)] = reeca_iq_injection_eval(d, p_) - get(w, iq_inj);
    out[at(ip_cmd)] = ip0_ - get(w, ip_cmd);
    out[at(iq_cmd)] = iq0_ + get(w, iq_inj) - get(w, iq_cmd);
}

void ReecaLite::jacobian(std::span<const double> w, TripletList& out) const {
    const double d = get(w, dv);
    out.push_back({at(v_filt), addr_.v, 1.0 / p_.T_rv});
    out.push_back({at(v_filt), at(v_filt), -1.0 / p_.T_rv});
    out.push_back({at(dv), at(v_filt), 1.0});
    out.push_back({at(dv), at(dv), -1.0});
    out.push_back({at(iq_inj), at(dv), -p_.K_qv * clamp_pw_slope(-p_.K_qv * d, p_.i_ql1, p_.i_qh1)});
    out.push_back({at(iq_inj), at(iq_inj), -1.0});
    out.push_back({at(ip_cmd), at(ip_cmd), -1.0});
    out.push_back({at(iq_cmd), at(iq_inj), 1.0});
    out.push_back({at(iq_cmd), at(iq_cmd), -1.0});
}

void ReecaLite::explicit_block(std::size_t block, std::span<const double> w,
                               std::span<double> values) const {
    switch (block) {
    case 0: values[0] = reeca_voltage_dev_eval(get(w, v_filt), v_ref0_); break;
    case 1: values[0] = reeca_iq_injection_eval(get(w, dv), p_); break;
    default: throw InternalError("REECA_LITE: unknown split block");
    }
}

void ReecaLite::initialize(InitContext& ctx) {
    v_ref0_ = p_.v_ref0.value_or(ctx.v);
    const double d = reeca_voltage_dev_eval(ctx.v, v_ref0_);
    const double inj = reeca_iq_injection_eval(d, p_);
    const double ip_c = conv_ != nullptr ? conv_->input_setpoint(RegcaLite::ip_cmd_input) : 0.0;
    const double iq_c = conv_ != nullptr ? conv_->input_setpoint(RegcaLite::iq_cmd_input) : 0.0;
    ip0_ = ip_c;
    iq0_ = iq_c - inj;
    ctx.w[at(v_filt)] = ctx.v;
    ctx.w[at(dv)] = d;
    ctx.w[at(iq_inj)] = inj;
    ctx.w[at(ip_cmd)] = ip_c;
    ctx.w[at(iq_cmd)] = iq_c;
}

}  // namespace tsim
