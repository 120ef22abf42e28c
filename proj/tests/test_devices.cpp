#include <gtest/gtest.h>

#include <numbers>

#include "support.hpp"

using namespace tsim;

namespace {

constexpr double kOmegaBase = 2.0 * std::numbers::pi * 60.0;

GenrouParams machine() {
    GenrouParams p;
    p.D = 1.0;
    p.S10 = 0.05;
    p.S12 = 0.3;
    return p;
}

// Initializes a standalone GENROU at the given terminal conditions.
struct GenrouRig {
    Genrou gen{1, 1, machine(), kOmegaBase};
    test::DeviceHarness dae{gen};

    GenrouRig(double v, double theta, double p, double q) {
        dae.pin(Genrou::var_count, theta);
        dae.pin(Genrou::var_count + 1, v);
        InitContext ctx{dae.w(), v, theta, p, q};
        gen.initialize(ctx);
    }
    double residual_norm() {
        std::vector<double> r(dae.size());
        dae.eval(0.0, dae.w(), r);
        double m = 0.0;
        for (std::size_t i = 0; i < dae.n_vars(); ++i) m = std::max(m, std::abs(r[i]));
        return m;
    }
};

double device_jacobian_mismatch(Device& d, test::DeviceHarness& h, const std::vector<double>& w) {
    TripletList trip;
    h.jacobian(0.0, w, trip);
    const auto analytic = test::to_dense(trip, h.size());
    const auto fd = test::fd_jacobian([&](std::span<const double> x, std::span<double> out) { h.eval(0.0, x, out); }, w);
    (void)d;
    return test::jacobian_mismatch(analytic, fd);
}

}  // namespace

TEST(Projection, ZeroAngle) {
    const DqVoltage p = d_axis_projection(1.0, 0.2, 0.2);
    EXPECT_DOUBLE_EQ(p.v_d, 1.0);
    EXPECT_DOUBLE_EQ(p.v_q, 0.0);
}

TEST(Projection, Quadrature) {
    EXPECT_NEAR(d_axis_projection(1.0, 0.0, std::numbers::pi / 2.0).v_d, 0.0, 1e-15);
}

TEST(Projection, GeneralAngle) {
    EXPECT_NEAR(d_axis_projection(0.95, 0.1, 0.4).v_d, 0.907570, 1e-6);
    EXPECT_NEAR(d_axis_projection(0.95, 0.1, 0.4).v_d, 0.95 * std::cos(0.3), 1e-15);
}

TEST(Stator, ClosedFormSolution) {
    // v_q + x I_d = e_q with x = 0.3, e_q = 1, v_q = 0.95 -> I_d = 1/6
    const auto r = stator_residual(0.0, 0.95, 1.0 / 6.0, 0.0, 0.0, 1.0, 0.0, 0.3, 0.3);
    EXPECT_NEAR(r[0], 0.0, 1e-15);
    EXPECT_NEAR(r[1], 0.0, 1e-15);
}

TEST(Stator, ZeroPointAndLinearity) {
    const auto z = stator_residual(0, 0, 0, 0, 0, 0, 0, 0.3, 0.3);
    EXPECT_EQ(z[0], 0.0);
    EXPECT_EQ(z[1], 0.0);
    const auto a = stator_residual(0.1, 0.9, 0.2, 0.3, 0.1, 1.0, 0.01, 0.3, 0.3);
    const auto b = stator_residual(0.1, 0.9, 0.3, 0.3, 0.1, 1.0, 0.01, 0.3, 0.3);
    EXPECT_NEAR(b[0] - a[0], 0.03, 1e-15);
}

TEST(Flux, PythagoreanMagnitude) {
    FluxCoefficients c;
    c.gamma_d1 = 1.0;
    c.gamma_q1 = 1.0;
    const FluxLinkage f = flux_linkage_eval(0.4, 0.3, 0.0, 0.0, c);
    EXPECT_DOUBLE_EQ(f.psi_ad, 0.3);
    EXPECT_DOUBLE_EQ(f.psi_aq, 0.4);
    EXPECT_DOUBLE_EQ(f.psi_a, 0.5);
}

TEST(Flux, DegenerateQuadratureCoefficient) {
    FluxCoefficients c;
    c.gamma_q1 = 1.0;
    EXPECT_EQ(flux_linkage_eval(0.37, 1.0, 0.0, 0.9, c).psi_aq, 0.37);
    EXPECT_EQ(flux_linkage_eval(0.37, 1.0, 0.0, -2.0, c).psi_aq, 0.37);
}

TEST(Flux, DirectAxisEvaluation) {
    FluxCoefficients c;
    c.gamma_d1 = 0.8;
    c.gamma_d2 = 2.0;
    c.xd_p_minus_xl = 0.2;
    EXPECT_NEAR(flux_linkage_eval(0.0, 1.0, 0.05, 0.0, c).psi_ad, 0.82, 1e-15);
}

TEST(SaturationFit, DisabledWhenZero) {
    for (double psi : {0.0, 0.5, 1.0, 1.5, 3.0}) EXPECT_EQ(saturation(psi, 0.0, 0.0), 0.0);
}

TEST(SaturationFit, MatchesBisectionFit) {
    const double s10 = 0.1, s12 = 0.4;
    // S(1.2) / S(1.0) = (1.2 - A)^2 / (1.2 (1 - A)^2)
    const double a = test::bisect(
        [&](double a) { return (1.2 - a) * (1.2 - a) / (1.2 * (1.0 - a) * (1.0 - a)) - s12 / s10; }, 0.0, 0.999);
    const Saturation sat(s10, s12);
    EXPECT_NEAR(sat.a(), a, 1e-10);
    EXPECT_NEAR(sat.value(1.0), 0.1, 1e-10);
    EXPECT_NEAR(sat.value(1.2), 0.4, 1e-10);
    EXPECT_EQ(sat.value(sat.a()), 0.0);
}

TEST(SaturationFit, DerivativeMatchesDifference) {
    const Saturation sat(0.05, 0.3);
    for (double psi : {0.9, 1.0, 1.1, 1.3}) {
        const double fd = (sat.value(psi + 1e-6) - sat.value(psi - 1e-6)) / 2e-6;
        EXPECT_NEAR(sat.derivative(psi), fd, 1e-7);
    }
}

TEST(GenrouParams, RejectsBadOrdering) {
    GenrouParams p = machine();
    p.x_d_pp = p.x_d_p;
    EXPECT_THROW(p.validate(), ParameterError);
    p = machine();
    p.H = 0.0;
    EXPECT_THROW(p.validate(), ParameterError);
}

TEST(Genrou, UnloadedMachine) {
    GenrouRig rig(1.0, 0.0, 0.0, 0.0);
    const auto& w = rig.dae.w();
    EXPECT_NEAR(w[Genrou::delta], 0.0, 1e-12);
    EXPECT_NEAR(w[Genrou::i_d], 0.0, 1e-12);
    EXPECT_NEAR(w[Genrou::i_q], 0.0, 1e-12);
    EXPECT_LT(rig.residual_norm(), 1e-8);
}

TEST(Genrou, LoadedEquilibrium) {
    GenrouRig rig(1.0, 0.0, 0.5, 0.1);
    EXPECT_LT(rig.residual_norm(), 1e-8);
    EXPECT_NEAR(rig.dae.w()[Genrou::omega], 1.0, 0.0);
}

TEST(Genrou, SwingBalance) {
    GenrouRig rig(1.0, 0.1, 0.5, 0.1);
    auto w = rig.dae.w();
    w[Genrou::omega] = 1.0;
    std::vector<double> r(rig.dae.size());
    rig.dae.eval(0.0, w, r);
    EXPECT_NEAR(r[Genrou::omega], 0.0, 1e-12);
}

TEST(Genrou, FluxRowLinearInTransientEmf) {
    GenrouRig rig(1.0, 0.0, 0.5, 0.1);
    auto w = rig.dae.w();
    std::vector<double> r0(rig.dae.size()), r1(rig.dae.size());
    rig.dae.eval(0.0, w, r0);
    const double eps = 1e-3;
    w[Genrou::e1q] += eps;
    rig.dae.eval(0.0, w, r1);
    EXPECT_NEAR(r1[Genrou::psi_ad] - r0[Genrou::psi_ad], machine().flux_coefficients().gamma_d1 * eps, 1e-15);
}

TEST(Genrou, JacobianMatchesFiniteDifferences) {
    GenrouRig rig(0.98, 0.05, 0.7, 0.2);
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> d(-0.05, 0.05);
    for (int trial = 0; trial < 20; ++trial) {
        auto w = rig.dae.w();
        for (std::size_t i = 0; i < rig.dae.n_vars(); ++i) w[i] += d(rng);
        EXPECT_LT(device_jacobian_mismatch(rig.gen, rig.dae, w), 1e-6) << "trial " << trial;
    }
}

TEST(Genrou, FluxBlockAgreesWithResidual) {
    GenrouRig rig(1.0, 0.0, 0.6, 0.1);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> d(-0.3, 0.3);
    std::vector<double> r(rig.dae.size());
    for (int trial = 0; trial < 1000; ++trial) {
        auto w = rig.dae.w();
        for (std::size_t i = 0; i < rig.dae.n_vars(); ++i) w[i] += d(rng);
        double vals[3];
        rig.gen.explicit_block(0, w, vals);
        w[Genrou::psi_aq] = vals[0];
        w[Genrou::psi_ad] = vals[1];
        w[Genrou::psi_a] = vals[2];
        rig.dae.eval(0.0, w, r);
        EXPECT_LT(std::abs(r[Genrou::psi_aq]), 1e-12);
        EXPECT_LT(std::abs(r[Genrou::psi_ad]), 1e-12);
        EXPECT_LT(std::abs(r[Genrou::psi_a]), 1e-12);
    }
}

TEST(Regca, LvplSegments) {
    RegcaParams p;
    EXPECT_EQ(regca_lvpl_eval(0.95, 0.8, p), 0.8);
    EXPECT_EQ(regca_lvpl_eval(p.brkpt, 0.8, p), 0.8);
    EXPECT_EQ(lvpl_gain(p.zerox, p), 0.0);
    EXPECT_EQ(regca_lvpl_eval(p.zerox, 0.8, p), 0.0);
    EXPECT_NEAR(lvpl_gain(0.5 * (p.zerox + p.brkpt), p), 0.61, 1e-15);
}

TEST(Reeca, InjectionGain) {
    ReecaParams p;
    EXPECT_EQ(reeca_voltage_dev_eval(1.02, 1.02), 0.0);
    EXPECT_EQ(reeca_iq_injection_eval(0.0, p), 0.0);
    EXPECT_NEAR(reeca_iq_injection_eval(-0.1, p), 0.2, 1e-15);
    EXPECT_EQ(reeca_iq_injection_eval(-10.0, p), 1.0);
    EXPECT_EQ(reeca_iq_injection_eval(10.0, p), -1.0);
}

TEST(Regca, BlockAgreesWithResidualAndJacobian) {
    RegcaLite conv(1, 1, RegcaParams{});
    test::DeviceHarness h(conv);
    h.pin(RegcaLite::var_count + 1, 1.0);
    InitContext ctx{h.w(), 1.0, 0.0, 0.5, 0.1};
    conv.initialize(ctx);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> vd(0.2, 1.2), id(-1.0, 1.5);
    std::vector<double> r(h.size());
    for (int trial = 0; trial < 1000; ++trial) {
        auto w = h.w();
        w[RegcaLite::var_count + 1] = vd(rng);
        w[RegcaLite::i_p] = id(rng);
        double out;
        conv.explicit_block(0, w, {&out, 1});
        w[RegcaLite::i_p_out] = out;
        conv.residual(w, r);
        EXPECT_LT(std::abs(r[RegcaLite::i_p_out]), 1e-12);
        w[RegcaLite::i_p_out] = out + 1e-3;
        conv.residual(w, r);
        EXPECT_GT(std::abs(r[RegcaLite::i_p_out]), 1e-6);
    }
    // Away from the breakpoints at v = 0.4 and 0.9.
    for (double v : {0.3, 0.6, 1.05}) {
        auto w = h.w();
        w[RegcaLite::var_count + 1] = v;
        h.pin(RegcaLite::var_count + 1, v);
        EXPECT_LT(device_jacobian_mismatch(conv, h, w), 1e-6) << "v = " << v;
    }
}

TEST(Lag, ReferenceStepFollowsAnalyticResponse) {
    // Governor valve lag with T_1 = 1 s and the speed pinned at nominal:
    // p_g(t) = p0 + 0.05 (1 - exp(-t)).
    TgovParams p;
    p.T_1 = 1.0;
    std::vector<double> errors;
    for (double h : {1.0 / 30.0, 1.0 / 60.0, 1.0 / 120.0}) {
        TgovLite gov(1, 1, p);
        test::DeviceHarness dae(gov, 1);
        dae.pin(TgovLite::var_count + 2, 1.0);
        InitContext ctx{dae.w(), 1.0, 0.0, 0.0, 0.0};
        gov.set_reference(0.4);
        gov.initialize(ctx);
        std::vector<double> r(dae.size());
        dae.eval(0.0, dae.w(), r);
        EXPECT_EQ(r[TgovLite::p_g], 0.0);

        gov.set_reference(0.45);
        SolverConfig cfg;
        cfg.h = h;
        cfg.tol = 1e-12;
        SparseLu lu;
        std::vector<double> z = dae.w(), f(dae.size());
        dae.eval(0.0, z, f);
        const long n = step_count(1.0, h);
        for (long k = 0; k < n; ++k) {
            StepOutcome s = newton_solve_step(dae, k * h, z, f, cfg, true, lu);
            z = s.z;
            f = s.f;
        }
        errors.push_back(std::abs(z[TgovLite::p_g] - (0.4 + 0.05 * (1.0 - std::exp(-1.0)))));
    }
    EXPECT_LT(errors[0], 1e-4);
    EXPECT_NEAR(errors[0] / errors[1], 4.0, 0.2);
    EXPECT_NEAR(errors[1] / errors[2], 4.0, 0.2);
}

TEST(Exciter, ZeroGainHoldsField) {
    ExstParams p;
    p.K_a = 0.0;
    ExstLite exc(1, 1, p);
    test::DeviceHarness dae(exc);
    dae.pin(ExstLite::var_count + 1, 1.0);
    InitContext ctx{dae.w(), 1.0, 0.0, 0.0, 0.0};
    exc.initialize(ctx);
    auto w = dae.w();
    w[ExstLite::var_count + 1] = 0.7;  // deep voltage dip at the terminal
    w[ExstLite::v_m] = 0.7;
    std::vector<double> r(dae.size());
    dae.eval(0.0, w, r);
    EXPECT_EQ(r[ExstLite::e_fd], 0.0);
}
