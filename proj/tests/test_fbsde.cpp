#include <doctest.h>

#include <cmath>

#include "fpp/fbsde.hpp"

using namespace fpp;

namespace {

MarketModel make_model(const ScalarFn& theta, double rho, double gamma = 1.0) {
    MarketModel m;
    m.theta = theta;
    m.drift_l = ScalarFn::linear_mean_revert(1.0);
    m.rho = rho;
    m.gamma = gamma;
    m.theta_bound = std::max(1e-12, theta.bound());
    m.lipschitz_theta = theta.lipschitz();
    m.dissipativity = 1.0;
    return m;
}

std::shared_ptr<ErgodicSolution> ergodic_of(const MarketModel& m, std::size_t nodes = 801) {
    return std::make_shared<ErgodicSolution>(
        solve_ergodic(m, VGrid{-6, 6, nodes}, ErgodicMethod::OdeGrid));
}

const PdeGridSpec kPde{VGrid{-6, 6, 601}, 400};
const McSpec kMc{1000, 1.0 / 250.0, 7};

}  // namespace

TEST_CASE("zero endowment collapses to the no-endowment optimum") {
    auto m = make_model(ScalarFn::tanh_scaled(0.3), 0.5);
    auto erg = ergodic_of(m);
    auto endow = EndowmentSpec::constant(0.0, 1.0);
    auto sol = solve_exponential_primal(m, erg, endow, 0.0, 1.0, kPde, 0.0, 0.2, kMc);
    CHECK(std::fabs(sol.Y0) <= 1e-12);
    for (double y : sol.y.data) CHECK(std::fabs(y) <= 1e-12);
    // pi* = (theta + z1)/gamma and q* = -z2 at several states
    for (double v : {-1.0, 0.0, 2.0}) {
        CHECK(sol.pi_star(0.3, v) ==
              doctest::Approx((m.theta(v) + erg->z1_at(v)) / m.gamma).epsilon(1e-9));
        CHECK(sol.q_star(0.3, v) == doctest::Approx(-erg->z2_at(v)).epsilon(1e-9));
    }
}

TEST_CASE("constant endowment passes through the backward equation") {
    auto m = make_model(ScalarFn::tanh_scaled(0.3), 0.5);
    auto erg = ergodic_of(m);
    auto sol = solve_exponential_primal(m, erg, EndowmentSpec::constant(0.37, 1.0), 0.0, 1.0,
                                        kPde, 0.0, 0.0, kMc);
    for (double y : sol.y.data) CHECK(y == doctest::Approx(0.37).epsilon(1e-12));
    // Z vanishes, so the realized paths carry Y = c and Z = 0
    const PathBlock& pb = sol.paths;
    CHECK(pb.at(pb.Y, 0, 0) == doctest::Approx(0.37));
    CHECK(std::fabs(pb.at(pb.Z1, 0, pb.grid.n_steps / 2)) <= 1e-10);
}

TEST_CASE("entropic closed form at theta = 0, rho = 0") {
    auto m = make_model(ScalarFn::zero(), 0.0, 2.0);
    auto erg = ergodic_of(m);
    auto endow = EndowmentSpec::terminal_factor(ScalarFn::tanh_scaled(0.5), 0.5, 1.0);
    auto sol = solve_exponential_primal(m, erg, endow, 0.0, 1.0,
                                        PdeGridSpec{VGrid{-6, 6, 1201}, 1000}, 0.0, 0.0, kMc);
    // MC oracle of -(1/gamma) ln E[exp(-gamma P)]
    TimeGrid tg{0.0, 1.0 / 500.0, 500};
    PathEnsemble ens(m, tg, 40000, 42, 0.0);
    std::vector<double> e(ens.n_paths());
    PathBuffer buf;
    for (std::size_t p = 0; p < ens.n_paths(); ++p) {
        ens.generate(p, buf);
        e[p] = std::exp(-2.0 * endow.eval_factor(buf.V.back()));
    }
    auto ms = mean_se(e);
    double oracle = -std::log(ms.mean) / 2.0;
    double se = ms.se / (2.0 * ms.mean);
    CHECK(std::fabs(sol.Y0 - oracle) <= 3.0 * se + 1e-3);
}

TEST_CASE("fields do not depend on the initial wealth") {
    auto m = make_model(ScalarFn::tanh_scaled(0.3), 0.5);
    auto erg = ergodic_of(m);
    auto endow = EndowmentSpec::terminal_factor(ScalarFn::tanh_scaled(0.5), 0.5, 1.0);
    auto a = solve_exponential_primal(m, erg, endow, 0.0, 1.0, kPde, 0.0, 0.0, kMc);
    auto b = solve_exponential_primal(m, erg, endow, 0.0, 1.0, kPde, 0.0, 1.0, kMc);
    CHECK(a.y.data == b.y.data);  // bit-identical fields
    CHECK(a.Y0 == b.Y0);
}

TEST_CASE("terminal condition matched pathwise") {
    auto m = make_model(ScalarFn::tanh_scaled(0.3), 0.5);
    auto erg = ergodic_of(m);
    auto endow = EndowmentSpec::terminal_factor(ScalarFn::tanh_scaled(0.5), 0.5, 1.0);
    auto sol = solve_exponential_primal(m, erg, endow, 0.0, 1.0, kPde, 0.0, 0.0, kMc);
    const PathBlock& pb = sol.paths;
    for (std::size_t p = 0; p < pb.n_paths; p += 97) {
        double vT = pb.at(pb.V, p, pb.grid.n_steps);
        CHECK(pb.at(pb.Y, p, pb.grid.n_steps) ==
              doctest::Approx(endow.eval_factor(vT)).epsilon(1e-12));
    }
}

TEST_CASE("payoff clipping at the declared bound is flagged") {
    auto endow = EndowmentSpec::terminal_factor(ScalarFn::tanh_scaled(2.0), 0.5, 1.0);
    CHECK_FALSE(endow.clipping_activated());
    CHECK(endow.eval_factor(5.0) == doctest::Approx(0.5));
    CHECK(endow.clipping_activated());
}

TEST_CASE("z2 stability cap raises a solver error") {
    auto m = make_model(ScalarFn::tanh_scaled(0.3), 0.5);
    auto erg = ergodic_of(m);
    auto endow = EndowmentSpec::terminal_factor(ScalarFn::tanh_scaled(0.5), 0.5, 1.0);
    CHECK_THROWS_AS(solve_exponential_primal(m, erg, endow, 0.0, 1.0, kPde, 0.0, 0.0, kMc,
                                             /*z2_cap=*/1e-4),
                    SolverError);
}

TEST_CASE("regime dispatch refuses mismatched endowments") {
    auto m = make_model(ScalarFn::tanh_scaled(0.3), 0.5);
    auto erg = ergodic_of(m);
    auto path_endow = EndowmentSpec::terminal_path(ScalarFn::tanh_scaled(0.5), 0.5, 1.0);
    CHECK_THROWS_AS(
        solve_exponential_primal(m, erg, path_endow, 0.0, 1.0, kPde, 0.0, 0.0, kMc),
        SolverError);
}

TEST_CASE("dual transform: positivity, eta-hat, round trip") {
    auto m = make_model(ScalarFn::tanh_scaled(0.3), 0.5);
    auto erg = ergodic_of(m);
    auto endow = EndowmentSpec::terminal_factor(ScalarFn::tanh_scaled(0.5), 0.5, 1.0);
    auto primal = solve_exponential_primal(m, erg, endow, 0.0, 1.0, kPde, 0.0, 0.3, kMc);
    ExpForwardProcess U(m.gamma, erg);
    auto pair = ConjugatePair::from_exponential(U);
    auto dual = dual_from_primal(primal, pair);

    CHECK(dual.eta0 == doctest::Approx(U.u_x(0.0, 0.0, 0.3 + primal.Y0)));
    for (double d : dual.paths.X) CHECK(d > 0.0);
    // Y~ = Y carried through
    CHECK(dual.paths.Y == primal.paths.Y);

    auto back = primal_from_dual(dual, pair);
    double worst = 0.0;
    for (std::size_t i = 0; i < back.paths.X.size(); ++i)
        worst = std::max(worst, std::fabs(back.paths.X[i] - primal.paths.X[i]));
    CHECK(worst <= 1e-8);
    CHECK(back.xi == doctest::Approx(primal.xi).epsilon(1e-10));

    // density martingale at MC resolution
    const PathBlock& dp = dual.paths;
    std::vector<double> dT(dp.n_paths);
    for (std::size_t p = 0; p < dp.n_paths; ++p) dT[p] = dp.at(dp.X, p, dp.grid.n_steps);
    auto ms = mean_se(dT);
    CHECK(std::fabs(ms.mean - dual.eta0) <= 4.0 * ms.se);
}

TEST_CASE("constant endowment carries through the dual pair") {
    auto m = make_model(ScalarFn::tanh_scaled(0.3), 0.5);
    auto erg = ergodic_of(m);
    auto primal = solve_exponential_primal(m, erg, EndowmentSpec::constant(0.25, 1.0), 0.0, 1.0,
                                           kPde, 0.0, 0.0, kMc);
    ExpForwardProcess U(m.gamma, erg);
    auto dual = dual_from_primal(primal, ConjugatePair::from_exponential(U));
    for (std::size_t p = 0; p < dual.paths.n_paths; p += 131)
        for (std::size_t k = 0; k <= dual.paths.grid.n_steps; k += 50)
            CHECK(dual.paths.at(dual.paths.Y, p, k) == doctest::Approx(0.25).epsilon(1e-12));
}

TEST_CASE("dual forward Euler defect halves when dt halves") {
    auto m = make_model(ScalarFn::tanh_scaled(0.3), 0.5);
    auto erg = ergodic_of(m);
    auto endow = EndowmentSpec::terminal_factor(ScalarFn::tanh_scaled(0.5), 0.5, 1.0);
    auto resid = dual_residual_order_study(m, erg, endow, 0.0, 1.0, kPde, 0.0, 0.3,
                                           {1.0 / 250.0, 1.0 / 500.0, 1.0 / 1000.0}, 256, 3);
    REQUIRE(resid.size() == 3);
    for (std::size_t i = 0; i + 1 < resid.size(); ++i) {
        double ratio = resid[i] / resid[i + 1];
        CHECK(ratio > 1.5);
        CHECK(ratio < 3.0);
    }
}

TEST_CASE("optimality: perturbations never beat pi*, negative control loses") {
    auto m = make_model(ScalarFn::constant(0.2), 0.5);
    auto erg = ergodic_of(m);
    auto endow = EndowmentSpec::terminal_factor(ScalarFn::tanh_scaled(0.5), 0.5, 1.0);
    auto primal = solve_exponential_primal(m, erg, endow, 0.0, 1.0, kPde, 0.0, 0.3, kMc);
    ExpForwardProcess U(m.gamma, erg);
    auto rep = verify_optimality(primal, U, McSpec{8000, 1.0 / 250.0, 11}, 8);
    CHECK(rep.primal_pass);
    CHECK(rep.dual_pass);
    CHECK(rep.bidual_pass);
    CHECK(rep.negative_control_shortfall_se > 3.0);
    CHECK(rep.primal.size() == 8 * 4);
}

TEST_CASE("zero perturbation gives exactly zero improvement") {
    auto m = make_model(ScalarFn::constant(0.2), 0.5);
    auto erg = ergodic_of(m);
    auto endow = EndowmentSpec::constant(0.0, 1.0);
    auto primal = solve_exponential_primal(m, erg, endow, 0.0, 1.0, kPde, 0.0, 0.0, kMc);
    ExpForwardProcess U(m.gamma, erg);
    auto rep = verify_optimality(primal, U, McSpec{500, 1.0 / 100.0, 5}, 2, {0.0});
    for (const auto& oc : rep.primal) CHECK(oc.improvement == doctest::Approx(0.0));
    for (const auto& oc : rep.dual) CHECK(oc.improvement == doctest::Approx(0.0));
}

TEST_CASE("marginal utility martingale statistic stays within 4") {
    auto m = make_model(ScalarFn::tanh_scaled(0.3), 0.5);
    auto erg = ergodic_of(m);
    auto endow = EndowmentSpec::terminal_factor(ScalarFn::tanh_scaled(0.5), 0.5, 1.0);
    auto primal = solve_exponential_primal(m, erg, endow, 0.0, 1.0, kPde, 0.0, 0.3, kMc);
    ExpForwardProcess U(m.gamma, erg);
    CHECK(verify_marginal_martingale(primal, U, McSpec{20000, 1.0 / 250.0, 13}) <= 4.0);
}

TEST_CASE("self-generation: degenerate at theta = 0, statistical otherwise") {
    auto m0 = make_model(ScalarFn::zero(), 0.0);
    auto erg0 = ergodic_of(m0);
    ExpForwardProcess U0(1.0, erg0);
    TimeGrid tg{0.0, 1.0 / 100.0, 100};
    PathEnsemble ens0(m0, tg, 2000, 3, 0.0);
    auto rep0 = verify_self_generation(U0, 1.0, ens0, 0.0, false, 1);
    CHECK(rep0.statistic <= 1e-9);  // both sides constant

    auto m = make_model(ScalarFn::constant(0.2), 0.0, 1.0);
    auto erg = ergodic_of(m);
    ExpForwardProcess U(1.0, erg);
    PathEnsemble ens(m, TimeGrid{0.0, 1.0 / 250.0, 250}, 30000, 5, 0.0);
    auto rep = verify_self_generation(U, 1.0, ens, 0.0, true, 5);
    CHECK(rep.statistic <= 4.0);
    CHECK(rep.inf_side_margin_se >= -3.0);
}

TEST_CASE("maturity independence: exact at T'=T, statistical beyond") {
    auto m = make_model(ScalarFn::constant(0.2), 0.5);
    auto erg = ergodic_of(m);
    auto endow = EndowmentSpec::constant(0.3, 1.0);
    auto exact = verify_maturity_independence(m, erg, endow, 0.0, 1.0, 1.0, 0.2, 1.0, kPde, 0.0,
                                              McSpec{4000, 1.0 / 250.0, 17});
    CHECK(exact.statistic == doctest::Approx(0.0));
    auto two = verify_maturity_independence(m, erg, endow, 0.0, 1.0, 2.0, 0.2, 1.0, kPde, 0.0,
                                            McSpec{20000, 1.0 / 250.0, 17});
    CHECK(two.statistic <= 3.0);
    CHECK(two.dual_statistic <= 3.0);
    CHECK_THROWS_AS(verify_maturity_independence(m, erg, endow, 0.0, 1.0, 0.5, 0.2, 1.0, kPde,
                                                 0.0, kMc),
                    ConfigError);
}

TEST_CASE("complete market: constant and odd payoffs") {
    MarketModel flat;
    flat.theta = ScalarFn::zero();
    flat.drift_l = ScalarFn::zero();
    flat.rho = 0.0;
    flat.gamma = 1.0;
    flat.theta_bound = 1e-12;
    TimeGrid tg{0.0, 1.0 / 250.0, 250};
    PathEnsemble ens(flat, tg, 20000, 29, 0.0);

    SUBCASE("constant endowment") {
        auto [ps, ds] = solve_complete_market(ScalarFn::zero(),
                                              EndowmentSpec::constant(0.4, 1.0), 0.0, 1.0, ens,
                                              1.0);
        CHECK(ps.Y0 == doctest::Approx(0.4));
        const PathBlock& pb = ps.paths;
        CHECK(pb.at(pb.Y, 3, 100) == doctest::Approx(0.4));
        CHECK(std::fabs(pb.at(pb.Z1, 3, 100)) <= 1e-9);
    }
    SUBCASE("odd payoff has zero value under theta = 0") {
        auto endow = EndowmentSpec::terminal_path(ScalarFn::tanh_scaled(1.0), 1.0, 1.0);
        auto [ps, ds] = solve_complete_market(ScalarFn::zero(), endow, 0.0, 1.0, ens, 1.0);
        CHECK(std::fabs(ps.Y0) <= 1e-6);  // quadrature of an odd function
        CHECK(ps.bsde_residual <= 3.0 * (1.0 / std::sqrt(20000.0)));
    }
}

TEST_CASE("complete market: girsanov-shifted quadrature oracle and dual value") {
    MarketModel flat;
    flat.theta = ScalarFn::constant(0.2);
    flat.drift_l = ScalarFn::zero();
    flat.rho = 0.0;
    flat.gamma = 1.0;
    flat.theta_bound = 0.2;
    TimeGrid tg{0.0, 1.0 / 250.0, 250};
    PathEnsemble ens(flat, tg, 20000, 31, 0.0);
    auto endow = EndowmentSpec::terminal_path(ScalarFn::tanh_scaled(1.0), 1.0, 1.0);
    auto [ps, ds] = solve_complete_market(ScalarFn::constant(0.2), endow, 0.4, 1.2, ens, 1.0);

    std::vector<double> gx, gw;
    gauss_hermite_normal(60, gx, gw);
    double oracle = 0.0;
    for (std::size_t i = 0; i < gx.size(); ++i) oracle += gw[i] * std::tanh(-0.2 + gx[i]);
    CHECK(std::fabs(ps.Y0 - oracle) <= 1e-5);  // lattice interpolation error
    CHECK(ps.bsde_residual <= 3.0 * 1.3 / std::sqrt(20000.0));

    // dual value matches U~(t, eta) + eta Y0, and the initial wealth returns xi
    double gamma = 1.0;
    auto tilde = [&](double t, double z) {
        double zg = z / gamma;
        return -zg + zg * std::log(zg) - zg * ps.cm_g(t);
    };
    const PathBlock& dp = ds.paths;
    std::vector<double> vals(dp.n_paths);
    for (std::size_t p = 0; p < dp.n_paths; ++p) {
        double dT = dp.at(dp.X, p, dp.grid.n_steps);
        vals[p] = tilde(1.0, dT) + dT * dp.at(dp.Y, p, dp.grid.n_steps);
    }
    auto ms = mean_se(vals);
    double closed = tilde(0.0, 1.2) + 1.2 * ps.Y0;
    CHECK(std::fabs(ms.mean - closed) <= 4.0 * ms.se);
    CHECK(ps.paths.at(ps.paths.X, 7, 0) == doctest::Approx(0.4).epsilon(1e-6));
    // q* = 0: dual defect comes only from the Euler increments
    CHECK(ds.residual_mean <= 1e-3);

    // two-dimensional payoff is a regime error
    auto factor_endow = EndowmentSpec::terminal_factor(ScalarFn::tanh_scaled(1.0), 1.0, 1.0);
    CHECK_THROWS_AS(
        solve_complete_market(ScalarFn::constant(0.2), factor_endow, 0.0, 1.0, ens, 1.0),
        SolverError);
}

TEST_CASE("decoupling: zero endowment gives the zero field") {
    auto m = make_model(ScalarFn::tanh_scaled(0.3), 0.5);
    auto erg = ergodic_of(m);
    auto ts = linspace(0.0, 0.25, 3);
    auto vs = linspace(-3.0, 3.0, 9);
    auto xs = linspace(-3.0, 3.0, 9);
    auto field = MarkovianForwardField::exponential_embedded(1.0, erg, ts, vs, xs);
    DecouplingGridSpec g;
    g.v = VGrid{-4, 4, 41};
    g.nx = 21;
    g.nt = 25;
    auto sol = solve_decoupling_field(field, m, EndowmentSpec::constant(0.0, 0.25), 0.25, g, 0.0,
                                      0.0, McSpec{64, 1.0 / 100.0, 3});
    for (double w : sol.w.data) CHECK(std::fabs(w) <= 1e-12);
    CHECK(sol.w_x_sup <= 1e-12);
    CHECK(sol.field_case == 1);
}

TEST_CASE("decoupling cross-check against the decoupled exponential solve") {
    auto m = make_model(ScalarFn::tanh_scaled(0.3), 0.5);
    auto erg = ergodic_of(m, 1201);
    auto ts = linspace(0.0, 0.25, 3);
    auto vs = linspace(-4.0, 4.0, 17);
    auto xs = linspace(-4.0, 4.0, 9);
    auto field = MarkovianForwardField::exponential_embedded(1.0, erg, ts, vs, xs);
    auto endow = EndowmentSpec::terminal_vx(PayoffVX::tanh_vx(0.3, 0.0), 0.31, 0.25);
    DecouplingGridSpec g;
    g.v = VGrid{-4, 4, 81};
    g.nx = 41;
    g.nt = 100;
    auto sol = solve_decoupling_field(field, m, endow, 0.25, g, 0.0, 0.0,
                                      McSpec{128, 1.0 / 250.0, 3});
    CHECK(sol.w_x_sup < 1.0);

    auto ref_endow = EndowmentSpec::terminal_factor(ScalarFn::tanh_scaled(0.3), 0.31, 0.25);
    auto ref = solve_exponential_primal(m, erg, ref_endow, 0.0, 0.25,
                                        PdeGridSpec{VGrid{-6, 6, 1201}, 250}, 0.0, 0.0, kMc);
    double worst = 0.0;
    for (double v : linspace(-2.5, 2.5, 11))
        for (double x : {-1.0, 0.0, 1.0})
            worst = std::max(worst, std::fabs(sol.w.at(0.0, v, x) - ref.y_at(0.0, v)));
    CHECK(worst <= 1e-3);
}

TEST_CASE("decoupling case-2 gate accepts short horizons and rejects long ones") {
    auto m = make_model(ScalarFn::zero(), 0.5);
    auto ts = linspace(0.0, 0.25, 3);
    auto vs = linspace(-3.0, 3.0, 9);
    auto xs = linspace(-4.0, 4.0, 9);
    auto field = MarkovianForwardField::shifted_concave(1.0, 0.5, 2.0, ts, vs, xs);
    auto bounds = field.measure_bounds(0.5);
    CHECK(bounds.phi2_x_abs_max > 1e-6);
    CHECK(bounds.phi1_x_max < 0.0);
    double t_max = std::log(2.0 / 1.5) / bounds.K;

    auto endow = EndowmentSpec::terminal_vx(PayoffVX::tanh_vx(0.3, 0.5), 0.81, 0.25);
    DecouplingGridSpec g;
    g.v = VGrid{-4, 4, 41};
    g.nx = 41;
    g.nt = 50;
    auto sol = solve_decoupling_field(field, m, endow, 0.5 * t_max, g, 0.0, 0.0,
                                      McSpec{64, 1.0 / 100.0, 3});
    CHECK(sol.field_case == 2);
    CHECK(sol.w_x_sup < 1.0);
    CHECK(sol.horizon_bound == doctest::Approx(t_max));

    CHECK_THROWS_AS(solve_decoupling_field(field, m, endow, t_max * 1.05, g, 0.0, 0.0,
                                           McSpec{64, 1.0 / 100.0, 3}),
                    SolverError);
}

TEST_CASE("decoupling rejects endowments with Lipschitz constant >= 1") {
    auto m = make_model(ScalarFn::zero(), 0.5);
    auto ts = linspace(0.0, 0.25, 3);
    auto vs = linspace(-3.0, 3.0, 9);
    auto xs = linspace(-4.0, 4.0, 9);
    auto field = MarkovianForwardField::shifted_concave(1.0, 0.5, 2.0, ts, vs, xs);
    auto endow = EndowmentSpec::terminal_vx(PayoffVX::tanh_vx(0.1, 1.2), 1.4, 0.1);
    DecouplingGridSpec g;
    g.v = VGrid{-4, 4, 41};
    g.nx = 41;
    g.nt = 20;
    CHECK_THROWS_AS(
        solve_decoupling_field(field, m, endow, 0.1, g, 0.0, 0.0, McSpec{64, 0.01, 3}),
        SolverError);
}

TEST_CASE("pde convergence: first order in time, second order in space") {
    auto m = make_model(ScalarFn::tanh_scaled(0.3), 0.5);
    auto erg = ergodic_of(m, 1201);
    auto endow = EndowmentSpec::terminal_factor(ScalarFn::tanh_scaled(0.5), 0.5, 1.0);
    McSpec mc{2, 1.0 / 250.0, 7};

    std::vector<double> y_t;
    for (std::size_t nt : {50, 100, 200})
        y_t.push_back(solve_exponential_primal(m, erg, endow, 0, 1,
                                               PdeGridSpec{VGrid{-6, 6, 1201}, nt}, 0, 0, mc)
                          .Y0);
    double rt = (y_t[0] - y_t[1]) / (y_t[1] - y_t[2]);
    CHECK(rt > 1.7);
    CHECK(rt < 2.4);

    std::vector<double> y_v;
    for (std::size_t nv : {151, 301, 601})
        y_v.push_back(solve_exponential_primal(m, erg, endow, 0, 1,
                                               PdeGridSpec{VGrid{-6, 6, nv}, 1000}, 0, 0, mc)
                          .Y0);
    double rv = (y_v[0] - y_v[1]) / (y_v[1] - y_v[2]);
    CHECK(rv > 3.2);
    CHECK(rv < 5.0);
}
