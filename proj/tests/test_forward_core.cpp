#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>

#include "fpp/forward_core.hpp"

using namespace fpp;

namespace {

std::shared_ptr<ErgodicSolution> flat_ergodic(double lambda = 0.0) {
    auto e = std::make_shared<ErgodicSolution>();
    e->grid = VGrid{-6, 6, 121};
    e->y.assign(121, 0.0);
    e->z1.assign(121, 0.0);
    e->z2.assign(121, 0.0);
    e->lambda = lambda;
    e->v0 = 0.0;
    e->method = "ode-grid";
    return e;
}

MarketModel tanh_model() {
    MarketModel m;
    m.theta = ScalarFn::tanh_scaled(0.3);
    m.drift_l = ScalarFn::linear_mean_revert(1.0);
    m.rho = 0.5;
    m.gamma = 1.0;
    m.theta_bound = 0.3;
    m.dissipativity = 1.0;
    return m;
}

}  // namespace

TEST_CASE("exponential forward values at reference points") {
    ExpForwardProcess u1(1.0, flat_ergodic());
    CHECK(u1.value(0.0, 0.0, 0.0) == doctest::Approx(-1.0));
    ExpForwardProcess u2(2.0, flat_ergodic());
    CHECK(u2.value(0.0, 0.0, 0.5) == doctest::Approx(-std::exp(-1.0)));
    // lambda = -theta0^2/2 = -0.02 at t = 1, x = 0 -> -e^{0.02}
    ExpForwardProcess u3(1.0, flat_ergodic(-0.02));
    CHECK(u3.value(1.0, 0.0, 0.0) == doctest::Approx(-std::exp(0.02)).epsilon(1e-12));
}

TEST_CASE("risk tolerance is 1/gamma everywhere") {
    ExpForwardProcess u(2.5, flat_ergodic(-0.01));
    for (double x : {-1.0, 0.0, 1.7})
        CHECK(-u.u_x(0.3, 0.1, x) / u.u_xx(0.3, 0.1, x) == doctest::Approx(1.0 / 2.5));
}

TEST_CASE("conjugate closed form and numeric sup agree") {
    ExpForwardProcess u(1.0, flat_ergodic());
    CHECK(u.conjugate(0.0, 0.0, 1.0) == doctest::Approx(-1.0));
    auto slice = [&](double x) { return u.value(0.0, 0.0, x); };
    auto slice_dx = [&](double x) { return u.u_x(0.0, 0.0, x); };
    auto fr = fenchel_conjugate_numeric(slice, 1.0, -50.0, 50.0, slice_dx);
    CHECK(std::fabs(fr.value - u.conjugate(0.0, 0.0, 1.0)) <= 1e-8);
    CHECK_THROWS_AS(u.conjugate(0.0, 0.0, -1.0), std::domain_error);
    CHECK_THROWS_AS(u.conjugate(0.0, 0.0, 0.0), std::domain_error);
}

TEST_CASE("inverse marginal identity at x = 0.3") {
    ExpForwardProcess u(1.3, flat_ergodic(-0.005));
    double x = 0.3, t = 0.7, v = 0.4;
    double z = u.u_x(t, v, x);
    CHECK(std::fabs(-u.conjugate_z(t, v, z) - x) <= 1e-10);
}

TEST_CASE("fenchel numeric on reference functions") {
    auto f1 = fenchel_conjugate_numeric([](double x) { return -std::exp(-x); }, 1.0, -50, 50,
                                        [](double x) { return std::exp(-x); });
    CHECK(f1.value == doctest::Approx(-1.0).epsilon(1e-10));
    CHECK(std::fabs(f1.x_star) <= 1e-7);

    auto f2 = fenchel_conjugate_numeric([](double x) { return -0.5 * x * x; }, 0.0, -50, 50,
                                        [](double x) { return -x; });
    CHECK(std::fabs(f2.value) <= 1e-12);

    auto f3 = fenchel_conjugate_numeric([](double x) { return -std::exp(-2 * x); }, 2.0, -50, 50,
                                        [](double x) { return 2 * std::exp(-2 * x); });
    CHECK(f3.value == doctest::Approx(-1.0).epsilon(1e-10));
}

TEST_CASE("fenchel box doubles on boundary hits; non-concave slices rejected") {
    // maximizer of -e^{-x} - xz at z = e^{-30} sits at x = 30
    auto res = fenchel_conjugate_numeric([](double x) { return -std::exp(-x); }, std::exp(-30.0),
                                         -1.0, 1.0);
    CHECK(res.doublings > 0);
    CHECK(res.x_star == doctest::Approx(30.0).epsilon(1e-4));
    CHECK_THROWS_AS(
        fenchel_conjugate_numeric([](double x) { return x * x; }, 1.0, -2.0, 2.0),
        SolverError);
}

TEST_CASE("bidual recovers the primal value") {
    auto erg = flat_ergodic(-0.02);
    ExpForwardProcess u(1.0, erg);
    double t = 0.5, v = 0.2;
    for (double x : {-0.5, 0.0, 0.8}) {
        double direct = u.value(t, v, x);
        double z_center = u.u_x(t, v, x);
        double rec = bidual_numeric([&](double z) { return u.conjugate(t, v, z); }, x,
                                    z_center * 1e-3, z_center * 1e3);
        CHECK(std::fabs(rec - direct) <= 1e-6);
    }
}

TEST_CASE("conjugate consistency on a 20-point z grid") {
    ExpForwardProcess u(1.0, flat_ergodic(-0.02));
    double t = 0.4, v = -0.3;
    auto slice = [&](double x) { return u.value(t, v, x); };
    auto slice_dx = [&](double x) { return u.u_x(t, v, x); };
    for (std::size_t i = 0; i < 20; ++i) {
        double z = 0.2 + 0.15 * static_cast<double>(i);
        auto fr = fenchel_conjugate_numeric(slice, z, -50, 50, slice_dx);
        CHECK(std::fabs(fr.value - u.conjugate(t, v, z)) <= 1e-6);
    }
}

TEST_CASE("all dual relations hold for the exponential pair") {
    auto model = tanh_model();
    auto erg = std::make_shared<ErgodicSolution>(
        solve_ergodic(model, VGrid{-6, 6, 601}, ErgodicMethod::OdeGrid));
    ExpForwardProcess u(1.0, erg);
    auto pair = ConjugatePair::from_exponential(u);
    std::vector<std::array<double, 3>> pts;
    for (double t : {0.0, 0.5, 1.0})
        for (double v : {-1.0, 0.0, 1.5})
            for (double x : {-0.7, 0.0, 0.9}) pts.push_back({t, v, x});
    auto rep = dual_relation_residuals(pair, pts);
    CHECK(rep.max_abs() <= 1e-8);
}

TEST_CASE("additive heat family: exact HJB and analytic dr5 check") {
    auto ts = linspace(0.0, 1.0, 5);
    auto vs = linspace(-3.0, 3.0, 13);
    auto xs = linspace(-3.0, 3.0, 13);
    auto f = MarkovianForwardField::additive_heat(0.5, 0.2, 0.4, ts, vs, xs);
    CHECK(f.hjb_exact);
    CHECK(f.hjb_residual(ScalarFn::zero(), ScalarFn::zero(), 0.3) <= 1e-12);

    auto pair = f.conjugate_pair(40.0);
    double t = 0.5, v = 0.5, x = 0.4;
    double z = f.u_x(t, v, x);
    // tilde_zz(u_x(x)) = -1/u_xx(x) with u_xx = -e^{-x} known analytically
    double analytic = -1.0 / (-std::exp(-x));
    CHECK(std::fabs(pair.tilde_zz(t, v, z) - analytic) <= 1e-6);

    std::vector<std::array<double, 3>> pts = {{0.5, 0.5, 0.4}, {0.2, -1.0, 0.0}};
    auto rep = dual_relation_residuals(pair, pts);
    CHECK(rep.dr1_primal <= 1e-7);
    CHECK(rep.dr0_primal <= 1e-9);
    CHECK(rep.dr5_primal <= 1e-6);
}

TEST_CASE("exponential embedded field satisfies the forward HJB on the grid") {
    auto model = tanh_model();
    auto erg = std::make_shared<ErgodicSolution>(
        solve_ergodic(model, VGrid{-6, 6, 1201}, ErgodicMethod::OdeGrid));
    auto ts = linspace(0.0, 1.0, 4);
    auto vs = linspace(-2.0, 2.0, 9);
    auto xs = linspace(-1.0, 1.0, 5);
    auto f = MarkovianForwardField::exponential_embedded(1.0, erg, ts, vs, xs);
    CHECK(f.hjb_exact);
    // residual inherits the ergodic-equation defect scale
    CHECK(f.hjb_residual(model.theta, model.drift_l, model.rho) <= 1e-4);

    auto b = f.measure_bounds(model.rho);
    CHECK(b.C_l == doctest::Approx(1.0).epsilon(1e-9));  // C_l = C_u = 1/gamma
    CHECK(b.C_u == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(b.phi2_x_abs_max <= 1e-12);
}

TEST_CASE("monotonicity or concavity violations are hard failures") {
    auto ts = linspace(0.0, 1.0, 3);
    auto vs = linspace(-1.0, 1.0, 5);
    auto xs = linspace(-1.0, 1.0, 5);
    auto f = MarkovianForwardField::additive_heat(0.5, 0.0, 0.3, ts, vs, xs);
    f.u_x = [](double, double, double) { return -1.0; };  // break monotonicity
    CHECK_THROWS_AS(f.measure_bounds(0.0), InvariantError);
}

TEST_CASE("csv field round trip reproduces values and derivatives") {
    auto ts = linspace(0.0, 1.0, 6);
    auto dump = [&](std::size_t n, const std::string& path) {
        auto f = MarkovianForwardField::additive_heat(0.5, 0.2, 0.4, ts, linspace(-2, 2, n),
                                                      linspace(-2, 2, n));
        std::ofstream out(path);
        out << "t,v,x,u\n";
        char line[160];
        for (double t : ts)
            for (double v : linspace(-2, 2, n))
                for (double x : linspace(-2, 2, n)) {
                    std::snprintf(line, sizeof line, "%.12g,%.12g,%.12g,%.17g\n", t, v, x,
                                  f.u(t, v, x));
                    out << line;
                }
        return f;
    };
    auto f = dump(41, "/tmp/fpp_field_dump.csv");
    auto g = MarkovianForwardField::from_csv("/tmp/fpp_field_dump.csv");
    CHECK(g.grid_t.size() == 6);
    CHECK(g.grid_v.size() == 41);
    CHECK(g.grid_x.size() == 41);
    double t = 0.55, v = 0.33, x = -0.21;
    CHECK(std::fabs(g.u(t, v, x) - f.u(t, v, x)) <= 2e-3);
    CHECK(std::fabs(g.u_x(t, v, x) - f.u_x(t, v, x)) <= 2e-2);
    CHECK(std::fabs(g.u_xx(t, v, x) - f.u_xx(t, v, x)) <= 5e-2);

    // curvature error drops about 4x under grid halving (second order)
    auto err_at = [&](std::size_t n) {
        std::string p = "/tmp/fpp_field_dump_n.csv";
        auto base = dump(n, p);
        auto h = MarkovianForwardField::from_csv(p);
        double worst = 0.0;
        for (double vv : {-0.513, 0.513})
            for (double xx : {-0.487, 0.487})
                worst = std::max(worst, std::fabs(h.u_xx(0.4, vv, xx) - base.u_xx(0.4, vv, xx)));
        return worst;
    };
    double coarse = err_at(21);
    double fine = err_at(41);
    CHECK(coarse / fine > 2.0);
    CHECK(coarse / fine < 12.0);
}

TEST_CASE("out-of-grid evaluation flags extrapolation") {
    ExpForwardProcess u(1.0, flat_ergodic());
    CHECK_FALSE(u.extrapolated());
    (void)u.value(0.0, 100.0, 0.0);
    CHECK(u.extrapolated());
}
