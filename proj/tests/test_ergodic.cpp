#include <doctest.h>

#include <cmath>
#include <fstream>

#include "fpp/ergodic.hpp"

using namespace fpp;

namespace {

MarketModel tanh_model(double scale = 0.3, double rho = 0.5) {
    MarketModel m;
    m.theta = ScalarFn::tanh_scaled(scale);
    m.drift_l = ScalarFn::linear_mean_revert(1.0);
    m.rho = rho;
    m.gamma = 1.0;
    m.theta_bound = scale;
    m.lipschitz_theta = scale;
    m.dissipativity = 1.0;
    return m;
}

MarketModel const_model(double theta0, double rho = 0.0) {
    MarketModel m = tanh_model(0.3, rho);
    m.theta = theta0 == 0.0 ? ScalarFn::zero() : ScalarFn::constant(theta0);
    m.theta_bound = std::max(1e-12, std::fabs(theta0));
    return m;
}

}  // namespace

TEST_CASE("zero market price of risk gives the zero solution") {
    auto sol = solve_ergodic(const_model(0.0), VGrid{-6, 6, 401}, ErgodicMethod::OdeGrid);
    CHECK(std::fabs(sol.lambda) <= 1e-12);
    for (double y : sol.y) CHECK(std::fabs(y) <= 1e-10);
    for (double z : sol.z1) CHECK(std::fabs(z) <= 1e-10);
}

TEST_CASE("constant theta forces the flat candidate") {
    // y = 0, z = 0, lambda = -theta0^2 / 2
    auto sol = solve_ergodic(const_model(0.2, 0.5), VGrid{-6, 6, 1201}, ErgodicMethod::OdeGrid);
    CHECK(std::fabs(sol.lambda + 0.02) <= 1e-10);
    for (double y : sol.y) CHECK(std::fabs(y) <= 1e-8);
    for (double z : sol.z2) CHECK(std::fabs(z) <= 1e-8);
    CHECK(sol.residual <= 1e-10);
}

TEST_CASE("tanh theta: structure, growth, z relation") {
    auto model = tanh_model();
    auto sol = solve_ergodic(model, VGrid{-6, 6, 1201}, ErgodicMethod::OdeGrid);
    CHECK(sol.lambda < 0.0);
    CHECK(sol.linear_growth_ratio() < 10.0);
    CHECK(sol.z_sup() < 10.0);
    // z1 = rho y', z2 = sqrt(1-rho^2) y' on the grid
    double h = sol.grid.spacing();
    for (std::size_t i = 10; i + 10 < sol.grid.n; i += 50) {
        double dy = (sol.y[i + 1] - sol.y[i - 1]) / (2.0 * h);
        CHECK(sol.z1[i] == doctest::Approx(0.5 * dy).epsilon(1e-6));
        CHECK(sol.z2[i] == doctest::Approx(std::sqrt(0.75) * dy).epsilon(1e-6));
    }
    CHECK(std::fabs(sol.y_at(sol.v0)) <= 1e-12);
}

TEST_CASE("independent residual drops about 4x under grid halving") {
    auto model = tanh_model();
    auto coarse = solve_ergodic(model, VGrid{-6, 6, 301}, ErgodicMethod::OdeGrid);
    auto fine = solve_ergodic(model, VGrid{-6, 6, 601}, ErgodicMethod::OdeGrid);
    double ratio = coarse.residual / fine.residual;
    CHECK(ratio > 2.0);
    CHECK(ratio < 8.0);
}

TEST_CASE("perturbing lambda shifts the residual by exactly delta") {
    auto model = tanh_model();
    auto sol = solve_ergodic(model, VGrid{-6, 6, 601}, ErgodicMethod::OdeGrid);
    double base = ergodic_residual(sol, model);
    ErgodicSolution bumped = sol;
    bumped.lambda += 0.1;
    double shifted = ergodic_residual(bumped, model);
    CHECK(shifted == doctest::Approx(base + 0.1).epsilon(1e-6));
}

TEST_CASE("uniqueness: different newton starts agree") {
    auto model = tanh_model();
    VGrid g{-6, 6, 601};
    auto a = solve_ergodic(model, g, ErgodicMethod::OdeGrid);
    ErgodicOptions opts;
    opts.has_initial_guess = true;
    opts.newton_y0.assign(g.n, 0.0);
    for (std::size_t i = 0; i < g.n; ++i)
        opts.newton_y0[i] = 0.3 * std::sin(0.5 * g.node(i));
    opts.newton_lambda0 = -0.5;
    auto b = solve_ergodic(model, g, ErgodicMethod::OdeGrid, opts);
    CHECK(std::fabs(a.lambda - b.lambda) <= 1e-9);
    for (std::size_t i = 0; i < g.n; i += 40)
        CHECK(std::fabs(a.y[i] - b.y[i]) <= 1e-8);
}

TEST_CASE("lambda is insensitive to enlarging the domain by 50%") {
    auto model = tanh_model();
    auto a = solve_ergodic(model, VGrid{-6, 6, 601}, ErgodicMethod::OdeGrid);
    auto b = solve_ergodic(model, VGrid{-9, 9, 901}, ErgodicMethod::OdeGrid);
    CHECK(std::fabs(a.lambda - b.lambda) <= 1e-6);
}

TEST_CASE("vanishing-discount cross-method agreement on the flat case") {
    auto model = const_model(0.2, 0.5);
    ErgodicOptions opts;
    opts.seed = 7;
    auto vd = solve_ergodic(model, VGrid{-6, 6, 601}, ErgodicMethod::VanishingDiscountMc, opts);
    CHECK(std::fabs(vd.lambda + 0.02) <= 2e-3);
}

TEST_CASE("csv export carries the lambda header") {
    auto sol = solve_ergodic(const_model(0.2), VGrid{-6, 6, 401}, ErgodicMethod::OdeGrid);
    std::string path = "/tmp/fpp_ergodic_test.csv";
    sol.export_csv(path);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line.rfind("lambda=", 0) == 0);
    std::getline(in, line);
    CHECK(line == "v,y,z1,z2");
}

TEST_CASE("long run check passes on the flat case") {
    auto model = const_model(0.2, 0.0);
    auto sol = solve_ergodic(model, VGrid{-6, 6, 601}, ErgodicMethod::OdeGrid);
    TimeGrid tg{0.0, 1.0 / 250.0, 250};
    PathEnsemble ens(model, tg, 50000, 13, 0.0);
    CHECK(long_run_check(sol, model, ens, 0.4) <= 4.0);
}

TEST_CASE("cache round trip") {
    auto model = tanh_model();
    VGrid g{-6, 6, 401};
    auto sol = solve_ergodic(model, g, ErgodicMethod::OdeGrid);
    std::string path = "/tmp/fpp_ergodic_cache.bin";
    sol.save_cache(path, model);
    ErgodicSolution loaded;
    CHECK(ErgodicSolution::load_cache(path, model, g, loaded));
    CHECK(loaded.lambda == doctest::Approx(sol.lambda).epsilon(1e-15));
    CHECK(loaded.y_at(1.3) == doctest::Approx(sol.y_at(1.3)).epsilon(1e-12));
}
