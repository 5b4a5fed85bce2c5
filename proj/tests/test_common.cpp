#include <doctest.h>

#include <cmath>
#include <random>

#include "fpp/common.hpp"

using namespace fpp;

TEST_CASE("pairwise sum matches long double accumulation") {
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<double> v(100001);
    long double acc = 0.0L;
    for (auto& x : v) {
        x = u(rng);
        acc += x;
    }
    CHECK(pairwise_sum(v) == doctest::Approx(static_cast<double>(acc)).epsilon(1e-12));
}

TEST_CASE("mean_se on a known sample") {
    std::vector<double> v = {1.0, 2.0, 3.0, 4.0};
    auto ms = mean_se(v);
    CHECK(ms.mean == doctest::Approx(2.5));
    CHECK(ms.sd == doctest::Approx(std::sqrt(5.0 / 3.0)));
    CHECK(ms.se == doctest::Approx(std::sqrt(5.0 / 3.0) / 2.0));
}

TEST_CASE("t statistic degenerates to |mean| at zero variance") {
    std::vector<double> v(8, 0.25);
    CHECK(t_statistic(mean_se(v)) == doctest::Approx(0.25));
}

TEST_CASE("golden section maximizes a parabola") {
    auto g = golden_section_max([](double x) { return -(x - 0.7) * (x - 0.7); }, -4.0, 4.0, 1e-12);
    CHECK(g.x == doctest::Approx(0.7).epsilon(1e-6));
    CHECK_FALSE(g.boundary);
}

TEST_CASE("tridiagonal solver on a known system") {
    // [2 1 0; 1 2 1; 0 1 2] x = [4; 8; 8] -> x = [1, 2, 3]
    std::vector<double> lo = {0, 1, 1}, di = {2, 2, 2}, up = {1, 1, 0}, rhs = {4, 8, 8};
    solve_tridiagonal(lo, di, up, rhs);
    CHECK(rhs[0] == doctest::Approx(1.0));
    CHECK(rhs[1] == doctest::Approx(2.0));
    CHECK(rhs[2] == doctest::Approx(3.0));
}

TEST_CASE("linear interpolation extends linearly beyond the grid") {
    std::vector<double> y = {0.0, 1.0, 2.0};
    CHECK(lerp_uniform(y, 0.0, 1.0, 0.5) == doctest::Approx(0.5));
    CHECK(lerp_uniform(y, 0.0, 1.0, -1.0) == doctest::Approx(-1.0));
    CHECK(lerp_uniform(y, 0.0, 1.0, 3.5) == doctest::Approx(3.5));
}

TEST_CASE("gauss-hermite integrates normal moments") {
    std::vector<double> x, w;
    gauss_hermite_normal(20, x, w);
    double m0 = 0, m2 = 0, m4 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        m0 += w[i];
        m2 += w[i] * x[i] * x[i];
        m4 += w[i] * x[i] * x[i] * x[i] * x[i];
    }
    CHECK(m0 == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m2 == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(m4 == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("parallel_for propagates worker exceptions") {
    CHECK_THROWS_AS(parallel_for(
                        64,
                        [](std::size_t lo, std::size_t) {
                            if (lo >= 0) throw SolverError("boom");
                        },
                        4),
                    SolverError);
}

TEST_CASE("parallel_for output independent of thread count") {
    std::vector<double> a(1000), b(1000);
    auto fill = [](std::vector<double>& out) {
        return [&out](std::size_t lo, std::size_t hi) {
            for (std::size_t i = lo; i < hi; ++i) out[i] = std::sin(0.1 * static_cast<double>(i));
        };
    };
    parallel_for(1000, fill(a), 1);
    parallel_for(1000, fill(b), 7);
    CHECK(a == b);
}
