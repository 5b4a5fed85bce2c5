#ifndef FPP_ERGODIC_HPP
#define FPP_ERGODIC_HPP

#include <string>
#include <vector>

#include "fpp/common.hpp"
#include "fpp/market.hpp"

namespace fpp {

struct VGrid {
    double lo = -6.0;
    double hi = 6.0;
    std::size_t n = 1201;

    double spacing() const { return (hi - lo) / static_cast<double>(n - 1); }
    double node(std::size_t i) const { return lo + spacing() * static_cast<double>(i); }
    std::size_t mid_index() const { return (n - 1) / 2; }
    void validate() const;
};

enum class ErgodicMethod { OdeGrid, VanishingDiscountMc };

// Markovian solution of the ergodic equation behind the exponential forward
// process: grid functions y (normalized to y(v0) = 0), z1 = rho y',
// z2 = sqrt(1-rho^2) y', and the long-run constant lambda.
struct ErgodicSolution {
    VGrid grid;
    std::vector<double> y;
    std::vector<double> z1;
    std::vector<double> z2;
    double lambda = 0.0;
    double v0 = 0.0;          // normalization point
    std::string method;
    double residual = 0.0;    // independent drift-matching residual (see ergodic_residual)

    double y_at(double v) const;
    double z1_at(double v) const;
    double z2_at(double v) const;
    double dy_at(double v) const;  // y' with linear extension outside the grid

    // max |y| / (1 + |v|) on the grid (linear-growth certificate)
    double linear_growth_ratio() const;
    double z_sup() const;

    void export_csv(const std::string& path) const;
    std::uint64_t content_hash(const MarketModel& model) const;
    void save_cache(const std::string& path, const MarketModel& model) const;
    static bool load_cache(const std::string& path, const MarketModel& model, const VGrid& grid,
                           ErgodicSolution& out);
};

struct ErgodicOptions {
    double tol = 1e-10;               // Newton convergence on the scheme residual
    double residual_tol = 1e-3;       // acceptance bound for the independent residual
    std::size_t max_newton = 60;
    // vanishing-discount schedule and its Monte-Carlo step controls
    std::vector<double> discounts = {0.1, 0.05, 0.025};
    double vd_dt = 0.02;
    double vd_horizon_factor = 12.0;  // horizon = factor / discount
    std::size_t vd_samples = 64;      // antithetic pairs per step
    std::size_t vd_nodes = 241;
    std::uint64_t seed = 1;
    std::vector<double> newton_y0;    // optional initial guess (for uniqueness tests)
    double newton_lambda0 = 0.0;
    bool has_initial_guess = false;
};

// Solves the ergodic equation. OdeGrid: damped Newton on the stationary
// drift-matching scheme with linear-growth (zero curvature) boundary rows
// and the extra unknown lambda closed by y(v0)=0. VanishingDiscountMc:
// discounted finite-horizon backward recursion with per-step Monte-Carlo
// one-step expectations, lambda = Richardson limit of rho_d y^{rho_d}(v0).
ErgodicSolution solve_ergodic(const MarketModel& model, const VGrid& grid, ErgodicMethod method,
                              const ErgodicOptions& opts = {});

// Drift-matching defect evaluated with fourth-order central differences at
// interior nodes, so the second-order scheme's truncation error is visible:
// max_i |Ito-drift(y) - driver(theta, z1, z2, lambda)|.
double ergodic_residual(const ErgodicSolution& sol, const MarketModel& model);

// Monte-Carlo self-generation check at zero endowment: simulate the optimal
// wealth with pi* = (theta + z1)/gamma and report
// |E[U(T, X*_T)] - U(t0, x0)| / SE for U(t,x) = -exp(-gamma x + y(V_t) - lambda t).
double long_run_check(const ErgodicSolution& sol, const MarketModel& model,
                      const PathEnsemble& ensemble, double x0);

}  // namespace fpp

#endif
