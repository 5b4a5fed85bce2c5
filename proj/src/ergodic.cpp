#include "fpp/ergodic.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>

namespace fpp {

void VGrid::validate() const {
    if (!(hi > lo)) throw ConfigError("v-grid: hi must exceed lo");
    if (n < 5) throw ConfigError("v-grid: need at least 5 nodes");
}

double ErgodicSolution::y_at(double v) const { return lerp_uniform(y, grid.lo, grid.spacing(), v); }
double ErgodicSolution::z1_at(double v) const { return lerp_uniform(z1, grid.lo, grid.spacing(), v); }
double ErgodicSolution::z2_at(double v) const { return lerp_uniform(z2, grid.lo, grid.spacing(), v); }

double ErgodicSolution::dy_at(double v) const {
    double h = grid.spacing();
    double vc = std::clamp(v, grid.lo + h, grid.hi - h);
    return (y_at(vc + h) - y_at(vc - h)) / (2.0 * h);
}

double ErgodicSolution::linear_growth_ratio() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i)
        worst = std::max(worst, std::fabs(y[i]) / (1.0 + std::fabs(grid.node(i))));
    return worst;
}

double ErgodicSolution::z_sup() const {
    double worst = 0.0;
    for (std::size_t i = 0; i < z1.size(); ++i)
        worst = std::max({worst, std::fabs(z1[i]), std::fabs(z2[i])});
    return worst;
}

void ErgodicSolution::export_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw SolverError("cannot open for writing: " + path);
    char line[160];
    std::snprintf(line, sizeof line, "lambda=%.17g\n", lambda);
    out << line << "v,y,z1,z2\n";
    for (std::size_t i = 0; i < y.size(); ++i) {
        std::snprintf(line, sizeof line, "%.17g,%.17g,%.17g,%.17g\n", grid.node(i), y[i], z1[i],
                      z2[i]);
        out << line;
    }
}

std::uint64_t ErgodicSolution::content_hash(const MarketModel& model) const {
    Fnv1a h;
    h.feed(model.content_hash());
    h.feed(grid.lo);
    h.feed(grid.hi);
    h.feed(static_cast<std::uint64_t>(grid.n));
    h.feed(method);
    return h.digest();
}

void ErgodicSolution::save_cache(const std::string& path, const MarketModel& model) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SolverError("cannot open cache for writing: " + path);
    std::uint64_t key = content_hash(model);
    std::uint64_t n = y.size();
    out.write(reinterpret_cast<const char*>(&key), sizeof key);
    out.write(reinterpret_cast<const char*>(&n), sizeof n);
    out.write(reinterpret_cast<const char*>(&lambda), sizeof lambda);
    out.write(reinterpret_cast<const char*>(&residual), sizeof residual);
    out.write(reinterpret_cast<const char*>(y.data()), static_cast<std::streamsize>(n * 8));
}

bool ErgodicSolution::load_cache(const std::string& path, const MarketModel& model,
                                 const VGrid& grid, ErgodicSolution& out) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    ErgodicSolution cand;
    cand.grid = grid;
    cand.method = "ode-grid";
    cand.v0 = grid.node(grid.mid_index());
    std::uint64_t key = 0, n = 0;
    in.read(reinterpret_cast<char*>(&key), sizeof key);
    if (!in.good() || key != cand.content_hash(model)) return false;
    in.read(reinterpret_cast<char*>(&n), sizeof n);
    if (!in.good() || n != grid.n) return false;
    in.read(reinterpret_cast<char*>(&cand.lambda), sizeof cand.lambda);
    in.read(reinterpret_cast<char*>(&cand.residual), sizeof cand.residual);
    cand.y.resize(n);
    in.read(reinterpret_cast<char*>(cand.y.data()), static_cast<std::streamsize>(n * 8));
    if (!in.good()) return false;
    double h = grid.spacing();
    auto dy = diff1_uniform(cand.y, h);
    double orth = std::sqrt(std::max(0.0, 1.0 - model.rho * model.rho));
    cand.z1.resize(n);
    cand.z2.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        cand.z1[i] = model.rho * dy[i];
        cand.z2[i] = orth * dy[i];
    }
    out = std::move(cand);
    return true;
}

namespace {

// Scheme residual rows for the stationary equation
//   1/2 y'' + (l - theta rho) y' + 1/2 (1-rho^2) (y')^2 - 1/2 theta^2 - lambda = 0,
// with the curvature-free boundary rows obtained by ghost elimination.
struct SchemeWorkspace {
    std::vector<double> b;      // l - theta*rho per node
    std::vector<double> half_th2;
};

void build_coeffs(const MarketModel& model, const VGrid& grid, SchemeWorkspace& w) {
    w.b.resize(grid.n);
    w.half_th2.resize(grid.n);
    for (std::size_t i = 0; i < grid.n; ++i) {
        double v = grid.node(i);
        double th = model.theta(v);
        w.b[i] = model.drift_l(v) - th * model.rho;
        w.half_th2[i] = 0.5 * th * th;
    }
}

void scheme_residual(const std::vector<double>& y, double lambda, const SchemeWorkspace& w,
                     const VGrid& grid, double one_m_rho2, std::vector<double>& res) {
    const std::size_t n = grid.n;
    const double h = grid.spacing();
    res.resize(n);
    {
        double dy = (y[1] - y[0]) / h;
        res[0] = w.b[0] * dy + 0.5 * one_m_rho2 * dy * dy - w.half_th2[0] - lambda;
    }
    for (std::size_t i = 1; i + 1 < n; ++i) {
        double dy = (y[i + 1] - y[i - 1]) / (2.0 * h);
        double d2y = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h);
        res[i] = 0.5 * d2y + w.b[i] * dy + 0.5 * one_m_rho2 * dy * dy - w.half_th2[i] - lambda;
    }
    {
        double dy = (y[n - 1] - y[n - 2]) / h;
        res[n - 1] = w.b[n - 1] * dy + 0.5 * one_m_rho2 * dy * dy - w.half_th2[n - 1] - lambda;
    }
}

ErgodicSolution solve_ode_grid(const MarketModel& model, const VGrid& grid,
                               const ErgodicOptions& opts) {
    const std::size_t n = grid.n;
    const double h = grid.spacing();
    const double one_m_rho2 = 1.0 - model.rho * model.rho;
    const std::size_t i0 = grid.mid_index();

    SchemeWorkspace w;
    build_coeffs(model, grid, w);

    std::vector<double> y(n, 0.0);
    double lambda = -w.half_th2[i0];
    if (opts.has_initial_guess) {
        if (opts.newton_y0.size() == n) y = opts.newton_y0;
        lambda = opts.newton_lambda0;
    }

    std::vector<double> res, lower(n), diag(n), upper(n), rhs1(n), rhs2(n);
    std::vector<double> lo2(n), di2(n), up2(n);
    scheme_residual(y, lambda, w, grid, one_m_rho2, res);
    double norm = 0.0;
    for (double r : res) norm = std::max(norm, std::fabs(r));

    std::size_t it = 0;
    for (; it < opts.max_newton && norm > opts.tol; ++it) {
        // Tridiagonal Jacobian in y; d/d lambda = -1 in every row.
        {
            double dy = (y[1] - y[0]) / h;
            double g = (w.b[0] + one_m_rho2 * dy) / h;
            diag[0] = -g;
            upper[0] = g;
            lower[0] = 0.0;
        }
        for (std::size_t i = 1; i + 1 < n; ++i) {
            double dy = (y[i + 1] - y[i - 1]) / (2.0 * h);
            double g = (w.b[i] + one_m_rho2 * dy) / (2.0 * h);
            lower[i] = 0.5 / (h * h) - g;
            diag[i] = -1.0 / (h * h);
            upper[i] = 0.5 / (h * h) + g;
        }
        {
            double dy = (y[n - 1] - y[n - 2]) / h;
            double g = (w.b[n - 1] + one_m_rho2 * dy) / h;
            lower[n - 1] = -g;
            diag[n - 1] = g;
            upper[n - 1] = 0.0;
        }
        // The y-block has the constant vector in its null space (solutions
        // are unique up to constants), so regularize the diagonal at the
        // normalization node and do a bordered elimination:
        //   A dy - 1 dl = -R,  dy[i0] = -y[i0],
        // with A~ = A + sigma e_i0 e_i0^T:
        //   A~ u1 = -R - sigma y[i0] e_i0,  A~ u2 = 1,  dy = u1 + dl u2.
        const double sigma = 1.0 / (h * h);
        diag[i0] += sigma;
        for (std::size_t i = 0; i < n; ++i) {
            rhs1[i] = -res[i];
            rhs2[i] = 1.0;
        }
        rhs1[i0] -= sigma * y[i0];
        lo2 = lower;
        di2 = diag;
        up2 = upper;
        solve_tridiagonal(lower, diag, upper, rhs1);
        solve_tridiagonal(lo2, di2, up2, rhs2);
        if (rhs2[i0] == 0.0) throw SolverError("ergodic newton: singular bordered system");
        double d_lambda = (-y[i0] - rhs1[i0]) / rhs2[i0];

        double step = 1.0;
        std::vector<double> y_try(n);
        double norm_try = norm;
        for (int halving = 0; halving < 40; ++halving) {
            for (std::size_t i = 0; i < n; ++i)
                y_try[i] = y[i] + step * (rhs1[i] + d_lambda * rhs2[i]);
            double lam_try = lambda + step * d_lambda;
            scheme_residual(y_try, lam_try, w, grid, one_m_rho2, res);
            norm_try = 0.0;
            for (double r : res) norm_try = std::max(norm_try, std::fabs(r));
            if (norm_try < norm || norm_try <= opts.tol) {
                y.swap(y_try);
                lambda = lam_try;
                break;
            }
            step *= 0.5;
            if (halving == 39)
                throw SolverError("ergodic newton: damping failed, last residual " +
                                  std::to_string(norm));
        }
        norm = norm_try;
    }
    if (norm > opts.tol)
        throw SolverError("ergodic newton: no convergence after " + std::to_string(it) +
                          " iterations, last residual " + std::to_string(norm));

    // exact normalization (the constraint is enforced by the update already)
    double shift = y[i0];
    for (auto& v : y) v -= shift;

    ErgodicSolution sol;
    sol.grid = grid;
    sol.y = std::move(y);
    sol.lambda = lambda;
    sol.v0 = grid.node(i0);
    sol.method = "ode-grid";
    auto dy = diff1_uniform(sol.y, h);
    double orth = std::sqrt(std::max(0.0, one_m_rho2));
    sol.z1.resize(n);
    sol.z2.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        sol.z1[i] = model.rho * dy[i];
        sol.z2[i] = orth * dy[i];
    }
    sol.residual = ergodic_residual(sol, model);
    if (sol.residual > opts.residual_tol)
        throw SolverError("ergodic solve: independent residual " + std::to_string(sol.residual) +
                          " exceeds tolerance");
    return sol;
}

// Discounted finite-horizon recursion; one-step conditional expectations by
// antithetic Monte Carlo with draws shared across nodes.
double discounted_value_at_v0(const MarketModel& model, const VGrid& grid,
                              const ErgodicOptions& opts, double discount) {
    const std::size_t n = opts.vd_nodes;
    VGrid g{grid.lo, grid.hi, n};
    const double h = g.spacing();
    const double dt = opts.vd_dt;
    const double sdt = std::sqrt(dt);
    const double one_m_rho2 = 1.0 - model.rho * model.rho;
    const std::size_t steps =
        static_cast<std::size_t>(std::ceil(opts.vd_horizon_factor / discount / dt));

    std::vector<double> theta(n), drift(n);
    for (std::size_t j = 0; j < n; ++j) {
        theta[j] = model.theta(g.node(j));
        drift[j] = model.drift_l(g.node(j));
    }

    std::mt19937_64 rng(splitmix64(opts.seed ^ 0x5eedc0ffeeull) ^
                        splitmix64(static_cast<std::uint64_t>(1e6 * discount)));
    std::normal_distribution<double> gauss(0.0, 1.0);

    std::vector<double> y(n, 0.0), y_next(n, 0.0), dy(n, 0.0), xi(opts.vd_samples);
    for (std::size_t m = 0; m < steps; ++m) {
        for (auto& x : xi) x = gauss(rng);
        dy = diff1_uniform(y, h);
        for (std::size_t j = 0; j < n; ++j) {
            double shift = g.node(j) + drift[j] * dt;
            double e = 0.0;
            for (double x : xi) {
                e += lerp_uniform(y, g.lo, h, shift + sdt * x);
                e += lerp_uniform(y, g.lo, h, shift - sdt * x);
            }
            e /= static_cast<double>(2 * opts.vd_samples);
            double z1 = model.rho * dy[j];
            double z2s = one_m_rho2 * dy[j] * dy[j];
            double drift_y = discount * y[j] + theta[j] * z1 + 0.5 * theta[j] * theta[j] -
                             0.5 * z2s;
            y_next[j] = e - dt * drift_y;
        }
        y.swap(y_next);
    }
    return lerp_uniform(y, g.lo, h, grid.node(grid.mid_index()));
}

ErgodicSolution solve_vanishing_discount(const MarketModel& model, const VGrid& grid,
                                         const ErgodicOptions& opts) {
    if (opts.discounts.empty()) throw ConfigError("vanishing discount: empty schedule");
    std::vector<double> rho_d = opts.discounts;
    std::sort(rho_d.begin(), rho_d.end(), std::greater<double>());
    std::vector<double> lam(rho_d.size());
    for (std::size_t i = 0; i < rho_d.size(); ++i)
        lam[i] = rho_d[i] * discounted_value_at_v0(model, grid, opts, rho_d[i]);

    // Richardson (Neville) extrapolation of lambda(rho_d) to rho_d = 0.
    std::vector<double> tab = lam;
    for (std::size_t level = 1; level < tab.size(); ++level) {
        for (std::size_t i = 0; i + level < tab.size(); ++i) {
            double r0 = rho_d[i], r1 = rho_d[i + level];
            tab[i] = (r0 * tab[i + 1] - r1 * tab[i]) / (r0 - r1);
        }
    }

    ErgodicSolution sol;
    sol.grid = grid;
    sol.y.assign(grid.n, 0.0);
    sol.z1.assign(grid.n, 0.0);
    sol.z2.assign(grid.n, 0.0);
    sol.lambda = tab[0];
    sol.v0 = grid.node(grid.mid_index());
    sol.method = "vanishing-discount-mc";
    sol.residual = std::fabs(lam.back() - tab[0]);  // schedule spread as a quality proxy
    return sol;
}

}  // namespace

ErgodicSolution solve_ergodic(const MarketModel& model, const VGrid& grid, ErgodicMethod method,
                              const ErgodicOptions& opts) {
    grid.validate();
    model.validate(grid.lo, grid.hi);
    if (method == ErgodicMethod::OdeGrid) return solve_ode_grid(model, grid, opts);
    return solve_vanishing_discount(model, grid, opts);
}

double ergodic_residual(const ErgodicSolution& sol, const MarketModel& model) {
    const std::size_t n = sol.grid.n;
    if (n < 7 || sol.y.size() != n) return 0.0;
    const double h = sol.grid.spacing();
    const double one_m_rho2 = 1.0 - model.rho * model.rho;
    double worst = 0.0;
    for (std::size_t i = 2; i + 2 < n; ++i) {
        double v = sol.grid.node(i);
        // fourth-order central differences, independent of the solver scheme
        double dy = (-sol.y[i + 2] + 8.0 * sol.y[i + 1] - 8.0 * sol.y[i - 1] + sol.y[i - 2]) /
                    (12.0 * h);
        double d2y = (-sol.y[i + 2] + 16.0 * sol.y[i + 1] - 30.0 * sol.y[i] +
                      16.0 * sol.y[i - 1] - sol.y[i - 2]) /
                     (12.0 * h * h);
        double th = model.theta(v);
        double r = 0.5 * d2y + (model.drift_l(v) - th * model.rho) * dy +
                   0.5 * one_m_rho2 * dy * dy - 0.5 * th * th - sol.lambda;
        worst = std::max(worst, std::fabs(r));
    }
    return worst;
}

double long_run_check(const ErgodicSolution& sol, const MarketModel& model,
                      const PathEnsemble& ensemble, double x0) {
    const double gamma = model.gamma;
    double pi_bound = (model.theta_bound + sol.z_sup()) / gamma + 1.0;
    auto pi_star = ControlPath::feedback(
        [&model, &sol, gamma](double, double v) {
            return (model.theta(v) + sol.z1_at(v)) / gamma;
        },
        pi_bound, "pi_star_p0");
    auto q0 = ControlPath::constant(0.0, 1.0);
    auto term = terminal_functionals(ensemble, pi_star, q0, x0, 0);
    const double T = ensemble.grid().horizon();
    const double t0 = ensemble.grid().t0;
    std::vector<double> u(term.size());
    for (std::size_t p = 0; p < term.size(); ++p)
        u[p] = -std::exp(-gamma * term[p].X_T + sol.y_at(term[p].V_T) - sol.lambda * T);
    double target = -std::exp(-gamma * x0 + sol.y_at(ensemble.v0()) - sol.lambda * t0);
    auto ms = mean_se(u);
    double se = ms.se > 0.0 ? ms.se : 1.0;
    return std::fabs(ms.mean - target) / se;
}

}  // namespace fpp
