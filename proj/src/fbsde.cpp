#include "fpp/fbsde.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

namespace fpp {

// --- EndowmentSpec ---------------------------------------------------------

EndowmentSpec EndowmentSpec::constant(double c, double maturity) {
    EndowmentSpec e;
    e.kind_ = EndowmentKind::Constant;
    e.constant_ = c;
    e.bound_ = std::max(1e-12, std::fabs(c));
    e.maturity_ = maturity;
    e.clipped_ = std::make_shared<std::atomic<bool>>(false);
    return e;
}

EndowmentSpec EndowmentSpec::terminal_factor(ScalarFn p, double bound, double maturity) {
    EndowmentSpec e;
    e.kind_ = EndowmentKind::TerminalFactor;
    e.payoff_v_ = std::move(p);
    e.bound_ = bound;
    e.maturity_ = maturity;
    e.clipped_ = std::make_shared<std::atomic<bool>>(false);
    if (!(bound > 0.0)) throw ConfigError("endowment: bound must be positive");
    return e;
}

EndowmentSpec EndowmentSpec::terminal_path(ScalarFn p, double bound, double maturity) {
    EndowmentSpec e = terminal_factor(std::move(p), bound, maturity);
    e.kind_ = EndowmentKind::TerminalPath;
    return e;
}

EndowmentSpec EndowmentSpec::terminal_vx(PayoffVX p, double bound, double maturity) {
    EndowmentSpec e;
    e.kind_ = EndowmentKind::TerminalVX;
    e.payoff_vx_ = std::move(p);
    e.bound_ = bound;
    e.maturity_ = maturity;
    e.clipped_ = std::make_shared<std::atomic<bool>>(false);
    if (!(bound > 0.0)) throw ConfigError("endowment: bound must be positive");
    return e;
}

double EndowmentSpec::clip(double raw) const {
    double c = std::clamp(raw, -bound_, bound_);
    if (c != raw && clipped_) clipped_->store(true, std::memory_order_relaxed);
    return c;
}

double EndowmentSpec::eval_factor(double v_T) const {
    if (kind_ == EndowmentKind::Constant) return constant_;
    if (kind_ != EndowmentKind::TerminalFactor)
        throw SolverError("endowment: terminal-factor payoff requested for wrong kind");
    return clip(payoff_v_(v_T));
}

double EndowmentSpec::eval_path(double w_T) const {
    if (kind_ == EndowmentKind::Constant) return constant_;
    if (kind_ != EndowmentKind::TerminalPath)
        throw SolverError("endowment: terminal-path payoff requested for wrong kind");
    return clip(payoff_v_(w_T));
}

double EndowmentSpec::eval_vx(double v, double x) const {
    if (kind_ == EndowmentKind::Constant) return constant_;
    if (kind_ != EndowmentKind::TerminalVX)
        throw SolverError("endowment: (v,x) payoff requested for wrong kind");
    return clip(payoff_vx_(v, x));
}

double EndowmentSpec::lipschitz_x() const {
    return kind_ == EndowmentKind::TerminalVX ? payoff_vx_.lipschitz_x() : 0.0;
}

void EndowmentSpec::hash_into(Fnv1a& h) const {
    h.feed(static_cast<std::uint64_t>(kind_));
    h.feed(constant_);
    h.feed(bound_);
    h.feed(maturity_);
    if (payoff_v_.valid()) payoff_v_.hash_into(h);
    if (payoff_vx_.valid()) payoff_vx_.hash_into(h);
}

// --- Fields ---------------------------------------------------------------

std::size_t Field2D::level_index(double t) const {
    if (nt < 2) return 0;
    double k = (t - t0) / dt;
    long idx = std::lround(k);
    idx = std::clamp<long>(idx, 0, static_cast<long>(nt) - 1);
    return static_cast<std::size_t>(idx);
}

namespace {

// allocation-free row interpolation with linear extension beyond the ends
double row_lerp(const double* row, std::size_t n, double lo, double dx, double x) {
    double hi = lo + dx * static_cast<double>(n - 1);
    if (x <= lo) return row[0] + (row[1] - row[0]) / dx * (x - lo);
    if (x >= hi) return row[n - 1] + (row[n - 1] - row[n - 2]) / dx * (x - hi);
    double u = (x - lo) / dx;
    std::size_t i = std::min(static_cast<std::size_t>(u), n - 2);
    double w = u - static_cast<double>(i);
    return row[i] * (1.0 - w) + row[i + 1] * w;
}

}  // namespace

double Field2D::at(double t, double v) const {
    if (nt == 0) return 0.0;
    if (nt == 1) return row_lerp(level(0), nv, v_lo, dv, v);
    double k = std::clamp((t - t0) / dt, 0.0, static_cast<double>(nt - 1));
    std::size_t k0 = std::min(static_cast<std::size_t>(k), nt - 2);
    double wt = k - static_cast<double>(k0);
    double a = row_lerp(level(k0), nv, v_lo, dv, v);
    if (wt == 0.0) return a;
    return (1.0 - wt) * a + wt * row_lerp(level(k0 + 1), nv, v_lo, dv, v);
}

double Field2D::dv_at(double t, double v) const {
    double h = dv;
    return (at(t, v + h) - at(t, v - h)) / (2.0 * h);
}

double Field3D::at(double t, double v, double x) const {
    if (nt == 0) return 0.0;
    double kf = nt < 2 ? 0.0 : std::clamp((t - t0) / dt, 0.0, static_cast<double>(nt - 1));
    std::size_t k0 = static_cast<std::size_t>(kf);
    if (k0 >= nt - 1 && nt >= 2) k0 = nt - 2;
    double wt = nt < 2 ? 0.0 : kf - static_cast<double>(k0);

    auto plane = [&](std::size_t k) {
        // bilinear in (v, x) with linear extension at the edges
        double vf = (v - v_lo) / dv;
        double xf = (x - x_lo) / dx;
        auto clampf = [](double f, std::size_t n) {
            return std::clamp(f, 0.0, static_cast<double>(n - 1));
        };
        double vc = clampf(vf, nv), xc = clampf(xf, nx);
        std::size_t j0 = std::min(static_cast<std::size_t>(vc), nv - 2);
        std::size_t m0 = std::min(static_cast<std::size_t>(xc), nx - 2);
        double wv = vf - static_cast<double>(j0);
        double wx = xf - static_cast<double>(m0);
        const double* L = level(k);
        auto g = [&](std::size_t j, std::size_t m) { return L[j * nx + m]; };
        return (1 - wv) * ((1 - wx) * g(j0, m0) + wx * g(j0, m0 + 1)) +
               wv * ((1 - wx) * g(j0 + 1, m0) + wx * g(j0 + 1, m0 + 1));
    };
    double a = plane(k0);
    if (nt < 2 || wt == 0.0) return a;
    return (1.0 - wt) * a + wt * plane(k0 + 1);
}

double Field3D::dx_at(double t, double v, double x) const {
    return (at(t, v, x + dx) - at(t, v, x - dx)) / (2.0 * dx);
}

double Field3D::dv_at(double t, double v, double x) const {
    return (at(t, v + dv, x) - at(t, v - dv, x)) / (2.0 * dv);
}

double& PathBlock::at(std::vector<double>& a, std::size_t p, std::size_t k) const {
    return a[p * n_times() + k];
}

double PathBlock::at(const std::vector<double>& a, std::size_t p, std::size_t k) const {
    return a[p * n_times() + k];
}

ControlPath PrimalSolution::pi_control() const {
    auto f = pi_star;
    return ControlPath::feedback([f](double t, double v) { return f(t, v); }, pi_bound, "pi_star");
}

ControlPath PrimalSolution::q_control() const {
    auto f = q_star;
    return ControlPath::feedback([f](double t, double v) { return f(t, v); }, q_bound, "q_star");
}

void PrimalSolution::export_field_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw SolverError("cannot open for writing: " + path);
    char line[200];
    if (regime == Regime::DecouplingField) {
        out << "t,v,x,y\n";
        for (std::size_t k = 0; k < w.nt; ++k)
            for (std::size_t j = 0; j < w.nv; ++j)
                for (std::size_t m = 0; m < w.nx; ++m) {
                    std::snprintf(line, sizeof line, "%.10g,%.10g,%.10g,%.17g\n",
                                  w.t0 + w.dt * static_cast<double>(k),
                                  w.v_lo + w.dv * static_cast<double>(j),
                                  w.x_lo + w.dx * static_cast<double>(m),
                                  w.level(k)[j * w.nx + m]);
                    out << line;
                }
        return;
    }
    out << "t,v,y,z1,z2\n";
    for (std::size_t k = 0; k < y.nt; ++k)
        for (std::size_t j = 0; j < y.nv; ++j) {
            double t = y.t0 + y.dt * static_cast<double>(k);
            double v = y.v_lo + y.dv * static_cast<double>(j);
            std::snprintf(line, sizeof line, "%.10g,%.10g,%.17g,%.17g,%.17g\n", t, v,
                          y.level(k)[j], z1_at(t, v), z2_at(t, v));
            out << line;
        }
}

void DualSolution::export_field_csv(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw SolverError("cannot open for writing: " + path);
    out << "t,v,y,z1,z2\n";
    char line[200];
    double orth = std::sqrt(std::max(0.0, 1.0 - model.rho * model.rho));
    for (std::size_t k = 0; k < y.nt; ++k)
        for (std::size_t j = 0; j < y.nv; ++j) {
            double t = y.t0 + y.dt * static_cast<double>(k);
            double v = y.v_lo + y.dv * static_cast<double>(j);
            double dyv = y.dv_at(t, v);
            std::snprintf(line, sizeof line, "%.10g,%.10g,%.17g,%.17g,%.17g\n", t, v,
                          y.level(k)[j], model.rho * dyv, orth * dyv);
            out << line;
        }
}

// --- Exponential-regime PDE solver -----------------------------------------

namespace {

// One implicit step of y_t + 1/2 y_vv + b(v) y_v - Q(y_v) = 0 backward in
// time: (I - dt (1/2 D2 + b D1)) y^k = y^{k+1} - dt Q(D1 y^{k+1}), with
// curvature-free boundary rows by ghost elimination.
void exp_pde_step(const std::vector<double>& b, double quad_coeff, double dt_pde, double h,
                  const std::vector<double>& y_next, std::vector<double>& y_out,
                  std::vector<double>& lower, std::vector<double>& diag,
                  std::vector<double>& upper, std::vector<double>& rhs) {
    const std::size_t n = y_next.size();
    lower.assign(n, 0.0);
    diag.assign(n, 0.0);
    upper.assign(n, 0.0);
    rhs.assign(n, 0.0);
    {
        double dyn = (y_next[1] - y_next[0]) / h;
        diag[0] = 1.0 + dt_pde * b[0] / h;
        upper[0] = -dt_pde * b[0] / h;
        rhs[0] = y_next[0] - dt_pde * quad_coeff * dyn * dyn;
    }
    for (std::size_t j = 1; j + 1 < n; ++j) {
        double dyn = (y_next[j + 1] - y_next[j - 1]) / (2.0 * h);
        lower[j] = -dt_pde * (0.5 / (h * h) - b[j] / (2.0 * h));
        diag[j] = 1.0 + dt_pde / (h * h);
        upper[j] = -dt_pde * (0.5 / (h * h) + b[j] / (2.0 * h));
        rhs[j] = y_next[j] - dt_pde * quad_coeff * dyn * dyn;
    }
    {
        double dyn = (y_next[n - 1] - y_next[n - 2]) / h;
        lower[n - 1] = dt_pde * b[n - 1] / h;
        diag[n - 1] = 1.0 - dt_pde * b[n - 1] / h;
        rhs[n - 1] = y_next[n - 1] - dt_pde * quad_coeff * dyn * dyn;
    }
    solve_tridiagonal(lower, diag, upper, rhs);
    y_out = rhs;
}

void fill_exponential_paths(PrimalSolution& sol, const McSpec& mc) {
    const double span = sol.T - sol.t0;
    std::size_t steps = static_cast<std::size_t>(std::lround(span / mc.dt));
    if (steps == 0) throw ConfigError("mc: dt >= horizon leaves no steps");
    TimeGrid tg{sol.t0, span / static_cast<double>(steps), steps};
    PathEnsemble ens(sol.model, tg, mc.n_paths, mc.seed, sol.v0);
    PathBlock& pb = sol.paths;
    pb.grid = tg;
    pb.n_paths = mc.n_paths;
    const std::size_t ntm = steps + 1;
    pb.V.assign(mc.n_paths * ntm, 0.0);
    pb.X.assign(mc.n_paths * ntm, 0.0);
    pb.Y.assign(mc.n_paths * ntm, 0.0);
    pb.Z1.assign(mc.n_paths * ntm, 0.0);
    pb.Z2.assign(mc.n_paths * ntm, 0.0);
    pb.dW1.assign(mc.n_paths * steps, 0.0);
    pb.dW2.assign(mc.n_paths * steps, 0.0);

    parallel_for(mc.n_paths, [&](std::size_t lo, std::size_t hi) {
        PathBuffer buf;
        for (std::size_t p = lo; p < hi; ++p) {
            ens.generate(p, buf);
            double x = sol.xi;
            for (std::size_t k = 0; k <= steps; ++k) {
                double t = tg.time(k);
                double v = buf.V[k];
                pb.at(pb.V, p, k) = v;
                pb.at(pb.X, p, k) = x;
                pb.at(pb.Y, p, k) = k == steps ? sol.endowment.eval_factor(v) : sol.y_at(t, v);
                pb.at(pb.Z1, p, k) = sol.z1_at(t, v);
                pb.at(pb.Z2, p, k) = sol.z2_at(t, v);
                if (k < steps) {
                    pb.inc(pb.dW1, p, k) = buf.dW1[k];
                    pb.inc(pb.dW2, p, k) = buf.dW2[k];
                    double pi = sol.pi_star(t, v);
                    x += pi * (sol.model.theta(v) * tg.dt + buf.dW1[k]);
                }
            }
        }
    });
}

}  // namespace

PrimalSolution solve_exponential_primal(const MarketModel& model,
                                        std::shared_ptr<const ErgodicSolution> erg,
                                        const EndowmentSpec& endowment, double t0, double T,
                                        const PdeGridSpec& grid, double v0, double xi,
                                        const McSpec& mc, double z2_cap) {
    if (!(T > t0)) throw ConfigError("exponential primal: need T > t0");
    if (endowment.kind() != EndowmentKind::TerminalFactor &&
        endowment.kind() != EndowmentKind::Constant)
        throw SolverError("exponential regime requires a terminal-factor (or constant) endowment");
    grid.v.validate();
    const std::size_t nv = grid.v.n;
    const double h = grid.v.spacing();
    const double rho = model.rho;
    const double one_m_rho2 = 1.0 - rho * rho;
    const double orth = std::sqrt(std::max(0.0, one_m_rho2));
    const double gamma = model.gamma;
    const std::size_t nt = grid.nt;
    const double dt_pde = (T - t0) / static_cast<double>(nt);

    // effective drift of the backward field: l - theta rho + sqrt(1-rho^2) z^{e,2}
    std::vector<double> b(nv);
    for (std::size_t j = 0; j < nv; ++j) {
        double v = grid.v.node(j);
        b[j] = model.drift_l(v) - model.theta(v) * rho + orth * erg->z2_at(v);
    }
    const double quad_coeff = 0.5 * gamma * one_m_rho2;

    PrimalSolution sol;
    sol.regime = Regime::Exponential;
    sol.model = model;
    sol.erg = erg;
    sol.gamma = gamma;
    sol.endowment = endowment;
    sol.t0 = t0;
    sol.T = T;
    sol.v0 = v0;
    sol.xi = xi;

    Field2D& y = sol.y;
    y.t0 = t0;
    y.dt = dt_pde;
    y.v_lo = grid.v.lo;
    y.dv = h;
    y.nt = nt + 1;
    y.nv = nv;
    y.data.assign(y.nt * nv, 0.0);

    for (std::size_t j = 0; j < nv; ++j)
        y.level(nt)[j] = endowment.eval_factor(grid.v.node(j));

    std::vector<double> lower, diag, upper, rhs, y_next(nv), y_out;
    for (std::size_t k = nt; k-- > 0;) {
        std::copy(y.level(k + 1), y.level(k + 1) + nv, y_next.begin());
        exp_pde_step(b, quad_coeff, dt_pde, h, y_next, y_out, lower, diag, upper, rhs);
        double z2max = 0.0;
        for (std::size_t j = 1; j + 1 < nv; ++j)
            z2max = std::max(z2max, std::fabs(orth * (y_out[j + 1] - y_out[j - 1]) / (2 * h)));
        if (z2max > z2_cap)
            throw SolverError("exponential primal: |Z^2| exceeded the stability cap; refine the grid");
        std::copy(y_out.begin(), y_out.end(), y.level(k));
    }

    sol.Y0 = y.at(t0, v0);

    // independent defect: central-in-time residual of the solved field
    double resid = 0.0;
    for (std::size_t k = 1; k + 1 < y.nt; k += std::max<std::size_t>(1, nt / 16))
        for (std::size_t j = 1; j + 1 < nv; j += std::max<std::size_t>(1, nv / 32)) {
            double ytd = (y.level(k + 1)[j] - y.level(k - 1)[j]) / (2.0 * dt_pde);
            double dv1 = (y.level(k)[j + 1] - y.level(k)[j - 1]) / (2.0 * h);
            double dv2 = (y.level(k)[j + 1] - 2.0 * y.level(k)[j] + y.level(k)[j - 1]) / (h * h);
            resid = std::max(resid,
                             std::fabs(ytd + 0.5 * dv2 + b[j] * dv1 - quad_coeff * dv1 * dv1));
        }
    sol.bsde_residual = resid;

    // controls
    auto y_shared = std::make_shared<Field2D>(sol.y);
    auto erg_local = erg;
    MarketModel m = model;
    double dymax = 0.0;
    for (std::size_t k = 0; k < y.nt; ++k)
        for (std::size_t j = 1; j + 1 < nv; ++j)
            dymax = std::max(dymax,
                             std::fabs((y.level(k)[j + 1] - y.level(k)[j - 1]) / (2 * h)));
    sol.pi_bound = (model.theta_bound + erg->z_sup()) / gamma + rho * dymax + 1.0;
    sol.q_bound = gamma * orth * dymax + erg->z_sup() + 1.0;
    sol.pi_star = [y_shared, erg_local, m, gamma, rho](double t, double v) {
        return (m.theta(v) + erg_local->z1_at(v)) / gamma - rho * y_shared->dv_at(t, v);
    };
    sol.q_star = [y_shared, erg_local, gamma, orth](double t, double v) {
        return gamma * orth * y_shared->dv_at(t, v) - erg_local->z2_at(v);
    };

    fill_exponential_paths(sol, mc);
    return sol;
}

// --- Complete market --------------------------------------------------------

std::pair<PrimalSolution, DualSolution> solve_complete_market(
    const ScalarFn& theta_of_t, const EndowmentSpec& endowment, double xi, double eta,
    const PathEnsemble& ensemble, double gamma) {
    if (endowment.kind() == EndowmentKind::TerminalFactor ||
        endowment.kind() == EndowmentKind::TerminalVX)
        throw SolverError("complete market regime: payoff must be driven by the single noise");
    if (!(eta > 0.0)) throw ConfigError("complete market: eta must be positive");
    const TimeGrid tg = ensemble.grid();
    const std::size_t n = tg.n_steps;
    const std::size_t ntm = n + 1;
    const double t0 = tg.t0, T = tg.horizon();

    // g(t) = 1/2 int_0^t theta^2 (trapezoid) and I(s) = int_s^T theta
    std::vector<double> g(ntm, 0.0), integral_theta(ntm, 0.0), theta_k(ntm, 0.0);
    for (std::size_t k = 0; k < ntm; ++k) theta_k[k] = theta_of_t(tg.time(k));
    for (std::size_t k = 1; k < ntm; ++k)
        g[k] = g[k - 1] + 0.25 * (theta_k[k - 1] * theta_k[k - 1] + theta_k[k] * theta_k[k]) * tg.dt;
    for (std::size_t k = ntm - 1; k-- > 0;)
        integral_theta[k] = integral_theta[k + 1] + 0.5 * (theta_k[k] + theta_k[k + 1]) * tg.dt;

    std::vector<double> gh_x, gh_w;
    gauss_hermite_normal(40, gh_x, gh_w);
    EndowmentSpec endow = endowment;
    // conditional mean m(s, w) = E^{Q0}[P | W_s = w] precomputed on an
    // (s, w) lattice; per-path evaluation interpolates
    double sup_drift = 0.0;
    for (double v : integral_theta) sup_drift = std::max(sup_drift, std::fabs(v));
    const double w_span = 5.0 * std::sqrt(std::max(T - t0, 1e-12)) + sup_drift + 1.0;
    auto m_field = std::make_shared<Field2D>();
    m_field->t0 = t0;
    m_field->dt = tg.dt;
    m_field->v_lo = -w_span;
    m_field->nv = 1601;
    m_field->dv = 2.0 * w_span / static_cast<double>(m_field->nv - 1);
    m_field->nt = ntm;
    m_field->data.assign(m_field->nt * m_field->nv, 0.0);
    for (std::size_t k = 0; k < ntm; ++k) {
        double s = tg.time(k);
        double sd = std::sqrt(std::max(0.0, T - s));
        double drift = integral_theta[k];
        double* row = m_field->level(k);
        for (std::size_t j = 0; j < m_field->nv; ++j) {
            double wbase = m_field->v_lo + m_field->dv * static_cast<double>(j);
            if (endow.kind() == EndowmentKind::Constant) {
                row[j] = endow.eval_path(0.0);
            } else if (k + 1 >= ntm) {
                row[j] = endow.eval_path(wbase);
            } else {
                double acc = 0.0;
                for (std::size_t a = 0; a < gh_x.size(); ++a)
                    acc += gh_w[a] * endow.eval_path(wbase - drift + sd * gh_x[a]);
                row[j] = acc;
            }
        }
    }
    auto cm_y = [m_field](double s, double w_s) { return m_field->at(s, w_s); };
    auto g_of = [g, tg, ntm](double t) {
        std::size_t k = static_cast<std::size_t>(
            std::clamp(std::lround((t - tg.t0) / tg.dt), long{0}, static_cast<long>(ntm - 1)));
        return g[k];
    };
    // U(t,x) = -exp(-gamma x + g(t)); U~_z(t,z) = (ln(z/gamma) - g(t)) / gamma
    auto tilde_z = [g_of, gamma](double t, double z) {
        return (std::log(z / gamma) - g_of(t)) / gamma;
    };

    // reweighted MC for Y_0 = E^{Q0}[P]; the lattice value is the headline
    // number (it keeps the field and the per-path representation consistent)
    // and the MC estimate is kept as a defect diagnostic
    const std::size_t np = ensemble.n_paths();
    std::vector<double> W_T(np), weight(np), payoff(np);
    parallel_for(np, [&](std::size_t lo, std::size_t hi) {
        PathBuffer buf;
        for (std::size_t p = lo; p < hi; ++p) {
            ensemble.generate(p, buf);
            double w = 0.0, li = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                li += -theta_k[k] * buf.dW1[k] - 0.5 * theta_k[k] * theta_k[k] * tg.dt;
                w += buf.dW1[k];
            }
            W_T[p] = w;
            weight[p] = std::exp(li);
            payoff[p] = endow.kind() == EndowmentKind::Constant ? endow.eval_path(0.0)
                                                                : endow.eval_path(w);
        }
    });
    std::vector<double> wp(np);
    for (std::size_t p = 0; p < np; ++p) wp[p] = weight[p] * payoff[p];
    double Y0_mc = mean_se(wp).mean;
    double Y0 = cm_y(t0, 0.0);
    if (endow.kind() == EndowmentKind::Constant) Y0 = endow.eval_path(0.0);

    PrimalSolution ps;
    ps.regime = Regime::CompleteMarket;
    ps.gamma = gamma;
    ps.endowment = endow;
    ps.t0 = t0;
    ps.T = T;
    ps.v0 = 0.0;
    ps.xi = xi;
    ps.Y0 = Y0;
    ps.bsde_residual = std::fabs(Y0_mc - Y0);
    ps.cm_y = cm_y;
    ps.cm_g = g_of;
    ps.theta_of_t = theta_of_t;
    ps.model.theta = ScalarFn::zero();
    ps.model.drift_l = ScalarFn::zero();
    ps.model.gamma = gamma;
    ps.model.theta_bound = theta_of_t.bound();
    ps.pi_bound = 0.0;
    ps.q_bound = 0.0;
    ps.pi_star = [](double, double) { return 0.0; };  // per-path control is stored in paths
    ps.q_star = [](double, double) { return 0.0; };   // q* = 0 in the complete market

    double eta_hat = gamma * std::exp(-gamma * (xi + Y0) + g_of(t0));

    DualSolution ds;
    ds.regime = Regime::CompleteMarket;
    ds.eta0 = eta;
    ds.gamma = gamma;
    ds.endowment = endow;
    ds.t0 = t0;
    ds.T = T;
    ds.Y0 = Y0;
    ds.xi_hat = -tilde_z(t0, eta) - Y0;

    // per-path realizations
    PathBlock& pp = ps.paths;
    pp.grid = tg;
    pp.n_paths = np;
    pp.V.assign(np * ntm, 0.0);
    pp.X.assign(np * ntm, 0.0);
    pp.Y.assign(np * ntm, 0.0);
    pp.Z1.assign(np * ntm, 0.0);
    pp.Z2.assign(np * ntm, 0.0);
    pp.dW1.assign(np * n, 0.0);
    pp.dW2.assign(np * n, 0.0);
    PathBlock& dp = ds.paths;
    dp = pp;

    parallel_for(np, [&](std::size_t lo, std::size_t hi) {
        PathBuffer buf;
        for (std::size_t p = lo; p < hi; ++p) {
            ensemble.generate(p, buf);
            double w = 0.0, li = 0.0;
            for (std::size_t k = 0; k <= n; ++k) {
                double s = tg.time(k);
                double ee = std::exp(li);
                double ys = cm_y(s, w);
                double hw = 1e-4;
                double z = (cm_y(s, w + hw) - cm_y(s, w - hw)) / (2.0 * hw);
                pp.at(pp.V, p, k) = w;
                pp.at(pp.Y, p, k) = ys;
                pp.at(pp.Z1, p, k) = z;
                pp.at(pp.X, p, k) = -tilde_z(s, eta_hat * ee) - ys;
                dp.at(dp.V, p, k) = w;
                dp.at(dp.X, p, k) = eta * ee;  // D path
                dp.at(dp.Y, p, k) = ys;
                dp.at(dp.Z1, p, k) = z;
                if (k < n) {
                    pp.inc(pp.dW1, p, k) = buf.dW1[k];
                    dp.inc(dp.dW1, p, k) = buf.dW1[k];
                    li += -theta_k[k] * buf.dW1[k] - 0.5 * theta_k[k] * theta_k[k] * tg.dt;
                    w += buf.dW1[k];
                }
            }
        }
    });

    // Euler defect of the dual forward equation dD = -D theta dW
    double acc = 0.0, worst = 0.0;
    std::size_t count = 0;
    for (std::size_t p = 0; p < std::min<std::size_t>(np, 512); ++p) {
        for (std::size_t k = 0; k < n; ++k) {
            double d0 = dp.at(dp.X, p, k), d1 = dp.at(dp.X, p, k + 1);
            double eps = d1 - d0 + d0 * theta_k[k] * dp.inc(dp.dW1, p, k);
            acc += std::fabs(eps);
            worst = std::max(worst, std::fabs(eps));
            ++count;
        }
    }
    ds.residual_mean = count ? acc / static_cast<double>(count) : 0.0;
    ds.residual_max = worst;
    return {std::move(ps), std::move(ds)};
}

// --- Decoupling field -------------------------------------------------------

PrimalSolution solve_decoupling_field(const MarkovianForwardField& field,
                                      const MarketModel& model, const EndowmentSpec& endowment,
                                      double T, const DecouplingGridSpec& grid, double x0,
                                      double v0, const McSpec& mc) {
    if (endowment.kind() != EndowmentKind::TerminalVX &&
        endowment.kind() != EndowmentKind::Constant)
        throw SolverError("decoupling regime requires a terminal (v,x) endowment");
    const double rho = model.rho;
    auto bounds = field.measure_bounds(rho);
    if (!(bounds.C_l > 0.0) || !std::isfinite(bounds.C_u) || !std::isfinite(bounds.C_alpha))
        throw SolverError("decoupling field: measured risk-tolerance bounds are not usable");
    const double L_px = endowment.lipschitz_x();
    if (!(L_px < 1.0))
        throw SolverError("decoupling field: endowment Lipschitz constant in x must be < 1");

    int field_case = 1;
    double horizon_bound = std::numeric_limits<double>::infinity();
    if (bounds.phi2_x_abs_max > 1e-10) {
        field_case = 2;
        if (!(bounds.phi1_x_max < 0.0))
            throw SolverError("decoupling field: Case 2 requires phi1_x <= -delta < 0 on the grid");
        horizon_bound = std::log(2.0 / (1.0 + L_px)) / bounds.K;
        if (!(T < horizon_bound)) {
            std::ostringstream msg;
            msg << "decoupling field: Case-2 horizon bound violated: T=" << T
                << " >= " << horizon_bound << " (K=" << bounds.K << ", L_Px=" << L_px << ")";
            throw SolverError(msg.str());
        }
    }

    const std::size_t nv = grid.v.n, nx = grid.nx, nt = grid.nt;
    if (nv < 5 || nx < 5 || nt < 2)
        throw ConfigError("decoupling grid: need at least 5 v/x nodes and 2 time steps");
    const double dt = T / static_cast<double>(nt);
    const double hv = grid.v.spacing();
    const double hx = (grid.x_hi - grid.x_lo) / static_cast<double>(nx - 1);
    const double orth = std::sqrt(std::max(0.0, 1.0 - rho * rho));

    std::vector<double> gx, gw;
    gauss_hermite_normal(grid.quad_points, gx, gw);

    PrimalSolution sol;
    sol.regime = Regime::DecouplingField;
    sol.model = model;
    sol.gamma = model.gamma;
    sol.endowment = endowment;
    sol.t0 = 0.0;
    sol.T = T;
    sol.v0 = v0;
    sol.xi = x0;
    sol.field_case = field_case;
    sol.K_measured = bounds.K;
    sol.horizon_bound = horizon_bound;

    Field3D& w = sol.w;
    w.t0 = 0.0;
    w.dt = dt;
    w.v_lo = grid.v.lo;
    w.dv = hv;
    w.x_lo = grid.x_lo;
    w.dx = hx;
    w.nt = nt + 1;
    w.nv = nv;
    w.nx = nx;
    w.data.assign(w.nt * nv * nx, 0.0);

    for (std::size_t j = 0; j < nv; ++j)
        for (std::size_t m = 0; m < nx; ++m)
            w.level(nt)[j * nx + m] =
                endowment.eval_vx(grid.v.node(j), grid.x_lo + hx * static_cast<double>(m));

    // Catmull-Rom weights along one axis; falls back to linear in the first
    // and last cells. Cubic interpolation keeps the per-step smoothing bias
    // of the backward induction at O(h^4), which the repeated re-sampling
    // would otherwise accumulate to O(T h^2 / dt).
    // Edge cells use linear weights with the parameter left unclamped, which
    // doubles as the linear extension beyond the lattice; base+3 always
    // stays in range (grids have at least 5 nodes).
    auto axis_weights = [](double f, std::size_t n, std::size_t& base, double w[4]) {
        double cell = std::clamp(f, 0.0, static_cast<double>(n - 1) - 1e-12);
        std::size_t i = std::min(static_cast<std::size_t>(cell), n - 2);
        if (i == 0) {
            base = 0;
            double u = f;
            w[0] = 1.0 - u; w[1] = u; w[2] = 0.0; w[3] = 0.0;
            return;
        }
        if (i >= n - 2) {
            base = n - 4;
            double u = f - static_cast<double>(n - 2);
            w[0] = 0.0; w[1] = 0.0; w[2] = 1.0 - u; w[3] = u;
            return;
        }
        base = i - 1;
        double u = f - static_cast<double>(i);
        double u2 = u * u, u3 = u2 * u;
        w[0] = 0.5 * (-u3 + 2 * u2 - u);
        w[1] = 0.5 * (3 * u3 - 5 * u2 + 2);
        w[2] = 0.5 * (-3 * u3 + 4 * u2 + u);
        w[3] = 0.5 * (u3 - u2);
    };
    auto level_lerp = [&](const double* L, double vq, double xq) {
        double vf = (vq - grid.v.lo) / hv;
        double xf = (xq - grid.x_lo) / hx;
        std::size_t jb, mb;
        double wv[4], wx[4];
        axis_weights(vf, nv, jb, wv);
        axis_weights(xf, nx, mb, wx);
        double out = 0.0;
        for (int a = 0; a < 4; ++a) {
            if (wv[a] == 0.0) continue;
            const double* row = L + (jb + static_cast<std::size_t>(a)) * nx + mb;
            out += wv[a] * (wx[0] * row[0] + wx[1] * row[1] + wx[2] * row[2] + wx[3] * row[3]);
        }
        return out;
    };

    std::vector<double> wx_next(nv * nx), wv_next(nv * nx);
    double wx_sup_global = 0.0;
    for (std::size_t j = 0; j < nv; ++j)
        for (std::size_t m = 0; m < nx; ++m) {
            const double* L = w.level(nt);
            std::size_t jm = std::min(std::max<std::size_t>(j, 1), nv - 2);
            std::size_t mm = std::min(std::max<std::size_t>(m, 1), nx - 2);
            wx_next[j * nx + m] = (L[jm * nx + mm + 1] - L[jm * nx + mm - 1]) / (2 * hx);
            wv_next[j * nx + m] = (L[(jm + 1) * nx + mm] - L[(jm - 1) * nx + mm]) / (2 * hv);
        }

    for (std::size_t k = nt; k-- > 0;) {
        const double* next = w.level(k + 1);
        double* cur = w.level(k);
        const double t = dt * static_cast<double>(k);
        double wx_sup_level = 0.0;
        for (double wxv : wx_next) wx_sup_level = std::max(wx_sup_level, std::fabs(wxv));
        wx_sup_global = std::max(wx_sup_global, wx_sup_level);
        if (wx_sup_level >= 1.0)
            throw InvariantError("decoupling field: measured |w_x| reached 1 at t level " +
                                 std::to_string(t + dt));

        parallel_for(nv, [&](std::size_t j_lo, std::size_t j_hi) {
            for (std::size_t j = j_lo; j < j_hi; ++j) {
                const double v = grid.v.node(j);
                const double th = model.theta(v);
                const double lv = model.drift_l(v);
                for (std::size_t m = 0; m < nx; ++m) {
                    const double x = grid.x_lo + hx * static_cast<double>(m);
                    double wxl = std::clamp(wx_next[j * nx + m], -0.999, 0.999);
                    double wvl = wv_next[j * nx + m];
                    double z2 = orth * wvl;
                    if (std::fabs(z2) > grid.z2_cap)
                        throw SolverError("decoupling field: |Z^2| exceeded the stability cap");
                    double yv = next[j * nx + m];
                    bool converged = false;
                    for (std::size_t it = 0; it < grid.fp_max_iter; ++it) {
                        double s = x + yv;
                        double psi = field.psi(t, v, s, th, rho);
                        double z1 = (rho * wvl - wxl * psi) / (1.0 + wxl);
                        double bX = -(psi + z1);
                        double e = 0.0;
                        for (std::size_t a = 0; a < gx.size(); ++a) {
                            double dw1 = std::sqrt(dt) * gx[a];
                            double xq = x + bX * (th * dt + dw1);
                            double vbase = v + lv * dt + rho * dw1;
                            for (std::size_t bq = 0; bq < gx.size(); ++bq) {
                                double vq = vbase + orth * std::sqrt(dt) * gx[bq];
                                e += gw[a] * gw[bq] * level_lerp(next, vq, xq);
                            }
                        }
                        double f = -z1 * th + 0.5 * field.phi1(t, v, s) * z2 * z2 +
                                   orth * field.phi2(t, v, s) * z2;
                        double y_new = e + dt * f;
                        double delta = y_new - yv;
                        yv += grid.fp_damping * delta;
                        if (std::fabs(delta) < grid.fp_tol * (1.0 + std::fabs(yv))) {
                            converged = true;
                            break;
                        }
                    }
                    if (!converged) {
                        std::ostringstream msg;
                        msg << "decoupling field: per-node fixed point did not converge at (t="
                            << t << ", v=" << v << ", x=" << x << ")";
                        throw SolverError(msg.str());
                    }
                    cur[j * nx + m] = yv;
                }
            }
        });

        for (std::size_t j = 0; j < nv; ++j)
            for (std::size_t m = 0; m < nx; ++m) {
                std::size_t jm = std::min(std::max<std::size_t>(j, 1), nv - 2);
                std::size_t mm = std::min(std::max<std::size_t>(m, 1), nx - 2);
                wx_next[j * nx + m] = (cur[jm * nx + mm + 1] - cur[jm * nx + mm - 1]) / (2 * hx);
                wv_next[j * nx + m] = (cur[(jm + 1) * nx + mm] - cur[(jm - 1) * nx + mm]) / (2 * hv);
            }
    }
    {
        double wx_sup_level = 0.0;
        for (double wxv : wx_next) wx_sup_level = std::max(wx_sup_level, std::fabs(wxv));
        wx_sup_global = std::max(wx_sup_global, wx_sup_level);
    }
    sol.w_x_sup = wx_sup_global;
    if (!(wx_sup_global < 1.0))
        throw InvariantError("decoupling field: measured sup |w_x| is not below 1");
    sol.Y0 = w.at(0.0, v0, x0);

    // per-path realizations under the solved field
    const std::size_t steps = static_cast<std::size_t>(std::lround(T / mc.dt));
    TimeGrid tg{0.0, T / static_cast<double>(std::max<std::size_t>(steps, 1)),
                std::max<std::size_t>(steps, 1)};
    PathEnsemble ens(model, tg, mc.n_paths, mc.seed, v0);
    PathBlock& pb = sol.paths;
    pb.grid = tg;
    pb.n_paths = mc.n_paths;
    const std::size_t ntm = tg.n_steps + 1;
    pb.V.assign(mc.n_paths * ntm, 0.0);
    pb.X.assign(mc.n_paths * ntm, 0.0);
    pb.Y.assign(mc.n_paths * ntm, 0.0);
    pb.Z1.assign(mc.n_paths * ntm, 0.0);
    pb.Z2.assign(mc.n_paths * ntm, 0.0);
    pb.dW1.assign(mc.n_paths * tg.n_steps, 0.0);
    pb.dW2.assign(mc.n_paths * tg.n_steps, 0.0);
    MarkovianForwardField fld = field;
    parallel_for(mc.n_paths, [&](std::size_t lo, std::size_t hi) {
        PathBuffer buf;
        for (std::size_t p = lo; p < hi; ++p) {
            ens.generate(p, buf);
            double x = x0;
            for (std::size_t k = 0; k <= tg.n_steps; ++k) {
                double t = tg.time(k);
                double v = buf.V[k];
                double yv = w.at(t, v, x);
                double wxl = std::clamp(w.dx_at(t, v, x), -0.999, 0.999);
                double wvl = w.dv_at(t, v, x);
                double psi = fld.psi(t, v, x + yv, model.theta(v), rho);
                double z1 = (rho * wvl - wxl * psi) / (1.0 + wxl);
                pb.at(pb.V, p, k) = v;
                pb.at(pb.X, p, k) = x;
                pb.at(pb.Y, p, k) = yv;
                pb.at(pb.Z1, p, k) = z1;
                pb.at(pb.Z2, p, k) = orth * wvl;
                if (k < tg.n_steps) {
                    pb.inc(pb.dW1, p, k) = buf.dW1[k];
                    pb.inc(pb.dW2, p, k) = buf.dW2[k];
                    x += -(psi + z1) * (model.theta(v) * tg.dt + buf.dW1[k]);
                }
            }
        }
    });

    sol.pi_bound = bounds.C_u * model.theta_bound + bounds.C_alpha + 2.0;
    sol.q_bound = 2.0 * grid.z2_cap + 2.0;
    auto wp = std::make_shared<Field3D>(sol.w);
    MarketModel mdl = model;
    sol.pi_star = [wp, fld, mdl, rho](double t, double v) {
        // x-marginalized reporting only; the per-path control uses the field
        double x = 0.0;
        double yv = wp->at(t, v, x);
        double wxl = std::clamp(wp->dx_at(t, v, x), -0.999, 0.999);
        double wvl = wp->dv_at(t, v, x);
        double psi = fld.psi(t, v, x + yv, mdl.theta(v), rho);
        double z1 = (rho * wvl - wxl * psi) / (1.0 + wxl);
        return -(psi + z1);
    };
    double orth_c = orth;
    sol.q_star = [wp, fld, mdl, orth_c](double t, double v) {
        double x = 0.0;
        double yv = wp->at(t, v, x);
        double s = x + yv;
        double z2 = orth_c * wp->dv_at(t, v, x);
        double ux = fld.u_x(t, v, s), uxx = fld.u_xx(t, v, s);
        return -(uxx * z2 + orth_c * fld.u_xv(t, v, s)) / ux;
    };
    return sol;
}

// --- Transforms -------------------------------------------------------------

DualSolution dual_from_primal(const PrimalSolution& primal, const ConjugatePair& U) {
    if (primal.paths.n_paths == 0)
        throw SolverError("dual_from_primal: primal carries no per-path realizations");
    DualSolution d;
    d.regime = primal.regime;
    d.gamma = primal.gamma;
    d.model = primal.model;
    d.erg = primal.erg;
    d.endowment = primal.endowment;
    d.t0 = primal.t0;
    d.T = primal.T;
    d.v0 = primal.v0;
    d.Y0 = primal.Y0;
    d.y = primal.y;
    d.paths = primal.paths;  // Y~ = Y, Z~ = Z; D overwrites the X slot

    const PathBlock& pb = primal.paths;
    const std::size_t ntm = pb.n_times();
    d.eta0 = U.u_x(primal.t0, primal.v0, primal.xi + primal.Y0);
    d.xi_hat = -U.tilde_z(primal.t0, primal.v0, d.eta0) - primal.Y0;

    for (std::size_t p = 0; p < pb.n_paths; ++p)
        for (std::size_t k = 0; k < ntm; ++k) {
            double t = pb.grid.time(k);
            double v = pb.at(pb.V, p, k);
            double dd = U.u_x(t, v, pb.at(pb.X, p, k) + pb.at(pb.Y, p, k));
            if (!(dd > 0.0))
                throw InvariantError("dual_from_primal: non-positive dual state encountered");
            d.paths.at(d.paths.X, p, k) = dd;
        }

    // Euler defect of the dual forward equation dD = -D (theta dW1 + q* dW2)
    if (!pb.dW1.empty()) {
        double acc = 0.0, worst = 0.0;
        std::size_t count = 0;
        for (std::size_t p = 0; p < pb.n_paths; ++p)
            for (std::size_t k = 0; k + 1 < ntm; ++k) {
                double t = pb.grid.time(k);
                double v = pb.at(pb.V, p, k);
                double th = primal.model.theta(v);
                double q = primal.q_star(t, v);
                double d0 = d.paths.at(d.paths.X, p, k);
                double d1 = d.paths.at(d.paths.X, p, k + 1);
                double eps = d1 - d0 + d0 * (th * pb.inc(pb.dW1, p, k) + q * pb.inc(pb.dW2, p, k));
                acc += std::fabs(eps);
                worst = std::max(worst, std::fabs(eps));
                ++count;
            }
        d.residual_mean = count ? acc / static_cast<double>(count) : 0.0;
        d.residual_max = worst;
    }
    return d;
}

PrimalSolution primal_from_dual(const DualSolution& dual, const ConjugatePair& pair) {
    if (dual.paths.n_paths == 0)
        throw SolverError("primal_from_dual: dual carries no per-path realizations");
    PrimalSolution p;
    p.regime = dual.regime;
    p.gamma = dual.gamma;
    p.model = dual.model;
    p.erg = dual.erg;
    p.endowment = dual.endowment;
    p.t0 = dual.t0;
    p.T = dual.T;
    p.v0 = dual.v0;
    p.Y0 = dual.Y0;
    p.y = dual.y;
    p.paths = dual.paths;
    p.xi = -pair.tilde_z(dual.t0, dual.v0, dual.eta0) - dual.Y0;

    const PathBlock& db = dual.paths;
    for (std::size_t pth = 0; pth < db.n_paths; ++pth)
        for (std::size_t k = 0; k < db.n_times(); ++k) {
            double t = db.grid.time(k);
            double v = db.at(db.V, pth, k);
            double dd = db.at(db.X, pth, k);
            if (!(dd > 0.0)) throw InvariantError("primal_from_dual: non-positive dual state");
            p.paths.at(p.paths.X, pth, k) = -pair.tilde_z(t, v, dd) - db.at(db.Y, pth, k);
        }
    return p;
}

// --- Verification ------------------------------------------------------------

namespace {

struct Direction {
    double c0, c1, c2, omega, phase;
    double operator()(double t, double v) const {
        double raw = c0 + c1 * std::tanh(v) + c2 * std::sin(omega * t + phase);
        return std::clamp(raw, -1.0, 1.0);
    }
};

Direction random_direction(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::uniform_real_distribution<double> om(1.0, 6.0);
    std::uniform_real_distribution<double> ph(0.0, 6.283185307179586);
    return Direction{0.5 * u(rng), 0.5 * u(rng), 0.5 * u(rng), om(rng), ph(rng)};
}

}  // namespace

OptimalityReport verify_optimality(const PrimalSolution& primal, const ExpForwardProcess& U,
                                   const McSpec& mc, std::size_t n_perturbations,
                                   const std::vector<double>& epsilons) {
    if (primal.regime != Regime::Exponential)
        throw SolverError("verify_optimality: implemented for the exponential regime");
    if (epsilons.empty()) throw ConfigError("verify_optimality: empty epsilon list");
    const MarketModel& model = primal.model;
    const double t0 = primal.t0, T = primal.T;

    std::mt19937_64 rng(splitmix64(mc.seed ^ 0xabcdef12345ull));
    std::vector<Direction> dirs;
    for (std::size_t i = 0; i < n_perturbations; ++i) dirs.push_back(random_direction(rng));

    const std::size_t steps = static_cast<std::size_t>(std::lround((T - t0) / mc.dt));
    TimeGrid tg{t0, (T - t0) / static_cast<double>(steps), steps};
    PathEnsemble ens(model, tg, mc.n_paths, mc.seed, primal.v0);

    const std::size_t n_var = dirs.size() * epsilons.size();
    std::vector<double> u_star(mc.n_paths), u_zero(mc.n_paths);
    std::vector<double> ud_star(mc.n_paths);
    std::vector<std::vector<double>> u_pert(n_var, std::vector<double>(mc.n_paths));
    std::vector<std::vector<double>> ud_pert(n_var, std::vector<double>(mc.n_paths));
    const double eta_hat = U.u_x(t0, primal.v0, primal.xi + primal.Y0);

    parallel_for(mc.n_paths, [&](std::size_t lo, std::size_t hi) {
        PathBuffer buf;
        std::vector<double> x(n_var), logm(n_var);
        for (std::size_t p = lo; p < hi; ++p) {
            ens.generate(p, buf);
            double xs = primal.xi, x0c = primal.xi;
            double logm_s = 0.0;
            std::fill(x.begin(), x.end(), primal.xi);
            std::fill(logm.begin(), logm.end(), 0.0);
            for (std::size_t k = 0; k < steps; ++k) {
                double t = tg.time(k);
                double v = buf.V[k];
                double th = model.theta(v);
                double pi = primal.pi_star(t, v);
                double q = primal.q_star(t, v);
                double dgain = th * tg.dt + buf.dW1[k];
                xs += pi * dgain;
                logm_s += -th * buf.dW1[k] - q * buf.dW2[k] - 0.5 * (th * th + q * q) * tg.dt;
                std::size_t idx = 0;
                for (std::size_t d = 0; d < dirs.size(); ++d) {
                    double pdir = dirs[d](t, v);
                    for (double e : epsilons) {
                        double pie = pi + e * pdir;
                        double qe = q + e * pdir;
                        x[idx] += pie * dgain;
                        logm[idx] += -th * buf.dW1[k] - qe * buf.dW2[k] -
                                     0.5 * (th * th + qe * qe) * tg.dt;
                        ++idx;
                    }
                }
            }
            double vT = buf.V[steps];
            double P = primal.endowment.eval_factor(vT);
            u_star[p] = U.value(T, vT, xs + P);
            u_zero[p] = U.value(T, vT, x0c + P);
            double m_s = std::exp(logm_s);
            ud_star[p] = U.conjugate(T, vT, eta_hat * m_s) + eta_hat * m_s * P;
            for (std::size_t idx = 0; idx < n_var; ++idx) {
                u_pert[idx][p] = U.value(T, vT, x[idx] + P);
                double m = std::exp(logm[idx]);
                ud_pert[idx][p] = U.conjugate(T, vT, eta_hat * m) + eta_hat * m * P;
            }
        }
    });

    OptimalityReport rep;
    rep.eta_hat = eta_hat;
    auto ms_star = mean_se(u_star);
    auto ms_dual = mean_se(ud_star);
    rep.primal_value = ms_star.mean;
    rep.dual_value = ms_dual.mean;

    rep.primal_pass = true;
    rep.dual_pass = true;
    std::vector<double> diff(mc.n_paths);
    std::size_t idx = 0;
    for (std::size_t d = 0; d < dirs.size(); ++d)
        for (double e : epsilons) {
            for (std::size_t p = 0; p < mc.n_paths; ++p) diff[p] = u_pert[idx][p] - u_star[p];
            auto ms = mean_se(diff);
            PerturbationOutcome oc;
            oc.epsilon = e;
            oc.improvement = ms.mean;
            oc.se = ms.se;
            oc.pass = ms.mean <= 3.0 * ms.se;
            rep.primal_pass = rep.primal_pass && oc.pass;
            rep.primal.push_back(oc);

            for (std::size_t p = 0; p < mc.n_paths; ++p) diff[p] = ud_pert[idx][p] - ud_star[p];
            auto msd = mean_se(diff);
            PerturbationOutcome od;
            od.epsilon = e;
            od.improvement = -msd.mean;  // dual improves by decreasing
            od.se = msd.se;
            od.pass = -msd.mean <= 3.0 * msd.se;
            rep.dual_pass = rep.dual_pass && od.pass;
            rep.dual.push_back(od);
            ++idx;
        }

    // bidual gap |u^P - (u~^P + xi eta_hat)|
    std::vector<double> gap(mc.n_paths);
    for (std::size_t p = 0; p < mc.n_paths; ++p)
        gap[p] = u_star[p] - (ud_star[p] + primal.xi * eta_hat);
    auto msg = mean_se(gap);
    rep.bidual_gap = std::fabs(msg.mean);
    rep.bidual_se = msg.se;
    rep.bidual_pass = rep.bidual_gap <= 3.0 * msg.se;

    // negative control: pi = 0 must lose when theta is not identically zero
    std::vector<double> shortfall(mc.n_paths);
    for (std::size_t p = 0; p < mc.n_paths; ++p) shortfall[p] = u_star[p] - u_zero[p];
    auto mss = mean_se(shortfall);
    rep.negative_control_shortfall_se = mss.se > 0.0 ? mss.mean / mss.se : 0.0;
    rep.negative_control_pass = rep.negative_control_shortfall_se > 3.0;
    return rep;
}

SelfGenerationReport verify_self_generation(const ExpForwardProcess& U, double eta,
                                            const PathEnsemble& ensemble, double x0,
                                            bool check_inf_side, std::uint64_t seed) {
    (void)x0;
    SelfGenerationReport rep;
    const auto& erg = U.ergodic();
    auto q_star = ControlPath::feedback(
        [&erg](double, double v) { return -erg.z2_at(v); }, erg.z_sup() + 1.0, "q_star_p0");
    auto pi0 = ControlPath::constant(0.0, 1.0);
    auto term = terminal_functionals(ensemble, pi0, q_star, 0.0, 0);
    const double T = ensemble.grid().horizon();
    const double t0 = ensemble.grid().t0;
    double target = U.conjugate(t0, ensemble.v0(), eta);
    std::vector<double> vals(term.size());
    for (std::size_t p = 0; p < term.size(); ++p)
        vals[p] = U.conjugate(T, term[p].V_T, eta * term[p].M_T);
    auto ms = mean_se(vals);
    rep.statistic = ms.se > 0.0 ? std::fabs(ms.mean - target) / ms.se : std::fabs(ms.mean - target);
    rep.pass = rep.statistic <= 4.0;

    if (check_inf_side) {
        std::mt19937_64 rng(splitmix64(seed ^ 0x51dee1ull));
        Direction dir = random_direction(rng);
        auto q_rand = ControlPath::feedback(
            [dir](double t, double v) { return 0.7 * dir(t, v); }, 1.0, "q_random");
        auto term2 = terminal_functionals(ensemble, pi0, q_rand, 0.0, 0);
        for (std::size_t p = 0; p < term2.size(); ++p)
            vals[p] = U.conjugate(T, term2[p].V_T, eta * term2[p].M_T);
        auto ms2 = mean_se(vals);
        rep.inf_side_margin_se = ms2.se > 0.0 ? (ms2.mean - target) / ms2.se : 0.0;
        rep.pass = rep.pass && rep.inf_side_margin_se >= -3.0;
    }
    return rep;
}

double verify_marginal_martingale(const PrimalSolution& primal, const ExpForwardProcess& U,
                          const McSpec& mc) {
    if (primal.regime != Regime::Exponential)
        throw SolverError("verify_marginal_martingale: implemented for the exponential regime");
    const double t0 = primal.t0, T = primal.T;
    const std::size_t steps = static_cast<std::size_t>(std::lround((T - t0) / mc.dt));
    TimeGrid tg{t0, (T - t0) / static_cast<double>(steps), steps};
    PathEnsemble ens(primal.model, tg, mc.n_paths, mc.seed, primal.v0);
    std::vector<std::size_t> checkpoints = {steps / 4, steps / 2, (3 * steps) / 4, steps};
    std::vector<std::vector<double>> ux(checkpoints.size(), std::vector<double>(mc.n_paths));

    parallel_for(mc.n_paths, [&](std::size_t lo, std::size_t hi) {
        PathBuffer buf;
        for (std::size_t p = lo; p < hi; ++p) {
            ens.generate(p, buf);
            double x = primal.xi;
            std::size_t ci = 0;
            for (std::size_t k = 0; k <= steps; ++k) {
                double t = tg.time(k);
                double v = buf.V[k];
                while (ci < checkpoints.size() && checkpoints[ci] == k) {
                    double yk = k == steps ? primal.endowment.eval_factor(v)
                                           : primal.y_at(t, v);
                    ux[ci][p] = U.u_x(t, v, x + yk);
                    ++ci;
                }
                if (k < steps)
                    x += primal.pi_star(t, v) * (primal.model.theta(v) * tg.dt + buf.dW1[k]);
            }
        }
    });

    double eta_hat = U.u_x(t0, primal.v0, primal.xi + primal.Y0);
    double worst = 0.0;
    for (auto& col : ux) {
        auto ms = mean_se(col);
        double stat = ms.se > 0.0 ? std::fabs(ms.mean - eta_hat) / ms.se
                                  : std::fabs(ms.mean - eta_hat);
        worst = std::max(worst, stat);
    }
    return worst;
}

MaturityReport verify_maturity_independence(const MarketModel& model,
                                            std::shared_ptr<const ErgodicSolution> erg,
                                            const EndowmentSpec& endowment, double t0, double T,
                                            double T_prime, double xi, double eta,
                                            const PdeGridSpec& grid, double v0, const McSpec& mc) {
    if (T_prime < T) throw ConfigError("maturity independence: need T' >= T");
    auto primal = solve_exponential_primal(model, erg, endowment, t0, T, grid, v0, xi,
                                           McSpec{2, mc.dt, mc.seed});
    ExpForwardProcess U(model.gamma, erg);
    MaturityReport rep;
    rep.value_T = U.value(t0, v0, xi + primal.Y0);
    rep.dual_value_T = U.conjugate(t0, v0, eta) + eta * primal.Y0;

    if (T_prime == T) {
        rep.value_Tp = rep.value_T;
        rep.dual_value_Tp = rep.dual_value_T;
        rep.statistic = 0.0;
        rep.dual_statistic = 0.0;
        rep.pass = true;
        return rep;
    }

    const double gamma = model.gamma;
    const std::size_t steps = static_cast<std::size_t>(std::lround((T_prime - t0) / mc.dt));
    TimeGrid tg{t0, (T_prime - t0) / static_cast<double>(steps), steps};
    PathEnsemble ens(model, tg, mc.n_paths, mc.seed, v0);
    std::size_t kT = static_cast<std::size_t>(std::lround((T - t0) / tg.dt));

    std::vector<double> uvals(mc.n_paths), dvals(mc.n_paths);
    parallel_for(mc.n_paths, [&](std::size_t lo, std::size_t hi) {
        PathBuffer buf;
        for (std::size_t p = lo; p < hi; ++p) {
            ens.generate(p, buf);
            double x = xi, logm = 0.0, P = 0.0;
            for (std::size_t k = 0; k <= steps; ++k) {
                double t = tg.time(k);
                double v = buf.V[k];
                if (k == kT) P = endowment.eval_factor(v);
                if (k == steps) break;
                double th = model.theta(v);
                double pi, q;
                if (k < kT) {
                    pi = primal.pi_star(t, v);
                    q = primal.q_star(t, v);
                } else {
                    pi = (th + erg->z1_at(v)) / gamma;
                    q = -erg->z2_at(v);
                }
                x += pi * (th * tg.dt + buf.dW1[k]);
                logm += -th * buf.dW1[k] - q * buf.dW2[k] - 0.5 * (th * th + q * q) * tg.dt;
            }
            double vT = buf.V[steps];
            uvals[p] = U.value(T_prime, vT, x + P);
            double m = std::exp(logm);
            dvals[p] = U.conjugate(T_prime, vT, eta * m) + eta * m * P;
        }
    });
    auto msu = mean_se(uvals);
    auto msd = mean_se(dvals);
    rep.value_Tp = msu.mean;
    rep.dual_value_Tp = msd.mean;
    rep.statistic = msu.se > 0.0 ? std::fabs(msu.mean - rep.value_T) / msu.se : 0.0;
    rep.dual_statistic = msd.se > 0.0 ? std::fabs(msd.mean - rep.dual_value_T) / msd.se : 0.0;
    rep.pass = rep.statistic <= 3.0 && rep.dual_statistic <= 3.0;
    return rep;
}

std::vector<double> dual_residual_order_study(const MarketModel& model,
                                              std::shared_ptr<const ErgodicSolution> erg,
                                              const EndowmentSpec& endowment, double t0, double T,
                                              const PdeGridSpec& grid, double v0, double xi,
                                              const std::vector<double>& dts, std::size_t n_paths,
                                              std::uint64_t seed) {
    auto primal = solve_exponential_primal(model, erg, endowment, t0, T, grid, v0, xi,
                                           McSpec{2, dts.front(), seed});
    ExpForwardProcess U(model.gamma, erg);

    // nested Brownian refinement: simulate at the finest dt, aggregate
    double dt_min = *std::min_element(dts.begin(), dts.end());
    std::size_t fine_steps = static_cast<std::size_t>(std::lround((T - t0) / dt_min));
    TimeGrid fine{t0, (T - t0) / static_cast<double>(fine_steps), fine_steps};
    PathEnsemble ens(model, fine, n_paths, seed, v0);

    std::vector<double> out;
    const double rho = model.rho;
    const double orth = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    for (double dt : dts) {
        std::size_t stride = static_cast<std::size_t>(std::lround(dt / fine.dt));
        std::size_t steps = fine_steps / stride;
        double acc = 0.0;
        std::size_t count = 0;
        PathBuffer buf;
        for (std::size_t p = 0; p < n_paths; ++p) {
            ens.generate(p, buf);
            double x = xi, v = v0;
            double dcur = U.u_x(t0, v, x + primal.y_at(t0, v));
            for (std::size_t k = 0; k < steps; ++k) {
                double t = t0 + dt * static_cast<double>(k);
                double dW1 = 0.0, dW2 = 0.0;
                for (std::size_t s = 0; s < stride; ++s) {
                    dW1 += buf.dW1[k * stride + s];
                    dW2 += buf.dW2[k * stride + s];
                }
                double th = model.theta(v);
                double pi = primal.pi_star(t, v);
                double q = primal.q_star(t, v);
                double v_next = v + model.drift_l(v) * dt + rho * dW1 + orth * dW2;
                double x_next = x + pi * (th * dt + dW1);
                double t_next = t + dt;
                double y_next = (k + 1 == steps) ? endowment.eval_factor(v_next)
                                                 : primal.y_at(t_next, v_next);
                double d_next = U.u_x(t_next, v_next, x_next + y_next);
                double eps = d_next - dcur + dcur * (th * dW1 + q * dW2);
                acc += std::fabs(eps);
                ++count;
                v = v_next;
                x = x_next;
                dcur = d_next;
            }
        }
        out.push_back(acc / static_cast<double>(count));
    }
    return out;
}

}  // namespace fpp
