#include "fpp/forward_core.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

namespace fpp {

ExpForwardProcess::ExpForwardProcess(double gamma, std::shared_ptr<const ErgodicSolution> ergodic)
    : gamma_(gamma), erg_(std::move(ergodic)),
      extrapolated_(std::make_shared<std::atomic<bool>>(false)) {
    if (!(gamma_ > 0.0)) throw ConfigError("exponential forward process: gamma must be positive");
    if (!erg_) throw ConfigError("exponential forward process: missing ergodic solution");
}

double ExpForwardProcess::offset(double t, double v) const {
    if (v < erg_->grid.lo || v > erg_->grid.hi)
        extrapolated_->store(true, std::memory_order_relaxed);
    return erg_->y_at(v) - erg_->lambda * t;
}

double ExpForwardProcess::value(double t, double v, double x) const {
    return -std::exp(-gamma_ * x + offset(t, v));
}

double ExpForwardProcess::u_x(double t, double v, double x) const {
    return gamma_ * std::exp(-gamma_ * x + offset(t, v));
}

double ExpForwardProcess::u_xx(double t, double v, double x) const {
    return -gamma_ * gamma_ * std::exp(-gamma_ * x + offset(t, v));
}

double ExpForwardProcess::u_xxx(double t, double v, double x) const {
    return gamma_ * gamma_ * gamma_ * std::exp(-gamma_ * x + offset(t, v));
}

double ExpForwardProcess::conjugate(double t, double v, double z) const {
    if (!(z > 0.0)) throw std::domain_error("conjugate: z must be positive");
    double zg = z / gamma_;
    return -zg + zg * std::log(zg) - zg * offset(t, v);
}

double ExpForwardProcess::conjugate_z(double t, double v, double z) const {
    if (!(z > 0.0)) throw std::domain_error("conjugate_z: z must be positive");
    return (std::log(z / gamma_) - offset(t, v)) / gamma_;
}

double ExpForwardProcess::conjugate_zz(double, double, double z) const {
    if (!(z > 0.0)) throw std::domain_error("conjugate_zz: z must be positive");
    return 1.0 / (gamma_ * z);
}

double ExpForwardProcess::conjugate_zzz(double, double, double z) const {
    if (!(z > 0.0)) throw std::domain_error("conjugate_zzz: z must be positive");
    return -1.0 / (gamma_ * z * z);
}

double ExpForwardProcess::alpha_x(int i, double t, double v, double x) const {
    double ze = (i == 1) ? erg_->z1_at(v) : erg_->z2_at(v);
    return u_x(t, v, x) * ze;
}

double ExpForwardProcess::alpha_tilde_z(int i, double v) const {
    double ze = (i == 1) ? erg_->z1_at(v) : erg_->z2_at(v);
    return -ze / gamma_;
}

namespace {

void check_sampled_concavity(const std::function<double(double)>& u_slice, double lo, double hi) {
    const int n = 33;
    double h = (hi - lo) / (n - 1);
    double prev2 = u_slice(lo), prev1 = u_slice(lo + h);
    for (int i = 2; i < n; ++i) {
        double cur = u_slice(lo + h * i);
        double second = cur - 2.0 * prev1 + prev2;
        double scale = std::max({1.0, std::fabs(cur), std::fabs(prev1), std::fabs(prev2)});
        if (second > 1e-7 * scale)
            throw SolverError("fenchel transform: slice is not concave on the search box");
        prev2 = prev1;
        prev1 = cur;
    }
}

}  // namespace

FenchelResult fenchelize(const std::function<double(double)>& u_slice, double z, double lo,
                         double hi, const std::function<double(double)>& u_slice_dx,
                         bool allow_doubling) {
    check_sampled_concavity(u_slice, lo, hi);
    auto objective = [&](double x) { return u_slice(x) - x * z; };
    FenchelResult out;
    for (int attempt = 0;; ++attempt) {
        auto g = golden_section_max(objective, lo, hi, 1e-10);
        if (!g.boundary) {
            out.x_star = g.x;
            out.value = g.value;
            out.doublings = attempt;
            break;
        }
        if (!allow_doubling || attempt >= 6)
            throw SolverError("fenchel transform: maximizer at box boundary; box too small");
        double mid = 0.5 * (lo + hi), half = (hi - lo);
        lo = mid - half;
        hi = mid + half;
    }
    if (u_slice_dx) {
        // Newton polish on u'(x) = z sharpens the flat-top golden-section
        // maximizer by several digits.
        double x = out.x_star;
        for (int it = 0; it < 30; ++it) {
            double h = std::max(1e-6, 1e-6 * std::fabs(x));
            double g1 = u_slice_dx(x) - z;
            double g2 = (u_slice_dx(x + h) - u_slice_dx(x - h)) / (2.0 * h);
            if (g2 == 0.0) break;
            double step = g1 / g2;
            x -= step;
            if (std::fabs(step) < 1e-14 * std::max(1.0, std::fabs(x))) break;
        }
        if (std::isfinite(x) && x > lo && x < hi) {
            double val = objective(x);
            if (val >= out.value - 1e-12) {
                out.x_star = x;
                out.value = val;
            }
        }
    }
    return out;
}

FenchelResult fenchel_conjugate_numeric(const std::function<double(double)>& u_slice, double z,
                                        double box_lo, double box_hi,
                                        const std::function<double(double)>& u_slice_dx) {
    if (!(box_hi > box_lo)) throw ConfigError("fenchel transform: empty search box");
    return fenchelize(u_slice, z, box_lo, box_hi, u_slice_dx, true);
}

double bidual_numeric(const std::function<double(double)>& tilde, double x, double z_lo,
                      double z_hi) {
    if (!(z_lo > 0.0) || !(z_hi > z_lo)) throw ConfigError("bidual: need 0 < z_lo < z_hi");
    // minimize over log z to respect positivity
    auto neg = [&](double s) { return -(tilde(std::exp(s)) + x * std::exp(s)); };
    auto g = golden_section_max(neg, std::log(z_lo), std::log(z_hi), 1e-12);
    if (g.boundary) throw SolverError("bidual: minimizer at the z-box boundary");
    return -g.value;
}

ConjugatePair ConjugatePair::from_exponential(const ExpForwardProcess& p) {
    ConjugatePair c;
    auto sp = std::make_shared<ExpForwardProcess>(p);
    c.u = [sp](double t, double v, double x) { return sp->value(t, v, x); };
    c.u_x = [sp](double t, double v, double x) { return sp->u_x(t, v, x); };
    c.u_xx = [sp](double t, double v, double x) { return sp->u_xx(t, v, x); };
    c.u_xxx = [sp](double t, double v, double x) { return sp->u_xxx(t, v, x); };
    c.tilde = [sp](double t, double v, double z) { return sp->conjugate(t, v, z); };
    c.tilde_z = [sp](double t, double v, double z) { return sp->conjugate_z(t, v, z); };
    c.tilde_zz = [sp](double t, double v, double z) { return sp->conjugate_zz(t, v, z); };
    c.tilde_zzz = [sp](double t, double v, double z) { return sp->conjugate_zzz(t, v, z); };
    return c;
}

double DualRelationReport::max_abs() const {
    return std::max({dr1_primal, dr1_dual, dr0_primal, dr0_dual, dr5_primal, dr5_dual,
                     dr5p_primal, dr5p_dual});
}

DualRelationReport dual_relation_residuals(const ConjugatePair& pair,
                                           const std::vector<std::array<double, 3>>& points) {
    DualRelationReport r;
    for (const auto& p : points) {
        double t = p[0], v = p[1], x = p[2];
        double z = pair.u_x(t, v, x);
        double xz = -pair.tilde_z(t, v, z);
        r.dr1_primal = std::max(r.dr1_primal, std::fabs(xz - x));
        r.dr1_dual = std::max(r.dr1_dual, std::fabs(pair.u_x(t, v, xz) - z));
        r.dr0_primal = std::max(
            r.dr0_primal, std::fabs(pair.u(t, v, x) - pair.tilde(t, v, z) - x * z));
        r.dr0_dual = std::max(
            r.dr0_dual,
            std::fabs(pair.tilde(t, v, z) - pair.u(t, v, xz) - z * pair.tilde_z(t, v, z)));
        double uxx = pair.u_xx(t, v, x);
        r.dr5_primal = std::max(r.dr5_primal, std::fabs(pair.tilde_zz(t, v, z) + 1.0 / uxx));
        r.dr5_dual = std::max(
            r.dr5_dual, std::fabs(pair.u_xx(t, v, xz) + 1.0 / pair.tilde_zz(t, v, z)));
        r.dr5p_primal = std::max(
            r.dr5p_primal,
            std::fabs(pair.tilde_zzz(t, v, z) - pair.u_xxx(t, v, x) / (uxx * uxx * uxx)));
        double tzz = pair.tilde_zz(t, v, z);
        r.dr5p_dual = std::max(
            r.dr5p_dual,
            std::fabs(pair.u_xxx(t, v, xz) + pair.tilde_zzz(t, v, z) / (tzz * tzz * tzz)));
    }
    return r;
}

double MarkovianForwardField::psi(double t, double v, double x, double theta_v, double rho) const {
    return (u_x(t, v, x) * theta_v + rho * u_xv(t, v, x)) / u_xx(t, v, x);
}

double MarkovianForwardField::phi1(double t, double v, double x) const {
    return u_xxx(t, v, x) / u_xx(t, v, x);
}

double MarkovianForwardField::phi2(double t, double v, double x) const {
    return u_xxv(t, v, x) / u_xx(t, v, x);
}

MarkovianForwardField::Bounds MarkovianForwardField::measure_bounds(double rho) const {
    Bounds b;
    b.C_l = std::numeric_limits<double>::infinity();
    b.phi1_min = std::numeric_limits<double>::infinity();
    b.phi1_max = -std::numeric_limits<double>::infinity();
    b.phi1_x_max = -std::numeric_limits<double>::infinity();
    for (double t : grid_t)
        for (double v : grid_v)
            for (double x : grid_x) {
                double ux = u_x(t, v, x), uxx = u_xx(t, v, x);
                if (!(ux > 0.0) || !(uxx < 0.0)) {
                    b.monotone_concave = false;
                    throw InvariantError("field: u_x > 0 / u_xx < 0 fails on the grid");
                }
                double tol_r = -ux / uxx;
                b.C_l = std::min(b.C_l, tol_r);
                b.C_u = std::max(b.C_u, tol_r);
                b.C_alpha = std::max(b.C_alpha, std::fabs(u_xv(t, v, x) / uxx));
                double p1 = phi1(t, v, x), p2 = phi2(t, v, x);
                b.phi1_min = std::min(b.phi1_min, p1);
                b.phi1_max = std::max(b.phi1_max, p1);
                b.phi2_abs_max = std::max(b.phi2_abs_max, std::fabs(p2));
                double p1x = phi1_x(t, v, x), p2x = phi2_x(t, v, x);
                b.phi1_x_max = std::max(b.phi1_x_max, p1x);
                b.phi2_x_abs_max = std::max(b.phi2_x_abs_max, std::fabs(p2x));
                if (p1x < 0.0) {
                    double k = 0.5 * (1.0 - rho * rho) * p2x * p2x / (-p1x);
                    b.K = std::max(b.K, k);
                }
            }
    return b;
}

double MarkovianForwardField::hjb_residual(const ScalarFn& theta, const ScalarFn& drift_l,
                                           double rho) const {
    double worst = 0.0;
    for (std::size_t it = 1; it + 1 < std::max<std::size_t>(grid_t.size(), 2); ++it)
        for (std::size_t iv = 1; iv + 1 < grid_v.size(); ++iv)
            for (std::size_t ix = 1; ix + 1 < grid_x.size(); ++ix) {
                double t = grid_t[std::min(it, grid_t.size() - 1)];
                double v = grid_v[iv], x = grid_x[ix];
                double num = u_x(t, v, x) * theta(v) + rho * u_xv(t, v, x);
                double r = u_t(t, v, x) - 0.5 * num * num / u_xx(t, v, x) +
                           0.5 * u_vv(t, v, x) + drift_l(v) * u_v(t, v, x);
                worst = std::max(worst, std::fabs(r));
            }
    return worst;
}

MarkovianForwardField MarkovianForwardField::exponential_embedded(
    double gamma, std::shared_ptr<const ErgodicSolution> erg, std::vector<double> grid_t,
    std::vector<double> grid_v, std::vector<double> grid_x) {
    MarkovianForwardField f;
    f.family = "exponential_embedded";
    f.hjb_exact = true;
    f.grid_t = std::move(grid_t);
    f.grid_v = std::move(grid_v);
    f.grid_x = std::move(grid_x);
    auto e = [gamma, erg](double t, double v, double x) {
        return std::exp(-gamma * x + erg->y_at(v) - erg->lambda * t);
    };
    auto dy = [erg](double v) { return erg->dy_at(v); };
    auto d2y = [erg](double v) {
        double h = erg->grid.spacing();
        return (erg->dy_at(v + 0.5 * h) - erg->dy_at(v - 0.5 * h)) / h;
    };
    f.u = [e](double t, double v, double x) { return -e(t, v, x); };
    f.u_t = [e, erg](double t, double v, double x) { return erg->lambda * e(t, v, x); };
    f.u_v = [e, dy](double t, double v, double x) { return -dy(v) * e(t, v, x); };
    f.u_vv = [e, dy, d2y](double t, double v, double x) {
        return -(d2y(v) + dy(v) * dy(v)) * e(t, v, x);
    };
    f.u_x = [e, gamma](double t, double v, double x) { return gamma * e(t, v, x); };
    f.u_xx = [e, gamma](double t, double v, double x) { return -gamma * gamma * e(t, v, x); };
    f.u_xxx = [e, gamma](double t, double v, double x) {
        return gamma * gamma * gamma * e(t, v, x);
    };
    f.u_xv = [e, gamma, dy](double t, double v, double x) { return gamma * dy(v) * e(t, v, x); };
    f.u_xxv = [e, gamma, dy](double t, double v, double x) {
        return -gamma * gamma * dy(v) * e(t, v, x);
    };
    f.phi1_x = [](double, double, double) { return 0.0; };
    f.phi2_x = [](double, double, double) { return 0.0; };
    return f;
}

MarkovianForwardField MarkovianForwardField::additive_heat(double a, double c0, double c1,
                                                           std::vector<double> grid_t,
                                                           std::vector<double> grid_v,
                                                           std::vector<double> grid_x) {
    MarkovianForwardField f;
    f.family = "additive_heat";
    f.hjb_exact = true;
    f.grid_t = std::move(grid_t);
    f.grid_v = std::move(grid_v);
    f.grid_x = std::move(grid_x);
    auto F = [a, c0, c1](double t, double v) { return c0 + c1 * std::exp(a * v - 0.5 * a * a * t); };
    f.u = [F](double t, double v, double x) { return -std::exp(-x) + F(t, v); };
    f.u_t = [a, c1](double t, double v, double) {
        return -0.5 * a * a * c1 * std::exp(a * v - 0.5 * a * a * t);
    };
    f.u_v = [a, c1](double t, double v, double) {
        return a * c1 * std::exp(a * v - 0.5 * a * a * t);
    };
    f.u_vv = [a, c1](double t, double v, double) {
        return a * a * c1 * std::exp(a * v - 0.5 * a * a * t);
    };
    f.u_x = [](double, double, double x) { return std::exp(-x); };
    f.u_xx = [](double, double, double x) { return -std::exp(-x); };
    f.u_xxx = [](double, double, double x) { return std::exp(-x); };
    f.u_xv = [](double, double, double) { return 0.0; };
    f.u_xxv = [](double, double, double) { return 0.0; };
    f.phi1_x = [](double, double, double) { return 0.0; };
    f.phi2_x = [](double, double, double) { return 0.0; };
    return f;
}

MarkovianForwardField MarkovianForwardField::shifted_concave(double a, double b, double eps,
                                                             std::vector<double> grid_t,
                                                             std::vector<double> grid_v,
                                                             std::vector<double> grid_x) {
    if (!(a > std::fabs(b))) throw ConfigError("shifted_concave: need a > |b| for kappa' > 0");
    MarkovianForwardField f;
    f.family = "shifted_concave";
    f.hjb_exact = false;
    f.grid_t = std::move(grid_t);
    f.grid_v = std::move(grid_v);
    f.grid_x = std::move(grid_x);

    // utilde'(s) = int_s^inf exp(-kappa(z)) dz on a wide tabulation grid,
    // kappa(z) = a z + b log cosh(z); utilde from a second pass.
    const double lo = -40.0, hi = 40.0;
    const std::size_t n = 16001;
    auto zs = linspace(lo, hi, n);
    double h = zs[1] - zs[0];
    auto kappa = [a, b](double z) { return a * z + b * std::log(std::cosh(z)); };
    std::vector<double> emk(n), du(n), uu(n);
    for (std::size_t i = 0; i < n; ++i) emk[i] = std::exp(-kappa(zs[i]));
    // tail beyond hi: exp(-kappa) ~ exp(-kappa(hi)) / kappa'(hi)
    double kp_hi = a + b * std::tanh(hi);
    du[n - 1] = emk[n - 1] / kp_hi;
    for (std::size_t i = n - 1; i-- > 0;) du[i] = du[i + 1] + 0.5 * (emk[i] + emk[i + 1]) * h;
    uu[n - 1] = -du[n - 1] / kp_hi;  // -int_x^inf utilde' ~ geometric tail
    for (std::size_t i = n - 1; i-- > 0;) uu[i] = uu[i + 1] - 0.5 * (du[i] + du[i + 1]) * h;

    auto ut = std::make_shared<std::vector<double>>(std::move(uu));
    auto utp = std::make_shared<std::vector<double>>(std::move(du));
    auto shift = [eps](double v) { return eps * std::tanh(v); };
    auto shift_v = [eps](double v) {
        double c = std::cosh(v);
        return eps / (c * c);
    };
    auto kp = [a, b](double s) { return a + b * std::tanh(s); };
    auto kpp = [b](double s) {
        double c = std::cosh(s);
        return b / (c * c);
    };
    auto kppp = [b](double s) {
        double c = std::cosh(s);
        return -2.0 * b * std::tanh(s) / (c * c);
    };

    f.u = [ut, lo, h, shift](double, double v, double x) {
        return lerp_uniform(*ut, lo, h, x + shift(v));
    };
    f.u_t = [](double, double, double) { return 0.0; };
    f.u_x = [utp, lo, h, shift](double, double v, double x) {
        return lerp_uniform(*utp, lo, h, x + shift(v));
    };
    f.u_v = [utp, lo, h, shift, shift_v](double, double v, double x) {
        return lerp_uniform(*utp, lo, h, x + shift(v)) * shift_v(v);
    };
    f.u_xx = [kappa, shift](double, double v, double x) {
        return -std::exp(-kappa(x + shift(v)));
    };
    f.u_xxx = [kappa, kp, shift](double, double v, double x) {
        double s = x + shift(v);
        return kp(s) * std::exp(-kappa(s));
    };
    f.u_xv = [kappa, shift, shift_v](double, double v, double x) {
        return -std::exp(-kappa(x + shift(v))) * shift_v(v);
    };
    f.u_xxv = [kappa, kp, shift, shift_v](double, double v, double x) {
        double s = x + shift(v);
        return kp(s) * std::exp(-kappa(s)) * shift_v(v);
    };
    f.u_vv = [utp, lo, h, kappa, shift, shift_v](double, double v, double x) {
        double s = x + shift(v);
        double sv = shift_v(v);
        double svv = -2.0 * std::tanh(v) * sv;
        double upp = -std::exp(-kappa(s));
        double up = lerp_uniform(*utp, lo, h, s);
        return upp * sv * sv + up * svv;
    };
    // phi1 = -kappa'(x + shift), phi2 = -kappa'(x+shift) * shift_v
    f.phi1_x = [kpp, shift](double, double v, double x) { return -kpp(x + shift(v)); };
    f.phi2_x = [kpp, shift, shift_v](double, double v, double x) {
        return -kpp(x + shift(v)) * shift_v(v);
    };
    (void)kppp;
    return f;
}

MarkovianForwardField MarkovianForwardField::from_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("field csv: cannot open " + path);
    std::map<double, std::size_t> ts, vs, xs;
    std::vector<std::array<double, 4>> rows;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || line.find("t,") == 0) continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        std::array<double, 4> r{};
        if (ls >> r[0] >> r[1] >> r[2] >> r[3]) {
            rows.push_back(r);
            ts.emplace(r[0], 0);
            vs.emplace(r[1], 0);
            xs.emplace(r[2], 0);
        }
    }
    if (rows.empty()) throw ConfigError("field csv: no rows parsed from " + path);
    MarkovianForwardField f;
    f.family = "csv:" + path;
    f.hjb_exact = false;
    auto index = [](std::map<double, std::size_t>& m, std::vector<double>& g) {
        std::size_t i = 0;
        g.reserve(m.size());
        for (auto& kv : m) {
            kv.second = i++;
            g.push_back(kv.first);
        }
    };
    index(ts, f.grid_t);
    index(vs, f.grid_v);
    index(xs, f.grid_x);
    const std::size_t nt = f.grid_t.size(), nv = f.grid_v.size(), nx = f.grid_x.size();
    if (rows.size() != nt * nv * nx)
        throw ConfigError("field csv: rows do not form a complete (t,v,x) lattice");
    auto data = std::make_shared<std::vector<double>>(nt * nv * nx,
                                                      std::numeric_limits<double>::quiet_NaN());
    for (const auto& r : rows)
        (*data)[(ts[r[0]] * nv + vs[r[1]]) * nx + xs[r[2]]] = r[3];

    auto gt = std::make_shared<std::vector<double>>(f.grid_t);
    auto gv = std::make_shared<std::vector<double>>(f.grid_v);
    auto gx = std::make_shared<std::vector<double>>(f.grid_x);

    auto locate = [](const std::vector<double>& g, double q) {
        auto it = std::upper_bound(g.begin(), g.end(), q);
        std::size_t i = it == g.begin() ? 0 : static_cast<std::size_t>(it - g.begin()) - 1;
        return std::min(i, g.size() >= 2 ? g.size() - 2 : std::size_t{0});
    };
    // trilinear interpolation of u; derivatives by central differences on
    // the lattice and trilinear interpolation of those
    auto interp = [data, gt, gv, gx, locate, nv, nx](double t, double v, double x) {
        std::size_t it = locate(*gt, t), iv = locate(*gv, v), ix = locate(*gx, x);
        auto val = [&](std::size_t a, std::size_t b, std::size_t c) {
            return (*data)[(a * nv + b) * nx + c];
        };
        double wt = gt->size() < 2 ? 0.0 : ((t - (*gt)[it]) / ((*gt)[it + 1] - (*gt)[it]));
        double wv = (v - (*gv)[iv]) / ((*gv)[iv + 1] - (*gv)[iv]);
        double wx = (x - (*gx)[ix]) / ((*gx)[ix + 1] - (*gx)[ix]);
        wt = std::clamp(wt, 0.0, 1.0);
        wv = std::clamp(wv, 0.0, 1.0);
        wx = std::clamp(wx, 0.0, 1.0);
        double out = 0.0;
        for (int dt_ = 0; dt_ < 2; ++dt_)
            for (int dv_ = 0; dv_ < 2; ++dv_)
                for (int dx_ = 0; dx_ < 2; ++dx_) {
                    std::size_t a = std::min(it + static_cast<std::size_t>(dt_),
                                             gt->size() - 1);
                    double w = (dt_ ? wt : 1.0 - wt) * (dv_ ? wv : 1.0 - wv) *
                               (dx_ ? wx : 1.0 - wx);
                    out += w * val(a, iv + dv_, ix + dx_);
                }
        return out;
    };
    f.u = interp;
    // Central second-order differences on the lattice itself (one-sided at
    // the boundary), stored as derivative lattices and interpolated; probing
    // the trilinear interpolant with small steps would see zero curvature.
    const std::size_t N = nt * nv * nx;
    auto make_lattice = [&](auto&& node_fn) {
        auto out = std::make_shared<std::vector<double>>(N, 0.0);
        for (std::size_t a = 0; a < nt; ++a)
            for (std::size_t b = 0; b < nv; ++b)
                for (std::size_t c = 0; c < nx; ++c)
                    (*out)[(a * nv + b) * nx + c] = node_fn(a, b, c);
        return out;
    };
    auto val = [data, nv, nx](std::size_t a, std::size_t b, std::size_t c) {
        return (*data)[(a * nv + b) * nx + c];
    };
    auto d1 = [](auto&& get, std::size_t i, std::size_t n, double step_lo, double step_hi) {
        // central where possible, one-sided at the ends
        if (n < 2) return 0.0;
        if (i == 0) return (get(1) - get(0)) / step_hi;
        if (i + 1 >= n) return (get(n - 1) - get(n - 2)) / step_lo;
        return (get(i + 1) - get(i - 1)) / (step_lo + step_hi);
    };
    auto spacing = [](const std::vector<double>& g, std::size_t i, bool up) {
        if (up) return g[std::min(i + 1, g.size() - 1)] - g[std::min(i, g.size() - 2)];
        return g[std::max<std::size_t>(i, 1)] - g[std::max<std::size_t>(i, 1) - 1];
    };
    const auto& Gt = f.grid_t;
    const auto& Gv = f.grid_v;
    const auto& Gx = f.grid_x;
    auto lat_ut = make_lattice([&](std::size_t a, std::size_t b, std::size_t c) {
        return d1([&](std::size_t i) { return val(i, b, c); }, a, nt, spacing(Gt, a, false),
                  spacing(Gt, a, true));
    });
    auto lat_uv = make_lattice([&](std::size_t a, std::size_t b, std::size_t c) {
        return d1([&](std::size_t i) { return val(a, i, c); }, b, nv, spacing(Gv, b, false),
                  spacing(Gv, b, true));
    });
    auto lat_ux = make_lattice([&](std::size_t a, std::size_t b, std::size_t c) {
        return d1([&](std::size_t i) { return val(a, b, i); }, c, nx, spacing(Gx, c, false),
                  spacing(Gx, c, true));
    });
    auto second = [&](auto&& get, std::size_t i, std::size_t n, double h) {
        std::size_t j = std::clamp<std::size_t>(i, 1, n - 2);
        return (get(j + 1) - 2.0 * get(j) + get(j - 1)) / (h * h);
    };
    auto lat_uvv = make_lattice([&](std::size_t a, std::size_t b, std::size_t c) {
        return second([&](std::size_t i) { return val(a, i, c); }, b, nv, spacing(Gv, b, true));
    });
    auto lat_uxx = make_lattice([&](std::size_t a, std::size_t b, std::size_t c) {
        return second([&](std::size_t i) { return val(a, b, i); }, c, nx, spacing(Gx, c, true));
    });
    auto lat_val = [&](std::shared_ptr<std::vector<double>> lat, std::size_t a, std::size_t b,
                       std::size_t c) { return (*lat)[(a * nv + b) * nx + c]; };
    auto lat_uxv = make_lattice([&](std::size_t a, std::size_t b, std::size_t c) {
        return d1([&](std::size_t i) { return lat_val(lat_ux, a, i, c); }, b, nv,
                  spacing(Gv, b, false), spacing(Gv, b, true));
    });
    auto lat_uxxx = make_lattice([&](std::size_t a, std::size_t b, std::size_t c) {
        return d1([&](std::size_t i) { return lat_val(lat_uxx, a, b, i); }, c, nx,
                  spacing(Gx, c, false), spacing(Gx, c, true));
    });
    auto lat_uxxv = make_lattice([&](std::size_t a, std::size_t b, std::size_t c) {
        return d1([&](std::size_t i) { return lat_val(lat_uxx, a, i, c); }, b, nv,
                  spacing(Gv, b, false), spacing(Gv, b, true));
    });

    auto interp_of = [gt, gv, gx, locate, nv, nx](std::shared_ptr<std::vector<double>> lat) {
        return [lat, gt, gv, gx, locate, nv, nx](double t, double v, double x) {
            std::size_t it = locate(*gt, t), iv = locate(*gv, v), ix = locate(*gx, x);
            auto valf = [&](std::size_t a, std::size_t b, std::size_t c) {
                return (*lat)[(a * nv + b) * nx + c];
            };
            double wt = gt->size() < 2 ? 0.0 : ((t - (*gt)[it]) / ((*gt)[it + 1] - (*gt)[it]));
            double wv = (v - (*gv)[iv]) / ((*gv)[iv + 1] - (*gv)[iv]);
            double wx = (x - (*gx)[ix]) / ((*gx)[ix + 1] - (*gx)[ix]);
            wt = std::clamp(wt, 0.0, 1.0);
            wv = std::clamp(wv, 0.0, 1.0);
            wx = std::clamp(wx, 0.0, 1.0);
            double out = 0.0;
            for (int dt_ = 0; dt_ < 2; ++dt_)
                for (int dv_ = 0; dv_ < 2; ++dv_)
                    for (int dx_ = 0; dx_ < 2; ++dx_) {
                        std::size_t a = std::min(it + static_cast<std::size_t>(dt_),
                                                 gt->size() - 1);
                        double w = (dt_ ? wt : 1.0 - wt) * (dv_ ? wv : 1.0 - wv) *
                                   (dx_ ? wx : 1.0 - wx);
                        out += w * valf(a, iv + dv_, ix + dx_);
                    }
            return out;
        };
    };
    f.u_t = interp_of(lat_ut);
    f.u_v = interp_of(lat_uv);
    f.u_vv = interp_of(lat_uvv);
    f.u_x = interp_of(lat_ux);
    f.u_xx = interp_of(lat_uxx);
    f.u_xv = interp_of(lat_uxv);
    f.u_xxx = interp_of(lat_uxxx);
    f.u_xxv = interp_of(lat_uxxv);
    auto phi1_lat = make_lattice([&](std::size_t a, std::size_t b, std::size_t c) {
        double den = lat_val(lat_uxx, a, b, c);
        return den != 0.0 ? lat_val(lat_uxxx, a, b, c) / den : 0.0;
    });
    auto phi2_lat = make_lattice([&](std::size_t a, std::size_t b, std::size_t c) {
        double den = lat_val(lat_uxx, a, b, c);
        return den != 0.0 ? lat_val(lat_uxxv, a, b, c) / den : 0.0;
    });
    auto phi1x_lat = make_lattice([&](std::size_t a, std::size_t b, std::size_t c) {
        return d1([&](std::size_t i) { return lat_val(phi1_lat, a, b, i); }, c, nx,
                  spacing(Gx, c, false), spacing(Gx, c, true));
    });
    auto phi2x_lat = make_lattice([&](std::size_t a, std::size_t b, std::size_t c) {
        return d1([&](std::size_t i) { return lat_val(phi2_lat, a, b, i); }, c, nx,
                  spacing(Gx, c, false), spacing(Gx, c, true));
    });
    f.phi1_x = interp_of(phi1x_lat);
    f.phi2_x = interp_of(phi2x_lat);
    return f;
}

ConjugatePair MarkovianForwardField::conjugate_pair(double box_half_width) const {
    ConjugatePair c;
    MarkovianForwardField f = *this;
    c.u = f.u;
    c.u_x = f.u_x;
    c.u_xx = f.u_xx;
    c.u_xxx = f.u_xxx;
    auto conj = [f, box_half_width](double t, double v, double z) {
        auto slice = [&](double x) { return f.u(t, v, x); };
        auto slice_dx = [&](double x) { return f.u_x(t, v, x); };
        return fenchel_conjugate_numeric(slice, z, -box_half_width, box_half_width, slice_dx);
    };
    c.tilde = [conj](double t, double v, double z) { return conj(t, v, z).value; };
    c.tilde_z = [conj](double t, double v, double z) { return -conj(t, v, z).x_star; };
    auto tz = c.tilde_z;
    c.tilde_zz = [tz](double t, double v, double z) {
        double h = std::max(1e-5, 1e-5 * z);
        return (tz(t, v, z + h) - tz(t, v, z - h)) / (2 * h);
    };
    auto tzz = c.tilde_zz;
    c.tilde_zzz = [tzz](double t, double v, double z) {
        double h = std::max(1e-4, 1e-4 * z);
        return (tzz(t, v, z + h) - tzz(t, v, z - h)) / (2 * h);
    };
    return c;
}

}  // namespace fpp
