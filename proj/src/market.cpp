#include "fpp/market.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

namespace fpp {

void MarketModel::validate(double v_lo, double v_hi, std::size_t n_grid) const {
    if (!theta.valid() || !drift_l.valid()) throw ConfigError("model: theta and l are required");
    if (!(gamma > 0.0)) throw ConfigError("model: gamma must be positive");
    if (rho < 0.0 || rho > 1.0) throw ConfigError("model: rho must lie in [0,1]");
    if (!(theta_bound > 0.0) && theta.bound() > 0.0)
        throw ConfigError("model: theta_bound must be positive");
    auto vs = linspace(v_lo, v_hi, n_grid);
    for (double v : vs) {
        double th = theta(v);
        if (!std::isfinite(th) || !std::isfinite(drift_l(v)))
            throw SolverError("model evaluation produced a non-finite value");
        if (std::fabs(th) > theta_bound + 1e-12)
            throw ConfigError("model: |theta| exceeds declared theta_bound on grid");
    }
    if (dissipativity > 0.0) {
        for (std::size_t i = 0; i + 1 < vs.size(); ++i) {
            double dv = vs[i + 1] - vs[i];
            double lhs = (drift_l(vs[i + 1]) - drift_l(vs[i])) * dv;
            if (lhs > -dissipativity * dv * dv + 1e-12)
                throw ConfigError("model: drift l fails the declared dissipativity constant");
        }
    }
}

std::uint64_t MarketModel::content_hash() const {
    Fnv1a h;
    theta.hash_into(h);
    drift_l.hash_into(h);
    h.feed(rho);
    h.feed(gamma);
    h.feed(theta_bound);
    h.feed(lipschitz_theta);
    h.feed(dissipativity);
    return h.digest();
}

std::vector<double> TimeGrid::times() const {
    std::vector<double> out(n_steps + 1);
    for (std::size_t k = 0; k <= n_steps; ++k) out[k] = time(k);
    return out;
}

PathEnsemble::PathEnsemble(MarketModel model, TimeGrid grid, std::size_t n_paths,
                           std::uint64_t seed, double v0)
    : model_(std::move(model)), grid_(grid), n_paths_(n_paths), seed_(seed), v0_(v0) {
    if (!(grid.dt > 0.0)) throw ConfigError("grid: dt must be positive");
    if (grid.n_steps == 0) throw ConfigError("grid: dt >= horizon - t0 leaves no steps");
    if (n_paths < 1) throw ConfigError("grid: n_paths must be >= 1");
}

void PathEnsemble::generate(std::size_t p, PathBuffer& buf) const {
    const std::size_t n = grid_.n_steps;
    buf.dW1.resize(n);
    buf.dW2.resize(n);
    buf.V.resize(n + 1);
    // Per-path generator derived from (seed, path_id); adding paths never
    // reshuffles existing ones.
    std::mt19937_64 rng(splitmix64(seed_ ^ splitmix64(0x9e3779b97f4a7c15ull + p)));
    std::normal_distribution<double> gauss(0.0, 1.0);
    const double sdt = std::sqrt(grid_.dt);
    const double rho = model_.rho;
    const double orth = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    double v = v0_;
    buf.V[0] = v;
    for (std::size_t k = 0; k < n; ++k) {
        double z1 = gauss(rng) * sdt;
        double z2 = gauss(rng) * sdt;
        buf.dW1[k] = z1;
        buf.dW2[k] = z2;
        double drift = model_.drift_l(v);
        if (!std::isfinite(drift)) throw SolverError("factor drift evaluation is non-finite");
        v = v + drift * grid_.dt + rho * z1 + orth * z2;
        buf.V[k + 1] = v;
    }
}

double PathEnsemble::increment_mean_statistic() const {
    const std::size_t n = grid_.n_steps;
    std::vector<double> sum1(n, 0.0), sum2(n, 0.0);
    PathBuffer buf;
    for (std::size_t p = 0; p < n_paths_; ++p) {
        generate(p, buf);
        for (std::size_t k = 0; k < n; ++k) {
            sum1[k] += buf.dW1[k];
            sum2[k] += buf.dW2[k];
        }
    }
    double scale = std::sqrt(grid_.dt / static_cast<double>(n_paths_));
    double worst = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        worst = std::max(worst, std::fabs(sum1[k] / static_cast<double>(n_paths_)) / scale);
        worst = std::max(worst, std::fabs(sum2[k] / static_cast<double>(n_paths_)) / scale);
    }
    return worst;
}

bool PathEnsemble::euler_consistent(std::size_t p) const {
    PathBuffer buf;
    generate(p, buf);
    const double rho = model_.rho;
    const double orth = std::sqrt(std::max(0.0, 1.0 - rho * rho));
    double v = v0_;
    for (std::size_t k = 0; k < grid_.n_steps; ++k) {
        v = v + model_.drift_l(v) * grid_.dt + rho * buf.dW1[k] + orth * buf.dW2[k];
        if (v != buf.V[k + 1]) return false;
    }
    return true;
}

std::uint64_t PathEnsemble::content_hash() const {
    Fnv1a h;
    h.feed(model_.content_hash());
    h.feed(grid_.t0);
    h.feed(grid_.dt);
    h.feed(static_cast<std::uint64_t>(grid_.n_steps));
    h.feed(static_cast<std::uint64_t>(n_paths_));
    h.feed(seed_);
    h.feed(v0_);
    return h.digest();
}

ControlPath ControlPath::constant(double value, double bound) {
    ControlPath c;
    c.kind_ = Kind::Constant;
    c.bound_ = std::fabs(bound);
    c.const_value_ = std::clamp(value, -c.bound_, c.bound_);
    c.clipped_ = std::make_shared<std::atomic<bool>>(c.const_value_ != value);
    c.label_ = "constant";
    return c;
}

ControlPath ControlPath::feedback(std::function<double(double, double)> rule, double bound,
                                  std::string label) {
    ControlPath c;
    c.kind_ = Kind::Feedback;
    c.bound_ = std::fabs(bound);
    c.rule_ = std::move(rule);
    c.label_ = std::move(label);
    c.clipped_ = std::make_shared<std::atomic<bool>>(false);
    return c;
}

ControlPath ControlPath::matrix(std::vector<double> values, std::size_t n_paths,
                                std::size_t n_steps, double bound) {
    if (values.size() != n_paths * n_steps)
        throw ConfigError("control matrix: size does not match n_paths * n_steps");
    ControlPath c;
    c.kind_ = Kind::Matrix;
    c.bound_ = std::fabs(bound);
    c.values_ = std::move(values);
    c.n_steps_ = n_steps;
    c.label_ = "matrix";
    c.clipped_ = std::make_shared<std::atomic<bool>>(false);
    return c;
}

double ControlPath::value(std::size_t p, std::size_t k, double t, double v) const {
    double raw;
    switch (kind_) {
        case Kind::Constant: return const_value_;
        case Kind::Feedback: raw = rule_(t, v); break;
        case Kind::Matrix: raw = values_[p * n_steps_ + k]; break;
        default: raw = 0.0;
    }
    double clamped = std::clamp(raw, -bound_, bound_);
    if (clamped != raw && clipped_) clipped_->store(true, std::memory_order_relaxed);
    return clamped;
}

namespace {

constexpr std::size_t kMaxMatrixEntries = 200'000'000;

void check_matrix_size(const PathEnsemble& ens) {
    std::size_t entries = ens.n_paths() * (ens.grid().n_steps + 1);
    if (entries > kMaxMatrixEntries)
        throw SolverError("full path matrix too large; use the streaming functionals");
}

}  // namespace

std::vector<double> wealth_path(const PathEnsemble& ens, const ControlPath& pi, double x0) {
    check_matrix_size(ens);
    const std::size_t n = ens.grid().n_steps;
    const double dt = ens.grid().dt;
    std::vector<double> out(ens.n_paths() * (n + 1));
    parallel_for(ens.n_paths(), [&](std::size_t lo, std::size_t hi) {
        PathBuffer buf;
        for (std::size_t p = lo; p < hi; ++p) {
            ens.generate(p, buf);
            double x = x0;
            double* row = out.data() + p * (n + 1);
            row[0] = x;
            for (std::size_t k = 0; k < n; ++k) {
                double t = ens.grid().time(k);
                double c = pi.value(p, k, t, buf.V[k]);
                x += c * (ens.model().theta(buf.V[k]) * dt + buf.dW1[k]);
                row[k + 1] = x;
            }
        }
    });
    return out;
}

std::vector<double> density_path(const PathEnsemble& ens, const ControlPath& q,
                                 std::size_t t_index) {
    check_matrix_size(ens);
    const std::size_t n = ens.grid().n_steps;
    if (t_index > n) throw ConfigError("density_path: t_index beyond grid");
    const double dt = ens.grid().dt;
    std::vector<double> out(ens.n_paths() * (n + 1), 0.0);
    parallel_for(ens.n_paths(), [&](std::size_t lo, std::size_t hi) {
        PathBuffer buf;
        for (std::size_t p = lo; p < hi; ++p) {
            ens.generate(p, buf);
            double* row = out.data() + p * (n + 1);
            double logm = 0.0;
            row[t_index] = 1.0;
            for (std::size_t k = t_index; k < n; ++k) {
                double t = ens.grid().time(k);
                double th = ens.model().theta(buf.V[k]);
                double qq = q.value(p, k, t, buf.V[k]);
                logm += -th * buf.dW1[k] - qq * buf.dW2[k] - 0.5 * (th * th + qq * qq) * dt;
                if (!std::isfinite(logm) || logm > 700.0)
                    throw SolverError("density_path: log accumulation out of numeric range");
                row[k + 1] = std::exp(logm);
            }
        }
    });
    return out;
}

std::vector<WealthDensityTerminal> terminal_functionals(const PathEnsemble& ens,
                                                        const ControlPath& pi,
                                                        const ControlPath& q, double x0,
                                                        std::size_t t_index) {
    const std::size_t n = ens.grid().n_steps;
    if (t_index > n) throw ConfigError("terminal_functionals: t_index beyond grid");
    const double dt = ens.grid().dt;
    std::vector<WealthDensityTerminal> out(ens.n_paths());
    parallel_for(ens.n_paths(), [&](std::size_t lo, std::size_t hi) {
        PathBuffer buf;
        for (std::size_t p = lo; p < hi; ++p) {
            ens.generate(p, buf);
            double x = x0, a = 0.0, logm = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                double t = ens.grid().time(k);
                double th = ens.model().theta(buf.V[k]);
                double cpi = pi.value(p, k, t, buf.V[k]);
                double inc = cpi * (th * dt + buf.dW1[k]);
                x += inc;
                if (k >= t_index) {
                    a += inc;
                    double cq = q.value(p, k, t, buf.V[k]);
                    logm += -th * buf.dW1[k] - cq * buf.dW2[k] - 0.5 * (th * th + cq * cq) * dt;
                }
            }
            out[p].V_T = buf.V[n];
            out[p].X_T = x;
            out[p].A_T = a;
            out[p].logM_T = logm;
            out[p].M_T = std::exp(logm);
        }
    });
    return out;
}

double martingale_residual(const std::vector<double>& M_T, const std::vector<double>& A_T) {
    if (M_T.size() != A_T.size() || M_T.empty())
        throw ConfigError("martingale_residual: mismatched inputs");
    std::vector<double> prod(M_T.size());
    for (std::size_t i = 0; i < M_T.size(); ++i) prod[i] = M_T[i] * A_T[i];
    return t_statistic(mean_se(prod));
}

double martingale_residual(const PathEnsemble& ens, const ControlPath& pi, const ControlPath& q,
                           std::size_t t_index) {
    auto term = terminal_functionals(ens, pi, q, 0.0, t_index);
    std::vector<double> prod(term.size());
    for (std::size_t i = 0; i < term.size(); ++i) prod[i] = term[i].M_T * term[i].A_T;
    return t_statistic(mean_se(prod));
}

std::vector<double> martingale_residual_batch(
    const PathEnsemble& ens, const std::vector<std::pair<ControlPath, ControlPath>>& pairs,
    std::size_t t_index) {
    const std::size_t n = ens.grid().n_steps;
    if (t_index > n) throw ConfigError("martingale_residual_batch: t_index beyond grid");
    const std::size_t K = pairs.size();
    const double dt = ens.grid().dt;
    std::vector<std::vector<double>> prod(K, std::vector<double>(ens.n_paths()));
    parallel_for(ens.n_paths(), [&](std::size_t lo, std::size_t hi) {
        PathBuffer buf;
        std::vector<double> a(K), logm(K);
        for (std::size_t p = lo; p < hi; ++p) {
            ens.generate(p, buf);
            std::fill(a.begin(), a.end(), 0.0);
            std::fill(logm.begin(), logm.end(), 0.0);
            for (std::size_t k = t_index; k < n; ++k) {
                double t = ens.grid().time(k);
                double v = buf.V[k];
                double th = ens.model().theta(v);
                for (std::size_t i = 0; i < K; ++i) {
                    double cpi = pairs[i].first.value(p, k, t, v);
                    double cq = pairs[i].second.value(p, k, t, v);
                    a[i] += cpi * (th * dt + buf.dW1[k]);
                    logm[i] += -th * buf.dW1[k] - cq * buf.dW2[k] -
                               0.5 * (th * th + cq * cq) * dt;
                }
            }
            for (std::size_t i = 0; i < K; ++i) prod[i][p] = std::exp(logm[i]) * a[i];
        }
    });
    std::vector<double> out(K);
    for (std::size_t i = 0; i < K; ++i) out[i] = t_statistic(mean_se(prod[i]));
    return out;
}

void PathEnsemble::export_terminal_csv(const std::string& path, const ControlPath& pi,
                                       const ControlPath& q, double x0) const {
    auto term = terminal_functionals(*this, pi, q, x0, 0);
    std::ofstream out(path);
    if (!out) throw SolverError("cannot open for writing: " + path);
    out << "path_id,V_T,X_T,M_T\n";
    char line[128];
    for (std::size_t p = 0; p < term.size(); ++p) {
        std::snprintf(line, sizeof line, "%zu,%.17g,%.17g,%.17g\n", p, term[p].V_T, term[p].X_T,
                      term[p].M_T);
        out << line;
    }
}

void PathEnsemble::save_cache(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw SolverError("cannot open cache for writing: " + path);
    std::uint64_t key = content_hash();
    std::uint64_t np = n_paths_, ns = grid_.n_steps;
    out.write(reinterpret_cast<const char*>(&key), sizeof key);
    out.write(reinterpret_cast<const char*>(&np), sizeof np);
    out.write(reinterpret_cast<const char*>(&ns), sizeof ns);
    PathBuffer buf;
    for (std::size_t p = 0; p < n_paths_; ++p) {
        generate(p, buf);
        out.write(reinterpret_cast<const char*>(buf.V.data()),
                  static_cast<std::streamsize>(buf.V.size() * sizeof(double)));
    }
}

bool PathEnsemble::load_cache_check(const std::string& path, std::uint64_t expected_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) return false;
    std::uint64_t key = 0;
    in.read(reinterpret_cast<char*>(&key), sizeof key);
    return in.good() && key == expected_hash;
}

}  // namespace fpp
