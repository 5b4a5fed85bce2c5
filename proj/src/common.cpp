#include "fpp/common.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstring>

namespace fpp {

namespace {

double pairwise_sum_rec(const double* data, std::size_t n) {
    if (n <= 16) {
        double s = 0.0;
        for (std::size_t i = 0; i < n; ++i) s += data[i];
        return s;
    }
    std::size_t half = n / 2;
    return pairwise_sum_rec(data, half) + pairwise_sum_rec(data + half, n - half);
}

unsigned g_default_threads = 0;

}  // namespace

double pairwise_sum(const double* data, std::size_t n) {
    return pairwise_sum_rec(data, n);
}

double pairwise_sum(const std::vector<double>& v) {
    return pairwise_sum_rec(v.data(), v.size());
}

MeanSe mean_se(const std::vector<double>& v) {
    MeanSe out;
    out.n = v.size();
    if (v.empty()) return out;
    out.mean = pairwise_sum(v) / static_cast<double>(v.size());
    if (v.size() < 2) return out;
    std::vector<double> dev2(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
        double d = v[i] - out.mean;
        dev2[i] = d * d;
    }
    double var = pairwise_sum(dev2) / static_cast<double>(v.size() - 1);
    out.sd = std::sqrt(std::max(0.0, var));
    out.se = out.sd / std::sqrt(static_cast<double>(v.size()));
    return out;
}

double t_statistic(const MeanSe& m) {
    if (m.se <= 0.0) return std::fabs(m.mean);
    return std::fabs(m.mean) / m.se;
}

GoldenResult golden_section_max(const std::function<double(double)>& f,
                                double lo, double hi, double xtol) {
    if (!(hi > lo)) throw std::invalid_argument("golden_section_max: empty interval");
    const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
    double a = lo, b = hi;
    double c = b - invphi * (b - a);
    double d = a + invphi * (b - a);
    double fc = f(c), fd = f(d);
    while (b - a > xtol) {
        if (fc > fd) {
            b = d;
            d = c;
            fd = fc;
            c = b - invphi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + invphi * (b - a);
            fd = f(d);
        }
    }
    GoldenResult out;
    out.x = 0.5 * (a + b);
    out.value = f(out.x);
    double span = hi - lo;
    out.boundary = (out.x - lo < 1e-6 * span) || (hi - out.x < 1e-6 * span);
    return out;
}

std::vector<double> linspace(double lo, double hi, std::size_t n) {
    if (n < 2) throw std::invalid_argument("linspace: need at least 2 nodes");
    std::vector<double> out(n);
    double dx = (hi - lo) / static_cast<double>(n - 1);
    for (std::size_t i = 0; i < n; ++i) out[i] = lo + dx * static_cast<double>(i);
    out.back() = hi;
    return out;
}

double lerp_uniform(const std::vector<double>& values, double lo, double dx, double x) {
    const std::size_t n = values.size();
    if (n == 0) throw std::invalid_argument("lerp_uniform: empty table");
    if (n == 1) return values[0];
    double hi = lo + dx * static_cast<double>(n - 1);
    if (x <= lo) {
        double slope = (values[1] - values[0]) / dx;
        return values[0] + slope * (x - lo);
    }
    if (x >= hi) {
        double slope = (values[n - 1] - values[n - 2]) / dx;
        return values[n - 1] + slope * (x - hi);
    }
    double u = (x - lo) / dx;
    std::size_t i = static_cast<std::size_t>(u);
    if (i >= n - 1) i = n - 2;
    double w = u - static_cast<double>(i);
    return values[i] * (1.0 - w) + values[i + 1] * w;
}

std::vector<double> diff1_uniform(const std::vector<double>& y, double dx) {
    const std::size_t n = y.size();
    std::vector<double> d(n, 0.0);
    if (n < 2) return d;
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (y[i + 1] - y[i - 1]) / (2.0 * dx);
    // second-order one-sided at the ends
    if (n >= 3) {
        d[0] = (-3.0 * y[0] + 4.0 * y[1] - y[2]) / (2.0 * dx);
        d[n - 1] = (3.0 * y[n - 1] - 4.0 * y[n - 2] + y[n - 3]) / (2.0 * dx);
    } else {
        d[0] = d[1] = (y[1] - y[0]) / dx;
    }
    return d;
}

std::vector<double> diff2_uniform(const std::vector<double>& y, double dx) {
    const std::size_t n = y.size();
    std::vector<double> d(n, 0.0);
    if (n < 3) return d;
    for (std::size_t i = 1; i + 1 < n; ++i) d[i] = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (dx * dx);
    d[0] = d[1];
    d[n - 1] = d[n - 2];
    return d;
}

void solve_tridiagonal(std::vector<double>& lower, std::vector<double>& diag,
                       std::vector<double>& upper, std::vector<double>& rhs) {
    const std::size_t n = diag.size();
    if (lower.size() != n || upper.size() != n || rhs.size() != n)
        throw std::invalid_argument("solve_tridiagonal: size mismatch");
    for (std::size_t i = 1; i < n; ++i) {
        if (diag[i - 1] == 0.0) throw SolverError("tridiagonal solve: zero pivot");
        double m = lower[i] / diag[i - 1];
        diag[i] -= m * upper[i - 1];
        rhs[i] -= m * rhs[i - 1];
    }
    if (diag[n - 1] == 0.0) throw SolverError("tridiagonal solve: zero pivot");
    rhs[n - 1] /= diag[n - 1];
    for (std::size_t i = n - 1; i-- > 0;) {
        rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
    }
}

void Fnv1a::feed(const void* data, std::size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
        state_ ^= p[i];
        state_ *= 1099511628211ull;
    }
}

std::string Fnv1a::hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
    return std::string(buf);
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& chunk_fn,
                  unsigned threads) {
    if (n == 0) return;
    unsigned nt = threads ? threads : g_default_threads;
    if (nt == 0) nt = std::thread::hardware_concurrency();
    if (nt == 0) nt = 1;
    nt = static_cast<unsigned>(std::min<std::size_t>(nt, n));
    if (nt <= 1) {
        chunk_fn(0, n);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(nt);
    std::size_t chunk = (n + nt - 1) / nt;
    std::vector<std::exception_ptr> errors(nt);
    for (unsigned t = 0; t < nt; ++t) {
        std::size_t lo = static_cast<std::size_t>(t) * chunk;
        std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([&, t, lo, hi] {
            try {
                chunk_fn(lo, hi);
            } catch (...) {
                errors[t] = std::current_exception();
            }
        });
    }
    for (auto& th : pool) th.join();
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

void set_default_threads(unsigned n) { g_default_threads = n; }
unsigned default_threads() { return g_default_threads; }

void gauss_hermite_normal(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights) {
    // Hermite roots by Newton iteration on the orthonormal recurrence
    // (physicists' weight), then rescaled to the standard normal density.
    nodes.assign(n, 0.0);
    weights.assign(n, 0.0);
    const double pi4 = std::pow(M_PI, -0.25);
    std::vector<double> root((n + 1) / 2, 0.0);   // descending positive roots
    std::vector<double> wroot((n + 1) / 2, 0.0);
    double z = 0.0;
    for (std::size_t i = 0; i < root.size(); ++i) {
        if (i == 0)
            z = std::sqrt(2.0 * static_cast<double>(n) + 1.0) -
                1.85575 * std::pow(2.0 * static_cast<double>(n) + 1.0, -1.0 / 6.0);
        else if (i == 1)
            z -= 1.14 * std::pow(static_cast<double>(n), 0.426) / z;
        else if (i == 2)
            z = 1.86 * z - 0.86 * root[0];
        else if (i == 3)
            z = 1.91 * z - 0.91 * root[1];
        else
            z = 2.0 * z - root[i - 2];
        double pp = 0.0;
        for (int it = 0; it < 100; ++it) {
            double p1 = pi4, p2 = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
                double p3 = p2;
                p2 = p1;
                p1 = z * std::sqrt(2.0 / (static_cast<double>(j) + 1.0)) * p2 -
                     std::sqrt(static_cast<double>(j) / (static_cast<double>(j) + 1.0)) * p3;
            }
            pp = std::sqrt(2.0 * static_cast<double>(n)) * p2;
            double dz = p1 / pp;
            z -= dz;
            if (std::fabs(dz) < 1e-15) break;
        }
        root[i] = z;
        wroot[i] = 2.0 / (pp * pp);
    }
    for (std::size_t i = 0; i < root.size(); ++i) {
        nodes[i] = -root[i];
        nodes[n - 1 - i] = root[i];
        weights[i] = wroot[i];
        weights[n - 1 - i] = wroot[i];
    }
    // physicists' -> probabilists': x -> sqrt(2) x, w -> w / sqrt(pi)
    double wsum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        nodes[i] *= std::sqrt(2.0);
        weights[i] /= std::sqrt(M_PI);
        wsum += weights[i];
    }
    for (std::size_t i = 0; i < n; ++i) weights[i] /= wsum;
}

}  // namespace fpp
