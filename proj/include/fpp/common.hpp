#ifndef FPP_COMMON_HPP
#define FPP_COMMON_HPP

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fpp {

// Error taxonomy, mapped onto the CLI exit-code contract:
//   ConfigError -> exit 2, SolverError -> exit 3, InvariantError -> exit 4.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

class SolverError : public std::runtime_error {
public:
    explicit SolverError(const std::string& what) : std::runtime_error(what) {}
};

class InvariantError : public std::runtime_error {
public:
    explicit InvariantError(const std::string& what) : std::runtime_error(what) {}
};

// Deterministic pairwise summation. The result depends only on the element
// order, never on thread count or chunking of the caller.
double pairwise_sum(const double* data, std::size_t n);
double pairwise_sum(const std::vector<double>& v);

struct MeanSe {
    double mean = 0.0;
    double se = 0.0;      // standard error of the mean, sd/sqrt(n)
    double sd = 0.0;
    std::size_t n = 0;
};

// Two-pass mean/SE with pairwise accumulation in both passes.
MeanSe mean_se(const std::vector<double>& v);

// |mean| / SE, with the degenerate zero-variance case collapsing to |mean|.
double t_statistic(const MeanSe& m);

struct GoldenResult {
    double x = 0.0;
    double value = 0.0;
    bool boundary = false;  // maximizer pinned to an endpoint of the box
};

// Golden-section maximization of a unimodal function on [lo, hi].
GoldenResult golden_section_max(const std::function<double(double)>& f,
                                double lo, double hi, double xtol);

// Uniform grid helpers.
std::vector<double> linspace(double lo, double hi, std::size_t n);

// Piecewise-linear interpolation on a uniform grid with linear extension
// beyond the ends (matches the linear-growth boundary convention).
double lerp_uniform(const std::vector<double>& values, double lo, double dx, double x);

// Central first/second differences on a uniform grid, one-sided at the ends.
std::vector<double> diff1_uniform(const std::vector<double>& y, double dx);
std::vector<double> diff2_uniform(const std::vector<double>& y, double dx);

// Thomas algorithm for a tridiagonal system; diagonals sized n, n, n
// (lower[0] and upper[n-1] unused). Throws SolverError on a zero pivot.
void solve_tridiagonal(std::vector<double>& lower, std::vector<double>& diag,
                       std::vector<double>& upper, std::vector<double>& rhs);

// FNV-1a content hashing for cache keys and config hashes.
class Fnv1a {
public:
    void feed(const void* data, std::size_t n);
    void feed(const std::string& s) { feed(s.data(), s.size()); }
    void feed(double x) { feed(&x, sizeof x); }
    void feed(std::uint64_t x) { feed(&x, sizeof x); }
    void feed(std::int64_t x) { feed(&x, sizeof x); }
    std::uint64_t digest() const { return state_; }
    std::string hex() const;

private:
    std::uint64_t state_ = 1469598103934665603ull;
};

// splitmix64, used to derive per-path seeds from (seed, path_id).
std::uint64_t splitmix64(std::uint64_t x);

// Chunked parallel loop over [0, n). Each index must touch only its own
// output slots; reductions happen afterwards on materialized arrays so the
// result is independent of the thread count.
void parallel_for(std::size_t n, const std::function<void(std::size_t, std::size_t)>& chunk_fn,
                  unsigned threads = 0);

// Global thread-count knob (CLI --threads); 0 means hardware default.
void set_default_threads(unsigned n);
unsigned default_threads();

// Gauss-Hermite abscissae/weights in "probabilist" form: integrates
// f against the standard normal density, sum_i w_i f(x_i).
void gauss_hermite_normal(std::size_t n, std::vector<double>& nodes, std::vector<double>& weights);

}  // namespace fpp

#endif
