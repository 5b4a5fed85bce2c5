#ifndef FPP_MARKET_HPP
#define FPP_MARKET_HPP

#include <atomic>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "fpp/common.hpp"
#include "fpp/functions.hpp"

namespace fpp {

// Single stochastic factor market: one stock with market price of risk
// theta(V), factor dV = l(V) dt + rho dW1 + sqrt(1-rho^2) dW2, zero rate.
struct MarketModel {
    ScalarFn theta;
    ScalarFn drift_l;
    double rho = 0.0;
    double gamma = 1.0;
    double theta_bound = 0.0;     // certified sup |theta|
    double lipschitz_theta = 0.0;
    double dissipativity = 0.0;   // declared constant C in the one-sided condition on l

    // Checks |theta| <= theta_bound on the grid, the grid-pair dissipativity
    // inequality for l, gamma > 0 and rho in [0,1]. Throws ConfigError.
    void validate(double v_lo = -6.0, double v_hi = 6.0, std::size_t n_grid = 241) const;

    std::uint64_t content_hash() const;
};

struct TimeGrid {
    double t0 = 0.0;
    double dt = 0.0;
    std::size_t n_steps = 0;

    double horizon() const { return t0 + dt * static_cast<double>(n_steps); }
    double time(std::size_t k) const { return t0 + dt * static_cast<double>(k); }
    std::vector<double> times() const;
};

// One simulated path, fully materialized: V has n_steps+1 states, the
// increment arrays have n_steps entries.
struct PathBuffer {
    std::vector<double> dW1;
    std::vector<double> dW2;
    std::vector<double> V;
};

// Seeded Monte-Carlo ensemble on a uniform grid. Paths are regenerated
// deterministically on demand from (seed, path_id), so heavy consumers can
// stream without holding the whole ensemble; n_paths can change without
// reshuffling existing paths. A read-only value once constructed.
class PathEnsemble {
public:
    PathEnsemble() = default;
    PathEnsemble(MarketModel model, TimeGrid grid, std::size_t n_paths, std::uint64_t seed,
                 double v0);

    const MarketModel& model() const { return model_; }
    const TimeGrid& grid() const { return grid_; }
    std::size_t n_paths() const { return n_paths_; }
    std::uint64_t seed() const { return seed_; }
    double v0() const { return v0_; }

    // Fills buf with path p. Thread-safe; independent of call order.
    void generate(std::size_t p, PathBuffer& buf) const;

    // Max over steps of |mean_p dWi_k| / sqrt(dt / n_paths); the ensemble
    // invariant requires this to be <= 4.
    double increment_mean_statistic() const;

    // Re-runs the Euler recursion from stored increments and compares V
    // bit-for-bit (trivially true by construction; exercised in tests).
    bool euler_consistent(std::size_t p) const;

    std::uint64_t content_hash() const;

    // CSV with columns path_id,V_T,X_T,M_T. X uses pi, M uses q (both from
    // the given controls; x0 initial wealth, density conditioned at t0).
    void export_terminal_csv(const std::string& path, const class ControlPath& pi,
                             const class ControlPath& q, double x0) const;

    // Binary cache of every path, keyed by content hash. Load returns false
    // on key mismatch.
    void save_cache(const std::string& path) const;
    static bool load_cache_check(const std::string& path, std::uint64_t expected_hash);

private:
    MarketModel model_;
    TimeGrid grid_;
    std::size_t n_paths_ = 0;
    std::uint64_t seed_ = 0;
    double v0_ = 0.0;
};

// Bounded control aligned to the ensemble grid: either a constant, a
// feedback rule of (t, V_t), or an explicit per-path matrix. Values are
// clamped to the declared bound (the admissibility proxy).
class ControlPath {
public:
    enum class Kind { Constant, Feedback, Matrix };

    static ControlPath constant(double value, double bound);
    // rule(t, v); the wrapper clamps to [-bound, bound]
    static ControlPath feedback(std::function<double(double, double)> rule, double bound,
                                std::string label = "feedback");
    // values[p * n_steps + k]
    static ControlPath matrix(std::vector<double> values, std::size_t n_paths,
                              std::size_t n_steps, double bound);

    double bound() const { return bound_; }
    const std::string& label() const { return label_; }
    bool clipped() const { return clipped_ && clipped_->load(); }

    // Control applied on [t_k, t_{k+1}) for path p at factor state v.
    double value(std::size_t p, std::size_t k, double t, double v) const;

    ControlPath() = default;

private:
    Kind kind_ = Kind::Constant;
    double const_value_ = 0.0;
    double bound_ = 0.0;
    std::function<double(double, double)> rule_;
    std::vector<double> values_;
    std::size_t n_steps_ = 0;
    std::string label_ = "constant";
    std::shared_ptr<std::atomic<bool>> clipped_;
};

// Terminal and checkpoint functionals of one path, the unit of streaming
// evaluation used by the verification suites.
struct WealthDensityTerminal {
    double V_T = 0.0;
    double X_T = 0.0;
    double M_T = 0.0;
    double A_T = 0.0;      // gains integral started at the conditioning index
    double logM_T = 0.0;
};

// Euler wealth recursion X_{k+1} = X_k + pi_k (theta(V_k) dt + dW1_k).
// Returns the full matrix (n_paths x n_steps+1); guarded against
// accidentally materializing huge ensembles.
std::vector<double> wealth_path(const PathEnsemble& ens, const ControlPath& pi, double x0);

// Log-space state price density started at grid index t_index (M = 1 there,
// zero before). Returns full matrix; strictly positive everywhere.
std::vector<double> density_path(const PathEnsemble& ens, const ControlPath& q,
                                 std::size_t t_index);

// Streaming evaluation of the terminal functionals, conditioning at t_index.
std::vector<WealthDensityTerminal> terminal_functionals(const PathEnsemble& ens,
                                                        const ControlPath& pi,
                                                        const ControlPath& q, double x0,
                                                        std::size_t t_index = 0);

// |E[M_T A_T]| / SE over per-path terminal products; M times the gains
// integral is a martingale started at zero, so the mean vanishes.
double martingale_residual(const std::vector<double>& M_T, const std::vector<double>& A_T);
double martingale_residual(const PathEnsemble& ens, const ControlPath& pi, const ControlPath& q,
                           std::size_t t_index = 0);

// Same statistic for several (pi, q) pairs in one generation pass.
std::vector<double> martingale_residual_batch(
    const PathEnsemble& ens, const std::vector<std::pair<ControlPath, ControlPath>>& pairs,
    std::size_t t_index = 0);

}  // namespace fpp

#endif
