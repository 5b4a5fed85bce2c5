#ifndef FPP_FBSDE_HPP
#define FPP_FBSDE_HPP

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "fpp/common.hpp"
#include "fpp/ergodic.hpp"
#include "fpp/forward_core.hpp"
#include "fpp/functions.hpp"
#include "fpp/market.hpp"

namespace fpp {

enum class EndowmentKind { Constant, TerminalFactor, TerminalPath, TerminalVX };

// Bounded random endowment received at maturity. Payoffs are clipped at the
// declared bound (with a sticky flag) so boundedness holds by construction.
class EndowmentSpec {
public:
    static EndowmentSpec constant(double c, double maturity);
    static EndowmentSpec terminal_factor(ScalarFn p, double bound, double maturity);
    static EndowmentSpec terminal_path(ScalarFn p, double bound, double maturity);
    static EndowmentSpec terminal_vx(PayoffVX p, double bound, double maturity);

    EndowmentKind kind() const { return kind_; }
    double bound() const { return bound_; }
    double maturity() const { return maturity_; }
    double lipschitz_x() const;
    bool clipping_activated() const { return clipped_ && clipped_->load(); }
    const ScalarFn& scalar_payoff() const { return payoff_v_; }

    double eval_factor(double v_T) const;
    double eval_path(double w_T) const;
    double eval_vx(double v, double x) const;

    void hash_into(Fnv1a& h) const;

private:
    EndowmentKind kind_ = EndowmentKind::Constant;
    double constant_ = 0.0;
    ScalarFn payoff_v_;
    PayoffVX payoff_vx_;
    double bound_ = 0.0;
    double maturity_ = 0.0;
    std::shared_ptr<std::atomic<bool>> clipped_;
    double clip(double raw) const;
};

enum class Regime { CompleteMarket, Exponential, DecouplingField };

// Time-indexed field on a uniform (t, v) lattice.
struct Field2D {
    double t0 = 0.0, dt = 0.0;
    double v_lo = 0.0, dv = 0.0;
    std::size_t nt = 0, nv = 0;  // nt time levels (steps + 1)
    std::vector<double> data;    // [k * nv + j]

    double at(double t, double v) const;
    double dv_at(double t, double v) const;
    const double* level(std::size_t k) const { return data.data() + k * nv; }
    double* level(std::size_t k) { return data.data() + k * nv; }
    std::size_t level_index(double t) const;
};

// Field on a uniform (t, v, x) lattice (decoupling field w).
struct Field3D {
    double t0 = 0.0, dt = 0.0;
    double v_lo = 0.0, dv = 0.0;
    double x_lo = 0.0, dx = 0.0;
    std::size_t nt = 0, nv = 0, nx = 0;
    std::vector<double> data;  // [(k * nv + j) * nx + m]

    double at(double t, double v, double x) const;
    double dx_at(double t, double v, double x) const;
    double dv_at(double t, double v, double x) const;
    const double* level(std::size_t k) const { return data.data() + k * nv * nx; }
    double* level(std::size_t k) { return data.data() + k * nv * nx; }
};

// Per-path realizations of a solution triplet on the simulation grid.
struct PathBlock {
    TimeGrid grid;
    std::size_t n_paths = 0;
    std::vector<double> V;   // factor (or the single Brownian path in the complete market)
    std::vector<double> X;
    std::vector<double> Y;
    std::vector<double> Z1;
    std::vector<double> Z2;
    std::vector<double> dW1;  // increments, n_paths x n_steps
    std::vector<double> dW2;

    double& at(std::vector<double>& a, std::size_t p, std::size_t k) const;
    double at(const std::vector<double>& a, std::size_t p, std::size_t k) const;
    double inc(const std::vector<double>& a, std::size_t p, std::size_t k) const {
        return a[p * grid.n_steps + k];
    }
    double& inc(std::vector<double>& a, std::size_t p, std::size_t k) const {
        return a[p * grid.n_steps + k];
    }
    std::size_t n_times() const { return grid.n_steps + 1; }
};

struct McSpec {
    std::size_t n_paths = 20000;
    double dt = 1.0 / 250.0;
    std::uint64_t seed = 7;
};

struct PdeGridSpec {
    VGrid v;
    std::size_t nt = 1000;
};

struct DecouplingGridSpec {
    VGrid v{-4.0, 4.0, 81};
    double x_lo = -6.0, x_hi = 6.0;
    std::size_t nx = 81;
    std::size_t nt = 200;
    std::size_t quad_points = 3;      // Gauss-Hermite nodes per Brownian dimension
    double fp_damping = 0.5;
    std::size_t fp_max_iter = 200;
    double fp_tol = 1e-12;
    double z2_cap = 50.0;
};

struct PrimalSolution {
    Regime regime = Regime::Exponential;
    double xi = 0.0;
    double Y0 = 0.0;
    double t0 = 0.0, T = 0.0, v0 = 0.0;
    double gamma = 1.0;
    MarketModel model;
    std::shared_ptr<const ErgodicSolution> erg;
    EndowmentSpec endowment;

    Field2D y;   // exponential regime: y(t, v) with Y_s = y(s, V_s)
    Field3D w;   // decoupling regime: Y_s = w(s, V_s, X_s)

    // decoupling diagnostics
    double w_x_sup = 0.0;
    int field_case = 0;
    double K_measured = 0.0;
    double horizon_bound = 0.0;

    // complete market closures (state is the Brownian path level)
    std::function<double(double, double)> cm_y;   // (s, W_s) -> E^{Q0}[P | F_s]
    std::function<double(double)> cm_g;           // g(t) = 1/2 int_0^t theta^2
    ScalarFn theta_of_t;

    double bsde_residual = 0.0;

    // optimal controls as feedback rules of (t, v) (exponential regime)
    std::function<double(double, double)> pi_star;
    std::function<double(double, double)> q_star;
    double pi_bound = 0.0, q_bound = 0.0;

    PathBlock paths;  // per-path realizations of (X, Y, Z)

    double y_at(double t, double v) const { return y.at(t, v); }
    double z1_at(double t, double v) const { return model.rho * y.dv_at(t, v); }
    double z2_at(double t, double v) const {
        return std::sqrt(std::max(0.0, 1.0 - model.rho * model.rho)) * y.dv_at(t, v);
    }
    ControlPath pi_control() const;
    ControlPath q_control() const;

    void export_field_csv(const std::string& path) const;
};

struct DualSolution {
    Regime regime = Regime::Exponential;
    double eta0 = 0.0;      // initial dual state (eta or eta-hat)
    double xi_hat = 0.0;    // -U~_z(t, eta) - Y_t
    double Y0 = 0.0;
    double t0 = 0.0, T = 0.0, v0 = 0.0;
    double gamma = 1.0;
    MarketModel model;
    std::shared_ptr<const ErgodicSolution> erg;
    EndowmentSpec endowment;
    Field2D y;  // Y~ = Y

    double residual_mean = 0.0;  // Euler defect of the dual forward equation
    double residual_max = 0.0;

    PathBlock paths;             // V, D (stored in X slot), Y~, Z~
    std::vector<double>& D() { return paths.X; }
    const std::vector<double>& D() const { return paths.X; }

    void export_field_csv(const std::string& path) const;
};

// --- Solvers -------------------------------------------------------------

// Complete market (single Brownian motion, deterministic theta(t)): the
// backward pair is explicit, the dual state is the scaled stochastic
// exponential and q* = 0. Uses only the dW1 component of the ensemble.
std::pair<PrimalSolution, DualSolution> solve_complete_market(
    const ScalarFn& theta_of_t, const EndowmentSpec& endowment, double xi, double eta,
    const PathEnsemble& ensemble, double gamma);

// Exponential regime: the backward equation decouples; solved as a
// semilinear parabolic PDE in (t, v) by implicit time stepping with the
// quadratic driver lagged explicitly.
PrimalSolution solve_exponential_primal(const MarketModel& model,
                                        std::shared_ptr<const ErgodicSolution> erg,
                                        const EndowmentSpec& endowment, double t0, double T,
                                        const PdeGridSpec& grid, double v0, double xi,
                                        const McSpec& mc, double z2_cap = 50.0);

// Markovian decoupling field: backward induction coupling the forward Euler
// map with the backward driver through a damped per-node fixed point.
// Enforces measured Assumption bounds, L_{P,x} < 1 and the Case-2 horizon
// gate; asserts the measured sup |w_x| < 1.
PrimalSolution solve_decoupling_field(const MarkovianForwardField& field,
                                      const MarketModel& model, const EndowmentSpec& endowment,
                                      double T, const DecouplingGridSpec& grid, double x0,
                                      double v0, const McSpec& mc);

// --- Transforms (primal <-> dual bijection) ------------------------------

DualSolution dual_from_primal(const PrimalSolution& primal, const ConjugatePair& U);
PrimalSolution primal_from_dual(const DualSolution& dual, const ConjugatePair& pair);

// --- Verification reports -------------------------------------------------

struct PerturbationOutcome {
    double epsilon = 0.0;
    double improvement = 0.0;  // objective(perturbed) - objective(candidate)
    double se = 0.0;
    bool pass = false;
};

struct OptimalityReport {
    std::vector<PerturbationOutcome> primal;
    std::vector<PerturbationOutcome> dual;
    double bidual_gap = 0.0;
    double bidual_se = 0.0;
    double primal_value = 0.0;
    double dual_value = 0.0;
    double eta_hat = 0.0;
    double negative_control_shortfall_se = 0.0;  // (J* - J(pi=0)) / SE, should exceed 3
    bool primal_pass = false, dual_pass = false, bidual_pass = false, negative_control_pass = false;
    bool all_pass() const { return primal_pass && dual_pass && bidual_pass; }
};

OptimalityReport verify_optimality(const PrimalSolution& primal, const ExpForwardProcess& U,
                                   const McSpec& mc, std::size_t n_perturbations,
                                   const std::vector<double>& epsilons = {0.1, -0.1, 0.05,
                                                                          -0.05});

struct SelfGenerationReport {
    double statistic = 0.0;           // |E U~(T, eta M^{q*}_T) - U~(t, eta)| / SE
    double inf_side_margin_se = 0.0;  // (E U~(T, eta M^q_T) - U~(t, eta)) / SE for random q
    bool pass = false;
};

SelfGenerationReport verify_self_generation(const ExpForwardProcess& U, double eta,
                                            const PathEnsemble& ensemble, double x0,
                                            bool check_inf_side, std::uint64_t seed);

// The marginal utility along the optimal state, U_x(s, X_s + Y_s), is the
// optimal pricing kernel up to scale and hence a martingale; returns the
// max over checkpoints of |E[U_x(s, X_s + Y_s)] - U_x(t0, xi + Y0)| / SE.
double verify_marginal_martingale(const PrimalSolution& primal, const ExpForwardProcess& U,
                          const McSpec& mc);

struct MaturityReport {
    double value_T = 0.0;
    double value_Tp = 0.0;
    double statistic = 0.0;  // |difference| / SE
    double dual_value_T = 0.0;
    double dual_value_Tp = 0.0;
    double dual_statistic = 0.0;
    bool pass = false;
};

// Value functions computed at maturity T and at a longer horizon T', the
// solution extended by the zero-endowment flow on (T, T'].
MaturityReport verify_maturity_independence(const MarketModel& model,
                                            std::shared_ptr<const ErgodicSolution> erg,
                                            const EndowmentSpec& endowment, double t0, double T,
                                            double T_prime, double xi, double eta,
                                            const PdeGridSpec& grid, double v0, const McSpec& mc);

// Euler-defect study of the dual forward equation for the round-trip order
// check; returns mean per-step defect for each dt in dts.
std::vector<double> dual_residual_order_study(const MarketModel& model,
                                              std::shared_ptr<const ErgodicSolution> erg,
                                              const EndowmentSpec& endowment, double t0, double T,
                                              const PdeGridSpec& grid, double v0, double xi,
                                              const std::vector<double>& dts, std::size_t n_paths,
                                              std::uint64_t seed);

}  // namespace fpp

#endif
