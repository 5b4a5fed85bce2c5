#ifndef FPP_CONFIG_HPP
#define FPP_CONFIG_HPP

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fpp/ergodic.hpp"
#include "fpp/fbsde.hpp"
#include "fpp/market.hpp"
#include "fpp/oce.hpp"

namespace fpp {

// Parsed and validated scenario configuration. Construction throws
// ConfigError with a field path on any schema violation.
struct ScenarioConfig {
    std::string name;
    MarketModel model;
    EndowmentSpec endowment;

    // numerics
    double dt = 1.0 / 250.0;
    std::size_t n_paths = 100000;
    std::uint64_t seed = 42;
    VGrid v_grid{-6.0, 6.0, 1201};
    std::size_t pde_nt = 1000;
    double t0 = 0.0, t = 0.0, T = 1.0, v0 = 0.0, xi = 0.0;
    double tol_ergodic_residual = 1e-4;
    double tol_dual_gap = 5e-3;
    double mart_threshold = 4.0;
    unsigned threads = 0;

    // task
    std::set<std::string> operations;
    ErgodicMethod ergodic_method = ErgodicMethod::OdeGrid;
    bool cross_method_check = false;
    bool negative_control = false;
    DeflatorSpec eta;
    double eta_scalar = 1.0;
    std::vector<double> T_prime_factors = {1.0, 1.5, 2.0};
    double cash_c = 0.3;
    double concavity_lambda = 0.5;
    std::size_t n_perturbations = 20;

    struct DecouplingBlock {
        bool enabled = false;
        std::string family = "exponential_embedded";
        // shifted_concave parameters
        double a = 1.0, b = 0.5, eps = 2.0;
        // additive_heat parameters
        double heat_a = 0.5, heat_c0 = 0.0, heat_c1 = 0.5;
        // endowment P(v, x) = pa tanh(v) + pb tanh(x)
        double payoff_a = 0.3, payoff_b = 0.5, payoff_bound = 1.0;
        double T = 0.25;
        double x0 = 0.0;
        VGrid v{-4.0, 4.0, 61};
        double x_lo = -6.0, x_hi = 6.0;
        std::size_t nx = 61, nt = 100;
        double cross_check_tol = 1e-3;
        std::string csv_path;
    } decoupling;

    struct CompleteMarketBlock {
        bool enabled = false;
        double theta0 = 0.2;
        double payoff_scale = 1.0;  // P = scale * tanh(W_T)
        double bound = 1.0;
        double eta = 1.0;
        bool constant_payoff = false;
        double constant_value = 0.0;
    } complete_market;

    nlohmann::json raw;
    std::uint64_t config_hash = 0;

    static ScenarioConfig from_json(const nlohmann::json& j);
    static ScenarioConfig from_file(const std::string& path);
    static ScenarioConfig from_string(const std::string& text);
};

// Named-function registry dispatch for {"name": ..., ...} blocks.
ScalarFn parse_scalar_fn(const nlohmann::json& j, const std::string& where);

// Bundled scenario registry (also shipped as files under scenarios/).
const std::vector<std::string>& bundled_scenario_names();
std::string bundled_scenario_text(const std::string& name);

}  // namespace fpp

#endif
