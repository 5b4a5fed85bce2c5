#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "fpp/config.hpp"
#include "fpp/oce.hpp"
#include "fpp/runner.hpp"

namespace py = pybind11;

namespace {

fpp::MarketModel make_model(double theta_scale, const std::string& theta_kind, double kappa,
                            double rho, double gamma) {
    fpp::MarketModel m;
    if (theta_kind == "constant")
        m.theta = fpp::ScalarFn::constant(theta_scale);
    else if (theta_kind == "tanh")
        m.theta = fpp::ScalarFn::tanh_scaled(theta_scale);
    else if (theta_kind == "zero")
        m.theta = fpp::ScalarFn::zero();
    else
        throw fpp::ConfigError("theta_kind must be constant, tanh or zero");
    m.drift_l = fpp::ScalarFn::linear_mean_revert(kappa);
    m.rho = rho;
    m.gamma = gamma;
    m.theta_bound = std::max(1e-12, std::fabs(theta_scale));
    m.lipschitz_theta = std::fabs(theta_scale);
    m.dissipativity = kappa;
    return m;
}

py::dict solve_ergodic_py(double theta_scale, const std::string& theta_kind, double kappa,
                          double rho, double gamma, const std::string& method, double v_lo,
                          double v_hi, std::size_t nodes, std::uint64_t seed) {
    auto m = make_model(theta_scale, theta_kind, kappa, rho, gamma);
    fpp::VGrid grid{v_lo, v_hi, nodes};
    fpp::ErgodicOptions opts;
    opts.seed = seed;
    auto method_tag = method == "vanishing-discount-mc" ? fpp::ErgodicMethod::VanishingDiscountMc
                                                        : fpp::ErgodicMethod::OdeGrid;
    auto sol = fpp::solve_ergodic(m, grid, method_tag, opts);
    py::dict out;
    out["lambda"] = sol.lambda;
    out["residual"] = sol.residual;
    out["method"] = sol.method;
    py::list ys, vs;
    for (std::size_t i = 0; i < sol.y.size(); ++i) {
        vs.append(sol.grid.node(i));
        ys.append(sol.y[i]);
    }
    out["v"] = vs;
    out["y"] = ys;
    return out;
}

py::dict exponential_primal_py(double theta_scale, const std::string& theta_kind, double kappa,
                               double rho, double gamma, double payoff_scale, double T,
                               std::size_t pde_steps, std::size_t v_nodes) {
    auto m = make_model(theta_scale, theta_kind, kappa, rho, gamma);
    fpp::VGrid grid{-6.0, 6.0, v_nodes};
    fpp::ErgodicOptions opts;
    auto erg = std::make_shared<fpp::ErgodicSolution>(
        fpp::solve_ergodic(m, grid, fpp::ErgodicMethod::OdeGrid, opts));
    auto payoff = fpp::ScalarFn::tanh_scaled(payoff_scale);
    auto endow = fpp::EndowmentSpec::terminal_factor(payoff, std::fabs(payoff_scale) + 1e-12, T);
    fpp::PdeGridSpec pde{grid, pde_steps};
    auto sol = fpp::solve_exponential_primal(m, erg, endow, 0.0, T, pde, 0.0, 0.0,
                                             fpp::McSpec{64, 1.0 / 250.0, 3});
    py::dict out;
    out["Y0"] = sol.Y0;
    out["bsde_residual"] = sol.bsde_residual;
    out["lambda"] = erg->lambda;
    return out;
}

double static_oce_py(const std::vector<double>& samples, double gamma, double box) {
    auto u = [gamma](double x) { return (1.0 - std::exp(-gamma * x)) / gamma; };
    return fpp::static_oce(u, samples, -box, box);
}

py::dict run_scenario_py(const std::string& config_json, const std::string& out_dir) {
    auto cfg = fpp::ScenarioConfig::from_string(config_json);
    auto res = fpp::run_pipeline(cfg, out_dir);
    py::dict out;
    out["exit_code"] = res.exit_code;
    out["summary"] = res.summary.dump(2);
    return out;
}

py::dict forward_oce_py(double theta_scale, const std::string& theta_kind, double kappa,
                        double rho, double gamma, double payoff_scale, double T) {
    auto m = make_model(theta_scale, theta_kind, kappa, rho, gamma);
    fpp::VGrid grid{-6.0, 6.0, 601};
    fpp::ErgodicOptions opts;
    auto erg = std::make_shared<fpp::ErgodicSolution>(
        fpp::solve_ergodic(m, grid, fpp::ErgodicMethod::OdeGrid, opts));
    auto payoff = fpp::ScalarFn::tanh_scaled(payoff_scale);
    auto endow = fpp::EndowmentSpec::terminal_factor(payoff, std::fabs(payoff_scale) + 1e-12, T);
    fpp::DeflatorSpec eta;
    fpp::OceNumerics num;
    num.mc.n_paths = 20000;
    auto rep = fpp::forward_oce_exponential(m, erg, endow, eta, 0.0, T, num);
    py::dict out;
    out["value"] = rep.value;
    out["normalized"] = rep.normalized;
    out["dual_value"] = rep.dual_value;
    out["dual_gap"] = rep.dual_gap;
    out["xi_star"] = rep.xi_star;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Forward performance criteria with random endowment: primal/dual "
              "backward-equation solvers and the forward optimized certainty equivalent";

    m.def("solve_ergodic", &solve_ergodic_py, py::arg("theta_scale"),
          py::arg("theta_kind") = "tanh", py::arg("kappa") = 1.0, py::arg("rho") = 0.5,
          py::arg("gamma") = 1.0, py::arg("method") = "ode-grid", py::arg("v_lo") = -6.0,
          py::arg("v_hi") = 6.0, py::arg("nodes") = 601, py::arg("seed") = 1,
          "Solve the long-run factor equation; returns lambda and the grid function y.");

    m.def("exponential_primal", &exponential_primal_py, py::arg("theta_scale"),
          py::arg("theta_kind") = "tanh", py::arg("kappa") = 1.0, py::arg("rho") = 0.5,
          py::arg("gamma") = 1.0, py::arg("payoff_scale") = 0.5, py::arg("T") = 1.0,
          py::arg("pde_steps") = 500, py::arg("v_nodes") = 601,
          "Backward-field solve for a tanh terminal endowment; returns Y0.");

    m.def("static_oce", &static_oce_py, py::arg("samples"), py::arg("gamma") = 1.0,
          py::arg("box") = 10.0,
          "Static optimized certainty equivalent with the normalized exponential utility.");

    m.def("forward_oce", &forward_oce_py, py::arg("theta_scale"),
          py::arg("theta_kind") = "tanh", py::arg("kappa") = 1.0, py::arg("rho") = 0.5,
          py::arg("gamma") = 1.0, py::arg("payoff_scale") = 0.5, py::arg("T") = 1.0,
          "Forward OCE with its dual certificate for a tanh terminal endowment.");

    m.def("run_scenario", &run_scenario_py, py::arg("config_json"), py::arg("out_dir") = "out",
          "Run a full scenario from a JSON string; returns exit_code and the summary JSON.");

    m.def("bundled_scenario", &fpp::bundled_scenario_text, py::arg("name"),
          "JSON text of a bundled scenario.");

    m.attr("__version__") = "0.1.0";
}
