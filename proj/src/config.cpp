#include "fpp/config.hpp"

#include <fstream>
#include <sstream>

namespace fpp {

using nlohmann::json;

namespace {

const json& require(const json& j, const std::string& key, const std::string& where) {
    auto it = j.find(key);
    if (it == j.end()) throw ConfigError("missing field: " + where + "." + key);
    return *it;
}

double require_number(const json& j, const std::string& key, const std::string& where) {
    const json& v = require(j, key, where);
    if (!v.is_number()) throw ConfigError("field must be a number: " + where + "." + key);
    return v.get<double>();
}

double number_or(const json& j, const std::string& key, double fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_number()) throw ConfigError("field must be a number: " + key);
    return it->get<double>();
}

std::size_t size_or(const json& j, const std::string& key, std::size_t fallback) {
    auto it = j.find(key);
    if (it == j.end()) return fallback;
    if (!it->is_number_unsigned() && !it->is_number_integer())
        throw ConfigError("field must be an integer: " + key);
    long long v = it->get<long long>();
    if (v < 0) throw ConfigError("field must be nonnegative: " + key);
    return static_cast<std::size_t>(v);
}

}  // namespace

ScalarFn parse_scalar_fn(const json& j, const std::string& where) {
    if (!j.is_object()) throw ConfigError("function spec must be an object: " + where);
    std::string name = require(j, "name", where).get<std::string>();
    if (name == "constant") return ScalarFn::constant(require_number(j, "value", where));
    if (name == "zero") return ScalarFn::zero();
    if (name == "tanh_scaled")
        return ScalarFn::tanh_scaled(require_number(j, "scale", where),
                                     number_or(j, "slope", 1.0));
    if (name == "clipped_linear")
        return ScalarFn::clipped_linear(require_number(j, "slope", where),
                                        require_number(j, "cap", where));
    if (name == "linear_mean_revert")
        return ScalarFn::linear_mean_revert(require_number(j, "kappa", where));
    if (name == "grid_csv")
        return ScalarFn::grid_csv(require(j, "path", where).get<std::string>());
    throw ConfigError("unknown function name '" + name + "' in " + where +
                      " (registry: constant, zero, tanh_scaled, clipped_linear, "
                      "linear_mean_revert, grid_csv)");
}

ScenarioConfig ScenarioConfig::from_json(const json& j) {
    if (!j.is_object()) throw ConfigError("config root must be an object");
    ScenarioConfig c;
    c.raw = j;
    c.name = j.value("name", std::string("unnamed"));

    const json& m = require(j, "model", "config");
    c.model.theta = parse_scalar_fn(require(m, "theta", "model"), "model.theta");
    c.model.drift_l = parse_scalar_fn(require(m, "l", "model"), "model.l");
    c.model.rho = require_number(m, "rho", "model");
    c.model.gamma = require_number(m, "gamma", "model");
    if (c.model.rho < 0.0 || c.model.rho > 1.0)
        throw ConfigError("model.rho must lie in [0,1]");
    if (!(c.model.gamma > 0.0)) throw ConfigError("model.gamma must be positive");
    double theta_bound_default =
        std::isfinite(c.model.theta.bound()) ? c.model.theta.bound() : 0.0;
    c.model.theta_bound = number_or(m, "theta_bound", theta_bound_default);
    if (!(c.model.theta_bound >= 0.0)) throw ConfigError("model.theta_bound must be positive");
    c.model.lipschitz_theta = number_or(m, "lipschitz_theta", c.model.theta.lipschitz());
    c.model.dissipativity = number_or(m, "dissipativity", 0.0);
    if (c.model.theta_bound == 0.0 && c.model.theta.bound() > 0.0)
        c.model.theta_bound = 1e-12;

    const json& e = require(j, "endowment", "config");
    std::string kind = require(e, "kind", "endowment").get<std::string>();
    double maturity = number_or(e, "maturity", number_or(require(j, "numerics", "config"), "T", 1.0));
    if (kind == "constant") {
        c.endowment = EndowmentSpec::constant(require_number(e, "value", "endowment"), maturity);
    } else if (kind == "terminal-factor-function") {
        ScalarFn p = parse_scalar_fn(require(e, "payoff", "endowment"), "endowment.payoff");
        double bound = number_or(e, "bound", p.bound());
        if (!(bound > 0.0)) throw ConfigError("endowment.bound must be positive");
        c.endowment = EndowmentSpec::terminal_factor(p, bound, maturity);
    } else if (kind == "terminal-path-function") {
        ScalarFn p = parse_scalar_fn(require(e, "payoff", "endowment"), "endowment.payoff");
        double bound = number_or(e, "bound", p.bound());
        if (!(bound > 0.0)) throw ConfigError("endowment.bound must be positive");
        c.endowment = EndowmentSpec::terminal_path(p, bound, maturity);
    } else {
        throw ConfigError("endowment.kind must be one of constant, terminal-factor-function, "
                          "terminal-path-function");
    }

    const json& n = require(j, "numerics", "config");
    c.dt = number_or(n, "dt", c.dt);
    if (!(c.dt > 0.0)) throw ConfigError("numerics.dt must be positive");
    c.n_paths = size_or(n, "n_paths", c.n_paths);
    if (c.n_paths < 1) throw ConfigError("numerics.n_paths must be >= 1");
    c.seed = static_cast<std::uint64_t>(size_or(n, "seed", 42));
    c.t0 = number_or(n, "t0", 0.0);
    c.t = number_or(n, "t", c.t0);
    c.T = number_or(n, "T", 1.0);
    c.v0 = number_or(n, "v0", 0.0);
    c.xi = number_or(n, "xi", 0.0);
    if (!(c.T > c.t0)) throw ConfigError("numerics.T must exceed numerics.t0");
    if (c.t < c.t0 || c.t >= c.T) throw ConfigError("numerics.t must lie in [t0, T)");
    if (c.dt >= c.T - c.t0) throw ConfigError("numerics.dt must be smaller than the horizon");
    if (auto it = n.find("v_grid"); it != n.end()) {
        c.v_grid.lo = require_number(*it, "lo", "numerics.v_grid");
        c.v_grid.hi = require_number(*it, "hi", "numerics.v_grid");
        c.v_grid.n = size_or(*it, "nodes", 1201);
        c.v_grid.validate();
    }
    c.pde_nt = size_or(n, "pde_time_steps", c.pde_nt);
    if (c.pde_nt < 2) throw ConfigError("numerics.pde_time_steps must be >= 2");
    if (auto it = n.find("tolerances"); it != n.end()) {
        c.tol_ergodic_residual = number_or(*it, "ergodic_residual", c.tol_ergodic_residual);
        c.tol_dual_gap = number_or(*it, "dual_gap", c.tol_dual_gap);
        c.mart_threshold = number_or(*it, "martingale_statistic", c.mart_threshold);
    }
    c.threads = static_cast<unsigned>(size_or(n, "threads", 0));

    const json& t = require(j, "task", "config");
    const json& ops = require(t, "operations", "task");
    if (!ops.is_array() || ops.empty()) throw ConfigError("task.operations must be a non-empty array");
    const std::set<std::string> known = {"ergodic", "primal",  "dual",     "oce",
                                         "verify",  "report",  "market",   "complete-market",
                                         "decoupling"};
    for (const auto& op : ops) {
        std::string s = op.get<std::string>();
        if (!known.count(s)) throw ConfigError("task.operations: unknown operation '" + s + "'");
        c.operations.insert(s);
    }
    std::string method = t.value("ergodic_method", std::string("ode-grid"));
    if (method == "ode-grid")
        c.ergodic_method = ErgodicMethod::OdeGrid;
    else if (method == "vanishing-discount-mc")
        c.ergodic_method = ErgodicMethod::VanishingDiscountMc;
    else
        throw ConfigError("task.ergodic_method must be ode-grid or vanishing-discount-mc");
    c.cross_method_check = t.value("cross_method_check", false);
    c.negative_control = t.value("negative_control", false);
    c.n_perturbations = size_or(t, "n_perturbations", c.n_perturbations);
    if (auto it = t.find("eta"); it != t.end()) {
        std::string ek = it->value("kind", std::string("unit"));
        if (ek == "unit") {
            c.eta = DeflatorSpec{};
        } else if (ek == "factor-function") {
            c.eta.fn = parse_scalar_fn(require(*it, "fn", "task.eta"), "task.eta.fn");
        } else {
            throw ConfigError("task.eta.kind must be unit or factor-function");
        }
    }
    if (auto it = t.find("oce"); it != t.end()) {
        if (auto f = it->find("T_prime_factors"); f != it->end()) {
            c.T_prime_factors.clear();
            for (const auto& x : *f) {
                double fac = x.get<double>();
                if (fac < 1.0) throw ConfigError("task.oce.T_prime_factors must be >= 1");
                c.T_prime_factors.push_back(fac);
            }
        }
        c.cash_c = number_or(*it, "cash_c", c.cash_c);
        c.concavity_lambda = number_or(*it, "lambda", c.concavity_lambda);
        if (!(c.concavity_lambda > 0.0 && c.concavity_lambda < 1.0))
            throw ConfigError("task.oce.lambda must lie in (0,1)");
    }

    if (auto it = j.find("decoupling"); it != j.end()) {
        auto& d = c.decoupling;
        d.enabled = true;
        d.family = it->value("family", d.family);
        const std::set<std::string> fams = {"exponential_embedded", "shifted_concave",
                                            "additive_heat", "csv"};
        if (!fams.count(d.family))
            throw ConfigError("decoupling.family must be one of exponential_embedded, "
                              "shifted_concave, additive_heat, csv");
        d.a = number_or(*it, "a", d.a);
        d.b = number_or(*it, "b", d.b);
        d.eps = number_or(*it, "eps", d.eps);
        d.heat_a = number_or(*it, "heat_a", d.heat_a);
        d.heat_c0 = number_or(*it, "heat_c0", d.heat_c0);
        d.heat_c1 = number_or(*it, "heat_c1", d.heat_c1);
        d.payoff_a = number_or(*it, "payoff_a", d.payoff_a);
        d.payoff_b = number_or(*it, "payoff_b", d.payoff_b);
        d.payoff_bound = number_or(*it, "payoff_bound", d.payoff_a + d.payoff_b + 0.1);
        d.T = number_or(*it, "T", d.T);
        d.x0 = number_or(*it, "x0", d.x0);
        d.x_lo = number_or(*it, "x_lo", d.x_lo);
        d.x_hi = number_or(*it, "x_hi", d.x_hi);
        d.nx = size_or(*it, "nx", d.nx);
        d.nt = size_or(*it, "nt", d.nt);
        d.cross_check_tol = number_or(*it, "cross_check_tol", d.cross_check_tol);
        if (auto p = it->find("csv_path"); p != it->end()) d.csv_path = p->get<std::string>();
        if (d.family == "csv" && d.csv_path.empty())
            throw ConfigError("decoupling.family csv requires decoupling.csv_path");
        if (auto g = it->find("v_grid"); g != it->end()) {
            d.v.lo = require_number(*g, "lo", "decoupling.v_grid");
            d.v.hi = require_number(*g, "hi", "decoupling.v_grid");
            d.v.n = size_or(*g, "nodes", d.v.n);
            d.v.validate();
        }
        if (std::fabs(d.payoff_b) >= 1.0)
            throw ConfigError("decoupling.payoff_b is the Lipschitz-in-x constant; need |b| < 1");
    }

    if (auto it = j.find("complete_market"); it != j.end()) {
        auto& cm = c.complete_market;
        cm.enabled = true;
        cm.theta0 = number_or(*it, "theta0", cm.theta0);
        cm.payoff_scale = number_or(*it, "payoff_scale", cm.payoff_scale);
        cm.bound = number_or(*it, "bound", cm.bound);
        cm.eta = number_or(*it, "eta", cm.eta);
        cm.constant_payoff = it->value("constant_payoff", false);
        cm.constant_value = number_or(*it, "constant_value", 0.0);
        if (!(cm.eta > 0.0)) throw ConfigError("complete_market.eta must be positive");
    }

    Fnv1a h;
    h.feed(j.dump());
    c.config_hash = h.digest();
    return c;
}

ScenarioConfig ScenarioConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error in ") + path + ": " + e.what());
    }
    return from_json(j);
}

ScenarioConfig ScenarioConfig::from_string(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    return from_json(j);
}

namespace {

const char* kFlatThetaEntropic = R"json({
  "name": "flat-theta-entropic",
  "model": {
    "theta": {"name": "constant", "value": 0.2},
    "l": {"name": "linear_mean_revert", "kappa": 1.0},
    "rho": 0.0, "gamma": 1.0, "theta_bound": 0.2, "dissipativity": 1.0
  },
  "endowment": {
    "kind": "terminal-factor-function",
    "payoff": {"name": "tanh_scaled", "scale": 0.5},
    "bound": 0.5, "maturity": 1.0
  },
  "numerics": {
    "dt": 0.004, "n_paths": 100000, "seed": 42,
    "v_grid": {"lo": -6.0, "hi": 6.0, "nodes": 1201},
    "pde_time_steps": 1000, "T": 1.0, "xi": 0.3
  },
  "task": {
    "operations": ["ergodic", "primal", "dual", "oce", "verify"],
    "ergodic_method": "ode-grid",
    "oce": {"T_prime_factors": [1.0, 1.5, 2.0], "cash_c": 0.3, "lambda": 0.5},
    "n_perturbations": 6
  }
})json";

const char* kTanhFactorOce = R"json({
  "name": "tanh-factor-oce",
  "model": {
    "theta": {"name": "tanh_scaled", "scale": 0.3},
    "l": {"name": "linear_mean_revert", "kappa": 1.0},
    "rho": 0.5, "gamma": 1.0, "theta_bound": 0.3, "dissipativity": 1.0
  },
  "endowment": {
    "kind": "terminal-factor-function",
    "payoff": {"name": "tanh_scaled", "scale": 0.5},
    "bound": 0.5, "maturity": 1.0
  },
  "numerics": {
    "dt": 0.004, "n_paths": 100000, "seed": 42,
    "v_grid": {"lo": -6.0, "hi": 6.0, "nodes": 1201},
    "pde_time_steps": 1000, "T": 1.0, "xi": 0.3
  },
  "task": {
    "operations": ["ergodic", "primal", "dual", "oce", "verify"],
    "ergodic_method": "ode-grid",
    "cross_method_check": true,
    "oce": {"T_prime_factors": [1.0, 1.5, 2.0], "cash_c": 0.3, "lambda": 0.5},
    "n_perturbations": 6
  }
})json";

const char* kClassicalReduction = R"json({
  "name": "classical-reduction",
  "model": {
    "theta": {"name": "zero"},
    "l": {"name": "linear_mean_revert", "kappa": 1.0},
    "rho": 0.0, "gamma": 1.0, "theta_bound": 1e-9, "dissipativity": 1.0
  },
  "endowment": {
    "kind": "terminal-factor-function",
    "payoff": {"name": "tanh_scaled", "scale": 0.8},
    "bound": 0.8, "maturity": 1.0
  },
  "numerics": {
    "dt": 0.004, "n_paths": 100000, "seed": 42,
    "v_grid": {"lo": -6.0, "hi": 6.0, "nodes": 1201},
    "pde_time_steps": 1000, "T": 1.0, "xi": 0.0
  },
  "task": {
    "operations": ["ergodic", "primal", "oce"],
    "ergodic_method": "ode-grid"
  }
})json";

const char* kDecouplingCase2 = R"json({
  "name": "decoupling-case2",
  "model": {
    "theta": {"name": "zero"},
    "l": {"name": "linear_mean_revert", "kappa": 1.0},
    "rho": 0.5, "gamma": 1.0, "theta_bound": 1e-9, "dissipativity": 1.0
  },
  "endowment": {
    "kind": "constant", "value": 0.0, "maturity": 0.25
  },
  "numerics": {
    "dt": 0.005, "n_paths": 2000, "seed": 42,
    "v_grid": {"lo": -6.0, "hi": 6.0, "nodes": 601},
    "pde_time_steps": 200, "T": 0.25
  },
  "task": {
    "operations": ["decoupling"],
    "ergodic_method": "ode-grid"
  },
  "decoupling": {
    "family": "shifted_concave",
    "a": 1.0, "b": 0.5, "eps": 2.0,
    "payoff_a": 0.3, "payoff_b": 0.5,
    "T": 0.25, "x0": 0.0,
    "v_grid": {"lo": -4.0, "hi": 4.0, "nodes": 61},
    "x_lo": -6.0, "x_hi": 6.0, "nx": 61, "nt": 100
  }
})json";

const char* kNegativeControl = R"json({
  "name": "negative-control",
  "model": {
    "theta": {"name": "constant", "value": 0.2},
    "l": {"name": "linear_mean_revert", "kappa": 1.0},
    "rho": 0.5, "gamma": 1.0, "theta_bound": 0.2, "dissipativity": 1.0
  },
  "endowment": {
    "kind": "terminal-factor-function",
    "payoff": {"name": "tanh_scaled", "scale": 0.5},
    "bound": 0.5, "maturity": 1.0
  },
  "numerics": {
    "dt": 0.004, "n_paths": 40000, "seed": 42,
    "v_grid": {"lo": -6.0, "hi": 6.0, "nodes": 1201},
    "pde_time_steps": 1000, "T": 1.0, "xi": 0.3
  },
  "task": {
    "operations": ["ergodic", "primal", "verify"],
    "ergodic_method": "ode-grid",
    "negative_control": true,
    "n_perturbations": 4
  }
})json";

}  // namespace

const std::vector<std::string>& bundled_scenario_names() {
    static const std::vector<std::string> names = {
        "flat-theta-entropic", "tanh-factor-oce", "classical-reduction", "decoupling-case2",
        "negative-control"};
    return names;
}

std::string bundled_scenario_text(const std::string& name) {
    if (name == "flat-theta-entropic") return kFlatThetaEntropic;
    if (name == "tanh-factor-oce") return kTanhFactorOce;
    if (name == "classical-reduction") return kClassicalReduction;
    if (name == "decoupling-case2") return kDecouplingCase2;
    if (name == "negative-control") return kNegativeControl;
    throw ConfigError("unknown bundled scenario: " + name);
}

}  // namespace fpp
