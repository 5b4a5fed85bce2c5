#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fpp/config.hpp"
#include "fpp/runner.hpp"

using namespace fpp;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// small, fast scenario used by the runner tests
const char* kQuickScenario = R"json({
  "name": "quick",
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
    "dt": 0.01, "n_paths": 4000, "seed": 42,
    "v_grid": {"lo": -6.0, "hi": 6.0, "nodes": 401},
    "pde_time_steps": 200, "T": 1.0, "xi": 0.3
  },
  "task": {
    "operations": ["ergodic", "primal", "dual", "oce"],
    "ergodic_method": "ode-grid",
    "oce": {"T_prime_factors": [1.0, 1.5], "cash_c": 0.3, "lambda": 0.5},
    "n_perturbations": 2
  }
})json";

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

int run_cli(const std::string& args) {
    const char* cli = std::getenv("FPP_CLI");
    REQUIRE(cli != nullptr);
    std::string cmd = std::string(cli) + " " + args + " > /tmp/fpp_cli_out.txt 2>&1";
    int rc = std::system(cmd.c_str());
    return WEXITSTATUS(rc);
}

}  // namespace

TEST_CASE("schema validation catches the documented violations") {
    auto base = json::parse(kQuickScenario);

    SUBCASE("rho out of range") {
        auto j = base;
        j["model"]["rho"] = 1.2;
        CHECK_THROWS_AS(ScenarioConfig::from_json(j), ConfigError);
    }
    SUBCASE("unknown function name") {
        auto j = base;
        j["model"]["theta"] = {{"name", "mystery"}};
        CHECK_THROWS_AS(ScenarioConfig::from_json(j), ConfigError);
    }
    SUBCASE("missing model block") {
        auto j = base;
        j.erase("model");
        CHECK_THROWS_AS(ScenarioConfig::from_json(j), ConfigError);
    }
    SUBCASE("unknown operation") {
        auto j = base;
        j["task"]["operations"] = {"frobnicate"};
        CHECK_THROWS_AS(ScenarioConfig::from_json(j), ConfigError);
    }
    SUBCASE("negative bound") {
        auto j = base;
        j["endowment"]["bound"] = -1.0;
        CHECK_THROWS_AS(ScenarioConfig::from_json(j), ConfigError);
    }
    SUBCASE("bad lambda") {
        auto j = base;
        j["task"]["oce"]["lambda"] = 1.5;
        CHECK_THROWS_AS(ScenarioConfig::from_json(j), ConfigError);
    }
}

TEST_CASE("bundled scenarios parse and cover the registry") {
    for (const auto& name : bundled_scenario_names()) {
        auto cfg = ScenarioConfig::from_string(bundled_scenario_text(name));
        CHECK(cfg.name == name);
    }
    CHECK_THROWS_AS(bundled_scenario_text("nope"), ConfigError);
}

TEST_CASE("scenario files stay in sync with the embedded registry") {
    const char* dir = std::getenv("FPP_SCENARIOS");
    REQUIRE(dir != nullptr);
    for (const auto& name : bundled_scenario_names()) {
        std::string path = std::string(dir) + "/" + name + ".json";
        INFO(path);
        REQUIRE(fs::exists(path));
        CHECK(read_file(path) == bundled_scenario_text(name));
    }
}

TEST_CASE("pipeline produces a summary with the pinned headline numbers") {
    auto cfg = ScenarioConfig::from_string(kQuickScenario);
    auto res = run_pipeline(cfg, "/tmp/fpp_run_a");
    CHECK(res.exit_code == kExitOk);
    CHECK(res.summary["ergodic"]["lambda"].get<double>() == doctest::Approx(-0.02).epsilon(1e-8));
    CHECK(res.summary.contains("primal"));
    CHECK(res.summary.contains("dual"));
    CHECK(res.summary["oce"].contains("dual_gap"));
    CHECK(res.summary["checks"].contains("round_trip"));
    CHECK(fs::exists("/tmp/fpp_run_a/summary.json"));
    CHECK(fs::exists("/tmp/fpp_run_a/ergodic.csv"));
    CHECK(fs::exists("/tmp/fpp_run_a/primal_field.csv"));
    CHECK(fs::exists("/tmp/fpp_run_a/axioms.csv"));
}

TEST_CASE("identical config and seed give byte-identical outputs") {
    auto cfg = ScenarioConfig::from_string(kQuickScenario);
    auto r1 = run_pipeline(cfg, "/tmp/fpp_det_1");
    auto r2 = run_pipeline(cfg, "/tmp/fpp_det_2");
    CHECK(r1.exit_code == r2.exit_code);
    CHECK(read_file("/tmp/fpp_det_1/summary.json") == read_file("/tmp/fpp_det_2/summary.json"));
    CHECK(read_file("/tmp/fpp_det_1/primal_field.csv") ==
          read_file("/tmp/fpp_det_2/primal_field.csv"));
    CHECK(read_file("/tmp/fpp_det_1/ergodic.csv") == read_file("/tmp/fpp_det_2/ergodic.csv"));
}

TEST_CASE("report rendering surfaces the key lines") {
    auto cfg = ScenarioConfig::from_string(kQuickScenario);
    auto res = run_pipeline(cfg, "/tmp/fpp_run_rep");
    auto text = render_report(res.summary);
    CHECK(text.find("lambda=") != std::string::npos);
    CHECK(text.find("pass:") != std::string::npos);
}

TEST_CASE("cli exit codes honor the contract") {
    SUBCASE("schema violation exits 2") {
        std::ofstream bad("/tmp/fpp_bad.json");
        bad << R"({"model": {"theta": {"name": "constant", "value": 0.1},
                  "l": {"name": "zero"}, "rho": 1.2, "gamma": 1.0},
                  "endowment": {"kind": "constant", "value": 0.0},
                  "numerics": {"T": 1.0}, "task": {"operations": ["ergodic"]}})";
        bad.close();
        CHECK(run_cli("run --config /tmp/fpp_bad.json --out-dir /tmp/fpp_out_bad") == 2);
    }
    SUBCASE("unparseable json exits 2") {
        std::ofstream bad("/tmp/fpp_bad2.json");
        bad << "{ not json";
        bad.close();
        CHECK(run_cli("run --config /tmp/fpp_bad2.json --out-dir /tmp/fpp_out_bad2") == 2);
    }
    SUBCASE("missing config exits 2") {
        CHECK(run_cli("run --config /tmp/fpp_no_such.json") == 2);
        CHECK(run_cli("run") == 2);
    }
    SUBCASE("case-2 horizon violation exits 3") {
        auto j = json::parse(bundled_scenario_text("decoupling-case2"));
        j["decoupling"]["T"] = 5.0;  // far beyond the admissible horizon
        j["endowment"]["maturity"] = 5.0;
        j["numerics"]["T"] = 5.0;
        std::ofstream f("/tmp/fpp_case2_bad.json");
        f << j.dump();
        f.close();
        CHECK(run_cli("run --config /tmp/fpp_case2_bad.json --out-dir /tmp/fpp_out_c2") == 3);
    }
    SUBCASE("ergodic subcommand on the bundled flat scenario exits 0") {
        CHECK(run_cli("ergodic --scenario flat-theta-entropic --out-dir /tmp/fpp_out_erg") == 0);
        auto j = json::parse(read_file("/tmp/fpp_out_erg/summary.json"));
        CHECK(j["ergodic"]["lambda"].get<double>() == doctest::Approx(-0.02).epsilon(1e-8));
    }
    SUBCASE("report subcommand renders a stored summary") {
        CHECK(run_cli("ergodic --scenario flat-theta-entropic --out-dir /tmp/fpp_out_rep2") == 0);
        CHECK(run_cli("report --in /tmp/fpp_out_rep2/summary.json") == 0);
        CHECK(read_file("/tmp/fpp_cli_out.txt").find("lambda=") != std::string::npos);
    }
    SUBCASE("scenario listing") {
        CHECK(run_cli("scenarios") == 0);
        CHECK(read_file("/tmp/fpp_cli_out.txt").find("tanh-factor-oce") != std::string::npos);
    }
}

TEST_CASE("negative-control scenario fails with exit 4") {
    auto j = json::parse(bundled_scenario_text("negative-control"));
    // shrink for test speed; the designed failure is seed-independent
    j["numerics"]["n_paths"] = 4000;
    j["numerics"]["v_grid"]["nodes"] = 401;
    j["numerics"]["pde_time_steps"] = 200;
    std::ofstream f("/tmp/fpp_negctl.json");
    f << j.dump();
    f.close();
    CHECK(run_cli("run --config /tmp/fpp_negctl.json --out-dir /tmp/fpp_out_neg") == 4);
    auto out = json::parse(read_file("/tmp/fpp_out_neg/summary.json"));
    CHECK_FALSE(out["pass"].get<bool>());
    CHECK(out["checks"]["optimality_of_candidate"]["pass"].get<bool>() == false);
}

TEST_CASE("seed override changes outputs; cache dir honored") {
    auto cfg = ScenarioConfig::from_string(kQuickScenario);
    ScenarioConfig cfg2 = cfg;
    cfg2.seed = 43;
    auto a = run_pipeline(cfg, "/tmp/fpp_seed_a");
    auto b = run_pipeline(cfg2, "/tmp/fpp_seed_b");
    CHECK(a.summary["seed"] != b.summary["seed"]);

    fs::remove_all("/tmp/fpp_cache_dir");
    setenv("FORWARD_FBSDE_CACHE", "/tmp/fpp_cache_dir", 1);
    auto c = run_pipeline(cfg, "/tmp/fpp_seed_c");
    CHECK(c.summary["ergodic"]["cache_hit"].get<bool>() == false);
    auto d = run_pipeline(cfg, "/tmp/fpp_seed_d");
    CHECK(d.summary["ergodic"]["cache_hit"].get<bool>() == true);
    // cached and fresh solves agree bit-for-bit downstream
    auto sd = d.summary;
    auto sc = c.summary;
    sd.erase("ergodic");
    sc.erase("ergodic");
    CHECK(sd.dump() == sc.dump());
    unsetenv("FORWARD_FBSDE_CACHE");
}
