#include <cstdlib>
#include <fstream>
#include <iostream>
#include <set>
#include <string>

#include <CLI11.hpp>

#include "fpp/config.hpp"
#include "fpp/runner.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string scenario;
    std::string out_dir = "out";
    long long seed_override = -1;
    unsigned threads = 0;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "Path to a JSON scenario config");
    cmd->add_option("--scenario", args.scenario, "Name of a bundled scenario");
    cmd->add_option("--out-dir", args.out_dir, "Output directory for reports");
    cmd->add_option("--seed", args.seed_override, "Override the config seed");
    cmd->add_option("--threads", args.threads, "Worker threads (0 = hardware default)");
}

fpp::ScenarioConfig load_config(const CommonArgs& args) {
    if (args.config_path.empty() && args.scenario.empty())
        throw fpp::ConfigError("provide --config FILE or --scenario NAME");
    fpp::ScenarioConfig cfg = args.config_path.empty()
                                  ? fpp::ScenarioConfig::from_string(
                                        fpp::bundled_scenario_text(args.scenario))
                                  : fpp::ScenarioConfig::from_file(args.config_path);
    if (args.seed_override >= 0) cfg.seed = static_cast<std::uint64_t>(args.seed_override);
    if (args.threads) cfg.threads = args.threads;
    return cfg;
}

int dispatch(const CommonArgs& args, const std::set<std::string>& stages, bool full_verify) {
    try {
        fpp::ScenarioConfig cfg = load_config(args);
        fpp::RunResult res = full_verify ? fpp::verify_all(cfg, args.out_dir)
                                         : fpp::run_pipeline(cfg, args.out_dir, stages);
        if (res.exit_code != fpp::kExitOk && res.summary.contains("first_failure")) {
            const auto& f = res.summary["first_failure"];
            std::cerr << "invariant failure: " << f.value("name", std::string("?"))
                      << " statistic=" << f.value("statistic", 0.0)
                      << " threshold=" << f.value("threshold", 0.0) << "\n";
        }
        return res.exit_code;
    } catch (const fpp::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return fpp::kExitConfig;
    } catch (const fpp::InvariantError& e) {
        std::cerr << "invariant failure: " << e.what() << "\n";
        return fpp::kExitInvariant;
    } catch (const fpp::SolverError& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return fpp::kExitSolver;
    } catch (const std::exception& e) {
        std::cerr << "solver error: " << e.what() << "\n";
        return fpp::kExitSolver;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"forward-fbsde: forward performance criteria with random endowment"};
    app.require_subcommand(1);

    CommonArgs a_ergodic, a_primal, a_dual, a_oce, a_verify, a_run;
    auto* c_ergodic = app.add_subcommand("ergodic", "Solve the ergodic equation");
    add_common(c_ergodic, a_ergodic);
    auto* c_primal = app.add_subcommand("primal", "Solve the primal backward equation");
    add_common(c_primal, a_primal);
    auto* c_dual = app.add_subcommand("dual", "Dual solution via the primal transform");
    add_common(c_dual, a_dual);
    auto* c_oce = app.add_subcommand("oce", "Forward optimized certainty equivalent");
    add_common(c_oce, a_oce);
    auto* c_verify = app.add_subcommand("verify", "Run the full invariant battery");
    add_common(c_verify, a_verify);
    auto* c_run = app.add_subcommand("run", "Run the operations listed in the config");
    add_common(c_run, a_run);

    std::string report_in;
    auto* c_report = app.add_subcommand("report", "Render a stored summary.json");
    c_report->add_option("--in", report_in, "Path to summary.json")->required();

    std::string list_dummy;
    auto* c_list = app.add_subcommand("scenarios", "List bundled scenarios");
    (void)c_list;

    CLI11_PARSE(app, argc, argv);

    if (c_report->parsed()) {
        std::ifstream in(report_in);
        if (!in) {
            std::cerr << "config error: cannot open " << report_in << "\n";
            return fpp::kExitConfig;
        }
        nlohmann::json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            std::cerr << "config error: " << e.what() << "\n";
            return fpp::kExitConfig;
        }
        std::cout << fpp::render_report(j);
        return 0;
    }
    if (c_list->parsed()) {
        for (const auto& n : fpp::bundled_scenario_names()) std::cout << n << "\n";
        return 0;
    }
    if (c_ergodic->parsed()) return dispatch(a_ergodic, {"ergodic"}, false);
    if (c_primal->parsed()) return dispatch(a_primal, {"ergodic", "primal"}, false);
    if (c_dual->parsed()) return dispatch(a_dual, {"ergodic", "primal", "dual"}, false);
    if (c_oce->parsed()) return dispatch(a_oce, {"ergodic", "primal", "oce"}, false);
    if (c_verify->parsed()) return dispatch(a_verify, {}, true);
    if (c_run->parsed()) return dispatch(a_run, {}, false);
    return 0;
}
