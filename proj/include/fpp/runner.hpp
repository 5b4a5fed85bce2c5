#ifndef FPP_RUNNER_HPP
#define FPP_RUNNER_HPP

#include <set>
#include <string>

#include <json.hpp>

#include "fpp/config.hpp"

namespace fpp {

struct RunResult {
    int exit_code = 0;
    nlohmann::json summary;
};

// Exit-code contract: 0 all checks pass, 2 schema violation, 3 solver error,
// 4 invariant/check failure. No partial-success exit 0.
constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitSolver = 3;
constexpr int kExitInvariant = 4;

// Executes the requested stages (subset of the config's task.operations when
// `only` is non-empty), writes summary.json and CSV artifacts into out_dir.
RunResult run_pipeline(const ScenarioConfig& cfg, const std::string& out_dir,
                       const std::set<std::string>& only = {});

// Full invariant battery regardless of the configured operation list.
RunResult verify_all(const ScenarioConfig& cfg, const std::string& out_dir);

// Renders a stored summary.json as human-readable text.
std::string render_report(const nlohmann::json& summary);

// Cache directory resolution (FORWARD_FBSDE_CACHE or empty for none).
std::string cache_dir();

}  // namespace fpp

#endif
