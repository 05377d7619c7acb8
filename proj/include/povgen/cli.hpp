#pragma once

#include "povgen/llm.hpp"
#include "povgen/report.hpp"
#include "povgen/workflow.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace povgen {

inline constexpr std::string_view kDefaultModel = "claude-3-7-sonnet-20250219";

// Prices used when no --price-table is given.
PriceTable default_price_table();

struct RunConfig {
    std::filesystem::path manifest_path;
    std::vector<std::string> task_filter; // empty: every task
    std::string model_id{kDefaultModel};
    GatewayMode mode = GatewayMode::Live;
    std::optional<std::filesystem::path> cache_dir; // entries live in <cache_dir>/<task_id>/
    std::optional<double> budget_usd;                     // overrides the manifest when set
    std::optional<std::chrono::seconds> time_budget;      // overrides the manifest when set
    AblationConfig ablation;
    std::filesystem::path out_dir = "povgen-out";
    int jobs = 1;
    std::string engine = "auto";
    std::optional<std::filesystem::path> price_table;
    // <dir>/<task_id>.script selects a scripted backend for that task.
    std::optional<std::filesystem::path> script_dir;
    std::chrono::milliseconds run_timeout{std::chrono::minutes(10)};
};

// Throws ConfigError.
void validate(const RunConfig& cfg);

std::vector<VulnerabilityTask> select_tasks(const RunConfig& cfg);

// Output layout under out_dir/<task_id>/:
//   workspace/             the project tree the agent works in
//   logs/transcript.jsonl  timestamped event log
//   state/                 workspace.json, flow.json, branches.json,
//                          conditions.json, transcripts/<stage>.json,
//                          result.json, verdict.json
//   engine/                local container-engine state
//   backup/                pre-instrumentation copies
struct TaskPaths {
    std::filesystem::path dir;
    std::filesystem::path workspace;
    std::filesystem::path logs;
    std::filesystem::path state;
    std::filesystem::path engine;
    std::filesystem::path backup;
};

TaskPaths task_paths(const std::filesystem::path& out_dir, const std::string& task_id);

// Runs every selected task; one task's failure never stops the others.
BatchReport cmd_run(const RunConfig& cfg, std::ostream& log);
// Throws MissingPriorPayload when an input payload was never stored.
StageResult cmd_stage(const RunConfig& cfg, const std::string& task_id, StageId stage, std::ostream& log);
Verdict cmd_eval(const RunConfig& cfg, const std::string& task_id, std::ostream& log);
std::string cmd_report(const std::filesystem::path& out_dir, bool as_json);

// Exit codes: 0 ok, 2 configuration error, 3 infrastructure error.
int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err);

} // namespace povgen
