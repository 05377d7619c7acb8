#pragma once

#include "povgen/evaluation.hpp"
#include "povgen/llm.hpp"
#include "povgen/prompts.hpp"
#include "povgen/sandbox.hpp"
#include "povgen/structured.hpp"
#include "povgen/task.hpp"

#include <json.hpp>

#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace povgen {

struct AblationConfig {
    bool use_flow = true;
    bool use_branch = true;
    int max_repair_iters = 5;
    int max_turns_per_stage = 30;
};

// Throws ConfigError.
void validate(const AblationConfig& cfg);

enum class StageTerminal { PayloadEmitted, DoneEmitted, TurnCapReached, BudgetExhausted, TimeExhausted };

std::string_view to_string(StageTerminal t);

struct ToolEvent {
    ToolCall call;
    std::string result_digest;
    bool truncated = false;
    bool error = false;
};

struct LedgerSnapshot {
    double spent_usd = 0;
    std::size_t model_calls = 0;
};

struct AgentTranscript {
    Conversation conversation;
    std::vector<ToolEvent> tool_events;
    LedgerSnapshot ledger_snapshot;
};

struct StageResult {
    StageId stage = StageId::FlowReasoning;
    std::string label; // "flow", "branch", "testgen", "repair-1", ...
    AgentTranscript transcript;
    std::optional<Payload> payload;
    StageTerminal terminal = StageTerminal::TurnCapReached;
};

// Append-only line-delimited event log with timestamps.
class TranscriptLog {
public:
    TranscriptLog() = default;
    explicit TranscriptLog(std::filesystem::path file);

    void append(nlohmann::json record);
    const std::filesystem::path& path() const noexcept { return file_; }

private:
    std::filesystem::path file_;
    std::mutex mu_;
};

struct AgentContext {
    Gateway& gateway;
    BudgetLedger& ledger;
    std::string model_id;
    const SandboxRoot& sandbox;
    std::string task_id;
    TranscriptLog* log = nullptr;
    unsigned* run_counter = nullptr; // image tag sequence for the Run tool
};

using TerminalPredicate = std::function<bool(const AgentAction&)>;

// The model/tool turn loop. `conv` must end with a framework turn. Only
// infrastructure failures (transport, replay miss, engine) escape as
// exceptions; every agent outcome is in StageResult::terminal.
StageResult agent_loop(StageId stage, std::string label, Conversation conv, AgentContext& ctx,
                       std::optional<PayloadKind> expected, const TerminalPredicate& terminal, int max_turns,
                       std::span<const ToolName> allowed_tools);

std::span<const ToolName> read_only_tools();
std::span<const ToolName> all_tools();

// Prompt builders (bindings included).
std::string flow_prompt(const VulnerabilityTask& task);
std::string branch_part1_prompt(const VulnerabilityTask& task, const std::optional<Flow>& flow);
std::string branch_part2_prompt();
std::string testgen_prompt(const VulnerabilityTask& task, const std::optional<Flow>& flow,
                           const std::optional<ConditionList>& conditions, std::string_view workdir);
std::string repair_prompt(std::string_view feedback);

StageResult run_flow_stage(const VulnerabilityTask& task, AgentContext& ctx, const AblationConfig& cfg);

struct BranchStageResult {
    std::optional<BranchSequence> branches;
    std::optional<ConditionList> conditions;
    StageResult stage;
};

BranchStageResult run_branch_stage(const VulnerabilityTask& task, AgentContext& ctx, const std::optional<Flow>& flow,
                                   const AblationConfig& cfg);

StageResult run_testgen_stage(const VulnerabilityTask& task, AgentContext& ctx, const std::optional<Flow>& flow,
                              const std::optional<ConditionList>& conditions, const AblationConfig& cfg);

struct ValidationRecord {
    int attempt = 0;
    BuildRunReport report;
    bool success = false; // built and exited nonzero
};

struct RepairOutcome {
    bool build_ok = false;
    bool exit_nonzero = false;
    bool success = false;
    int attempts = 0;
    std::vector<ValidationRecord> validations;
    std::vector<StageResult> transcripts; // repair stages only
    std::optional<StageTerminal> halted_by; // budget or time exhaustion
};

// Validation text handed to the repair prompt.
std::string repair_feedback(const BuildRunReport& r, std::size_t max_bytes);

// Validates the workspace after test generation and repairs until the test
// builds and exits nonzero or max(1, max_repair_iters) validations ran.
RepairOutcome repair_loop(const VulnerabilityTask& task, AgentContext& ctx, const AblationConfig& cfg,
                          std::optional<StageTerminal> testgen_terminal,
                          const std::function<void(const StageResult&)>& on_stage = {});

struct PipelineReport {
    std::string task_id;
    Cwe cwe = Cwe::CodeInjection94;
    AblationConfig ablation;
    std::string model_id;
    std::vector<StageResult> stages;
    std::optional<Flow> flow;
    std::optional<BranchSequence> branches;
    std::optional<ConditionList> conditions;
    RepairOutcome repair;
    std::optional<Verdict> verdict;
    std::optional<BuildRunReport> evaluation_run; // build and run of the instrumented workspace
    std::optional<StageTerminal> halted_by;
    double spent_usd = 0;
    std::size_t model_calls = 0;
    std::chrono::milliseconds elapsed{0};
    std::vector<std::string> notes;
};

struct PipelineContext {
    Gateway& gateway;
    BudgetLedger& ledger;
    std::string model_id;
    const SandboxRoot& sandbox;
    TranscriptLog* log = nullptr;
    // When set, payloads and per-stage transcripts are written here as soon
    // as each stage ends.
    std::optional<std::filesystem::path> state_dir;
    std::filesystem::path backup_dir;
    const std::set<std::string>* project_files = nullptr;
};

PipelineReport run_pipeline(const VulnerabilityTask& task, PipelineContext& pctx, const AblationConfig& cfg);

// JSON forms. include_timing=false drops wall-clock fields.
nlohmann::json to_json(const Flow& flow);
nlohmann::json to_json(const BranchSequence& seq);
nlohmann::json to_json(const ConditionList& list);
Flow flow_from_json(const nlohmann::json& j);
BranchSequence branches_from_json(const nlohmann::json& j);
ConditionList conditions_from_json(const nlohmann::json& j);
nlohmann::json to_json(const StageResult& r);
nlohmann::json to_json(const BuildRunReport& r);
nlohmann::json to_json(const Verdict& v);
Verdict verdict_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PipelineReport& r, bool include_timing = true);

std::string report_digest(const PipelineReport& r);

// Model-turn texts of one stage that show up verbatim in another stage's
// prompts or tool results. Turns shorter than min_chars are skipped.
std::vector<std::string> check_stage_isolation(const std::vector<StageResult>& stages, std::size_t min_chars = 64);

// Root-relative regular files under root, skipping .git.
std::set<std::string> snapshot_files(const std::filesystem::path& root);

} // namespace povgen
