#pragma once

#include "povgen/sandbox.hpp"
#include "povgen/task.hpp"

#include <filesystem>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace povgen {

inline constexpr std::string_view kTracePrefix = "FAULTLINE_COV:";
inline constexpr std::string_view kInstrumentMarker = "povgen-instrumented";

struct CweCriteria {
    Cwe cwe;
    std::string success_text;
    std::string prompt_fragment; // the {cwe_desc} binding of the test-generation prompt
};

CweCriteria cwe_criteria(Cwe cwe);
// Throws ValidationError for ids outside the supported set.
CweCriteria cwe_criteria(std::string_view cwe_id);

struct InstrumentationTarget {
    std::filesystem::path file; // root-relative
    std::string function_name;   // the fix_functions entry; printed verbatim in the trace line
    std::size_t insertion_line = 0; // 1-based line the trace statement lands on
    bool inline_insert = false;      // body starts on the brace line

    bool operator==(const InstrumentationTarget&) const = default;
};

struct InstrumentationPlan {
    std::vector<InstrumentationTarget> targets;
    std::vector<std::string> missing; // fix functions with no located definition
    std::vector<std::string> warnings;
    std::string trace_prefix{kTracePrefix};
};

// Source files scanned per language.
bool is_source_file(const std::filesystem::path& p, Language lang);

// Lexical scan for definitions of the named functions. When only_files is
// given, files outside that root-relative set are not considered. Throws
// NoTargetsFound when nothing is located.
InstrumentationPlan plan_instrumentation(const std::filesystem::path& root, const std::vector<std::string>& fix_functions,
                                         Language lang, const std::set<std::string>* only_files = nullptr);

// Definitions located in one file's text (exposed for tests).
std::vector<InstrumentationTarget> find_definitions(std::string_view text, const std::string& function_name, Language lang);

// Rewrites text, inserting a trace statement into each named function body.
// Bodies already carrying the trace statement are left alone.
std::string instrument_source(std::string_view text, const std::set<std::string>& functions, Language lang);

struct InstrumentationBackup {
    std::filesystem::path backup_dir;
    std::vector<std::filesystem::path> files; // root-relative
};

// Files are copied to backup_dir before modification; the plan's file and
// function sets are honoured, positions are recomputed from current content.
InstrumentationBackup apply_instrumentation(const std::filesystem::path& root, const InstrumentationPlan& plan, Language lang,
                                            const std::filesystem::path& backup_dir);
void restore_instrumentation(const std::filesystem::path& root, const InstrumentationBackup& backup);

// Fix functions named by trace tokens: the prefix followed by a run of
// non-space characters that equals a fix_functions entry exactly. Other
// names are ignored.
std::set<std::string> scan_trace_lines(std::string_view logs, const std::vector<std::string>& fix_functions);

enum class VerdictCategory { BuildFailed, RanButPassed, FailedNoCoverage, ReachedVulnerableFunction, SuccessPendingManualReview };

std::string_view to_string(VerdictCategory c);
std::optional<VerdictCategory> parse_verdict_category(std::string_view s);

struct Verdict {
    bool build_ok = false;
    std::optional<bool> exit_nonzero;
    std::set<std::string> covered_functions;
    bool coverage_hit = false;
    bool coverage_known = true;
    VerdictCategory category = VerdictCategory::BuildFailed;
    std::vector<std::string> checklist;
    std::vector<std::string> warnings;
};

// First failing rung: build, then nonzero exit, then coverage.
VerdictCategory classify(bool build_ok, std::optional<bool> exit_nonzero, bool coverage_hit);

// The reporting layer's status: ReachedVulnerableFunction verdicts await a
// human check.
VerdictCategory reported_status(VerdictCategory c);

std::vector<std::string> manual_checklist(Cwe cwe);

struct EvaluationOptions {
    std::string image_tag;
    std::chrono::milliseconds time_limit{std::chrono::minutes(10)};
    std::filesystem::path backup_dir; // must lie outside the workspace
    const std::set<std::string>* project_files = nullptr;
};

// Instruments, builds and runs the workspace, restores the sources, grades.
// Throws EngineUnavailable.
Verdict evaluate(const VulnerabilityTask& task, const SandboxRoot& sb, const EvaluationOptions& opts,
                 BuildRunReport* report_out = nullptr);

} // namespace povgen
