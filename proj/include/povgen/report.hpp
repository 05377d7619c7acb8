#pragma once

#include "povgen/evaluation.hpp"
#include "povgen/task.hpp"

#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace povgen {

inline constexpr std::string_view kInfrastructureError = "InfrastructureError";

struct TaskSummary {
    std::string task_id;
    Cwe cwe = Cwe::CodeInjection94;
    std::optional<VerdictCategory> category; // absent when the task hit an infrastructure error
    double spent_usd = 0;
    std::chrono::milliseconds elapsed{0};
    int attempts = 0;
    std::optional<std::string> halted_by;
    std::optional<std::string> error;
};

struct CweRow {
    int tasks = 0;
    int reached = 0;
    std::map<std::string, int> by_category;
    double rate() const { return tasks == 0 ? 0.0 : static_cast<double>(reached) / tasks; }
};

struct BatchReport {
    std::vector<TaskSummary> per_task; // sorted by task id
    std::map<std::string, int> funnel;  // category -> count; sums to per_task.size()
    std::map<std::string, CweRow> per_cwe;
};

BatchReport build_batch_report(std::vector<TaskSummary> tasks);

nlohmann::json to_json(const BatchReport& r);
std::string render_text(const BatchReport& r);

// result.json layout shared by the run and report commands.
nlohmann::json summary_json(const TaskSummary& s);
TaskSummary summary_from_result(const nlohmann::json& result);

// Reads every <out_dir>/<task>/state/result.json.
BatchReport load_batch_report(const std::filesystem::path& out_dir);

} // namespace povgen
