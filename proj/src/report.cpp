#include "povgen/report.hpp"

#include "povgen/error.hpp"
#include "povgen/fsutil.hpp"

#include <algorithm>
#include <iomanip>
#include <sstream>

namespace povgen {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<VerdictCategory, 4> kFunnelOrder{VerdictCategory::BuildFailed, VerdictCategory::RanButPassed,
                                                      VerdictCategory::FailedNoCoverage,
                                                      VerdictCategory::ReachedVulnerableFunction};

std::string category_key(const TaskSummary& s)
{
    return s.category ? std::string(to_string(*s.category)) : std::string(kInfrastructureError);
}

} // namespace

BatchReport build_batch_report(std::vector<TaskSummary> tasks)
{
    BatchReport r;
    std::sort(tasks.begin(), tasks.end(), [](const TaskSummary& a, const TaskSummary& b) { return a.task_id < b.task_id; });
    if (!tasks.empty()) {
        for (auto c : kFunnelOrder) {
            r.funnel[std::string(to_string(c))] = 0;
        }
    }
    for (const auto& t : tasks) {
        auto key = category_key(t);
        ++r.funnel[key];
        auto& row = r.per_cwe[std::string(to_string(t.cwe))];
        ++row.tasks;
        ++row.by_category[key];
        if (t.category == VerdictCategory::ReachedVulnerableFunction) {
            ++row.reached;
        }
    }
    r.per_task = std::move(tasks);
    return r;
}

json summary_json(const TaskSummary& s)
{
    json j{{"task_id", s.task_id},
           {"cwe", to_string(s.cwe)},
           {"category", s.category ? json(to_string(*s.category)) : json(nullptr)},
           {"status", s.category ? json(to_string(reported_status(*s.category))) : json(kInfrastructureError)},
           {"spent_usd", s.spent_usd},
           {"elapsed_ms", s.elapsed.count()},
           {"attempts", s.attempts},
           {"halted_by", s.halted_by ? json(*s.halted_by) : json(nullptr)},
           {"error", s.error ? json(*s.error) : json(nullptr)}};
    return j;
}

TaskSummary summary_from_result(const json& result)
{
    TaskSummary s;
    try {
        s.task_id = result.at("task_id").get<std::string>();
        auto cwe = parse_cwe(result.at("cwe").get<std::string>());
        if (!cwe) {
            throw ParseError("unknown cwe in result for " + s.task_id);
        }
        s.cwe = *cwe;
        if (result.contains("verdict") && result["verdict"].is_object()) {
            s.category = parse_verdict_category(result["verdict"].at("category").get<std::string>());
        }
        s.spent_usd = result.value("spent_usd", 0.0);
        s.elapsed = std::chrono::milliseconds(result.value("elapsed_ms", 0));
        if (result.contains("repair") && result["repair"].is_object()) {
            s.attempts = result["repair"].value("attempts", 0);
        }
        if (result.contains("halted_by") && result["halted_by"].is_string()) {
            s.halted_by = result["halted_by"].get<std::string>();
        }
        if (result.contains("error") && result["error"].is_string()) {
            s.error = result["error"].get<std::string>();
            s.category.reset();
        }
    } catch (const json::exception& e) {
        throw ParseError(std::string("malformed result.json: ") + e.what());
    }
    return s;
}

json to_json(const BatchReport& r)
{
    json tasks = json::array();
    for (const auto& t : r.per_task) {
        tasks.push_back(summary_json(t));
    }
    json per_cwe = json::object();
    for (const auto& [cwe, row] : r.per_cwe) {
        per_cwe[cwe] = {{"tasks", row.tasks}, {"reached", row.reached}, {"rate", row.rate()}, {"by_category", row.by_category}};
    }
    return {{"tasks", std::move(tasks)}, {"funnel", r.funnel}, {"per_cwe", std::move(per_cwe)}};
}

std::string render_text(const BatchReport& r)
{
    std::ostringstream o;
    o << "Tasks: " << r.per_task.size() << "\n\n";
    o << "Funnel\n";
    std::vector<std::string> order;
    for (auto c : kFunnelOrder) {
        order.emplace_back(to_string(c));
    }
    order.emplace_back(kInfrastructureError);
    for (const auto& key : order) {
        auto it = r.funnel.find(key);
        if (it == r.funnel.end()) {
            continue;
        }
        o << "  " << std::left << std::setw(28) << key << std::right << std::setw(5) << it->second;
        if (key == to_string(VerdictCategory::ReachedVulnerableFunction) && it->second > 0) {
            o << "  (status " << to_string(VerdictCategory::SuccessPendingManualReview) << ")";
        }
        o << "\n";
    }
    o << "\nPer-CWE success\n";
    o << "  " << std::left << std::setw(8) << "CWE" << std::right << std::setw(7) << "tasks" << std::setw(9) << "reached"
      << std::setw(9) << "rate" << "\n";
    for (const auto& [cwe, row] : r.per_cwe) {
        o << "  " << std::left << std::setw(8) << cwe << std::right << std::setw(7) << row.tasks << std::setw(9)
          << row.reached << std::setw(8) << std::fixed << std::setprecision(1) << row.rate() * 100.0 << "%\n";
    }
    o << "\nTasks\n";
    for (const auto& t : r.per_task) {
        o << "  " << t.task_id << "  " << to_string(t.cwe) << "  " << category_key(t) << "  spent $" << std::fixed
          << std::setprecision(4) << t.spent_usd << "  attempts " << t.attempts;
        if (t.halted_by) {
            o << "  halted " << *t.halted_by;
        }
        if (t.error) {
            o << "  error: " << *t.error;
        }
        o << "\n";
    }
    return o.str();
}

BatchReport load_batch_report(const fs::path& out_dir)
{
    std::vector<TaskSummary> tasks;
    if (!fs::is_directory(out_dir)) {
        throw IoError("no such output directory: " + out_dir.string());
    }
    for (const auto& e : fs::directory_iterator(out_dir)) {
        auto result = e.path() / "state" / "result.json";
        if (!e.is_directory() || !fs::exists(result)) {
            continue;
        }
        json j;
        try {
            j = json::parse(read_text(result));
        } catch (const json::exception& ex) {
            throw ParseError(result.string() + ": " + ex.what());
        }
        tasks.push_back(summary_from_result(j));
    }
    return build_batch_report(std::move(tasks));
}

} // namespace povgen
