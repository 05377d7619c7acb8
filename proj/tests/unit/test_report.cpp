#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "povgen/error.hpp"
#include "povgen/fsutil.hpp"
#include "povgen/report.hpp"

#include <json.hpp>

#include <random>

using namespace povgen;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

const std::vector<Cwe> kCwes{Cwe::PathTraversal22, Cwe::CommandInjection78, Cwe::CrossSiteScripting79, Cwe::CodeInjection94};
const std::vector<std::optional<VerdictCategory>> kOutcomes{
    std::nullopt, VerdictCategory::BuildFailed, VerdictCategory::RanButPassed, VerdictCategory::FailedNoCoverage,
    VerdictCategory::ReachedVulnerableFunction};

std::string label(const std::optional<VerdictCategory>& c)
{
    return c ? std::string(to_string(*c)) : "InfrastructureError";
}

json result_doc(const std::string& id, Cwe cwe, std::optional<VerdictCategory> c, int attempts)
{
    json j{{"task_id", id}, {"cwe", to_string(cwe)}, {"spent_usd", 0.25}, {"repair", {{"attempts", attempts}}}};
    if (c) {
        j["verdict"] = {{"category", to_string(*c)}};
    } else {
        j["verdict"] = nullptr;
        j["error"] = "engine unavailable";
    }
    return j;
}

} // namespace

TEST_CASE("funnel and per-CWE rows agree with an independent tally")
{
    std::mt19937 rng(20240101);
    for (int round = 0; round < 200; ++round) {
        std::uniform_int_distribution<int> n_dist(0, 30);
        int n = n_dist(rng);
        std::vector<TaskSummary> tasks;
        std::map<std::string, int> funnel;
        std::map<std::string, std::pair<int, int>> rows; // cwe -> (tasks, reached)
        for (int i = 0; i < n; ++i) {
            TaskSummary t;
            t.task_id = "t" + std::to_string(rng() % 1000) + "-" + std::to_string(i);
            t.cwe = kCwes[rng() % kCwes.size()];
            t.category = kOutcomes[rng() % kOutcomes.size()];
            ++funnel[label(t.category)];
            auto& row = rows[std::string(to_string(t.cwe))];
            ++row.first;
            row.second += t.category == VerdictCategory::ReachedVulnerableFunction ? 1 : 0;
            tasks.push_back(t);
        }
        auto r = build_batch_report(tasks);
        REQUIRE(r.per_task.size() == static_cast<std::size_t>(n));
        CHECK(std::is_sorted(r.per_task.begin(), r.per_task.end(),
                             [](const TaskSummary& a, const TaskSummary& b) { return a.task_id < b.task_id; }));
        int total = 0;
        for (const auto& [key, count] : r.funnel) {
            total += count;
            auto it = funnel.find(key);
            CHECK(count == (it == funnel.end() ? 0 : it->second));
        }
        CHECK(total == n);
        CHECK(r.per_cwe.size() == rows.size());
        for (const auto& [cwe, expected] : rows) {
            REQUIRE(r.per_cwe.contains(cwe));
            const auto& row = r.per_cwe.at(cwe);
            CHECK(row.tasks == expected.first);
            CHECK(row.reached == expected.second);
            CHECK(row.rate() == doctest::Approx(static_cast<double>(expected.second) / expected.first));
            int by = 0;
            for (const auto& [k, v] : row.by_category) {
                by += v;
            }
            CHECK(by == row.tasks);
        }
    }
}

TEST_CASE("an empty batch has an empty funnel")
{
    auto r = build_batch_report({});
    CHECK(r.funnel.empty());
    CHECK(r.per_cwe.empty());
    CHECK(render_text(r).find("Tasks: 0") == 0);
}

TEST_CASE("results on disk load into the same report")
{
    TempDir tmp;
    struct Row {
        std::string id;
        Cwe cwe;
        std::optional<VerdictCategory> c;
    };
    std::vector<Row> rows{{"b", Cwe::CommandInjection78, VerdictCategory::ReachedVulnerableFunction},
                          {"a", Cwe::CommandInjection78, VerdictCategory::BuildFailed},
                          {"c", Cwe::PathTraversal22, std::nullopt}};
    for (const auto& r : rows) {
        auto dir = tmp.path() / r.id / "state";
        fs::create_directories(dir);
        write_atomic(dir / "result.json", result_doc(r.id, r.cwe, r.c, 2).dump());
    }
    fs::create_directories(tmp.path() / "stray");

    auto report = load_batch_report(tmp.path());
    REQUIRE(report.per_task.size() == 3);
    CHECK(report.per_task[0].task_id == "a");
    CHECK(report.per_task[2].error == "engine unavailable");
    CHECK_FALSE(report.per_task[2].category.has_value());
    CHECK(report.funnel.at("InfrastructureError") == 1);
    CHECK(report.funnel.at("BuildFailed") == 1);
    CHECK(report.funnel.at("RanButPassed") == 0);
    CHECK(report.per_cwe.at("CWE-78").reached == 1);
    CHECK(report.per_cwe.at("CWE-78").rate() == doctest::Approx(0.5));

    auto j = to_json(report);
    CHECK(j["tasks"][1]["status"] == "SuccessPendingManualReview");
    CHECK(j["tasks"][1]["category"] == "ReachedVulnerableFunction");
    CHECK(j["tasks"][2]["status"] == "InfrastructureError");
    CHECK(j["per_cwe"]["CWE-22"]["tasks"] == 1);

    auto text = render_text(report);
    CHECK(text.find("(status SuccessPendingManualReview)") != std::string::npos);
    CHECK(text.find("error: engine unavailable") != std::string::npos);

    fs::create_directories(tmp.path() / "bad" / "state");
    write_atomic(tmp.path() / "bad" / "state" / "result.json", "{not json");
    CHECK_THROWS_AS(load_batch_report(tmp.path()), ParseError);
    CHECK_THROWS_AS(load_batch_report(tmp.path() / "absent"), IoError);
}
