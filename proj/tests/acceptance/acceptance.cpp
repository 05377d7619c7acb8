// Acceptance checks. `povgen_acceptance N` runs one criterion and exits 0
// (pass), 1 (fail) or 77 (skipped); with no argument every criterion runs.

#include "fixture_repo.hpp"
#include "textgen.hpp"
#include "povgen/cli.hpp"
#include "povgen/digest.hpp"
#include "povgen/error.hpp"
#include "povgen/evaluation.hpp"
#include "povgen/fsutil.hpp"
#include "povgen/process.hpp"
#include "povgen/prompts.hpp"
#include "povgen/workflow.hpp"

#include <json.hpp>

#include <functional>
#include <iostream>
#include <sstream>

using namespace povgen;
using namespace povgen::testing;
namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;

namespace {

enum class Status { Pass, Fail, Skip };

struct Outcome {
    Status status = Status::Pass;
    std::string detail;
};

// Collects failed expectations; the first few end up in the detail line.
class Checks {
public:
    void expect(bool ok, const std::string& what)
    {
        ++count_;
        if (!ok) {
            failures_.push_back(what);
        }
    }

    Outcome outcome(const std::string& summary) const
    {
        if (failures_.empty()) {
            return {Status::Pass, summary + " (" + std::to_string(count_) + " checks)"};
        }
        std::string d = std::to_string(failures_.size()) + "/" + std::to_string(count_) + " checks failed: ";
        for (std::size_t i = 0; i < failures_.size() && i < 3; ++i) {
            d += (i ? "; " : "") + failures_[i];
        }
        return {Status::Fail, d};
    }

private:
    std::vector<std::string> failures_;
    int count_ = 0;
};

fs::path scripts_dir() { return fixture_dir() / "scripts"; }
fs::path prices_file() { return fixture_dir() / "prices.json"; }

ProcessResult povgen_cli(const std::vector<std::string>& args)
{
    std::vector<std::string> argv{POVGEN_CLI};
    argv.insert(argv.end(), args.begin(), args.end());
    return run_process({.argv = argv, .timeout = std::chrono::minutes(5)});
}

// One git repository of the toy project shared by every task id.
struct ToyBatch {
    TempDir tmp;
    fs::path manifest = tmp.path() / "manifest.json";
    fs::path cache = tmp.path() / "cache";

    explicit ToyBatch(const std::vector<std::string>& ids)
    {
        auto repo = tmp.path() / "repo";
        auto sha = make_git_repo(fixture_dir() / "toy_cmdi", repo);
        std::vector<json> tasks;
        for (const auto& id : ids) {
            tasks.push_back(toy_task(id, repo, sha));
        }
        write_manifest(manifest, tasks);
    }

    ProcessResult run(const std::string& mode, const fs::path& out) const
    {
        std::vector<std::string> args{"run",          "--manifest",   manifest.string(), "--mode",        mode,
                                      "--cache-dir",  cache.string(), "--out-dir",       out.string(), "--engine",
                                      "local",        "--max-repair-iters", "3"};
        if (mode == "record") {
            args.push_back("--script-dir");
            args.push_back(scripts_dir().string());
        }
        return povgen_cli(args);
    }
};

json result_of(const fs::path& out, const std::string& id)
{
    return json::parse(read_text(out / id / "state" / "result.json"));
}

// In-process pipeline over a prepared toy workspace.
struct PipelineRig {
    TempDir tmp;
    VulnerabilityTask task;
    Workspace ws;
    std::unique_ptr<LocalEngine> engine;
    std::unique_ptr<SandboxRoot> sandbox;
    std::set<std::string> project_files;

    explicit PipelineRig(const std::string& id)
    {
        auto repo = tmp.path() / "repo";
        auto sha = make_git_repo(fixture_dir() / "toy_cmdi", repo);
        json doc{{"schema", 1}, {"tasks", {toy_task(id, repo, sha)}}};
        task = parse_manifest(doc.dump()).front();
        ws = prepare_workspace(task, tmp.path() / "workspace");
        project_files = snapshot_files(ws.root);
        engine = std::make_unique<LocalEngine>(tmp.path() / "engine");
        sandbox = std::make_unique<SandboxRoot>(ws, *engine);
    }

    PipelineReport run(ModelBackend& backend, BudgetLedger& ledger, const AblationConfig& cfg)
    {
        Gateway gw(GatewayMode::Live, &backend, std::nullopt);
        PipelineContext pctx{gw,      ledger, std::string(kDefaultModel), *sandbox, nullptr, tmp.path() / "state",
                             tmp.path() / "backup", &project_files};
        return run_pipeline(task, pctx, cfg);
    }

    fs::path state() const { return tmp.path() / "state"; }
};

AblationConfig repair_cap(int n)
{
    AblationConfig cfg;
    cfg.max_repair_iters = n;
    return cfg;
}

std::string golden(const std::string& name)
{
    return read_text(fs::path(POVGEN_GOLDEN_DIR) / name);
}

std::size_t occurrences(const std::string& hay, const std::string& needle)
{
    std::size_t n = 0;
    for (auto pos = hay.find(needle); pos != std::string::npos; pos = hay.find(needle, pos + needle.size())) {
        ++n;
    }
    return n;
}

// ---------------------------------------------------------------------------

Outcome criterion_1()
{
    Checks c;
    ToyBatch batch({"toy-cmdi"});
    auto start = Clock::now();
    auto rec = batch.run("record", batch.tmp.path() / "rec");
    c.expect(rec.exit_code == 0, "record run exited " + std::to_string(rec.exit_code.value_or(-1)) + ": " + rec.err);
    auto rep1 = batch.run("replay", batch.tmp.path() / "rep1");
    auto rep2 = batch.run("replay", batch.tmp.path() / "rep2");
    auto took = Clock::now() - start;
    c.expect(rep1.exit_code == 0 && rep2.exit_code == 0, "replay runs failed: " + rep1.err + rep2.err);
    if (rec.exit_code != 0 || rep1.exit_code != 0 || rep2.exit_code != 0) {
        return c.outcome("");
    }
    auto r0 = result_of(batch.tmp.path() / "rec", "toy-cmdi");
    auto r1 = result_of(batch.tmp.path() / "rep1", "toy-cmdi");
    auto r2 = result_of(batch.tmp.path() / "rep2", "toy-cmdi");
    c.expect(r1["digest"] == r2["digest"], "replay digests differ");
    c.expect(r0["digest"] == r1["digest"], "record and replay digests differ");
    for (const auto* r : {&r0, &r1, &r2}) {
        c.expect((*r)["verdict"]["category"] == "ReachedVulnerableFunction",
                 "category " + (*r)["verdict"]["category"].dump());
        const auto& ev = (*r)["evaluation_run"];
        c.expect(ev.is_object() && ev["run_stderr_tail"].get<std::string>().find("FAULTLINE_COV:run_lookup") != std::string::npos,
                 "no trace line in the evaluation run");
        c.expect(ev.is_object() && ev["exit_code"].is_number() && ev["exit_code"] != 0, "test did not exit nonzero");
    }
    c.expect(took < 3min, "took longer than three minutes");
    auto secs = std::chrono::duration_cast<std::chrono::milliseconds>(took).count() / 1000.0;
    std::ostringstream d;
    d << "record + 2 replays in " << secs << " s, digest " << r1["digest"].get<std::string>().substr(0, 12);
    return c.outcome(d.str());
}

Outcome criterion_2()
{
    Checks c;
    const std::vector<std::string> ids{"toy-buildfail", "toy-cmdi", "toy-nocov", "toy-passes"};
    ToyBatch batch(ids);
    auto out = batch.tmp.path() / "out";
    auto rec = batch.run("record", out);
    c.expect(rec.exit_code == 0, "batch run exited " + std::to_string(rec.exit_code.value_or(-1)) + ": " + rec.err);
    auto rep = povgen_cli({"report", "--out-dir", out.string(), "--json"});
    c.expect(rep.exit_code == 0, "report failed: " + rep.err);
    if (rep.exit_code != 0) {
        return c.outcome("");
    }
    auto j = json::parse(rep.out);
    int total = 0;
    for (const auto& [k, v] : j["funnel"].items()) {
        total += v.get<int>();
    }
    c.expect(total == 4, "funnel sums to " + std::to_string(total));
    for (const char* cat : {"BuildFailed", "RanButPassed", "FailedNoCoverage", "ReachedVulnerableFunction"}) {
        c.expect(j["funnel"].value(cat, 0) == 1, std::string(cat) + " count " + j["funnel"].value(cat, json(0)).dump());
    }
    // each task lands in its designed bucket
    const std::map<std::string, std::string> expected{{"toy-buildfail", "BuildFailed"},
                                                      {"toy-cmdi", "ReachedVulnerableFunction"},
                                                      {"toy-nocov", "FailedNoCoverage"},
                                                      {"toy-passes", "RanButPassed"}};
    for (const auto& t : j["tasks"]) {
        auto id = t["task_id"].get<std::string>();
        c.expect(t["category"] == expected.at(id), id + " is " + t["category"].dump());
    }
    c.expect(j["per_cwe"]["CWE-78"]["tasks"] == 4, "per-CWE task count");
    return c.outcome("funnel " + j["funnel"].dump());
}

Outcome criterion_3()
{
    Checks c;
    auto excerpt = [](const char* f) { return read_text(fixture_dir() / "excerpts" / f); };

    auto flow = parse_flow(excerpt("flow_reply.txt"));
    c.expect(flow.points.size() == 2 && flow.points.front().role == FlowRole::Source &&
                 flow.points.back().role == FlowRole::Sink && flow.points.back().variable == "e.getMessage()",
             "flow excerpt");
    auto src = parse_flow("<FLOW>\n" + excerpt("source_record.txt") +
                          "\n{\"role\": \"Sink\", \"code\": \"s(v);\", \"variable\": \"v\", \"file\": \"S.java\"}\n</FLOW>");
    c.expect(src.points[0].code == "public boolean isValid(String value, ..." && !src.points[0].remarks,
             "source record excerpt");
    auto seq = parse_branch_sequence("<SEQUENCE>\n" + excerpt("branch_record.txt") + "</SEQUENCE>");
    c.expect(seq.size() == 1 && seq[0].type.kind == BranchKind::IfElse &&
                 seq[0].outcome == "False - the value should not be null",
             "branch record excerpt");
    c.expect(parse_conditions(excerpt("conditions_reply.txt")).conditions.size() == 3, "conditions excerpt");
    c.expect(parse_conditions(excerpt("conditions_reopened.txt")).conditions.size() == 2, "reopened conditions excerpt");

    TextGen g(424242);
    int round_trips = 0;
    for (int i = 0; i < 200; ++i) {
        auto f = random_flow(g);
        auto b = random_branches(g);
        auto l = random_conditions(g);
        try {
            bool ok = parse_flow(render_flow(f)) == f && parse_branch_sequence(render_branch_sequence(b)) == b &&
                      parse_conditions(render_conditions(l)) == l;
            c.expect(ok, "round trip " + std::to_string(i));
            round_trips += ok ? 3 : 0;
        } catch (const std::exception& e) {
            c.expect(false, "round trip " + std::to_string(i) + " threw " + e.what());
        }
    }

    std::mt19937 rng(0xACCE);
    TextGen fg(0x5EED);
    const std::optional<PayloadKind> kinds[] = {std::nullopt, PayloadKind::Flow, PayloadKind::BranchSequence,
                                                PayloadKind::Conditions};
    int values = 0;
    int errors = 0;
    for (int i = 0; i < 10000; ++i) {
        auto input = fuzz_input(i, rng, fg);
        try {
            parse_agent_action(input, kinds[i % 4]);
            ++values;
        } catch (const StructuredOutputError&) {
            ++errors;
        } catch (const std::exception& e) {
            c.expect(false, std::string("untyped failure: ") + e.what());
        } catch (...) {
            c.expect(false, "non-standard exception");
        }
    }
    c.expect(values + errors == 10000, "fuzz inputs unaccounted for");
    return c.outcome("5 excerpts, " + std::to_string(round_trips) + " round trips, 10000 fuzz inputs (" +
                     std::to_string(values) + " values, " + std::to_string(errors) + " typed errors)");
}

Outcome criterion_4()
{
    Checks c;
    Bindings b;
    for (const char* slot : {"description", "tool_description", "flow", "conditions", "cwe_desc", "workdir", "feedback"}) {
        std::string upper(slot);
        std::transform(upper.begin(), upper.end(), upper.begin(), [](unsigned char ch) { return std::toupper(ch); });
        b[slot] = "@@" + upper + "@@";
    }
    const std::vector<std::pair<std::string, std::string>> renders{
        {"system.txt", system_prompt()},
        {"flow.txt", render_prompt(flow_template(), b)},
        {"branch_part1.txt", render_prompt(branch_part1_template(true), b)},
        {"branch_part1_no_flow.txt", render_prompt(branch_part1_template(false), b)},
        {"branch_part2.txt", render_prompt(branch_part2_template(), b)},
        {"testgen.txt", render_prompt(testgen_template(true, true), b)},
        {"testgen_no_flow.txt", render_prompt(testgen_template(false, true), b)},
        {"testgen_no_conditions.txt", render_prompt(testgen_template(true, false), b)},
        {"testgen_no_flow_no_conditions.txt", render_prompt(testgen_template(false, false), b)},
        {"repair.txt", render_prompt(repair_template(), b)},
    };
    for (const auto& [file, text] : renders) {
        c.expect(text == golden(file), file + " differs from its snapshot");
    }

    VulnerabilityTask t;
    t.id = "a94";
    t.cwe = Cwe::CodeInjection94;
    t.report_text = "Expression language evaluation of user data.";
    t.fix_functions = {"isValid"};
    Flow flow{{{FlowRole::Source, "isValid(value)", "value", "V.java", std::nullopt},
               {FlowRole::Sink, "buildTemplate(msg)", "msg", "V.java", std::nullopt}}};
    ConditionList conds{{"value has fewer than five fields"}};
    auto full = testgen_prompt(t, flow, conds, "/workspace");
    c.expect(occurrences(full, "input that contains embedded code") == 1, "CWE-94 fragment count");
    auto no_flow = testgen_prompt(t, std::nullopt, conds, "/workspace");
    auto no_cond = testgen_prompt(t, flow, std::nullopt, "/workspace");
    c.expect(no_flow.find("buildTemplate(msg)") == std::string::npos, "flow text present without flow");
    c.expect(no_flow.find("sequence of program points") == std::string::npos, "flow paragraph present without flow");
    c.expect(no_cond.find("value has fewer than five fields") == std::string::npos, "conditions present without branch");
    c.expect(no_cond.find("following conditions") == std::string::npos, "conditions paragraph present without branch");
    c.expect(full.find("buildTemplate(msg)") != std::string::npos && full.find("value has fewer than five fields") != std::string::npos,
             "full prompt is missing its inputs");
    return c.outcome(std::to_string(renders.size()) + " snapshots, fragment once, ablations clean");
}

// Backend with fixed usage per reply that never finishes a stage.
class FixedUsageBackend : public ModelBackend {
public:
    std::uint64_t prompt = 1000;
    std::uint64_t completion = 500;
    std::size_t sends = 0;
    std::vector<Usage> served;

    Usage quote(const Conversation&, const std::string&) override { return {prompt, completion, 0ms}; }
    Completion send(const Conversation&, const std::string&, std::chrono::milliseconds) override
    {
        ++sends;
        Usage u{prompt, completion, 0ms};
        served.push_back(u);
        return {"Still reading the code (" + std::to_string(sends) + ").", u};
    }
};

Outcome criterion_5()
{
    Checks c;
    PipelineRig rig("toy-budget");
    FixedUsageBackend backend;
    auto prices = PriceTable::load(prices_file());
    BudgetLedger ledger(5.0, 40min, prices);
    auto rep = rig.run(backend, ledger, repair_cap(3));

    c.expect(backend.sends == 3, "backend saw " + std::to_string(backend.sends) + " calls");
    c.expect(rep.halted_by == StageTerminal::BudgetExhausted, "pipeline not halted by budget");
    c.expect(!rep.stages.empty() && rep.stages.back().terminal == StageTerminal::BudgetExhausted,
             "last stage terminal is not BudgetExhausted");
    double independent = 0;
    for (const auto& u : backend.served) {
        independent += static_cast<double>(u.prompt_tokens) / 1000.0 * 1.0 + static_cast<double>(u.completion_tokens) / 1000.0 * 1.0;
    }
    c.expect(std::abs(ledger.spent_usd() - independent) < 1e-9, "ledger spend differs from usage sum");
    c.expect(std::abs(rep.spent_usd - independent) < 1e-9, "report spend differs from usage sum");
    c.expect(rep.spent_usd <= 5.0, "spend above cap");
    c.expect(rep.model_calls == 3, "model_calls");
    auto flow_json = rig.state() / "transcripts" / "flow.json";
    c.expect(fs::exists(flow_json), "flow transcript not persisted");
    if (fs::exists(flow_json)) {
        auto j = json::parse(read_text(flow_json));
        c.expect(j["terminal"] == "BudgetExhausted", "persisted terminal");
        int model_turns = 0;
        for (const auto& t : j["turns"]) {
            model_turns += t["speaker"] == "model" ? 1 : 0;
        }
        c.expect(model_turns == 3, "persisted model turns " + std::to_string(model_turns));
    }
    std::ostringstream d;
    d << "3 calls at $1.50, 4th refused, spent $" << rep.spent_usd;
    return c.outcome(d.str());
}

Outcome criterion_6()
{
    Checks c;
    TempDir tmp;
    auto root = tmp.path() / "ws";
    fs::create_directories(root / "src");
    write_atomic(root / "src" / "a.c", "int main(void) { return 0; }\n");
    const std::string prefix = "FROM alpine:3\nWORKDIR /work\n" + std::string(kProtectedMarker) + "\n";
    const std::string dockerfile = prefix + "CMD [\"true\"]\n";
    write_atomic(root / std::string(kDockerfileName), dockerfile);
    auto canary = tmp.path() / "canary.txt";
    write_atomic(canary, "untouched\n");
    fs::create_symlink(canary, root / "link_out");
    fs::create_symlink(tmp.path(), root / "dir_out");

    LocalEngine engine(tmp.path() / "engine");
    SandboxRoot sb(open_workspace(root, prefix), engine);
    const std::vector<std::string> escapes{"../canary.txt", "/etc/passwd", canary.string(), "link_out",
                                           "dir_out/canary.txt", "src/../../canary.txt", "/workspace/../canary.txt"};
    for (const auto& p : escapes) {
        for (auto tool : {ToolName::Read, ToolName::Write, ToolName::ListDir, ToolName::Grep}) {
            ToolCall call{tool, {{"path", p}, {"content", "pwned\n"}, {"pattern", "u"}}};
            auto out = sb.execute(call, "", 60s);
            c.expect(out.error, std::string(to_string(tool)) + " " + p + " was not refused");
        }
    }
    c.expect(read_text(canary) == "untouched\n", "canary modified");
    c.expect(sb.read_file("/workspace/src/a.c").find("return 0") != std::string::npos, "virtual-root read");

    auto guarded = sb.execute({ToolName::Write, {{"path", "Dockerfile.vuln"}, {"content", "FROM evil\nCMD [\"true\"]\n"}}}, "", 60s);
    c.expect(guarded.error, "prefix change accepted");
    c.expect(read_text(root / std::string(kDockerfileName)) == dockerfile, "Dockerfile changed by refused write");
    auto edit = sb.execute({ToolName::Write, {{"path", "Dockerfile.vuln"}, {"content", prefix + "CMD [\"sh\", \"-c\", \"exit 1\"]\n"}}},
                           "", 60s);
    c.expect(!edit.error, "edit below the marker refused: " + edit.text);

    auto sroot = tmp.path() / "sleeper";
    copy_tree(fixture_dir() / "sleeper", sroot);
    SandboxConfig scfg;
    scfg.run_timeout = 5s;
    const std::string sprefix = "FROM alpine:3\nWORKDIR /work\n" + std::string(kProtectedMarker) + "\n";
    SandboxRoot sleeper(open_workspace(sroot, sprefix), engine, scfg);
    auto start = Clock::now();
    auto r = sleeper.run_container("sleeper", 10min);
    auto took = Clock::now() - start;
    c.expect(r.build_ok && r.ran && r.timed_out, "sleeper run did not time out");
    c.expect(took >= 5s && took <= 10s, "timeout not within 5 s of the limit");
    auto secs = std::chrono::duration_cast<std::chrono::milliseconds>(took).count() / 1000.0;
    std::ostringstream d;
    d << escapes.size() * 4 << " escape attempts refused, guard held, 5 s limit stopped the sleeper after " << secs << " s";
    return c.outcome(d.str());
}

Outcome criterion_7()
{
    Checks c;
    TempDir tmp;
    auto plain = tmp.path() / "plain";
    auto instr = tmp.path() / "instr";
    copy_tree(fixture_dir() / "c_instr", plain);
    copy_tree(fixture_dir() / "c_instr", instr);
    auto plan = plan_instrumentation(instr, {"vulnerable_parse"}, Language::C);
    c.expect(plan.targets.size() == 2, "expected both vulnerable_parse definitions");
    apply_instrumentation(instr, plan, Language::C, tmp.path() / "backup");
    auto once = read_text(instr / "writer.c");
    c.expect(instrument_source(once, {"vulnerable_parse"}, Language::C) == once, "instrumentation is not idempotent");

    auto build_run = [&](const fs::path& dir) {
        auto cc = run_process({{"cc", "-o", "prog", "reader.c", "writer.c"}, dir, {}, 60s});
        c.expect(cc.exit_code == 0, "compile failed in " + dir.filename().string() + ": " + cc.err);
        return run_process({{"./prog"}, dir, {}, 30s});
    };
    auto a = build_run(plain);
    auto b = build_run(instr);
    c.expect(a.exit_code == b.exit_code, "exit code changed by instrumentation");
    c.expect(a.out == b.out, "stdout changed by instrumentation");
    c.expect(occurrences(b.err, "FAULTLINE_COV:vulnerable_parse\n") == 2, "trace line count");
    c.expect(scan_trace_lines(b.err, {"vulnerable_parse"}) == std::set<std::string>{"vulnerable_parse"}, "trace scan");
    return c.outcome("two definitions instrumented, exit " + std::to_string(b.exit_code.value_or(-1)) +
                     " and stdout preserved, trace lines present");
}

Outcome criterion_7_java()
{
    auto probe = run_process({{"sh", "-c", "command -v javac && command -v java"}, {}, {}, 10s});
    if (probe.exit_code != 0) {
        return {Status::Skip, "javac/java not installed; Java instrumentation not compiled"};
    }
    Checks c;
    TempDir tmp;
    auto plain = tmp.path() / "plain";
    auto instr = tmp.path() / "instr";
    copy_tree(fixture_dir() / "java_cron", plain);
    copy_tree(fixture_dir() / "java_cron", instr);
    auto plan = plan_instrumentation(instr, {"isValid"}, Language::Java);
    c.expect(plan.targets.size() == 1, "isValid definition");
    apply_instrumentation(instr, plan, Language::Java, tmp.path() / "backup");
    auto build_run = [&](const fs::path& dir) {
        auto jc = run_process({{"sh", "-c", "mkdir -p out && javac -d out $(find src -name '*.java')"}, dir, {}, 120s});
        c.expect(jc.exit_code == 0, "javac failed: " + jc.err);
        return run_process({{"java", "-cp", "out", "org.example.cron.CronValidator"}, dir, {}, 60s});
    };
    auto a = build_run(plain);
    auto b = build_run(instr);
    c.expect(a.exit_code == 4 && b.exit_code == 4, "exit codes");
    c.expect(a.out == b.out, "stdout changed by instrumentation");
    c.expect(b.err.find("FAULTLINE_COV:isValid") != std::string::npos, "no trace line");
    return c.outcome("Java instrumentation compiled and traced");
}

Outcome criterion_8()
{
    Checks c;
    std::size_t stages_checked = 0;
    for (const std::string id : {"toy-cmdi", "toy-passes"}) {
        PipelineRig rig(id);
        auto backend = ScriptedBackend::from_file(scripts_dir() / (id + ".script"));
        auto prices = default_price_table();
        BudgetLedger ledger(rig.task.budget_usd, rig.task.time_budget, prices);
        auto rep = rig.run(backend, ledger, repair_cap(3));
        stages_checked += rep.stages.size();
        auto leaks = check_stage_isolation(rep.stages);
        c.expect(leaks.empty(), id + ": " + (leaks.empty() ? "" : leaks.front()));

        // negative control: splice a long model turn into another stage's prompt
        auto tampered = rep.stages;
        std::string leaked;
        for (const auto& t : tampered.front().transcript.conversation.turns) {
            if (t.speaker == Speaker::Model && t.text.size() >= 64) {
                leaked = t.text;
            }
        }
        c.expect(!leaked.empty() && tampered.size() > 1, id + ": no long model turn for the control");
        if (!leaked.empty() && tampered.size() > 1) {
            tampered.back().transcript.conversation.turns.front().text += "\n" + leaked;
            c.expect(!check_stage_isolation(tampered).empty(), id + ": control leak not detected");
        }

        if (id == "toy-passes") {
            c.expect(rep.repair.attempts == 3, "toy-passes attempts " + std::to_string(rep.repair.attempts));
            c.expect(rep.repair.validations.size() == 3, "toy-passes validations");
            c.expect(rep.repair.transcripts.size() == 2, "toy-passes repair conversations");
            c.expect(!rep.repair.success, "toy-passes should not succeed");
            for (const auto& t : rep.repair.transcripts) {
                c.expect(t.transcript.conversation.turns.front().text.find(flow_prompt(rig.task)) == std::string::npos,
                         "repair prompt carries the flow prompt");
            }
            c.expect(fs::exists(rig.state() / "transcripts" / "repair-1.json") &&
                         fs::exists(rig.state() / "transcripts" / "repair-2.json") &&
                         !fs::exists(rig.state() / "transcripts" / "repair-3.json"),
                     "repair transcripts on disk");
        } else {
            c.expect(rep.repair.attempts == 2 && rep.repair.success, "toy-cmdi repaired on the second attempt");
        }
    }
    return c.outcome(std::to_string(stages_checked) + " stage transcripts isolated, control leak caught, repair capped at 3");
}

const std::vector<std::pair<std::string, std::function<Outcome()>>>& criteria()
{
    static const std::vector<std::pair<std::string, std::function<Outcome()>>> all{
        {"1", criterion_1}, {"2", criterion_2}, {"3", criterion_3}, {"4", criterion_4}, {"5", criterion_5},
        {"6", criterion_6}, {"7", criterion_7}, {"7-java", criterion_7_java}, {"8", criterion_8}};
    return all;
}

Outcome guarded(const std::function<Outcome()>& fn)
{
    try {
        return fn();
    } catch (const std::exception& e) {
        return {Status::Fail, std::string("exception: ") + e.what()};
    }
}

const char* label(Status s)
{
    switch (s) {
    case Status::Pass: return "PASS";
    case Status::Fail: return "FAIL";
    case Status::Skip: return "SKIP";
    }
    return "?";
}

} // namespace

int main(int argc, char** argv)
{
    std::string only = argc > 1 ? argv[1] : "";
    bool any_fail = false;
    bool any_run = false;
    Status last = Status::Pass;
    for (const auto& [name, fn] : criteria()) {
        if (!only.empty() && name != only) {
            continue;
        }
        any_run = true;
        auto o = guarded(fn);
        last = o.status;
        any_fail = any_fail || o.status == Status::Fail;
        std::cout << "criterion " << name << ": " << label(o.status) << " - " << o.detail << std::endl;
    }
    if (!any_run) {
        std::cerr << "unknown criterion: " << only << "\n";
        return 2;
    }
    if (any_fail) {
        return 1;
    }
    return !only.empty() && last == Status::Skip ? 77 : 0;
}
