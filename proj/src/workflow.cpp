#include "povgen/workflow.hpp"

#include "povgen/digest.hpp"
#include "povgen/error.hpp"
#include "povgen/fsutil.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace povgen {

namespace fs = std::filesystem;
using json = nlohmann::json;
using std::chrono::milliseconds;

namespace {

constexpr int kMaxConsecutiveCorrections = 2;

constexpr std::array<ToolName, 4> kReadOnlyTools{ToolName::ListDir, ToolName::Read, ToolName::Find, ToolName::Grep};
constexpr std::array<ToolName, 6> kAllTools{ToolName::ListDir, ToolName::Read,  ToolName::Find,
                                            ToolName::Grep,    ToolName::Write, ToolName::Run};

std::string strip_trailing_newlines(std::string s)
{
    while (!s.empty() && s.back() == '\n') {
        s.pop_back();
    }
    return s;
}

std::string iso_now()
{
    auto now = std::chrono::system_clock::now();
    auto t = std::chrono::system_clock::to_time_t(now);
    auto ms = std::chrono::duration_cast<milliseconds>(now.time_since_epoch()).count() % 1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream o;
    o << std::put_time(&tm, "%Y-%m-%dT%H:%M:%S") << "." << std::setw(3) << std::setfill('0') << ms << "Z";
    return o.str();
}

std::string ending_hint(std::optional<PayloadKind> expected)
{
    if (expected) {
        std::string tag(payload_tag(*expected));
        return "When you are finished, give your final answer within the tags <" + tag + "> and </" + tag + ">.";
    }
    return "When the test is complete and checked, respond <DONE>.";
}

bool tool_allowed(ToolName t, std::span<const ToolName> allowed)
{
    return std::find(allowed.begin(), allowed.end(), t) != allowed.end();
}

std::string stage_tag(const std::string& task_id, const char* kind, unsigned n)
{
    return sanitize_tag(task_id) + "-" + kind + std::to_string(n);
}

void log_event(TranscriptLog* log, json record)
{
    if (log != nullptr) {
        log->append(std::move(record));
    }
}

json usage_json(const Usage& u, bool include_timing)
{
    json j{{"prompt_tokens", u.prompt_tokens}, {"completion_tokens", u.completion_tokens}};
    if (include_timing) {
        j["wall_time_ms"] = u.wall_time.count();
    }
    return j;
}

json report_json(const BuildRunReport& r)
{
    json j{{"build_ok", r.build_ok},   {"build_log_tail", r.build_log_tail}, {"ran", r.ran},
           {"exit_code", nullptr},     {"run_log_tail", r.run_log_tail},     {"timed_out", r.timed_out},
           {"run_stdout_tail", r.run_stdout_tail}, {"run_stderr_tail", r.run_stderr_tail}};
    if (r.exit_code) {
        j["exit_code"] = *r.exit_code;
    }
    return j;
}

void write_json(const std::optional<fs::path>& dir, const std::string& rel, const json& j)
{
    if (!dir) {
        return;
    }
    fs::create_directories((*dir / rel).parent_path());
    write_atomic(*dir / rel, j.dump(2) + "\n");
}

} // namespace

void validate(const AblationConfig& cfg)
{
    if (cfg.max_repair_iters < 0) {
        throw ConfigError("max_repair_iters must be >= 0");
    }
    if (cfg.max_turns_per_stage < 1) {
        throw ConfigError("max_turns_per_stage must be >= 1");
    }
}

std::string_view to_string(StageTerminal t)
{
    switch (t) {
    case StageTerminal::PayloadEmitted: return "PayloadEmitted";
    case StageTerminal::DoneEmitted: return "DoneEmitted";
    case StageTerminal::TurnCapReached: return "TurnCapReached";
    case StageTerminal::BudgetExhausted: return "BudgetExhausted";
    case StageTerminal::TimeExhausted: return "TimeExhausted";
    }
    return "?";
}

TranscriptLog::TranscriptLog(fs::path file) : file_(std::move(file))
{
    fs::create_directories(file_.parent_path());
}

void TranscriptLog::append(json record)
{
    if (file_.empty()) {
        return;
    }
    record["ts"] = iso_now();
    std::lock_guard lock(mu_);
    std::ofstream out(file_, std::ios::app);
    out << record.dump() << "\n";
    if (!out) {
        throw IoError("cannot append to " + file_.string());
    }
}

std::span<const ToolName> read_only_tools()
{
    return kReadOnlyTools;
}

std::span<const ToolName> all_tools()
{
    return kAllTools;
}

StageResult agent_loop(StageId stage, std::string label, Conversation conv, AgentContext& ctx,
                       std::optional<PayloadKind> expected, const TerminalPredicate& terminal, int max_turns,
                       std::span<const ToolName> allowed_tools)
{
    StageResult result;
    result.stage = stage;
    result.label = std::move(label);
    if (!conv.turns.empty()) {
        log_event(ctx.log, {{"stage", result.label}, {"kind", "framework"}, {"text", conv.turns.back().text}});
    }
    int turns = 0;
    int corrections = 0;
    auto finish = [&](StageTerminal t) {
        result.terminal = t;
        result.transcript.conversation = std::move(conv);
        result.transcript.ledger_snapshot = {ctx.ledger.spent_usd(), ctx.ledger.charges().size()};
        log_event(ctx.log, {{"stage", result.label}, {"kind", "terminal"}, {"terminal", to_string(t)},
                            {"spent_usd", ctx.ledger.spent_usd()}});
        return std::move(result);
    };

    while (true) {
        if (turns >= max_turns) {
            return finish(StageTerminal::TurnCapReached);
        }
        Completion reply;
        try {
            reply = ctx.gateway.complete(conv, ctx.model_id, ctx.ledger);
        } catch (const BudgetExhausted& e) {
            log_event(ctx.log, {{"stage", result.label}, {"kind", "refused"}, {"reason", e.what()}});
            return finish(StageTerminal::BudgetExhausted);
        } catch (const TimeExhausted& e) {
            log_event(ctx.log, {{"stage", result.label}, {"kind", "refused"}, {"reason", e.what()}});
            return finish(StageTerminal::TimeExhausted);
        }
        ++turns;
        conv.add_model(reply.text);
        log_event(ctx.log, {{"stage", result.label},
                            {"kind", "model"},
                            {"text", reply.text},
                            {"usage", usage_json(reply.usage, true)},
                            {"spent_usd", ctx.ledger.spent_usd()}});

        AgentAction action;
        try {
            action = parse_agent_action(reply.text, expected);
        } catch (const StructuredOutputError& e) {
            if (corrections == kMaxConsecutiveCorrections) {
                return finish(StageTerminal::TurnCapReached);
            }
            ++corrections;
            std::string fix = std::string("Your reply could not be processed: ") + e.what() +
                              "\nPlease send it again in the required format. " + ending_hint(expected);
            log_event(ctx.log, {{"stage", result.label}, {"kind", "framework"}, {"text", fix}});
            conv.add_framework(std::move(fix));
            continue;
        }
        corrections = 0;

        if (terminal(action)) {
            if (action.kind == ActionKind::Payload) {
                result.payload = action.payload;
                return finish(StageTerminal::PayloadEmitted);
            }
            return finish(StageTerminal::DoneEmitted);
        }

        std::string next;
        if (action.kind == ActionKind::ToolCalls) {
            for (const auto& call : action.calls) {
                ToolOutcome outcome;
                if (!tool_allowed(call.tool, allowed_tools)) {
                    outcome.error = true;
                    outcome.text = "Error: the " + std::string(to_string(call.tool)) + " tool is not available in this step.\n";
                } else {
                    std::string tag;
                    if (call.tool == ToolName::Run) {
                        unsigned n = ctx.run_counter != nullptr ? ++*ctx.run_counter : 1;
                        tag = stage_tag(ctx.task_id, "run", n);
                    }
                    outcome = ctx.sandbox.execute(call, tag, ctx.ledger.remaining_time());
                }
                ToolEvent ev{call, sha256_hex(outcome.text), outcome.truncated, outcome.error};
                log_event(ctx.log, {{"stage", result.label},
                                    {"kind", "tool"},
                                    {"tool", to_string(call.tool)},
                                    {"args", call.args},
                                    {"result_digest", ev.result_digest},
                                    {"truncated", ev.truncated},
                                    {"error", ev.error}});
                result.transcript.tool_events.push_back(std::move(ev));
                next += "<TOOL_RESULT name=\"" + std::string(to_string(call.tool)) + "\">\n" + outcome.text;
                if (!outcome.text.empty() && outcome.text.back() != '\n') {
                    next += "\n";
                }
                next += "</TOOL_RESULT>\n";
            }
            next = strip_trailing_newlines(std::move(next));
        } else {
            next = "No tool call or final answer was found in your reply. To use a tool, write a <TOOL> block. " +
                   ending_hint(expected);
        }
        log_event(ctx.log, {{"stage", result.label}, {"kind", "framework"}, {"text", next}});
        conv.add_framework(std::move(next));
    }
}

// ---------------------------------------------------------------------------
// Prompts

std::string flow_prompt(const VulnerabilityTask& task)
{
    return render_prompt(flow_template(), {{"description", describe_task(task)},
                                           {"tool_description", tool_description(read_only_tools())}});
}

std::string branch_part1_prompt(const VulnerabilityTask& task, const std::optional<Flow>& flow)
{
    Bindings b{{"description", describe_task(task)}, {"tool_description", tool_description(read_only_tools())}};
    if (flow) {
        b["flow"] = strip_trailing_newlines(render_flow_records(*flow));
    }
    return render_prompt(branch_part1_template(flow.has_value()), b);
}

std::string branch_part2_prompt()
{
    return render_prompt(branch_part2_template(), {});
}

std::string testgen_prompt(const VulnerabilityTask& task, const std::optional<Flow>& flow,
                           const std::optional<ConditionList>& conditions, std::string_view workdir)
{
    Bindings b{{"description", describe_task(task)},
               {"cwe_desc", cwe_criteria(task.cwe).prompt_fragment},
               {"workdir", std::string(workdir)},
               {"tool_description", tool_description(all_tools())}};
    if (flow) {
        b["flow"] = strip_trailing_newlines(render_flow_records(*flow));
    }
    if (conditions) {
        b["conditions"] = strip_trailing_newlines(render_condition_items(*conditions));
    }
    return render_prompt(testgen_template(flow.has_value(), conditions.has_value()), b);
}

std::string repair_prompt(std::string_view feedback)
{
    return render_prompt(repair_template(), {{"feedback", std::string(feedback)}}) + "\n\n" + tool_description(all_tools());
}

// ---------------------------------------------------------------------------
// Stages

StageResult run_flow_stage(const VulnerabilityTask& task, AgentContext& ctx, const AblationConfig& cfg)
{
    Conversation conv{system_prompt(), {}};
    conv.add_framework(flow_prompt(task));
    return agent_loop(StageId::FlowReasoning, "flow", std::move(conv), ctx, PayloadKind::Flow,
                      [](const AgentAction& a) { return a.kind == ActionKind::Payload; }, cfg.max_turns_per_stage,
                      read_only_tools());
}

BranchStageResult run_branch_stage(const VulnerabilityTask& task, AgentContext& ctx, const std::optional<Flow>& flow,
                                   const AblationConfig& cfg)
{
    BranchStageResult out;
    Conversation conv{system_prompt(), {}};
    conv.add_framework(branch_part1_prompt(task, flow));
    auto is_payload = [](const AgentAction& a) { return a.kind == ActionKind::Payload; };
    auto part1 = agent_loop(StageId::BranchReasoning, "branch", std::move(conv), ctx, PayloadKind::BranchSequence,
                            is_payload, cfg.max_turns_per_stage, read_only_tools());
    if (part1.terminal != StageTerminal::PayloadEmitted) {
        out.stage = std::move(part1);
        return out;
    }
    out.branches = std::get<BranchSequence>(*part1.payload);

    Conversation cont = part1.transcript.conversation;
    cont.add_framework(branch_part2_prompt());
    auto part2 = agent_loop(StageId::BranchReasoning, "branch", std::move(cont), ctx, PayloadKind::Conditions, is_payload,
                            cfg.max_turns_per_stage, read_only_tools());
    auto events = std::move(part1.transcript.tool_events);
    events.insert(events.end(), part2.transcript.tool_events.begin(), part2.transcript.tool_events.end());
    part2.transcript.tool_events = std::move(events);
    if (part2.terminal == StageTerminal::PayloadEmitted) {
        out.conditions = std::get<ConditionList>(*part2.payload);
    }
    out.stage = std::move(part2);
    return out;
}

StageResult run_testgen_stage(const VulnerabilityTask& task, AgentContext& ctx, const std::optional<Flow>& flow,
                              const std::optional<ConditionList>& conditions, const AblationConfig& cfg)
{
    Conversation conv{system_prompt(), {}};
    conv.add_framework(testgen_prompt(task, flow, conditions, ctx.sandbox.config().virtual_root));
    return agent_loop(StageId::TestGeneration, "testgen", std::move(conv), ctx, std::nullopt,
                      [](const AgentAction& a) { return a.kind == ActionKind::Done; }, cfg.max_turns_per_stage,
                      all_tools());
}

std::string repair_feedback(const BuildRunReport& r, std::size_t max_bytes)
{
    if (!r.build_ok) {
        std::string head = r.timed_out ? "The build did not finish within the time limit. Build output:\n"
                                       : "The build failed. Build output:\n";
        return head + tail_truncate(r.build_log_tail, max_bytes);
    }
    if (!r.ran) {
        return "The container could not be run within the remaining time.";
    }
    if (r.timed_out) {
        return "The test did not finish within the time limit. Output:\n" + tail_truncate(r.run_log_tail, max_bytes);
    }
    return "The test exited with code " + std::to_string(r.exit_code.value_or(0)) +
           " (it should exit with a non-zero code while the vulnerability exists). Output:\n" +
           tail_truncate(r.run_log_tail, max_bytes);
}

RepairOutcome repair_loop(const VulnerabilityTask& task, AgentContext& ctx, const AblationConfig& cfg,
                          std::optional<StageTerminal> testgen_terminal,
                          const std::function<void(const StageResult&)>& on_stage)
{
    RepairOutcome out;
    if (testgen_terminal == StageTerminal::BudgetExhausted || testgen_terminal == StageTerminal::TimeExhausted) {
        out.halted_by = testgen_terminal;
        return out;
    }
    const int max_attempts = std::max(1, cfg.max_repair_iters);
    while (true) {
        if (ctx.ledger.time_exhausted()) {
            out.halted_by = StageTerminal::TimeExhausted;
            return out;
        }
        ++out.attempts;
        ValidationRecord rec;
        rec.attempt = out.attempts;
        rec.report = ctx.sandbox.run_container(stage_tag(task.id, "validate", static_cast<unsigned>(out.attempts)),
                                               ctx.ledger.remaining_time());
        rec.success = rec.report.build_ok && rec.report.ran && !rec.report.timed_out && rec.report.exit_code &&
                      *rec.report.exit_code != 0;
        log_event(ctx.log, {{"stage", "validate-" + std::to_string(out.attempts)},
                            {"kind", "validation"},
                            {"report", report_json(rec.report)}});
        out.build_ok = rec.report.build_ok;
        out.exit_nonzero = rec.success;
        out.success = rec.success;
        out.validations.push_back(rec);
        if (rec.success || out.attempts >= max_attempts) {
            return out;
        }
        Conversation conv{system_prompt(), {}};
        conv.add_framework(repair_prompt(repair_feedback(rec.report, ctx.sandbox.config().max_tool_output)));
        auto stage = agent_loop(StageId::Repair, "repair-" + std::to_string(out.attempts), std::move(conv), ctx,
                                std::nullopt, [](const AgentAction& a) { return a.kind == ActionKind::Done; },
                                cfg.max_turns_per_stage, all_tools());
        auto term = stage.terminal;
        out.transcripts.push_back(std::move(stage));
        if (on_stage) {
            on_stage(out.transcripts.back());
        }
        if (term == StageTerminal::BudgetExhausted || term == StageTerminal::TimeExhausted) {
            out.halted_by = term;
            return out;
        }
    }
}

// ---------------------------------------------------------------------------
// Pipeline

PipelineReport run_pipeline(const VulnerabilityTask& task, PipelineContext& pctx, const AblationConfig& cfg)
{
    validate(cfg);
    PipelineReport rep;
    rep.task_id = task.id;
    rep.cwe = task.cwe;
    rep.ablation = cfg;
    rep.model_id = pctx.model_id;
    unsigned run_counter = 0;
    AgentContext ctx{pctx.gateway, pctx.ledger, pctx.model_id, pctx.sandbox, task.id, pctx.log, &run_counter};

    auto record = [&](const StageResult& s) {
        rep.stages.push_back(s);
        write_json(pctx.state_dir, "transcripts/" + s.label + ".json", to_json(s));
        if (s.terminal == StageTerminal::BudgetExhausted || s.terminal == StageTerminal::TimeExhausted) {
            rep.halted_by = s.terminal;
        }
    };
    auto halted = [&] { return rep.halted_by.has_value(); };

    if (cfg.use_flow) {
        auto s = run_flow_stage(task, ctx, cfg);
        if (s.terminal == StageTerminal::PayloadEmitted) {
            rep.flow = std::get<Flow>(*s.payload);
            write_json(pctx.state_dir, "flow.json", to_json(*rep.flow));
        } else {
            rep.notes.push_back("flow stage ended without a flow (" + std::string(to_string(s.terminal)) + ")");
        }
        record(s);
    }
    if (cfg.use_branch && !halted()) {
        auto b = run_branch_stage(task, ctx, rep.flow, cfg);
        rep.branches = b.branches;
        rep.conditions = b.conditions;
        if (b.branches) {
            write_json(pctx.state_dir, "branches.json", to_json(*b.branches));
        }
        if (b.conditions) {
            write_json(pctx.state_dir, "conditions.json", to_json(*b.conditions));
        } else {
            rep.notes.push_back("branch stage ended without conditions (" + std::string(to_string(b.stage.terminal)) + ")");
        }
        record(b.stage);
    }
    std::optional<StageTerminal> testgen_terminal;
    if (!halted()) {
        auto s = run_testgen_stage(task, ctx, rep.flow, rep.conditions, cfg);
        testgen_terminal = s.terminal;
        record(s);
    }
    if (!halted()) {
        rep.repair = repair_loop(task, ctx, cfg, testgen_terminal, record);
        if (rep.repair.halted_by) {
            rep.halted_by = rep.repair.halted_by;
        }
    }

    EvaluationOptions eo;
    eo.image_tag = sanitize_tag(task.id) + "-eval";
    eo.time_limit = pctx.sandbox.config().run_timeout;
    eo.backup_dir = pctx.backup_dir;
    eo.project_files = pctx.project_files;
    BuildRunReport eval_run;
    rep.verdict = evaluate(task, pctx.sandbox, eo, &eval_run);
    rep.evaluation_run = std::move(eval_run);

    rep.spent_usd = pctx.ledger.spent_usd();
    rep.model_calls = pctx.ledger.charges().size();
    rep.elapsed = pctx.ledger.elapsed();
    return rep;
}

// ---------------------------------------------------------------------------
// JSON

json to_json(const Flow& flow)
{
    json arr = json::array();
    for (const auto& p : flow.points) {
        json j{{"role", to_string(p.role)}, {"code", p.code}, {"variable", p.variable}, {"file", p.file}};
        if (p.remarks) {
            j["remarks"] = *p.remarks;
        }
        arr.push_back(std::move(j));
    }
    return arr;
}

json to_json(const BranchSequence& seq)
{
    json arr = json::array();
    for (const auto& b : seq) {
        arr.push_back({{"type", to_string(b.type)}, {"code", b.code}, {"file", b.file}, {"outcome", b.outcome}});
    }
    return arr;
}

json to_json(const ConditionList& list)
{
    return list.conditions;
}

Flow flow_from_json(const json& j)
{
    try {
        Flow f;
        for (const auto& r : j) {
            FlowPoint p;
            auto role = r.at("role").get<std::string>();
            if (role == "Source") {
                p.role = FlowRole::Source;
            } else if (role == "Sink") {
                p.role = FlowRole::Sink;
            } else if (role == "Intermediate") {
                p.role = FlowRole::Intermediate;
            } else {
                throw MalformedRecord("unknown role '" + role + "'");
            }
            p.code = r.at("code").get<std::string>();
            p.variable = r.at("variable").get<std::string>();
            p.file = r.at("file").get<std::string>();
            if (r.contains("remarks")) {
                p.remarks = r["remarks"].get<std::string>();
            }
            f.points.push_back(std::move(p));
        }
        validate_flow(f);
        return f;
    } catch (const json::exception& e) {
        throw ParseError(std::string("stored flow is malformed: ") + e.what());
    }
}

BranchSequence branches_from_json(const json& j)
{
    try {
        BranchSequence seq;
        for (const auto& r : j) {
            seq.push_back({parse_branch_type(r.at("type").get<std::string>()), r.at("code").get<std::string>(),
                           r.at("file").get<std::string>(), r.at("outcome").get<std::string>()});
        }
        return seq;
    } catch (const json::exception& e) {
        throw ParseError(std::string("stored branch sequence is malformed: ") + e.what());
    }
}

ConditionList conditions_from_json(const json& j)
{
    try {
        return ConditionList{j.get<std::vector<std::string>>()};
    } catch (const json::exception& e) {
        throw ParseError(std::string("stored conditions are malformed: ") + e.what());
    }
}

json to_json(const StageResult& r)
{
    json turns = json::array();
    for (const auto& t : r.transcript.conversation.turns) {
        turns.push_back({{"speaker", to_string(t.speaker)}, {"text", t.text}});
    }
    json events = json::array();
    for (const auto& e : r.transcript.tool_events) {
        events.push_back({{"tool", to_string(e.call.tool)},
                          {"args", e.call.args},
                          {"result_digest", e.result_digest},
                          {"truncated", e.truncated},
                          {"error", e.error}});
    }
    json payload = nullptr;
    if (r.payload) {
        payload = std::visit([](const auto& p) { return to_json(p); }, *r.payload);
    }
    return {{"stage", to_string(r.stage)},
            {"label", r.label},
            {"terminal", to_string(r.terminal)},
            {"system_prompt_sha256", sha256_hex(r.transcript.conversation.system_prompt)},
            {"turns", std::move(turns)},
            {"tool_events", std::move(events)},
            {"payload", std::move(payload)},
            {"ledger", {{"spent_usd", r.transcript.ledger_snapshot.spent_usd},
                        {"model_calls", r.transcript.ledger_snapshot.model_calls}}}};
}

json to_json(const BuildRunReport& r)
{
    return report_json(r);
}

json to_json(const Verdict& v)
{
    return {{"build_ok", v.build_ok},
            {"exit_nonzero", v.exit_nonzero ? json(*v.exit_nonzero) : json(nullptr)},
            {"covered_functions", v.covered_functions},
            {"coverage_hit", v.coverage_hit},
            {"coverage_known", v.coverage_known},
            {"category", to_string(v.category)},
            {"status", to_string(reported_status(v.category))},
            {"checklist", v.checklist},
            {"warnings", v.warnings}};
}

Verdict verdict_from_json(const json& j)
{
    Verdict v;
    v.build_ok = j.at("build_ok").get<bool>();
    if (!j.at("exit_nonzero").is_null()) {
        v.exit_nonzero = j["exit_nonzero"].get<bool>();
    }
    v.covered_functions = j.at("covered_functions").get<std::set<std::string>>();
    v.coverage_hit = j.at("coverage_hit").get<bool>();
    v.coverage_known = j.value("coverage_known", true);
    auto cat = parse_verdict_category(j.at("category").get<std::string>());
    if (!cat) {
        throw ParseError("unknown verdict category " + j["category"].dump());
    }
    v.category = *cat;
    v.checklist = j.value("checklist", std::vector<std::string>{});
    v.warnings = j.value("warnings", std::vector<std::string>{});
    return v;
}

json to_json(const PipelineReport& r, bool include_timing)
{
    json stages = json::array();
    for (const auto& s : r.stages) {
        stages.push_back(to_json(s));
    }
    json validations = json::array();
    for (const auto& v : r.repair.validations) {
        validations.push_back({{"attempt", v.attempt}, {"success", v.success}, {"report", report_json(v.report)}});
    }
    json j{{"task_id", r.task_id},
           {"cwe", to_string(r.cwe)},
           {"model_id", r.model_id},
           {"ablation",
            {{"use_flow", r.ablation.use_flow},
             {"use_branch", r.ablation.use_branch},
             {"max_repair_iters", r.ablation.max_repair_iters},
             {"max_turns_per_stage", r.ablation.max_turns_per_stage}}},
           {"stages", std::move(stages)},
           {"flow", r.flow ? to_json(*r.flow) : json(nullptr)},
           {"branches", r.branches ? to_json(*r.branches) : json(nullptr)},
           {"conditions", r.conditions ? to_json(*r.conditions) : json(nullptr)},
           {"repair",
            {{"attempts", r.repair.attempts},
             {"success", r.repair.success},
             {"build_ok", r.repair.build_ok},
             {"exit_nonzero", r.repair.exit_nonzero},
             {"validations", std::move(validations)}}},
           {"verdict", r.verdict ? to_json(*r.verdict) : json(nullptr)},
           {"evaluation_run", r.evaluation_run ? report_json(*r.evaluation_run) : json(nullptr)},
           {"halted_by", r.halted_by ? json(to_string(*r.halted_by)) : json(nullptr)},
           {"spent_usd", r.spent_usd},
           {"model_calls", r.model_calls},
           {"notes", r.notes}};
    if (include_timing) {
        j["elapsed_ms"] = r.elapsed.count();
    }
    return j;
}

std::string report_digest(const PipelineReport& r)
{
    return sha256_hex(to_json(r, false).dump());
}

std::vector<std::string> check_stage_isolation(const std::vector<StageResult>& stages, std::size_t min_chars)
{
    std::vector<std::string> violations;
    for (std::size_t a = 0; a < stages.size(); ++a) {
        for (std::size_t b = 0; b < stages.size(); ++b) {
            if (a == b || stages[a].label == stages[b].label) {
                continue;
            }
            const auto& target = stages[b].transcript.conversation;
            for (const auto& turn : stages[a].transcript.conversation.turns) {
                if (turn.speaker != Speaker::Model || turn.text.size() < min_chars) {
                    continue;
                }
                bool leaked = target.system_prompt.find(turn.text) != std::string::npos;
                for (const auto& other : target.turns) {
                    if (leaked) {
                        break;
                    }
                    leaked = other.speaker == Speaker::AgentFramework && other.text.find(turn.text) != std::string::npos;
                }
                if (leaked) {
                    violations.push_back("model text from stage '" + stages[a].label + "' appears in stage '" +
                                         stages[b].label + "': " + turn.text.substr(0, 80));
                }
            }
        }
    }
    return violations;
}

std::set<std::string> snapshot_files(const fs::path& root)
{
    std::set<std::string> out;
    for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied);
         it != fs::recursive_directory_iterator(); ++it) {
        std::error_code ec;
        if (it->is_directory(ec) && it->path().filename() == ".git") {
            it.disable_recursion_pending();
            continue;
        }
        if (!it->is_symlink(ec) && it->is_regular_file(ec)) {
            out.insert(it->path().lexically_relative(root).generic_string());
        }
    }
    return out;
}

} // namespace povgen
