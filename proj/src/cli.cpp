#include "povgen/cli.hpp"

#include "povgen/error.hpp"
#include "povgen/fsutil.hpp"

#include <CLI11.hpp>

#include <atomic>
#include <iostream>
#include <mutex>
#include <thread>

namespace povgen {

namespace fs = std::filesystem;
using json = nlohmann::json;
using std::chrono::milliseconds;

namespace {

std::mutex g_log_mu;

void say(std::ostream& log, const std::string& line)
{
    std::lock_guard lock(g_log_mu);
    log << line << "\n" << std::flush;
}

PriceTable load_prices(const RunConfig& cfg)
{
    PriceTable prices = cfg.price_table ? PriceTable::load(*cfg.price_table) : default_price_table();
    prices.price(cfg.model_id); // throws ConfigError for an unpriced model
    return prices;
}

std::unique_ptr<ModelBackend> make_backend(const RunConfig& cfg, const std::string& task_id)
{
    if (cfg.mode == GatewayMode::Replay) {
        return nullptr;
    }
    if (cfg.script_dir) {
        auto script = *cfg.script_dir / (task_id + ".script");
        if (fs::exists(script)) {
            return std::make_unique<ScriptedBackend>(ScriptedBackend::from_file(script));
        }
    }
    auto http = HttpBackendConfig::from_env();
    if (http.base_url.empty()) {
        throw ConfigError("no model backend for task '" + task_id + "': set POVGEN_API_BASE or provide " +
                          (cfg.script_dir ? (*cfg.script_dir / (task_id + ".script")).string() : std::string("--script-dir")));
    }
    return std::make_unique<HttpBackend>(http);
}

struct TaskEnv {
    VulnerabilityTask task;
    TaskPaths paths;
    Workspace ws;
    std::set<std::string> project_files;
    std::unique_ptr<ContainerEngine> engine;
    std::unique_ptr<SandboxRoot> sandbox;
    std::unique_ptr<BudgetLedger> ledger;
    std::unique_ptr<ModelBackend> backend;
    std::unique_ptr<Gateway> gateway;
    std::unique_ptr<TranscriptLog> log;
};

void write_state(const TaskPaths& p, const std::string& rel, const json& j)
{
    fs::create_directories((p.state / rel).parent_path());
    write_atomic(p.state / rel, j.dump(2) + "\n");
}

std::optional<json> read_state(const TaskPaths& p, const std::string& rel)
{
    auto file = p.state / rel;
    if (!fs::exists(file)) {
        return std::nullopt;
    }
    try {
        return json::parse(read_text(file));
    } catch (const json::exception& e) {
        throw ParseError(file.string() + ": " + e.what());
    }
}

void finish_env(TaskEnv& env, const RunConfig& cfg, const PriceTable& prices, bool need_model)
{
    env.engine = make_engine(cfg.engine, env.paths.engine);
    SandboxConfig sc;
    sc.run_timeout = cfg.run_timeout;
    env.sandbox = std::make_unique<SandboxRoot>(env.ws, *env.engine, sc);
    double budget = cfg.budget_usd.value_or(env.task.budget_usd);
    auto time = cfg.time_budget.value_or(env.task.time_budget);
    env.ledger = std::make_unique<BudgetLedger>(budget, std::chrono::duration_cast<milliseconds>(time), prices);
    if (need_model) {
        env.backend = make_backend(cfg, env.task.id);
        std::optional<fs::path> cache;
        if (cfg.cache_dir) {
            cache = *cfg.cache_dir / env.task.id;
        }
        env.gateway = std::make_unique<Gateway>(cfg.mode, env.backend.get(), cache);
    }
    env.log = std::make_unique<TranscriptLog>(env.paths.logs / "transcript.jsonl");
}

TaskEnv fresh_env(const RunConfig& cfg, const VulnerabilityTask& task, const PriceTable& prices)
{
    TaskEnv env;
    env.task = task;
    env.paths = task_paths(cfg.out_dir, task.id);
    std::error_code ec;
    fs::remove_all(env.paths.dir, ec);
    fs::create_directories(env.paths.state);
    env.ws = prepare_workspace(task, env.paths.workspace);
    env.project_files = snapshot_files(env.ws.root);
    write_state(env.paths, "workspace.json",
                {{"task_id", task.id}, {"scaffold_prefix", env.ws.scaffold_prefix}, {"project_files", env.project_files}});
    finish_env(env, cfg, prices, true);
    return env;
}

TaskEnv existing_env(const RunConfig& cfg, const VulnerabilityTask& task, const PriceTable& prices, bool need_model)
{
    TaskEnv env;
    env.task = task;
    env.paths = task_paths(cfg.out_dir, task.id);
    auto wsj = read_state(env.paths, "workspace.json");
    if (!wsj) {
        throw MissingPriorPayload("task '" + task.id + "' has no prepared workspace under " + env.paths.dir.string());
    }
    env.ws = open_workspace(env.paths.workspace, wsj->at("scaffold_prefix").get<std::string>());
    env.project_files = wsj->value("project_files", std::set<std::string>{});
    finish_env(env, cfg, prices, need_model);
    return env;
}

VulnerabilityTask find_task(const RunConfig& cfg, const std::string& id)
{
    for (auto& t : load_manifest(cfg.manifest_path)) {
        if (t.id == id) {
            return t;
        }
    }
    throw ConfigError("task '" + id + "' is not in " + cfg.manifest_path.string());
}

TaskSummary run_one(const RunConfig& cfg, const VulnerabilityTask& task, const PriceTable& prices, std::ostream& log)
{
    auto paths = task_paths(cfg.out_dir, task.id);
    say(log, "[" + task.id + "] start");
    try {
        auto env = fresh_env(cfg, task, prices);
        PipelineContext pctx{*env.gateway,   *env.ledger,       cfg.model_id, *env.sandbox,
                             env.log.get(), env.paths.state, env.paths.backup, &env.project_files};
        auto report = run_pipeline(task, pctx, cfg.ablation);
        json result = to_json(report);
        result["digest"] = report_digest(report);
        write_state(env.paths, "result.json", result);
        write_state(env.paths, "verdict.json", result["verdict"]);
        auto summary = summary_from_result(result);
        say(log, "[" + task.id + "] " + (summary.category ? std::string(to_string(*summary.category)) : "no verdict") +
                     ", spent $" + std::to_string(report.spent_usd));
        return summary;
    } catch (const Error& e) {
        TaskSummary s;
        s.task_id = task.id;
        s.cwe = task.cwe;
        s.error = e.what();
        std::error_code ec;
        fs::create_directories(paths.state, ec);
        try {
            write_atomic(paths.state / "result.json", summary_json(s).dump(2) + "\n");
        } catch (const Error&) {
        }
        say(log, "[" + task.id + "] error: " + e.what());
        return s;
    }
}

} // namespace

PriceTable default_price_table()
{
    return PriceTable({{std::string(kDefaultModel), ModelPrice{0.003, 0.015}}});
}

void validate(const RunConfig& cfg)
{
    validate(cfg.ablation);
    if (cfg.mode != GatewayMode::Live && !cfg.cache_dir) {
        throw ConfigError(std::string(to_string(cfg.mode)) + " mode requires --cache-dir");
    }
    if (cfg.jobs < 1) {
        throw ConfigError("--jobs must be at least 1");
    }
    if (cfg.budget_usd && *cfg.budget_usd <= 0) {
        throw ConfigError("--budget-usd must be positive");
    }
    if (cfg.time_budget && cfg.time_budget->count() <= 0) {
        throw ConfigError("--time-budget-mins must be positive");
    }
    if (cfg.engine != "auto" && cfg.engine != "docker" && cfg.engine != "local") {
        throw ConfigError("--engine must be auto, docker or local");
    }
}

std::vector<VulnerabilityTask> select_tasks(const RunConfig& cfg)
{
    auto all = load_manifest(cfg.manifest_path);
    if (cfg.task_filter.empty()) {
        return all;
    }
    std::vector<VulnerabilityTask> out;
    for (auto& t : all) {
        if (std::find(cfg.task_filter.begin(), cfg.task_filter.end(), t.id) != cfg.task_filter.end()) {
            out.push_back(std::move(t));
        }
    }
    return out;
}

TaskPaths task_paths(const fs::path& out_dir, const std::string& task_id)
{
    fs::path dir = out_dir / task_id;
    return {dir, dir / "workspace", dir / "logs", dir / "state", dir / "engine", dir / "backup"};
}

BatchReport cmd_run(const RunConfig& cfg, std::ostream& log)
{
    validate(cfg);
    auto prices = load_prices(cfg);
    auto tasks = select_tasks(cfg);
    fs::create_directories(cfg.out_dir);
    std::vector<TaskSummary> summaries(tasks.size());
    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (std::size_t i = next++; i < tasks.size(); i = next++) {
            summaries[i] = run_one(cfg, tasks[i], prices, log);
        }
    };
    std::size_t n = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), std::max<std::size_t>(1, tasks.size()));
    std::vector<std::thread> pool;
    for (std::size_t i = 1; i < n; ++i) {
        pool.emplace_back(worker);
    }
    worker();
    for (auto& t : pool) {
        t.join();
    }
    return build_batch_report(std::move(summaries));
}

StageResult cmd_stage(const RunConfig& cfg, const std::string& task_id, StageId stage, std::ostream& log)
{
    validate(cfg);
    auto prices = load_prices(cfg);
    auto task = find_task(cfg, task_id);
    auto paths = task_paths(cfg.out_dir, task_id);
    TaskEnv env = stage == StageId::FlowReasoning && !fs::exists(paths.state / "workspace.json")
                      ? fresh_env(cfg, task, prices)
                      : existing_env(cfg, task, prices, true);
    unsigned run_counter = 0;
    AgentContext ctx{*env.gateway, *env.ledger, cfg.model_id, *env.sandbox, task.id, env.log.get(), &run_counter};

    auto need = [&](const char* file) {
        auto j = read_state(env.paths, file);
        if (!j) {
            throw MissingPriorPayload(std::string("stage ") + std::string(to_string(stage)) + " needs " + file +
                                      "; run the earlier stage first");
        }
        return *j;
    };
    std::optional<Flow> flow;
    std::optional<ConditionList> conditions;
    if ((stage == StageId::BranchReasoning || stage == StageId::TestGeneration) && cfg.ablation.use_flow) {
        flow = flow_from_json(need("flow.json"));
    }
    if (stage == StageId::TestGeneration && cfg.ablation.use_branch) {
        conditions = conditions_from_json(need("conditions.json"));
    }

    StageResult result;
    switch (stage) {
    case StageId::FlowReasoning:
        result = run_flow_stage(task, ctx, cfg.ablation);
        if (result.payload) {
            write_state(env.paths, "flow.json", to_json(std::get<Flow>(*result.payload)));
        }
        break;
    case StageId::BranchReasoning: {
        auto b = run_branch_stage(task, ctx, flow, cfg.ablation);
        if (b.branches) {
            write_state(env.paths, "branches.json", to_json(*b.branches));
        }
        if (b.conditions) {
            write_state(env.paths, "conditions.json", to_json(*b.conditions));
        }
        result = std::move(b.stage);
        break;
    }
    case StageId::TestGeneration:
        result = run_testgen_stage(task, ctx, flow, conditions, cfg.ablation);
        break;
    case StageId::Repair: {
        auto outcome = repair_loop(task, ctx, cfg.ablation, std::nullopt);
        for (const auto& t : outcome.transcripts) {
            write_state(env.paths, "transcripts/" + t.label + ".json", to_json(t));
        }
        if (outcome.transcripts.empty()) {
            result.stage = StageId::Repair;
            result.label = "repair";
            result.terminal = StageTerminal::DoneEmitted;
            say(log, outcome.success ? "the current test already builds and fails as required"
                                     : "validation did not pass and no repair attempt was left");
            return result;
        }
        result = outcome.transcripts.back();
        break;
    }
    }
    write_state(env.paths, "transcripts/" + result.label + ".json", to_json(result));
    return result;
}

Verdict cmd_eval(const RunConfig& cfg, const std::string& task_id, std::ostream& log)
{
    validate(cfg);
    auto prices = load_prices(cfg);
    auto task = find_task(cfg, task_id);
    auto env = existing_env(cfg, task, prices, false);
    EvaluationOptions eo;
    eo.image_tag = sanitize_tag(task.id) + "-eval";
    eo.time_limit = cfg.run_timeout;
    eo.backup_dir = env.paths.backup;
    eo.project_files = env.project_files.empty() ? nullptr : &env.project_files;
    auto verdict = evaluate(task, *env.sandbox, eo);
    write_state(env.paths, "verdict.json", to_json(verdict));
    auto result = read_state(env.paths, "result.json").value_or(json{{"task_id", task.id}, {"cwe", to_string(task.cwe)}});
    result["verdict"] = to_json(verdict);
    result.erase("error");
    write_state(env.paths, "result.json", result);
    say(log, "[" + task.id + "] " + std::string(to_string(verdict.category)));
    return verdict;
}

std::string cmd_report(const fs::path& out_dir, bool as_json)
{
    auto report = load_batch_report(out_dir);
    return as_json ? to_json(report).dump(2) + "\n" : render_text(report);
}

int run_cli(int argc, char** argv, std::ostream& out, std::ostream& err)
{
    CLI::App app{"Generates proof-of-vulnerability tests with an LLM agent pipeline"};
    app.require_subcommand(1);

    RunConfig cfg;
    std::string mode = "live";
    std::optional<double> time_mins;
    bool no_flow = false;
    bool no_branch = false;
    int run_timeout_secs = 600;
    std::string task_id;
    std::string stage_name;
    bool as_json = false;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--manifest", cfg.manifest_path, "Task manifest (JSON)")->required();
        sub->add_option("--model", cfg.model_id, "Model id")->capture_default_str();
        sub->add_option("--mode", mode, "live, record or replay")->capture_default_str();
        sub->add_option("--cache-dir", cfg.cache_dir, "Record/replay cache directory (one subdirectory per task)");
        sub->add_option("--budget-usd", cfg.budget_usd, "Per-task USD cap (default: manifest value, 5)");
        sub->add_option("--time-budget-mins", time_mins, "Per-task time cap in minutes (default: manifest value, 40)");
        sub->add_flag("--no-flow", no_flow, "Skip flow reasoning");
        sub->add_flag("--no-branch", no_branch, "Skip branch reasoning");
        sub->add_option("--max-repair-iters", cfg.ablation.max_repair_iters, "Maximum validation attempts")
            ->capture_default_str();
        sub->add_option("--max-turns", cfg.ablation.max_turns_per_stage, "Model turns per stage")->capture_default_str();
        sub->add_option("--out-dir", cfg.out_dir, "Output directory")->capture_default_str();
        sub->add_option("--engine", cfg.engine, "Container engine: auto, docker or local")->capture_default_str();
        sub->add_option("--price-table", cfg.price_table, "JSON price table");
        sub->add_option("--script-dir", cfg.script_dir, "Directory of <task_id>.script model scripts");
        sub->add_option("--run-timeout-secs", run_timeout_secs, "Container run time limit")->capture_default_str();
    };

    auto* run = app.add_subcommand("run", "Run the full pipeline over the manifest");
    add_common(run);
    run->add_option("--tasks", cfg.task_filter, "Task ids to run")->delimiter(',');
    run->add_option("--jobs", cfg.jobs, "Concurrent task pipelines")->capture_default_str();

    auto* stage = app.add_subcommand("stage", "Run one stage of one task");
    add_common(stage);
    stage->add_option("--task", task_id, "Task id")->required();
    stage->add_option("--stage", stage_name, "flow, branch, testgen or repair")
        ->required()
        ->check(CLI::IsMember({"flow", "branch", "testgen", "repair"}));

    auto* eval = app.add_subcommand("eval", "Evaluate the test currently in a task workspace");
    add_common(eval);
    eval->add_option("--task", task_id, "Task id")->required();

    auto* report = app.add_subcommand("report", "Summarise a finished run");
    report->add_option("--out-dir", cfg.out_dir, "Output directory")->capture_default_str();
    report->add_flag("--json", as_json, "Machine-readable output");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        out << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "povgen: " << e.what() << "\n";
        return 2;
    }

    try {
        auto parsed_mode = parse_gateway_mode(mode);
        if (!parsed_mode) {
            throw ConfigError("--mode must be live, record or replay");
        }
        cfg.mode = *parsed_mode;
        cfg.ablation.use_flow = !no_flow;
        cfg.ablation.use_branch = !no_branch;
        cfg.run_timeout = std::chrono::seconds(run_timeout_secs);
        if (time_mins) {
            cfg.time_budget = std::chrono::seconds(static_cast<long long>(*time_mins * 60.0));
        }

        if (run->parsed()) {
            auto batch = cmd_run(cfg, err);
            out << render_text(batch);
            bool failed = std::any_of(batch.per_task.begin(), batch.per_task.end(),
                                      [](const TaskSummary& s) { return s.error.has_value(); });
            return failed ? 3 : 0;
        }
        if (stage->parsed()) {
            auto r = cmd_stage(cfg, task_id, *parse_stage(stage_name), err);
            out << r.label << ": " << to_string(r.terminal) << ", " << r.transcript.tool_events.size() << " tool calls\n";
            if (r.payload) {
                std::visit(
                    [&](const auto& p) {
                        using T = std::decay_t<decltype(p)>;
                        if constexpr (std::is_same_v<T, Flow>) {
                            out << render_flow(p) << "\n";
                        } else if constexpr (std::is_same_v<T, BranchSequence>) {
                            out << render_branch_sequence(p) << "\n";
                        } else {
                            out << render_conditions(p) << "\n";
                        }
                    },
                    *r.payload);
            }
            return 0;
        }
        if (eval->parsed()) {
            auto v = cmd_eval(cfg, task_id, err);
            out << to_json(v).dump(2) << "\n";
            return 0;
        }
        if (report->parsed()) {
            out << cmd_report(cfg.out_dir, as_json);
            return 0;
        }
    } catch (const ConfigError& e) {
        err << "povgen: " << e.what() << "\n";
        return 2;
    } catch (const ValidationError& e) {
        err << "povgen: " << e.what() << "\n";
        return 2;
    } catch (const ParseError& e) {
        err << "povgen: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        err << "povgen: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

} // namespace povgen
