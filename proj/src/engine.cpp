#include "povgen/engine.hpp"

#include "povgen/error.hpp"
#include "povgen/fsutil.hpp"
#include "povgen/process.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <map>
#include <set>
#include <sstream>

#include <unistd.h>

namespace povgen {

namespace fs = std::filesystem;
using json = nlohmann::json;
using std::chrono::milliseconds;

namespace {

const std::set<std::string, std::less<>> kKnownInstructions{
    "FROM",   "RUN",  "CMD",   "ENTRYPOINT", "WORKDIR", "COPY",       "ADD",         "ENV",     "ARG",
    "LABEL",  "EXPOSE", "USER", "SHELL",     "VOLUME",  "STOPSIGNAL", "HEALTHCHECK", "ONBUILD", "MAINTAINER"};

std::string upper(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::toupper(c)); });
    return out;
}

std::string trim_copy(std::string_view s)
{
    auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) {
        return {};
    }
    auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_ws(std::string_view s)
{
    std::istringstream in{std::string(s)};
    std::vector<std::string> out;
    std::string w;
    while (in >> w) {
        out.push_back(w);
    }
    return out;
}

std::string replace_all(std::string text, const std::string& from, const std::string& to)
{
    if (from.empty()) {
        return text;
    }
    std::size_t pos = 0;
    while ((pos = text.find(from, pos)) != std::string::npos) {
        text.replace(pos, from.size(), to);
        pos += to.size();
    }
    return text;
}

// Maps an absolute container path onto the image tree.
fs::path host_path(const fs::path& rootfs, const std::string& container_path)
{
    fs::path rel = fs::path(container_path).lexically_normal().relative_path();
    for (const auto& part : rel) {
        if (part == "..") {
            throw ParseError("path leaves the image root: " + container_path);
        }
    }
    return rootfs / rel;
}

std::string join_container_path(const std::string& base, const std::string& p)
{
    if (!p.empty() && p.front() == '/') {
        return fs::path(p).lexically_normal().generic_string();
    }
    return (fs::path(base) / p).lexically_normal().generic_string();
}

std::vector<std::string> command_argv(const DockerInstruction& ins)
{
    if (ins.exec_form) {
        return *ins.exec_form;
    }
    return {"/bin/sh", "-c", ins.args};
}

struct ImageConfig {
    std::string workdir = "/";
    std::map<std::string, std::string> env;
    std::optional<DockerInstruction> cmd;
    std::optional<DockerInstruction> entrypoint;
};

json instruction_json(const std::optional<DockerInstruction>& ins)
{
    if (!ins) {
        return nullptr;
    }
    json j{{"args", ins->args}};
    if (ins->exec_form) {
        j["exec"] = *ins->exec_form;
    }
    return j;
}

std::optional<DockerInstruction> instruction_from_json(const json& j)
{
    if (j.is_null()) {
        return std::nullopt;
    }
    DockerInstruction ins;
    ins.args = j.at("args").get<std::string>();
    if (j.contains("exec")) {
        ins.exec_form = j["exec"].get<std::vector<std::string>>();
    }
    return ins;
}

} // namespace

std::vector<DockerInstruction> parse_dockerfile(std::string_view text)
{
    std::vector<DockerInstruction> out;
    std::istringstream in{std::string(text)};
    std::string raw;
    std::size_t line_no = 0;
    std::optional<DockerInstruction> cur;
    bool saw_from = false;

    auto finish = [&] {
        if (!cur) {
            return;
        }
        auto& ins = *cur;
        ins.args = trim_copy(ins.args);
        if (!ins.args.empty() && ins.args.front() == '[' &&
            (ins.keyword == "CMD" || ins.keyword == "ENTRYPOINT" || ins.keyword == "RUN")) {
            try {
                auto arr = json::parse(ins.args);
                if (!arr.is_array() || arr.empty()) {
                    throw ParseError("");
                }
                std::vector<std::string> argv;
                for (const auto& a : arr) {
                    argv.push_back(a.get<std::string>());
                }
                ins.exec_form = std::move(argv);
            } catch (const std::exception&) {
                throw ParseError("Dockerfile line " + std::to_string(ins.line) + ": malformed JSON array for " + ins.keyword);
            }
        }
        if (ins.keyword == "FROM") {
            saw_from = true;
        } else if (!saw_from && ins.keyword != "ARG") {
            throw ParseError("Dockerfile line " + std::to_string(ins.line) + ": the first instruction must be FROM");
        }
        out.push_back(std::move(ins));
        cur.reset();
    };

    while (std::getline(in, raw)) {
        ++line_no;
        if (!raw.empty() && raw.back() == '\r') {
            raw.pop_back();
        }
        auto stripped = trim_copy(raw);
        if (!cur) {
            if (stripped.empty() || stripped.front() == '#') {
                continue;
            }
            auto sp = stripped.find_first_of(" \t");
            std::string kw = upper(stripped.substr(0, sp));
            if (!kKnownInstructions.contains(kw)) {
                throw ParseError("Dockerfile line " + std::to_string(line_no) + ": unknown instruction: " + kw);
            }
            cur = DockerInstruction{line_no, kw, sp == std::string::npos ? std::string() : stripped.substr(sp + 1), {}};
        } else {
            if (stripped.front() == '#') {
                continue; // comment inside a continuation
            }
            cur->args += " " + stripped;
        }
        if (!cur->args.empty() && cur->args.back() == '\\') {
            cur->args.pop_back();
            continue;
        }
        if (stripped.empty() && cur->args.empty()) {
            continue;
        }
        finish();
    }
    finish();
    if (!saw_from) {
        throw ParseError("Dockerfile: no FROM instruction");
    }
    return out;
}

std::string sanitize_tag(std::string_view raw)
{
    std::string out;
    for (unsigned char c : raw) {
        if (std::isalnum(c) != 0) {
            out.push_back(static_cast<char>(std::tolower(c)));
        } else if (c == '-' || c == '_' || c == '.') {
            out.push_back(static_cast<char>(c));
        } else {
            out.push_back('-');
        }
    }
    if (out.empty() || std::isalnum(static_cast<unsigned char>(out.front())) == 0) {
        out.insert(out.begin(), 'x');
    }
    return out.substr(0, 120);
}

// ---------------------------------------------------------------------------
// LocalEngine

LocalEngine::LocalEngine(fs::path state_dir, NetworkIsolation isolation) : state_dir_(std::move(state_dir))
{
    if (isolation == NetworkIsolation::Off) {
        return;
    }
    std::vector<std::vector<std::string>> candidates;
    if (::geteuid() == 0) {
        candidates.push_back({"unshare", "-n", "--"});
    }
    candidates.push_back({"unshare", "-r", "-n", "--"});
    for (const auto& prefix : candidates) {
        auto argv = prefix;
        argv.emplace_back("true");
        if (program_on_path("unshare") && run_process({.argv = argv, .timeout = std::chrono::seconds(10)}).exit_code == 0) {
            isolation_prefix_ = prefix;
            break;
        }
    }
    if (isolation == NetworkIsolation::Required && isolation_prefix_.empty()) {
        throw EngineUnavailable("local engine: network namespaces are not available (unshare -n failed)");
    }
}

void LocalEngine::ensure_available()
{
    if (!program_on_path("sh")) {
        throw EngineUnavailable("local engine: no /bin/sh");
    }
    fs::create_directories(state_dir_);
}

fs::path LocalEngine::image_dir(const std::string& tag) const
{
    return state_dir_ / "images" / sanitize_tag(tag);
}

BuildResult LocalEngine::build(const fs::path& context, const fs::path& dockerfile, const std::string& tag, milliseconds timeout)
{
    ensure_available();
    BuildResult result;
    std::ostringstream log;
    auto started = std::chrono::steady_clock::now();

    std::vector<DockerInstruction> instructions;
    try {
        instructions = parse_dockerfile(read_text(dockerfile));
    } catch (const ParseError& e) {
        result.log = std::string("failed to parse ") + dockerfile.filename().string() + ": " + e.what() + "\n";
        return result;
    } catch (const IoError& e) {
        result.log = std::string(e.what()) + "\n";
        return result;
    }

    auto img = image_dir(tag);
    std::error_code ec;
    fs::remove_all(img, ec);
    auto rootfs = img / "rootfs";
    fs::create_directories(rootfs);
    const std::string rootfs_str = rootfs.string();
    auto scrub = [&](std::string text) { return replace_all(std::move(text), rootfs_str, ""); };

    ImageConfig cfg;
    std::map<std::string, std::string> build_args;
    const std::size_t steps = instructions.size();
    std::size_t step = 0;
    for (const auto& ins : instructions) {
        ++step;
        log << "Step " << step << "/" << steps << " : " << ins.keyword << " " << ins.args << "\n";
        auto fail = [&](const std::string& why) {
            log << why << "\n";
            result.log = scrub(log.str());
            return result;
        };
        try {
            if (ins.keyword == "FROM" || ins.keyword == "LABEL" || ins.keyword == "EXPOSE" || ins.keyword == "USER" ||
                ins.keyword == "VOLUME" || ins.keyword == "STOPSIGNAL" || ins.keyword == "HEALTHCHECK" ||
                ins.keyword == "MAINTAINER" || ins.keyword == "ONBUILD" || ins.keyword == "SHELL") {
                continue;
            }
            if (ins.keyword == "ARG") {
                auto eq = ins.args.find('=');
                build_args[trim_copy(ins.args.substr(0, eq))] = eq == std::string::npos ? "" : trim_copy(ins.args.substr(eq + 1));
                continue;
            }
            if (ins.keyword == "ENV") {
                auto words = split_ws(ins.args);
                if (!words.empty() && words[0].find('=') == std::string::npos) {
                    auto rest = trim_copy(std::string_view(ins.args).substr(words[0].size()));
                    cfg.env[words[0]] = rest;
                } else {
                    for (const auto& w : words) {
                        auto eq = w.find('=');
                        if (eq == std::string::npos) {
                            return fail("ENV: expected key=value, got '" + w + "'");
                        }
                        std::string v = w.substr(eq + 1);
                        if (v.size() >= 2 && v.front() == '"' && v.back() == '"') {
                            v = v.substr(1, v.size() - 2);
                        }
                        cfg.env[w.substr(0, eq)] = v;
                    }
                }
                continue;
            }
            if (ins.keyword == "WORKDIR") {
                cfg.workdir = join_container_path(cfg.workdir, trim_copy(ins.args));
                fs::create_directories(host_path(rootfs, cfg.workdir));
                continue;
            }
            if (ins.keyword == "COPY" || ins.keyword == "ADD") {
                auto words = split_ws(ins.args);
                std::erase_if(words, [](const std::string& w) { return w.rfind("--", 0) == 0; });
                if (words.size() < 2) {
                    return fail(ins.keyword + " requires at least one source and a destination");
                }
                std::string dest = join_container_path(cfg.workdir, words.back());
                bool dest_is_dir = words.back().back() == '/' || words.size() > 2;
                for (std::size_t i = 0; i + 1 < words.size(); ++i) {
                    fs::path rel = fs::path(words[i]).lexically_normal();
                    if (rel.is_absolute() || (!rel.empty() && *rel.begin() == "..")) {
                        return fail(ins.keyword + " source outside the build context: " + words[i]);
                    }
                    fs::path src = context / rel;
                    if (!fs::exists(fs::symlink_status(src))) {
                        return fail(ins.keyword + " failed: file not found in build context: " + words[i]);
                    }
                    fs::path target = host_path(rootfs, dest);
                    if (fs::is_directory(src)) {
                        copy_tree(src, target);
                    } else {
                        if (dest_is_dir || fs::is_directory(target)) {
                            target /= src.filename();
                        }
                        fs::create_directories(target.parent_path());
                        fs::copy(src, target, fs::copy_options::overwrite_existing | fs::copy_options::copy_symlinks);
                    }
                }
                continue;
            }
            if (ins.keyword == "CMD") {
                cfg.cmd = ins;
                continue;
            }
            if (ins.keyword == "ENTRYPOINT") {
                cfg.entrypoint = ins;
                continue;
            }
            if (ins.keyword == "RUN") {
                auto spent = std::chrono::duration_cast<milliseconds>(std::chrono::steady_clock::now() - started);
                if (spent >= timeout) {
                    result.timed_out = true;
                    return fail("build timed out");
                }
                auto env = build_args;
                for (const auto& [k, v] : cfg.env) {
                    env[k] = v;
                }
                fs::path cwd = host_path(rootfs, cfg.workdir);
                fs::create_directories(cwd);
                auto pr = run_process({.argv = command_argv(ins), .cwd = cwd, .env = env, .timeout = timeout - spent});
                log << scrub(pr.combined);
                if (!pr.combined.empty() && pr.combined.back() != '\n') {
                    log << "\n";
                }
                if (pr.timed_out) {
                    result.timed_out = true;
                    return fail("build timed out");
                }
                if (pr.exit_code != 0) {
                    return fail("The command '" + ins.args + "' returned a non-zero code: " +
                                std::to_string(pr.exit_code.value_or(-1)));
                }
                continue;
            }
        } catch (const std::exception& e) {
            return fail(ins.keyword + " failed: " + e.what());
        }
    }

    json config{{"workdir", cfg.workdir},
                {"env", cfg.env},
                {"cmd", instruction_json(cfg.cmd)},
                {"entrypoint", instruction_json(cfg.entrypoint)}};
    write_atomic(img / "config.json", config.dump(2));
    log << "Successfully built " << sanitize_tag(tag) << "\n";
    result.ok = true;
    result.log = scrub(log.str());
    return result;
}

RunResult LocalEngine::run(const std::string& tag, milliseconds timeout)
{
    ensure_available();
    auto img = image_dir(tag);
    if (!fs::exists(img / "config.json")) {
        throw Error("local engine: no such image: " + tag);
    }
    auto config = json::parse(read_text(img / "config.json"));
    ImageConfig cfg;
    cfg.workdir = config.at("workdir").get<std::string>();
    cfg.env = config.at("env").get<std::map<std::string, std::string>>();
    cfg.cmd = instruction_from_json(config.at("cmd"));
    cfg.entrypoint = instruction_from_json(config.at("entrypoint"));

    RunResult result;
    std::vector<std::string> argv;
    if (cfg.entrypoint) {
        argv = command_argv(*cfg.entrypoint);
        if (cfg.cmd && cfg.entrypoint->exec_form && cfg.cmd->exec_form) {
            argv.insert(argv.end(), cfg.cmd->exec_form->begin(), cfg.cmd->exec_form->end());
        }
    } else if (cfg.cmd) {
        argv = command_argv(*cfg.cmd);
    } else {
        // Mirrors `docker run` on an image without a command.
        result.exit_code = 125;
        result.err = "Error response from daemon: No command specified\n";
        result.combined = result.err;
        return result;
    }

    auto container = state_dir_ / "containers" / (sanitize_tag(tag) + "-" + std::to_string(++run_counter_));
    std::error_code ec;
    fs::remove_all(container, ec);
    auto rootfs = container / "rootfs";
    copy_tree(img / "rootfs", rootfs);
    fs::path cwd = host_path(rootfs, cfg.workdir);
    fs::create_directories(cwd);

    std::vector<std::string> full = isolation_prefix_;
    full.insert(full.end(), argv.begin(), argv.end());
    auto pr = run_process({.argv = full, .cwd = cwd, .env = cfg.env, .timeout = timeout});

    const std::string rootfs_str = rootfs.string();
    result.timed_out = pr.timed_out;
    if (!pr.timed_out) {
        result.exit_code = pr.exit_code;
    }
    result.out = replace_all(std::move(pr.out), rootfs_str, "");
    result.err = replace_all(std::move(pr.err), rootfs_str, "");
    result.combined = replace_all(std::move(pr.combined), rootfs_str, "");
    fs::remove_all(container, ec);
    return result;
}

void LocalEngine::remove_image(const std::string& tag)
{
    std::error_code ec;
    fs::remove_all(image_dir(tag), ec);
}

// ---------------------------------------------------------------------------
// DockerEngine

void DockerEngine::ensure_available()
{
    if (checked_) {
        return;
    }
    if (!program_on_path(binary_)) {
        throw EngineUnavailable("container engine '" + binary_ + "' not found on PATH");
    }
    auto pr = run_process({.argv = {binary_, "version", "--format", "{{.Server.Version}}"}, .timeout = std::chrono::seconds(20)});
    if (pr.exit_code != 0) {
        throw EngineUnavailable("container engine '" + binary_ + "' is not answering: " + trim_copy(pr.combined));
    }
    checked_ = true;
}

std::vector<std::string> DockerEngine::build_argv(const fs::path& context, const fs::path& dockerfile, const std::string& tag) const
{
    return {binary_, "build", "--progress=plain", "-f", dockerfile.string(), "-t", sanitize_tag(tag), context.string()};
}

std::vector<std::string> DockerEngine::run_argv(const std::string& tag, const std::string& container_name) const
{
    return {binary_, "run", "--rm", "--network", "none", "--name", container_name, sanitize_tag(tag)};
}

BuildResult DockerEngine::build(const fs::path& context, const fs::path& dockerfile, const std::string& tag, milliseconds timeout)
{
    ensure_available();
    auto pr = run_process({.argv = build_argv(context, dockerfile, tag), .timeout = timeout});
    BuildResult r;
    r.timed_out = pr.timed_out;
    r.ok = !pr.timed_out && pr.exit_code == 0;
    r.log = pr.combined;
    return r;
}

RunResult DockerEngine::run(const std::string& tag, milliseconds timeout)
{
    ensure_available();
    std::string name = sanitize_tag(tag) + "-c" + std::to_string(++run_counter_) + "-" + std::to_string(::getpid());
    auto pr = run_process({.argv = run_argv(tag, name), .timeout = timeout});
    RunResult r;
    r.timed_out = pr.timed_out;
    if (pr.timed_out) {
        run_process({.argv = {binary_, "rm", "-f", name}, .timeout = std::chrono::seconds(30)});
    } else {
        r.exit_code = pr.exit_code;
    }
    r.out = std::move(pr.out);
    r.err = std::move(pr.err);
    r.combined = std::move(pr.combined);
    return r;
}

void DockerEngine::remove_image(const std::string& tag)
{
    run_process({.argv = {binary_, "rmi", "-f", sanitize_tag(tag)}, .timeout = std::chrono::seconds(60)});
}

std::unique_ptr<ContainerEngine> make_engine(const std::string& kind, const fs::path& state_dir)
{
    if (kind == "local") {
        return std::make_unique<LocalEngine>(state_dir);
    }
    if (kind == "docker") {
        return std::make_unique<DockerEngine>();
    }
    if (kind == "auto") {
        auto docker = std::make_unique<DockerEngine>();
        try {
            docker->ensure_available();
            return docker;
        } catch (const EngineUnavailable&) {
            return std::make_unique<LocalEngine>(state_dir);
        }
    }
    throw ConfigError("unknown container engine '" + kind + "' (expected docker, local or auto)");
}

} // namespace povgen
