#include "povgen/sandbox.hpp"

#include "povgen/error.hpp"
#include "povgen/fsutil.hpp"

#include <algorithm>
#include <deque>
#include <fstream>
#include <regex>
#include <sstream>

namespace povgen {

namespace fs = std::filesystem;
using std::chrono::milliseconds;

namespace {

constexpr int kMaxSymlinkHops = 40;
constexpr std::size_t kMaxGrepLine = 300;

bool has_prefix(const fs::path& p, const fs::path& root)
{
    const std::string ps = p.string();
    const std::string rs = root.string();
    if (ps == rs) {
        return true;
    }
    if (rs == "/") {
        return true;
    }
    return ps.size() > rs.size() && ps.compare(0, rs.size(), rs) == 0 && ps[rs.size()] == '/';
}

bool looks_binary(std::string_view data)
{
    return data.substr(0, 8192).find('\0') != std::string_view::npos;
}

std::string read_all(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    if (!in) {
        throw NotFound("cannot open " + p.filename().string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::string> split_lines_keep(std::string_view text)
{
    std::vector<std::string> out;
    std::size_t pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) {
            out.emplace_back(text.substr(pos));
            break;
        }
        out.emplace_back(text.substr(pos, nl - pos + 1));
        pos = nl + 1;
    }
    return out;
}

long parse_line_arg(const std::string& key, const std::string& v)
{
    try {
        std::size_t used = 0;
        long n = std::stol(v, &used);
        if (used != v.size()) {
            throw BadRange("");
        }
        return n;
    } catch (const std::exception&) {
        throw BadRange(key + " must be an integer, got '" + v + "'");
    }
}

} // namespace

std::string glob_to_regex(std::string_view glob)
{
    std::string re;
    for (std::size_t i = 0; i < glob.size(); ++i) {
        char c = glob[i];
        if (c == '*') {
            if (i + 1 < glob.size() && glob[i + 1] == '*') {
                bool slash_after = i + 2 < glob.size() && glob[i + 2] == '/';
                re += slash_after ? "(?:.*/)?" : ".*";
                i += slash_after ? 2 : 1;
            } else {
                re += "[^/]*";
            }
        } else if (c == '?') {
            re += "[^/]";
        } else if (c == '[') {
            auto close = glob.find(']', i + 2 <= glob.size() ? i + 2 : glob.size());
            if (close == std::string_view::npos) {
                throw BadPattern("unterminated '[' in pattern '" + std::string(glob) + "'");
            }
            std::string body(glob.substr(i + 1, close - i - 1));
            re += '[';
            std::size_t k = 0;
            if (!body.empty() && (body[0] == '!' || body[0] == '^')) {
                re += '^';
                k = 1;
            }
            for (; k < body.size(); ++k) {
                if (body[k] == '\\' || body[k] == '[' || body[k] == ']') {
                    re += '\\';
                }
                re += body[k];
            }
            re += ']';
            i = close;
        } else if (std::string_view("\\^$.|+(){}]").find(c) != std::string_view::npos) {
            re += '\\';
            re += c;
        } else {
            re += c;
        }
    }
    return re;
}

SandboxRoot::SandboxRoot(Workspace ws, ContainerEngine& engine, SandboxConfig cfg)
    : ws_(std::move(ws)), engine_(&engine), cfg_(std::move(cfg))
{
    std::error_code ec;
    root_ = fs::canonical(ws_.root, ec);
    if (ec || !fs::is_directory(root_)) {
        throw NotFound("workspace root does not exist: " + ws_.root.string());
    }
}

fs::path SandboxRoot::resolve(std::string_view arg) const
{
    std::string p(arg);
    while (!p.empty() && (p.back() == ' ' || p.back() == '\t')) {
        p.pop_back();
    }
    const std::string& vroot = cfg_.virtual_root;
    const std::string rroot = root_.string();
    if (p == vroot || p.rfind(vroot + "/", 0) == 0) {
        p = p.substr(vroot.size());
    } else if (p == rroot || p.rfind(rroot + "/", 0) == 0) {
        p = p.substr(rroot.size());
    } else if (!p.empty() && p.front() == '/') {
        throw PathEscape("path outside the workspace: " + std::string(arg));
    }

    std::deque<fs::path> pending;
    for (const auto& part : fs::path(p).relative_path()) {
        pending.push_back(part);
    }
    fs::path current = root_;
    int hops = 0;
    while (!pending.empty()) {
        fs::path part = pending.front();
        pending.pop_front();
        if (part.empty() || part == ".") {
            continue;
        }
        if (part == "..") {
            if (current == root_) {
                throw PathEscape("path outside the workspace: " + std::string(arg));
            }
            current = current.parent_path();
            continue;
        }
        fs::path next = current / part;
        std::error_code ec;
        auto st = fs::symlink_status(next, ec);
        if (!ec && fs::is_symlink(st)) {
            if (++hops > kMaxSymlinkHops) {
                throw PathEscape("too many levels of symbolic links: " + std::string(arg));
            }
            fs::path target = fs::read_symlink(next);
            std::deque<fs::path> expanded;
            for (const auto& t : target.relative_path()) {
                expanded.push_back(t);
            }
            pending.insert(pending.begin(), expanded.begin(), expanded.end());
            if (target.is_absolute()) {
                current = "/";
            }
            continue;
        }
        current = next;
    }
    if (!has_prefix(current, root_)) {
        throw PathEscape("path outside the workspace: " + std::string(arg));
    }
    return current;
}

std::string SandboxRoot::relative(const fs::path& resolved) const
{
    auto rel = resolved.lexically_relative(root_).generic_string();
    return rel.empty() ? "." : rel;
}

std::vector<DirEntry> SandboxRoot::list_dir(std::string_view path) const
{
    auto dir = resolve(path);
    if (!fs::exists(dir)) {
        throw NotFound("no such directory: " + std::string(path));
    }
    if (!fs::is_directory(dir)) {
        throw NotFound("not a directory: " + std::string(path));
    }
    std::vector<DirEntry> out;
    for (const auto& e : fs::directory_iterator(dir)) {
        std::string name = e.path().filename().string();
        fs::path real;
        try {
            real = resolve(relative(dir / name));
        } catch (const PathEscape&) {
            continue;
        }
        std::error_code ec;
        auto st = fs::status(real, ec);
        if (ec || !fs::exists(st)) {
            continue; // dangling link
        }
        if (fs::is_directory(st)) {
            out.push_back({name, "dir", 0});
        } else {
            out.push_back({name, "file", fs::file_size(real, ec)});
        }
    }
    std::sort(out.begin(), out.end(), [](const DirEntry& a, const DirEntry& b) { return a.name < b.name; });
    return out;
}

std::string SandboxRoot::read_file(std::string_view path, std::optional<long> start_line, std::optional<long> end_line) const
{
    if ((start_line && *start_line < 1) || (end_line && *end_line < 1) ||
        (start_line && end_line && *end_line < *start_line)) {
        throw BadRange("line window must satisfy 1 <= start_line <= end_line");
    }
    auto file = resolve(path);
    if (!fs::exists(file)) {
        throw NotFound("no such file: " + std::string(path));
    }
    if (fs::is_directory(file)) {
        throw NotFound("is a directory: " + std::string(path));
    }
    std::string data = read_all(file);
    if (!start_line && !end_line) {
        return limit(data);
    }
    auto lines = split_lines_keep(data);
    auto first = static_cast<std::size_t>(start_line.value_or(1));
    if (first > std::max<std::size_t>(lines.size(), 1)) {
        throw BadRange("start_line " + std::to_string(first) + " is past the end of " + std::string(path) + " (" +
                       std::to_string(lines.size()) + " lines)");
    }
    auto last = std::min(lines.size(), static_cast<std::size_t>(end_line.value_or(static_cast<long>(lines.size()))));
    std::string out;
    for (std::size_t i = first; i <= last; ++i) {
        out += lines[i - 1];
    }
    return limit(out);
}

std::vector<std::string> SandboxRoot::find_files(std::string_view pattern) const
{
    std::string pat(pattern);
    const std::string& vroot = cfg_.virtual_root;
    if (pat.rfind(vroot + "/", 0) == 0) {
        pat = pat.substr(vroot.size() + 1);
    } else if (!pat.empty() && pat.front() == '/') {
        throw PathEscape("pattern anchored outside the workspace: " + pat);
    }
    while (pat.rfind("./", 0) == 0) {
        pat = pat.substr(2);
    }
    for (const auto& part : fs::path(pat)) {
        if (part == "..") {
            throw PathEscape("pattern anchored outside the workspace: " + std::string(pattern));
        }
    }
    if (pat.empty()) {
        throw BadPattern("empty pattern");
    }
    const bool basename_only = pat.find('/') == std::string::npos;
    std::regex re;
    try {
        re = std::regex(glob_to_regex(pat));
    } catch (const std::regex_error&) {
        throw BadPattern("invalid pattern '" + pat + "'");
    }

    std::vector<std::string> out;
    for (auto it = fs::recursive_directory_iterator(root_, fs::directory_options::skip_permission_denied);
         it != fs::recursive_directory_iterator(); ++it) {
        std::error_code ec;
        if (it->is_symlink(ec)) {
            try {
                resolve(relative(it->path()));
            } catch (const PathEscape&) {
                continue;
            }
        }
        std::string rel = relative(it->path());
        const std::string subject = basename_only ? it->path().filename().string() : rel;
        if (std::regex_match(subject, re)) {
            out.push_back(rel);
        }
    }
    std::sort(out.begin(), out.end());
    return out;
}

GrepResult SandboxRoot::grep(std::string_view pattern, std::string_view scope) const
{
    if (pattern.empty()) {
        throw BadPattern("empty grep pattern");
    }
    auto start = resolve(scope.empty() ? std::string_view(".") : scope);
    if (!fs::exists(start)) {
        throw NotFound("no such file or directory: " + std::string(scope));
    }
    std::vector<fs::path> files;
    if (fs::is_directory(start)) {
        for (auto it = fs::recursive_directory_iterator(start, fs::directory_options::skip_permission_denied);
             it != fs::recursive_directory_iterator(); ++it) {
            std::error_code ec;
            if (it->is_symlink(ec)) {
                continue;
            }
            if (it->is_regular_file(ec)) {
                files.push_back(it->path());
            }
        }
    } else {
        files.push_back(start);
    }
    std::sort(files.begin(), files.end());

    GrepResult result;
    for (const auto& f : files) {
        std::string data;
        try {
            data = read_all(f);
        } catch (const NotFound&) {
            continue;
        }
        if (looks_binary(data)) {
            continue;
        }
        auto lines = split_lines_keep(data);
        for (std::size_t i = 0; i < lines.size(); ++i) {
            if (lines[i].find(pattern) == std::string::npos) {
                continue;
            }
            if (result.hits.size() == cfg_.grep_max_results) {
                result.truncated = true;
                return result;
            }
            std::string text = lines[i];
            while (!text.empty() && (text.back() == '\n' || text.back() == '\r')) {
                text.pop_back();
            }
            if (text.size() > kMaxGrepLine) {
                text = text.substr(0, kMaxGrepLine) + "...";
            }
            result.hits.push_back({relative(f), i + 1, std::move(text)});
        }
    }
    return result;
}

void SandboxRoot::write_file(std::string_view path, std::string_view content) const
{
    auto file = resolve(path);
    if (file == root_) {
        throw PathEscape("cannot write the workspace root");
    }
    if (fs::is_directory(file)) {
        throw NotFound("is a directory: " + std::string(path));
    }
    std::error_code ec;
    auto dockerfile = fs::weakly_canonical(ws_.dockerfile_path, ec);
    if (file == dockerfile && !content.starts_with(ws_.scaffold_prefix)) {
        throw DockerfileGuardViolation(std::string(kDockerfileName) +
                                       ": the lines above the marker are fixed; keep them byte-for-byte and edit below \"" +
                                       std::string(kProtectedMarker) + "\"");
    }
    fs::create_directories(file.parent_path());
    write_atomic(file, content);
}

BuildRunReport SandboxRoot::run_container(const std::string& image_tag, milliseconds remaining_time) const
{
    BuildRunReport r;
    if (!fs::exists(ws_.dockerfile_path)) {
        r.build_log_tail = std::string(kDockerfileName) + " not found in the workspace\n";
        return r;
    }
    engine_->ensure_available();
    if (remaining_time <= milliseconds(0)) {
        r.timed_out = true;
        r.build_log_tail = "no time left to build\n";
        return r;
    }
    auto started = std::chrono::steady_clock::now();
    auto built = engine_->build(root_, ws_.dockerfile_path, image_tag, remaining_time);
    r.build_log_tail = tail_truncate(built.log, cfg_.max_tool_output);
    r.build_ok = built.ok;
    if (!built.ok) {
        r.timed_out = built.timed_out;
        engine_->remove_image(image_tag);
        return r;
    }
    auto spent = std::chrono::duration_cast<milliseconds>(std::chrono::steady_clock::now() - started);
    auto left = remaining_time - spent;
    if (left <= milliseconds(0)) {
        r.timed_out = true;
        engine_->remove_image(image_tag);
        return r;
    }
    auto ran = engine_->run(image_tag, std::min(cfg_.run_timeout, left));
    r.ran = true;
    r.timed_out = ran.timed_out;
    if (!ran.timed_out) {
        r.exit_code = ran.exit_code;
    }
    r.run_log_tail = tail_truncate(ran.combined, cfg_.max_tool_output);
    r.run_stdout_tail = tail_truncate(ran.out, cfg_.max_tool_output);
    r.run_stderr_tail = tail_truncate(ran.err, cfg_.max_tool_output);
    engine_->remove_image(image_tag);
    return r;
}

std::string SandboxRoot::limit(std::string_view text, bool* truncated) const
{
    if (truncated != nullptr) {
        *truncated = text.size() > cfg_.max_tool_output;
    }
    return head_truncate(text, cfg_.max_tool_output);
}

std::string render_report(const BuildRunReport& r, std::size_t max_bytes)
{
    std::size_t half = max_bytes / 2 > 200 ? max_bytes / 2 - 100 : max_bytes / 2;
    std::ostringstream o;
    o << "Build: " << (r.build_ok ? "succeeded" : (r.timed_out && !r.ran ? "timed out" : "failed")) << "\n";
    o << "--- build output (last part) ---\n" << tail_truncate(r.build_log_tail, half);
    if (!r.build_log_tail.empty() && r.build_log_tail.back() != '\n') {
        o << "\n";
    }
    if (r.ran) {
        if (r.timed_out) {
            o << "Run: timed out\n";
        } else {
            o << "Run: exited with code " << r.exit_code.value_or(-1) << "\n";
        }
        o << "--- run output (last part) ---\n" << tail_truncate(r.run_log_tail, half);
    } else if (r.build_ok) {
        o << "Run: not started (time limit reached)\n";
    }
    return o.str();
}

ToolOutcome SandboxRoot::execute(const ToolCall& call, const std::string& image_tag, milliseconds remaining_time) const
{
    ToolOutcome out;
    auto arg = [&](const char* key) -> std::string {
        auto it = call.args.find(key);
        return it == call.args.end() ? std::string() : it->second;
    };
    try {
        switch (call.tool) {
        case ToolName::ListDir: {
            std::ostringstream o;
            auto entries = list_dir(arg("path"));
            if (entries.empty()) {
                o << "(empty directory)\n";
            }
            for (const auto& e : entries) {
                if (e.kind == "dir") {
                    o << e.name << "/\n";
                } else {
                    o << e.name << " (" << e.size << " bytes)\n";
                }
            }
            out.text = limit(o.str(), &out.truncated);
            break;
        }
        case ToolName::Read: {
            std::optional<long> s;
            std::optional<long> e;
            if (call.args.contains("start_line")) {
                s = parse_line_arg("start_line", arg("start_line"));
            }
            if (call.args.contains("end_line")) {
                e = parse_line_arg("end_line", arg("end_line"));
            }
            out.text = read_file(arg("path"), s, e);
            out.truncated = out.text.ends_with(kTruncatedMarker);
            break;
        }
        case ToolName::Find: {
            std::ostringstream o;
            auto found = find_files(arg("pattern"));
            if (found.empty()) {
                o << "(no matching files)\n";
            }
            for (const auto& f : found) {
                o << f << "\n";
            }
            out.text = limit(o.str(), &out.truncated);
            break;
        }
        case ToolName::Grep: {
            std::ostringstream o;
            auto res = grep(arg("pattern"), arg("path"));
            if (res.hits.empty()) {
                o << "(no matches)\n";
            }
            for (const auto& h : res.hits) {
                o << h.file << ":" << h.line_no << ": " << h.line_text << "\n";
            }
            if (res.truncated) {
                o << kTruncatedMarker << " (more than " << cfg_.grep_max_results << " matches)\n";
            }
            out.text = limit(o.str(), &out.truncated);
            out.truncated = out.truncated || res.truncated;
            break;
        }
        case ToolName::Write: {
            auto content = arg("content");
            write_file(arg("path"), content);
            out.text = "Wrote " + std::to_string(content.size()) + " bytes to " + relative(resolve(arg("path"))) + "\n";
            break;
        }
        case ToolName::Run: {
            auto report = run_container(image_tag, remaining_time);
            out.text = limit(render_report(report, cfg_.max_tool_output), &out.truncated);
            out.report = std::move(report);
            break;
        }
        }
    } catch (const ToolError& e) {
        out.error = true;
        out.text = limit(std::string("Error: ") + e.what() + "\n");
    } catch (const fs::filesystem_error& e) {
        out.error = true;
        out.text = limit(std::string("Error: ") + e.code().message() + "\n");
    } catch (const IoError& e) {
        out.error = true;
        out.text = limit(std::string("Error: ") + e.what() + "\n");
    }
    return out;
}

} // namespace povgen
