#include "povgen/task.hpp"

#include "povgen/error.hpp"
#include "povgen/fsutil.hpp"
#include "povgen/process.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cctype>
#include <set>
#include <sstream>

namespace povgen {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct CweRow {
    Cwe cwe;
    std::string_view id;
    std::string_view title;
};

constexpr std::array<CweRow, 4> kCweTable{{
    {Cwe::PathTraversal22, "CWE-22", "Improper Limitation of a Pathname to a Restricted Directory ('Path Traversal')"},
    {Cwe::CommandInjection78, "CWE-78",
     "Improper Neutralization of Special Elements used in an OS Command ('OS Command Injection')"},
    {Cwe::CrossSiteScripting79, "CWE-79",
     "Improper Neutralization of Input During Web Page Generation ('Cross-site Scripting')"},
    {Cwe::CodeInjection94, "CWE-94", "Improper Control of Generation of Code ('Code Injection')"},
}};

std::string lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

bool valid_id(std::string_view id)
{
    if (id.empty() || id.size() > 128 || id.front() == '.') {
        return false;
    }
    return std::all_of(id.begin(), id.end(), [](unsigned char c) {
        return std::isalnum(c) != 0 || c == '-' || c == '_' || c == '.';
    });
}

const std::set<std::string, std::less<>> kTaskFields{
    "id", "cwe", "report_text", "repo_path", "vulnerable_commit", "fixed_commit",
    "fix_functions", "language", "build_hint", "budget_usd", "time_budget"};

[[noreturn]] void field_error(std::size_t index, const std::string& id, std::string_view field, std::string_view what)
{
    std::ostringstream msg;
    msg << "task #" << index;
    if (!id.empty()) {
        msg << " (" << id << ")";
    }
    msg << ": field '" << field << "' " << what;
    throw ValidationError(msg.str());
}

std::string require_string(const json& obj, std::size_t index, const std::string& id, std::string_view key)
{
    auto it = obj.find(std::string(key));
    if (it == obj.end()) {
        field_error(index, id, key, "is required");
    }
    if (!it->is_string()) {
        field_error(index, id, key, "must be a string");
    }
    return it->get<std::string>();
}

VulnerabilityTask task_from_json(const json& obj, std::size_t index, const fs::path& base_dir)
{
    if (!obj.is_object()) {
        throw ValidationError("task #" + std::to_string(index) + ": expected an object");
    }
    std::string id = obj.contains("id") && obj["id"].is_string() ? obj["id"].get<std::string>() : std::string();
    for (const auto& [key, _] : obj.items()) {
        if (!kTaskFields.contains(key)) {
            field_error(index, id, key, "is not a known task field");
        }
    }

    VulnerabilityTask t;
    t.id = require_string(obj, index, id, "id");
    auto cwe_text = require_string(obj, index, id, "cwe");
    auto cwe = parse_cwe(cwe_text);
    if (!cwe) {
        field_error(index, id, "cwe", "names an unsupported category '" + cwe_text + "' (supported: CWE-22, CWE-78, CWE-79, CWE-94)");
    }
    t.cwe = *cwe;
    t.report_text = require_string(obj, index, id, "report_text");
    fs::path repo = require_string(obj, index, id, "repo_path");
    t.repo_path = repo.is_relative() && !base_dir.empty() ? base_dir / repo : repo;
    t.vulnerable_commit = require_string(obj, index, id, "vulnerable_commit");
    if (obj.contains("fixed_commit") && !obj["fixed_commit"].is_null()) {
        t.fixed_commit = require_string(obj, index, id, "fixed_commit");
    }
    auto ff = obj.find("fix_functions");
    if (ff == obj.end() || !ff->is_array()) {
        field_error(index, id, "fix_functions", "must be a list of function names");
    }
    for (const auto& f : *ff) {
        if (!f.is_string()) {
            field_error(index, id, "fix_functions", "must contain only strings");
        }
        t.fix_functions.push_back(f.get<std::string>());
    }
    auto lang_text = require_string(obj, index, id, "language");
    auto lang = parse_language(lang_text);
    if (!lang) {
        field_error(index, id, "language", "must be one of java, c, cpp, other");
    }
    t.language = *lang;
    if (obj.contains("build_hint") && !obj["build_hint"].is_null()) {
        fs::path hint = require_string(obj, index, id, "build_hint");
        t.build_hint = hint.is_relative() && !base_dir.empty() ? base_dir / hint : hint;
    }
    if (obj.contains("budget_usd")) {
        if (!obj["budget_usd"].is_number()) {
            field_error(index, id, "budget_usd", "must be a number");
        }
        t.budget_usd = obj["budget_usd"].get<double>();
    }
    if (obj.contains("time_budget")) {
        const auto& tb = obj["time_budget"];
        try {
            if (tb.is_number()) {
                t.time_budget = std::chrono::seconds(static_cast<long long>(tb.get<double>() * 60.0));
            } else if (tb.is_string()) {
                t.time_budget = parse_duration(tb.get<std::string>());
            } else {
                field_error(index, id, "time_budget", "must be a duration string or a number of minutes");
            }
        } catch (const ParseError& e) {
            field_error(index, id, "time_budget", e.what());
        }
    }
    try {
        validate(t);
    } catch (const ValidationError& e) {
        throw ValidationError("task #" + std::to_string(index) + " (" + t.id + "): " + e.what());
    }
    return t;
}

std::string base_image(Language lang)
{
    switch (lang) {
    case Language::Java:
        return "maven:3.9-eclipse-temurin-17";
    case Language::C:
    case Language::Cpp:
        return "gcc:13";
    case Language::Other:
        break;
    }
    return "ubuntu:22.04";
}

constexpr std::string_view kBuildHintName = ".povgen-build.sh";

} // namespace

std::string_view to_string(Cwe cwe)
{
    for (const auto& row : kCweTable) {
        if (row.cwe == cwe) {
            return row.id;
        }
    }
    return "CWE-?";
}

std::string_view cwe_title(Cwe cwe)
{
    for (const auto& row : kCweTable) {
        if (row.cwe == cwe) {
            return row.title;
        }
    }
    return "";
}

std::optional<Cwe> parse_cwe(std::string_view id)
{
    std::string s = lower(id);
    if (s.rfind("cwe-", 0) != 0) {
        s = "cwe-" + s;
    }
    for (const auto& row : kCweTable) {
        if (lower(row.id) == s) {
            return row.cwe;
        }
    }
    return std::nullopt;
}

std::string_view to_string(Language lang)
{
    switch (lang) {
    case Language::Java:
        return "java";
    case Language::C:
        return "c";
    case Language::Cpp:
        return "cpp";
    case Language::Other:
        break;
    }
    return "other";
}

std::optional<Language> parse_language(std::string_view s)
{
    auto l = lower(s);
    if (l == "java") {
        return Language::Java;
    }
    if (l == "c") {
        return Language::C;
    }
    if (l == "cpp" || l == "c++") {
        return Language::Cpp;
    }
    if (l == "other") {
        return Language::Other;
    }
    return std::nullopt;
}

std::chrono::seconds parse_duration(std::string_view text)
{
    std::string s;
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c)) == 0) {
            s.push_back(c);
        }
    }
    if (s.empty()) {
        throw ParseError("empty duration");
    }
    if (std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isdigit(c) != 0 || c == '.'; })) {
        return std::chrono::seconds(static_cast<long long>(std::stod(s) * 60.0));
    }
    double total = 0;
    std::size_t i = 0;
    while (i < s.size()) {
        std::size_t j = i;
        while (j < s.size() && (std::isdigit(static_cast<unsigned char>(s[j])) != 0 || s[j] == '.')) {
            ++j;
        }
        if (j == i || j == s.size()) {
            throw ParseError("bad duration '" + std::string(text) + "'");
        }
        double v = std::stod(s.substr(i, j - i));
        switch (std::tolower(static_cast<unsigned char>(s[j]))) {
        case 'h':
            total += v * 3600;
            break;
        case 'm':
            total += v * 60;
            break;
        case 's':
            total += v;
            break;
        default:
            throw ParseError("bad duration unit in '" + std::string(text) + "'");
        }
        i = j + 1;
    }
    return std::chrono::seconds(static_cast<long long>(total));
}

void validate(const VulnerabilityTask& t)
{
    if (!valid_id(t.id)) {
        throw ValidationError("field 'id' must be non-empty and use only [A-Za-z0-9._-]");
    }
    if (t.repo_path.empty()) {
        throw ValidationError("field 'repo_path' is empty");
    }
    if (t.vulnerable_commit.empty()) {
        throw ValidationError("field 'vulnerable_commit' is empty");
    }
    if (t.fix_functions.empty()) {
        throw ValidationError("field 'fix_functions' must be non-empty");
    }
    for (const auto& f : t.fix_functions) {
        if (f.empty() || f.find_first_of(" \t\r\n") != std::string::npos) {
            throw ValidationError("field 'fix_functions' contains an empty or whitespace-bearing name");
        }
    }
    if (!(t.budget_usd > 0)) {
        throw ValidationError("field 'budget_usd' must be > 0");
    }
    if (t.time_budget.count() <= 0) {
        throw ValidationError("field 'time_budget' must be > 0");
    }
}

std::vector<VulnerabilityTask> parse_manifest(std::string_view text, const fs::path& base_dir)
{
    if (std::all_of(text.begin(), text.end(), [](unsigned char c) { return std::isspace(c) != 0; })) {
        return {};
    }
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ParseError(std::string("manifest: ") + e.what());
    }
    if (!doc.is_object()) {
        throw ParseError("manifest: top level must be an object with 'schema' and 'tasks'");
    }
    if (!doc.contains("schema") || !doc["schema"].is_number_integer()) {
        throw ParseError("manifest: missing integer 'schema' field");
    }
    if (doc["schema"].get<int>() != 1) {
        throw ParseError("manifest: unsupported schema " + doc["schema"].dump());
    }
    if (!doc.contains("tasks") || !doc["tasks"].is_array()) {
        throw ParseError("manifest: 'tasks' must be a list");
    }

    std::vector<VulnerabilityTask> tasks;
    std::set<std::string, std::less<>> seen;
    std::size_t index = 0;
    for (const auto& entry : doc["tasks"]) {
        auto t = task_from_json(entry, index++, base_dir);
        if (!seen.insert(t.id).second) {
            throw ValidationError("duplicate task id '" + t.id + "'");
        }
        tasks.push_back(std::move(t));
    }
    return tasks;
}

std::vector<VulnerabilityTask> load_manifest(const fs::path& path)
{
    if (!fs::exists(path)) {
        throw IoError("manifest not found: " + path.string());
    }
    return parse_manifest(read_text(path), fs::absolute(path).parent_path());
}

std::string serialize_manifest(const std::vector<VulnerabilityTask>& tasks)
{
    json list = json::array();
    for (const auto& t : tasks) {
        json o;
        o["id"] = t.id;
        o["cwe"] = std::string(to_string(t.cwe));
        o["report_text"] = t.report_text;
        o["repo_path"] = t.repo_path.string();
        o["vulnerable_commit"] = t.vulnerable_commit;
        if (t.fixed_commit) {
            o["fixed_commit"] = *t.fixed_commit;
        }
        o["fix_functions"] = t.fix_functions;
        o["language"] = std::string(to_string(t.language));
        if (t.build_hint) {
            o["build_hint"] = t.build_hint->string();
        }
        o["budget_usd"] = t.budget_usd;
        o["time_budget"] = std::to_string(t.time_budget.count()) + "s";
        list.push_back(std::move(o));
    }
    json doc;
    doc["schema"] = 1;
    doc["tasks"] = std::move(list);
    return doc.dump(2) + "\n";
}

std::string scaffold_dockerfile(const VulnerabilityTask& task)
{
    std::string d;
    d += "FROM " + base_image(task.language) + "\n";
    d += "COPY . /project\n";
    d += "WORKDIR /project\n";
    if (task.build_hint) {
        d += "RUN sh ./" + std::string(kBuildHintName) + "\n";
    }
    d += std::string(kProtectedMarker) + "\n";
    d += "# Add any further build steps below. The proof-of-vulnerability test must be\n";
    d += "# started by the CMD instruction, e.g. CMD [\"sh\", \"run_test.sh\"]\n";
    return d;
}

Workspace open_workspace(const fs::path& root, const std::string& scaffold_prefix)
{
    Workspace ws;
    ws.root = fs::absolute(root);
    ws.dockerfile_path = ws.root / kDockerfileName;
    ws.scaffold_prefix = scaffold_prefix;
    ws.immutable_prefix_len = static_cast<std::size_t>(std::count(scaffold_prefix.begin(), scaffold_prefix.end(), '\n'));
    return ws;
}

Workspace prepare_workspace(const VulnerabilityTask& task, const fs::path& out_dir)
{
    validate(task);
    if (!fs::exists(task.repo_path)) {
        throw CheckoutError("repository not found: " + task.repo_path.string());
    }
    std::error_code ec;
    if (fs::exists(out_dir) && !fs::is_empty(out_dir, ec)) {
        throw IoError("workspace directory is not empty: " + out_dir.string());
    }
    fs::create_directories(out_dir);
    fs::path root = fs::canonical(out_dir);

    auto git = [&](std::vector<std::string> args) {
        std::vector<std::string> argv{"git", "-C", task.repo_path.string()};
        argv.insert(argv.end(), args.begin(), args.end());
        return run_process({.argv = argv, .timeout = std::chrono::minutes(10)});
    };

    auto rev = git({"rev-parse", "--verify", "--quiet", task.vulnerable_commit + "^{commit}"});
    if (rev.exit_code != 0) {
        throw CheckoutError("commit '" + task.vulnerable_commit + "' not found in " + task.repo_path.string());
    }
    std::string sha = rev.out.substr(0, rev.out.find_first_of("\r\n"));

    TempDir scratch("povgen-archive");
    auto tarball = scratch.path() / "tree.tar";
    auto archive = git({"archive", "--format=tar", "-o", tarball.string(), sha});
    if (archive.exit_code != 0) {
        throw CheckoutError("git archive failed: " + archive.err);
    }
    auto untar = run_process({.argv = {"tar", "-xf", tarball.string(), "-C", root.string()},
                              .timeout = std::chrono::minutes(10)});
    if (untar.exit_code != 0) {
        throw IoError("unpacking the tree failed: " + untar.err);
    }

    if (task.build_hint) {
        if (!fs::is_regular_file(*task.build_hint)) {
            throw IoError("build_hint not found: " + task.build_hint->string());
        }
        write_atomic(root / kBuildHintName, read_text(*task.build_hint));
    }

    std::string dockerfile = scaffold_dockerfile(task);
    auto marker_end = dockerfile.find(kProtectedMarker);
    std::string prefix = dockerfile.substr(0, dockerfile.find('\n', marker_end) + 1);
    write_atomic(root / kDockerfileName, dockerfile);
    return open_workspace(root, prefix);
}

} // namespace povgen
