#include "povgen/evaluation.hpp"

#include "povgen/error.hpp"
#include "povgen/fsutil.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <regex>
#include <sstream>

namespace povgen {

namespace fs = std::filesystem;

namespace {

struct CriteriaRow {
    Cwe cwe;
    std::string_view name;
    std::string_view requirement;
};

constexpr std::array<CriteriaRow, 4> kCriteria{{
    {Cwe::PathTraversal22, "a Path Traversal",
     "The test case must use a public API of the project to read from or write to at least one file outside the project "
     "directory."},
    {Cwe::CommandInjection78, "an OS Command Injection",
     "The test case must use a public API of the project to execute any shell command that is not intended by the "
     "application."},
    {Cwe::CrossSiteScripting79, "a Cross-Site Scripting",
     "The test case must call a public API of the project with an input that contains embedded scripting code, and show "
     "that this input is not sanitized properly."},
    {Cwe::CodeInjection94, "a Code Injection",
     "The test case must call a public API of the project with an input that contains embedded code, and this code must "
     "be executed."},
}};

constexpr std::array<std::string_view, 5> kCategoryNames{
    "BuildFailed", "RanButPassed", "FailedNoCoverage", "ReachedVulnerableFunction", "SuccessPendingManualReview"};

const std::set<std::string, std::less<>> kNonDeclKeywords{
    "return", "if",     "else",   "while", "for",   "do",       "switch",    "case",     "new",
    "throw",  "goto",   "sizeof", "typeof", "delete", "co_return", "co_yield", "assert", "yield",
    "catch",  "synchronized", "try", "finally", "default", "break", "continue", "await"};

constexpr std::size_t kMaxSignatureLines = 10;

bool ident_char(char c)
{
    return std::isalnum(static_cast<unsigned char>(c)) != 0 || c == '_' || c == '$';
}

std::string last_component(const std::string& name)
{
    auto cut = name.rfind("::");
    std::string tail = cut == std::string::npos ? name : name.substr(cut + 2);
    if (auto dot = tail.rfind('.'); dot != std::string::npos) {
        tail = tail.substr(dot + 1);
    }
    return tail;
}

// Same length as the input; comments, literals and (for C-family)
// preprocessor lines become spaces, newlines survive.
std::string mask_source(std::string_view text, Language lang)
{
    std::string m(text);
    const bool c_family = lang != Language::Java;
    std::size_t i = 0;
    const std::size_t n = text.size();
    bool line_start = true;
    auto blank = [&](std::size_t from, std::size_t to) {
        for (std::size_t k = from; k < to && k < n; ++k) {
            if (m[k] != '\n') {
                m[k] = ' ';
            }
        }
    };
    while (i < n) {
        char c = text[i];
        if (c == '\n') {
            line_start = true;
            ++i;
            continue;
        }
        if (line_start && (c == ' ' || c == '\t')) {
            ++i;
            continue;
        }
        if (line_start && c_family && c == '#') {
            std::size_t j = i;
            while (j < n) {
                auto nl = text.find('\n', j);
                if (nl == std::string_view::npos) {
                    j = n;
                    break;
                }
                std::size_t k = nl;
                while (k > j && (text[k - 1] == '\r')) {
                    --k;
                }
                if (k > j && text[k - 1] == '\\') {
                    j = nl + 1;
                    continue;
                }
                j = nl;
                break;
            }
            blank(i, j);
            i = j;
            continue;
        }
        line_start = false;
        if (c == '/' && i + 1 < n && text[i + 1] == '/') {
            auto nl = text.find('\n', i);
            std::size_t j = nl == std::string_view::npos ? n : nl;
            blank(i, j);
            i = j;
            continue;
        }
        if (c == '/' && i + 1 < n && text[i + 1] == '*') {
            auto end = text.find("*/", i + 2);
            std::size_t j = end == std::string_view::npos ? n : end + 2;
            blank(i, j);
            i = j;
            continue;
        }
        if (lang == Language::Java && text.substr(i, 3) == "\"\"\"") {
            auto end = text.find("\"\"\"", i + 3);
            std::size_t j = end == std::string_view::npos ? n : end + 3;
            blank(i, j);
            i = j;
            continue;
        }
        if (c == '"' || c == '\'') {
            std::size_t j = i + 1;
            while (j < n && text[j] != c && text[j] != '\n') {
                j += text[j] == '\\' ? 2 : 1;
            }
            j = std::min(n, j + 1);
            blank(i, j);
            i = j;
            continue;
        }
        ++i;
    }
    return m;
}

std::size_t line_of(std::string_view text, std::size_t offset)
{
    return static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(offset), '\n')) + 1;
}

std::size_t match_paren(std::string_view m, std::size_t open)
{
    int depth = 0;
    for (std::size_t k = open; k < m.size(); ++k) {
        if (m[k] == '(') {
            ++depth;
        } else if (m[k] == ')') {
            if (--depth == 0) {
                return k;
            }
        }
    }
    return std::string_view::npos;
}

std::size_t skip_ws(std::string_view m, std::size_t k)
{
    while (k < m.size() && std::isspace(static_cast<unsigned char>(m[k])) != 0) {
        ++k;
    }
    return k;
}

bool prefix_is_declaration(std::string prefix, Language lang)
{
    static const std::regex annotation(R"(@[A-Za-z_$][\w$.]*\s*(\([^()]*\))?)");
    if (lang == Language::Java) {
        prefix = std::regex_replace(prefix, annotation, " ");
    }
    for (char c : prefix) {
        if (ident_char(c) || std::isspace(static_cast<unsigned char>(c)) != 0) {
            continue;
        }
        if (std::string_view("*&<>,[]~").find(c) != std::string_view::npos) {
            continue;
        }
        if (c == ':' && lang != Language::Java) {
            continue;
        }
        return false;
    }
    std::string word;
    auto flush = [&] {
        bool bad = kNonDeclKeywords.contains(word);
        word.clear();
        return bad;
    };
    for (char c : prefix) {
        if (ident_char(c)) {
            word.push_back(c);
        } else if (!word.empty() && flush()) {
            return false;
        }
    }
    return word.empty() || !flush();
}

struct Site {
    std::size_t offset = 0;     // where the statement goes
    bool inline_insert = false;
    std::size_t line = 0;       // 1-based line of the inserted statement
    std::string indent;
};

std::vector<Site> definition_sites(std::string_view text, std::string_view masked, const std::string& name, Language lang)
{
    std::vector<Site> sites;
    const std::string bare = last_component(name);
    if (bare.empty()) {
        return sites;
    }
    std::size_t pos = 0;
    while ((pos = masked.find(bare, pos)) != std::string_view::npos) {
        const std::size_t p = pos;
        pos += bare.size();
        if ((p > 0 && ident_char(masked[p - 1])) || (pos < masked.size() && ident_char(masked[pos]))) {
            continue;
        }
        std::size_t open = skip_ws(masked, pos);
        if (open >= masked.size() || masked[open] != '(') {
            continue;
        }
        std::size_t k = p;
        while (k > 0 && std::isspace(static_cast<unsigned char>(masked[k - 1])) != 0) {
            --k;
        }
        if (k > 0 && (masked[k - 1] == '.' || (masked[k - 1] == '>' && k > 1 && masked[k - 2] == '-'))) {
            continue;
        }
        auto stmt = masked.find_last_of(";{})", p == 0 ? 0 : p - 1);
        std::size_t s = (stmt == std::string_view::npos || p == 0) ? 0 : stmt + 1;
        if (!prefix_is_declaration(std::string(masked.substr(s, p - s)), lang)) {
            continue;
        }
        std::size_t close = match_paren(masked, open);
        if (close == std::string_view::npos) {
            continue;
        }
        std::size_t brace = std::string_view::npos;
        for (std::size_t t = close + 1; t < masked.size(); ++t) {
            char c = masked[t];
            if (c == '{') {
                brace = t;
                break;
            }
            if (c == ';' || c == '}' || (c == '=' && (t + 1 >= masked.size() || masked[t + 1] != '='))) {
                break;
            }
        }
        if (brace == std::string_view::npos || line_of(masked, brace) - line_of(masked, p) > kMaxSignatureLines) {
            continue;
        }
        std::size_t after = brace + 1;
        if (lang == Language::Java) {
            std::size_t first = skip_ws(masked, after);
            for (std::string_view kw : {"super", "this"}) {
                if (masked.substr(first, kw.size()) == kw) {
                    std::size_t lp = skip_ws(masked, first + kw.size());
                    if (lp < masked.size() && masked[lp] == '(') {
                        std::size_t rp = match_paren(masked, lp);
                        std::size_t semi = rp == std::string_view::npos ? rp : masked.find(';', rp);
                        if (semi != std::string_view::npos) {
                            after = semi + 1;
                        }
                    }
                }
            }
        }
        auto line_begin = masked.rfind('\n', brace);
        line_begin = line_begin == std::string_view::npos ? 0 : line_begin + 1;
        std::string indent;
        for (std::size_t q = line_begin; q < text.size() && (text[q] == ' ' || text[q] == '\t'); ++q) {
            indent.push_back(text[q]);
        }
        auto eol = masked.find('\n', after);
        std::string_view rest = masked.substr(after, eol == std::string_view::npos ? std::string_view::npos : eol - after);
        Site site;
        if (eol != std::string_view::npos && rest.find_first_not_of(" \t\r") == std::string_view::npos) {
            site.offset = eol + 1;
            site.line = line_of(text, eol + 1);
            site.indent = indent + "    ";
        } else {
            site.offset = after;
            site.inline_insert = true;
            site.line = line_of(text, after);
        }
        sites.push_back(site);
    }
    return sites;
}

std::string escape_literal(const std::string& s)
{
    std::string out;
    for (char c : s) {
        if (c == '"' || c == '\\') {
            out.push_back('\\');
        }
        out.push_back(c);
    }
    return out;
}

std::string trace_statement(const std::string& name, Language lang)
{
    std::string lit = escape_literal(name);
    if (lang == Language::Java) {
        return "System.err.println(\"" + std::string(kTracePrefix) + lit + "\"); /* " + std::string(kInstrumentMarker) + " */";
    }
    return "fprintf(stderr, \"" + std::string(kTracePrefix) + "%s\\n\", \"" + lit + "\"); /* " +
           std::string(kInstrumentMarker) + " */";
}

std::string include_line()
{
    return "#include <stdio.h> /* " + std::string(kInstrumentMarker) + " */\n";
}

void collect_sources(const fs::path& root, Language lang, const std::set<std::string>* only_files, std::vector<fs::path>& out)
{
    for (auto it = fs::recursive_directory_iterator(root, fs::directory_options::skip_permission_denied);
         it != fs::recursive_directory_iterator(); ++it) {
        std::error_code ec;
        if (it->is_directory(ec) && it->path().filename() == ".git") {
            it.disable_recursion_pending();
            continue;
        }
        if (it->is_symlink(ec) || !it->is_regular_file(ec) || !is_source_file(it->path(), lang)) {
            continue;
        }
        auto rel = it->path().lexically_relative(root);
        if (only_files != nullptr && !only_files->contains(rel.generic_string())) {
            continue;
        }
        out.push_back(rel);
    }
    std::sort(out.begin(), out.end());
}

} // namespace

CweCriteria cwe_criteria(Cwe cwe)
{
    for (const auto& row : kCriteria) {
        if (row.cwe == cwe) {
            std::string fragment = "This is " + std::string(row.name) + " vulnerability (" + std::string(to_string(cwe)) +
                                   "). " + std::string(row.requirement);
            return {cwe, std::string(row.requirement), std::move(fragment)};
        }
    }
    throw ValidationError("no success criteria for " + std::string(to_string(cwe)));
}

CweCriteria cwe_criteria(std::string_view cwe_id)
{
    auto cwe = parse_cwe(cwe_id);
    if (!cwe) {
        throw ValidationError("unsupported CWE '" + std::string(cwe_id) + "'");
    }
    return cwe_criteria(*cwe);
}

bool is_source_file(const fs::path& p, Language lang)
{
    static const std::set<std::string, std::less<>> java{".java"};
    static const std::set<std::string, std::less<>> c{".c", ".h"};
    static const std::set<std::string, std::less<>> cpp{".cc", ".cpp", ".cxx", ".c++", ".hpp", ".hh", ".hxx", ".h", ".ipp", ".c"};
    std::string ext = p.extension().string();
    switch (lang) {
    case Language::Java: return java.contains(ext);
    case Language::C: return c.contains(ext);
    case Language::Cpp: return cpp.contains(ext);
    case Language::Other: return java.contains(ext) || cpp.contains(ext);
    }
    return false;
}

std::vector<InstrumentationTarget> find_definitions(std::string_view text, const std::string& function_name, Language lang)
{
    std::string masked = mask_source(text, lang);
    std::vector<InstrumentationTarget> out;
    for (const auto& s : definition_sites(text, masked, function_name, lang)) {
        out.push_back({{}, function_name, s.line, s.inline_insert});
    }
    return out;
}

InstrumentationPlan plan_instrumentation(const fs::path& root, const std::vector<std::string>& fix_functions, Language lang,
                                         const std::set<std::string>* only_files)
{
    InstrumentationPlan plan;
    std::vector<fs::path> files;
    collect_sources(root, lang, only_files, files);
    std::set<std::string> located;
    for (const auto& rel : files) {
        std::string text = read_text(root / rel);
        for (const auto& fn : fix_functions) {
            Language file_lang = lang;
            if (lang == Language::Other) {
                file_lang = rel.extension() == ".java" ? Language::Java : Language::Cpp;
            }
            for (auto t : find_definitions(text, fn, file_lang)) {
                t.file = rel;
                plan.targets.push_back(std::move(t));
                located.insert(fn);
            }
        }
    }
    for (const auto& fn : fix_functions) {
        if (!located.contains(fn)) {
            plan.missing.push_back(fn);
            plan.warnings.push_back("no definition found for fix function '" + fn + "'");
        }
    }
    if (plan.targets.empty()) {
        throw NoTargetsFound("none of the fix functions could be located in the workspace");
    }
    return plan;
}

std::string instrument_source(std::string_view text, const std::set<std::string>& functions, Language lang)
{
    std::string masked = mask_source(text, lang);
    std::vector<std::pair<Site, std::string>> todo;
    for (const auto& fn : functions) {
        const std::string stmt = trace_statement(fn, lang);
        for (const auto& site : definition_sites(text, masked, fn, lang)) {
            std::size_t k = skip_ws(text, site.offset);
            if (text.substr(k, stmt.size()) == stmt) {
                continue;
            }
            todo.emplace_back(site, stmt);
        }
    }
    if (todo.empty()) {
        return std::string(text);
    }
    std::sort(todo.begin(), todo.end(), [](const auto& a, const auto& b) { return a.first.offset > b.first.offset; });
    std::string out(text);
    for (const auto& [site, stmt] : todo) {
        if (site.inline_insert) {
            out.insert(site.offset, " " + stmt + " ");
        } else {
            out.insert(site.offset, site.indent + stmt + "\n");
        }
    }
    if (lang != Language::Java && out.find(include_line()) == std::string::npos) {
        std::size_t first_site = todo.back().first.offset;
        std::size_t at = 0;
        static const std::regex include_re(R"([ \t]*#[ \t]*include\b[^\n]*\n)");
        std::string head(text.substr(0, first_site));
        for (auto it = std::sregex_iterator(head.begin(), head.end(), include_re, std::regex_constants::match_default);
             it != std::sregex_iterator(); ++it) {
            std::size_t start = static_cast<std::size_t>(it->position(0));
            if (start == 0 || head[start - 1] == '\n') {
                at = start + static_cast<std::size_t>(it->length(0));
            }
        }
        out.insert(at, include_line());
    }
    return out;
}

InstrumentationBackup apply_instrumentation(const fs::path& root, const InstrumentationPlan& plan, Language lang,
                                            const fs::path& backup_dir)
{
    InstrumentationBackup backup{backup_dir, {}};
    std::map<fs::path, std::set<std::string>> per_file;
    for (const auto& t : plan.targets) {
        per_file[t.file].insert(t.function_name);
    }
    try {
        for (const auto& [rel, fns] : per_file) {
            Language file_lang = lang;
            if (lang == Language::Other) {
                file_lang = rel.extension() == ".java" ? Language::Java : Language::Cpp;
            }
            std::string before = read_text(root / rel);
            std::string after = instrument_source(before, fns, file_lang);
            if (after == before) {
                continue;
            }
            fs::create_directories((backup_dir / rel).parent_path());
            write_atomic(backup_dir / rel, before);
            backup.files.push_back(rel);
            write_atomic(root / rel, after);
        }
    } catch (const fs::filesystem_error& e) {
        restore_instrumentation(root, backup);
        throw IoError(std::string("instrumentation failed: ") + e.what());
    }
    return backup;
}

void restore_instrumentation(const fs::path& root, const InstrumentationBackup& backup)
{
    for (const auto& rel : backup.files) {
        write_atomic(root / rel, read_text(backup.backup_dir / rel));
    }
}

std::set<std::string> scan_trace_lines(std::string_view logs, const std::vector<std::string>& fix_functions)
{
    std::set<std::string, std::less<>> wanted(fix_functions.begin(), fix_functions.end());
    std::set<std::string> hit;
    std::size_t pos = 0;
    while ((pos = logs.find(kTracePrefix, pos)) != std::string_view::npos) {
        std::size_t b = pos + kTracePrefix.size();
        std::size_t e = b;
        while (e < logs.size() && std::isspace(static_cast<unsigned char>(logs[e])) == 0) {
            ++e;
        }
        if (auto it = wanted.find(logs.substr(b, e - b)); it != wanted.end()) {
            hit.insert(*it);
        }
        pos = e;
    }
    return hit;
}

std::string_view to_string(VerdictCategory c)
{
    return kCategoryNames[static_cast<std::size_t>(c)];
}

std::optional<VerdictCategory> parse_verdict_category(std::string_view s)
{
    for (std::size_t i = 0; i < kCategoryNames.size(); ++i) {
        if (kCategoryNames[i] == s) {
            return static_cast<VerdictCategory>(i);
        }
    }
    return std::nullopt;
}

VerdictCategory classify(bool build_ok, std::optional<bool> exit_nonzero, bool coverage_hit)
{
    if (!build_ok) {
        return VerdictCategory::BuildFailed;
    }
    if (exit_nonzero != true) {
        return VerdictCategory::RanButPassed;
    }
    if (!coverage_hit) {
        return VerdictCategory::FailedNoCoverage;
    }
    return VerdictCategory::ReachedVulnerableFunction;
}

VerdictCategory reported_status(VerdictCategory c)
{
    return c == VerdictCategory::ReachedVulnerableFunction ? VerdictCategory::SuccessPendingManualReview : c;
}

std::vector<std::string> manual_checklist(Cwe cwe)
{
    auto crit = cwe_criteria(cwe);
    return {
        std::string(to_string(cwe)) + " success criterion: " + crit.success_text,
        "The test drives the project's own code; it does not inspect source text for the flaw.",
        "The test does not re-create the vulnerable behaviour in separate code.",
        "The test is expected to pass once the vulnerability is fixed.",
    };
}

Verdict evaluate(const VulnerabilityTask& task, const SandboxRoot& sb, const EvaluationOptions& opts, BuildRunReport* report_out)
{
    Verdict v;
    const fs::path root = sb.root();
    std::optional<InstrumentationPlan> plan;
    try {
        plan = plan_instrumentation(root, task.fix_functions, task.language, opts.project_files);
        v.warnings = plan->warnings;
    } catch (const NoTargetsFound& e) {
        v.coverage_known = false;
        v.warnings.emplace_back(std::string(e.what()) + "; coverage is unknown");
    }

    InstrumentationBackup backup{opts.backup_dir, {}};
    if (plan) {
        if (opts.backup_dir.empty()) {
            throw ConfigError("evaluation needs a backup directory");
        }
        std::error_code ec;
        fs::remove_all(opts.backup_dir, ec);
        fs::create_directories(opts.backup_dir);
        backup = apply_instrumentation(root, *plan, task.language, opts.backup_dir);
    }
    BuildRunReport report;
    try {
        report = sb.run_container(opts.image_tag, opts.time_limit);
    } catch (...) {
        restore_instrumentation(root, backup);
        throw;
    }
    restore_instrumentation(root, backup);

    v.build_ok = report.build_ok;
    if (report.ran && !report.timed_out && report.exit_code) {
        v.exit_nonzero = *report.exit_code != 0;
    }
    if (report.ran && report.timed_out) {
        v.warnings.emplace_back("the test run hit the time limit");
    }
    v.covered_functions = scan_trace_lines(report.build_log_tail + "\n" + report.run_log_tail, task.fix_functions);
    v.coverage_hit = !v.covered_functions.empty();
    v.category = classify(v.build_ok, v.exit_nonzero, v.coverage_hit);
    v.checklist = manual_checklist(task.cwe);
    if (report_out != nullptr) {
        *report_out = std::move(report);
    }
    return v;
}

} // namespace povgen
