#include "povgen/structured.hpp"

#include "povgen/error.hpp"

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <sstream>

namespace povgen {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

namespace {

std::string lower(std::string_view s)
{
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::string_view trim(std::string_view s)
{
    auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
    while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) {
        s.remove_prefix(1);
    }
    while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) {
        s.remove_suffix(1);
    }
    return s;
}

std::vector<std::string_view> split_lines(std::string_view text)
{
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < text.size()) {
                lines.push_back(text.substr(start));
            }
            break;
        }
        auto line = text.substr(start, nl - start);
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        lines.push_back(line);
        start = nl + 1;
    }
    return lines;
}

// JSON string literal with '<' escaped as \u003c.
std::string json_string(std::string_view s)
{
    std::string out = json(std::string(s)).dump(-1, ' ', false, json::error_handler_t::replace);
    std::string escaped;
    escaped.reserve(out.size());
    for (char c : out) {
        if (c == '<') {
            escaped += "\\u003c";
        } else {
            escaped += c;
        }
    }
    return escaped;
}

std::string render_record(const std::vector<std::pair<std::string_view, std::string_view>>& fields)
{
    std::string out = "{";
    bool first = true;
    for (const auto& [k, v] : fields) {
        if (!first) {
            out += ", ";
        }
        first = false;
        out += json_string(k);
        out += ": ";
        out += json_string(v);
    }
    out += "}";
    return out;
}

// Top-level {...} spans in a block, honouring JSON string quoting. Anything
// between records (commas, "...", prose) is ignored.
std::vector<std::string_view> split_records(std::string_view block)
{
    std::vector<std::string_view> records;
    std::size_t depth = 0;
    std::size_t start = 0;
    bool in_string = false;
    bool escape = false;
    for (std::size_t i = 0; i < block.size(); ++i) {
        char c = block[i];
        if (depth == 0) {
            if (c == '{') {
                depth = 1;
                start = i;
            }
            continue;
        }
        if (in_string) {
            if (escape) {
                escape = false;
            } else if (c == '\\') {
                escape = true;
            } else if (c == '"') {
                in_string = false;
            }
            continue;
        }
        if (c == '"') {
            in_string = true;
        } else if (c == '{') {
            ++depth;
        } else if (c == '}') {
            if (--depth == 0) {
                records.push_back(block.substr(start, i - start + 1));
            }
        }
    }
    if (depth != 0) {
        throw MalformedRecord("record #" + std::to_string(records.size()) + ": unterminated '{'");
    }
    return records;
}

using FieldMap = std::map<std::string, std::string>;

// Keys are matched case-insensitively; unknown keys are kept but ignored by
// callers. Null values count as absent.
FieldMap parse_record(std::string_view text, std::size_t index)
{
    json obj;
    try {
        obj = json::parse(text);
    } catch (const json::exception& e) {
        throw MalformedRecord("record #" + std::to_string(index) + ": not valid JSON (" + e.what() + ")");
    }
    if (!obj.is_object()) {
        throw MalformedRecord("record #" + std::to_string(index) + ": not an object");
    }
    FieldMap fields;
    for (const auto& [key, value] : obj.items()) {
        if (value.is_null()) {
            continue;
        }
        std::string k = lower(key);
        if (value.is_string()) {
            fields[k] = value.get<std::string>();
        } else if (value.is_number() || value.is_boolean()) {
            fields[k] = value.dump();
        } else {
            fields[k + "\x01"] = ""; // structured value; flagged if the field is consumed
        }
    }
    return fields;
}

const std::string& require_field(const FieldMap& f, std::size_t index, const std::string& key)
{
    if (f.contains(key + "\x01")) {
        throw MalformedRecord("record #" + std::to_string(index) + ": field '" + key + "' must be a string");
    }
    auto it = f.find(key);
    if (it == f.end()) {
        throw MalformedRecord("record #" + std::to_string(index) + ": missing field '" + key + "'");
    }
    return it->second;
}

std::optional<std::string> optional_field(const FieldMap& f, const std::string& key)
{
    auto it = f.find(key);
    if (it == f.end()) {
        return std::nullopt;
    }
    return it->second;
}

std::string require_block(std::string_view text, std::string_view tag)
{
    auto block = extract_tagged_block(text, tag);
    if (!block) {
        throw MissingTag("no <" + std::string(tag) + "> block found");
    }
    return *block;
}

std::string alnum_lower(std::string_view s)
{
    std::string out;
    for (unsigned char c : s) {
        if (std::isalnum(c) != 0) {
            out.push_back(static_cast<char>(std::tolower(c)));
        }
    }
    return out;
}

bool is_ellipsis_line(std::string_view line)
{
    auto t = trim(line);
    return t == "..." || t == "\xE2\x80\xA6";
}

// "12. text" / "12) text" -> "text"
std::optional<std::string_view> numbered_item(std::string_view line)
{
    auto t = line;
    while (!t.empty() && (t.front() == ' ' || t.front() == '\t')) {
        t.remove_prefix(1);
    }
    std::size_t i = 0;
    while (i < t.size() && std::isdigit(static_cast<unsigned char>(t[i])) != 0) {
        ++i;
    }
    if (i == 0 || i > 4 || i >= t.size() || (t[i] != '.' && t[i] != ')')) {
        return std::nullopt;
    }
    auto rest = t.substr(i + 1);
    if (!rest.empty() && rest.front() != ' ' && rest.front() != '\t') {
        return std::nullopt; // "1.5" is not a list marker
    }
    return trim(rest);
}

} // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(FlowRole r)
{
    switch (r) {
    case FlowRole::Source:
        return "Source";
    case FlowRole::Intermediate:
        return "Intermediate";
    case FlowRole::Sink:
        return "Sink";
    }
    return "?";
}

void validate_flow(const Flow& flow)
{
    const auto& pts = flow.points;
    if (pts.size() < 2) {
        throw RoleOrderError("a flow needs at least a Source and a Sink");
    }
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (trim(pts[i].code).empty()) {
            throw MalformedRecord("record #" + std::to_string(i) + ": field 'code' is empty");
        }
        if (trim(pts[i].file).empty()) {
            throw MalformedRecord("record #" + std::to_string(i) + ": field 'file' is empty");
        }
    }
    if (pts.front().role != FlowRole::Source) {
        throw RoleOrderError("the first program point must be the Source");
    }
    if (pts.back().role != FlowRole::Sink) {
        throw RoleOrderError("the last program point must be the Sink");
    }
    for (std::size_t i = 1; i + 1 < pts.size(); ++i) {
        if (pts[i].role != FlowRole::Intermediate) {
            throw RoleOrderError("record #" + std::to_string(i) + ": only one Source and one Sink are allowed");
        }
    }
}

std::string to_string(const BranchType& t)
{
    switch (t.kind) {
    case BranchKind::IfElse:
        return "If-Else";
    case BranchKind::TryExcept:
        return "Try-Except";
    case BranchKind::Switch:
        return "Switch";
    case BranchKind::Other:
        break;
    }
    return t.other;
}

BranchType parse_branch_type(std::string_view label)
{
    auto key = alnum_lower(label);
    if (key == "ifelse" || key == "if" || key == "ifelseif" || key == "conditional" || key == "ternary") {
        return {BranchKind::IfElse, {}};
    }
    if (key == "tryexcept" || key == "trycatch" || key == "try" || key == "tryexceptfinally" || key == "trycatchfinally") {
        return {BranchKind::TryExcept, {}};
    }
    if (key == "switch" || key == "switchcase" || key == "case") {
        return {BranchKind::Switch, {}};
    }
    return {BranchKind::Other, std::string(trim(label))};
}

// ---------------------------------------------------------------------------

std::string_view to_string(ToolName t)
{
    switch (t) {
    case ToolName::ListDir:
        return "ListDir";
    case ToolName::Read:
        return "Read";
    case ToolName::Find:
        return "Find";
    case ToolName::Grep:
        return "Grep";
    case ToolName::Write:
        return "Write";
    case ToolName::Run:
        return "Run";
    }
    return "?";
}

std::optional<ToolName> parse_tool_name(std::string_view s)
{
    auto key = lower(trim(s));
    for (auto t : {ToolName::ListDir, ToolName::Read, ToolName::Find, ToolName::Grep, ToolName::Write, ToolName::Run}) {
        if (lower(to_string(t)) == key) {
            return t;
        }
    }
    return std::nullopt;
}

const std::vector<ToolSpec>& tool_specs()
{
    static const std::vector<ToolSpec> specs{
        {ToolName::ListDir, {"path"}, {}, "list the entries of a directory"},
        {ToolName::Read, {"path"}, {"start_line", "end_line"},
         "read a file, optionally only lines start_line..end_line (1-based, inclusive)"},
        {ToolName::Find, {"pattern"}, {},
         "find files whose path matches a glob pattern such as *.java or **/Parser.java"},
        {ToolName::Grep, {"pattern", "path"}, {},
         "list lines containing the exact string `pattern` (case-sensitive) in a file or below a directory"},
        {ToolName::Write, {"path", "content"}, {}, "create or replace a file with the given content"},
        {ToolName::Run, {}, {},
         "build the project with Dockerfile.vuln and run the container; returns the build and run output"},
    };
    return specs;
}

std::string tool_description(std::span<const ToolName> tools)
{
    std::ostringstream d;
    d << "You can use the following tools. To invoke a tool, write a block in exactly this format:\n"
         "<TOOL>\n"
         "ToolName\n"
         "key: value\n"
         "</TOOL>\n"
         "The first line inside the block is the tool name and every following line is a `key: value` argument.\n"
         "For a multi-line value (the `content` of Write), write `content: <<EOF`, then the raw lines, then a line\n"
         "containing only `EOF`. Any delimiter word works as long as the closing line repeats it exactly.\n"
         "You may invoke several tools in one reply; they run in order and their results arrive in the next message.\n"
         "Paths are relative to the project root; absolute paths must lie inside it.\n"
         "\n"
         "Available tools:\n";
    for (auto t : tools) {
        auto it = std::find_if(tool_specs().begin(), tool_specs().end(), [t](const ToolSpec& s) { return s.tool == t; });
        d << "- " << to_string(t) << " (";
        if (it->required.empty() && it->optional.empty()) {
            d << "no arguments";
        }
        for (std::size_t i = 0; i < it->required.size(); ++i) {
            d << (i ? ", " : "") << it->required[i];
        }
        if (!it->optional.empty()) {
            d << (it->required.empty() ? "" : "; ") << "optional ";
            for (std::size_t i = 0; i < it->optional.size(); ++i) {
                d << (i ? ", " : "") << it->optional[i];
            }
        }
        d << "): " << it->summary << ".\n";
    }
    d << "\nExample:\n<TOOL>\nGrep\npattern: parseExpression\npath: .\n</TOOL>";
    if (std::find(tools.begin(), tools.end(), ToolName::Write) != tools.end()) {
        d << "\n<TOOL>\nWrite\npath: tests/run_test.sh\ncontent: <<EOF\n#!/bin/sh\necho hello\nEOF\n</TOOL>";
    }
    return d.str();
}

// ---------------------------------------------------------------------------

std::string_view payload_tag(PayloadKind k)
{
    switch (k) {
    case PayloadKind::Flow:
        return "FLOW";
    case PayloadKind::BranchSequence:
        return "SEQUENCE";
    case PayloadKind::Conditions:
        return "CONDITIONS";
    }
    return "?";
}

std::string_view to_string(ActionKind k)
{
    switch (k) {
    case ActionKind::ToolCalls:
        return "ToolCalls";
    case ActionKind::Done:
        return "Done";
    case ActionKind::Payload:
        return "Payload";
    case ActionKind::Plain:
        return "Plain";
    }
    return "?";
}

std::optional<std::string> extract_tagged_block(std::string_view text, std::string_view tag)
{
    std::string open = "<" + std::string(tag) + ">";
    std::string close = "</" + std::string(tag) + ">";
    auto start = text.find(open);
    if (start == std::string_view::npos) {
        return std::nullopt;
    }
    auto body = start + open.size();
    auto end = text.find(close, body);
    if (end == std::string_view::npos) {
        throw UnbalancedTag(open + " without " + close);
    }
    return std::string(text.substr(body, end - body));
}

Flow parse_flow(std::string_view text)
{
    auto block = require_block(text, "FLOW");
    Flow flow;
    auto records = split_records(block);
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto f = parse_record(records[i], i);
        FlowPoint p;
        auto role = lower(trim(require_field(f, i, "role")));
        if (role == "source") {
            p.role = FlowRole::Source;
        } else if (role == "sink") {
            p.role = FlowRole::Sink;
        } else if (role == "intermediate" || role == "intermediate node" || role == "intermediate-node") {
            p.role = FlowRole::Intermediate;
        } else {
            throw MalformedRecord("record #" + std::to_string(i) + ": field 'role' has unknown value '" + role + "'");
        }
        p.code = require_field(f, i, "code");
        p.file = require_field(f, i, "file");
        p.variable = optional_field(f, "variable").value_or("");
        p.remarks = optional_field(f, "remarks");
        flow.points.push_back(std::move(p));
    }
    validate_flow(flow);
    return flow;
}

BranchSequence parse_branch_sequence(std::string_view text)
{
    auto block = require_block(text, "SEQUENCE");
    BranchSequence seq;
    auto records = split_records(block);
    for (std::size_t i = 0; i < records.size(); ++i) {
        auto f = parse_record(records[i], i);
        BranchPoint b;
        b.type = parse_branch_type(require_field(f, i, "type"));
        b.code = require_field(f, i, "code");
        b.file = optional_field(f, "file").value_or("");
        b.outcome = require_field(f, i, "outcome");
        if (trim(b.code).empty()) {
            throw MalformedRecord("record #" + std::to_string(i) + ": field 'code' is empty");
        }
        if (trim(b.outcome).empty()) {
            throw MalformedRecord("record #" + std::to_string(i) + ": field 'outcome' is empty");
        }
        seq.push_back(std::move(b));
    }
    return seq;
}

ConditionList parse_conditions(std::string_view text)
{
    std::optional<std::string> block;
    try {
        block = extract_tagged_block(text, "CONDITIONS");
    } catch (const UnbalancedTag&) {
        // Models sometimes close the list with a second opening tag.
        auto first = text.find("<CONDITIONS>");
        auto second = text.find("<CONDITIONS>", first + 1);
        if (second == std::string_view::npos) {
            throw;
        }
        block = std::string(text.substr(first + 12, second - first - 12));
    }
    if (!block) {
        throw MissingTag("no <CONDITIONS> block found");
    }

    auto lines = split_lines(*block);
    bool numbered = std::any_of(lines.begin(), lines.end(), [](std::string_view l) { return numbered_item(l).has_value(); });

    ConditionList list;
    if (numbered) {
        std::optional<std::string> cur;
        for (auto line : lines) {
            if (auto item = numbered_item(line)) {
                if (cur) {
                    list.conditions.push_back(std::string(trim(*cur)));
                }
                cur = std::string(*item);
            } else if (cur && !trim(line).empty() && !is_ellipsis_line(line)) {
                *cur += "\n";
                *cur += trim(line);
            }
        }
        if (cur) {
            list.conditions.push_back(std::string(trim(*cur)));
        }
    } else {
        for (auto line : lines) {
            if (!trim(line).empty() && !is_ellipsis_line(line)) {
                list.conditions.emplace_back(trim(line));
            }
        }
    }
    std::erase_if(list.conditions, [](const std::string& c) { return trim(c).empty(); });
    if (list.conditions.empty()) {
        throw EmptyList("the <CONDITIONS> block lists no conditions");
    }
    return list;
}

std::vector<ToolCall> parse_tool_calls(std::string_view text)
{
    static constexpr std::string_view kOpen = "<TOOL>";
    static constexpr std::string_view kClose = "</TOOL>";
    std::vector<ToolCall> calls;
    std::size_t pos = 0;
    while ((pos = text.find(kOpen, pos)) != std::string_view::npos) {
        const std::size_t index = calls.size();
        auto fail = [&](const std::string& why) -> void {
            throw MalformedToolCall("tool call #" + std::to_string(index) + ": " + why);
        };
        std::size_t cursor = pos + kOpen.size();
        auto next_line = [&]() -> std::optional<std::string_view> {
            if (cursor > text.size()) {
                return std::nullopt;
            }
            auto nl = text.find('\n', cursor);
            std::string_view line = nl == std::string_view::npos ? text.substr(cursor) : text.substr(cursor, nl - cursor);
            cursor = nl == std::string_view::npos ? text.size() + 1 : nl + 1;
            if (!line.empty() && line.back() == '\r') {
                line.remove_suffix(1);
            }
            return line;
        };

        ToolCall call;
        bool have_name = false;
        bool closed = false;
        while (auto maybe = next_line()) {
            std::string_view line = *maybe;
            bool close_here = false;
            if (auto c = line.find(kClose); c != std::string_view::npos) {
                line = line.substr(0, c);
                close_here = true;
            }
            auto t = trim(line);
            if (!t.empty()) {
                if (!have_name) {
                    auto name = parse_tool_name(t);
                    if (!name) {
                        fail("unknown tool '" + std::string(t.substr(0, 40)) + "'");
                    }
                    call.tool = *name;
                    have_name = true;
                } else {
                    auto colon = t.find(':');
                    if (colon == std::string_view::npos || colon == 0) {
                        fail("expected 'key: value', got '" + std::string(t.substr(0, 60)) + "'");
                    }
                    std::string key = lower(trim(t.substr(0, colon)));
                    if (!std::all_of(key.begin(), key.end(), [](unsigned char c) { return std::isalnum(c) != 0 || c == '_'; })) {
                        fail("bad argument name '" + key + "'");
                    }
                    std::string value(trim(t.substr(colon + 1)));
                    if (value.rfind("<<", 0) == 0 && !close_here) {
                        std::string delim(trim(std::string_view(value).substr(2)));
                        if (delim.empty() || delim.find_first_of(" \t") != std::string::npos) {
                            fail("bad here-document delimiter for '" + key + "'");
                        }
                        std::string content;
                        bool terminated = false;
                        while (auto body = next_line()) {
                            if (*body == delim) {
                                terminated = true;
                                break;
                            }
                            content.append(*body);
                            content.push_back('\n');
                        }
                        if (!terminated) {
                            fail("here-document for '" + key + "' is missing its closing '" + delim + "' line");
                        }
                        value = std::move(content);
                    }
                    if (!call.args.emplace(key, std::move(value)).second) {
                        fail("argument '" + key + "' given twice");
                    }
                }
            }
            if (close_here) {
                closed = true;
                break;
            }
        }
        if (!closed) {
            fail("<TOOL> without </TOOL>");
        }
        if (!have_name) {
            fail("missing tool name");
        }
        const auto& spec = *std::find_if(tool_specs().begin(), tool_specs().end(),
                                         [&](const ToolSpec& s) { return s.tool == call.tool; });
        for (auto req : spec.required) {
            if (!call.args.contains(std::string(req))) {
                fail(std::string(to_string(call.tool)) + " requires argument '" + std::string(req) + "'");
            }
        }
        for (const auto& [k, _] : call.args) {
            bool known = std::find(spec.required.begin(), spec.required.end(), k) != spec.required.end() ||
                         std::find(spec.optional.begin(), spec.optional.end(), k) != spec.optional.end();
            if (!known) {
                fail(std::string(to_string(call.tool)) + " does not take argument '" + k + "'");
            }
        }
        calls.push_back(std::move(call));
        pos = std::min(cursor, text.size());
    }
    return calls;
}

AgentAction parse_agent_action(std::string_view text, std::optional<PayloadKind> expected)
{
    AgentAction action;
    action.text = std::string(text);
    auto calls = parse_tool_calls(text);
    if (!calls.empty()) {
        action.kind = ActionKind::ToolCalls;
        action.calls = std::move(calls);
        return action;
    }
    if (expected) {
        std::string open = "<" + std::string(payload_tag(*expected)) + ">";
        if (text.find(open) != std::string_view::npos) {
            action.kind = ActionKind::Payload;
            switch (*expected) {
            case PayloadKind::Flow:
                action.payload = parse_flow(text);
                break;
            case PayloadKind::BranchSequence:
                action.payload = parse_branch_sequence(text);
                break;
            case PayloadKind::Conditions:
                action.payload = parse_conditions(text);
                break;
            }
            return action;
        }
    }
    if (text.find(kDoneTag) != std::string_view::npos) {
        action.kind = ActionKind::Done;
        return action;
    }
    action.kind = ActionKind::Plain;
    return action;
}

// ---------------------------------------------------------------------------

std::string render_flow_records(const Flow& flow)
{
    std::string out;
    for (const auto& p : flow.points) {
        std::vector<std::pair<std::string_view, std::string_view>> fields{
            {"role", to_string(p.role)}, {"code", p.code}, {"variable", p.variable}, {"file", p.file}};
        if (p.remarks) {
            fields.emplace_back("remarks", *p.remarks);
        }
        out += render_record(fields);
        out += "\n";
    }
    return out;
}

std::string render_flow(const Flow& flow)
{
    return "<FLOW>\n" + render_flow_records(flow) + "</FLOW>";
}

std::string render_branch_records(const BranchSequence& seq)
{
    std::string out;
    for (const auto& b : seq) {
        std::string type = to_string(b.type);
        out += render_record({{"type", type}, {"code", b.code}, {"file", b.file}, {"outcome", b.outcome}});
        out += "\n";
    }
    return out;
}

std::string render_branch_sequence(const BranchSequence& seq)
{
    return "<SEQUENCE>\n" + render_branch_records(seq) + "</SEQUENCE>";
}

std::string render_condition_items(const ConditionList& list)
{
    std::string out;
    for (std::size_t i = 0; i < list.conditions.size(); ++i) {
        out += std::to_string(i + 1) + ". " + list.conditions[i] + "\n";
    }
    return out;
}

std::string render_conditions(const ConditionList& list)
{
    return "<CONDITIONS>\n" + render_condition_items(list) + "</CONDITIONS>";
}

std::string render_tool_call(const ToolCall& call)
{
    std::string out = "<TOOL>\n" + std::string(to_string(call.tool)) + "\n";
    for (const auto& [k, v] : call.args) {
        bool multiline = v.find('\n') != std::string::npos || k == "content";
        if (!multiline) {
            out += k + ": " + v + "\n";
            continue;
        }
        std::string delim = "EOF";
        for (int n = 1; ("\n" + v + "\n").find("\n" + delim + "\n") != std::string::npos; ++n) {
            delim = "EOF_" + std::to_string(n);
        }
        out += k + ": <<" + delim + "\n" + v;
        if (!v.empty() && v.back() != '\n') {
            out += "\n";
        }
        out += delim + "\n";
    }
    out += "</TOOL>";
    return out;
}

} // namespace povgen
