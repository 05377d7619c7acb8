#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace povgen {

// ---------------------------------------------------------------------------
// Payload types
// ---------------------------------------------------------------------------

enum class FlowRole { Source, Intermediate, Sink };

std::string_view to_string(FlowRole r);

struct FlowPoint {
    FlowRole role = FlowRole::Intermediate;
    std::string code;
    std::string variable;
    std::string file;
    std::optional<std::string> remarks;

    bool operator==(const FlowPoint&) const = default;
};

// Exactly one Source (first) and one Sink (last), at least two points.
struct Flow {
    std::vector<FlowPoint> points;

    bool operator==(const Flow&) const = default;
};

// Throws RoleOrderError / MalformedRecord.
void validate_flow(const Flow& flow);

enum class BranchKind { IfElse, TryExcept, Switch, Other };

struct BranchType {
    BranchKind kind = BranchKind::IfElse;
    std::string other; // original label when kind == Other

    bool operator==(const BranchType&) const = default;
};

std::string to_string(const BranchType& t);
BranchType parse_branch_type(std::string_view label);

struct BranchPoint {
    BranchType type;
    std::string code;
    std::string file;
    std::string outcome;

    bool operator==(const BranchPoint&) const = default;
};

using BranchSequence = std::vector<BranchPoint>;

struct ConditionList {
    std::vector<std::string> conditions;

    bool operator==(const ConditionList&) const = default;
};

// ---------------------------------------------------------------------------
// Tool invocations
// ---------------------------------------------------------------------------

enum class ToolName { ListDir, Read, Find, Grep, Write, Run };

std::string_view to_string(ToolName t);
std::optional<ToolName> parse_tool_name(std::string_view s);

struct ToolCall {
    ToolName tool = ToolName::ListDir;
    std::map<std::string, std::string> args;

    bool operator==(const ToolCall&) const = default;
};

struct ToolSpec {
    ToolName tool;
    std::vector<std::string_view> required;
    std::vector<std::string_view> optional;
    std::string_view summary;
};

const std::vector<ToolSpec>& tool_specs();

// Human-readable grammar for the given tools; embedded in prompts.
std::string tool_description(std::span<const ToolName> tools);

// ---------------------------------------------------------------------------
// Agent replies
// ---------------------------------------------------------------------------

enum class PayloadKind { Flow, BranchSequence, Conditions };

std::string_view payload_tag(PayloadKind k); // "FLOW", "SEQUENCE", "CONDITIONS"

using Payload = std::variant<Flow, BranchSequence, ConditionList>;

enum class ActionKind { ToolCalls, Done, Payload, Plain };

std::string_view to_string(ActionKind k);

struct AgentAction {
    ActionKind kind = ActionKind::Plain;
    std::vector<ToolCall> calls;   // ToolCalls
    std::optional<Payload> payload; // Payload
    std::string text;               // the reply itself
};

inline constexpr std::string_view kDoneTag = "<DONE>";

// Content between the first <tag> and the next </tag>; nullopt when <tag> is
// absent. Throws UnbalancedTag when the opening tag has no close.
std::optional<std::string> extract_tagged_block(std::string_view text, std::string_view tag);

Flow parse_flow(std::string_view text);
BranchSequence parse_branch_sequence(std::string_view text);
ConditionList parse_conditions(std::string_view text);
std::vector<ToolCall> parse_tool_calls(std::string_view text);

// Precedence: tool calls, then the payload tag for `expected`, then <DONE>,
// else plain text. Throws MalformedToolCall or the payload parser's errors.
AgentAction parse_agent_action(std::string_view text, std::optional<PayloadKind> expected = std::nullopt);

// ---------------------------------------------------------------------------
// Rendering (inverse of the parsers)
// ---------------------------------------------------------------------------

std::string render_flow_records(const Flow& flow);
std::string render_flow(const Flow& flow); // wrapped in <FLOW> tags
std::string render_branch_records(const BranchSequence& seq);
std::string render_branch_sequence(const BranchSequence& seq);
std::string render_condition_items(const ConditionList& list);
std::string render_conditions(const ConditionList& list);
std::string render_tool_call(const ToolCall& call);

} // namespace povgen
