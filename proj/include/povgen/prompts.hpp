#pragma once

#include "povgen/task.hpp"

#include <map>
#include <set>
#include <string>
#include <string_view>

namespace povgen {

enum class StageId { FlowReasoning, BranchReasoning, TestGeneration, Repair };

std::string_view to_string(StageId s);
std::optional<StageId> parse_stage(std::string_view s); // "flow", "branch", "testgen", "repair"

using Bindings = std::map<std::string, std::string>;

struct PromptTemplate {
    StageId stage = StageId::FlowReasoning;
    std::string name;
    std::string body;
};

const std::string& system_prompt();

PromptTemplate flow_template();
// Without a flow, the paragraph presenting it is replaced by kNoFlowSentence.
PromptTemplate branch_part1_template(bool with_flow = true);
PromptTemplate branch_part2_template();
// Ablations drop the whole flow / conditions paragraph.
PromptTemplate testgen_template(bool with_flow = true, bool with_conditions = true);
PromptTemplate repair_template();

inline constexpr std::string_view kNoFlowSentence = "No flow is provided; identify the relevant path yourself.";

// Slot names referenced by a template body ({name} with name in [a-z_][a-z0-9_]*).
std::set<std::string> template_slots(std::string_view body);

// Single-pass substitution of every {slot}; substituted text is not rescanned.
// Throws UnboundSlot naming the first missing slot.
std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings);
std::string render_prompt(std::string_view body, const Bindings& bindings);

// "CWE-78: <title>" followed by the report text.
std::string describe_task(const VulnerabilityTask& task);

} // namespace povgen
