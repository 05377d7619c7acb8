#include "povgen/prompts.hpp"

#include "povgen/error.hpp"

#include <regex>

namespace povgen {

namespace {

constexpr std::string_view kSystem = R"PROMPT(You are a helpful AI assistant that can interact with a computer to solve tasks.

<ROLE>
Your primary role is to assist users by executing commands, modifying code, and solving technical problems effectively.
You should be thorough, methodical, and prioritize quality over speed.
Your code will never be read by humans, so focus on correctness, not style.
</ROLE>

<EFFICIENCY>
* Each action you take is somewhat expensive. Minimize unnecessary actions.
* When exploring the codebase, use the find and grep tools with appropriate filters to minimize unnecessary operations.
* You do not have access to the internet, so do not attempt to search online for information.
</EFFICIENCY>

<CODE_QUALITY>
* Write clean, efficient code with minimal comments. Avoid redundancy in comments: Do not repeat information that can be easily inferred from the code itself.
* When implementing solutions, focus on making the minimal changes needed to solve the problem.
* Before implementing any changes, first thoroughly understand the codebase through exploration.
* If you are adding a lot of code to a function or file, consider splitting the function or file into smaller pieces when appropriate.
</CODE_QUALITY>

<PROBLEM_SOLVING_WORKFLOW>
1. EXPLORATION: Thoroughly explore relevant files and understand the context before proposing solutions
2. ANALYSIS: Consider multiple approaches and select the most promising one
3. IMPLEMENTATION: Make focused, minimal changes to address the problem
</PROBLEM_SOLVING_WORKFLOW>

<TROUBLESHOOTING>
* If you've made repeated attempts to solve a problem but tests still fail or the user reports it's still broken:
  1. Step back and reflect on 5-7 different possible sources of the problem
  2. Assess the likelihood of each possible cause
  3. Methodically address the most likely causes, starting with the highest probability
  4. Document your reasoning process
</TROUBLESHOOTING>)PROMPT";

constexpr std::string_view kFlow = R"PROMPT(The project I am working with has a vulnerability, reported as a CWE. The issue description says:
{description}
You do not have access to the internet or GitHub to look up more details.
There are no vulnerability reports in the project directory either.

{tool_description}

Could you generate a sequence of program points to reach the vulnerable point (sink), starting from an external input (source)? This corresponds to a vulnerable "flow" through the program.
The flow should take the form of a sequence of program points, each in the following format:
{"role": "Source|Intermediate|Sink",
 "code": "Source code of program point (1-2 lines),
 "variable": "Variable name",
 "file": "File path (absolute)",
 "remarks": "Comments about this point, if any"}
 You can use multiple intermediate steps and tool invocations, but when you are finished,
 your final response should contain the flow in the above format, within the tags <FLOW> and </FLOW>.)PROMPT";

constexpr std::string_view kBranchPart1 = R"PROMPT(The project I am working with has a vulnerability, reported as a CWE. The issue description says:
{description}
You do not have access to the internet or GitHub to look up more details.
There are no vulnerability reports in the project directory either.

{tool_description}

Here is a flow consisting of a sequence of program points to reach the vulnerability:
{flow}

Could you generate the sequence of branch conditions
encountered on the way to the sink, starting from the source?
Include *every single* if-else, try-except, or switch statement that the program flow will encounter in the path from the source to the sink.
This should take the form of a sequence of program points, each in the following format:
{"type": "If-Else | Try-Except | Switch",
 "code": "Source code of program point (1-2 lines),
 "file": "File path (absolute)",
 "outcome": "What should be the outcome of the branch statement in order to reach the vulnerability?"}
You can use multiple intermediate steps and tool invocations, but when you are finished,
your final response should contain the sequence in the above format, within the tags <SEQUENCE> and </SEQUENCE>.)PROMPT";

constexpr std::string_view kBranchPart2 = R"PROMPT(Based on the above branch conditions that you generated, infer a set of conditions that the external input must satisfy in order to reach the vulnerability. Your final answer should be in the following format:
<CONDITIONS>
1. Condition 1
2. Condition 2
...
</CONDITIONS>)PROMPT";

constexpr std::string_view kTestgen = R"PROMPT(The project I am working with has a vulnerability, reported as a CWE. The issue description says:
{description}
You do not have access to the internet or GitHub to look up more details. There are no vulnerability reports in the project directory either.

Now create a test case that FAILS (exits with non-zero code) if the vulnerability EXISTS,
and PASSES (exits with code 0) if the vulnerability DOES NOT EXIST.
{cwe_desc}
This test should actually run the vulnerable code in the project.
- It should NOT read the source code to check for the presence of a vulnerability.
- It should NOT "simulate" the vulnerability by running some separate code that does not use the project.

Here is a flow consisting of a sequence of program points to reach the vulnerability:
{flow}

The test should start from the vulnerability 'source' and reach the 'sink'. It should be designed such that it passes through all the branch conditions on the way. This means that the input and method calls should be carefully crafted, satisfying the following conditions:
{conditions}

The project is built and run as a Docker container, and the Dockerfile is at `{workdir}/Dockerfile.vuln`. All the build dependencies for the project are already installed in `Dockerfile.vuln`. However, if you need any new dependencies, you can add them to `Dockerfile.vuln`.
Make sure to not modify any of the lines in the Dockerfile above "# Do not modify anything above this line". The entire project directory is copied into the Docker container, so you don't need to write any new COPY commands in the Dockerfile. The command to run the test should be the `CMD` command in `Dockerfile.vuln`, so that the test can be run with
`docker run -t imagename`.

Feel free to create any new files to create the test case.
You are highly encouraged to insert print statements in the existing source files to debug your test.
Remember the branch conditions and flow that you derived earlier, and use them to guide your test generation and debugging process.

Once you verify that the flow has reached the 'sink', you should analyze the observed behavior of the program to ensure that the test FAILS if the vulnerability exists, and PASSES if it does not exist. To re-emphasize, this test should NOT be based on reading the source code, but rather on the actual behavior of the program when it is run.
If I fix the vulnerability in the project, the test should PASS.

{tool_description}

If you successfully generate the test case and confirm that it satisfies all the above conditions, respond <DONE>.)PROMPT";

constexpr std::string_view kRepair = R"PROMPT(The test you generated had the following error:
{feedback}
Please fix the test case. Carefully analyze this output for errors or messages that can help you debug your test. Reason step-by-step about what might have gone wrong, and how you can fix it.
You can use the <TOOL>...</TOOL> format to invoke tools, and you can also add new files.
When you have generated, run and checked your test again, respond with a message containing the string "<DONE>".
Remember that the test should actually run the vulnerable code in the project,
- It should NOT read the source code to check for the presence of a vulnerability.
- It should NOT "simulate" the vulnerability by running some separate code that does not use the project.)PROMPT";

constexpr std::string_view kFlowParagraph =
    "Here is a flow consisting of a sequence of program points to reach the vulnerability:\n{flow}\n\n";
constexpr std::string_view kConditionsStart = "The test should start from the vulnerability 'source'";
constexpr std::string_view kConditionsEnd = "{conditions}\n\n";

const std::regex& slot_regex()
{
    static const std::regex re(R"(\{([a-z_][a-z0-9_]*)\})");
    return re;
}

std::string remove_span(std::string body, std::string_view from, std::string_view through, std::string_view replacement = {})
{
    auto b = body.find(from);
    auto e = b == std::string::npos ? std::string::npos : body.find(through, b);
    if (e == std::string::npos) {
        throw Error("prompt template is missing the paragraph starting with '" + std::string(from) + "'");
    }
    body.replace(b, e + through.size() - b, replacement);
    return body;
}

} // namespace

std::string_view to_string(StageId s)
{
    switch (s) {
    case StageId::FlowReasoning: return "flow";
    case StageId::BranchReasoning: return "branch";
    case StageId::TestGeneration: return "testgen";
    case StageId::Repair: return "repair";
    }
    return "?";
}

std::optional<StageId> parse_stage(std::string_view s)
{
    for (auto id : {StageId::FlowReasoning, StageId::BranchReasoning, StageId::TestGeneration, StageId::Repair}) {
        if (s == to_string(id)) {
            return id;
        }
    }
    return std::nullopt;
}

const std::string& system_prompt()
{
    static const std::string text(kSystem);
    return text;
}

PromptTemplate flow_template()
{
    return {StageId::FlowReasoning, "flow", std::string(kFlow)};
}

PromptTemplate branch_part1_template(bool with_flow)
{
    std::string body(kBranchPart1);
    if (!with_flow) {
        body = remove_span(std::move(body), kFlowParagraph, kFlowParagraph, std::string(kNoFlowSentence) + "\n\n");
    }
    return {StageId::BranchReasoning, with_flow ? "branch_part1" : "branch_part1_no_flow", std::move(body)};
}

PromptTemplate branch_part2_template()
{
    return {StageId::BranchReasoning, "branch_part2", std::string(kBranchPart2)};
}

PromptTemplate testgen_template(bool with_flow, bool with_conditions)
{
    std::string body(kTestgen);
    std::string name = "testgen";
    if (!with_flow) {
        body = remove_span(std::move(body), kFlowParagraph, kFlowParagraph);
        name += "_no_flow";
    }
    if (!with_conditions) {
        body = remove_span(std::move(body), kConditionsStart, kConditionsEnd);
        name += "_no_conditions";
    }
    return {StageId::TestGeneration, std::move(name), std::move(body)};
}

PromptTemplate repair_template()
{
    return {StageId::Repair, "repair", std::string(kRepair)};
}

std::set<std::string> template_slots(std::string_view body)
{
    std::set<std::string> out;
    std::string s(body);
    for (auto it = std::sregex_iterator(s.begin(), s.end(), slot_regex()); it != std::sregex_iterator(); ++it) {
        out.insert((*it)[1].str());
    }
    return out;
}

std::string render_prompt(std::string_view body, const Bindings& bindings)
{
    std::string s(body);
    std::string out;
    std::size_t last = 0;
    for (auto it = std::sregex_iterator(s.begin(), s.end(), slot_regex()); it != std::sregex_iterator(); ++it) {
        const auto& m = *it;
        auto found = bindings.find(m[1].str());
        if (found == bindings.end()) {
            throw UnboundSlot("prompt slot {" + m[1].str() + "} is not bound");
        }
        out.append(s, last, static_cast<std::size_t>(m.position(0)) - last);
        out += found->second;
        last = static_cast<std::size_t>(m.position(0) + m.length(0));
    }
    out.append(s, last);
    return out;
}

std::string render_prompt(const PromptTemplate& tmpl, const Bindings& bindings)
{
    return render_prompt(tmpl.body, bindings);
}

std::string describe_task(const VulnerabilityTask& task)
{
    return std::string(to_string(task.cwe)) + ": " + std::string(cwe_title(task.cwe)) + "\n" + task.report_text;
}

} // namespace povgen
