#pragma once

#include "povgen/engine.hpp"
#include "povgen/structured.hpp"
#include "povgen/task.hpp"

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace povgen {

struct SandboxConfig {
    std::size_t max_tool_output = 20000;
    std::chrono::milliseconds run_timeout{std::chrono::minutes(10)};
    std::size_t grep_max_results = 100;
    // Name under which the workspace root is shown to the agent.
    std::string virtual_root = "/workspace";
};

struct DirEntry {
    std::string name;
    std::string kind; // "file" or "dir"
    std::uintmax_t size = 0;

    bool operator==(const DirEntry&) const = default;
};

struct GrepHit {
    std::string file; // root-relative
    std::size_t line_no = 0;
    std::string line_text;

    bool operator==(const GrepHit&) const = default;
};

struct GrepResult {
    std::vector<GrepHit> hits;
    bool truncated = false;
};

struct BuildRunReport {
    bool build_ok = false;
    std::string build_log_tail;
    bool ran = false;
    std::optional<int> exit_code;
    std::string run_log_tail;
    bool timed_out = false;
    std::string run_stdout_tail;
    std::string run_stderr_tail;
};

struct ToolOutcome {
    std::string text;
    bool truncated = false;
    bool error = false;
    std::optional<BuildRunReport> report; // for Run
};

// The agent's view of one workspace. Every path argument is resolved
// component by component (following symlinks) and must end up under root.
class SandboxRoot {
public:
    SandboxRoot(Workspace ws, ContainerEngine& engine, SandboxConfig cfg = {});

    const std::filesystem::path& root() const noexcept { return root_; }
    const Workspace& workspace() const noexcept { return ws_; }
    const SandboxConfig& config() const noexcept { return cfg_; }

    // Throws PathEscape.
    std::filesystem::path resolve(std::string_view path) const;
    std::string relative(const std::filesystem::path& resolved) const;

    std::vector<DirEntry> list_dir(std::string_view path) const;
    std::string read_file(std::string_view path, std::optional<long> start_line = std::nullopt,
                          std::optional<long> end_line = std::nullopt) const;
    std::vector<std::string> find_files(std::string_view pattern) const;
    GrepResult grep(std::string_view pattern, std::string_view scope) const;
    void write_file(std::string_view path, std::string_view content) const;
    BuildRunReport run_container(const std::string& image_tag, std::chrono::milliseconds remaining_time) const;

    // Runs one parsed tool call and renders its result for the model.
    // Tool errors become error text; EngineUnavailable propagates.
    ToolOutcome execute(const ToolCall& call, const std::string& image_tag,
                        std::chrono::milliseconds remaining_time) const;

    std::string limit(std::string_view text, bool* truncated = nullptr) const;

private:
    Workspace ws_;
    std::filesystem::path root_;
    ContainerEngine* engine_;
    SandboxConfig cfg_;
};

// Translates a glob (`*`, `?`, `[...]`, `**`) to an ECMAScript regex.
// Throws BadPattern.
std::string glob_to_regex(std::string_view glob);

std::string render_report(const BuildRunReport& r, std::size_t max_bytes);

} // namespace povgen
