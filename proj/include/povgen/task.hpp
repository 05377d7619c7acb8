#pragma once

#include <chrono>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace povgen {

// Supported weakness categories. Adding one means extending the tables in
// task.cpp (names) and evaluation.cpp (success criteria); unknown ids are
// rejected at manifest load time.
enum class Cwe { PathTraversal22, CommandInjection78, CrossSiteScripting79, CodeInjection94 };

std::string_view to_string(Cwe cwe);              // "CWE-22"
std::optional<Cwe> parse_cwe(std::string_view id); // accepts "CWE-22", "cwe-22", "22"
std::string_view cwe_title(Cwe cwe);               // NVD/MITRE title

enum class Language { Java, C, Cpp, Other };

std::string_view to_string(Language lang);
std::optional<Language> parse_language(std::string_view s);

struct VulnerabilityTask {
    std::string id;
    Cwe cwe = Cwe::CodeInjection94;
    std::string report_text;
    std::filesystem::path repo_path;
    std::string vulnerable_commit;
    std::optional<std::string> fixed_commit;
    std::vector<std::string> fix_functions;
    Language language = Language::Other;
    std::optional<std::filesystem::path> build_hint;
    double budget_usd = 5.0;
    std::chrono::seconds time_budget{40 * 60};
};

// Throws ValidationError naming the field when an invariant does not hold.
void validate(const VulnerabilityTask& task);

// Reads a manifest document: {"schema": 1, "tasks": [ {...}, ... ]}.
// A file holding only whitespace is an empty manifest. Relative repo_path
// entries resolve against the manifest's directory.
std::vector<VulnerabilityTask> load_manifest(const std::filesystem::path& path);
std::vector<VulnerabilityTask> parse_manifest(std::string_view text,
                                              const std::filesystem::path& base_dir = {});
std::string serialize_manifest(const std::vector<VulnerabilityTask>& tasks);

// "40m", "90s", "1h", "1h30m"; a bare number is minutes.
std::chrono::seconds parse_duration(std::string_view text);

inline constexpr std::string_view kDockerfileName = "Dockerfile.vuln";
inline constexpr std::string_view kProtectedMarker = "# Do not modify anything above this line";

struct Workspace {
    std::filesystem::path root;
    std::filesystem::path dockerfile_path;
    // Number of leading Dockerfile lines (through the marker line) the agent
    // may not change.
    std::size_t immutable_prefix_len = 0;
    // The exact bytes of those lines, newline included.
    std::string scaffold_prefix;
};

// Build-file scaffold for a task: protected prefix followed by an editable
// region.
std::string scaffold_dockerfile(const VulnerabilityTask& task);

// Materialises the tree at task.vulnerable_commit into out_dir (which must be
// absent or empty) and writes the Dockerfile scaffold.
Workspace prepare_workspace(const VulnerabilityTask& task, const std::filesystem::path& out_dir);

// Rebuilds the Workspace descriptor of an already prepared directory.
Workspace open_workspace(const std::filesystem::path& root, const std::string& scaffold_prefix);

} // namespace povgen
