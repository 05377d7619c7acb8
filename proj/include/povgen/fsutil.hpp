#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace povgen {

std::string read_text(const std::filesystem::path& path);

// Writes through a sibling temporary file and renames over the target.
void write_atomic(const std::filesystem::path& path, std::string_view content);

// Recursive copy that preserves symlinks as symlinks.
void copy_tree(const std::filesystem::path& from, const std::filesystem::path& to);

// Fresh directory under the system temp dir; removed by the destructor.
class TempDir {
public:
    explicit TempDir(std::string_view prefix = "povgen");
    ~TempDir();
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }

private:
    std::filesystem::path path_;
};

// Keeps the last `max_bytes` bytes, prefixed with a "[truncated]" marker line
// when anything was dropped.
std::string tail_truncate(std::string_view text, std::size_t max_bytes);

// Keeps the first `max_bytes` bytes with a trailing marker line.
std::string head_truncate(std::string_view text, std::size_t max_bytes);

inline constexpr std::string_view kTruncatedMarker = "[truncated]";

} // namespace povgen
