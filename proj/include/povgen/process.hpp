#pragma once

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace povgen {

struct ProcessSpec {
    std::vector<std::string> argv;
    std::filesystem::path cwd;
    // Added on top of (or replacing entries in) the parent environment.
    std::map<std::string, std::string> env;
    std::optional<std::chrono::milliseconds> timeout;
    std::string stdin_data;
    // Per-stream capture cap; older bytes are dropped first.
    std::size_t capture_limit = 8U << 20U;
};

struct ProcessResult {
    // Exit status, or 128+signal when killed by a signal. Absent on timeout
    // or when the program could not be started.
    std::optional<int> exit_code;
    bool timed_out = false;
    bool spawn_failed = false;
    std::string out;
    std::string err;
    // stdout and stderr interleaved in arrival order.
    std::string combined;
    std::chrono::milliseconds wall_time{0};
};

// Runs argv[0] (PATH lookup) in its own process group. On timeout the whole
// group is killed.
ProcessResult run_process(const ProcessSpec& spec);

bool program_on_path(const std::string& name);

} // namespace povgen
