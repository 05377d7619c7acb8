#include "povgen/process.hpp"

#include "povgen/error.hpp"

#include <array>
#include <cerrno>
#include <cstdlib>
#include <cstring>

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/types.h>
#include <sys/wait.h>
#include <unistd.h>

extern char** environ;

namespace povgen {

namespace {

using Clock = std::chrono::steady_clock;

void append_capped(std::string& buf, const char* data, std::size_t n, std::size_t cap)
{
    buf.append(data, n);
    if (buf.size() > cap + cap / 4) {
        buf.erase(0, buf.size() - cap);
    }
}

void close_fd(int& fd)
{
    if (fd >= 0) {
        ::close(fd);
        fd = -1;
    }
}

std::vector<std::string> build_env(const std::map<std::string, std::string>& extra)
{
    std::map<std::string, std::string> merged;
    for (char** e = environ; e != nullptr && *e != nullptr; ++e) {
        std::string kv(*e);
        auto eq = kv.find('=');
        if (eq != std::string::npos) {
            merged[kv.substr(0, eq)] = kv.substr(eq + 1);
        }
    }
    for (const auto& [k, v] : extra) {
        merged[k] = v;
    }
    std::vector<std::string> out;
    out.reserve(merged.size());
    for (const auto& [k, v] : merged) {
        out.push_back(k + "=" + v);
    }
    return out;
}

} // namespace

ProcessResult run_process(const ProcessSpec& spec)
{
    if (spec.argv.empty()) {
        throw Error("run_process: empty argv");
    }
    ProcessResult result;

    std::array<int, 2> out_pipe{-1, -1};
    std::array<int, 2> err_pipe{-1, -1};
    std::array<int, 2> in_pipe{-1, -1};
    if (::pipe2(out_pipe.data(), O_CLOEXEC) != 0 || ::pipe2(err_pipe.data(), O_CLOEXEC) != 0 ||
        ::pipe2(in_pipe.data(), O_CLOEXEC) != 0) {
        throw Error(std::string("pipe: ") + std::strerror(errno));
    }

    std::vector<std::string> env_storage = build_env(spec.env);
    std::vector<char*> envp;
    for (auto& s : env_storage) {
        envp.push_back(s.data());
    }
    envp.push_back(nullptr);
    std::vector<std::string> argv_storage = spec.argv;
    std::vector<char*> argv;
    for (auto& s : argv_storage) {
        argv.push_back(s.data());
    }
    argv.push_back(nullptr);
    std::string cwd = spec.cwd.empty() ? std::string() : spec.cwd.string();

    auto start = Clock::now();
    pid_t pid = ::fork();
    if (pid < 0) {
        throw Error(std::string("fork: ") + std::strerror(errno));
    }
    if (pid == 0) {
        ::setpgid(0, 0);
        ::dup2(in_pipe[0], STDIN_FILENO);
        ::dup2(out_pipe[1], STDOUT_FILENO);
        ::dup2(err_pipe[1], STDERR_FILENO);
        if (!cwd.empty() && ::chdir(cwd.c_str()) != 0) {
            const char msg[] = "run_process: chdir failed\n";
            (void)!::write(STDERR_FILENO, msg, sizeof(msg) - 1);
            ::_exit(127);
        }
        ::execvpe(argv[0], argv.data(), envp.data());
        const char msg[] = "run_process: exec failed\n";
        (void)!::write(STDERR_FILENO, msg, sizeof(msg) - 1);
        ::_exit(127);
    }
    ::setpgid(pid, pid);

    close_fd(out_pipe[1]);
    close_fd(err_pipe[1]);
    close_fd(in_pipe[0]);

    // Write stdin up front and close it.
    if (!spec.stdin_data.empty()) {
        ::signal(SIGPIPE, SIG_IGN);
        std::size_t off = 0;
        while (off < spec.stdin_data.size()) {
            auto n = ::write(in_pipe[1], spec.stdin_data.data() + off, spec.stdin_data.size() - off);
            if (n <= 0) {
                break;
            }
            off += static_cast<std::size_t>(n);
        }
    }
    close_fd(in_pipe[1]);

    std::optional<Clock::time_point> deadline;
    if (spec.timeout) {
        deadline = start + *spec.timeout;
    }

    std::array<char, 65536> buf{};
    int open_streams = 2;
    while (open_streams > 0) {
        std::array<pollfd, 2> fds{};
        fds[0] = {out_pipe[0], POLLIN, 0};
        fds[1] = {err_pipe[0], POLLIN, 0};
        int wait_ms = -1;
        if (deadline) {
            auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - Clock::now()).count();
            if (left <= 0) {
                result.timed_out = true;
                break;
            }
            wait_ms = static_cast<int>(std::min<long long>(left, 1000));
        }
        int rc = ::poll(fds.data(), fds.size(), wait_ms);
        if (rc < 0) {
            if (errno == EINTR) {
                continue;
            }
            break;
        }
        for (std::size_t i = 0; i < fds.size(); ++i) {
            if (fds[i].fd < 0 || (fds[i].revents & (POLLIN | POLLHUP | POLLERR)) == 0) {
                continue;
            }
            auto n = ::read(fds[i].fd, buf.data(), buf.size());
            if (n <= 0) {
                close_fd(i == 0 ? out_pipe[0] : err_pipe[0]);
                --open_streams;
                continue;
            }
            auto len = static_cast<std::size_t>(n);
            append_capped(i == 0 ? result.out : result.err, buf.data(), len, spec.capture_limit);
            append_capped(result.combined, buf.data(), len, spec.capture_limit);
        }
    }

    int status = 0;
    if (result.timed_out) {
        ::kill(-pid, SIGKILL);
        ::waitpid(pid, &status, 0);
    } else {
        // Streams closed; the child may still be running (e.g. it closed its
        // stdout). Wait, honouring the deadline.
        while (true) {
            pid_t w = ::waitpid(pid, &status, deadline ? WNOHANG : 0);
            if (w == pid) {
                break;
            }
            if (w < 0 && errno != EINTR) {
                break;
            }
            if (deadline && Clock::now() >= *deadline) {
                result.timed_out = true;
                ::kill(-pid, SIGKILL);
                ::waitpid(pid, &status, 0);
                break;
            }
            if (deadline) {
                ::usleep(10000);
            }
        }
        // Kill whatever is left in the process group.
        ::kill(-pid, SIGKILL);
    }
    close_fd(out_pipe[0]);
    close_fd(err_pipe[0]);

    result.wall_time = std::chrono::duration_cast<std::chrono::milliseconds>(Clock::now() - start);
    if (!result.timed_out) {
        if (WIFEXITED(status)) {
            result.exit_code = WEXITSTATUS(status);
        } else if (WIFSIGNALED(status)) {
            result.exit_code = 128 + WTERMSIG(status);
        }
        if (result.exit_code == 127 && result.err.find("run_process: exec failed") != std::string::npos) {
            result.spawn_failed = true;
        }
    }
    return result;
}

bool program_on_path(const std::string& name)
{
    const char* path = std::getenv("PATH");
    if (path == nullptr) {
        return false;
    }
    std::string p(path);
    std::size_t start = 0;
    while (start <= p.size()) {
        auto end = p.find(':', start);
        if (end == std::string::npos) {
            end = p.size();
        }
        std::string dir = p.substr(start, end - start);
        if (!dir.empty()) {
            std::string candidate = dir + "/" + name;
            if (::access(candidate.c_str(), X_OK) == 0) {
                return true;
            }
        }
        start = end + 1;
    }
    return false;
}

} // namespace povgen
