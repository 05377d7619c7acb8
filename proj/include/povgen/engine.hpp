#pragma once

#include <chrono>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace povgen {

struct DockerInstruction {
    std::size_t line = 0; // 1-based line of the keyword
    std::string keyword;  // upper-cased
    std::string args;     // raw argument text, continuations joined
    std::optional<std::vector<std::string>> exec_form; // JSON-array form
};

// Throws ParseError (with the line number) on unknown instructions, a
// missing FROM, or a malformed exec-form array.
std::vector<DockerInstruction> parse_dockerfile(std::string_view text);

struct BuildResult {
    bool ok = false;
    bool timed_out = false;
    std::string log;
};

struct RunResult {
    std::optional<int> exit_code; // absent on timeout
    bool timed_out = false;
    std::string out;
    std::string err;
    std::string combined;
};

class ContainerEngine {
public:
    virtual ~ContainerEngine() = default;
    virtual std::string name() const = 0;
    // Throws EngineUnavailable.
    virtual void ensure_available() = 0;
    virtual BuildResult build(const std::filesystem::path& context, const std::filesystem::path& dockerfile,
                              const std::string& tag, std::chrono::milliseconds timeout) = 0;
    // No volumes, no network.
    virtual RunResult run(const std::string& tag, std::chrono::milliseconds timeout) = 0;
    virtual void remove_image(const std::string& tag) = 0;
};

// Runs a Dockerfile directly on the host: COPY/ADD populate a per-image
// directory tree, RUN executes there, and the container run executes CMD in a
// fresh copy of that tree inside a new network namespace (unshare). FROM is
// recorded but the host toolchain stands in for the base image, and absolute
// container paths are not remapped, so build steps should use paths relative
// to WORKDIR.
class LocalEngine : public ContainerEngine {
public:
    enum class NetworkIsolation { Auto, Required, Off };

    explicit LocalEngine(std::filesystem::path state_dir, NetworkIsolation isolation = NetworkIsolation::Auto);

    std::string name() const override { return "local"; }
    void ensure_available() override;
    BuildResult build(const std::filesystem::path& context, const std::filesystem::path& dockerfile,
                      const std::string& tag, std::chrono::milliseconds timeout) override;
    RunResult run(const std::string& tag, std::chrono::milliseconds timeout) override;
    void remove_image(const std::string& tag) override;

    // The unshare prefix in use, empty when runs are not network-isolated.
    const std::vector<std::string>& isolation_prefix() const noexcept { return isolation_prefix_; }

private:
    std::filesystem::path image_dir(const std::string& tag) const;

    std::filesystem::path state_dir_;
    std::vector<std::string> isolation_prefix_;
    unsigned run_counter_ = 0;
};

class DockerEngine : public ContainerEngine {
public:
    explicit DockerEngine(std::string binary = "docker") : binary_(std::move(binary)) {}

    std::string name() const override { return "docker"; }
    void ensure_available() override;
    BuildResult build(const std::filesystem::path& context, const std::filesystem::path& dockerfile,
                      const std::string& tag, std::chrono::milliseconds timeout) override;
    RunResult run(const std::string& tag, std::chrono::milliseconds timeout) override;
    void remove_image(const std::string& tag) override;

    std::vector<std::string> build_argv(const std::filesystem::path& context, const std::filesystem::path& dockerfile,
                                        const std::string& tag) const;
    std::vector<std::string> run_argv(const std::string& tag, const std::string& container_name) const;

private:
    std::string binary_;
    bool checked_ = false;
    unsigned run_counter_ = 0;
};

// kind: "docker", "local", or "auto" (docker when its daemon answers, local
// otherwise). state_dir holds local-engine images.
std::unique_ptr<ContainerEngine> make_engine(const std::string& kind, const std::filesystem::path& state_dir);

// Lower-case [a-z0-9_.-] form usable as an image tag.
std::string sanitize_tag(std::string_view raw);

} // namespace povgen
