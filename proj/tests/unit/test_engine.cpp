#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "povgen/engine.hpp"
#include "povgen/error.hpp"
#include "povgen/fsutil.hpp"

using namespace povgen;
namespace fs = std::filesystem;
using namespace std::chrono_literals;

TEST_CASE("dockerfile parsing")
{
    auto ins = parse_dockerfile("# comment\nARG V=1\nFROM gcc:13\nRUN echo a \\\n    b\nCMD [\"sh\", \"-c\", \"exit 3\"]\n");
    REQUIRE(ins.size() == 4);
    CHECK(ins[0].keyword == "ARG");
    CHECK(ins[1].keyword == "FROM");
    CHECK(ins[2].line == 4);
    CHECK(ins[2].args.find("echo a") != std::string::npos);
    CHECK(ins[2].args.find("b") != std::string::npos);
    REQUIRE(ins[3].exec_form.has_value());
    CHECK(*ins[3].exec_form == std::vector<std::string>{"sh", "-c", "exit 3"});

    CHECK_THROWS_AS(parse_dockerfile("RUN true\n"), ParseError);
    CHECK_THROWS_AS(parse_dockerfile("# nothing\n"), ParseError);
    CHECK_THROWS_AS(parse_dockerfile("FROM x\nFROBNICATE y\n"), ParseError);
    CHECK_THROWS_AS(parse_dockerfile("FROM x\nCMD [\"unterminated\"\n"), ParseError);
}

TEST_CASE("tags and argv")
{
    CHECK(sanitize_tag("Task/One:2") == "task-one-2");
    DockerEngine d("docker");
    auto b = d.build_argv("/ctx", "/ctx/Dockerfile.vuln", "t1");
    CHECK(b.front() == "docker");
    CHECK(std::find(b.begin(), b.end(), "/ctx/Dockerfile.vuln") != b.end());
    auto r = d.run_argv("t1", "c1");
    auto net = std::find(r.begin(), r.end(), "--network");
    REQUIRE(net != r.end());
    CHECK(*(net + 1) == "none");
    CHECK(std::find(r.begin(), r.end(), "--rm") != r.end());
    CHECK_THROWS_AS(make_engine("podman", "/tmp"), ConfigError);
}

TEST_CASE("local engine builds, runs and reports failures")
{
    TempDir tmp;
    auto ctx = tmp.path() / "ctx";
    fs::create_directories(ctx / "sub");
    write_atomic(ctx / "sub" / "data.txt", "payload\n");
    write_atomic(ctx / "Dockerfile.vuln", "FROM alpine:3\nENV GREETING=hi\nWORKDIR /app\nCOPY sub/data.txt ./\n"
                                          "RUN echo \"$GREETING\" > greet.txt\n"
                                          "CMD [\"sh\", \"-c\", \"cat data.txt greet.txt; echo oops >&2; exit 7\"]\n");
    LocalEngine engine(tmp.path() / "state");
    engine.ensure_available();
    auto b = engine.build(ctx, ctx / "Dockerfile.vuln", "t1", 60s);
    INFO(b.log);
    REQUIRE(b.ok);
    CHECK(b.log.find("Step 5/6 : RUN") != std::string::npos);
    CHECK(b.log.find("Successfully built t1") != std::string::npos);
    CHECK(b.log.find(tmp.path().string()) == std::string::npos);

    auto r = engine.run("t1", 60s);
    CHECK(r.exit_code == 7);
    CHECK(r.out == "payload\nhi\n");
    CHECK(r.err == "oops\n");
    // the container is a fresh copy each time
    auto again = engine.run("t1", 60s);
    CHECK(again.exit_code == 7);

    write_atomic(ctx / "Dockerfile.bad", "FROM alpine:3\nRUN exit 4\nCMD true\n");
    auto bad = engine.build(ctx, ctx / "Dockerfile.bad", "t2", 60s);
    CHECK_FALSE(bad.ok);
    CHECK(bad.log.find("returned a non-zero code: 4") != std::string::npos);

    write_atomic(ctx / "Dockerfile.nocmd", "FROM alpine:3\nRUN true\n");
    REQUIRE(engine.build(ctx, ctx / "Dockerfile.nocmd", "t3", 60s).ok);
    CHECK(engine.run("t3", 60s).exit_code == 125);

    write_atomic(ctx / "Dockerfile.escape", "FROM alpine:3\nCOPY ../secret ./\n");
    CHECK_FALSE(engine.build(ctx, ctx / "Dockerfile.escape", "t4", 60s).ok);

    engine.remove_image("t1");
    CHECK_THROWS_AS(engine.run("t1", 10s), Error);
}

TEST_CASE("local engine enforces run and build timeouts")
{
    TempDir tmp;
    auto ctx = tmp.path() / "ctx";
    fs::create_directories(ctx);
    write_atomic(ctx / "Dockerfile.vuln", "FROM alpine:3\nCMD [\"sleep\", \"30\"]\n");
    LocalEngine engine(tmp.path() / "state");
    REQUIRE(engine.build(ctx, ctx / "Dockerfile.vuln", "sleepy", 60s).ok);
    auto start = std::chrono::steady_clock::now();
    auto r = engine.run("sleepy", 1s);
    auto took = std::chrono::steady_clock::now() - start;
    CHECK(r.timed_out);
    CHECK_FALSE(r.exit_code.has_value());
    CHECK(took < 5s);

    write_atomic(ctx / "Dockerfile.slow", "FROM alpine:3\nRUN sleep 30\n");
    auto b = engine.build(ctx, ctx / "Dockerfile.slow", "slow", 1s);
    CHECK_FALSE(b.ok);
    CHECK(b.timed_out);
}

TEST_CASE("local engine runs have no network")
{
    TempDir tmp;
    LocalEngine engine(tmp.path() / "state");
    if (engine.isolation_prefix().empty()) {
        MESSAGE("network namespaces unavailable; isolation not checked");
        return;
    }
    auto ctx = tmp.path() / "ctx";
    fs::create_directories(ctx);
    // only the loopback interface exists inside a fresh network namespace
    write_atomic(ctx / "Dockerfile.vuln", "FROM alpine:3\nCMD [\"sh\", \"-c\", \"tail -n +3 /proc/net/dev | cut -d: -f1 | tr -d ' '\"]\n");
    REQUIRE(engine.build(ctx, ctx / "Dockerfile.vuln", "net", 60s).ok);
    auto r = engine.run("net", 30s);
    CHECK(r.exit_code == 0);
    CHECK(r.out == "lo\n");
}
