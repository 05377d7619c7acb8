#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "povgen/digest.hpp"
#include "povgen/fsutil.hpp"
#include "povgen/llm.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <thread>

using namespace povgen;
namespace fs = std::filesystem;
using json = nlohmann::json;
using namespace std::chrono_literals;

namespace {

const std::string kModel = "test-model";

PriceTable prices(double prompt = 1.0, double completion = 2.0)
{
    return PriceTable({{kModel, ModelPrice{prompt, completion}}});
}

Conversation opening(const std::string& text = "hello")
{
    Conversation c{"system", {}};
    c.add_framework(text);
    return c;
}

// Backend that counts calls and answers with fixed usage.
class CountingBackend : public ModelBackend {
public:
    Usage usage{100, 50, 0ms};
    int sends = 0;
    Usage quote(const Conversation&, const std::string&) override { return usage; }
    Completion send(const Conversation&, const std::string&, std::chrono::milliseconds) override
    {
        ++sends;
        return {"reply " + std::to_string(sends), usage};
    }
};

} // namespace

TEST_CASE("sha256 matches the published test vectors")
{
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex("abcdbcdecdefdefgefghfghighijhijkijkljklmklmnlmnomnopnopq") ==
          "248d6a61d20638b8e5c026930c3e6039a33ce45964ff2167f6ecedd419db06c1");
    Sha256 a;
    Sha256 b;
    CHECK(a.field("ab").field("c").hex_digest() != b.field("a").field("bc").hex_digest());
}

TEST_CASE("conversations alternate starting with the framework")
{
    Conversation c;
    CHECK(c.next_speaker() == Speaker::AgentFramework);
    CHECK_THROWS_AS(c.add_model("x"), Error);
    c.add_framework("a");
    CHECK_THROWS_AS(c.add_framework("b"), Error);
    c.add_model("b");
    CHECK(c.next_speaker() == Speaker::AgentFramework);
}

TEST_CASE("record key depends on model, system prompt and every turn")
{
    auto base = opening();
    auto k = record_key(base, kModel);
    CHECK(k.size() == 64);
    CHECK(record_key(opening(), kModel) == k);
    CHECK(record_key(base, "other-model") != k);
    auto sys = base;
    sys.system_prompt = "system2";
    CHECK(record_key(sys, kModel) != k);
    auto longer = base;
    longer.add_model("m");
    longer.add_framework("f");
    CHECK(record_key(longer, kModel) != k);

    Conversation split1{"s", {}};
    split1.add_framework("ab");
    split1.add_model("c");
    split1.add_framework("d");
    Conversation split2{"s", {}};
    split2.add_framework("a");
    split2.add_model("bc");
    split2.add_framework("d");
    CHECK(record_key(split1, kModel) != record_key(split2, kModel));
}

TEST_CASE("price table and ledger arithmetic")
{
    auto table = PriceTable::from_json_text(R"({"models":{"m":{"usd_per_1k_prompt_tokens":0.003,"usd_per_1k_completion_tokens":0.015}}})");
    CHECK(table.cost("m", {2000, 1000, 0ms}) == doctest::Approx(0.021));
    CHECK_THROWS_AS(table.price("unknown"), ConfigError);
    CHECK_THROWS_AS(PriceTable::from_json_text("{}"), ConfigError);
    CHECK_THROWS_AS(PriceTable::from_json_text(R"({"models":{"m":{"usd_per_1k_prompt_tokens":-1,"usd_per_1k_completion_tokens":0}}})"),
                    ConfigError);

    auto now = std::chrono::steady_clock::time_point{};
    BudgetLedger ledger(1.0, 10s, prices(), [&] { return now; });
    CHECK(ledger.remaining_time() == 10s);
    now += 4s;
    CHECK(ledger.elapsed() == 4s);
    CHECK(ledger.charge(kModel, {100, 50, 0ms}) == doctest::Approx(0.2));
    CHECK(ledger.would_exceed(0.8000001));
    CHECK_FALSE(ledger.would_exceed(0.8));
    now += 6s;
    CHECK(ledger.time_exhausted());
}

TEST_CASE("script files split into entries with optional usage")
{
    auto entries = ScriptedBackend::parse_script("preamble ignored\n### RESPONSE prompt_tokens=10 completion_tokens=5\nfirst\nline\n"
                                                 "### RESPONSE\nsecond\n");
    REQUIRE(entries.size() == 2);
    CHECK(entries[0].text == "first\nline");
    CHECK(entries[0].prompt_tokens == 10u);
    CHECK(entries[0].completion_tokens == 5u);
    CHECK(entries[1].text == "second");
    CHECK_FALSE(entries[1].prompt_tokens.has_value());
    CHECK_THROWS_AS(ScriptedBackend::parse_script("### RESPONSE colour=blue\nx\n"), ParseError);

    ScriptedBackend backend(entries);
    auto conv = opening();
    CHECK(backend.quote(conv, kModel).prompt_tokens == 10);
    CHECK(backend.send(conv, kModel, 1s).text == "first\nline");
    CHECK(backend.remaining() == 1);
    backend.send(conv, kModel, 1s);
    CHECK_THROWS_AS(backend.send(conv, kModel, 1s), Error);
}

TEST_CASE("gateway configuration errors")
{
    CountingBackend b;
    CHECK_THROWS_AS(Gateway(GatewayMode::Record, &b, std::nullopt), ConfigError);
    CHECK_THROWS_AS(Gateway(GatewayMode::Replay, nullptr, std::nullopt), ConfigError);
    CHECK_THROWS_AS(Gateway(GatewayMode::Live, nullptr, std::nullopt), ConfigError);
    CHECK(parse_gateway_mode("replay") == GatewayMode::Replay);
    CHECK_FALSE(parse_gateway_mode("offline").has_value());
}

TEST_CASE("record then replay returns identical completions without the backend")
{
    TempDir tmp;
    CountingBackend backend;
    Gateway rec(GatewayMode::Record, &backend, tmp.path());
    BudgetLedger l1(5.0, 60s, prices());
    auto conv = opening();
    auto first = rec.complete(conv, kModel, l1);
    CHECK(backend.sends == 1);
    CHECK(fs::exists(tmp.path() / (record_key(conv, kModel) + ".json")));

    Gateway rep(GatewayMode::Replay, nullptr, tmp.path());
    BudgetLedger l2(5.0, 60s, prices());
    auto again = rep.complete(conv, kModel, l2);
    CHECK(again.text == first.text);
    CHECK(again.usage.prompt_tokens == first.usage.prompt_tokens);
    CHECK(l2.spent_usd() == doctest::Approx(l1.spent_usd()));

    auto other = opening("different");
    try {
        rep.complete(other, kModel, l2);
        FAIL("expected a replay miss");
    } catch (const ReplayMiss& e) {
        CHECK(e.digest() == record_key(other, kModel));
        CHECK(e.turn_index() == 1);
    }
}

TEST_CASE("gateway refuses before sending when the quote would overrun")
{
    CountingBackend backend; // 100 prompt + 50 completion tokens = 0.2 USD
    Gateway gw(GatewayMode::Live, &backend, std::nullopt);
    BudgetLedger ledger(0.5, 60s, prices());
    auto conv = opening();
    gw.complete(conv, kModel, ledger);
    gw.complete(conv, kModel, ledger);
    CHECK(backend.sends == 2);
    CHECK_THROWS_AS(gw.complete(conv, kModel, ledger), BudgetExhausted);
    CHECK(backend.sends == 2);
    CHECK(ledger.spent_usd() == doctest::Approx(0.4));
    CHECK(ledger.charges().size() == 2);
}

TEST_CASE("gateway refuses once the time budget is spent")
{
    CountingBackend backend;
    Gateway gw(GatewayMode::Live, &backend, std::nullopt);
    auto now = std::chrono::steady_clock::time_point{};
    BudgetLedger ledger(5.0, 1s, prices(), [&] { return now; });
    now += 2s;
    CHECK_THROWS_AS(gw.complete(opening(), kModel, ledger), TimeExhausted);
    CHECK(backend.sends == 0);
}

TEST_CASE("gateway rejects a conversation that does not await the model")
{
    CountingBackend backend;
    Gateway gw(GatewayMode::Live, &backend, std::nullopt);
    BudgetLedger ledger(5.0, 60s, prices());
    Conversation empty{"s", {}};
    CHECK_THROWS_AS(gw.complete(empty, kModel, ledger), Error);
}

TEST_CASE("http backend speaks the chat-completions wire format")
{
    httplib::Server server;
    std::atomic<int> hits{0};
    json seen;
    std::string auth;
    server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
        if (hits++ == 0) {
            res.status = 503;
            return;
        }
        seen = json::parse(req.body);
        auth = req.get_header_value("Authorization");
        json reply{{"choices", {{{"message", {{"role", "assistant"}, {"content", "pong"}}}}}},
                   {"usage", {{"prompt_tokens", 12}, {"completion_tokens", 3}}}};
        res.set_content(reply.dump(), "application/json");
    });
    server.Post("/bad/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
        res.status = 400;
        res.set_content("nope", "text/plain");
    });
    int port = server.bind_to_any_port("127.0.0.1");
    std::thread th([&] { server.listen_after_bind(); });
    server.wait_until_ready();

    HttpBackend backend({"http://127.0.0.1:" + std::to_string(port) + "/v1/", "secret", 256, 2});
    Conversation conv{"sys", {}};
    conv.add_framework("ping");
    auto c = backend.send(conv, kModel, 30s);
    CHECK(c.text == "pong");
    CHECK(c.usage.prompt_tokens == 12);
    CHECK(c.usage.completion_tokens == 3);
    CHECK(hits == 2);
    CHECK(auth == "Bearer secret");
    CHECK(seen["model"] == kModel);
    CHECK(seen["max_tokens"] == 256);
    REQUIRE(seen["messages"].size() == 2);
    CHECK(seen["messages"][0]["role"] == "system");
    CHECK(seen["messages"][1]["content"] == "ping");

    auto q = backend.quote(conv, kModel);
    CHECK(q.prompt_tokens >= std::string("sysping").size());
    CHECK(q.completion_tokens == 256);

    HttpBackend bad({"http://127.0.0.1:" + std::to_string(port) + "/bad", "", 16, 0});
    CHECK_THROWS_AS(bad.send(conv, kModel, 30s), TransportError);

    server.stop();
    th.join();

    CHECK_THROWS_AS(HttpBackend::parse_response("{}"), TransportError);
    CHECK_THROWS_AS(HttpBackend::parse_response("not json"), TransportError);
    CHECK_THROWS_AS(HttpBackend(HttpBackendConfig{}), ConfigError);
}
