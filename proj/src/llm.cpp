#include "povgen/llm.hpp"

#include "povgen/digest.hpp"
#include "povgen/fsutil.hpp"

#define CPPHTTPLIB_OPENSSL_SUPPORT
#include <charconv>
#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <sstream>
#include <thread>

namespace povgen {

namespace fs = std::filesystem;
using json = nlohmann::json;
using std::chrono::milliseconds;

std::string_view to_string(Speaker s)
{
    return s == Speaker::AgentFramework ? "agent-framework" : "model";
}

void Conversation::add_framework(std::string text)
{
    if (next_speaker() != Speaker::AgentFramework) {
        throw Error("conversation: framework turn out of order");
    }
    turns.push_back({Speaker::AgentFramework, std::move(text)});
}

void Conversation::add_model(std::string text)
{
    if (next_speaker() != Speaker::Model) {
        throw Error("conversation: model turn out of order");
    }
    turns.push_back({Speaker::Model, std::move(text)});
}

Speaker Conversation::next_speaker() const noexcept
{
    if (turns.empty() || turns.back().speaker == Speaker::Model) {
        return Speaker::AgentFramework;
    }
    return Speaker::Model;
}

PriceTable PriceTable::from_json_text(std::string_view text)
{
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("price table: ") + e.what());
    }
    if (!doc.is_object() || !doc.contains("models") || !doc["models"].is_object()) {
        throw ConfigError("price table: expected {\"models\": {...}}");
    }
    PriceTable table;
    for (const auto& [id, p] : doc["models"].items()) {
        if (!p.is_object() || !p.contains("usd_per_1k_prompt_tokens") || !p.contains("usd_per_1k_completion_tokens")) {
            throw ConfigError("price table: model '" + id + "' needs usd_per_1k_prompt_tokens and usd_per_1k_completion_tokens");
        }
        ModelPrice mp{p["usd_per_1k_prompt_tokens"].get<double>(), p["usd_per_1k_completion_tokens"].get<double>()};
        if (mp.usd_per_1k_prompt_tokens < 0 || mp.usd_per_1k_completion_tokens < 0) {
            throw ConfigError("price table: negative price for '" + id + "'");
        }
        table.set(id, mp);
    }
    return table;
}

PriceTable PriceTable::load(const fs::path& path)
{
    return from_json_text(read_text(path));
}

const ModelPrice& PriceTable::price(const std::string& model_id) const
{
    auto it = prices_.find(model_id);
    if (it == prices_.end()) {
        throw ConfigError("no price configured for model '" + model_id + "'");
    }
    return it->second;
}

double PriceTable::cost(const std::string& model_id, const Usage& usage) const
{
    const auto& p = price(model_id);
    return static_cast<double>(usage.prompt_tokens) / 1000.0 * p.usd_per_1k_prompt_tokens +
           static_cast<double>(usage.completion_tokens) / 1000.0 * p.usd_per_1k_completion_tokens;
}

BudgetLedger::BudgetLedger(double cap_usd, milliseconds cap_time, PriceTable prices, Clock clock)
    : cap_usd_(cap_usd), cap_time_(cap_time), prices_(std::move(prices)), clock_(std::move(clock))
{
    if (!clock_) {
        clock_ = [] { return std::chrono::steady_clock::now(); };
    }
    start_ = clock_();
}

milliseconds BudgetLedger::elapsed() const
{
    return std::chrono::duration_cast<milliseconds>(clock_() - start_);
}

milliseconds BudgetLedger::remaining_time() const
{
    return cap_time_ - elapsed();
}

double BudgetLedger::charge(const std::string& model_id, const Usage& usage)
{
    double cost = prices_.cost(model_id, usage);
    spent_usd_ += cost;
    charges_.push_back({model_id, usage, cost});
    return cost;
}

ReplayMiss::ReplayMiss(std::string digest, std::size_t turn_index)
    : Error("replay cache has no entry " + digest + " (conversation turn " + std::to_string(turn_index) + ")"),
      digest_(std::move(digest)),
      turn_index_(turn_index)
{
}

std::string record_key(const Conversation& conv, std::string_view model_id)
{
    Sha256 h;
    h.field("povgen-record-v1");
    h.field(model_id);
    h.field(conv.system_prompt);
    for (const auto& t : conv.turns) {
        h.field(to_string(t.speaker));
        h.field(t.text);
    }
    return h.hex_digest();
}

namespace {

std::uint64_t rough_tokens(std::size_t bytes)
{
    return static_cast<std::uint64_t>((bytes + 3) / 4);
}

std::size_t conversation_bytes(const Conversation& conv)
{
    std::size_t n = conv.system_prompt.size();
    for (const auto& t : conv.turns) {
        n += t.text.size();
    }
    return n;
}

} // namespace

ScriptedBackend::ScriptedBackend(std::vector<Entry> entries) : entries_(entries.begin(), entries.end()) {}

std::vector<ScriptedBackend::Entry> ScriptedBackend::parse_script(std::string_view text)
{
    static constexpr std::string_view kHeader = "### RESPONSE";
    std::vector<Entry> out;
    std::optional<Entry> cur;
    std::istringstream in{std::string(text)};
    std::string line;
    auto flush = [&] {
        if (cur) {
            // The newline before the next header belongs to the separator.
            if (!cur->text.empty() && cur->text.back() == '\n') {
                cur->text.pop_back();
            }
            out.push_back(std::move(*cur));
            cur.reset();
        }
    };
    while (std::getline(in, line)) {
        if (line.rfind(kHeader, 0) == 0) {
            flush();
            cur = Entry{};
            std::istringstream attrs(line.substr(kHeader.size()));
            std::string kv;
            while (attrs >> kv) {
                auto eq = kv.find('=');
                if (eq == std::string::npos) {
                    throw ParseError("script: bad attribute '" + kv + "'");
                }
                auto key = kv.substr(0, eq);
                auto digits = kv.substr(eq + 1);
                std::uint64_t value = 0;
                auto [end, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
                if (ec != std::errc() || end != digits.data() + digits.size() || digits.empty()) {
                    throw ParseError("script: bad attribute '" + kv + "'");
                }
                if (key == "prompt_tokens") {
                    cur->prompt_tokens = value;
                } else if (key == "completion_tokens") {
                    cur->completion_tokens = value;
                } else {
                    throw ParseError("script: unknown attribute '" + key + "'");
                }
            }
            continue;
        }
        if (!cur) {
            continue; // preamble / comments before the first response
        }
        cur->text += line;
        cur->text += '\n';
    }
    flush();
    return out;
}

ScriptedBackend ScriptedBackend::from_file(const fs::path& path)
{
    return ScriptedBackend(parse_script(read_text(path)));
}

Usage ScriptedBackend::usage_for(const Conversation& conv, const Entry& e) const
{
    Usage u;
    u.prompt_tokens = e.prompt_tokens.value_or(rough_tokens(conversation_bytes(conv)));
    u.completion_tokens = e.completion_tokens.value_or(rough_tokens(e.text.size()));
    return u;
}

Usage ScriptedBackend::quote(const Conversation& conv, const std::string&)
{
    if (entries_.empty()) {
        return {};
    }
    return usage_for(conv, entries_.front());
}

Completion ScriptedBackend::send(const Conversation& conv, const std::string&, milliseconds)
{
    if (entries_.empty()) {
        throw TransportError("scripted backend: script exhausted");
    }
    ++calls_;
    Entry e = std::move(entries_.front());
    entries_.pop_front();
    Completion c;
    c.usage = usage_for(conv, e);
    c.text = std::move(e.text);
    return c;
}

HttpBackendConfig HttpBackendConfig::from_env()
{
    HttpBackendConfig cfg;
    if (const char* v = std::getenv("POVGEN_API_BASE")) {
        cfg.base_url = v;
    }
    if (const char* v = std::getenv("POVGEN_API_KEY")) {
        cfg.api_key = v;
    }
    if (const char* v = std::getenv("POVGEN_MAX_COMPLETION_TOKENS")) {
        cfg.max_completion_tokens = std::stoull(v);
    }
    return cfg;
}

HttpBackend::HttpBackend(HttpBackendConfig cfg) : cfg_(std::move(cfg))
{
    if (cfg_.base_url.empty()) {
        throw ConfigError("live backend: POVGEN_API_BASE is not set");
    }
    while (!cfg_.base_url.empty() && cfg_.base_url.back() == '/') {
        cfg_.base_url.pop_back();
    }
}

Usage HttpBackend::quote(const Conversation& conv, const std::string&)
{
    // Upper bound: one token per byte plus a per-message allowance.
    Usage u;
    u.prompt_tokens = conversation_bytes(conv) + 8 * (conv.turns.size() + 1) + 16;
    u.completion_tokens = cfg_.max_completion_tokens;
    return u;
}

std::string HttpBackend::request_body(const Conversation& conv, const std::string& model_id, std::uint64_t max_tokens)
{
    json messages = json::array();
    messages.push_back({{"role", "system"}, {"content", conv.system_prompt}});
    for (const auto& t : conv.turns) {
        messages.push_back({{"role", t.speaker == Speaker::Model ? "assistant" : "user"}, {"content", t.text}});
    }
    json body{{"model", model_id}, {"messages", messages}, {"max_tokens", max_tokens}, {"temperature", 0}};
    return body.dump();
}

Completion HttpBackend::parse_response(std::string_view body)
{
    json doc;
    try {
        doc = json::parse(body);
    } catch (const json::parse_error& e) {
        throw TransportError(std::string("model response is not JSON: ") + e.what());
    }
    try {
        Completion c;
        const auto& msg = doc.at("choices").at(0).at("message");
        c.text = msg.at("content").is_null() ? std::string() : msg.at("content").get<std::string>();
        if (doc.contains("usage")) {
            c.usage.prompt_tokens = doc["usage"].value("prompt_tokens", std::uint64_t{0});
            c.usage.completion_tokens = doc["usage"].value("completion_tokens", std::uint64_t{0});
        }
        return c;
    } catch (const json::exception& e) {
        throw TransportError(std::string("unexpected model response shape: ") + e.what());
    }
}

Completion HttpBackend::send(const Conversation& conv, const std::string& model_id, milliseconds deadline)
{
    auto scheme_end = cfg_.base_url.find("://");
    auto host_end = cfg_.base_url.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
    std::string origin = cfg_.base_url.substr(0, host_end);
    std::string path = (host_end == std::string::npos ? std::string() : cfg_.base_url.substr(host_end)) + "/chat/completions";

    httplib::Client client(origin);
    auto secs = std::max<long long>(1, deadline.count() / 1000);
    client.set_connection_timeout(std::min<long long>(secs, 30), 0);
    client.set_read_timeout(std::min<long long>(secs, 600), 0);
    client.set_write_timeout(std::min<long long>(secs, 60), 0);
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) {
        headers.emplace("Authorization", "Bearer " + cfg_.api_key);
    }
    std::string body = request_body(conv, model_id, cfg_.max_completion_tokens);

    std::string last_error;
    for (int attempt = 0; attempt <= cfg_.retries; ++attempt) {
        auto started = std::chrono::steady_clock::now();
        auto res = client.Post(path, headers, body, "application/json");
        if (!res) {
            last_error = "request failed: " + httplib::to_string(res.error());
        } else if (res->status == 429 || res->status >= 500) {
            last_error = "HTTP " + std::to_string(res->status);
        } else if (res->status != 200) {
            throw TransportError("HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500));
        } else {
            Completion c = parse_response(res->body);
            c.usage.wall_time = std::chrono::duration_cast<milliseconds>(std::chrono::steady_clock::now() - started);
            return c;
        }
        if (attempt < cfg_.retries) {
            std::this_thread::sleep_for(std::chrono::seconds(1));
        }
    }
    throw TransportError("model backend unreachable after " + std::to_string(cfg_.retries + 1) + " attempts: " + last_error);
}

std::string_view to_string(GatewayMode m)
{
    switch (m) {
    case GatewayMode::Live:
        return "live";
    case GatewayMode::Record:
        return "record";
    case GatewayMode::Replay:
        return "replay";
    }
    return "?";
}

std::optional<GatewayMode> parse_gateway_mode(std::string_view s)
{
    if (s == "live") {
        return GatewayMode::Live;
    }
    if (s == "record") {
        return GatewayMode::Record;
    }
    if (s == "replay") {
        return GatewayMode::Replay;
    }
    return std::nullopt;
}

Gateway::Gateway(GatewayMode mode, ModelBackend* backend, std::optional<fs::path> cache_dir)
    : mode_(mode), backend_(backend), cache_dir_(std::move(cache_dir))
{
    if (mode_ != GatewayMode::Live && !cache_dir_) {
        throw ConfigError(std::string(to_string(mode_)) + " mode requires a cache directory");
    }
    if (mode_ != GatewayMode::Replay && backend_ == nullptr) {
        throw ConfigError("live and record modes require a model backend");
    }
    if (mode_ == GatewayMode::Record) {
        fs::create_directories(*cache_dir_);
    }
}

fs::path Gateway::cache_file(const std::string& digest) const
{
    return *cache_dir_ / (digest + ".json");
}

void Gateway::write_cache(const std::string& digest, const std::string& model_id, const Completion& c) const
{
    json entry{{"model_id", model_id},
               {"text", c.text},
               {"usage",
                {{"prompt_tokens", c.usage.prompt_tokens},
                 {"completion_tokens", c.usage.completion_tokens},
                 {"wall_time_ms", c.usage.wall_time.count()}}}};
    write_atomic(cache_file(digest), entry.dump(2) + "\n");
}

Completion Gateway::replay_complete(const Conversation& conv, const std::string& model_id) const
{
    auto digest = record_key(conv, model_id);
    auto file = cache_file(digest);
    if (!fs::exists(file)) {
        throw ReplayMiss(digest, conv.turns.size());
    }
    json entry;
    try {
        entry = json::parse(read_text(file));
        Completion c;
        c.text = entry.at("text").get<std::string>();
        const auto& u = entry.at("usage");
        c.usage.prompt_tokens = u.at("prompt_tokens").get<std::uint64_t>();
        c.usage.completion_tokens = u.at("completion_tokens").get<std::uint64_t>();
        c.usage.wall_time = milliseconds(u.value("wall_time_ms", std::int64_t{0}));
        return c;
    } catch (const json::exception& e) {
        throw ParseError("corrupt replay cache entry " + file.string() + ": " + e.what());
    }
}

Completion Gateway::complete(const Conversation& conv, const std::string& model_id, BudgetLedger& ledger)
{
    if (conv.next_speaker() != Speaker::Model) {
        throw Error("gateway: conversation must end with a framework turn");
    }
    if (ledger.time_exhausted()) {
        throw TimeExhausted("time budget exhausted after " + std::to_string(ledger.elapsed().count()) + " ms");
    }
    auto refuse = [&](double cost) {
        std::ostringstream msg;
        msg.precision(6);
        msg << std::fixed << "budget exhausted: spent " << ledger.spent_usd() << " of " << ledger.cap_usd()
            << " USD, next call may cost up to " << cost;
        throw BudgetExhausted(msg.str(), ledger);
    };

    if (mode_ == GatewayMode::Replay) {
        Completion c = replay_complete(conv, model_id);
        double cost = ledger.prices().cost(model_id, c.usage);
        if (ledger.would_exceed(cost)) {
            refuse(cost);
        }
        ledger.charge(model_id, c.usage);
        return c;
    }

    double quoted = ledger.prices().cost(model_id, backend_->quote(conv, model_id));
    if (ledger.would_exceed(quoted)) {
        refuse(quoted);
    }
    Completion c = backend_->send(conv, model_id, ledger.remaining_time());
    ledger.charge(model_id, c.usage);
    if (mode_ == GatewayMode::Record) {
        write_cache(record_key(conv, model_id), model_id, c);
    }
    return c;
}

} // namespace povgen
