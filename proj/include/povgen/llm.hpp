#pragma once

#include "povgen/error.hpp"

#include <chrono>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace povgen {

enum class Speaker { AgentFramework, Model };

std::string_view to_string(Speaker s);

struct Turn {
    Speaker speaker = Speaker::AgentFramework;
    std::string text;

    bool operator==(const Turn&) const = default;
};

// Turns alternate, starting with the framework. The append helpers enforce it.
struct Conversation {
    std::string system_prompt;
    std::vector<Turn> turns;

    void add_framework(std::string text);
    void add_model(std::string text);
    Speaker next_speaker() const noexcept;

    bool operator==(const Conversation&) const = default;
};

struct Usage {
    std::uint64_t prompt_tokens = 0;
    std::uint64_t completion_tokens = 0;
    std::chrono::milliseconds wall_time{0};
};

struct ModelPrice {
    double usd_per_1k_prompt_tokens = 0;
    double usd_per_1k_completion_tokens = 0;
};

class PriceTable {
public:
    PriceTable() = default;
    explicit PriceTable(std::map<std::string, ModelPrice> prices) : prices_(std::move(prices)) {}

    // {"models": {"<id>": {"usd_per_1k_prompt_tokens": x, "usd_per_1k_completion_tokens": y}}}
    static PriceTable from_json_text(std::string_view text);
    static PriceTable load(const std::filesystem::path& path);

    void set(const std::string& model_id, ModelPrice price) { prices_[model_id] = price; }
    bool contains(const std::string& model_id) const { return prices_.contains(model_id); }
    // Throws ConfigError for unknown models.
    const ModelPrice& price(const std::string& model_id) const;
    double cost(const std::string& model_id, const Usage& usage) const;

private:
    std::map<std::string, ModelPrice> prices_;
};

struct ChargeRecord {
    std::string model_id;
    Usage usage;
    double cost_usd = 0;
};

// Money and wall-clock accounting for one task pipeline. Not thread-safe: a
// ledger belongs to a single pipeline.
class BudgetLedger {
public:
    using Clock = std::function<std::chrono::steady_clock::time_point()>;

    BudgetLedger(double cap_usd, std::chrono::milliseconds cap_time, PriceTable prices, Clock clock = {});

    double spent_usd() const noexcept { return spent_usd_; }
    double cap_usd() const noexcept { return cap_usd_; }
    std::chrono::milliseconds cap_time() const noexcept { return cap_time_; }
    std::chrono::milliseconds elapsed() const;
    std::chrono::milliseconds remaining_time() const;
    bool time_exhausted() const { return remaining_time().count() <= 0; }
    bool would_exceed(double cost_usd) const noexcept { return spent_usd_ + cost_usd > cap_usd_; }
    bool money_exhausted() const noexcept { return spent_usd_ >= cap_usd_; }

    const PriceTable& prices() const noexcept { return prices_; }
    const std::vector<ChargeRecord>& charges() const noexcept { return charges_; }

    // Adds the cost of `usage`. Never called with a cost that would_exceed().
    double charge(const std::string& model_id, const Usage& usage);

private:
    double cap_usd_;
    std::chrono::milliseconds cap_time_;
    PriceTable prices_;
    Clock clock_;
    std::chrono::steady_clock::time_point start_;
    double spent_usd_ = 0;
    std::vector<ChargeRecord> charges_;
};

class BudgetExhausted : public Error {
public:
    BudgetExhausted(const std::string& what, BudgetLedger ledger) : Error(what), ledger_(std::move(ledger)) {}
    const BudgetLedger& ledger() const noexcept { return ledger_; }

private:
    BudgetLedger ledger_;
};

class TimeExhausted : public Error {
public:
    using Error::Error;
};

class ReplayMiss : public Error {
public:
    ReplayMiss(std::string digest, std::size_t turn_index);
    const std::string& digest() const noexcept { return digest_; }
    std::size_t turn_index() const noexcept { return turn_index_; }

private:
    std::string digest_;
    std::size_t turn_index_;
};

// Content hash over (model id, system prompt, every turn in order).
std::string record_key(const Conversation& conv, std::string_view model_id);

struct Completion {
    std::string text;
    Usage usage;
};

class ModelBackend {
public:
    virtual ~ModelBackend() = default;
    // Upper bound on the usage of the next send() for this conversation.
    virtual Usage quote(const Conversation& conv, const std::string& model_id) = 0;
    virtual Completion send(const Conversation& conv, const std::string& model_id, std::chrono::milliseconds deadline) = 0;
};

// Serves a fixed list of responses in order. Used for fixtures and for
// capturing replay caches without a network.
class ScriptedBackend : public ModelBackend {
public:
    struct Entry {
        std::string text;
        std::optional<std::uint64_t> prompt_tokens;
        std::optional<std::uint64_t> completion_tokens;
    };

    explicit ScriptedBackend(std::vector<Entry> entries);

    // Text format: entries separated by lines starting with "### RESPONSE",
    // optionally followed by "prompt_tokens=N completion_tokens=M".
    static std::vector<Entry> parse_script(std::string_view text);
    static ScriptedBackend from_file(const std::filesystem::path& path);

    Usage quote(const Conversation& conv, const std::string& model_id) override;
    Completion send(const Conversation& conv, const std::string& model_id, std::chrono::milliseconds deadline) override;

    std::size_t calls_issued() const noexcept { return calls_; }
    std::size_t remaining() const noexcept { return entries_.size(); }

private:
    Usage usage_for(const Conversation& conv, const Entry& e) const;

    std::deque<Entry> entries_;
    std::size_t calls_ = 0;
};

struct HttpBackendConfig {
    // e.g. "https://api.openai.com/v1"; requests go to <base_url>/chat/completions
    std::string base_url;
    std::string api_key;
    std::uint64_t max_completion_tokens = 4096;
    int retries = 2;

    // POVGEN_API_BASE, POVGEN_API_KEY, POVGEN_MAX_COMPLETION_TOKENS
    static HttpBackendConfig from_env();
};

// Chat-completions client (OpenAI-compatible wire format).
class HttpBackend : public ModelBackend {
public:
    explicit HttpBackend(HttpBackendConfig cfg);

    Usage quote(const Conversation& conv, const std::string& model_id) override;
    Completion send(const Conversation& conv, const std::string& model_id, std::chrono::milliseconds deadline) override;

    static std::string request_body(const Conversation& conv, const std::string& model_id, std::uint64_t max_tokens);
    static Completion parse_response(std::string_view body);

private:
    HttpBackendConfig cfg_;
};

enum class GatewayMode { Live, Record, Replay };

std::string_view to_string(GatewayMode m);
std::optional<GatewayMode> parse_gateway_mode(std::string_view s);

// Stateless per call; share one instance across pipelines only if the
// backend itself is thread-safe (HttpBackend is, ScriptedBackend is not).
class Gateway {
public:
    Gateway(GatewayMode mode, ModelBackend* backend, std::optional<std::filesystem::path> cache_dir);

    // Charges the ledger before returning. Throws BudgetExhausted or
    // TimeExhausted without contacting the backend when the call cannot fit.
    Completion complete(const Conversation& conv, const std::string& model_id, BudgetLedger& ledger);

    // Replay path only, ledger-free.
    Completion replay_complete(const Conversation& conv, const std::string& model_id) const;

    GatewayMode mode() const noexcept { return mode_; }

private:
    std::filesystem::path cache_file(const std::string& digest) const;
    void write_cache(const std::string& digest, const std::string& model_id, const Completion& c) const;

    GatewayMode mode_;
    ModelBackend* backend_;
    std::optional<std::filesystem::path> cache_dir_;
};

} // namespace povgen
