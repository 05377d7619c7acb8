#pragma once

#include "povgen/structured.hpp"

#include <random>
#include <string>
#include <vector>

namespace povgen::testing {

// Random text over an alphabet that includes JSON and tag metacharacters and
// multi-byte UTF-8 sequences.
class TextGen {
public:
    explicit TextGen(std::uint32_t seed) : rng_(seed) {}

    std::string text(std::size_t max_len, bool allow_newline = true)
    {
        static const std::vector<std::string> pieces{
            "a", "Z", "0", " ", "_", "\"", "\\", "{", "}", "<", ">", "/", ":", ",", "[", "]", "'", "\t",
            "<FLOW>", "</SEQUENCE>", "<DONE>", "<TOOL>", "...", "1. ", "\xC3\xA9", "\xE2\x86\x92", "\xF0\x9F\x94\x92", "\n"};
        std::size_t len = std::uniform_int_distribution<std::size_t>(0, max_len)(rng_);
        std::string out;
        for (std::size_t i = 0; i < len; ++i) {
            const auto& p = pieces[std::uniform_int_distribution<std::size_t>(0, pieces.size() - 1)(rng_)];
            if (!allow_newline && (p == "\n" || p == "\t")) {
                continue;
            }
            out += p;
        }
        return out;
    }

    // Non-blank, without surrounding whitespace.
    std::string word(std::size_t max_len, bool allow_newline = true)
    {
        std::string s;
        while (true) {
            s = text(max_len, allow_newline);
            auto b = s.find_first_not_of(" \t\n");
            if (b == std::string::npos) {
                continue;
            }
            auto e = s.find_last_not_of(" \t\n");
            return s.substr(b, e - b + 1);
        }
    }

    std::size_t pick(std::size_t lo, std::size_t hi) { return std::uniform_int_distribution<std::size_t>(lo, hi)(rng_); }
    bool coin() { return pick(0, 1) == 1; }
    std::mt19937& rng() { return rng_; }

private:
    std::mt19937 rng_;
};

inline Flow random_flow(TextGen& g)
{
    Flow f;
    std::size_t n = g.pick(2, 6);
    for (std::size_t i = 0; i < n; ++i) {
        FlowPoint p;
        p.role = i == 0 ? FlowRole::Source : (i + 1 == n ? FlowRole::Sink : FlowRole::Intermediate);
        p.code = g.word(30);
        p.variable = g.text(10);
        p.file = g.word(20);
        if (g.coin()) {
            p.remarks = g.text(40);
        }
        f.points.push_back(std::move(p));
    }
    return f;
}

inline BranchSequence random_branches(TextGen& g)
{
    static const std::vector<std::string> others{"While-Loop", "Assert", "Guard clause", "for"};
    BranchSequence seq;
    std::size_t n = g.pick(0, 6);
    for (std::size_t i = 0; i < n; ++i) {
        BranchPoint b;
        switch (g.pick(0, 3)) {
        case 0:
            b.type = {BranchKind::IfElse, {}};
            break;
        case 1:
            b.type = {BranchKind::TryExcept, {}};
            break;
        case 2:
            b.type = {BranchKind::Switch, {}};
            break;
        default:
            b.type = {BranchKind::Other, others[g.pick(0, others.size() - 1)]};
        }
        b.code = g.word(30);
        b.file = g.text(20);
        b.outcome = g.word(30);
        seq.push_back(std::move(b));
    }
    return seq;
}

inline ConditionList random_conditions(TextGen& g)
{
    ConditionList c;
    std::size_t n = g.pick(1, 8);
    for (std::size_t i = 0; i < n; ++i) {
        c.conditions.push_back(g.word(40, false));
    }
    return c;
}

// Fuzz case i: raw bytes, metacharacter soup or a mutated well-formed reply.
inline std::string fuzz_input(int i, std::mt19937& rng, TextGen& g)
{
    static const std::vector<std::string> seeds{
        "<FLOW>\n{\"role\":\"Source\",\"code\":\"a\",\"file\":\"f\"}\n{\"role\":\"Sink\",\"code\":\"b\",\"file\":\"f\"}\n</FLOW>",
        "<SEQUENCE>\n{\"type\":\"If-Else\",\"code\":\"if (x)\",\"file\":\"f\",\"outcome\":\"true\"}\n</SEQUENCE>",
        "<CONDITIONS>\n1. a\n2. b\n</CONDITIONS>", "<TOOL>\nWrite\npath: a\ncontent: <<EOF\nx\nEOF\n</TOOL>", "<DONE>"};
    std::string input;
    switch (i % 3) {
    case 0: { // raw bytes
        std::size_t len = std::uniform_int_distribution<std::size_t>(0, 300)(rng);
        for (std::size_t k = 0; k < len; ++k) {
            input.push_back(static_cast<char>(std::uniform_int_distribution<int>(0, 255)(rng)));
        }
        break;
    }
    case 1: // metacharacter soup
        input = g.text(120);
        break;
    default: { // mutated well-formed reply
        input = seeds[i % seeds.size()];
        int edits = std::uniform_int_distribution<int>(1, 6)(rng);
        for (int e = 0; e < edits && !input.empty(); ++e) {
            std::size_t pos = std::uniform_int_distribution<std::size_t>(0, input.size() - 1)(rng);
            switch (std::uniform_int_distribution<int>(0, 2)(rng)) {
            case 0:
                input.erase(pos, 1);
                break;
            case 1:
                input.insert(pos, 1, static_cast<char>(std::uniform_int_distribution<int>(0, 255)(rng)));
                break;
            default:
                input.insert(pos, g.text(8));
            }
        }
    }
    }
    return input;
}

} // namespace povgen::testing
