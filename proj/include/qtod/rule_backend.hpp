// Copyright 2026 The qtod Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// Deterministic rule-based generator for desk-scale end-to-end runs.
//
// User utterances are read with a small grammar:
//
//   request:  <opener> a|an [price] [food/type ...] <noun> [in the <area> [part of the city]]
//   revision: how about|what about [a|an|the] [price] [food/type ...] [<noun>|one] [in the <area>]
//             how about the <area>
//   null:     utterances made only of pleasantries ("thanks!", "hi", "bye")
//
// A request starts a fresh requirement frame; a revision overrides only the
// slots it mentions. The query is rendered as
// "find a|an {price} {food} {noun} in the {area}" with absent slots omitted.
// The response lists the names of the knowledge records whose values satisfy
// every constraint of that frame.

#include <algorithm>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qtod/backend.hpp"
#include "qtod/dialogue.hpp"
#include "qtod/kb.hpp"
#include "qtod/prompts.hpp"
#include "qtod/text.hpp"

namespace qtod {

struct RuleGrammar {
    std::vector<std::string> prices{"cheap", "moderate", "expensive"};
    std::vector<std::string> areas{"north", "south", "east", "west", "centre"};
    std::vector<std::string> nouns{"restaurant", "hotel", "attraction", "place"};
    std::vector<std::string> openers{"find",       "i need",      "i want",           "i'm looking for",
                                     "im looking for", "i am looking for", "looking for", "i would like"};
    std::set<std::string> pleasantry_words{"thanks", "thank", "you", "very", "much", "hi",    "hello", "hey",
                                           "bye",    "goodbye", "ok",  "okay", "great", "cheers", "that", "is",
                                           "all",    "no",     "good", "day", "have", "a",    "nice", "perfect"};

    bool is_price(const std::string& w) const { return contains(prices, w); }
    bool is_area(const std::string& w) const { return contains(areas, w); }
    bool is_noun(const std::string& w) const { return contains(nouns, w); }

    static const RuleGrammar& standard() {
        static const RuleGrammar grammar;
        return grammar;
    }

private:
    static bool contains(const std::vector<std::string>& v, const std::string& w) {
        return std::find(v.begin(), v.end(), w) != v.end();
    }
};

struct RuleFrame {
    std::optional<std::string> price;
    std::optional<std::string> food;
    std::optional<std::string> noun;
    std::optional<std::string> area;

    bool empty() const { return !price && !food && !noun && !area; }

    /// Values a record must carry to satisfy the frame (the noun is not a record value).
    std::vector<std::string> constraints() const {
        std::vector<std::string> out;
        if (price) out.push_back(*price);
        if (food) out.push_back(*food);
        if (area) out.push_back(*area);
        return out;
    }

    void overlay(const RuleFrame& other) {
        if (other.price) price = other.price;
        if (other.food) food = other.food;
        if (other.noun) noun = other.noun;
        if (other.area) area = other.area;
    }

    friend bool operator==(const RuleFrame&, const RuleFrame&) = default;
};

enum class UtteranceKind { request, revision, pleasantry, other };

struct ParsedUtterance {
    UtteranceKind kind = UtteranceKind::other;
    RuleFrame frame;
};

namespace detail {

inline std::vector<std::string> rule_words(std::string_view utterance) {
    std::string cleaned;
    cleaned.reserve(utterance.size());
    for (char ch : utterance) {
        switch (ch) {
            case '.': case ',': case '!': case '?': case ';': case ':': case '"':
                cleaned.push_back(' ');
                break;
            default:
                cleaned.push_back(ascii_lower(ch));
        }
    }
    return split_whitespace(cleaned);
}

inline bool words_match_at(const std::vector<std::string>& words, std::size_t at,
                           const std::vector<std::string>& phrase) {
    if (at + phrase.size() > words.size()) return false;
    for (std::size_t i = 0; i < phrase.size(); ++i) {
        if (words[at + i] != phrase[i]) return false;
    }
    return true;
}

// [a|an|the] [price] [food ...] [noun|one] [in the <area> [part of the city|town]]
inline std::optional<RuleFrame> parse_description(std::vector<std::string> words, const RuleGrammar& g) {
    RuleFrame frame;
    // Area clause.
    for (std::size_t i = 0; i + 2 < words.size(); ++i) {
        if (words[i] == "in" && words[i + 1] == "the" && g.is_area(words[i + 2])) {
            std::vector<std::string> tail(words.begin() + static_cast<std::ptrdiff_t>(i + 3), words.end());
            const bool tail_ok = tail.empty() || tail == std::vector<std::string>{"part", "of", "the", "city"} ||
                                 tail == std::vector<std::string>{"part", "of", "the", "town"} ||
                                 tail == std::vector<std::string>{"part", "of", "town"};
            if (!tail_ok) return std::nullopt;
            frame.area = words[i + 2];
            words.resize(i);
            break;
        }
    }
    std::size_t begin = 0;
    if (begin < words.size() && (words[begin] == "a" || words[begin] == "an" || words[begin] == "the")) ++begin;
    if (begin < words.size() && g.is_price(words[begin])) frame.price = words[begin++];
    std::size_t end = words.size();
    if (end > begin && g.is_noun(words[end - 1])) {
        frame.noun = words[end - 1];
        --end;
    } else if (end > begin && words[end - 1] == "one") {
        --end;
    }
    if (end > begin) {
        std::vector<std::string> food(words.begin() + static_cast<std::ptrdiff_t>(begin),
                                      words.begin() + static_cast<std::ptrdiff_t>(end));
        for (const auto& w : food) {
            if (g.is_area(w) || g.is_price(w) || g.is_noun(w) || w == "in" || w == "the") return std::nullopt;
        }
        frame.food = join(food, " ");
    }
    return frame;
}

}  // namespace detail

inline ParsedUtterance parse_rule_utterance(std::string_view utterance,
                                            const RuleGrammar& g = RuleGrammar::standard()) {
    ParsedUtterance out;
    auto words = detail::rule_words(utterance);
    if (words.empty()) return out;

    if (std::all_of(words.begin(), words.end(),
                    [&](const std::string& w) { return g.pleasantry_words.count(w) != 0; })) {
        out.kind = UtteranceKind::pleasantry;
        return out;
    }

    for (std::size_t at = 0; at < words.size(); ++at) {
        // Revision.
        if (at + 1 < words.size() && (words[at] == "how" || words[at] == "what") && words[at + 1] == "about") {
            std::vector<std::string> rest(words.begin() + static_cast<std::ptrdiff_t>(at + 2), words.end());
            std::vector<std::string> bare = rest;
            if (!bare.empty() && (bare[0] == "the" || bare[0] == "a" || bare[0] == "an")) bare.erase(bare.begin());
            if (bare.size() == 1 && g.is_area(bare[0])) {
                out.kind = UtteranceKind::revision;
                out.frame.area = bare[0];
                return out;
            }
            if (bare.size() == 1 && g.is_price(bare[0])) {
                out.kind = UtteranceKind::revision;
                out.frame.price = bare[0];
                return out;
            }
            auto frame = detail::parse_description(rest, g);
            if (frame && !frame->empty()) {
                out.kind = UtteranceKind::revision;
                out.frame = *frame;
            }
            return out;
        }
        // Request.
        for (const auto& opener : g.openers) {
            auto phrase = split_whitespace(opener);
            if (!detail::words_match_at(words, at, phrase)) continue;
            std::vector<std::string> rest(words.begin() + static_cast<std::ptrdiff_t>(at + phrase.size()),
                                          words.end());
            if (rest.empty() || (rest[0] != "a" && rest[0] != "an")) return out;
            auto frame = detail::parse_description(rest, g);
            if (frame && frame->noun) {
                out.kind = UtteranceKind::request;
                out.frame = *frame;
            }
            return out;
        }
    }
    return out;
}

inline std::string render_rule_query(const RuleFrame& frame) {
    std::vector<std::string> words;
    if (frame.price) words.push_back(*frame.price);
    if (frame.food) words.push_back(*frame.food);
    if (frame.noun) words.push_back(*frame.noun);
    std::string out = "find";
    if (!words.empty()) {
        const char first = words.front().empty() ? 'x' : words.front().front();
        const bool vowel = first == 'a' || first == 'e' || first == 'i' || first == 'o' || first == 'u';
        out += vowel ? " an " : " a ";
        out += join(words, " ");
    }
    if (frame.area) {
        out += " in the ";
        out += *frame.area;
    }
    return out;
}

struct RuleState {
    RuleFrame frame;
    UtteranceKind last_kind = UtteranceKind::other;
    std::string last_utterance;
};

inline RuleState rule_state(std::span<const DialogueTurn> turns, const RuleGrammar& g = RuleGrammar::standard()) {
    RuleState state;
    for (const auto& turn : turns) {
        if (turn.speaker != Speaker::user) continue;
        auto parsed = parse_rule_utterance(turn.text, g);
        if (parsed.kind == UtteranceKind::request) {
            state.frame = parsed.frame;
        } else if (parsed.kind == UtteranceKind::revision) {
            state.frame.overlay(parsed.frame);
        }
        state.last_kind = parsed.kind;
        state.last_utterance = std::string(trim(turn.text));
    }
    return state;
}

/// Latest requirements of the user, or [NOTHING] for pleasantry turns.
/// Utterances outside the grammar are echoed verbatim.
inline std::string rule_query(std::span<const DialogueTurn> turns, const RuleGrammar& g = RuleGrammar::standard()) {
    auto state = rule_state(turns, g);
    switch (state.last_kind) {
        case UtteranceKind::pleasantry: return std::string(kNullToken);
        case UtteranceKind::other: return state.last_utterance;
        case UtteranceKind::request:
        case UtteranceKind::revision: break;
    }
    return render_rule_query(state.frame);
}

inline std::string rule_query(const DialogueContext& context, const RuleGrammar& g = RuleGrammar::standard()) {
    return rule_query(std::span<const DialogueTurn>(context.turns()), g);
}

inline bool satisfies(std::span<const std::string> record_values, const RuleFrame& frame) {
    std::set<std::string> values;
    for (const auto& v : record_values) values.insert(canonicalize(v));
    for (const auto& c : frame.constraints()) {
        if (values.count(canonicalize(c)) == 0) return false;
    }
    return true;
}

inline constexpr std::string_view kNoMatchResponse = "no matching options";
inline constexpr std::string_view kPleasantryResponse = "you are welcome";

inline std::string render_options_response(std::span<const std::string> names) {
    if (names.empty()) return std::string(kNoMatchResponse);
    return "there are " + std::to_string(names.size()) + " options: " + join(names, " and ");
}

/// Records are value lists in rank order; the first value is the record name.
inline std::string rule_response(std::span<const std::vector<std::string>> records, std::span<const DialogueTurn> turns,
                                 const RuleGrammar& g = RuleGrammar::standard()) {
    auto state = rule_state(turns, g);
    if (state.last_kind == UtteranceKind::pleasantry) return std::string(kPleasantryResponse);
    std::vector<std::string> names;
    for (const auto& values : records) {
        if (values.empty()) continue;
        if (satisfies(values, state.frame)) names.push_back(values.front());
    }
    return render_options_response(names);
}

inline std::string rule_response(std::span<const KnowledgeRecord> records, const DialogueContext& context,
                                 const RuleGrammar& g = RuleGrammar::standard()) {
    std::vector<std::vector<std::string>> value_lists;
    for (const auto& r : records) {
        auto values = r.values();
        if (const auto* name = r.value_of("name")) {
            values.erase(std::find(values.begin(), values.end(), *name));
            values.insert(values.begin(), *name);
        }
        value_lists.push_back(std::move(values));
    }
    return rule_response(value_lists, std::span<const DialogueTurn>(context.turns()), g);
}

class RuleBackend final : public Backend {
public:
    explicit RuleBackend(RuleGrammar grammar = RuleGrammar::standard(), std::size_t input_budget = kDefaultInputBudget)
        : grammar_(std::move(grammar)), budget_(input_budget) {}

    GenerationResponse generate(const GenerationRequest& request) const override {
        request.validate();
        const auto start = std::chrono::steady_clock::now();
        std::string text;
        switch (request.task) {
            case Task::query: {
                auto turns = parse_query_prompt(request.prompt);
                if (!turns) throw BackendError(BackendErrorKind::protocol, "rule backend: malformed query prompt");
                text = rule_query(std::span<const DialogueTurn>(*turns), grammar_);
                break;
            }
            case Task::response: {
                auto parsed = parse_response_prompt(request.prompt);
                if (!parsed) throw BackendError(BackendErrorKind::protocol, "rule backend: malformed response prompt");
                text = rule_response(parsed->records, parsed->turns, grammar_);
                break;
            }
            case Task::relevance: {
                auto parsed = parse_relevance_prompt(request.prompt);
                if (!parsed) throw BackendError(BackendErrorKind::protocol, "rule backend: malformed relevance prompt");
                auto utterance = parse_rule_utterance(parsed->first, grammar_);
                auto values = split(parsed->second, ", ");
                const bool matched = utterance.kind == UtteranceKind::request &&
                                     !utterance.frame.constraints().empty() && satisfies(values, utterance.frame);
                text = std::string(matched ? kMatchedLabel : kMismatchedLabel);
                break;
            }
        }
        std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
        return {std::move(text), id(), elapsed.count()};
    }

    std::string id() const override { return "rule"; }
    std::size_t input_budget() const override { return budget_; }
    const RuleGrammar& grammar() const noexcept { return grammar_; }

private:
    RuleGrammar grammar_;
    std::size_t budget_;
};

}  // namespace qtod
