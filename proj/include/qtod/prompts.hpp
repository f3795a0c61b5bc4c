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

// Task prompts for the shared text-to-text generator.
//
//   query:    "translate dialogue context to query: <context>"
//   response: "generate system response based on knowledge and dialogue context:
//              knowledge: <r1>; <r2>; ... context: <context>"
//
// <context> is serialize_context(); an empty knowledge list renders as [NOTHING].
// The parse_* helpers invert the rendering for backends that only see prompt text.

#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "qtod/dialogue.hpp"
#include "qtod/kb.hpp"
#include "qtod/text.hpp"

namespace qtod {

inline constexpr std::string_view kQueryPromptPrefix = "translate dialogue context to query:";
inline constexpr std::string_view kResponsePromptPrefix =
    "generate system response based on knowledge and dialogue context:";
inline constexpr std::string_view kKnowledgeMarker = " knowledge: ";
inline constexpr std::string_view kContextMarker = " context: ";
inline constexpr std::string_view kRecordSeparator = "; ";

inline std::string render_query_prompt(const DialogueContext& context) {
    std::string out(kQueryPromptPrefix);
    out += ' ';
    out += serialize_context(context);
    return out;
}

inline std::string render_knowledge(std::span<const std::string> linearized) {
    if (linearized.empty()) return std::string(kNullToken);
    return join(linearized, kRecordSeparator);
}

inline std::string render_response_prompt_linearized(std::span<const std::string> linearized,
                                                     const DialogueContext& context) {
    std::string out(kResponsePromptPrefix);
    out += kKnowledgeMarker;
    out += render_knowledge(linearized);
    out += kContextMarker;
    out += serialize_context(context);
    return out;
}

inline std::string render_response_prompt(std::span<const KnowledgeRecord> records, const DialogueContext& context,
                                          LinearizationStyle style = LinearizationStyle::values) {
    std::vector<std::string> linearized;
    linearized.reserve(records.size());
    for (const auto& r : records) linearized.push_back(linearize_record(r, style));
    return render_response_prompt_linearized(linearized, context);
}

/// Splits a serialized context back into turns. Returns nullopt when the text
/// does not start with a speaker tag.
inline std::optional<std::vector<DialogueTurn>> parse_serialized_context(std::string_view text) {
    constexpr std::string_view kUser = "user: ";
    constexpr std::string_view kSystem = "system: ";
    std::vector<DialogueTurn> turns;
    std::size_t pos = 0;
    auto tag_at = [&](std::size_t p) -> std::optional<Speaker> {
        if (text.substr(p, kUser.size()) == kUser) return Speaker::user;
        if (text.substr(p, kSystem.size()) == kSystem) return Speaker::system;
        return std::nullopt;
    };
    auto first = tag_at(0);
    if (!first) return std::nullopt;
    Speaker speaker = *first;
    pos = speaker == Speaker::user ? kUser.size() : kSystem.size();
    while (true) {
        // Next boundary: " user: " or " system: " where the speaker alternates.
        const Speaker next = speaker == Speaker::user ? Speaker::system : Speaker::user;
        const std::string marker = std::string(" ") + std::string(next == Speaker::user ? kUser : kSystem);
        auto found = text.find(marker, pos);
        if (found == std::string_view::npos) {
            turns.push_back({speaker, std::string(text.substr(pos))});
            return turns;
        }
        turns.push_back({speaker, std::string(text.substr(pos, found - pos))});
        pos = found + marker.size();
        speaker = next;
    }
}

struct ParsedResponsePrompt {
    std::vector<std::vector<std::string>> records;  // value lists, in ranking order
    std::vector<DialogueTurn> turns;
};

inline std::optional<std::vector<DialogueTurn>> parse_query_prompt(std::string_view prompt) {
    if (!starts_with(prompt, kQueryPromptPrefix)) return std::nullopt;
    return parse_serialized_context(trim(prompt.substr(kQueryPromptPrefix.size())));
}

inline std::optional<ParsedResponsePrompt> parse_response_prompt(std::string_view prompt) {
    if (!starts_with(prompt, kResponsePromptPrefix)) return std::nullopt;
    auto rest = prompt.substr(kResponsePromptPrefix.size());
    if (!starts_with(rest, kKnowledgeMarker)) return std::nullopt;
    rest = rest.substr(kKnowledgeMarker.size());
    auto ctx = rest.find(kContextMarker);
    if (ctx == std::string_view::npos) return std::nullopt;
    auto knowledge = rest.substr(0, ctx);
    auto turns = parse_serialized_context(rest.substr(ctx + kContextMarker.size()));
    if (!turns) return std::nullopt;
    ParsedResponsePrompt parsed;
    parsed.turns = std::move(*turns);
    if (knowledge != kNullToken) {
        for (const auto& record : split(knowledge, kRecordSeparator)) parsed.records.push_back(split(record, ", "));
    }
    return parsed;
}

}  // namespace qtod
