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

#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qtod/error.hpp"
#include "qtod/text.hpp"

namespace qtod {

/// Marks a turn that needs no retrieval (greetings, thanks). Also used to render
/// an empty knowledge segment.
inline constexpr std::string_view kNullToken = "[NOTHING]";

enum class Speaker { user, system };

inline std::string_view to_string(Speaker speaker) { return speaker == Speaker::user ? "user" : "system"; }

inline Speaker speaker_from_string(std::string_view s) {
    if (s == "user") return Speaker::user;
    if (s == "system") return Speaker::system;
    throw ValidationError("unknown speaker '" + std::string(s) + "'");
}

struct DialogueTurn {
    Speaker speaker;
    std::string text;

    friend bool operator==(const DialogueTurn&, const DialogueTurn&) = default;
};

/// Turns U_0, R_0, ..., U_t: strict user/system alternation, starting and
/// ending with a user turn, no blank utterances.
class DialogueContext {
public:
    DialogueContext(std::vector<DialogueTurn> turns, std::string session_id = {})
        : turns_(std::move(turns)), session_id_(std::move(session_id)) {
        if (turns_.empty()) throw ValidationError("dialogue context is empty");
        for (std::size_t i = 0; i < turns_.size(); ++i) {
            const auto expected = i % 2 == 0 ? Speaker::user : Speaker::system;
            if (turns_[i].speaker != expected) {
                throw ValidationError("dialogue context turn " + std::to_string(i) + " should be a " +
                                      std::string(to_string(expected)) + " turn");
            }
            if (trim(turns_[i].text).empty()) {
                throw ValidationError("dialogue context turn " + std::to_string(i) + " has empty text");
            }
        }
        if (turns_.back().speaker != Speaker::user) {
            throw ValidationError("dialogue context must end with a user turn");
        }
    }

    const std::vector<DialogueTurn>& turns() const noexcept { return turns_; }
    const std::string& session_id() const noexcept { return session_id_; }
    const DialogueTurn& last() const { return turns_.back(); }

    /// Drops the oldest user/system exchanges until `fits` accepts the context
    /// or only the latest user turn remains.
    template <typename Predicate>
    DialogueContext truncated_until(Predicate fits) const {
        std::size_t drop = 0;
        while (drop + 1 < turns_.size()) {
            DialogueContext candidate(std::vector<DialogueTurn>(turns_.begin() + static_cast<std::ptrdiff_t>(drop),
                                                                turns_.end()),
                                      session_id_);
            if (fits(candidate)) return candidate;
            drop += 2;
        }
        return DialogueContext({turns_.back()}, session_id_);
    }

private:
    std::vector<DialogueTurn> turns_;
    std::string session_id_;
};
/// Renders "user: ... system: ... user: ...". Inference prompts, identity
/// queries and exported training data all use this one encoding.
inline std::string serialize_context(const DialogueContext& context) {
    std::string out;
    for (const auto& turn : context.turns()) {
        if (!out.empty()) out += ' ';
        out += to_string(turn.speaker);
        out += ": ";
        out += turn.text;
    }
    return out;
}

class Query {
public:
    static Query text(std::string text, std::string raw_generation) {
        if (trim(text).empty()) throw ContractViolation("text query must not be blank");
        return Query(false, std::move(text), std::move(raw_generation));
    }
    static Query text(std::string text) {
        auto raw = text;
        return Query::text(std::move(text), std::move(raw));
    }
    static Query null(std::string raw_generation = std::string(kNullToken)) {
        return Query(true, {}, std::move(raw_generation));
    }

    /// Interprets raw generator output: "[NOTHING]" (surrounding whitespace
    /// ignored) and blank output are the null query.
    static Query from_generation(std::string raw) {
        auto trimmed = trim(raw);
        if (trimmed.empty() || trimmed == kNullToken) return null(std::move(raw));
        std::string text(trimmed);
        return Query(false, std::move(text), std::move(raw));
    }

    bool is_null() const noexcept { return null_; }
    const std::string& text() const {
        if (null_) throw ContractViolation("null query has no text");
        return text_;
    }
    const std::string& raw_generation() const noexcept { return raw_; }
    std::string display() const { return null_ ? std::string(kNullToken) : text_; }

private:
    Query(bool is_null, std::string text, std::string raw)
        : null_(is_null), text_(std::move(text)), raw_(std::move(raw)) {}

    bool null_;
    std::string text_;
    std::string raw_;
};

}  // namespace qtod
