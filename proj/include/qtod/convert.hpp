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

// Converters from SMD / CamRest / MultiWOZ-style dialogue dumps into the
// dialogue JSON-lines schema. Field names vary between releases, so each
// field is looked up under several common spellings:
//
//   session id  session_id | dialogue_id | id | did
//   domain      domain | task | scenario.task.intent | type
//   turns       turns | dialogue | dialog | log | conversation
//   speaker     speaker | turn | role | author   (driver/usr -> user, assistant/sys -> system)
//   text        text | utterance | content | data.utterance
//   query       gold_query | query | data.query
//   kb          kb | knowledge_base | kb_items | scenario.kb.items
//
// Consecutive turns by the same speaker are joined, leading system turns and a
// trailing unanswered user turn are dropped.

#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "qtod/data.hpp"
#include "qtod/kb.hpp"

namespace qtod {

enum class SourceFormat { smd, camrest, mwoz };

inline SourceFormat source_format_from_string(std::string_view s) {
    if (s == "smd" || s == "kvret") return SourceFormat::smd;
    if (s == "camrest") return SourceFormat::camrest;
    if (s == "mwoz" || s == "multiwoz") return SourceFormat::mwoz;
    throw ValidationError("unknown source format '" + std::string(s) + "' (smd|camrest|mwoz)");
}

struct ConvertReport {
    std::size_t dialogues = 0;
    std::size_t missing_queries = 0;   // user turns without an annotation, stored as [NOTHING]
    std::size_t dropped_turns = 0;
    std::size_t skipped_dialogues = 0; // no complete user/system exchange
};

namespace detail {

inline const Json* find_path(const Json& obj, std::string_view dotted) {
    const Json* cur = &obj;
    for (const auto& part : split(dotted, ".")) {
        if (!cur->is_object()) return nullptr;
        auto it = cur->find(part);
        if (it == cur->end()) return nullptr;
        cur = &*it;
    }
    return cur;
}

inline const Json* find_any(const Json& obj, std::initializer_list<std::string_view> paths) {
    for (auto p : paths) {
        if (const auto* v = find_path(obj, p); v != nullptr && !v->is_null()) return v;
    }
    return nullptr;
}

inline std::optional<std::string> string_any(const Json& obj, std::initializer_list<std::string_view> paths) {
    const auto* v = find_any(obj, paths);
    if (v == nullptr) return std::nullopt;
    if (v->is_string()) return v->get<std::string>();
    if (v->is_number_integer()) return std::to_string(v->get<long long>());
    return std::nullopt;
}

inline std::optional<Speaker> speaker_of(std::string_view raw) {
    const auto s = to_lower(trim(raw));
    if (s == "user" || s == "driver" || s == "usr" || s == "customer") return Speaker::user;
    if (s == "system" || s == "assistant" || s == "sys" || s == "bot" || s == "agent") return Speaker::system;
    return std::nullopt;
}

inline std::string default_domain(SourceFormat format) {
    switch (format) {
        case SourceFormat::smd: return "smd";
        case SourceFormat::camrest: return "restaurant";
        case SourceFormat::mwoz: return "mwoz";
    }
    return "other";
}

}  // namespace detail

inline std::optional<AnnotatedDialogue> convert_dialogue(const Json& raw, SourceFormat format, std::size_t index,
                                                         ConvertReport& report) {
    if (!raw.is_object()) throw ParseError("dialogue " + std::to_string(index) + ": expected an object");
    AnnotatedDialogue d;
    d.session_id = detail::string_any(raw, {"session_id", "dialogue_id", "id", "did"})
                       .value_or(detail::default_domain(format) + "-" + std::to_string(index));
    d.domain = detail::string_any(raw, {"domain", "task", "scenario.task.intent", "type"})
                   .value_or(detail::default_domain(format));
    const auto where = "session '" + d.session_id + "'";

    const auto* turns = detail::find_any(raw, {"turns", "dialogue", "dialog", "log", "conversation"});
    if (turns == nullptr || !turns->is_array()) throw ParseError(where + ": no turn list found");

    std::vector<AnnotatedTurn> merged;
    for (std::size_t i = 0; i < turns->size(); ++i) {
        const auto& t = (*turns)[i];
        if (!t.is_object()) throw ParseError(where + " turn " + std::to_string(i) + ": expected an object");
        std::optional<Speaker> speaker;
        if (auto s = detail::string_any(t, {"speaker", "turn", "role", "author"})) speaker = detail::speaker_of(*s);
        if (!speaker) speaker = merged.empty() || merged.back().speaker == Speaker::system ? Speaker::user : Speaker::system;
        auto text = detail::string_any(t, {"text", "utterance", "content", "data.utterance"});
        if (!text || trim(*text).empty()) {
            ++report.dropped_turns;
            continue;
        }
        auto query = detail::string_any(t, {"gold_query", "query", "data.query"});
        if (!merged.empty() && merged.back().speaker == *speaker) {
            merged.back().text += " " + std::string(trim(*text));
            if (query && *speaker == Speaker::user) merged.back().gold_query = *query;
            continue;
        }
        AnnotatedTurn turn;
        turn.speaker = *speaker;
        turn.text = std::string(trim(*text));
        if (*speaker == Speaker::user && query) turn.gold_query = trim(*query).empty() ? std::string(kNullToken) : *query;
        merged.push_back(std::move(turn));
    }
    while (!merged.empty() && merged.front().speaker == Speaker::system) {
        merged.erase(merged.begin());
        ++report.dropped_turns;
    }
    if (!merged.empty() && merged.back().speaker == Speaker::user) {
        merged.pop_back();
        ++report.dropped_turns;
    }
    if (merged.empty()) {
        ++report.skipped_dialogues;
        return std::nullopt;
    }
    for (auto& t : merged) {
        if (t.speaker == Speaker::user && !t.gold_query) {
            t.gold_query = std::string(kNullToken);
            ++report.missing_queries;
        }
    }
    d.turns = std::move(merged);

    if (const auto* kb = detail::find_any(raw, {"kb", "knowledge_base", "kb_items", "scenario.kb.items"})) {
        try {
            d.kb = kb_from_json(*kb, KbScope::session, d.session_id, d.domain);
        } catch (const ValidationError& e) {
            throw ParseError(where + ": kb: " + e.what());
        }
    }
    validate_dialogue(d);
    ++report.dialogues;
    return d;
}

/// Accepts a JSON array of dialogues, an object wrapping one under "data" or
/// "dialogues", or JSON-lines.
inline std::vector<AnnotatedDialogue> convert_file(const std::filesystem::path& path, SourceFormat format,
                                                   ConvertReport& report) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    std::stringstream buffer;
    buffer << in.rdbuf();
    const auto text = buffer.str();
    std::vector<Json> items;
    try {
        auto doc = Json::parse(text);
        if (doc.is_object()) {
            if (const auto* inner = detail::find_any(doc, {"data", "dialogues"}); inner != nullptr && inner->is_array()) {
                doc = *inner;
            } else {
                doc = Json::array({doc});
            }
        }
        if (!doc.is_array()) throw ParseError(path.string() + ": expected a list of dialogues");
        for (auto& item : doc) items.push_back(std::move(item));
    } catch (const nlohmann::json::parse_error&) {
        std::istringstream lines(text);
        std::string line;
        std::size_t no = 0;
        while (std::getline(lines, line)) {
            ++no;
            if (trim(line).empty()) continue;
            try {
                items.push_back(Json::parse(line));
            } catch (const nlohmann::json::parse_error& e) {
                throw ParseError(path.string() + ":" + std::to_string(no) + ": " + e.what());
            }
        }
    }
    std::vector<AnnotatedDialogue> out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (auto d = convert_dialogue(items[i], format, i, report)) out.push_back(std::move(*d));
    }
    return out;
}

/// Finds train/validation/test files (also dev/valid, .json or .jsonl) in `dir`.
inline DatasetSplit convert_corpus(const std::filesystem::path& dir, SourceFormat format, ConvertReport& report) {
    auto locate = [&](std::initializer_list<std::string_view> stems) -> std::optional<std::filesystem::path> {
        for (auto stem : stems) {
            for (const char* ext : {".json", ".jsonl"}) {
                auto p = dir / (std::string(stem) + ext);
                if (std::filesystem::exists(p)) return p;
            }
        }
        return std::nullopt;
    };
    DatasetSplit split;
    const auto train = locate({"train"});
    const auto validation = locate({"validation", "valid", "dev", "val"});
    const auto test = locate({"test"});
    if (!train && !validation && !test) {
        throw ValidationError("no train/validation/test files found in '" + dir.string() + "'");
    }
    if (train) split.train = convert_file(*train, format, report);
    if (validation) split.validation = convert_file(*validation, format, report);
    if (test) split.test = convert_file(*test, format, report);
    // Session ids derived from positions can repeat across files.
    std::set<std::string> seen;
    for (auto* part : {&split.train, &split.validation, &split.test}) {
        const char* tag = part == &split.train ? "train" : part == &split.validation ? "validation" : "test";
        for (auto& d : *part) {
            if (!seen.insert(d.session_id).second) {
                d.session_id = std::string(tag) + "/" + d.session_id;
                seen.insert(d.session_id);
            }
        }
    }
    validate_split(split);
    return split;
}

}  // namespace qtod
