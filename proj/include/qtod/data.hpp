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

// Query-annotated dialogue corpora.
//
// One dialogue per JSON line:
//   {"session_id": str, "domain": str, "kb": <kb schema or SMD-style array>,
//    "turns": [{"speaker": "user"|"system", "text": str,
//               "gold_query": str?, "gold_record_ids": [str]?, "domain": str?}]}
// Annotations sit on user turns; the gold response is the following system
// turn. A null query is stored as the literal "[NOTHING]".

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_set>
#include <vector>

#include "qtod/dialogue.hpp"
#include "qtod/error.hpp"
#include "qtod/kb.hpp"
#include "qtod/random.hpp"
#include "qtod/text.hpp"

namespace qtod {

struct AnnotatedTurn {
    Speaker speaker = Speaker::user;
    std::string text;
    std::optional<std::string> gold_query;                   // user turns
    std::optional<std::vector<std::string>> gold_record_ids;  // user turns, optional
    std::string domain;                                       // empty: dialogue domain

    friend bool operator==(const AnnotatedTurn&, const AnnotatedTurn&) = default;
};

struct AnnotatedDialogue {
    std::string session_id;
    std::string domain;
    std::vector<AnnotatedTurn> turns;
    KnowledgeBase kb;

    /// Positions of user turns in `turns`.
    std::vector<std::size_t> user_positions() const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < turns.size(); ++i) {
            if (turns[i].speaker == Speaker::user) out.push_back(i);
        }
        return out;
    }

    /// Context C_t ending at the user turn stored at `position`.
    DialogueContext context_at(std::size_t position) const {
        std::vector<DialogueTurn> ctx;
        ctx.reserve(position + 1);
        for (std::size_t i = 0; i <= position && i < turns.size(); ++i) ctx.push_back({turns[i].speaker, turns[i].text});
        return DialogueContext(std::move(ctx), session_id);
    }

    const std::string& turn_domain(std::size_t position) const {
        const auto& d = turns[position].domain;
        return d.empty() ? domain : d;
    }

    /// Gold response for the user turn at `position`.
    const std::string& gold_response(std::size_t position) const { return turns.at(position + 1).text; }
};

inline void validate_dialogue(const AnnotatedDialogue& dialogue) {
    const auto where = [&](std::size_t i) {
        return "session '" + dialogue.session_id + "' turn " + std::to_string(i) + ": ";
    };
    if (dialogue.session_id.empty()) throw ValidationError("dialogue with empty session_id");
    if (dialogue.turns.size() % 2 != 0) {
        throw ValidationError("session '" + dialogue.session_id +
                              "': every user turn needs a following system turn (gold response)");
    }
    for (std::size_t i = 0; i < dialogue.turns.size(); ++i) {
        const auto& turn = dialogue.turns[i];
        const auto expected = i % 2 == 0 ? Speaker::user : Speaker::system;
        if (turn.speaker != expected) {
            throw ValidationError(where(i) + "expected a " + std::string(to_string(expected)) + " turn");
        }
        if (trim(turn.text).empty()) throw ValidationError(where(i) + "empty text");
        if (turn.speaker == Speaker::user) {
            if (!turn.gold_query) throw ValidationError(where(i) + "missing gold_query");
            if (turn.gold_record_ids) {
                for (const auto& id : *turn.gold_record_ids) {
                    if (!dialogue.kb.contains(id)) {
                        throw ValidationError(where(i) + "gold record '" + id + "' is not in the session kb");
                    }
                }
            }
        } else if (turn.gold_query || turn.gold_record_ids) {
            throw ValidationError(where(i) + "annotations are only allowed on user turns");
        }
    }
}

inline Json dialogue_to_json(const AnnotatedDialogue& dialogue) {
    Json turns = Json::array();
    for (const auto& turn : dialogue.turns) {
        Json t{{"speaker", std::string(to_string(turn.speaker))}, {"text", turn.text}};
        if (turn.gold_query) t["gold_query"] = *turn.gold_query;
        if (turn.gold_record_ids) t["gold_record_ids"] = *turn.gold_record_ids;
        if (!turn.domain.empty()) t["domain"] = turn.domain;
        turns.push_back(std::move(t));
    }
    return Json{{"session_id", dialogue.session_id},
                {"domain", dialogue.domain},
                {"kb", kb_to_json(dialogue.kb)},
                {"turns", std::move(turns)}};
}

inline AnnotatedDialogue dialogue_from_json(const Json& doc, std::string_view where = "dialogue") {
    auto fail = [&](const std::string& what) { return ParseError(std::string(where) + ": " + what); };
    if (!doc.is_object()) throw fail("expected an object");
    AnnotatedDialogue d;
    if (!doc.contains("session_id") || !doc["session_id"].is_string()) throw fail("field 'session_id' must be a string");
    d.session_id = doc["session_id"].get<std::string>();
    auto sfail = [&](const std::string& what) { return ParseError("session '" + d.session_id + "': " + what); };
    if (doc.contains("domain")) {
        if (!doc["domain"].is_string()) throw sfail("field 'domain' must be a string");
        d.domain = doc["domain"].get<std::string>();
    }
    if (doc.contains("kb")) {
        try {
            d.kb = kb_from_json(doc["kb"], KbScope::session, d.session_id, d.domain);
        } catch (const ValidationError& e) {
            throw sfail(std::string("kb: ") + e.what());
        }
    }
    if (!doc.contains("turns") || !doc["turns"].is_array()) throw sfail("field 'turns' must be an array");
    const auto& turns = doc["turns"];
    for (std::size_t i = 0; i < turns.size(); ++i) {
        const auto& t = turns[i];
        const auto tw = "turn " + std::to_string(i) + ": ";
        if (!t.is_object()) throw sfail(tw + "expected an object");
        AnnotatedTurn turn;
        if (!t.contains("speaker") || !t["speaker"].is_string()) throw sfail(tw + "field 'speaker' must be a string");
        try {
            turn.speaker = speaker_from_string(t["speaker"].get<std::string>());
        } catch (const ValidationError& e) {
            throw sfail(tw + e.what());
        }
        if (!t.contains("text") || !t["text"].is_string()) throw sfail(tw + "field 'text' must be a string");
        turn.text = t["text"].get<std::string>();
        if (t.contains("gold_query")) {
            if (!t["gold_query"].is_string()) throw sfail(tw + "field 'gold_query' must be a string");
            turn.gold_query = t["gold_query"].get<std::string>();
        }
        if (t.contains("gold_record_ids")) {
            const auto& ids = t["gold_record_ids"];
            if (!ids.is_array()) throw sfail(tw + "field 'gold_record_ids' must be an array");
            std::vector<std::string> out;
            for (const auto& id : ids) {
                if (!id.is_string()) throw sfail(tw + "gold_record_ids entries must be strings");
                out.push_back(id.get<std::string>());
            }
            turn.gold_record_ids = std::move(out);
        }
        if (t.contains("domain")) {
            if (!t["domain"].is_string()) throw sfail(tw + "field 'domain' must be a string");
            turn.domain = t["domain"].get<std::string>();
        }
        d.turns.push_back(std::move(turn));
    }
    validate_dialogue(d);
    return d;
}

struct DatasetSplit {
    std::vector<AnnotatedDialogue> train;
    std::vector<AnnotatedDialogue> validation;
    std::vector<AnnotatedDialogue> test;

    const std::vector<AnnotatedDialogue>& partition(std::string_view name) const {
        if (name == "train") return train;
        if (name == "validation") return validation;
        if (name == "test") return test;
        throw ValidationError("unknown partition '" + std::string(name) + "' (train|validation|test)");
    }

    std::vector<AnnotatedDialogue> all() const {
        std::vector<AnnotatedDialogue> out;
        out.reserve(train.size() + validation.size() + test.size());
        out.insert(out.end(), train.begin(), train.end());
        out.insert(out.end(), validation.begin(), validation.end());
        out.insert(out.end(), test.begin(), test.end());
        return out;
    }

    std::size_t size() const { return train.size() + validation.size() + test.size(); }
};

inline void validate_split(const DatasetSplit& split) {
    std::unordered_set<std::string> seen;
    for (const auto* part : {&split.train, &split.validation, &split.test}) {
        for (const auto& d : *part) {
            if (!seen.insert(d.session_id).second) {
                throw ValidationError("session '" + d.session_id + "' appears more than once across partitions");
            }
        }
    }
}

inline std::vector<AnnotatedDialogue> load_partition(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    std::vector<AnnotatedDialogue> out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        const auto where = path.filename().string() + ":" + std::to_string(line_no);
        Json doc;
        try {
            doc = Json::parse(line);
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(where + ": " + e.what());
        }
        out.push_back(dialogue_from_json(doc, where));
    }
    return out;
}

inline std::string partition_to_jsonl(std::span<const AnnotatedDialogue> dialogues) {
    std::string out;
    for (const auto& d : dialogues) {
        out += dialogue_to_json(d).dump();
        out += '\n';
    }
    return out;
}

inline void save_partition(const std::filesystem::path& path, std::span<const AnnotatedDialogue> dialogues) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    out << partition_to_jsonl(dialogues);
}

inline constexpr std::string_view kPartitionNames[] = {"train", "validation", "test"};

/// Reads <dir>/train.jsonl, validation.jsonl and test.jsonl.
inline DatasetSplit load_dataset(const std::filesystem::path& dir) {
    if (!std::filesystem::is_directory(dir)) throw ValidationError("dataset directory '" + dir.string() + "' not found");
    DatasetSplit split;
    split.train = load_partition(dir / "train.jsonl");
    split.validation = load_partition(dir / "validation.jsonl");
    split.test = load_partition(dir / "test.jsonl");
    validate_split(split);
    return split;
}

inline void save_dataset(const std::filesystem::path& dir, const DatasetSplit& split) {
    std::filesystem::create_directories(dir);
    save_partition(dir / "train.jsonl", split.train);
    save_partition(dir / "validation.jsonl", split.validation);
    save_partition(dir / "test.jsonl", split.test);
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

struct DatasetStats {
    std::size_t dialogues = 0;
    std::size_t utterances = 0;  // all turns
    std::size_t domains = 0;
    double turns_per_dialogue = 0.0;
    double tokens_per_utterance = 0.0;
    double tokens_per_query = 0.0;  // non-null gold queries
    double session_kb_size = 0.0;
    std::size_t dataset_kb_records = 0;     // before dedup
    std::size_t dataset_kb_unique = 0;      // after dedup
};

inline DatasetStats dataset_stats(std::span<const AnnotatedDialogue> dialogues) {
    DatasetStats s;
    s.dialogues = dialogues.size();
    std::set<std::string> domains;
    std::size_t utterance_tokens = 0;
    std::size_t query_tokens = 0;
    std::size_t queries = 0;
    std::size_t kb_records = 0;
    std::vector<KnowledgeBase> kbs;
    kbs.reserve(dialogues.size());
    for (const auto& d : dialogues) {
        for (std::size_t i = 0; i < d.turns.size(); ++i) {
            const auto& turn = d.turns[i];
            ++s.utterances;
            utterance_tokens += split_whitespace(turn.text).size();
            if (turn.gold_query && trim(*turn.gold_query) != kNullToken) {
                query_tokens += split_whitespace(*turn.gold_query).size();
                ++queries;
            }
            domains.insert(d.turn_domain(i));
        }
        if (d.turns.empty()) domains.insert(d.domain);
        kb_records += d.kb.size();
        kbs.push_back(d.kb);
    }
    s.domains = domains.size();
    auto mean = [](std::size_t total, std::size_t count) {
        return count == 0 ? 0.0 : static_cast<double>(total) / static_cast<double>(count);
    };
    s.turns_per_dialogue = mean(s.utterances, s.dialogues);
    s.tokens_per_utterance = mean(utterance_tokens, s.utterances);
    s.tokens_per_query = mean(query_tokens, queries);
    s.session_kb_size = mean(kb_records, s.dialogues);
    if (!kbs.empty()) {
        auto merged = merge_knowledge_bases(kbs);
        s.dataset_kb_records = merged.records_before_dedup;
        s.dataset_kb_unique = merged.kb.size();
    }
    return s;
}

inline DatasetStats dataset_stats(const DatasetSplit& split) {
    auto all = split.all();
    return dataset_stats(all);
}

// ---------------------------------------------------------------------------
// Cross-domain construction
// ---------------------------------------------------------------------------

struct NamedDataset {
    std::string name;
    const DatasetSplit* data = nullptr;
};

struct SourceDomain {
    std::string source;
    std::string domain;
};

/// One constituent session of a merged dialogue, drawn from any of `options`.
struct ConstituentSpec {
    std::vector<SourceDomain> options;
};

struct CrossDomainRecipe {
    std::vector<ConstituentSpec> constituents;
};

/// "smd/navigate|smd/schedule|smd/weather;camrest/restaurant"
inline CrossDomainRecipe parse_recipe(std::string_view text) {
    CrossDomainRecipe recipe;
    for (const auto& part : split(text, ";")) {
        if (trim(part).empty()) continue;
        ConstituentSpec spec;
        for (const auto& option : split(part, "|")) {
            auto pieces = split(trim(option), "/");
            if (pieces.size() != 2 || trim(pieces[0]).empty() || trim(pieces[1]).empty()) {
                throw ValidationError("recipe option '" + option + "' must look like source/domain");
            }
            spec.options.push_back({std::string(trim(pieces[0])), std::string(trim(pieces[1]))});
        }
        recipe.constituents.push_back(std::move(spec));
    }
    if (recipe.constituents.empty()) throw ValidationError("empty cross-domain recipe");
    return recipe;
}

struct SplitRatio {
    std::size_t train = 400;
    std::size_t validation = 100;
    std::size_t test = 100;
};

inline SplitRatio parse_split_ratio(std::string_view text) {
    auto parts = split(text, "/");
    if (parts.size() != 3) throw ValidationError("split ratio must look like 400/100/100");
    try {
        return {std::stoul(parts[0]), std::stoul(parts[1]), std::stoul(parts[2])};
    } catch (const std::exception&) {
        throw ValidationError("split ratio must look like 400/100/100");
    }
}

/// Merges the constituent sessions into one: turns concatenated in the given
/// order, knowledge bases merged with dedup, gold ids remapped, every turn
/// tagged with its source domain.
inline AnnotatedDialogue merge_sessions(std::span<const AnnotatedDialogue* const> parts) {
    if (parts.empty()) throw ContractViolation("merge_sessions: nothing to merge");
    if (parts.size() == 1) return *parts.front();
    std::vector<KnowledgeBase> kbs;
    for (const auto* p : parts) kbs.push_back(p->kb);
    auto merged = merge_knowledge_bases(kbs, KbScope::session);
    AnnotatedDialogue out;
    std::vector<std::string> ids;
    std::vector<std::string> domains;
    for (std::size_t i = 0; i < parts.size(); ++i) {
        const auto& part = *parts[i];
        ids.push_back(part.session_id);
        domains.push_back(part.domain);
        for (std::size_t t = 0; t < part.turns.size(); ++t) {
            AnnotatedTurn turn = part.turns[t];
            turn.domain = part.turn_domain(t);
            if (turn.gold_record_ids) {
                for (auto& id : *turn.gold_record_ids) id = merged.id_maps[i].at(id);
            }
            out.turns.push_back(std::move(turn));
        }
    }
    out.session_id = join(ids, "+");
    out.domain = join(domains, "+");
    out.kb = std::move(merged.kb);
    return out;
}

/// Builds `count` merged sessions following `recipe`. Constituent sessions are
/// drawn uniformly without replacement from the union of their option pools
/// (all partitions of the sources), concatenated in a seeded random order, and
/// the result is cut into train/validation/test by `ratio`.
inline DatasetSplit build_crossdomain(std::span<const NamedDataset> sources, const CrossDomainRecipe& recipe,
                                      std::size_t count, SplitRatio ratio, std::uint64_t seed) {
    const std::size_t ratio_total = ratio.train + ratio.validation + ratio.test;
    if (ratio_total == 0) throw ValidationError("split ratio must not be all zero");

    std::map<std::string, std::vector<const AnnotatedDialogue*>> by_source_domain;
    for (const auto& source : sources) {
        if (source.data == nullptr) throw ContractViolation("build_crossdomain: null source '" + source.name + "'");
        for (const auto* part : {&source.data->train, &source.data->validation, &source.data->test}) {
            for (const auto& d : *part) by_source_domain[source.name + "/" + d.domain].push_back(&d);
        }
    }

    Rng rng(seed);
    std::set<const AnnotatedDialogue*> used;
    std::vector<std::vector<const AnnotatedDialogue*>> picks(recipe.constituents.size());
    for (std::size_t c = 0; c < recipe.constituents.size(); ++c) {
        std::vector<const AnnotatedDialogue*> pool;
        for (const auto& option : recipe.constituents[c].options) {
            auto it = by_source_domain.find(option.source + "/" + option.domain);
            if (it == by_source_domain.end()) continue;
            for (const auto* d : it->second) {
                if (used.count(d) == 0) pool.push_back(d);
            }
        }
        if (pool.size() < count) {
            throw CapacityError("constituent " + std::to_string(c) + " has " + std::to_string(pool.size()) +
                                    " source sessions, " + std::to_string(count) + " needed",
                                count - pool.size());
        }
        for (auto idx : sample_without_replacement(pool.size(), count, rng)) {
            picks[c].push_back(pool[idx]);
            used.insert(pool[idx]);
        }
    }

    std::vector<AnnotatedDialogue> merged;
    merged.reserve(count);
    std::unordered_set<std::string> ids;
    for (std::size_t i = 0; i < count; ++i) {
        std::vector<const AnnotatedDialogue*> parts;
        for (const auto& column : picks) parts.push_back(column[i]);
        seeded_shuffle(parts, rng);
        auto dialogue = merge_sessions(parts);
        auto base_id = dialogue.session_id;
        for (std::size_t k = 1; !ids.insert(dialogue.session_id).second; ++k) {
            dialogue.session_id = base_id + "#" + std::to_string(k);
        }
        merged.push_back(std::move(dialogue));
    }

    DatasetSplit out;
    const std::size_t n_val = count * ratio.validation / ratio_total;
    const std::size_t n_test = count * ratio.test / ratio_total;
    const std::size_t n_train = count - n_val - n_test;
    auto begin = merged.begin();
    out.train.assign(std::make_move_iterator(begin), std::make_move_iterator(begin + static_cast<std::ptrdiff_t>(n_train)));
    begin += static_cast<std::ptrdiff_t>(n_train);
    out.validation.assign(std::make_move_iterator(begin), std::make_move_iterator(begin + static_cast<std::ptrdiff_t>(n_val)));
    begin += static_cast<std::ptrdiff_t>(n_val);
    out.test.assign(std::make_move_iterator(begin), std::make_move_iterator(merged.end()));
    return out;
}

// ---------------------------------------------------------------------------
// Few-shot splits
// ---------------------------------------------------------------------------

/// ceil(fraction * N) whole dialogues taken as a prefix of one seeded
/// permutation, so smaller fractions are nested in larger ones under a fixed
/// seed. Output keeps the original order.
inline std::vector<AnnotatedDialogue> fewshot_split(std::span<const AnnotatedDialogue> train, double fraction,
                                                    std::uint64_t seed) {
    if (!(fraction > 0.0 && fraction <= 1.0)) {
        throw ContractViolation("fewshot_split: fraction must be in (0, 1], got " + std::to_string(fraction));
    }
    if (train.empty()) throw ContractViolation("fewshot_split: empty train partition");
    const auto n = train.size();
    auto k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
    k = std::clamp<std::size_t>(k, 1, n);
    Rng rng(seed);
    auto perm = seeded_permutation(n, rng);
    perm.resize(k);
    std::sort(perm.begin(), perm.end());
    std::vector<AnnotatedDialogue> out;
    out.reserve(k);
    for (auto idx : perm) out.push_back(train[idx]);
    return out;
}

}  // namespace qtod
