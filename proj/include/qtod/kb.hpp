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

// Knowledge records and knowledge bases: loading, linearization, dataset-level
// merging and synthetic expansion with distractor records.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "qtod/error.hpp"
#include "qtod/random.hpp"
#include "qtod/text.hpp"

namespace qtod {

using Json = nlohmann::ordered_json;

struct Slot {
    std::string name;
    std::string value;

    friend bool operator==(const Slot&, const Slot&) = default;
};

struct KnowledgeRecord {
    std::string id;
    std::string domain;
    std::vector<Slot> slots;

    const std::string* value_of(std::string_view slot_name) const {
        for (const auto& slot : slots) {
            if (slot.name == slot_name) return &slot.value;
        }
        return nullptr;
    }

    std::vector<std::string> values() const {
        std::vector<std::string> out;
        out.reserve(slots.size());
        for (const auto& slot : slots) out.push_back(slot.value);
        return out;
    }

    friend bool operator==(const KnowledgeRecord&, const KnowledgeRecord&) = default;
};

inline void validate_record(const KnowledgeRecord& record) {
    if (record.id.empty()) throw ValidationError("knowledge record has an empty id");
    std::unordered_set<std::string> names;
    for (const auto& slot : record.slots) {
        if (!names.insert(slot.name).second) {
            throw ValidationError("record '" + record.id + "': duplicate slot name '" + slot.name + "'");
        }
        if (canonicalize(slot.value).empty()) {
            throw ValidationError("record '" + record.id + "': slot '" + slot.name +
                                  "' has an empty value");
        }
    }
}

enum class KbScope { session, dataset, expanded };

inline std::string_view to_string(KbScope scope) {
    switch (scope) {
        case KbScope::session: return "session";
        case KbScope::dataset: return "dataset";
        case KbScope::expanded: return "expanded";
    }
    return "session";
}

inline KbScope kb_scope_from_string(std::string_view s) {
    if (s == "session") return KbScope::session;
    if (s == "dataset") return KbScope::dataset;
    if (s == "expanded") return KbScope::expanded;
    throw ParseError("unknown knowledge base scope '" + std::string(s) + "'");
}

/// Immutable set of knowledge records plus the entity lexicon derived from them.
class KnowledgeBase {
public:
    KnowledgeBase() = default;

    explicit KnowledgeBase(std::vector<KnowledgeRecord> records, KbScope scope = KbScope::session)
        : records_(std::move(records)), scope_(scope) {
        by_id_.reserve(records_.size());
        for (std::size_t i = 0; i < records_.size(); ++i) {
            const auto& record = records_[i];
            validate_record(record);
            if (!by_id_.emplace(record.id, i).second) {
                throw ValidationError("duplicate record id '" + record.id + "'");
            }
            for (const auto& slot : record.slots) lexicon_.insert(canonicalize(slot.value));
        }
    }

    const std::vector<KnowledgeRecord>& records() const noexcept { return records_; }
    KbScope scope() const noexcept { return scope_; }
    std::size_t size() const noexcept { return records_.size(); }
    bool empty() const noexcept { return records_.empty(); }

    const KnowledgeRecord* find(std::string_view id) const {
        auto it = by_id_.find(std::string(id));
        return it == by_id_.end() ? nullptr : &records_[it->second];
    }
    bool contains(std::string_view id) const { return find(id) != nullptr; }

    const std::set<std::string>& entity_lexicon() const noexcept { return lexicon_; }

private:
    std::vector<KnowledgeRecord> records_;
    KbScope scope_ = KbScope::session;
    std::unordered_map<std::string, std::size_t> by_id_;
    std::set<std::string> lexicon_;
};

enum class LinearizationStyle {
    values,      // "peking restaurant, chinese, south, expensive"
    slot_value   // "name=peking restaurant, food=chinese, ..."
};

inline std::string linearize_record(const KnowledgeRecord& record,
                                    LinearizationStyle style = LinearizationStyle::values) {
    std::string out;
    for (std::size_t i = 0; i < record.slots.size(); ++i) {
        if (i > 0) out += ", ";
        if (style == LinearizationStyle::slot_value) {
            out += record.slots[i].name;
            out += '=';
        }
        out += record.slots[i].value;
    }
    return out;
}

/// Two records are duplicates when domain and canonical slot list agree.
inline std::string dedup_key(const KnowledgeRecord& record) {
    std::string key = canonicalize(record.domain);
    for (const auto& slot : record.slots) {
        key += '\x1f';
        key += canonicalize(slot.name);
        key += '\x1e';
        key += canonicalize(slot.value);
    }
    return key;
}

struct MergedKnowledgeBase {
    KnowledgeBase kb;
    // id_maps[i] maps every record id of input i to its id in the merged base.
    std::vector<std::unordered_map<std::string, std::string>> id_maps;
    std::size_t records_before_dedup = 0;
};

/// Union of knowledge bases with value-identical records collapsed to the first
/// occurrence. Colliding ids of distinct records are renamed "<id>_<k>".
inline MergedKnowledgeBase merge_knowledge_bases(std::span<const KnowledgeBase> inputs,
                                                 KbScope scope = KbScope::dataset) {
    MergedKnowledgeBase merged;
    std::vector<KnowledgeRecord> records;
    std::unordered_map<std::string, std::string> key_to_id;
    std::unordered_set<std::string> used_ids;
    merged.id_maps.resize(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        for (const auto& record : inputs[i].records()) {
            ++merged.records_before_dedup;
            auto key = dedup_key(record);
            if (auto it = key_to_id.find(key); it != key_to_id.end()) {
                merged.id_maps[i][record.id] = it->second;
                continue;
            }
            std::string id = record.id;
            for (std::size_t k = 1; used_ids.count(id) != 0; ++k) {
                id = record.id + "_" + std::to_string(k);
            }
            used_ids.insert(id);
            key_to_id.emplace(std::move(key), id);
            merged.id_maps[i][record.id] = id;
            KnowledgeRecord copy = record;
            copy.id = id;
            records.push_back(std::move(copy));
        }
    }
    merged.kb = KnowledgeBase(std::move(records), scope);
    return merged;
}

inline KnowledgeBase merge_to_dataset_level(std::span<const KnowledgeBase> session_kbs) {
    if (session_kbs.empty()) throw ContractViolation("merge_to_dataset_level: empty input list");
    return merge_knowledge_bases(session_kbs, KbScope::dataset).kb;
}

/// Grows `base` to exactly `target_size` records with a seeded uniform sample
/// (without replacement) of pool records. Pool records that duplicate a base
/// record, or reuse a base id, are not eligible.
inline KnowledgeBase expand_kb(const KnowledgeBase& base, std::size_t target_size,
                               const KnowledgeBase& pool, std::uint64_t seed) {
    if (target_size == 0) throw ContractViolation("expand_kb: target size must be positive");
    if (target_size < base.size()) {
        throw ContractViolation("expand_kb: target size " + std::to_string(target_size) +
                                " is smaller than the base (" + std::to_string(base.size()) + ")");
    }
    if (target_size == base.size()) return base;

    std::unordered_set<std::string> seen_keys;
    for (const auto& record : base.records()) seen_keys.insert(dedup_key(record));
    std::vector<const KnowledgeRecord*> candidates;
    for (const auto& record : pool.records()) {
        if (base.contains(record.id)) continue;
        if (!seen_keys.insert(dedup_key(record)).second) continue;
        candidates.push_back(&record);
    }
    const std::size_t need = target_size - base.size();
    if (candidates.size() < need) {
        throw CapacityError("expand_kb: distractor pool provides " + std::to_string(candidates.size()) +
                                " eligible records, " + std::to_string(need) + " needed (short by " +
                                std::to_string(need - candidates.size()) + ")",
                            need - candidates.size());
    }
    Rng rng(seed);
    auto picks = sample_without_replacement(candidates.size(), need, rng);
    std::sort(picks.begin(), picks.end());

    std::vector<KnowledgeRecord> records = base.records();
    records.reserve(target_size);
    for (auto idx : picks) records.push_back(*candidates[idx]);
    return KnowledgeBase(std::move(records), KbScope::expanded);
}

// ---------------------------------------------------------------------------
// JSON schema
// ---------------------------------------------------------------------------

inline Json record_to_json(const KnowledgeRecord& record) {
    Json slots = Json::array();
    for (const auto& slot : record.slots) slots.push_back(Json::array({slot.name, slot.value}));
    return Json{{"id", record.id}, {"domain", record.domain}, {"slots", std::move(slots)}};
}

inline Json kb_to_json(const KnowledgeBase& kb) {
    Json records = Json::array();
    for (const auto& record : kb.records()) records.push_back(record_to_json(record));
    return Json{{"scope", std::string(to_string(kb.scope()))}, {"records", std::move(records)}};
}

namespace detail {

inline std::string scalar_to_string(const Json& value) {
    if (value.is_string()) return value.get<std::string>();
    if (value.is_number_integer()) return std::to_string(value.get<long long>());
    if (value.is_number()) {
        std::ostringstream os;
        os << value.get<double>();
        return os.str();
    }
    if (value.is_boolean()) return value.get<bool>() ? "true" : "false";
    return {};
}

inline KnowledgeRecord record_from_json(const Json& item, std::size_t index, std::string_view default_domain) {
    auto fail = [index](const std::string& field, const std::string& why) {
        return ParseError("record " + std::to_string(index) + ": field '" + field + "' " + why);
    };
    if (!item.is_object()) throw fail("<record>", "must be an object");
    KnowledgeRecord record;
    auto id = item.find("id");
    if (id == item.end() || !id->is_string()) throw fail("id", "must be a string");
    record.id = id->get<std::string>();
    if (auto domain = item.find("domain"); domain != item.end()) {
        if (!domain->is_string()) throw fail("domain", "must be a string");
        record.domain = domain->get<std::string>();
    } else {
        record.domain = std::string(default_domain);
    }
    auto slots = item.find("slots");
    if (slots == item.end() || !slots->is_array()) throw fail("slots", "must be an array of [name, value] pairs");
    for (std::size_t s = 0; s < slots->size(); ++s) {
        const auto& pair = (*slots)[s];
        if (!pair.is_array() || pair.size() != 2 || !pair[0].is_string() || !pair[1].is_string()) {
            throw fail("slots[" + std::to_string(s) + "]", "must be a [name, value] pair of strings");
        }
        record.slots.push_back({pair[0].get<std::string>(), pair[1].get<std::string>()});
    }
    return record;
}

}  // namespace detail

/// SMD-style per-dialogue knowledge array: [{slot: value, ...}, ...]. Records get
/// synthetic ids "d<dialogue>_r<index>"; empty or "-" values are dropped.
inline std::vector<KnowledgeRecord> records_from_smd_items(const Json& items, std::string_view dialogue,
                                                           std::string_view domain) {
    std::vector<KnowledgeRecord> out;
    if (items.is_null()) return out;
    if (!items.is_array()) throw ParseError("kb: SMD-style knowledge must be an array of objects");
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto& item = items[i];
        if (!item.is_object()) {
            throw ParseError("record " + std::to_string(i) + ": field '<record>' must be an object");
        }
        KnowledgeRecord record;
        record.id = "d" + std::string(dialogue) + "_r" + std::to_string(i);
        record.domain = std::string(domain);
        for (const auto& [name, value] : item.items()) {
            auto text = detail::scalar_to_string(value);
            auto canon = canonicalize(text);
            if (canon.empty() || canon == "-") continue;
            record.slots.push_back({name, text});
        }
        if (!record.slots.empty()) out.push_back(std::move(record));
    }
    return out;
}

/// Parses either the native schema or an SMD-style array.
inline KnowledgeBase kb_from_json(const Json& doc, KbScope default_scope = KbScope::session,
                                  std::string_view dialogue = "0", std::string_view default_domain = "") {
    if (doc.is_array() || doc.is_null()) {
        return KnowledgeBase(records_from_smd_items(doc, dialogue, default_domain), default_scope);
    }
    if (!doc.is_object()) throw ParseError("kb: expected an object or an array");
    KbScope scope = default_scope;
    if (auto s = doc.find("scope"); s != doc.end()) {
        if (!s->is_string()) throw ParseError("kb: field 'scope' must be a string");
        scope = kb_scope_from_string(s->get<std::string>());
    }
    auto records_it = doc.find("records");
    if (records_it == doc.end() || !records_it->is_array()) {
        throw ParseError("kb: field 'records' must be an array");
    }
    std::vector<KnowledgeRecord> records;
    records.reserve(records_it->size());
    for (std::size_t i = 0; i < records_it->size(); ++i) {
        records.push_back(detail::record_from_json((*records_it)[i], i, default_domain));
    }
    return KnowledgeBase(std::move(records), scope);
}

enum class KbFormat { session_json, dataset_json };

inline Json read_json_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open '" + path.string() + "'");
    try {
        return Json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

inline KnowledgeBase load_kb(const std::filesystem::path& path, KbFormat format = KbFormat::session_json) {
    auto expected = format == KbFormat::session_json ? KbScope::session : KbScope::dataset;
    auto doc = read_json_file(path);
    auto kb = kb_from_json(doc, expected, path.stem().string());
    return kb;
}

inline void save_kb(const std::filesystem::path& path, const KnowledgeBase& kb) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    out << kb_to_json(kb).dump(1) << '\n';
}

}  // namespace qtod
