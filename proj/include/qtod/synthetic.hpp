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

// Synthetic corpus in the rule grammar.
//
// Each session KB holds records {name, type, area, price}; names are two
// tokens, every other value one token, so all linearized records have the
// same length. Exactly one record carries the (price, type, area) the user
// finally asks for. Half of the dialogues open with a request nothing
// satisfies, followed by a "how about ..." revision of one slot. Every
// dialogue ends with a thanks turn whose gold query is [NOTHING].
//
// The distractor pool is built from a separate vocabulary that shares no
// token with any session value or query word.

#include <array>
#include <cstdint>
#include <iomanip>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "qtod/data.hpp"
#include "qtod/dialogue.hpp"
#include "qtod/kb.hpp"
#include "qtod/random.hpp"
#include "qtod/rule_backend.hpp"

namespace qtod {

struct SyntheticDomain {
    std::string name;   // also the noun used in requests
    std::vector<std::string> types;
};

inline const std::vector<SyntheticDomain>& synthetic_domains() {
    static const std::vector<SyntheticDomain> domains{
        {"restaurant", {"italian", "chinese", "indian", "french", "thai", "mexican", "japanese", "turkish"}},
        {"hotel", {"guesthouse", "boutique", "hostel", "motel", "resort", "chalet"}},
        {"attraction", {"museum", "gallery", "theatre", "cinema", "zoo", "aquarium", "castle", "garden"}},
    };
    return domains;
}

struct SyntheticOptions {
    std::size_t dialogues = 300;
    std::size_t kb_size = 8;
    std::uint64_t seed = 13;
};

namespace detail {

inline const std::vector<std::string>& synthetic_name_first() {
    static const std::vector<std::string> v{"amber", "birch",  "cedar",   "dover",  "elm",    "fern",   "granite",
                                            "harbor", "ivy",   "juniper", "kestrel", "linden", "maple", "nutmeg",
                                            "oak",   "pebble", "quill",   "rowan",  "saffron", "thistle", "umber",
                                            "violet", "willow", "yarrow", "zephyr"};
    return v;
}

inline const std::vector<std::string>& synthetic_name_second() {
    static const std::vector<std::string> v{"corner",  "lantern", "terrace", "bridge", "mill",    "grove",  "yard",
                                            "wharf",   "orchard", "cottage", "tavern", "parlour", "kitchen", "pavilion",
                                            "chamber", "gate",    "manor",   "hall",   "works",   "spire"};
    return v;
}

inline std::string article_for(const std::string& word) {
    const char c = word.empty() ? 'x' : word.front();
    return (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') ? "an" : "a";
}

struct Triple {
    std::string price;
    std::string type;
    std::string area;
    friend bool operator<(const Triple& a, const Triple& b) {
        return std::tie(a.price, a.type, a.area) < std::tie(b.price, b.type, b.area);
    }
    friend bool operator==(const Triple&, const Triple&) = default;
};

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
    return v[uniform_below(rng, v.size())];
}

}  // namespace detail

/// Request utterance in the rule grammar.
inline std::string synthetic_request(const std::string& opener, const std::string& price, const std::string& type,
                                     const std::string& noun, const std::string& area) {
    return opener + " " + detail::article_for(price) + " " + price + " " + type + " " + noun + " in the " + area;
}

inline std::vector<AnnotatedDialogue> generate_synthetic_corpus(const SyntheticOptions& options = {}) {
    if (options.kb_size < 2) throw ValidationError("synthetic kb_size must be at least 2");
    const auto& g = RuleGrammar::standard();
    const auto& domains = synthetic_domains();
    static const std::vector<std::string> kOpeners{"find", "i need", "i am looking for", "i would like",
                                                   "i'm looking for"};
    static const std::vector<std::string> kThanks{"thanks!", "thank you very much.", "great, thanks.",
                                                  "perfect, that is all."};
    Rng rng(options.seed);
    std::vector<AnnotatedDialogue> out;
    out.reserve(options.dialogues);

    for (std::size_t i = 0; i < options.dialogues; ++i) {
        const auto& domain = domains[i % domains.size()];
        const auto capacity = g.prices.size() * domain.types.size() * g.areas.size();
        if (options.kb_size + 1 > capacity) throw ValidationError("synthetic kb_size too large for the vocabulary");
        std::ostringstream sid;
        sid << "syn-" << domain.name << "-" << std::setw(4) << std::setfill('0') << i;
        AnnotatedDialogue d;
        d.session_id = sid.str();
        d.domain = domain.name;

        auto random_triple = [&] {
            return detail::Triple{detail::pick(g.prices, rng), detail::pick(domain.types, rng),
                                  detail::pick(g.areas, rng)};
        };
        const auto target = random_triple();
        const bool revise = i % 2 == 1;
        detail::Triple failing = target;
        int revised_slot = 0;  // 0 type, 1 area, 2 price
        if (revise) {
            revised_slot = static_cast<int>(uniform_below(rng, 3));
            while (failing == target) {
                if (revised_slot == 0) failing.type = detail::pick(domain.types, rng);
                if (revised_slot == 1) failing.area = detail::pick(g.areas, rng);
                if (revised_slot == 2) failing.price = detail::pick(g.prices, rng);
            }
        }

        // Session KB: the target plus distinct other triples, never the failing one.
        std::set<detail::Triple> used{target};
        std::vector<detail::Triple> triples{target};
        while (triples.size() < options.kb_size) {
            detail::Triple t = random_triple();
            // Bias towards near misses so ranking is not trivial.
            if (uniform_below(rng, 2) == 0) {
                t = target;
                switch (uniform_below(rng, 3)) {
                    case 0: t.type = detail::pick(domain.types, rng); break;
                    case 1: t.area = detail::pick(g.areas, rng); break;
                    default: t.price = detail::pick(g.prices, rng); break;
                }
            }
            if ((revise && t == failing) || !used.insert(t).second) continue;
            triples.push_back(t);
        }
        std::set<std::string> names;
        std::vector<KnowledgeRecord> records;
        const auto target_pos = uniform_below(rng, triples.size());
        std::swap(triples[0], triples[target_pos]);
        std::string target_id;
        std::string target_name;
        for (std::size_t r = 0; r < triples.size(); ++r) {
            std::string name;
            do {
                name = detail::pick(detail::synthetic_name_first(), rng) + " " +
                       detail::pick(detail::synthetic_name_second(), rng);
            } while (!names.insert(name).second);
            KnowledgeRecord rec;
            rec.id = d.session_id + "-r" + std::to_string(r);
            rec.domain = domain.name;
            rec.slots = {{"name", name}, {"type", triples[r].type}, {"area", triples[r].area},
                         {"price", triples[r].price}};
            if (r == target_pos) {
                target_id = rec.id;
                target_name = name;
            }
            records.push_back(std::move(rec));
        }
        d.kb = KnowledgeBase(std::move(records), KbScope::session);

        auto user = [&](std::string text, std::string query, std::vector<std::string> gold) {
            AnnotatedTurn t;
            t.speaker = Speaker::user;
            t.text = std::move(text);
            t.gold_query = std::move(query);
            t.gold_record_ids = std::move(gold);
            d.turns.push_back(std::move(t));
        };
        auto system = [&](std::string text) {
            AnnotatedTurn t;
            t.speaker = Speaker::system;
            t.text = std::move(text);
            d.turns.push_back(std::move(t));
        };
        auto query_for = [&](const detail::Triple& t) {
            RuleFrame f;
            f.price = t.price;
            f.food = t.type;
            f.noun = domain.name;
            f.area = t.area;
            return render_rule_query(f);
        };

        const auto& opener = detail::pick(kOpeners, rng);
        const std::vector<std::string> success_names{target_name};
        if (revise) {
            user(synthetic_request(opener, failing.price, failing.type, domain.name, failing.area), query_for(failing),
                 {});
            system(std::string(kNoMatchResponse));
            std::string revision;
            if (revised_slot == 0) revision = "how about " + target.type + "?";
            if (revised_slot == 1) revision = "how about the " + target.area + "?";
            if (revised_slot == 2) revision = "how about " + detail::article_for(target.price) + " " + target.price + " one?";
            user(revision, query_for(target), {target_id});
        } else {
            user(synthetic_request(opener, target.price, target.type, domain.name, target.area), query_for(target),
                 {target_id});
        }
        system(render_options_response(success_names));
        user(detail::pick(kThanks, rng), std::string(kNullToken), {});
        system(std::string(kPleasantryResponse));
        validate_dialogue(d);
        out.push_back(std::move(d));
    }
    return out;
}

/// 80/10/10 split in generation order.
inline DatasetSplit split_synthetic(std::vector<AnnotatedDialogue> dialogues) {
    DatasetSplit split;
    const auto n = dialogues.size();
    const auto n_val = n / 10;
    const auto n_test = n / 10;
    const auto n_train = n - n_val - n_test;
    for (std::size_t i = 0; i < n; ++i) {
        auto& target = i < n_train ? split.train : (i < n_train + n_val ? split.validation : split.test);
        target.push_back(std::move(dialogues[i]));
    }
    return split;
}

/// Distractor records whose tokens never occur in the synthetic corpus.
inline KnowledgeBase generate_distractor_pool(std::size_t size, std::uint64_t seed) {
    static const std::vector<std::string> kFirst{"quartz", "obsidian", "topaz", "onyx",   "jasper", "garnet", "beryl",
                                                 "zircon", "agate",    "opal",  "cobalt", "argon",  "xenon",  "boron",
                                                 "helium", "lithium",  "carbon", "sodium", "basalt", "marble"};
    static const std::vector<std::string> kSecond{"depot",  "outlet",   "studio",  "clinic", "agency",
                                                  "bureau", "forge",    "foundry", "atelier", "kiosk",
                                                  "stall",  "emporium", "bazaar",  "exchange", "annex"};
    static const std::vector<std::string> kTypes{"bakery", "pharmacy", "garage", "laundry", "florist",
                                                 "tailor", "barber",   "bookshop", "hardware", "stationer"};
    static const std::vector<std::string> kAreas{"uptown",   "downtown", "riverside", "harbourside",
                                                 "hillside", "lakeside", "airport",   "suburbs"};
    static const std::vector<std::string> kPrices{"budget", "premium", "luxury", "bargain"};
    const auto capacity = kFirst.size() * kSecond.size() * kTypes.size() * kAreas.size() * kPrices.size();
    if (size > capacity) throw CapacityError("distractor pool vocabulary exhausted", size - capacity);

    Rng rng(seed);
    std::set<std::tuple<std::size_t, std::size_t, std::size_t, std::size_t, std::size_t>> seen;
    std::vector<KnowledgeRecord> records;
    records.reserve(size);
    while (records.size() < size) {
        auto key = std::make_tuple(uniform_below(rng, kFirst.size()), uniform_below(rng, kSecond.size()),
                                   uniform_below(rng, kTypes.size()), uniform_below(rng, kAreas.size()),
                                   uniform_below(rng, kPrices.size()));
        if (!seen.insert(key).second) continue;
        const auto [a, b, t, ar, p] = key;
        KnowledgeRecord rec;
        rec.id = "x" + std::to_string(records.size());
        rec.domain = "shop";
        rec.slots = {{"name", kFirst[a] + " " + kSecond[b]}, {"type", kTypes[t]}, {"area", kAreas[ar]},
                     {"price", kPrices[p]}};
        records.push_back(std::move(rec));
    }
    return KnowledgeBase(std::move(records), KbScope::dataset);
}

}  // namespace qtod
