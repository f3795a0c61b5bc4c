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

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <set>

#include "qtod/kb.hpp"
#include "qtod/synthetic.hpp"
#include "qtod/text.hpp"

namespace fs = std::filesystem;
using namespace qtod;

namespace {

KnowledgeRecord rec(std::string id, std::vector<std::pair<std::string, std::string>> slots,
                    std::string domain = "restaurant") {
    KnowledgeRecord r;
    r.id = std::move(id);
    r.domain = std::move(domain);
    for (auto& [n, v] : slots) r.slots.push_back({n, v});
    return r;
}

fs::path temp_file(const std::string& name, const std::string& content) {
    auto dir = fs::temp_directory_path() / "qtod_tests";
    fs::create_directories(dir);
    auto path = dir / name;
    std::ofstream(path) << content;
    return path;
}

}  // namespace

TEST(Text, TokenizeLowercasesAndSplitsOnNonAlnum) {
    EXPECT_EQ(tokenize("Peking Restaurant, chinese; 2-star!"),
              (std::vector<std::string>{"peking", "restaurant", "chinese", "2", "star"}));
    EXPECT_TRUE(tokenize("  ,;  ").empty());
}

TEST(Text, SplitKeepsEmptyFields) {
    EXPECT_EQ(split("a;;b", ";"), (std::vector<std::string>{"a", "", "b"}));
    EXPECT_EQ(split_whitespace("  a \t b\n"), (std::vector<std::string>{"a", "b"}));
}

TEST(Canonicalizer, Rules) {
    EXPECT_EQ(canonicalize("  The_Good  LUCK, takeaway! "), "the good luck takeaway");
    EXPECT_EQ(canonicalize("ugly-duckling"), "ugly duckling");
    EXPECT_EQ(canonicalize("___"), "");
    EXPECT_EQ(canonicalize("caf\xc3\xa9 Rouge"), "caf\xc3\xa9 rouge");
}

TEST(Canonicalizer, IdempotentOnRandomStrings) {
    std::mt19937_64 rng(7);
    const std::string alphabet = "aZ9 _-,.!\t\n'\"()x\xc3\xa9";
    for (int i = 0; i < 2000; ++i) {
        std::string s;
        const auto len = rng() % 30;
        for (std::size_t k = 0; k < len; ++k) s.push_back(alphabet[rng() % alphabet.size()]);
        const auto once = canonicalize(s);
        EXPECT_EQ(canonicalize(once), once) << "input: " << s;
    }
}

TEST(KnowledgeBase, RejectsDuplicateIdsAndSlots) {
    EXPECT_THROW(KnowledgeBase({rec("a", {{"name", "x"}}), rec("a", {{"name", "y"}})}), ValidationError);
    EXPECT_THROW(KnowledgeBase({rec("a", {{"name", "x"}, {"name", "y"}})}), ValidationError);
    EXPECT_THROW(KnowledgeBase({rec("a", {{"name", " ,, "}})}), ValidationError);
    EXPECT_THROW(KnowledgeBase({rec("", {{"name", "x"}})}), ValidationError);
}

TEST(KnowledgeBase, LexiconIsUnionOfCanonicalValues) {
    KnowledgeBase kb({rec("a", {{"name", "Peking Restaurant"}, {"area", "south"}}),
                      rec("b", {{"name", "ugly_duckling"}, {"area", "South"}})});
    EXPECT_EQ(kb.entity_lexicon(), (std::set<std::string>{"peking restaurant", "south", "ugly duckling"}));
}

TEST(LoadKb, TwoRecords) {
    auto path = temp_file("kb2.json", R"({"scope":"session","records":[
        {"id":"r1","domain":"restaurant","slots":[["name","peking restaurant"],["food","chinese"]]},
        {"id":"r2","domain":"restaurant","slots":[["name","ugly duckling"]]}]})");
    auto kb = load_kb(path);
    EXPECT_EQ(kb.size(), 2u);
    EXPECT_EQ(kb.scope(), KbScope::session);
    EXPECT_EQ(kb.find("r2")->slots.front().value, "ugly duckling");
}

TEST(LoadKb, EmptyRecordList) {
    auto kb = load_kb(temp_file("kb0.json", R"({"scope":"session","records":[]})"));
    EXPECT_EQ(kb.size(), 0u);
    EXPECT_TRUE(kb.entity_lexicon().empty());
}

TEST(LoadKb, DuplicateIdIsValidationError) {
    auto path = temp_file("kbdup.json", R"({"records":[{"id":"r1","slots":[["name","a"]]},
                                                       {"id":"r1","slots":[["name","b"]]}]})");
    EXPECT_THROW(load_kb(path), ValidationError);
}

TEST(LoadKb, ParseErrorNamesRecordAndField) {
    auto path = temp_file("kbbad.json", R"({"records":[{"id":"r1","slots":[["name","a"]]},{"id":7,"slots":[]}]})");
    try {
        load_kb(path);
        FAIL() << "expected ParseError";
    } catch (const ParseError& e) {
        EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("'id'"), std::string::npos);
    }
    EXPECT_THROW(load_kb(temp_file("kbsyntax.json", "{not json")), ParseError);
}

TEST(LoadKb, SmdStyleArrayGetsSyntheticIds) {
    auto doc = Json::parse(R"([{"poi":"Stanford Express Care","distance":"5 miles","traffic_info":"-"},
                                {"poi":"Valero","distance":4}])");
    auto kb = kb_from_json(doc, KbScope::session, "17", "navigate");
    ASSERT_EQ(kb.size(), 2u);
    EXPECT_EQ(kb.records()[0].id, "d17_r0");
    EXPECT_EQ(kb.records()[1].id, "d17_r1");
    EXPECT_EQ(kb.records()[0].slots.size(), 2u);  // "-" dropped
    EXPECT_EQ(*kb.records()[1].value_of("distance"), "4");
    EXPECT_EQ(kb.records()[0].domain, "navigate");
}

TEST(KbJson, RoundTrip) {
    KnowledgeBase kb({rec("a", {{"name", "x, y"}, {"area", "north"}})}, KbScope::dataset);
    auto back = kb_from_json(kb_to_json(kb));
    EXPECT_EQ(back.records(), kb.records());
    EXPECT_EQ(back.scope(), KbScope::dataset);
}

TEST(Linearize, ValueAndSlotRenderings) {
    EXPECT_EQ(linearize_record(rec("r", {{"name", "peking restaurant"},
                                         {"food", "chinese"},
                                         {"area", "south"},
                                         {"price", "expensive"}})),
              "peking restaurant, chinese, south, expensive");
    EXPECT_EQ(linearize_record(rec("r", {{"name", "x"}})), "x");
    EXPECT_EQ(linearize_record(rec("r", {{"name", "ashley hotel"}, {"area", "north"}, {"price", "moderate"},
                                         {"stars", "2 star"}})),
              "ashley hotel, north, moderate, 2 star");
    EXPECT_EQ(linearize_record(rec("r", {{"name", "x"}, {"area", "north"}}), LinearizationStyle::slot_value),
              "name=x, area=north");
}

TEST(Linearize, InjectiveOnDistinctValueSequences) {
    std::mt19937_64 rng(3);
    const std::vector<std::string> words{"a", "b", "ab", "a b", "c"};
    std::map<std::string, std::vector<std::string>> seen;
    for (int i = 0; i < 500; ++i) {
        std::vector<std::string> values;
        const auto n = 1 + rng() % 3;
        KnowledgeRecord r;
        r.id = "r";
        for (std::size_t k = 0; k < n; ++k) {
            values.push_back(words[rng() % words.size()]);
            r.slots.push_back({"s" + std::to_string(k), values.back()});
        }
        auto [it, inserted] = seen.emplace(linearize_record(r), values);
        if (!inserted) {
            EXPECT_EQ(it->second, values);
        }
    }
}

TEST(MergeToDatasetLevel, DedupAndUnion) {
    KnowledgeBase one({rec("a", {{"name", "x"}})});
    KnowledgeBase same({rec("b", {{"name", "X"}})});
    std::vector<KnowledgeBase> dup{one, same};
    auto merged = merge_to_dataset_level(dup);
    EXPECT_EQ(merged.size(), 1u);
    EXPECT_EQ(merged.scope(), KbScope::dataset);

    KnowledgeBase left({rec("a", {{"name", "1"}}), rec("b", {{"name", "2"}}), rec("c", {{"name", "3"}})});
    KnowledgeBase right({rec("a", {{"name", "4"}}), rec("b", {{"name", "5"}}), rec("c", {{"name", "6"}})});
    std::vector<KnowledgeBase> disjoint{left, right};
    auto merged2 = merge_knowledge_bases(disjoint);
    EXPECT_EQ(merged2.kb.size(), 6u);
    EXPECT_EQ(merged2.records_before_dedup, 6u);
    EXPECT_EQ(merged2.id_maps[1].at("a"), "a_1");
    EXPECT_THROW(merge_to_dataset_level(std::vector<KnowledgeBase>{}), ContractViolation);
}

TEST(MergeToDatasetLevel, DifferentDomainsAreNotDuplicates) {
    std::vector<KnowledgeBase> kbs{KnowledgeBase({rec("a", {{"name", "x"}}, "hotel")}),
                                   KnowledgeBase({rec("b", {{"name", "x"}}, "restaurant")})};
    EXPECT_EQ(merge_to_dataset_level(kbs).size(), 2u);
}

TEST(MergeToDatasetLevel, LexiconPreserved) {
    auto kb = load_kb(fs::path(QTOD_TEST_DATA) / "restaurants_kb.json");
    std::vector<KnowledgeBase> single{kb};
    EXPECT_EQ(merge_to_dataset_level(single).entity_lexicon(), kb.entity_lexicon());
}

TEST(ExpandKb, NoOpAtBaseSize) {
    KnowledgeBase base({rec("a", {{"name", "x"}})});
    auto pool = generate_distractor_pool(10, 1);
    auto out = expand_kb(base, 1, pool, 9);
    EXPECT_EQ(out.records(), base.records());
}

TEST(ExpandKb, GrowsToTargetKeepingBase) {
    SyntheticOptions options;
    options.dialogues = 1;
    auto base = generate_synthetic_corpus(options).front().kb;
    ASSERT_EQ(base.size(), 8u);
    auto pool = generate_distractor_pool(2000, 11);
    auto out = expand_kb(base, 1024, pool, 42);
    EXPECT_EQ(out.size(), 1024u);
    EXPECT_EQ(out.scope(), KbScope::expanded);
    for (const auto& r : base.records()) {
        ASSERT_NE(out.find(r.id), nullptr);
        EXPECT_EQ(*out.find(r.id), r);
    }
    auto again = expand_kb(base, 1024, pool, 42);
    EXPECT_EQ(again.records(), out.records());
    auto other = expand_kb(base, 1024, pool, 43);
    EXPECT_NE(other.records(), out.records());
}

TEST(ExpandKb, CapacityErrorReportsShortfall) {
    KnowledgeBase base({rec("a", {{"name", "x"}})});
    auto pool = generate_distractor_pool(5, 1);
    try {
        expand_kb(base, 10, pool, 1);
        FAIL() << "expected CapacityError";
    } catch (const CapacityError& e) {
        EXPECT_EQ(e.shortfall(), 4u);
    }
    EXPECT_THROW(expand_kb(base, 0, pool, 1), ContractViolation);
    KnowledgeBase two({rec("a", {{"name", "x"}}), rec("b", {{"name", "y"}})});
    EXPECT_THROW(expand_kb(two, 1, pool, 1), ContractViolation);
}

TEST(ExpandKb, PoolDuplicatesOfBaseAreSkipped) {
    KnowledgeBase base({rec("a", {{"name", "x"}})});
    KnowledgeBase pool({rec("p1", {{"name", "X"}}), rec("a", {{"name", "other"}}), rec("p2", {{"name", "y"}})});
    auto out = expand_kb(base, 2, pool, 1);
    EXPECT_TRUE(out.contains("p2"));
    EXPECT_THROW(expand_kb(base, 3, pool, 1), CapacityError);
}
