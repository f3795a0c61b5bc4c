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

#include <atomic>
#include <filesystem>
#include <mutex>

#include "qtod/pipeline.hpp"
#include "qtod/rule_backend.hpp"
#include "qtod/synthetic.hpp"

namespace fs = std::filesystem;
using namespace qtod;

namespace {

// Wraps a backend and records every request it sees.
class Recorder final : public Backend {
public:
    explicit Recorder(std::shared_ptr<const Backend> inner) : inner_(std::move(inner)) {}
    GenerationResponse generate(const GenerationRequest& request) const override {
        {
            std::lock_guard lock(mu_);
            requests_.push_back(request);
        }
        return inner_->generate(request);
    }
    std::string id() const override { return "recorder"; }
    std::size_t input_budget() const override { return inner_->input_budget(); }
    std::vector<GenerationRequest> requests() const {
        std::lock_guard lock(mu_);
        return requests_;
    }
    std::size_t count(Task task) const {
        std::size_t n = 0;
        for (const auto& r : requests()) n += r.task == task ? 1 : 0;
        return n;
    }

private:
    std::shared_ptr<const Backend> inner_;
    mutable std::mutex mu_;
    mutable std::vector<GenerationRequest> requests_;
};

DialogueContext ctx(std::vector<std::string> utterances, std::string session = "s") {
    std::vector<DialogueTurn> turns;
    for (std::size_t i = 0; i < utterances.size(); ++i) {
        turns.push_back({i % 2 == 0 ? Speaker::user : Speaker::system, utterances[i]});
    }
    return DialogueContext(std::move(turns), std::move(session));
}

KnowledgeBase restaurants() { return load_kb(fs::path(QTOD_TEST_DATA) / "restaurants_kb.json"); }

}  // namespace

TEST(Pipeline, QtodModeGeneratesQueryRetrievesAndResponds) {
    auto recorder = std::make_shared<Recorder>(std::make_shared<RuleBackend>());
    Pipeline pipeline(recorder);
    const auto kb = restaurants();
    const auto index = build_index(kb);
    auto r = pipeline.process(ctx({"find an expensive chinese restaurant in the south"}), kb, index);
    EXPECT_EQ(r.query.text(), "find an expensive chinese restaurant in the south");
    ASSERT_FALSE(r.retrieved.entries.empty());
    EXPECT_LE(r.retrieved.entries.size(), 3u);
    EXPECT_EQ(r.retrieved.entries[0].record_id, "r1");
    EXPECT_EQ(r.query_backend_calls, 1u);
    EXPECT_EQ(recorder->count(Task::query), 1u);
    EXPECT_EQ(recorder->count(Task::response), 1u);
    EXPECT_TRUE(starts_with(r.query_prompt, "translate dialogue context to query: user: "));
    EXPECT_TRUE(starts_with(r.response_prompt, "generate system response based on knowledge and dialogue context: "));
    EXPECT_NE(r.response.find("peking restaurant"), std::string::npos);
    EXPECT_EQ(r.session_id, "s");
}

TEST(Pipeline, NullQuerySkipsRetrieval) {
    Pipeline pipeline(std::make_shared<RuleBackend>());
    const auto kb = restaurants();
    const auto index = build_index(kb);
    auto r = pipeline.process(ctx({"thanks!"}), kb, index);
    EXPECT_TRUE(r.query.is_null());
    EXPECT_TRUE(r.retrieved.entries.empty());
    EXPECT_EQ(r.retrieved.query_echo, "[NOTHING]");
    EXPECT_NE(r.response_prompt.find("knowledge: [NOTHING] context: "), std::string::npos);
    EXPECT_EQ(r.response, "you are welcome");
    EXPECT_EQ(r.timings.retrieve.duration_ms(), 0.0);
}

TEST(Pipeline, IdentityModeUsesContextWithoutQueryCalls) {
    auto recorder = std::make_shared<Recorder>(std::make_shared<RuleBackend>());
    PipelineConfig config;
    config.mode = Mode::identity_query;
    Pipeline pipeline(recorder, config);
    const auto kb = restaurants();
    const auto index = build_index(kb);
    const auto c = ctx({"find an expensive place in the south", "no matching options", "how about chinese?"});
    auto r = pipeline.process(c, kb, index);
    EXPECT_EQ(r.query_backend_calls, 0u);
    EXPECT_EQ(recorder->count(Task::query), 0u);
    EXPECT_EQ(r.retrieved.query_echo, serialize_context(c));
    EXPECT_TRUE(r.query_prompt.empty());
    EXPECT_EQ(r.mode, Mode::identity_query);
}

TEST(Pipeline, OracleModeUsesGoldIdsWithUnitScore) {
    PipelineConfig config;
    config.mode = Mode::oracle_knowledge;
    auto recorder = std::make_shared<Recorder>(std::make_shared<RuleBackend>());
    Pipeline pipeline(recorder, config);
    const auto kb = restaurants();
    const auto index = build_index(kb);
    const auto c = ctx({"find an expensive chinese restaurant in the south"});
    auto r = pipeline.process(c, kb, index, std::vector<std::string>{"r5", "r3"});
    ASSERT_EQ(r.retrieved.entries.size(), 2u);
    EXPECT_EQ(r.retrieved.entries[0], (RetrievalEntry{"r5", 1.0}));
    EXPECT_EQ(r.retrieved.entries[1], (RetrievalEntry{"r3", 1.0}));
    EXPECT_EQ(recorder->count(Task::query), 1u);
    EXPECT_THROW(pipeline.process(c, kb, index), ValidationError);
    EXPECT_THROW(pipeline.process(c, kb, index, std::vector<std::string>{"nope"}), ContractViolation);
}

TEST(Pipeline, BackendErrorsAreTaggedByStage) {
    const auto kb = restaurants();
    const auto index = build_index(kb);
    auto no_query = std::make_shared<ScriptedBackend>();
    try {
        Pipeline(no_query).process(ctx({"hi"}), kb, index);
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.stage(), Stage::query);
        EXPECT_EQ(e.kind(), BackendErrorKind::missing);
    }
    auto no_response = std::make_shared<ScriptedBackend>();
    no_response->set_fallback(Task::query, "peking");
    try {
        Pipeline(no_response).process(ctx({"hi"}), kb, index);
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.stage(), Stage::response);
        EXPECT_NE(std::string(e.what()).find("[stage=response]"), std::string::npos);
    }
}

TEST(Pipeline, RerankStageUsesRelevance) {
    auto backend = std::make_shared<ScriptedBackend>();
    backend->set_fallback(Task::query, "expensive");
    backend->set_fallback(Task::response, "ok");
    backend->set_fallback(Task::relevance, "MISMATCHED");
    const auto kb = restaurants();
    const auto index = build_index(kb);
    backend->add(Task::relevance, render_relevance_prompt("expensive", *index.text_of("r4")), "MATCHED");
    PipelineConfig config;
    config.top_n = 2;
    config.rerank_depth = 4;
    auto r = Pipeline(backend, config).process(ctx({"hi"}), kb, index);
    ASSERT_EQ(r.retrieved.entries.size(), 2u);
    EXPECT_EQ(r.retrieved.entries[0].record_id, "r4");
    config.rerank_depth = 1;
    EXPECT_THROW(Pipeline(backend, config), ValidationError);
}

TEST(Pipeline, StageTimestampsAreOrdered) {
    Pipeline pipeline(std::make_shared<RuleBackend>());
    const auto kb = restaurants();
    const auto index = build_index(kb);
    auto r = pipeline.process(ctx({"find an expensive chinese restaurant in the south"}), kb, index);
    const auto& t = r.timings;
    EXPECT_LE(t.query.start_ms, t.query.end_ms);
    EXPECT_LE(t.query.end_ms, t.retrieve.start_ms);
    EXPECT_LE(t.retrieve.start_ms, t.retrieve.end_ms);
    EXPECT_LE(t.retrieve.end_ms, t.rerank.start_ms);
    EXPECT_LE(t.rerank.end_ms, t.response.start_ms);
    EXPECT_LE(t.response.start_ms, t.response.end_ms);
    EXPECT_EQ(t.total_ms, t.response.end_ms);
}

TEST(Pipeline, LongContextsAreTruncatedFromTheFront) {
    auto recorder = std::make_shared<Recorder>(std::make_shared<RuleBackend>());
    PipelineConfig config;
    config.input_budget = 20;
    Pipeline pipeline(recorder, config);
    const auto kb = restaurants();
    const auto index = build_index(kb);
    std::vector<std::string> utterances;
    for (int i = 0; i < 6; ++i) {
        utterances.push_back("filler user words number " + std::to_string(i));
        utterances.push_back("filler system words number " + std::to_string(i));
    }
    utterances.push_back("find a cheap restaurant in the south");
    auto r = pipeline.process(ctx(utterances), kb, index);
    EXPECT_LE(whitespace_token_count(r.query_prompt), 20u);
    EXPECT_TRUE(ends_with(r.query_prompt, "user: find a cheap restaurant in the south"));
    EXPECT_EQ(r.query.text(), "find a cheap restaurant in the south");
    auto turns = parse_query_prompt(r.query_prompt);
    ASSERT_TRUE(turns);
    EXPECT_EQ(turns->front().speaker, Speaker::user);
}

TEST(Session, CommitsHistoryOnlyOnSuccess) {
    auto backend = std::make_shared<ScriptedBackend>();
    backend->add(Task::query, "translate dialogue context to query: user: hello", "[NOTHING]");
    backend->set_fallback(Task::response, "hi there");
    auto kb = std::make_shared<const KnowledgeBase>(restaurants());
    auto index = std::make_shared<const RetrieverIndex>(build_index(*kb));
    Session session(Pipeline(backend), kb, index);
    auto r = session.run_turn("hello");
    EXPECT_EQ(r.turn, 0u);
    EXPECT_EQ(session.history().size(), 2u);
    EXPECT_THROW(session.run_turn("unscripted"), BackendError);
    EXPECT_EQ(session.history().size(), 2u);
    EXPECT_EQ(session.turn_count(), 1u);
    session.set_mode(Mode::identity_query);
    auto r2 = session.run_turn("now identity");
    EXPECT_EQ(r2.turn, 1u);
    EXPECT_EQ(r2.retrieved.query_echo, "user: hello system: hi there user: now identity");
    session.reset();
    EXPECT_TRUE(session.history().empty());
    EXPECT_EQ(session.turn_count(), 0u);
}

TEST(TurnResultJson, RoundTrip) {
    Pipeline pipeline(std::make_shared<RuleBackend>());
    const auto kb = restaurants();
    const auto index = build_index(kb);
    for (const char* u : {"find an expensive chinese restaurant in the south", "thanks!"}) {
        auto r = pipeline.process(ctx({u}), kb, index);
        r.turn = 4;
        auto back = turn_result_from_json(Json::parse(turn_result_to_json(r).dump()));
        EXPECT_EQ(back.session_id, r.session_id);
        EXPECT_EQ(back.turn, 4u);
        EXPECT_EQ(back.response, r.response);
        EXPECT_EQ(back.query.is_null(), r.query.is_null());
        EXPECT_EQ(back.query.display(), r.query.display());
        EXPECT_EQ(back.retrieved.ids(), r.retrieved.ids());
    }
    EXPECT_THROW(turn_result_from_json(Json::parse(R"({"turn": 0, "response": "x"})")), ParseError);
}

TEST(TrainingExport, PairsPerUserTurn) {
    SyntheticOptions options;
    options.dialogues = 4;
    const auto corpus = generate_synthetic_corpus(options);
    for (const auto& d : corpus) {
        auto out = export_training_pairs(d);
        const auto users = d.user_positions().size();
        EXPECT_EQ(out.pairs.size(), 2 * users);
        EXPECT_EQ(out.skipped_turns, 0u);
        for (std::size_t i = 0; i < out.pairs.size(); i += 2) {
            EXPECT_EQ(out.pairs[i].task, Task::query);
            EXPECT_EQ(out.pairs[i + 1].task, Task::response);
            EXPECT_TRUE(starts_with(out.pairs[i].prompt, "translate dialogue context to query: user: "));
            EXPECT_TRUE(starts_with(out.pairs[i + 1].prompt,
                                    "generate system response based on knowledge and dialogue context: knowledge: "));
            EXPECT_EQ(out.pairs[i + 1].target, d.gold_response(d.user_positions()[i / 2]));
        }
        // The closing pleasantry has the null query and no knowledge.
        EXPECT_EQ(out.pairs[out.pairs.size() - 2].target, "[NOTHING]");
        EXPECT_NE(out.pairs.back().prompt.find("knowledge: [NOTHING] context: "), std::string::npos);
        EXPECT_EQ(training_pairs_to_jsonl(out.pairs), training_pairs_to_jsonl(export_training_pairs(d).pairs));
    }
}

TEST(TrainingExport, JsonlWireFormat) {
    TrainingPair p{Task::response, "generate system response based on knowledge and dialogue context: knowledge: "
                                   "[NOTHING] context: user: hi",
                   "hello \"there\"", "s1", 2};
    const auto line = training_pairs_to_jsonl(std::vector<TrainingPair>{p});
    EXPECT_EQ(line,
              "{\"task\":\"response\",\"prompt\":\"generate system response based on knowledge and dialogue context: "
              "knowledge: [NOTHING] context: user: hi\",\"target\":\"hello \\\"there\\\"\",\"session_id\":\"s1\","
              "\"turn\":2}\n");
}

TEST(TrainingExport, GoldRecordsOption) {
    SyntheticOptions options;
    options.dialogues = 2;
    const auto d = generate_synthetic_corpus(options).front();
    ExportOptions eo;
    eo.use_gold_records = true;
    auto out = export_training_pairs(d, eo);
    const auto gold_id = d.turns[0].gold_record_ids->front();
    EXPECT_NE(out.pairs[1].prompt.find(linearize_record(*d.kb.find(gold_id))), std::string::npos);
    eo.top_n = 0;
    EXPECT_THROW(export_training_pairs(d, eo), ValidationError);
}

TEST(Modes, Parse) {
    EXPECT_EQ(mode_from_string("qtod"), Mode::qtod);
    EXPECT_EQ(mode_from_string("identity"), Mode::identity_query);
    EXPECT_EQ(mode_from_string("oracle_knowledge"), Mode::oracle_knowledge);
    EXPECT_THROW(mode_from_string("magic"), ValidationError);
}
