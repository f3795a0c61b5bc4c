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

// Per-turn orchestration: query generation, top-n retrieval, response
// generation. Null queries skip retrieval and render [NOTHING] as knowledge.

#include <chrono>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "qtod/backend.hpp"
#include "qtod/data.hpp"
#include "qtod/dialogue.hpp"
#include "qtod/error.hpp"
#include "qtod/kb.hpp"
#include "qtod/prompts.hpp"
#include "qtod/retriever.hpp"

namespace qtod {

enum class Mode { qtod, identity_query, oracle_knowledge };

inline std::string_view to_string(Mode mode) {
    switch (mode) {
        case Mode::qtod: return "qtod";
        case Mode::identity_query: return "identity";
        case Mode::oracle_knowledge: return "oracle";
    }
    return "qtod";
}

inline Mode mode_from_string(std::string_view s) {
    if (s == "qtod") return Mode::qtod;
    if (s == "identity" || s == "identity_query") return Mode::identity_query;
    if (s == "oracle" || s == "oracle_knowledge") return Mode::oracle_knowledge;
    throw ValidationError("unknown mode '" + std::string(s) + "' (qtod|identity|oracle)");
}

inline constexpr std::size_t kDefaultTopN = 3;

struct PipelineConfig {
    Mode mode = Mode::qtod;
    std::size_t top_n = kDefaultTopN;
    std::size_t beam_size = kDefaultBeamSize;
    std::size_t max_output_tokens = kDefaultMaxOutputTokens;
    std::size_t input_budget = 0;   // 0: use the backend's budget
    std::size_t rerank_depth = 0;   // >0: retrieve this many, rerank by relevance, keep top_n
    LinearizationStyle style = LinearizationStyle::values;

    void validate() const {
        if (top_n < 1) throw ValidationError("top_n must be at least 1");
        if (beam_size < 1) throw ValidationError("beam_size must be at least 1");
        if (max_output_tokens < 1) throw ValidationError("max_output_tokens must be at least 1");
        if (rerank_depth != 0 && rerank_depth < top_n) {
            throw ValidationError("rerank_depth must be 0 or at least top_n");
        }
    }
};

/// Stage start/end in milliseconds since the turn started. A stage that did
/// not run has start == end == the previous stage's end.
struct StageSpan {
    double start_ms = 0.0;
    double end_ms = 0.0;
    double duration_ms() const { return end_ms - start_ms; }
};

struct StageTimings {
    StageSpan query;
    StageSpan retrieve;
    StageSpan rerank;
    StageSpan response;
    double total_ms = 0.0;
};

struct TurnResult {
    std::string session_id;
    std::size_t turn = 0;  // user-turn ordinal within the session
    Mode mode = Mode::qtod;
    Query query = Query::null();
    RetrievalResult retrieved;
    std::string response;
    StageTimings timings;
    std::string query_prompt;     // empty when no query backend call was made
    std::string response_prompt;
    std::size_t query_backend_calls = 0;
};

inline std::size_t whitespace_token_count(std::string_view s) { return split_whitespace(s).size(); }

/// Invokes the backend on the query prompt and interprets [NOTHING].
inline Query generate_query(const Backend& backend, const std::string& prompt,
                            std::size_t beam_size = kDefaultBeamSize,
                            std::size_t max_output_tokens = kDefaultMaxOutputTokens) {
    GenerationRequest request{Task::query, prompt, max_output_tokens, beam_size};
    try {
        return Query::from_generation(backend.generate(request).text);
    } catch (const BackendError& e) {
        throw e.at_stage(Stage::query);
    }
}

inline Query generate_query(const Backend& backend, const DialogueContext& context) {
    return generate_query(backend, render_query_prompt(context));
}

class Pipeline {
public:
    Pipeline(std::shared_ptr<const Backend> backend, PipelineConfig config = {})
        : backend_(std::move(backend)), config_(config) {
        if (!backend_) throw ConfigError("pipeline needs a backend");
        config_.validate();
    }

    const PipelineConfig& config() const noexcept { return config_; }
    const Backend& backend() const noexcept { return *backend_; }
    std::size_t input_budget() const {
        return config_.input_budget != 0 ? config_.input_budget : backend_->input_budget();
    }

    Pipeline with_mode(Mode mode) const {
        auto config = config_;
        config.mode = mode;
        return with_config(config);
    }

    Pipeline with_config(PipelineConfig config) const { return Pipeline(backend_, config); }

    /// Runs one turn. `gold_ids` is required in oracle_knowledge mode.
    TurnResult process(const DialogueContext& context, const KnowledgeBase& kb, const RetrieverIndex& index,
                       const std::optional<std::vector<std::string>>& gold_ids = std::nullopt) const {
        using clock = std::chrono::steady_clock;
        const auto t0 = clock::now();
        auto now_ms = [&] { return std::chrono::duration<double, std::milli>(clock::now() - t0).count(); };
        const auto budget = input_budget();

        TurnResult result;
        result.session_id = context.session_id();
        result.mode = config_.mode;

        // Query.
        result.timings.query.start_ms = now_ms();
        if (config_.mode == Mode::identity_query) {
            result.query = Query::text(serialize_context(context));
        } else {
            auto ctx = context.truncated_until(
                [&](const DialogueContext& c) { return whitespace_token_count(render_query_prompt(c)) <= budget; });
            result.query_prompt = render_query_prompt(ctx);
            result.query = generate_query(*backend_, result.query_prompt, config_.beam_size, config_.max_output_tokens);
            result.query_backend_calls = 1;
        }
        result.timings.query.end_ms = now_ms();

        // Retrieval.
        result.timings.retrieve.start_ms = now_ms();
        if (config_.mode == Mode::oracle_knowledge) {
            if (!gold_ids) {
                throw ValidationError("oracle_knowledge mode needs gold_record_ids for session '" +
                                      context.session_id() + "'");
            }
            result.retrieved.query_echo = result.query.display();
            for (const auto& id : *gold_ids) result.retrieved.entries.push_back({id, 1.0});
            result.timings.retrieve.end_ms = now_ms();
            result.timings.rerank = {result.timings.retrieve.end_ms, result.timings.retrieve.end_ms};
        } else if (result.query.is_null()) {
            result.retrieved.query_echo = std::string(kNullToken);
            result.timings.retrieve.end_ms = result.timings.retrieve.start_ms;
            result.timings.rerank = {result.timings.retrieve.end_ms, result.timings.retrieve.end_ms};
        } else {
            const auto depth = config_.rerank_depth != 0 ? config_.rerank_depth : config_.top_n;
            try {
                result.retrieved = retrieve(index, result.query, depth);
            } catch (const BackendError& e) {
                throw e.at_stage(Stage::retrieve);
            }
            result.timings.retrieve.end_ms = now_ms();
            result.timings.rerank.start_ms = result.timings.retrieve.end_ms;
            if (config_.rerank_depth != 0) {
                const auto& backend = *backend_;
                result.retrieved = rerank(index, result.query.text(), result.retrieved,
                                          [&backend](std::string_view q, std::string_view r) {
                                              return backend.relevance(q, r);
                                          });
                if (result.retrieved.entries.size() > config_.top_n) result.retrieved.entries.resize(config_.top_n);
            }
            result.timings.rerank.end_ms = now_ms();
        }

        // Response.
        result.timings.response.start_ms = now_ms();
        std::vector<std::string> linearized;
        linearized.reserve(result.retrieved.entries.size());
        for (const auto& entry : result.retrieved.entries) {
            const auto* record = kb.find(entry.record_id);
            if (record == nullptr) {
                throw ContractViolation("record '" + entry.record_id + "' is not in the bound knowledge base");
            }
            linearized.push_back(linearize_record(*record, config_.style));
        }
        auto ctx = context.truncated_until([&](const DialogueContext& c) {
            return whitespace_token_count(render_response_prompt_linearized(linearized, c)) <= budget;
        });
        result.response_prompt = render_response_prompt_linearized(linearized, ctx);
        GenerationRequest request{Task::response, result.response_prompt, config_.max_output_tokens,
                                  config_.beam_size};
        try {
            result.response = backend_->generate(request).text;
        } catch (const BackendError& e) {
            throw e.at_stage(Stage::response);
        }
        result.timings.response.end_ms = now_ms();
        result.timings.total_ms = result.timings.response.end_ms;
        return result;
    }

private:
    std::shared_ptr<const Backend> backend_;
    PipelineConfig config_;
};

/// An interactive dialogue bound to one knowledge base. History only grows
/// when a turn completes, so a failed turn can simply be retried.
class Session {
public:
    Session(Pipeline pipeline, std::shared_ptr<const KnowledgeBase> kb, std::shared_ptr<const RetrieverIndex> index,
            std::string session_id = "chat")
        : pipeline_(std::move(pipeline)), kb_(std::move(kb)), index_(std::move(index)),
          session_id_(std::move(session_id)) {
        if (!kb_ || !index_) throw ConfigError("session needs a knowledge base and an index");
    }

    TurnResult run_turn(std::string user_utterance,
                        const std::optional<std::vector<std::string>>& gold_ids = std::nullopt) {
        auto turns = history_;
        turns.push_back({Speaker::user, std::move(user_utterance)});
        DialogueContext context(turns, session_id_);
        auto result = pipeline_.process(context, *kb_, *index_, gold_ids);
        result.turn = turn_count_;
        if (trim(result.response).empty()) {
            throw BackendError(BackendErrorKind::protocol, "empty response", Stage::response);
        }
        turns.push_back({Speaker::system, result.response});
        history_ = std::move(turns);
        ++turn_count_;
        return result;
    }

    void reset() {
        history_.clear();
        turn_count_ = 0;
    }

    void set_mode(Mode mode) { pipeline_ = pipeline_.with_mode(mode); }
    Mode mode() const noexcept { return pipeline_.config().mode; }
    const std::vector<DialogueTurn>& history() const noexcept { return history_; }
    std::size_t turn_count() const noexcept { return turn_count_; }

private:
    Pipeline pipeline_;
    std::shared_ptr<const KnowledgeBase> kb_;
    std::shared_ptr<const RetrieverIndex> index_;
    std::string session_id_;
    std::vector<DialogueTurn> history_;
    std::size_t turn_count_ = 0;
};

// ---------------------------------------------------------------------------
// Training export
// ---------------------------------------------------------------------------

struct TrainingPair {
    Task task = Task::query;
    std::string prompt;
    std::string target;
    std::string session_id;
    std::size_t turn = 0;
};

struct ExportOptions {
    std::size_t top_n = kDefaultTopN;
    bool use_gold_records = false;  // response prompts from gold records instead of gold-query retrieval
    IndexConfig index;
    std::size_t input_budget = kDefaultInputBudget;
};

struct ExportResult {
    std::vector<TrainingPair> pairs;
    std::size_t skipped_turns = 0;  // user turns without a query annotation
};

/// Two pairs per annotated user turn: (query prompt, gold query) and
/// (response prompt, gold response).
inline ExportResult export_training_pairs(const AnnotatedDialogue& dialogue, const ExportOptions& options = {}) {
    if (options.top_n < 1) throw ValidationError("export top_n must be at least 1");
    ExportResult out;
    const auto index = build_index(dialogue.kb, options.index);
    const auto budget = options.input_budget;
    std::size_t ordinal = 0;
    for (auto pos : dialogue.user_positions()) {
        const auto turn = ordinal++;
        const auto& annotated = dialogue.turns[pos];
        if (!annotated.gold_query || pos + 1 >= dialogue.turns.size()) {
            ++out.skipped_turns;
            continue;
        }
        const auto context = dialogue.context_at(pos);
        auto query_ctx = context.truncated_until(
            [&](const DialogueContext& c) { return whitespace_token_count(render_query_prompt(c)) <= budget; });
        const auto gold = Query::from_generation(*annotated.gold_query);
        out.pairs.push_back({Task::query, render_query_prompt(query_ctx), gold.display(), dialogue.session_id, turn});

        std::vector<std::string> linearized;
        if (options.use_gold_records) {
            if (annotated.gold_record_ids) {
                for (const auto& id : *annotated.gold_record_ids) {
                    linearized.push_back(linearize_record(*dialogue.kb.find(id), options.index.style));
                }
            }
        } else if (!gold.is_null()) {
            for (const auto& entry : retrieve(index, gold, options.top_n).entries) {
                linearized.push_back(*index.text_of(entry.record_id));
            }
        }
        auto response_ctx = context.truncated_until([&](const DialogueContext& c) {
            return whitespace_token_count(render_response_prompt_linearized(linearized, c)) <= budget;
        });
        out.pairs.push_back({Task::response, render_response_prompt_linearized(linearized, response_ctx),
                             dialogue.gold_response(pos), dialogue.session_id, turn});
    }
    return out;
}

inline Json training_pair_to_json(const TrainingPair& pair) {
    return Json{{"task", std::string(to_string(pair.task))},
                {"prompt", pair.prompt},
                {"target", pair.target},
                {"session_id", pair.session_id},
                {"turn", pair.turn}};
}

inline std::string training_pairs_to_jsonl(std::span<const TrainingPair> pairs) {
    std::string out;
    for (const auto& p : pairs) {
        out += training_pair_to_json(p).dump();
        out += '\n';
    }
    return out;
}

// ---------------------------------------------------------------------------
// Result serialization
// ---------------------------------------------------------------------------

inline Json turn_result_to_json(const TurnResult& r) {
    Json retrieved = Json::array();
    for (const auto& e : r.retrieved.entries) retrieved.push_back(Json{{"id", e.record_id}, {"score", e.score}});
    const auto& t = r.timings;
    return Json{{"session_id", r.session_id},
                {"turn", r.turn},
                {"mode", std::string(to_string(r.mode))},
                {"query", r.query.is_null() ? Json(nullptr) : Json(r.query.text())},
                {"raw_query", r.query.raw_generation()},
                {"retrieved", std::move(retrieved)},
                {"response", r.response},
                {"response_prompt_tokens", whitespace_token_count(r.response_prompt)},
                {"timings_ms",
                 Json{{"query", t.query.duration_ms()},
                      {"retrieve", t.retrieve.duration_ms()},
                      {"rerank", t.rerank.duration_ms()},
                      {"response", t.response.duration_ms()},
                      {"total", t.total_ms}}}};
}

/// Reads back the fields evaluation needs; timings are not restored.
inline TurnResult turn_result_from_json(const Json& doc, std::string_view where = "result") {
    auto fail = [&](const std::string& what) { return ParseError(std::string(where) + ": " + what); };
    if (!doc.is_object()) throw fail("expected an object");
    TurnResult r;
    if (!doc.contains("session_id") || !doc["session_id"].is_string()) throw fail("field 'session_id' must be a string");
    r.session_id = doc["session_id"].get<std::string>();
    if (!doc.contains("turn") || !doc["turn"].is_number_unsigned()) throw fail("field 'turn' must be a non-negative integer");
    r.turn = doc["turn"].get<std::size_t>();
    if (!doc.contains("response") || !doc["response"].is_string()) throw fail("field 'response' must be a string");
    r.response = doc["response"].get<std::string>();
    if (doc.contains("mode") && doc["mode"].is_string()) r.mode = mode_from_string(doc["mode"].get<std::string>());
    const auto raw = doc.contains("raw_query") && doc["raw_query"].is_string() ? doc["raw_query"].get<std::string>()
                                                                               : std::string(kNullToken);
    if (doc.contains("query") && doc["query"].is_string()) {
        r.query = Query::text(doc["query"].get<std::string>(), raw);
    } else {
        r.query = Query::null(raw);
    }
    if (doc.contains("retrieved")) {
        if (!doc["retrieved"].is_array()) throw fail("field 'retrieved' must be an array");
        for (const auto& e : doc["retrieved"]) {
            if (!e.is_object() || !e.contains("id") || !e["id"].is_string()) throw fail("retrieved entries need an 'id'");
            r.retrieved.entries.push_back({e["id"].get<std::string>(), e.value("score", 0.0)});
        }
    }
    return r;
}

}  // namespace qtod
