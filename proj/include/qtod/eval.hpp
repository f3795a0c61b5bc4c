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

// Batch runs and scoring. Dialogues are replayed with gold history: the
// context of each user turn holds the annotated turns before it, not the
// system's own earlier outputs.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <functional>
#include <map>
#include <mutex>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "qtod/data.hpp"
#include "qtod/kb.hpp"
#include "qtod/metrics.hpp"
#include "qtod/pipeline.hpp"
#include "qtod/random.hpp"
#include "qtod/retriever.hpp"

namespace qtod {

/// Knowledge base used for dialogue `index`; defaults to the session KB.
using KbSelector = std::function<KnowledgeBase(const AnnotatedDialogue& dialogue, std::size_t index)>;

struct RunOptions {
    std::size_t jobs = 1;
    IndexConfig index;
    KbSelector kb_for;  // empty: session KB
};

inline bool result_order(const TurnResult& a, const TurnResult& b) {
    if (a.session_id != b.session_id) return a.session_id < b.session_id;
    return a.turn < b.turn;
}

/// Runs every user turn of every dialogue. Output is sorted by (session_id, turn)
/// whatever the job count.
inline std::vector<TurnResult> run_dialogues(const Pipeline& pipeline, std::span<const AnnotatedDialogue> dialogues,
                                             const RunOptions& options = {}) {
    std::vector<std::vector<TurnResult>> per_dialogue(dialogues.size());
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::atomic<bool> stop{false};

    auto worker = [&] {
        while (!stop.load()) {
            const auto i = next.fetch_add(1);
            if (i >= dialogues.size()) return;
            try {
                const auto& d = dialogues[i];
                const auto kb = options.kb_for ? options.kb_for(d, i) : d.kb;
                const auto index = build_index(kb, options.index);
                std::size_t ordinal = 0;
                for (auto pos : d.user_positions()) {
                    auto result = pipeline.process(d.context_at(pos), kb, index, d.turns[pos].gold_record_ids);
                    result.turn = ordinal++;
                    per_dialogue[i].push_back(std::move(result));
                }
            } catch (...) {
                std::lock_guard lock(failure_mutex);
                if (!failure) failure = std::current_exception();
                stop.store(true);
                return;
            }
        }
    };

    const auto jobs = std::max<std::size_t>(1, std::min(options.jobs, dialogues.size()));
    if (jobs == 1) {
        worker();
    } else {
        std::vector<std::thread> threads;
        threads.reserve(jobs);
        for (std::size_t j = 0; j < jobs; ++j) threads.emplace_back(worker);
        for (auto& t : threads) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    std::vector<TurnResult> out;
    for (auto& part : per_dialogue) {
        for (auto& r : part) out.push_back(std::move(r));
    }
    std::stable_sort(out.begin(), out.end(), result_order);
    return out;
}

/// Union of the session KB lexicons.
inline EntityMatcher dataset_lexicon(std::span<const AnnotatedDialogue> dialogues) {
    std::set<std::string> lexicon;
    for (const auto& d : dialogues) lexicon.insert(d.kb.entity_lexicon().begin(), d.kb.entity_lexicon().end());
    return EntityMatcher(lexicon);
}

struct EvalReport {
    EntityScore entity;
    double bleu = 0.0;
    std::size_t recall_n = kDefaultTopN;
    double recall = 0.0;  // recall@recall_n
    std::map<std::string, EntityScore> per_domain;
    std::size_t turns = 0;
    double mean_retrieve_ms = 0.0;  // over turns where retrieval ran
};

/// One gold-aligned turn.
struct AlignedTurn {
    const TurnResult* result;
    const AnnotatedDialogue* dialogue;
    std::size_t position;  // index of the user turn in dialogue->turns
};

/// Pairs each result with its gold turn by (session_id, turn). Every gold user
/// turn needs exactly one result and vice versa.
inline std::vector<AlignedTurn> align_results(std::span<const TurnResult> results,
                                              std::span<const AnnotatedDialogue> dialogues) {
    std::map<std::pair<std::string, std::size_t>, const TurnResult*> by_key;
    std::set<std::string> problems;
    for (const auto& r : results) {
        if (!by_key.emplace(std::make_pair(r.session_id, r.turn), &r).second) {
            problems.insert(r.session_id + " (duplicate turn " + std::to_string(r.turn) + ")");
        }
    }
    std::vector<AlignedTurn> out;
    std::size_t matched = 0;
    for (const auto& d : dialogues) {
        std::size_t ordinal = 0;
        for (auto pos : d.user_positions()) {
            auto it = by_key.find({d.session_id, ordinal});
            if (it == by_key.end()) {
                problems.insert(d.session_id + " (missing turn " + std::to_string(ordinal) + ")");
            } else {
                out.push_back({it->second, &d, pos});
                ++matched;
            }
            ++ordinal;
        }
    }
    if (matched != by_key.size()) {
        std::set<std::pair<std::string, std::size_t>> gold_keys;
        for (const auto& d : dialogues) {
            for (std::size_t t = 0; t < d.user_positions().size(); ++t) gold_keys.insert({d.session_id, t});
        }
        for (const auto& [key, r] : by_key) {
            if (!gold_keys.count(key)) problems.insert(key.first + " (no gold turn " + std::to_string(key.second) + ")");
        }
    }
    if (!problems.empty()) {
        std::string msg = "results do not align with the dataset; unmatched sessions:";
        std::size_t shown = 0;
        for (const auto& p : problems) {
            if (shown++ == 20) {
                msg += " ... (" + std::to_string(problems.size() - 20) + " more)";
                break;
            }
            msg += " " + p;
        }
        throw ValidationError(msg);
    }
    return out;
}

inline EvalReport evaluate(std::span<const TurnResult> results, std::span<const AnnotatedDialogue> dialogues,
                           const EntityMatcher& matcher, std::size_t recall_n = kDefaultTopN) {
    const auto aligned = align_results(results, dialogues);
    std::vector<std::string> preds;
    std::vector<std::string> golds;
    std::vector<TaggedTurn> tagged;
    std::vector<std::vector<std::string>> retrieved;
    std::vector<std::optional<std::vector<std::string>>> gold_ids;
    double retrieve_ms = 0.0;
    std::size_t retrieve_turns = 0;
    for (const auto& a : aligned) {
        preds.push_back(a.result->response);
        golds.push_back(a.dialogue->gold_response(a.position));
        tagged.push_back({a.dialogue->turn_domain(a.position), preds.back(), golds.back()});
        retrieved.push_back(a.result->retrieved.ids());
        gold_ids.push_back(a.dialogue->turns[a.position].gold_record_ids);
        if (!a.result->query.is_null() || a.result->mode == Mode::oracle_knowledge) {
            retrieve_ms += a.result->timings.retrieve.duration_ms();
            ++retrieve_turns;
        }
    }
    EvalReport report;
    report.entity = entity_f1(preds, golds, matcher);
    report.bleu = bleu(preds, golds);
    report.recall_n = recall_n;
    report.recall = recall_at_n(retrieved, gold_ids, recall_n);
    report.per_domain = domainwise_report(tagged, matcher);
    report.turns = aligned.size();
    report.mean_retrieve_ms = retrieve_turns == 0 ? 0.0 : retrieve_ms / static_cast<double>(retrieve_turns);
    return report;
}

/// Runs the pipeline over `dialogues` and scores the outcome.
inline EvalReport run_and_evaluate(const Pipeline& pipeline, std::span<const AnnotatedDialogue> dialogues,
                                   const EntityMatcher& matcher, const RunOptions& options = {}) {
    auto results = run_dialogues(pipeline, dialogues, options);
    return evaluate(results, dialogues, matcher, pipeline.config().top_n);
}

// ---------------------------------------------------------------------------
// Knowledge-base scaling
// ---------------------------------------------------------------------------

struct ScalingPoint {
    std::size_t kb_size = 0;
    double entity_f1 = 0.0;
    double recall = 0.0;
    double mean_retrieve_ms = 0.0;
    double mean_response_prompt_tokens = 0.0;
    std::size_t max_response_prompt_tokens = 0;
};

struct ScalingCurve {
    std::vector<ScalingPoint> points;
};

inline bool is_power_of_two(std::size_t x) { return x != 0 && (x & (x - 1)) == 0; }

/// For each size, every session KB is expanded with pool records (seed derived
/// per dialogue), re-indexed, and the full evaluation rerun. Sizes at or below
/// a session's own KB size leave that KB unchanged.
inline ScalingCurve run_scaling_benchmark(const Pipeline& pipeline, std::span<const AnnotatedDialogue> dialogues,
                                          const KnowledgeBase& pool, std::span<const std::size_t> sizes,
                                          std::uint64_t seed, const EntityMatcher& matcher,
                                          const RunOptions& options = {}) {
    if (sizes.empty()) throw ValidationError("scaling benchmark needs at least one size");
    for (std::size_t i = 0; i < sizes.size(); ++i) {
        if (!is_power_of_two(sizes[i])) {
            throw ValidationError("scaling size " + std::to_string(sizes[i]) + " is not a power of two");
        }
        if (i > 0 && sizes[i] <= sizes[i - 1]) throw ValidationError("scaling sizes must be strictly increasing");
    }
    ScalingCurve curve;
    for (auto size : sizes) {
        auto run = options;
        run.kb_for = [&pool, size, seed](const AnnotatedDialogue& d, std::size_t i) {
            if (size <= d.kb.size()) return d.kb;
            return expand_kb(d.kb, size, pool, derive_seed(seed, i));
        };
        const auto results = run_dialogues(pipeline, dialogues, run);
        const auto report = evaluate(results, dialogues, matcher, pipeline.config().top_n);
        ScalingPoint point;
        point.kb_size = size;
        point.entity_f1 = report.entity.f1;
        point.recall = report.recall;
        point.mean_retrieve_ms = report.mean_retrieve_ms;
        std::size_t total_tokens = 0;
        for (const auto& r : results) {
            const auto tokens = whitespace_token_count(r.response_prompt);
            total_tokens += tokens;
            point.max_response_prompt_tokens = std::max(point.max_response_prompt_tokens, tokens);
        }
        point.mean_response_prompt_tokens =
            results.empty() ? 0.0 : static_cast<double>(total_tokens) / static_cast<double>(results.size());
        curve.points.push_back(point);
    }
    return curve;
}

/// 2^lo .. 2^hi.
inline std::vector<std::size_t> power_of_two_sizes(unsigned lo, unsigned hi) {
    std::vector<std::size_t> out;
    for (unsigned e = lo; e <= hi; ++e) out.push_back(std::size_t{1} << e);
    return out;
}

// ---------------------------------------------------------------------------
// Top-n ablation
// ---------------------------------------------------------------------------

struct TopNRow {
    std::size_t n = 0;
    EvalReport report;
};

inline std::vector<TopNRow> run_topn_ablation(const Pipeline& pipeline, std::span<const AnnotatedDialogue> dialogues,
                                              std::span<const std::size_t> n_values, const EntityMatcher& matcher,
                                              const RunOptions& options = {}) {
    if (n_values.empty()) throw ValidationError("top-n ablation needs at least one n");
    std::vector<TopNRow> rows;
    for (auto n : n_values) {
        auto config = pipeline.config();
        config.top_n = n;
        if (config.rerank_depth != 0) config.rerank_depth = std::max(config.rerank_depth, n);
        rows.push_back({n, run_and_evaluate(pipeline.with_config(config), dialogues, matcher, options)});
    }
    return rows;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

inline std::string format_double(double v, int precision = 4) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", precision, v);
    return buf;
}

inline Json entity_score_to_json(const EntityScore& s) {
    return Json{{"entity_f1", s.f1},
                {"precision", s.precision},
                {"recall", s.recall},
                {"tp", s.counts.tp},
                {"fp", s.counts.fp},
                {"fn", s.counts.fn},
                {"turns", s.counts.turns}};
}

inline Json report_to_json(const EvalReport& r) {
    Json per_domain = Json::object();
    for (const auto& [domain, s] : r.per_domain) per_domain[domain] = entity_score_to_json(s);
    return Json{{"entity_f1", r.entity.f1},
                {"precision", r.entity.precision},
                {"recall", r.entity.recall},
                {"bleu", r.bleu},
                {"recall_at_n", Json{{"n", r.recall_n}, {"value", r.recall}}},
                {"counts", Json{{"tp", r.entity.counts.tp}, {"fp", r.entity.counts.fp}, {"fn", r.entity.counts.fn}}},
                {"per_domain", std::move(per_domain)},
                {"turns", r.turns},
                {"mean_retrieve_ms", r.mean_retrieve_ms}};
}

/// metric,value rows; per-domain scores as domain/<name>/entity_f1.
inline std::string report_to_csv(const EvalReport& r) {
    std::ostringstream out;
    out << "metric,value\n";
    out << "entity_f1," << format_double(r.entity.f1, 6) << '\n';
    out << "precision," << format_double(r.entity.precision, 6) << '\n';
    out << "recall," << format_double(r.entity.recall, 6) << '\n';
    out << "bleu," << format_double(r.bleu, 6) << '\n';
    out << "recall_at_" << r.recall_n << ',' << format_double(r.recall, 6) << '\n';
    out << "tp," << r.entity.counts.tp << '\n';
    out << "fp," << r.entity.counts.fp << '\n';
    out << "fn," << r.entity.counts.fn << '\n';
    out << "turns," << r.turns << '\n';
    out << "mean_retrieve_ms," << format_double(r.mean_retrieve_ms, 6) << '\n';
    for (const auto& [domain, s] : r.per_domain) {
        out << "domain/" << domain << "/entity_f1," << format_double(s.f1, 6) << '\n';
    }
    return out.str();
}

inline std::string report_to_table(const EvalReport& r) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%-22s %10s\n", "metric", "value");
    out << line;
    auto row = [&](const std::string& name, double v) {
        std::snprintf(line, sizeof line, "%-22s %10.4f\n", name.c_str(), v);
        out << line;
    };
    row("entity_f1", r.entity.f1);
    row("precision", r.entity.precision);
    row("recall", r.entity.recall);
    row("bleu", r.bleu);
    row("recall@" + std::to_string(r.recall_n), r.recall);
    row("mean_retrieve_ms", r.mean_retrieve_ms);
    std::snprintf(line, sizeof line, "%-22s %10zu\n", "turns", r.turns);
    out << line;
    for (const auto& [domain, s] : r.per_domain) row("f1[" + domain + "]", s.f1);
    return out.str();
}

enum class ScalingMetric { entity_f1, recall };

/// kb_size,metric,latency_ms
inline std::string curve_to_csv(const ScalingCurve& curve, ScalingMetric metric = ScalingMetric::entity_f1) {
    std::ostringstream out;
    out << "kb_size,metric,latency_ms\n";
    for (const auto& p : curve.points) {
        out << p.kb_size << ',' << format_double(metric == ScalingMetric::entity_f1 ? p.entity_f1 : p.recall, 6)
            << ',' << format_double(p.mean_retrieve_ms, 6) << '\n';
    }
    return out.str();
}

inline Json curve_to_json(const ScalingCurve& curve) {
    Json points = Json::array();
    for (const auto& p : curve.points) {
        points.push_back(Json{{"kb_size", p.kb_size},
                              {"entity_f1", p.entity_f1},
                              {"recall", p.recall},
                              {"mean_retrieve_ms", p.mean_retrieve_ms},
                              {"mean_response_prompt_tokens", p.mean_response_prompt_tokens},
                              {"max_response_prompt_tokens", p.max_response_prompt_tokens}});
    }
    return Json{{"points", std::move(points)}};
}

inline std::string curve_to_table(const ScalingCurve& curve) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%8s %10s %10s %12s %12s\n", "kb_size", "entity_f1", "recall", "retrieve_ms",
                  "prompt_tok");
    out << line;
    for (const auto& p : curve.points) {
        std::snprintf(line, sizeof line, "%8zu %10.4f %10.4f %12.4f %12.1f\n", p.kb_size, p.entity_f1, p.recall,
                      p.mean_retrieve_ms, p.mean_response_prompt_tokens);
        out << line;
    }
    return out.str();
}

inline Json ablation_to_json(std::span<const TopNRow> rows) {
    Json out = Json::array();
    for (const auto& row : rows) {
        auto r = report_to_json(row.report);
        r["n"] = row.n;
        out.push_back(std::move(r));
    }
    return out;
}

/// n,entity_f1,precision,recall,bleu,recall_at_n
inline std::string ablation_to_csv(std::span<const TopNRow> rows) {
    std::ostringstream out;
    out << "n,entity_f1,precision,recall,bleu,recall_at_n\n";
    for (const auto& row : rows) {
        const auto& r = row.report;
        out << row.n << ',' << format_double(r.entity.f1, 6) << ',' << format_double(r.entity.precision, 6) << ','
            << format_double(r.entity.recall, 6) << ',' << format_double(r.bleu, 6) << ','
            << format_double(r.recall, 6) << '\n';
    }
    return out.str();
}

inline std::string ablation_to_table(std::span<const TopNRow> rows) {
    std::ostringstream out;
    char line[160];
    std::snprintf(line, sizeof line, "%4s %10s %10s %10s %10s %10s\n", "n", "entity_f1", "precision", "recall", "bleu",
                  "recall@n");
    out << line;
    for (const auto& row : rows) {
        const auto& r = row.report;
        std::snprintf(line, sizeof line, "%4zu %10.4f %10.4f %10.4f %10.4f %10.4f\n", row.n, r.entity.f1,
                      r.entity.precision, r.entity.recall, r.bleu, r.recall);
        out << line;
    }
    return out.str();
}

}  // namespace qtod
