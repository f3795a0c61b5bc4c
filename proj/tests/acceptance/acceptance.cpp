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

// Acceptance checks. Each run evaluates one criterion named on the command
// line and prints a single "PASS <name>: ..." or "FAIL <name>: ..." line.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <map>
#include <mutex>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <thread>

#include "../support/oracles.hpp"
#include "qtod/qtod.hpp"

using namespace qtod;

namespace {

using Clock = std::chrono::steady_clock;

struct Outcome {
    bool ok = true;
    std::ostringstream detail;
    std::vector<std::string> failures;

    void check(bool condition, const std::string& what) {
        if (!condition) {
            ok = false;
            failures.push_back(what);
        }
    }
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::size_t worker_count() { return std::max(1u, std::thread::hardware_concurrency()); }

std::vector<AnnotatedDialogue> synthetic_corpus(std::size_t n, std::uint64_t seed = 13) {
    SyntheticOptions o;
    o.dialogues = n;
    o.seed = seed;
    return generate_synthetic_corpus(o);
}

// Records every generation request before delegating.
class RecordingBackend final : public Backend {
public:
    explicit RecordingBackend(std::shared_ptr<const Backend> inner) : inner_(std::move(inner)) {}
    GenerationResponse generate(const GenerationRequest& request) const override {
        {
            std::lock_guard lock(mu_);
            seen_.push_back({request.task, request.prompt});
        }
        return inner_->generate(request);
    }
    std::string id() const override { return inner_->id(); }
    std::size_t input_budget() const override { return inner_->input_budget(); }
    std::vector<std::pair<Task, std::string>> seen() const {
        std::lock_guard lock(mu_);
        return seen_;
    }

private:
    std::shared_ptr<const Backend> inner_;
    mutable std::mutex mu_;
    mutable std::vector<std::pair<Task, std::string>> seen_;
};

DatasetSplit crossdomain_fixture(std::uint64_t seed) {
    static const DatasetSplit source = split_synthetic(synthetic_corpus(1800, 21));
    std::vector<NamedDataset> sources{{"syn", &source}};
    return build_crossdomain(sources, parse_recipe("syn/restaurant;syn/hotel|syn/attraction"), 600, SplitRatio{}, seed);
}

// ---------------------------------------------------------------------------

Outcome metrics() {
    Outcome out;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(20240601);
    std::size_t mismatches = 0;
    for (int trial = 0; trial < 100; ++trial) {
        auto corpus = oracle::random_entity_corpus(rng, 50);
        const auto want = oracle::entity_counts(corpus.preds, corpus.golds, corpus.lexicon);
        const auto got = entity_f1(corpus.preds, corpus.golds, EntityMatcher(corpus.lexicon));
        if (got.counts.tp != want.tp || got.counts.fp != want.fp || got.counts.fn != want.fn ||
            got.f1 != oracle::f1(want)) {
            ++mismatches;
        }
    }
    out.check(mismatches == 0, std::to_string(mismatches) + "/100 entity corpora disagree with the oracle");

    // Hand-computed from n-gram counts [15,11,8,5]/[17,14,11,8], c=17, r=25.
    const double expected_bleu = 0.4680014544229801;
    std::vector<std::string> preds{"There are 2 options: peking restaurant and ugly duckling.", "no matching options",
                                   "you are welcome"};
    std::vector<std::string> refs{"there are 2 options: peking restaurant and the good luck chinese food takeaway.",
                                  "Sorry, no matching options.", "You are welcome!"};
    const double toy = bleu(preds, refs);
    out.check(std::abs(toy - expected_bleu) <= 1e-9, "toy bleu " + format_double(toy, 12));

    const auto dialogues = synthetic_corpus(60);
    std::vector<std::string> golds;
    for (const auto& d : dialogues) {
        for (auto pos : d.user_positions()) golds.push_back(d.gold_response(pos));
    }
    const auto matcher = dataset_lexicon(dialogues);
    const double gold_f1 = entity_f1(golds, golds, matcher).f1;
    const double gold_bleu = bleu(golds, golds);
    out.check(gold_f1 == 1.0 && std::abs(gold_bleu - 1.0) < 1e-12, "gold-as-prediction not 1.0");
    const double elapsed = seconds_since(t0);
    out.check(elapsed < 10.0, "runtime " + format_double(elapsed, 2) + " s");
    out.detail << "100 oracle corpora, toy bleu " << format_double(toy, 10) << ", gold f1 " << gold_f1 << " bleu "
               << format_double(gold_bleu, 6) << ", " << format_double(elapsed, 2) << " s";
    return out;
}

Outcome retrieval() {
    Outcome out;
    const auto t0 = Clock::now();
    std::mt19937_64 rng(7);
    std::size_t corpora = 0;
    std::size_t tie_corpora = 0;
    std::size_t mismatches = 0;
    while (corpora < 200) {
        auto docs = oracle::random_documents(rng, 64);
        std::set<std::string> ids;
        bool unique = true;
        for (const auto& d : docs) unique = unique && ids.insert(d.first).second;
        if (!unique) continue;
        ++corpora;
        std::vector<KnowledgeRecord> records;
        for (const auto& [id, text] : docs) records.push_back({id, "toy", {{"text", text}}});
        const auto index = build_index(KnowledgeBase(std::move(records)));
        bool tie = false;
        for (int q = 0; q < 5; ++q) {
            const auto query = oracle::random_query(rng);
            const std::size_t n = 1 + rng() % 10;
            const auto got = retrieve(index, query, n);
            const auto want = oracle::bm25_top_n(docs, query, n, 1.2, 0.75);
            bool same = got.entries.size() == want.size();
            for (std::size_t i = 0; same && i < want.size(); ++i) {
                same = got.entries[i].record_id == want[i].id && got.entries[i].score == want[i].score;
            }
            if (!same) ++mismatches;
            const auto full = oracle::bm25_top_n(docs, query, docs.size());
            for (std::size_t i = 1; i < full.size(); ++i) tie = tie || full[i].score == full[i - 1].score;
        }
        if (tie) ++tie_corpora;
    }
    out.check(mismatches == 0, std::to_string(mismatches) + " queries disagree with brute-force bm25");
    out.check(tie_corpora > 0, "no tie cases exercised");
    const double elapsed = seconds_since(t0);
    out.check(elapsed < 30.0, "runtime " + format_double(elapsed, 2) + " s");
    out.detail << corpora << " corpora x 5 queries exact, " << tie_corpora << " with ties, "
               << format_double(elapsed, 2) << " s";
    return out;
}

Outcome synthetic() {
    Outcome out;
    const auto t0 = Clock::now();
    const auto dialogues = synthetic_corpus(300);
    Pipeline qtod_pipeline(std::make_shared<RuleBackend>());
    RunOptions run;
    run.jobs = worker_count();
    const auto report = run_and_evaluate(qtod_pipeline, dialogues, dataset_lexicon(dialogues), run);
    out.check(report.entity.f1 == 1.0, "entity f1 " + format_double(report.entity.f1, 6));
    out.check(report.recall == 1.0, "recall@3 " + format_double(report.recall, 6));

    const auto cross = crossdomain_fixture(3);
    const auto test = cross.test;
    const auto matcher = dataset_lexicon(test);
    const auto q = run_and_evaluate(qtod_pipeline, test, matcher, run);
    const auto identity = run_and_evaluate(qtod_pipeline.with_mode(Mode::identity_query), test, matcher, run);
    out.check(identity.recall < q.recall, "cross-domain identity recall@3 " + format_double(identity.recall, 4) +
                                              " not below qtod " + format_double(q.recall, 4));
    const double elapsed = seconds_since(t0);
    out.check(elapsed < 120.0, "runtime " + format_double(elapsed, 2) + " s");
    out.detail << "300 dialogues f1 " << format_double(report.entity.f1, 4) << " recall@3 "
               << format_double(report.recall, 4) << "; cross-domain recall@3 qtod " << format_double(q.recall, 4)
               << " vs identity " << format_double(identity.recall, 4) << ", " << format_double(elapsed, 2) << " s";
    return out;
}

Outcome scaling() {
    Outcome out;
    const auto t0 = Clock::now();
    const auto dialogues = synthetic_corpus(300);
    const auto pool = generate_distractor_pool(2000, 99);
    const auto sizes = power_of_two_sizes(3, 10);
    Pipeline pipeline(std::make_shared<RuleBackend>());
    RunOptions run;
    run.jobs = worker_count();
    const auto curve = run_scaling_benchmark(pipeline, dialogues, pool, sizes, 5, dataset_lexicon(dialogues), run);
    const auto& base = curve.points.front();
    for (const auto& p : curve.points) {
        const auto tag = "|KB|=" + std::to_string(p.kb_size);
        out.check(std::abs(p.entity_f1 - base.entity_f1) <= 0.01, tag + " f1 " + format_double(p.entity_f1, 4));
        out.check(std::abs(p.recall - base.recall) <= 0.01, tag + " recall " + format_double(p.recall, 4));
        out.check(p.mean_response_prompt_tokens == base.mean_response_prompt_tokens &&
                      p.max_response_prompt_tokens == base.max_response_prompt_tokens,
                  tag + " prompt length changed");
    }
    const auto& last = curve.points.back();
    out.check(last.mean_retrieve_ms < 10.0, "retrieve latency " + format_double(last.mean_retrieve_ms, 4) + " ms");
    const double elapsed = seconds_since(t0);
    out.check(elapsed < 300.0, "runtime " + format_double(elapsed, 2) + " s");
    out.detail << "2^3..2^10 f1 " << format_double(base.entity_f1, 4) << "->" << format_double(last.entity_f1, 4)
               << ", recall@3 " << format_double(base.recall, 4) << "->" << format_double(last.recall, 4)
               << ", prompt tokens " << format_double(last.mean_response_prompt_tokens, 2) << ", retrieve@1024 "
               << format_double(last.mean_retrieve_ms, 4) << " ms, " << format_double(elapsed, 2) << " s";
    return out;
}

Outcome topn() {
    Outcome out;
    Pipeline pipeline(std::make_shared<RuleBackend>());
    RunOptions run;
    run.jobs = worker_count();
    const std::vector<std::size_t> ns{1, 3, 5};
    const auto cross = crossdomain_fixture(11);
    struct Fixture {
        std::string name;
        std::vector<AnnotatedDialogue> dialogues;
        Mode mode;
    };
    std::vector<Fixture> fixtures{{"synthetic", synthetic_corpus(90), Mode::qtod},
                                  {"crossdomain", cross.validation, Mode::qtod},
                                  {"crossdomain-identity", cross.validation, Mode::identity_query}};
    for (const auto& f : fixtures) {
        const auto rows =
            run_topn_ablation(pipeline.with_mode(f.mode), f.dialogues, ns, dataset_lexicon(f.dialogues), run);
        out.check(rows.size() == ns.size(), f.name + ": missing rows");
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const auto& r = rows[i].report;
            const bool populated = rows[i].n == ns[i] && r.turns > 0 && r.recall_n == ns[i] &&
                                   std::isfinite(r.entity.f1) && std::isfinite(r.bleu) && std::isfinite(r.recall);
            out.check(populated, f.name + ": row n=" + std::to_string(ns[i]) + " incomplete");
            if (i > 0) {
                out.check(r.recall >= rows[i - 1].report.recall, f.name + ": recall@" + std::to_string(ns[i]) +
                                                                     " below recall@" + std::to_string(ns[i - 1]));
            }
        }
        const auto csv = ablation_to_csv(rows);
        out.check(std::count(csv.begin(), csv.end(), '\n') == 4, f.name + ": csv rows");
        out.detail << f.name << " recall@1/3/5 = ";
        for (std::size_t i = 0; i < rows.size(); ++i) {
            out.detail << (i ? "/" : "") << format_double(rows[i].report.recall, 3);
        }
        out.detail << "; ";
    }
    return out;
}

struct PublishedStats {
    const char* env;
    SourceFormat format;
    std::size_t dialogues;
    std::size_t utterances;
};

Outcome data() {
    Outcome out;
    const auto cross = crossdomain_fixture(5);
    out.check(cross.train.size() == 400 && cross.validation.size() == 100 && cross.test.size() == 100,
              "cross-domain sizes " + std::to_string(cross.train.size()) + "/" + std::to_string(cross.validation.size()) +
                  "/" + std::to_string(cross.test.size()));

    const auto train = split_synthetic(synthetic_corpus(2000, 4)).train;
    auto ids = [](const std::vector<AnnotatedDialogue>& v) {
        std::set<std::string> s;
        for (const auto& d : v) s.insert(d.session_id);
        return s;
    };
    const auto s1 = ids(fewshot_split(train, 0.01, 17));
    const auto s5 = ids(fewshot_split(train, 0.05, 17));
    const auto s20 = ids(fewshot_split(train, 0.20, 17));
    out.check(std::includes(s5.begin(), s5.end(), s1.begin(), s1.end()) &&
                  std::includes(s20.begin(), s20.end(), s5.begin(), s5.end()),
              "few-shot splits are not nested");
    out.detail << "cross-domain 400/100/100, few-shot " << s1.size() << " < " << s5.size() << " < " << s20.size()
               << " nested";

    // Published corpus statistics, checked only for corpora present locally.
    const std::vector<PublishedStats> published{{"QTOD_SMD_DIR", SourceFormat::smd, 3031, 15928},
                                                {"QTOD_CAMREST_DIR", SourceFormat::camrest, 676, 5488},
                                                {"QTOD_MWOZ_DIR", SourceFormat::mwoz, 2097, 19632}};
    std::size_t checked = 0;
    for (const auto& p : published) {
        const char* dir = std::getenv(p.env);
        if (dir == nullptr || *dir == '\0') continue;
        ConvertReport report;
        const auto stats = dataset_stats(convert_corpus(dir, p.format, report));
        out.check(stats.dialogues == p.dialogues, std::string(p.env) + " dialogues " + std::to_string(stats.dialogues));
        out.check(stats.utterances == p.utterances,
                  std::string(p.env) + " utterances " + std::to_string(stats.utterances));
        ++checked;
    }
    out.detail << "; corpus statistics checked for " << checked << " of 3 corpora";
    if (checked == 0) out.detail << " (none available locally)";
    return out;
}

Outcome prompts() {
    Outcome out;
    auto recorder = std::make_shared<RecordingBackend>(std::make_shared<RuleBackend>());
    const auto dialogues = synthetic_corpus(90);
    const auto cross = crossdomain_fixture(9).test;
    RunOptions run;
    run.jobs = worker_count();
    Pipeline base(recorder);
    PipelineConfig reranked;
    reranked.rerank_depth = 5;
    for (const auto& p : {base, base.with_mode(Mode::oracle_knowledge), base.with_config(reranked)}) {
        run_dialogues(p, dialogues, run);
        run_dialogues(p, cross, run);
    }
    run_dialogues(base.with_mode(Mode::identity_query), dialogues, run);

    auto kb = std::make_shared<const KnowledgeBase>(dialogues.front().kb);
    auto index = std::make_shared<const RetrieverIndex>(build_index(*kb));
    Session session(base, kb, index);
    for (const auto& turn : dialogues.front().turns) {
        if (turn.speaker == Speaker::user) session.run_turn(turn.text);
    }

    std::size_t query = 0;
    std::size_t response = 0;
    std::size_t bad = 0;
    for (const auto& [task, prompt] : recorder->seen()) {
        if (task == Task::query) {
            ++query;
            if (!starts_with(prompt, "translate dialogue context to query:")) ++bad;
        } else if (task == Task::response) {
            ++response;
            if (!starts_with(prompt, "generate system response based on knowledge and dialogue context:")) ++bad;
        }
    }
    out.check(query > 0 && response > 0, "no prompts observed");
    out.check(bad == 0, std::to_string(bad) + " prompts with a wrong prefix");
    out.detail << query << " query and " << response << " response prompts, " << bad << " bad";
    return out;
}

}  // namespace

int main(int argc, char** argv) {
    const std::map<std::string, std::function<Outcome()>> criteria{
        {"metrics", metrics}, {"retrieval", retrieval}, {"synthetic", synthetic}, {"scaling", scaling},
        {"topn", topn},       {"data", data},           {"prompts", prompts}};
    if (argc != 2 || criteria.count(argv[1]) == 0) {
        std::cerr << "usage: qtod_acceptance <metrics|retrieval|synthetic|scaling|topn|data|prompts>\n";
        return 2;
    }
    const std::string name = argv[1];
    Outcome outcome;
    try {
        outcome = criteria.at(name)();
    } catch (const std::exception& e) {
        outcome.check(false, std::string("exception: ") + e.what());
    }
    if (outcome.ok) {
        std::cout << "PASS " << name << ": " << outcome.detail.str() << '\n';
        return 0;
    }
    std::cout << "FAIL " << name << ":";
    for (const auto& f : outcome.failures) std::cout << ' ' << f << ';';
    std::cout << ' ' << outcome.detail.str() << '\n';
    return 1;
}
