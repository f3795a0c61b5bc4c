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

// qtod: batch runs, evaluation, benchmarks, dataset tooling and a chat REPL.
//
// Exit codes: 0 ok, 1 validation/config, 2 backend transport, 3 internal.

#include <unistd.h>

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "qtod/qtod.hpp"

namespace fs = std::filesystem;
using namespace qtod;

namespace {

struct Options {
    // shared
    std::string dataset;
    std::string partition;
    std::string backend = "rule";
    std::string backend_url;
    std::string script;
    std::string retriever = "bm25";
    std::string embed_url;
    std::string metric = "cosine";
    std::string mode = "qtod";
    std::size_t top_n = kDefaultTopN;
    std::size_t rerank_depth = 0;
    std::size_t beam_size = kDefaultBeamSize;
    std::size_t max_output_tokens = kDefaultMaxOutputTokens;
    std::size_t input_budget = kDefaultInputBudget;
    double bm25_k1 = 1.2;
    double bm25_b = 0.75;
    std::uint64_t seed = 13;
    std::size_t jobs = 1;
    std::string out = "runs";
    std::string run_id;
    long timeout_ms = 30000;
    int retries = 2;

    // run / eval
    std::string results;
    std::string lexicon;
    // bench-kb
    std::string pool;
    std::size_t pool_size = 2000;
    std::string sizes = "8,16,32,64,128,256,512,1024";
    std::string bench_metric = "entity_f1";
    // topn
    std::string n_values = "1,3,5";
    // build-crossdomain
    std::vector<std::string> sources;
    std::string recipe;
    std::size_t count = 600;
    std::string ratio = "400/100/100";
    // fewshot
    double fraction = 0.01;
    // export-training
    bool gold_records = false;
    // chat
    std::string kb;
    std::string session;
    // convert
    std::string format = "smd";
    std::string input;
    // gen-synthetic
    std::size_t dialogues = 300;
    std::size_t kb_size = 8;
    std::string pool_out;
};

std::string describe(const Options& o, const std::string& command) {
    std::ostringstream s;
    s << command << '|' << o.dataset << '|' << o.partition << '|' << o.backend << '|' << o.backend_url << '|'
      << o.script << '|' << o.retriever << '|' << o.embed_url << '|' << o.metric << '|' << o.mode << '|' << o.top_n
      << '|' << o.rerank_depth << '|' << o.beam_size << '|' << o.max_output_tokens << '|' << o.input_budget << '|'
      << o.bm25_k1 << '|' << o.bm25_b << '|' << o.seed << '|' << o.results << '|' << o.pool << '|' << o.pool_size
      << '|' << o.sizes << '|' << o.n_values;
    return s.str();
}

Json options_to_json(const Options& o, const std::string& command, const std::string& run_id) {
    return Json{{"command", command},         {"run_id", run_id},
                {"dataset", o.dataset},       {"partition", o.partition},
                {"backend", o.backend},       {"backend_url", o.backend_url},
                {"script", o.script},         {"retriever", o.retriever},
                {"embed_url", o.embed_url},   {"dense_metric", o.metric},
                {"mode", o.mode},             {"top_n", o.top_n},
                {"rerank_depth", o.rerank_depth}, {"beam_size", o.beam_size},
                {"max_output_tokens", o.max_output_tokens}, {"input_budget", o.input_budget},
                {"bm25_k1", o.bm25_k1},       {"bm25_b", o.bm25_b},
                {"seed", o.seed},             {"jobs", o.jobs}};
}

/// <UTC timestamp>-<8 hex digits of FNV-1a over the effective configuration>.
std::string make_run_id(const Options& o, const std::string& command) {
    if (!o.run_id.empty()) return o.run_id;
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : describe(o, command)) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y%m%dT%H%M%SZ", &tm);
    char hash[16];
    std::snprintf(hash, sizeof hash, "%08llx", static_cast<unsigned long long>(h & 0xffffffffULL));
    return std::string(stamp) + "-" + hash;
}

void write_file(const fs::path& path, const std::string& content) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot write '" + path.string() + "'");
    out << content;
}

/// Fresh directory for an append-only run artifact.
fs::path run_dir(const Options& o, const std::string& run_id) {
    auto dir = fs::path(o.out) / run_id;
    if (fs::exists(dir / "config.json")) throw ValidationError("run directory '" + dir.string() + "' already exists");
    fs::create_directories(dir);
    return dir;
}

std::shared_ptr<const Backend> make_backend(const Options& o) {
    RemoteOptions remote;
    remote.timeout = std::chrono::milliseconds(o.timeout_ms);
    remote.max_retries = o.retries;
    remote.input_budget = o.input_budget;
    if (o.backend == "rule") return std::make_shared<RuleBackend>(RuleGrammar::standard(), o.input_budget);
    if (o.backend == "scripted") {
        if (o.script.empty()) throw ConfigError("--backend scripted needs --script <file>");
        return std::make_shared<ScriptedBackend>(ScriptedBackend::from_file(o.script));
    }
    if (o.backend == "remote") {
        if (o.backend_url.empty()) throw ConfigError("--backend remote needs --backend-url or QTOD_BACKEND_URL");
        return std::make_shared<RemoteBackend>(o.backend_url, remote);
    }
    throw ConfigError("unknown backend '" + o.backend + "' (scripted|rule|remote)");
}

IndexConfig make_index_config(const Options& o) {
    IndexConfig config;
    config.bm25 = {o.bm25_k1, o.bm25_b};
    if (o.retriever == "bm25") {
        config.kind = IndexKind::bm25;
        return config;
    }
    if (o.retriever != "dense") throw ConfigError("unknown retriever '" + o.retriever + "' (bm25|dense)");
    config.kind = IndexKind::dense;
    if (o.metric == "cosine") {
        config.metric = DenseMetric::cosine;
    } else if (o.metric == "dot") {
        config.metric = DenseMetric::dot;
    } else {
        throw ConfigError("unknown dense metric '" + o.metric + "' (cosine|dot)");
    }
    if (o.embed_url.empty()) throw ConfigError("--retriever dense needs --embed-url (a server URL or hash:DIM)");
    if (starts_with(o.embed_url, "hash:")) {
        std::size_t dim = 0;
        try {
            dim = std::stoul(o.embed_url.substr(5));
        } catch (const std::exception&) {
            throw ConfigError("--embed-url hash:DIM needs a positive integer dimension");
        }
        if (dim == 0) throw ConfigError("--embed-url hash:DIM needs a positive integer dimension");
        config.provider = std::make_shared<HashingEmbeddingProvider>(dim);
    } else {
        RemoteOptions remote;
        remote.timeout = std::chrono::milliseconds(o.timeout_ms);
        remote.max_retries = o.retries;
        config.provider = std::make_shared<RemoteEmbeddingProvider>(o.embed_url, remote);
    }
    return config;
}

Pipeline make_pipeline(const Options& o) {
    PipelineConfig config;
    config.mode = mode_from_string(o.mode);
    config.top_n = o.top_n;
    config.rerank_depth = o.rerank_depth;
    config.beam_size = o.beam_size;
    config.max_output_tokens = o.max_output_tokens;
    config.input_budget = o.input_budget;
    return Pipeline(make_backend(o), config);
}

RunOptions make_run_options(const Options& o) {
    RunOptions run;
    run.jobs = o.jobs;
    run.index = make_index_config(o);
    return run;
}

std::vector<AnnotatedDialogue> load_partition_of(const Options& o, const std::string& fallback) {
    if (o.dataset.empty()) throw ConfigError("--dataset is required");
    auto split = load_dataset(o.dataset);
    return split.partition(o.partition.empty() ? fallback : o.partition);
}

std::vector<std::size_t> parse_size_list(const std::string& text, const char* what) {
    std::vector<std::size_t> out;
    for (const auto& part : split(text, ",")) {
        if (trim(part).empty()) continue;
        try {
            std::size_t used = 0;
            auto v = std::stoul(std::string(trim(part)), &used);
            if (used != trim(part).size()) throw std::invalid_argument(part);
            out.push_back(v);
        } catch (const std::exception&) {
            throw ConfigError(std::string(what) + ": '" + part + "' is not a non-negative integer");
        }
    }
    if (out.empty()) throw ConfigError(std::string(what) + " is empty");
    return out;
}

EntityMatcher lexicon_for(const Options& o, std::span<const AnnotatedDialogue> dialogues) {
    if (o.lexicon.empty()) return dataset_lexicon(dialogues);
    return EntityMatcher(load_kb(o.lexicon, KbFormat::dataset_json).entity_lexicon());
}

std::vector<TurnResult> read_results(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open results '" + path.string() + "'");
    std::vector<TurnResult> out;
    std::string line;
    std::size_t no = 0;
    while (std::getline(in, line)) {
        ++no;
        if (trim(line).empty()) continue;
        const auto where = path.filename().string() + ":" + std::to_string(no);
        try {
            out.push_back(turn_result_from_json(Json::parse(line), where));
        } catch (const nlohmann::json::parse_error& e) {
            throw ParseError(where + ": " + e.what());
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

int cmd_run(const Options& o) {
    const auto dialogues = load_partition_of(o, "test");
    const auto pipeline = make_pipeline(o);
    const auto results = run_dialogues(pipeline, dialogues, make_run_options(o));
    const auto id = make_run_id(o, "run");
    const auto dir = run_dir(o, id);
    std::string body;
    for (const auto& r : results) body += turn_result_to_json(r).dump() + "\n";
    write_file(dir / "results.jsonl", body);
    write_file(dir / "config.json", options_to_json(o, "run", id).dump(2) + "\n");
    std::cout << "run " << id << ": " << results.size() << " turns from " << dialogues.size() << " dialogues -> "
              << (dir / "results.jsonl").string() << "\n";
    return kExitOk;
}

int cmd_eval(const Options& o) {
    if (o.results.empty()) throw ConfigError("--results is required");
    const auto dialogues = load_partition_of(o, "test");
    const auto results = read_results(o.results);
    const auto matcher = lexicon_for(o, dialogues);
    const auto report = evaluate(results, dialogues, matcher, o.top_n);
    const auto dir = fs::path(o.results).parent_path();
    write_file(dir / "report.json", report_to_json(report).dump(2) + "\n");
    write_file(dir / "report.csv", report_to_csv(report));
    std::cout << report_to_table(report);
    return kExitOk;
}

int cmd_bench_kb(const Options& o) {
    const auto dialogues = load_partition_of(o, "test");
    const auto pool = o.pool.empty() ? generate_distractor_pool(o.pool_size, derive_seed(o.seed, 1))
                                     : load_kb(o.pool, KbFormat::dataset_json);
    const auto sizes = parse_size_list(o.sizes, "--sizes");
    const auto metric = o.bench_metric == "recall" ? ScalingMetric::recall : ScalingMetric::entity_f1;
    if (o.bench_metric != "recall" && o.bench_metric != "entity_f1") {
        throw ConfigError("--metric-name must be entity_f1 or recall");
    }
    const auto curve = run_scaling_benchmark(make_pipeline(o), dialogues, pool, sizes, o.seed,
                                             lexicon_for(o, dialogues), make_run_options(o));
    const auto id = make_run_id(o, "bench-kb");
    const auto dir = run_dir(o, id);
    write_file(dir / "curve.csv", curve_to_csv(curve, metric));
    write_file(dir / "curve.json", curve_to_json(curve).dump(2) + "\n");
    write_file(dir / "config.json", options_to_json(o, "bench-kb", id).dump(2) + "\n");
    std::cout << curve_to_table(curve) << "-> " << (dir / "curve.csv").string() << "\n";
    return kExitOk;
}

int cmd_topn(const Options& o) {
    const auto dialogues = load_partition_of(o, "validation");
    const auto n_values = parse_size_list(o.n_values, "--n-values");
    const auto rows = run_topn_ablation(make_pipeline(o), dialogues, n_values, lexicon_for(o, dialogues),
                                        make_run_options(o));
    const auto id = make_run_id(o, "topn");
    const auto dir = run_dir(o, id);
    write_file(dir / "ablation.csv", ablation_to_csv(rows));
    write_file(dir / "ablation.json", ablation_to_json(rows).dump(2) + "\n");
    write_file(dir / "config.json", options_to_json(o, "topn", id).dump(2) + "\n");
    std::cout << ablation_to_table(rows) << "-> " << (dir / "ablation.csv").string() << "\n";
    return kExitOk;
}

int cmd_build_crossdomain(const Options& o) {
    if (o.sources.empty()) throw ConfigError("--source name=dir is required (repeatable)");
    if (o.recipe.empty()) throw ConfigError("--recipe is required");
    std::vector<std::pair<std::string, DatasetSplit>> loaded;
    for (const auto& spec : o.sources) {
        const auto eq = spec.find('=');
        if (eq == std::string::npos || eq == 0) throw ConfigError("--source must look like name=dir");
        loaded.emplace_back(spec.substr(0, eq), load_dataset(spec.substr(eq + 1)));
    }
    std::vector<NamedDataset> named;
    for (const auto& [name, split] : loaded) named.push_back({name, &split});
    const auto recipe = parse_recipe(o.recipe);
    const auto ratio = parse_split_ratio(o.ratio);
    const auto out = build_crossdomain(named, recipe, o.count, ratio, o.seed);
    save_dataset(o.out, out);
    Json sources = Json::array();
    for (const auto& s : o.sources) sources.push_back(s);
    write_file(fs::path(o.out) / "meta.json",
               Json{{"recipe", o.recipe}, {"count", o.count}, {"ratio", o.ratio}, {"seed", o.seed},
                    {"sources", sources}, {"sizes", Json{{"train", out.train.size()},
                                                         {"validation", out.validation.size()},
                                                         {"test", out.test.size()}}}}
                       .dump(2) + "\n");
    std::cout << "cross-domain dataset: " << out.train.size() << "/" << out.validation.size() << "/"
              << out.test.size() << " -> " << o.out << "\n";
    return kExitOk;
}

int cmd_fewshot(const Options& o) {
    if (o.dataset.empty()) throw ConfigError("--dataset is required");
    if (!(o.fraction > 0.0 && o.fraction <= 1.0)) throw ConfigError("--fraction must be in (0, 1]");
    auto split = load_dataset(o.dataset);
    if (split.train.empty()) throw ValidationError("dataset '" + o.dataset + "' has an empty train partition");
    const auto n = split.train.size();
    split.train = fewshot_split(split.train, o.fraction, o.seed);
    save_dataset(o.out, split);
    write_file(fs::path(o.out) / "meta.json", Json{{"source", o.dataset},
                                                   {"fraction", o.fraction},
                                                   {"seed", o.seed},
                                                   {"train_before", n},
                                                   {"train_after", split.train.size()}}
                                                  .dump(2) + "\n");
    std::cout << "few-shot train: " << split.train.size() << " of " << n << " dialogues -> " << o.out << "\n";
    return kExitOk;
}

int cmd_export_training(const Options& o) {
    const auto dialogues = load_partition_of(o, "train");
    ExportOptions options;
    options.top_n = o.top_n;
    options.use_gold_records = o.gold_records;
    options.index = make_index_config(o);
    options.input_budget = o.input_budget;
    std::string body;
    std::size_t pairs = 0;
    std::size_t skipped = 0;
    for (const auto& d : dialogues) {
        auto exported = export_training_pairs(d, options);
        pairs += exported.pairs.size();
        skipped += exported.skipped_turns;
        body += training_pairs_to_jsonl(exported.pairs);
    }
    const auto path = fs::path(o.out).extension() == ".jsonl" ? fs::path(o.out) : fs::path(o.out) / "pairs.jsonl";
    write_file(path, body);
    if (skipped > 0) std::cerr << "warning: skipped " << skipped << " turns without a query annotation\n";
    std::cout << pairs << " training pairs -> " << path.string() << "\n";
    return kExitOk;
}

int cmd_stats(const Options& o) {
    if (o.dataset.empty()) throw ConfigError("--dataset is required");
    const auto split = load_dataset(o.dataset);
    std::printf("%-22s %10s %10s %10s %10s\n", "statistic", "train", "validation", "test", "all");
    const auto all = split.all();
    const DatasetStats s[4] = {dataset_stats(split.train), dataset_stats(split.validation), dataset_stats(split.test),
                               dataset_stats(all)};
    auto row_i = [&](const char* name, auto field) {
        std::printf("%-22s %10zu %10zu %10zu %10zu\n", name, s[0].*field, s[1].*field, s[2].*field, s[3].*field);
    };
    auto row_d = [&](const char* name, auto field) {
        std::printf("%-22s %10.2f %10.2f %10.2f %10.2f\n", name, s[0].*field, s[1].*field, s[2].*field, s[3].*field);
    };
    row_i("dialogues", &DatasetStats::dialogues);
    row_i("utterances", &DatasetStats::utterances);
    row_i("domains", &DatasetStats::domains);
    row_d("turns_per_dialogue", &DatasetStats::turns_per_dialogue);
    row_d("tokens_per_utterance", &DatasetStats::tokens_per_utterance);
    row_d("tokens_per_query", &DatasetStats::tokens_per_query);
    row_d("session_kb_size", &DatasetStats::session_kb_size);
    row_i("dataset_kb_records", &DatasetStats::dataset_kb_records);
    row_i("dataset_kb_unique", &DatasetStats::dataset_kb_unique);
    return kExitOk;
}

int cmd_convert(const Options& o) {
    if (o.input.empty()) throw ConfigError("--input is required");
    ConvertReport report;
    const auto split = convert_corpus(o.input, source_format_from_string(o.format), report);
    save_dataset(o.out, split);
    std::cout << "converted " << report.dialogues << " dialogues (" << report.skipped_dialogues << " skipped, "
              << report.dropped_turns << " turns dropped, " << report.missing_queries
              << " user turns without a query) -> " << o.out << "\n";
    return kExitOk;
}

int cmd_gen_synthetic(const Options& o) {
    SyntheticOptions options;
    options.dialogues = o.dialogues;
    options.kb_size = o.kb_size;
    options.seed = o.seed;
    const auto split = split_synthetic(generate_synthetic_corpus(options));
    save_dataset(o.out, split);
    std::cout << "synthetic corpus: " << split.train.size() << "/" << split.validation.size() << "/"
              << split.test.size() << " -> " << o.out << "\n";
    if (!o.pool_out.empty()) {
        save_kb(o.pool_out, generate_distractor_pool(o.pool_size, derive_seed(o.seed, 1)));
        std::cout << "distractor pool: " << o.pool_size << " records -> " << o.pool_out << "\n";
    }
    return kExitOk;
}

void print_turn(const TurnResult& r, const KnowledgeBase& kb) {
    std::cout << "query: " << r.query.display() << "\n";
    if (r.retrieved.entries.empty()) {
        std::cout << "knowledge: " << kNullToken << "\n";
    } else {
        std::cout << "knowledge:\n";
        for (std::size_t i = 0; i < r.retrieved.entries.size(); ++i) {
            const auto& e = r.retrieved.entries[i];
            const auto* rec = kb.find(e.record_id);
            char score[32];
            std::snprintf(score, sizeof score, "%.4f", e.score);
            std::cout << "  " << i + 1 << ". " << (rec ? linearize_record(*rec) : e.record_id) << "  [" << e.record_id
                      << ", " << score << "]\n";
        }
    }
    std::cout << "system: " << r.response << "\n";
}

int cmd_chat(const Options& o) {
    if (mode_from_string(o.mode) == Mode::oracle_knowledge) {
        throw ConfigError("oracle mode needs gold records and is not available in chat");
    }
    KnowledgeBase kb;
    if (!o.kb.empty()) {
        kb = load_kb(o.kb);
    } else if (!o.dataset.empty()) {
        if (o.session.empty()) throw ConfigError("chat with --dataset needs --session <session_id>");
        const auto split = load_dataset(o.dataset);
        bool found = false;
        for (const auto& d : split.all()) {
            if (d.session_id == o.session) {
                kb = d.kb;
                found = true;
                break;
            }
        }
        if (!found) throw ValidationError("session '" + o.session + "' not found in " + o.dataset);
    } else {
        throw ConfigError("chat needs --kb <file> or --dataset with --session");
    }
    auto kb_ptr = std::make_shared<const KnowledgeBase>(std::move(kb));
    auto index = std::make_shared<const RetrieverIndex>(build_index(*kb_ptr, make_index_config(o)));
    Session session(make_pipeline(o), kb_ptr, index, o.session.empty() ? "chat" : o.session);
    const bool interactive = isatty(STDIN_FILENO) != 0;
    if (interactive) {
        std::cout << "qtod chat (" << to_string(session.mode()) << ", " << kb_ptr->size()
                  << " records). Commands: /reset, /mode qtod|identity|oracle, /quit\n";
    }
    std::string line;
    while (true) {
        if (interactive) std::cout << "> " << std::flush;
        if (!std::getline(std::cin, line)) break;
        const auto text = std::string(trim(line));
        if (text.empty()) continue;
        if (text == "/quit" || text == "/exit") break;
        if (text == "/reset") {
            session.reset();
            std::cout << "context cleared (" << session.history().size() << " turns)\n";
            continue;
        }
        if (starts_with(text, "/mode")) {
            const auto arg = std::string(trim(std::string_view(text).substr(5)));
            if (arg.empty()) {
                std::cout << "mode: " << to_string(session.mode()) << "\n";
                continue;
            }
            try {
                const auto mode = mode_from_string(arg);
                if (mode == Mode::oracle_knowledge) {
                    std::cout << "error: oracle mode needs gold records and is not available in chat\n";
                    continue;
                }
                session.set_mode(mode);
                std::cout << "mode: " << to_string(session.mode()) << "\n";
            } catch (const ValidationError& e) {
                std::cout << "error: " << e.what() << "\n";
            }
            continue;
        }
        if (text.front() == '/') {
            std::cout << "error: unknown command " << text << " (/reset, /mode, /quit)\n";
            continue;
        }
        try {
            print_turn(session.run_turn(text), *kb_ptr);
        } catch (const BackendError& e) {
            std::cout << "error: " << e.what() << "\n";
        } catch (const ValidationError& e) {
            std::cout << "error: " << e.what() << "\n";
        }
    }
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"qtod: query-driven task-oriented dialogue engine"};
    app.set_config("--config", "", "INI/TOML config file (command-line flags take precedence)");
    app.require_subcommand(1);
    app.fallthrough();
    Options o;

    app.add_option("--dataset", o.dataset, "Dataset directory (train/validation/test.jsonl)");
    app.add_option("--partition", o.partition, "Partition: train|validation|test");
    app.add_option("--backend", o.backend, "Generation backend: scripted|rule|remote")->capture_default_str();
    app.add_option("--backend-url", o.backend_url, "Model server URL for the remote backend")
        ->envname("QTOD_BACKEND_URL");
    app.add_option("--script", o.script, "Fixture file for the scripted backend");
    app.add_option("--retriever", o.retriever, "Retriever: bm25|dense")->capture_default_str();
    app.add_option("--embed-url", o.embed_url, "Embedding server URL, or hash:DIM for the hashing provider");
    app.add_option("--dense-metric", o.metric, "Dense score: cosine|dot")->capture_default_str();
    app.add_option("--mode", o.mode, "Pipeline mode: qtod|identity|oracle")->capture_default_str();
    app.add_option("--top-n", o.top_n, "Records retrieved per turn")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--rerank-depth", o.rerank_depth, "Retrieve this many and rerank by relevance (0: off)");
    app.add_option("--beam-size", o.beam_size, "Beam size requested from the backend")->capture_default_str();
    app.add_option("--max-output-tokens", o.max_output_tokens, "Output length budget")->capture_default_str();
    app.add_option("--input-budget", o.input_budget, "Input length budget in tokens")->capture_default_str();
    app.add_option("--bm25-k1", o.bm25_k1, "BM25 k1")->capture_default_str();
    app.add_option("--bm25-b", o.bm25_b, "BM25 b")->capture_default_str();
    app.add_option("--seed", o.seed, "Seed for all sampling")->capture_default_str();
    app.add_option("--jobs", o.jobs, "Dialogues processed in parallel")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--out", o.out, "Output directory or file")->capture_default_str();
    app.add_option("--run-id", o.run_id, "Override the generated run id");
    app.add_option("--timeout-ms", o.timeout_ms, "Remote request timeout")->capture_default_str();
    app.add_option("--retries", o.retries, "Remote retries on transport failure")->capture_default_str();

    auto* run = app.add_subcommand("run", "Run the pipeline over a dataset partition");
    auto* eval = app.add_subcommand("eval", "Score a results file against a dataset partition");
    eval->add_option("--results", o.results, "results.jsonl from `run`")->required();
    eval->add_option("--lexicon", o.lexicon, "KB file whose values form the entity lexicon");
    auto* bench = app.add_subcommand("bench-kb", "Knowledge-base scaling benchmark");
    bench->add_option("--pool", o.pool, "Distractor pool KB file (default: generated)");
    bench->add_option("--pool-size", o.pool_size, "Generated pool size")->capture_default_str();
    bench->add_option("--sizes", o.sizes, "Comma-separated powers of two")->capture_default_str();
    bench->add_option("--metric-name", o.bench_metric, "CSV metric column: entity_f1|recall")->capture_default_str();
    bench->add_option("--lexicon", o.lexicon, "KB file whose values form the entity lexicon");
    auto* topn = app.add_subcommand("topn", "Top-n ablation");
    topn->add_option("--n-values", o.n_values, "Comma-separated n values")->capture_default_str();
    topn->add_option("--lexicon", o.lexicon, "KB file whose values form the entity lexicon");
    auto* cross = app.add_subcommand("build-crossdomain", "Merge single-domain sessions into cross-domain ones");
    cross->add_option("--source", o.sources, "name=dataset_dir (repeatable)");
    cross->add_option("--recipe", o.recipe, "e.g. 'smd/navigate|smd/schedule;camrest/restaurant'");
    cross->add_option("--count", o.count, "Merged sessions to build")->capture_default_str();
    cross->add_option("--ratio", o.ratio, "train/validation/test ratio")->capture_default_str();
    auto* fewshot = app.add_subcommand("fewshot", "Nested few-shot train subset");
    fewshot->add_option("--fraction", o.fraction, "Fraction of train dialogues in (0, 1]")->capture_default_str();
    auto* exporter = app.add_subcommand("export-training", "Export (prompt, target) training pairs");
    exporter->add_flag("--gold-records", o.gold_records, "Response prompts from gold records");
    auto* chat = app.add_subcommand("chat", "Interactive REPL");
    chat->add_option("--kb", o.kb, "Knowledge base file");
    chat->add_option("--session", o.session, "Use this session's KB from --dataset");
    auto* stats = app.add_subcommand("stats", "Dataset statistics");
    auto* convert = app.add_subcommand("convert", "Convert released dialogue files into the dataset schema");
    convert->add_option("--format", o.format, "smd|camrest|mwoz")->capture_default_str();
    convert->add_option("--input", o.input, "Directory with train/dev/test files");
    auto* gen = app.add_subcommand("gen-synthetic", "Generate the synthetic rule-grammar corpus");
    gen->add_option("--dialogues", o.dialogues, "Number of dialogues")->capture_default_str();
    gen->add_option("--kb-size", o.kb_size, "Records per session KB")->capture_default_str();
    gen->add_option("--pool-out", o.pool_out, "Also write a distractor pool KB here");
    gen->add_option("--pool-size", o.pool_size, "Distractor pool size")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitValidation;
    }

    try {
        if (*run) return cmd_run(o);
        if (*eval) return cmd_eval(o);
        if (*bench) return cmd_bench_kb(o);
        if (*topn) return cmd_topn(o);
        if (*cross) return cmd_build_crossdomain(o);
        if (*fewshot) return cmd_fewshot(o);
        if (*exporter) return cmd_export_training(o);
        if (*chat) return cmd_chat(o);
        if (*stats) return cmd_stats(o);
        if (*convert) return cmd_convert(o);
        if (*gen) return cmd_gen_synthetic(o);
    } catch (const BackendError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.exit_code();
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitValidation;
    } catch (const ContractViolation& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    } catch (const std::exception& e) {
        std::cerr << "internal error: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitInternal;
}
