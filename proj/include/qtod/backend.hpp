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

#include <chrono>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "qtod/error.hpp"
#include "qtod/kb.hpp"
#include "qtod/text.hpp"

namespace qtod {

enum class Task { query, response, relevance };

inline std::string_view to_string(Task task) {
    switch (task) {
        case Task::query: return "query";
        case Task::response: return "response";
        case Task::relevance: return "relevance";
    }
    return "query";
}

inline Task task_from_string(std::string_view s) {
    if (s == "query") return Task::query;
    if (s == "response") return Task::response;
    if (s == "relevance") return Task::relevance;
    throw ValidationError("unknown task '" + std::string(s) + "'");
}

// Decoding defaults follow the reference fine-tuning setup: beam 4, 128 output tokens.
inline constexpr std::size_t kDefaultBeamSize = 4;
inline constexpr std::size_t kDefaultMaxOutputTokens = 128;
inline constexpr std::size_t kDefaultInputBudget = 1024;

struct GenerationRequest {
    Task task = Task::query;
    std::string prompt;
    std::size_t max_output_tokens = kDefaultMaxOutputTokens;
    std::size_t beam_size = kDefaultBeamSize;

    void validate() const {
        if (prompt.empty()) throw ContractViolation("generation request: empty prompt");
        if (beam_size < 1) throw ContractViolation("generation request: beam_size must be >= 1");
        if (max_output_tokens < 1) throw ContractViolation("generation request: max_output_tokens must be >= 1");
    }
};

struct GenerationResponse {
    std::string text;
    std::string backend_id;
    double latency_ms = 0.0;
};

inline constexpr std::string_view kMatchedLabel = "MATCHED";
inline constexpr std::string_view kMismatchedLabel = "MISMATCHED";

inline std::string render_relevance_prompt(std::string_view query, std::string_view record) {
    std::string out = "query: ";
    out += query;
    out += " knowledge: ";
    out += record;
    return out;
}

inline std::optional<std::pair<std::string, std::string>> parse_relevance_prompt(std::string_view prompt) {
    constexpr std::string_view kQuery = "query: ";
    constexpr std::string_view kKnowledge = " knowledge: ";
    if (!starts_with(prompt, kQuery)) return std::nullopt;
    auto pos = prompt.rfind(kKnowledge);
    if (pos == std::string_view::npos || pos < kQuery.size()) return std::nullopt;
    return std::make_pair(std::string(prompt.substr(kQuery.size(), pos - kQuery.size())),
                          std::string(prompt.substr(pos + kKnowledge.size())));
}

/// MATCHED -> 1.0, MISMATCHED -> 0.0.
inline double parse_relevance_label(std::string_view text) {
    auto label = trim(text);
    if (label == kMatchedLabel) return 1.0;
    if (label == kMismatchedLabel) return 0.0;
    throw BackendError(BackendErrorKind::protocol, "expected MATCHED or MISMATCHED, got '" + std::string(label) + "'");
}

/// Text generation contract shared by the query generator, the response
/// generator and the relevance model. Implementations must accept concurrent
/// generate() calls.
class Backend {
public:
    virtual ~Backend() = default;
    virtual GenerationResponse generate(const GenerationRequest& request) const = 0;
    virtual std::string id() const = 0;
    /// Input length budget in whitespace tokens; contexts are truncated to fit.
    virtual std::size_t input_budget() const { return kDefaultInputBudget; }

    /// Probability that `record` satisfies `query`.
    virtual double relevance(std::string_view query, std::string_view record) const {
        GenerationRequest request;
        request.task = Task::relevance;
        request.prompt = render_relevance_prompt(query, record);
        return parse_relevance_label(generate(request).text);
    }
};

/// Fixture lookup keyed by (task, prompt). Entries registered without a task
/// answer any task. Unknown prompts fall back to a per-task default if one is
/// set, otherwise fail with BackendErrorKind::missing.
class ScriptedBackend final : public Backend {
public:
    ScriptedBackend() = default;

    ScriptedBackend& add(Task task, std::string prompt, std::string text) {
        by_task_[{task, std::move(prompt)}] = std::move(text);
        return *this;
    }
    ScriptedBackend& add(std::string prompt, std::string text) {
        any_task_[std::move(prompt)] = std::move(text);
        return *this;
    }
    ScriptedBackend& set_fallback(Task task, std::string text) {
        fallback_[task] = std::move(text);
        return *this;
    }

    GenerationResponse generate(const GenerationRequest& request) const override {
        request.validate();
        const auto start = std::chrono::steady_clock::now();
        const std::string* hit = nullptr;
        if (auto it = by_task_.find({request.task, request.prompt}); it != by_task_.end()) {
            hit = &it->second;
        } else if (auto it2 = any_task_.find(request.prompt); it2 != any_task_.end()) {
            hit = &it2->second;
        } else if (auto it3 = fallback_.find(request.task); it3 != fallback_.end()) {
            hit = &it3->second;
        }
        if (hit == nullptr) {
            throw BackendError(BackendErrorKind::missing, "no scripted " + std::string(to_string(request.task)) +
                                                              " output for prompt: " + request.prompt);
        }
        std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
        return {*hit, id(), elapsed.count()};
    }

    std::string id() const override { return "scripted"; }

    std::size_t size() const noexcept { return by_task_.size() + any_task_.size(); }

    /// {"entries": [{"task": "query"?, "prompt": str, "text": str}],
    ///  "fallback": {"response": str, ...}?}
    static ScriptedBackend from_json(const Json& doc) {
        ScriptedBackend backend;
        if (!doc.is_object()) throw ParseError("script: expected an object");
        auto entries = doc.find("entries");
        if (entries == doc.end() || !entries->is_array()) throw ParseError("script: field 'entries' must be an array");
        for (std::size_t i = 0; i < entries->size(); ++i) {
            const auto& e = (*entries)[i];
            auto where = "script entry " + std::to_string(i);
            if (!e.is_object() || !e.contains("prompt") || !e["prompt"].is_string() || !e.contains("text") ||
                !e["text"].is_string()) {
                throw ParseError(where + ": needs string fields 'prompt' and 'text'");
            }
            if (e.contains("task")) {
                backend.add(task_from_string(e["task"].get<std::string>()), e["prompt"].get<std::string>(),
                            e["text"].get<std::string>());
            } else {
                backend.add(e["prompt"].get<std::string>(), e["text"].get<std::string>());
            }
        }
        if (auto fb = doc.find("fallback"); fb != doc.end()) {
            if (!fb->is_object()) throw ParseError("script: field 'fallback' must be an object");
            for (const auto& [task, text] : fb->items()) {
                if (!text.is_string()) throw ParseError("script: fallback for '" + task + "' must be a string");
                backend.set_fallback(task_from_string(task), text.get<std::string>());
            }
        }
        return backend;
    }

    static ScriptedBackend from_file(const std::filesystem::path& path) { return from_json(read_json_file(path)); }

private:
    std::map<std::pair<Task, std::string>, std::string> by_task_;
    std::map<std::string, std::string> any_task_;
    std::map<Task, std::string> fallback_;
};

}  // namespace qtod
