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

// HTTP clients for the model server.
//
//   POST /generate   {"task", "prompt", "max_output_tokens", "beam_size"} -> {"text"}
//   POST /relevance  {"query", "record"} -> {"label": "MATCHED"|"MISMATCHED", "score"}
//   POST /embed      {"texts": [...]} -> {"vectors": [[...]], "dim"}
//
// Errors come back as an HTTP status plus {"error": str}. Transport failures
// and timeouts are retried (max_retries, default 2); server errors are not.

#include <chrono>
#include <functional>
#include <memory>
#include <string>
#include <string_view>
#include <utility>

#include "httplib.h"
#include "json.hpp"
#include "qtod/backend.hpp"
#include "qtod/error.hpp"
#include "qtod/retriever.hpp"

namespace qtod {

struct HttpReply {
    int status = 0;
    std::string body;
};

/// POSTs a JSON body to `path`. Throws BackendError{transport|timeout} when
/// no HTTP reply was obtained.
using HttpPost = std::function<HttpReply(const std::string& path, const std::string& body)>;

inline HttpPost make_http_post(std::string base_url, std::chrono::milliseconds timeout) {
    return [base_url = std::move(base_url), timeout](const std::string& path, const std::string& body) {
        // One client per call keeps concurrent requests independent.
        httplib::Client client(base_url);
        if (!client.is_valid()) {
            throw BackendError(BackendErrorKind::transport, "invalid server url '" + base_url + "'");
        }
        const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout);
        const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(timeout - secs);
        client.set_connection_timeout(secs.count(), usecs.count());
        client.set_read_timeout(secs.count(), usecs.count());
        client.set_write_timeout(secs.count(), usecs.count());
        const auto start = std::chrono::steady_clock::now();
        auto res = client.Post(path, body, "application/json");
        if (!res) {
            const auto err = res.error();
            const bool timed_out = err == httplib::Error::ConnectionTimeout ||
                                   ((err == httplib::Error::Read || err == httplib::Error::Write) &&
                                    std::chrono::steady_clock::now() - start >= timeout);
            throw BackendError(timed_out ? BackendErrorKind::timeout : BackendErrorKind::transport,
                               "POST " + base_url + path + ": " + httplib::to_string(err));
        }
        return HttpReply{res->status, res->body};
    };
}

struct RemoteOptions {
    std::chrono::milliseconds timeout{30000};
    int max_retries = 2;
    std::size_t input_budget = kDefaultInputBudget;
};

namespace detail {

inline Json post_json(const HttpPost& post, const std::string& path, const Json& body, int max_retries) {
    const auto payload = body.dump();
    HttpReply reply;
    for (int attempt = 0;; ++attempt) {
        try {
            reply = post(path, payload);
            break;
        } catch (const BackendError& e) {
            const bool retryable = e.kind() == BackendErrorKind::transport || e.kind() == BackendErrorKind::timeout;
            if (!retryable || attempt >= max_retries) throw;
        }
    }
    Json parsed;
    try {
        parsed = Json::parse(reply.body);
    } catch (const nlohmann::json::exception&) {
        if (reply.status != 200) {
            throw BackendError(BackendErrorKind::server, path + " returned HTTP " + std::to_string(reply.status));
        }
        throw BackendError(BackendErrorKind::protocol, path + " returned a non-JSON body");
    }
    if (reply.status != 200) {
        std::string message = "HTTP " + std::to_string(reply.status);
        if (parsed.is_object() && parsed.contains("error") && parsed["error"].is_string()) {
            message += ": " + parsed["error"].get<std::string>();
        }
        throw BackendError(BackendErrorKind::server, path + " " + message);
    }
    return parsed;
}

}  // namespace detail

class RemoteBackend final : public Backend {
public:
    explicit RemoteBackend(std::string base_url, RemoteOptions options = {})
        : post_(make_http_post(base_url, options.timeout)), id_("remote:" + base_url), options_(options) {}

    RemoteBackend(HttpPost post, std::string id, RemoteOptions options = {})
        : post_(std::move(post)), id_(std::move(id)), options_(options) {}

    GenerationResponse generate(const GenerationRequest& request) const override {
        request.validate();
        const auto start = std::chrono::steady_clock::now();
        Json body{{"task", std::string(to_string(request.task))},
                  {"prompt", request.prompt},
                  {"max_output_tokens", request.max_output_tokens},
                  {"beam_size", request.beam_size}};
        auto reply = detail::post_json(post_, "/generate", body, options_.max_retries);
        if (!reply.is_object() || !reply.contains("text") || !reply["text"].is_string()) {
            throw BackendError(BackendErrorKind::protocol, "/generate reply lacks a string 'text' field");
        }
        std::chrono::duration<double, std::milli> elapsed = std::chrono::steady_clock::now() - start;
        return {reply["text"].get<std::string>(), id_, elapsed.count()};
    }

    /// Uses the server's score when present, otherwise the label.
    double relevance(std::string_view query, std::string_view record) const override {
        Json body{{"query", std::string(query)}, {"record", std::string(record)}};
        auto reply = detail::post_json(post_, "/relevance", body, options_.max_retries);
        if (!reply.is_object()) throw BackendError(BackendErrorKind::protocol, "/relevance reply is not an object");
        if (reply.contains("score") && reply["score"].is_number()) return reply["score"].get<double>();
        if (reply.contains("label") && reply["label"].is_string()) {
            return parse_relevance_label(reply["label"].get<std::string>());
        }
        throw BackendError(BackendErrorKind::protocol, "/relevance reply lacks 'label' and 'score'");
    }

    std::string id() const override { return id_; }
    std::size_t input_budget() const override { return options_.input_budget; }

private:
    HttpPost post_;
    std::string id_;
    RemoteOptions options_;
};

class RemoteEmbeddingProvider final : public EmbeddingProvider {
public:
    /// Probes the server once to learn the embedding dimension.
    explicit RemoteEmbeddingProvider(std::string base_url, RemoteOptions options = {})
        : RemoteEmbeddingProvider(make_http_post(base_url, options.timeout), options) {}

    RemoteEmbeddingProvider(HttpPost post, RemoteOptions options = {}) : post_(std::move(post)), options_(options) {
        auto probe = request({"probe"});
        dim_ = probe.front().size();
        if (dim_ == 0) throw BackendError(BackendErrorKind::protocol, "/embed returned zero-dimensional vectors");
    }

    std::size_t dimension() const override { return dim_; }

    std::vector<double> embed(std::string_view text) const override {
        return request({std::string(text)}).front();
    }

    std::vector<std::vector<double>> embed_batch(std::span<const std::string> texts) const override {
        if (texts.empty()) return {};
        return request(std::vector<std::string>(texts.begin(), texts.end()));
    }

private:
    std::vector<std::vector<double>> request(const std::vector<std::string>& texts) const {
        auto reply = detail::post_json(post_, "/embed", Json{{"texts", texts}}, options_.max_retries);
        if (!reply.is_object() || !reply.contains("vectors") || !reply["vectors"].is_array() ||
            reply["vectors"].size() != texts.size()) {
            throw BackendError(BackendErrorKind::protocol, "/embed reply must carry one vector per text");
        }
        std::vector<std::vector<double>> out;
        out.reserve(texts.size());
        for (const auto& v : reply["vectors"]) {
            if (!v.is_array()) throw BackendError(BackendErrorKind::protocol, "/embed vector is not an array");
            out.push_back(v.get<std::vector<double>>());
        }
        if (reply.contains("dim") && reply["dim"].is_number_integer()) {
            const auto dim = reply["dim"].get<std::size_t>();
            for (const auto& v : out) {
                if (v.size() != dim) throw BackendError(BackendErrorKind::protocol, "/embed vector size != dim");
            }
        }
        return out;
    }

    HttpPost post_;
    RemoteOptions options_;
    std::size_t dim_ = 0;
};

}  // namespace qtod
