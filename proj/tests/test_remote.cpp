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
#include <mutex>
#include <thread>

#include "qtod/remote.hpp"

using namespace qtod;
using namespace std::chrono_literals;

namespace {

// In-process stand-in for the model server.
class MockServer {
public:
    MockServer() {
        server_.Post("/generate", [this](const httplib::Request& req, httplib::Response& res) {
            record(req.body);
            auto body = Json::parse(req.body);
            const auto prompt = body["prompt"].get<std::string>();
            if (prompt == "fail") {
                res.status = 500;
                res.set_content(R"({"error": "model exploded"})", "application/json");
                return;
            }
            if (prompt == "slow") std::this_thread::sleep_for(600ms);
            if (prompt == "garbage") {
                res.set_content("not json", "text/plain");
                return;
            }
            if (prompt == "no-text") {
                res.set_content(R"({"output": "x"})", "application/json");
                return;
            }
            res.set_content(Json{{"text", "echo: " + prompt}}.dump(), "application/json");
        });
        server_.Post("/relevance", [this](const httplib::Request& req, httplib::Response& res) {
            record(req.body);
            auto body = Json::parse(req.body);
            const auto record_text = body["record"].get<std::string>();
            Json reply;
            if (record_text == "scored") {
                reply = {{"label", "MATCHED"}, {"score", 0.25}};
            } else {
                reply = {{"label", record_text == "yes" ? "MATCHED" : "MISMATCHED"}};
            }
            res.set_content(reply.dump(), "application/json");
        });
        server_.Post("/embed", [this](const httplib::Request& req, httplib::Response& res) {
            record(req.body);
            auto body = Json::parse(req.body);
            Json vectors = Json::array();
            for (const auto& t : body["texts"]) {
                const auto s = t.get<std::string>();
                vectors.push_back({static_cast<double>(s.size()), 1.0, 0.0});
            }
            res.set_content(Json{{"vectors", vectors}, {"dim", 3}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockServer() {
        server_.stop();
        thread_.join();
    }

    std::string url() const { return "http://127.0.0.1:" + std::to_string(port_); }
    std::vector<std::string> bodies() {
        std::lock_guard lock(mu_);
        return bodies_;
    }

private:
    void record(const std::string& body) {
        std::lock_guard lock(mu_);
        bodies_.push_back(body);
    }

    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::mutex mu_;
    std::vector<std::string> bodies_;
};

}  // namespace

TEST(Remote, GenerateSendsWireFieldsAndPromptBytes) {
    MockServer server;
    RemoteBackend backend(server.url());
    const std::string prompt = "translate dialogue context to query: user: caf\xc3\xa9 \"quoted\" \\ tab\t";
    GenerationRequest request{Task::query, prompt, 32, 2};
    auto reply = backend.generate(request);
    EXPECT_EQ(reply.text, "echo: " + prompt);
    EXPECT_EQ(reply.backend_id, "remote:" + server.url());
    ASSERT_EQ(server.bodies().size(), 1u);
    auto sent = Json::parse(server.bodies()[0]);
    EXPECT_EQ(sent["task"], "query");
    EXPECT_EQ(sent["prompt"].get<std::string>(), prompt);
    EXPECT_EQ(sent["max_output_tokens"], 32);
    EXPECT_EQ(sent["beam_size"], 2);
}

TEST(Remote, RelevancePrefersScoreOverLabel) {
    MockServer server;
    RemoteBackend backend(server.url());
    EXPECT_EQ(backend.relevance("q", "yes"), 1.0);
    EXPECT_EQ(backend.relevance("q", "no"), 0.0);
    EXPECT_EQ(backend.relevance("q", "scored"), 0.25);
    auto sent = Json::parse(server.bodies()[0]);
    EXPECT_EQ(sent, (Json{{"query", "q"}, {"record", "yes"}}));
}

TEST(Remote, EmbedProbesDimensionAndBatches) {
    MockServer server;
    RemoteEmbeddingProvider provider(server.url());
    EXPECT_EQ(provider.dimension(), 3u);
    EXPECT_EQ(provider.embed("abcd"), (std::vector<double>{4.0, 1.0, 0.0}));
    std::vector<std::string> texts{"a", "abc"};
    auto vecs = provider.embed_batch(texts);
    ASSERT_EQ(vecs.size(), 2u);
    EXPECT_EQ(vecs[1][0], 3.0);
    EXPECT_EQ(Json::parse(server.bodies()[0]), (Json{{"texts", {"probe"}}}));
}

TEST(Remote, ServerErrorIsNotRetried) {
    MockServer server;
    RemoteBackend backend(server.url(), RemoteOptions{5000ms, 3, 1024});
    try {
        backend.generate({Task::response, "fail"});
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.kind(), BackendErrorKind::server);
        EXPECT_NE(std::string(e.what()).find("model exploded"), std::string::npos);
    }
    EXPECT_EQ(server.bodies().size(), 1u);
}

TEST(Remote, MalformedRepliesAreProtocolErrors) {
    MockServer server;
    RemoteBackend backend(server.url());
    for (const char* prompt : {"garbage", "no-text"}) {
        try {
            backend.generate({Task::query, prompt});
            FAIL() << prompt;
        } catch (const BackendError& e) {
            EXPECT_EQ(e.kind(), BackendErrorKind::protocol) << prompt;
        }
    }
}

TEST(Remote, TimeoutIsReported) {
    MockServer server;
    RemoteBackend backend(server.url(), RemoteOptions{200ms, 0, 1024});
    try {
        backend.generate({Task::query, "slow"});
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.kind(), BackendErrorKind::timeout);
    }
}

TEST(Remote, UnreachableServerIsTransportError) {
    RemoteBackend backend("http://127.0.0.1:9", RemoteOptions{300ms, 0, 1024});
    try {
        backend.generate({Task::query, "x"});
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_TRUE(e.kind() == BackendErrorKind::transport || e.kind() == BackendErrorKind::timeout);
        EXPECT_EQ(e.exit_code(), kExitTransport);
    }
}

TEST(Remote, RetriesTransportFailuresUpToLimit) {
    std::atomic<int> calls{0};
    HttpPost flaky = [&](const std::string&, const std::string&) -> HttpReply {
        if (++calls < 3) throw BackendError(BackendErrorKind::transport, "reset");
        return {200, R"({"text": "ok"})"};
    };
    RemoteBackend ok(flaky, "flaky", RemoteOptions{1000ms, 2, 1024});
    EXPECT_EQ(ok.generate({Task::query, "x"}).text, "ok");
    EXPECT_EQ(calls, 3);

    calls = 0;
    RemoteBackend gives_up(flaky, "flaky", RemoteOptions{1000ms, 1, 1024});
    EXPECT_THROW(gives_up.generate({Task::query, "x"}), BackendError);
    EXPECT_EQ(calls, 2);
}

TEST(Remote, NonJsonErrorStatusIsServerError) {
    HttpPost post = [](const std::string&, const std::string&) { return HttpReply{503, "busy"}; };
    RemoteBackend backend(post, "p");
    try {
        backend.generate({Task::query, "x"});
        FAIL();
    } catch (const BackendError& e) {
        EXPECT_EQ(e.kind(), BackendErrorKind::server);
    }
}
