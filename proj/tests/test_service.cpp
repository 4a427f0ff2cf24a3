// Copyright 2026 The vqclab Authors
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

#include "vqclab/service.hpp"

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using namespace vqclab;
using Catch::Matchers::ContainsSubstring;
using nlohmann::json;

namespace {

std::filesystem::path temp_dir(const std::string &name) {
    auto p = std::filesystem::temp_directory_path() /
             ("vqclab-svc-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    return p;
}

json playlist(int n_calls, bool done) {
    auto c = json::parse(oracle::read_text(std::string(VQCLAB_SAMPLES_DIR) + "/iteration1.json"));
    json turns = json::array();
    for (int k = 0; k < n_calls; ++k) {
        c["body"][1]["body"][0]["angle"] = "weights[i] * " + std::to_string(k + 1);
        turns.push_back({{"tool", "train_simple_qnn"},
                         {"arguments",
                          {{"VQC_circuit", c}, {"q_enc_size", 5}, {"q_out_size", 5}, {"epochs", 1}}}});
    }
    if (done) turns.push_back({{"text", "DONE: finished"}});
    return turns;
}

struct Harness {
    std::filesystem::path dir;
    std::unique_ptr<Service> service;
    int port = 0;

    explicit Harness(std::filesystem::path d, std::string token = {}) : dir(std::move(d)) {
        ServiceOptions opts;
        opts.data_dir = dir;
        opts.bearer_token = std::move(token);
        opts.keepalive = std::chrono::milliseconds(200);
        service = std::make_unique<Service>(opts);
        port = service->start_background();
    }
    ~Harness() { service->stop(); }

    httplib::Client client(const std::string &token = {}) const {
        httplib::Client c("127.0.0.1", port);
        c.set_read_timeout(60, 0);
        if (!token.empty()) c.set_bearer_token_auth(token);
        return c;
    }
};

json wait_terminal(httplib::Client &c, const std::string &id) {
    for (int i = 0; i < 6000; ++i) {
        auto res = c.Get("/runs/" + id);
        REQUIRE(res);
        const auto doc = json::parse(res->body);
        const auto st = doc.at("summary").at("status").get<std::string>();
        if (st != "running" && st != "waiting_steering") return doc;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    FAIL("run did not finish");
    return {};
}

struct SseFrame {
    std::size_t id;
    std::string event;
    json data;
};

std::vector<SseFrame> read_events(httplib::Client &c, const std::string &id,
                                  const httplib::Headers &headers = {}) {
    std::string raw;
    auto res = c.Get("/runs/" + id + "/events", headers,
                     [&](const char *data, std::size_t n) {
                         raw.append(data, n);
                         return true;
                     });
    REQUIRE(res);
    CHECK(res->status == 200);
    std::vector<SseFrame> frames;
    std::size_t pos = 0;
    while (pos < raw.size()) {
        const auto end = raw.find("\n\n", pos);
        REQUIRE(end != std::string::npos);
        const auto block = raw.substr(pos, end - pos);
        pos = end + 2;
        if (block.rfind(':', 0) == 0) continue;
        SseFrame f{};
        std::istringstream in(block);
        std::string line;
        while (std::getline(in, line)) {
            if (line.rfind("id: ", 0) == 0) f.id = std::stoul(line.substr(4));
            if (line.rfind("event: ", 0) == 0) f.event = line.substr(7);
            if (line.rfind("data: ", 0) == 0) f.data = json::parse(line.substr(6));
        }
        frames.push_back(std::move(f));
    }
    return frames;
}

} // namespace

TEST_CASE("health and schema", "[service]") {
    Harness h(temp_dir("schema"));
    auto c = h.client();
    auto health = c.Get("/health");
    REQUIRE(health);
    CHECK(health->status == 200);
    CHECK(health->get_header_value("Access-Control-Allow-Origin") == "*");
    auto schema = c.Get("/schema");
    REQUIRE(schema);
    const auto doc = json::parse(schema->body);
    CHECK(doc.at("tools").size() == 3);
    CHECK(doc.at("prompt_version") == kPromptVersion);
    std::filesystem::remove_all(h.dir);
}

TEST_CASE("a scripted run streams its events in order", "[service]") {
    Harness h(temp_dir("stream"));
    auto c = h.client();
    const json body{{"config", {{"variant", "simple"}, {"budget", 5}, {"master_seed", 3}}},
                    {"playlist", playlist(2, true)}};
    auto created = c.Post("/runs", body.dump(), "application/json");
    REQUIRE(created);
    REQUIRE(created->status == 201);
    const auto id = json::parse(created->body).at("run_id").get<std::string>();

    // Streaming from the start must follow the run to its end.
    const auto frames = read_events(c, id);
    REQUIRE(frames.size() >= 6);
    for (std::size_t k = 0; k < frames.size(); ++k) CHECK(frames[k].id == k);
    CHECK(frames.front().event == "run_started");
    CHECK(frames.back().event == "status");
    CHECK(frames.back().data.at("data").at("status") == "agent_stopped");
    const auto n_iter = std::count_if(frames.begin(), frames.end(),
                                      [](const SseFrame &f) { return f.event == "iteration"; });
    CHECK(n_iter == 2);

    const auto doc = wait_terminal(c, id);
    CHECK(doc.at("iterations").size() == 2);
    CHECK(doc.at("config").at("master_seed") == 3);

    // Reconnect with Last-Event-ID resumes right after it.
    const auto tail = read_events(c, id, {{"Last-Event-ID", std::to_string(frames.size() - 3)}});
    REQUIRE(tail.size() == 2);
    CHECK(tail[0].id == frames.size() - 2);
    CHECK(tail[1].data == frames.back().data);

    // Steering a finished run conflicts; empty text is rejected.
    auto late = c.Post("/runs/" + id + "/message", R"({"text": "more"})", "application/json");
    REQUIRE(late);
    CHECK(late->status == 409);
    auto empty = c.Post("/runs/" + id + "/message", R"({"text": " "})", "application/json");
    REQUIRE(empty);
    CHECK(empty->status == 400);

    auto missing = c.Get("/runs/nope");
    REQUIRE(missing);
    CHECK(missing->status == 404);
    auto missing_msg = c.Post("/runs/nope/message", R"({"text": "x"})", "application/json");
    REQUIRE(missing_msg);
    CHECK(missing_msg->status == 404);
    std::filesystem::remove_all(h.dir);
}

TEST_CASE("steering over HTTP reaches a waiting run once per key", "[service]") {
    Harness h(temp_dir("steer"));
    auto c = h.client();
    const json body{{"config", {{"budget", 2}, {"wait_for_steering", true}}},
                    {"playlist", playlist(2, false)}};
    auto created = c.Post("/runs", body.dump(), "application/json");
    REQUIRE(created);
    const auto id = json::parse(created->body).at("run_id").get<std::string>();
    for (int i = 0; i < 3000; ++i) {
        const auto doc = json::parse(c.Get("/runs/" + id)->body);
        if (doc.at("summary").at("status") == "waiting_steering") break;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    const httplib::Headers key{{"Idempotency-Key", "abc"}};
    auto first = c.Post("/runs/" + id + "/message", key, R"({"text": "go on"})", "application/json");
    auto again = c.Post("/runs/" + id + "/message", key, R"({"text": "go on"})", "application/json");
    REQUIRE(first);
    REQUIRE(again);
    CHECK(first->status == 202);
    CHECK(again->status == 202);
    CHECK(json::parse(first->body).at("queued") == json::parse(again->body).at("queued"));

    const auto doc = wait_terminal(c, id);
    CHECK(doc.at("summary").at("status") == "budget_exhausted");
    const auto &msgs = doc.at("messages");
    CHECK(std::count_if(msgs.begin(), msgs.end(),
                        [](const json &m) { return m.at("content") == "go on"; }) == 1);
    std::filesystem::remove_all(h.dir);
}

TEST_CASE("interrupt over HTTP aborts a waiting run", "[service]") {
    Harness h(temp_dir("interrupt"));
    auto c = h.client();
    const json body{{"config", {{"budget", 3}, {"wait_for_steering", true}}},
                    {"playlist", playlist(3, false)}};
    const auto id = json::parse(c.Post("/runs", body.dump(), "application/json")->body)
                        .at("run_id")
                        .get<std::string>();
    for (int i = 0; i < 3000; ++i) {
        const auto doc = json::parse(c.Get("/runs/" + id)->body);
        if (doc.at("summary").at("status") == "waiting_steering") break;
        std::this_thread::sleep_for(std::chrono::milliseconds(20));
    }
    auto res = c.Post("/runs/" + id + "/interrupt");
    REQUIRE(res);
    CHECK(res->status == 202);
    CHECK(wait_terminal(c, id).at("summary").at("status") == "aborted");
    std::filesystem::remove_all(h.dir);
}

TEST_CASE("the bearer token guards everything but health", "[service]") {
    Harness h(temp_dir("auth"), "tok-1");
    auto anon = h.client();
    CHECK(anon.Get("/health")->status == 200);
    CHECK(anon.Get("/runs")->status == 401);
    auto wrong = h.client("tok-2");
    CHECK(wrong.Get("/schema")->status == 401);
    auto ok = h.client("tok-1");
    CHECK(ok.Get("/runs")->status == 200);
    std::filesystem::remove_all(h.dir);
}

TEST_CASE("bad run requests are rejected", "[service]") {
    Harness h(temp_dir("bad"));
    auto c = h.client();
    CHECK(c.Post("/runs", "nope", "application/json")->status == 400);
    CHECK(c.Post("/runs", R"({"config": {"budget": 0}})", "application/json")->status == 400);
    CHECK(c.Post("/runs", R"({"config": {"variant": "huge"}})", "application/json")->status == 400);
    std::filesystem::remove_all(h.dir);
}

TEST_CASE("runs survive a service restart", "[service]") {
    const auto dir = temp_dir("restart");
    std::string id;
    {
        Harness h(dir);
        auto c = h.client();
        const json body{{"config", {{"budget", 1}}}, {"playlist", playlist(1, false)}};
        id = json::parse(c.Post("/runs", body.dump(), "application/json")->body)
                 .at("run_id")
                 .get<std::string>();
        wait_terminal(c, id);
    }
    Harness h(dir);
    auto c = h.client();
    const auto list = json::parse(c.Get("/runs")->body);
    REQUIRE(list.size() == 1);
    CHECK(list[0].at("run_id") == id);
    CHECK(list[0].at("status") == "budget_exhausted");
    const auto doc = json::parse(c.Get("/runs/" + id)->body);
    CHECK(doc.at("iterations").size() == 1);
    const auto frames = read_events(c, id);
    CHECK(frames.back().data.at("data").at("status") == "budget_exhausted");
    std::filesystem::remove_all(dir);
}
