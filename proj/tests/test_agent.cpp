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

#include "vqclab/agent.hpp"

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

#include <cstdlib>

using namespace vqclab;
using Catch::Matchers::ContainsSubstring;
using nlohmann::json;

namespace {

json circuit(const std::string &name) {
    return json::parse(oracle::read_text(std::string(VQCLAB_SAMPLES_DIR) + "/" + name));
}

json call(const json &c, int epochs = 1, int q = 5) {
    return {{"tool", "train_simple_qnn"},
            {"text", "trying a circuit"},
            {"arguments",
             {{"VQC_circuit", c}, {"q_enc_size", q}, {"q_out_size", q}, {"epochs", epochs}}}};
}

json broken() {
    auto c = circuit("iteration1.json");
    c["body"][1]["body"][0]["gate"] = "RYY";
    return call(c);
}

json variant_circuit(double scale) {
    auto c = circuit("iteration1.json");
    c["body"][1]["body"][0]["angle"] = "weights[i] * " + std::to_string(scale);
    return c;
}

RunConfig config(int budget) {
    RunConfig cfg;
    cfg.budget = budget;
    cfg.master_seed = 5;
    return cfg;
}

std::shared_ptr<RunLog> run_scripted(const json &playlist, RunConfig cfg,
                                     const std::filesystem::path &dir = {}) {
    RunControl run(std::make_shared<RunLog>("test", std::move(cfg), dir));
    ScriptedEndpoint ep(playlist);
    run_agent_loop(run, ep);
    return run.log();
}

std::filesystem::path temp_dir(const std::string &name) {
    auto p = std::filesystem::temp_directory_path() /
             ("vqclab-test-" + name + "-" + std::to_string(::getpid()));
    std::filesystem::remove_all(p);
    return p;
}

} // namespace

TEST_CASE("three valid requests fill the budget", "[agent]") {
    const json pl = {call(variant_circuit(1.0)), call(variant_circuit(0.5)),
                     call(variant_circuit(2.0)), call(variant_circuit(3.0))};
    const auto log = run_scripted(pl, config(3));
    const auto it = log->iterations();
    REQUIRE(it.size() == 3);
    CHECK(log->status() == RunStatus::budget_exhausted);
    double best = 1e9;
    for (const auto &r : it) {
        REQUIRE(r.result);
        best = std::min(best, r.result->test_RMSE);
    }
    CHECK(log->best()->result->test_RMSE == best);
    CHECK(log->summary().at("best_test_RMSE").get<double>() == best);
    CHECK(it[0].index == 1);
    CHECK(it[2].index == 3);
    CHECK(it[0].rationale == "trying a circuit");
}

TEST_CASE("an invalid circuit is repaired without aborting", "[agent]") {
    const auto log = run_scripted(json{broken(), call(circuit("iteration1.json"))}, config(1));
    const auto it = log->iterations();
    REQUIRE(it.size() == 2);
    REQUIRE(it[0].error);
    CHECK(it[0].error->phase == ToolError::Phase::parse);
    CHECK_FALSE(it[0].counted);
    REQUIRE(it[1].result);
    CHECK(it[1].repair_attempt == 1);
    CHECK(log->status() == RunStatus::budget_exhausted);
    // The error text reached the model as a tool message.
    const auto msgs = log->messages();
    const auto tool_msg = std::find_if(msgs.begin(), msgs.end(),
                                       [](const Message &m) { return m.role == "tool"; });
    REQUIRE(tool_msg != msgs.end());
    CHECK_THAT(tool_msg->content, ContainsSubstring("unknown gate 'RYY'"));
}

TEST_CASE("failures past the repair limit use budget", "[agent]") {
    const json pl = {broken(), broken(), broken(), broken(), broken()};
    const auto log = run_scripted(pl, config(1));
    const auto it = log->iterations();
    REQUIRE(it.size() == 4);
    CHECK(it[3].counted);
    CHECK(log->status() == RunStatus::budget_exhausted);
}

TEST_CASE("a DONE line stops the run early", "[agent]") {
    const json pl = {call(variant_circuit(1.0)), call(variant_circuit(0.5)),
                     call(variant_circuit(2.0)), {{"text", "All done.\nDONE: best was #1"}}};
    const auto log = run_scripted(pl, config(10));
    CHECK(log->iterations().size() == 3);
    CHECK(log->status() == RunStatus::agent_stopped);
}

TEST_CASE("malformed tool arguments come back as a parse error", "[agent]") {
    const json pl = {{{"tool", "train_simple_qnn"}, {"arguments", "{\"VQC_circuit\": "}},
                     call(circuit("iteration1.json"))};
    const auto log = run_scripted(pl, config(1));
    const auto it = log->iterations();
    REQUIRE(it.size() == 2);
    REQUIRE(it[0].error);
    CHECK(it[0].error->phase == ToolError::Phase::parse);
    CHECK_THAT(it[0].error->message, ContainsSubstring("not valid JSON"));
}

TEST_CASE("scheduled steering reaches the scripted retrain", "[agent]") {
    auto cfg = config(3);
    cfg.scheduled_steering[2] = "Please retrain the best model for 3 epochs.";
    const json pl = {call(variant_circuit(1.0)), call(variant_circuit(0.5)),
                     {{"action", "retrain_best"}}};
    const auto log = run_scripted(pl, cfg);
    const auto it = log->iterations();
    REQUIRE(it.size() == 3);
    REQUIRE(it[2].request);
    CHECK(it[2].request->epochs == 3);
    const auto best_of_two =
        it[0].result->test_RMSE <= it[1].result->test_RMSE ? it[0] : it[1];
    CHECK(json::parse(it[2].arguments).at("VQC_circuit") ==
          json::parse(best_of_two.arguments).at("VQC_circuit"));
    const auto csv = trajectory_csv(*log);
    CHECK_THAT(csv, ContainsSubstring("\n3,ok,"));
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
}

namespace {

/// Injects steering from "another thread" while the loop is inside a call.
class InjectingEndpoint : public ChatEndpoint {
  public:
    explicit InjectingEndpoint(RunControl &run) : run_(run) {}
    Message complete(const std::vector<Message> &history,
                     const std::vector<ToolSchema> &) override {
        ++calls;
        Message m;
        m.role = "assistant";
        if (calls == 1) {
            run_.enqueue("use fewer qubits", "k1");
            run_.enqueue("use fewer qubits", "k1");  // retried POST
            m.tool_call = ToolCall{"c1", "train_simple_qnn",
                                   call(circuit("iteration1.json")).at("arguments").dump()};
        } else {
            seen_before_reply = history.back().role == "user" &&
                                history.back().content == "use fewer qubits";
            steering_count = std::count_if(history.begin(), history.end(), [](const Message &h) {
                return h.content == "use fewer qubits";
            });
            m.content = "DONE: stopping";
        }
        return m;
    }
    int calls = 0;
    bool seen_before_reply = false;
    long steering_count = 0;

  private:
    RunControl &run_;
};

} // namespace

TEST_CASE("queued steering is delivered before the next assistant turn", "[agent]") {
    RunControl run(std::make_shared<RunLog>("s", config(5)));
    InjectingEndpoint ep(run);
    run_agent_loop(run, ep);
    CHECK(ep.seen_before_reply);
    CHECK(ep.steering_count == 1);
    CHECK(run.log()->status() == RunStatus::agent_stopped);
    CHECK_THROWS_AS(run.enqueue("late"), std::logic_error);
    CHECK_THROWS_AS(run.enqueue("   "), std::invalid_argument);
}

TEST_CASE("wait_for_steering pauses between iterations", "[agent]") {
    auto cfg = config(2);
    cfg.wait_for_steering = true;
    RunControl run(std::make_shared<RunLog>("w", cfg));
    ScriptedEndpoint ep(json{call(variant_circuit(1.0)), call(variant_circuit(2.0))});
    std::thread worker([&] { run_agent_loop(run, ep); });
    for (int i = 0; i < 500 && run.log()->status() != RunStatus::waiting_steering; ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    CHECK(run.log()->status() == RunStatus::waiting_steering);
    CHECK(run.log()->iterations().size() == 1);
    inject_user_steering(run, "continue with a scaled angle");
    worker.join();
    CHECK(run.log()->status() == RunStatus::budget_exhausted);
    CHECK(run.log()->iterations().size() == 2);
}

TEST_CASE("interrupt aborts a waiting run", "[agent]") {
    auto cfg = config(3);
    cfg.wait_for_steering = true;
    RunControl run(std::make_shared<RunLog>("i", cfg));
    ScriptedEndpoint ep(json{call(variant_circuit(1.0)), call(variant_circuit(2.0))});
    std::thread worker([&] { run_agent_loop(run, ep); });
    for (int i = 0; i < 500 && run.log()->status() != RunStatus::waiting_steering; ++i) {
        std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    run.interrupt();
    worker.join();
    CHECK(run.log()->status() == RunStatus::aborted);
}

TEST_CASE("context truncation is logged", "[agent]") {
    auto cfg = config(3);
    cfg.context_budget_chars = 2500;
    const auto log = run_scripted(json{call(variant_circuit(1.0)), call(variant_circuit(2.0)),
                                       call(variant_circuit(3.0))},
                                  cfg);
    bool truncated = false;
    for (const auto &e : log->events_since(0)) truncated |= e.at("type") == "truncation";
    CHECK(truncated);
    CHECK(log->iterations().size() == 3);
}

TEST_CASE("run logs persist, reload and replay", "[agent]") {
    const auto dir = temp_dir("persist");
    const json pl = {broken(), call(circuit("iteration1.json")), call(variant_circuit(0.5))};
    const auto log = run_scripted(pl, config(2), dir);
    CHECK(std::filesystem::exists(dir / "events.jsonl"));
    CHECK(std::filesystem::exists(dir / "summary.json"));

    const auto loaded = RunLog::load(dir);
    CHECK(loaded->status() == RunStatus::budget_exhausted);
    CHECK(loaded->iterations().size() == 3);
    CHECK(loaded->config().master_seed == 5);
    CHECK(loaded->event_count() == log->event_count());
    CHECK(same_metrics(*loaded->iterations()[1].result, *log->iterations()[1].result));
    CHECK(json::parse(oracle::read_text((dir / "summary.json").string())).at("prompt_version") ==
          kPromptVersion);

    const auto rep = verify_replay(*loaded);
    CHECK(rep.compared == 3);
    CHECK(rep.ok());

    // Tampered metrics are detected.
    auto lines = oracle::read_text((dir / "events.jsonl").string());
    const auto pos = lines.find("\"test_RMSE\":");
    REQUIRE(pos != std::string::npos);
    lines.insert(pos + 12, "1");
    std::ofstream(dir / "events.jsonl") << lines;
    CHECK_FALSE(verify_replay(*RunLog::load(dir)).ok());
    std::filesystem::remove_all(dir);
}

TEST_CASE("a non-terminal run reloads as aborted", "[agent]") {
    const auto dir = temp_dir("crash");
    {
        RunLog log("crashed", config(2), dir);
        log.append("run_started", {{"run_id", "crashed"}, {"config", to_json(config(2))}});
        log.set_status(RunStatus::running);
    }
    CHECK(RunLog::load(dir)->status() == RunStatus::aborted);
    std::filesystem::remove_all(dir);
}

TEST_CASE("tool schemas carry documentation and examples", "[agent]") {
    for (auto a : {Architecture::simple, Architecture::quanv, Architecture::full_quantum}) {
        const auto s = tool_schema(a);
        const auto f = s.to_function();
        CHECK(f.at("function").at("name") == tool_name(a));
        CHECK_THAT(s.docstring, ContainsSubstring("Example"));
        CHECK(f.at("function").at("parameters").at("properties").contains("VQC_circuit"));
        CHECK(f.at("function").at("parameters").at("properties").contains("epochs"));
        // The embedded example must itself be a valid circuit.
        const auto start = s.docstring.find("{\"n_qubits\"", s.docstring.find("Example"));
        REQUIRE(start != std::string::npos);
        const auto end = s.docstring.rfind("]}") + 2;
        CHECK_NOTHROW(unroll(parse_circuit(s.docstring.substr(start, end - start))));
    }
    CHECK_THAT(system_prompt(Architecture::quanv), ContainsSubstring("train_quanv_nn"));
    CHECK_THAT(system_prompt(Architecture::simple), ContainsSubstring("DONE:"));
}

// ---------------------------------------------------------------------------
// HTTP endpoint against a loopback fake
// ---------------------------------------------------------------------------

namespace {

struct FakeChatServer {
    httplib::Server server;
    std::thread thread;
    int port = 0;
    std::atomic<int> hits{0};
    std::string last_auth;
    json last_body;
    std::mutex mu;

    explicit FakeChatServer(std::function<void(const httplib::Request &, httplib::Response &, int)> h) {
        server.Post("/v1/chat/completions",
                    [this, h](const httplib::Request &req, httplib::Response &res) {
                        {
                            std::lock_guard lock(mu);
                            last_auth = req.get_header_value("Authorization");
                            last_body = json::parse(req.body);
                        }
                        h(req, res, ++hits);
                    });
        port = server.bind_to_any_port("127.0.0.1");
        thread = std::thread([this] { server.listen_after_bind(); });
        server.wait_until_ready();
    }
    ~FakeChatServer() {
        server.stop();
        thread.join();
    }
    EndpointConfig endpoint() const {
        EndpointConfig e;
        e.base_url = "http://127.0.0.1:" + std::to_string(port) + "/v1";
        e.api_key_env = "VQCLAB_TEST_KEY";
        e.backoff_ms = 1;
        return e;
    }
};

std::vector<Message> history() {
    return {{"system", "sys", std::nullopt, {}, std::nullopt},
            {"user", "go", std::nullopt, {}, std::nullopt}};
}

} // namespace

TEST_CASE("HTTP endpoint parses tool calls and sends the tools array", "[agent][http]") {
    ::setenv("VQCLAB_TEST_KEY", "sekrit-123", 1);
    FakeChatServer fake([](const httplib::Request &, httplib::Response &res, int) {
        res.set_content(R"({"choices": [{"message": {"role": "assistant", "content": "why",
            "tool_calls": [{"id": "t1", "type": "function", "function": {"name": "train_simple_qnn",
            "arguments": "{\"epochs\": 1}"}}]}}], "usage": {"prompt_tokens": 12, "completion_tokens": 3}})",
                        "application/json");
    });
    HttpChatEndpoint ep(fake.endpoint());
    const auto m = ep.complete(history(), {tool_schema(Architecture::simple)});
    REQUIRE(m.tool_call);
    CHECK(m.tool_call->name == "train_simple_qnn");
    CHECK(m.tool_call->arguments == "{\"epochs\": 1}");
    CHECK(m.content == "why");
    CHECK(m.usage->prompt_tokens == 12);
    CHECK(fake.last_auth == "Bearer sekrit-123");
    CHECK(fake.last_body.at("tools").at(0).at("function").at("name") == "train_simple_qnn");
    CHECK(fake.last_body.at("messages").size() == 2);
}

TEST_CASE("HTTP endpoint auth failure names the variable, not the key", "[agent][http]") {
    ::setenv("VQCLAB_TEST_KEY", "sekrit-123", 1);
    FakeChatServer fake([](const httplib::Request &, httplib::Response &res, int) {
        res.status = 401;
    });
    HttpChatEndpoint ep(fake.endpoint());
    try {
        ep.complete(history(), {});
        FAIL("expected an auth error");
    } catch (const EndpointError &e) {
        CHECK(e.kind() == EndpointError::Kind::auth);
        CHECK_THAT(e.what(), ContainsSubstring("VQCLAB_TEST_KEY"));
        CHECK_THAT(e.what(), !ContainsSubstring("sekrit"));
    }
    CHECK(fake.hits == 1);
}

TEST_CASE("HTTP endpoint retries server errors then gives up", "[agent][http]") {
    FakeChatServer fake([](const httplib::Request &, httplib::Response &res, int n) {
        if (n < 3) {
            res.status = 503;
            return;
        }
        res.set_content(R"({"choices": [{"message": {"content": "DONE: ok"}}]})", "application/json");
    });
    HttpChatEndpoint ep(fake.endpoint());
    CHECK(ep.complete(history(), {}).content == "DONE: ok");
    CHECK(fake.hits == 3);

    FakeChatServer down([](const httplib::Request &, httplib::Response &res, int) { res.status = 500; });
    HttpChatEndpoint ep2(down.endpoint());
    CHECK_THROWS_AS(ep2.complete(history(), {}), EndpointError);
    CHECK(down.hits == 3);
}

TEST_CASE("HTTP reply without text or tool call is a protocol error", "[agent][http]") {
    FakeChatServer fake([](const httplib::Request &, httplib::Response &res, int) {
        res.set_content(R"({"choices": [{"message": {"content": null}}]})", "application/json");
    });
    HttpChatEndpoint ep(fake.endpoint());
    try {
        ep.complete(history(), {});
        FAIL("expected a protocol error");
    } catch (const EndpointError &e) {
        CHECK(e.kind() == EndpointError::Kind::protocol);
    }
}

TEST_CASE("an unreachable endpoint aborts the run with a partial log", "[agent][http]") {
    auto cfg = config(2);
    cfg.endpoint.base_url = "http://127.0.0.1:1/v1";
    cfg.endpoint.backoff_ms = 1;
    RunControl run(std::make_shared<RunLog>("u", cfg));
    HttpChatEndpoint ep(cfg.endpoint);
    run_agent_loop(run, ep);
    CHECK(run.log()->status() == RunStatus::aborted);
    CHECK(run.log()->messages().size() == 2);
}

TEST_CASE("the loop drives a live HTTP model end to end", "[agent][http]") {
    const auto args = call(circuit("iteration1.json")).at("arguments").dump();
    FakeChatServer fake([args](const httplib::Request &req, httplib::Response &res, int) {
        const auto body = json::parse(req.body);
        const bool after_tool = body.at("messages").back().at("role") == "tool";
        json msg = after_tool
                       ? json{{"role", "assistant"}, {"content", "DONE: one circuit is enough"}}
                       : json{{"role", "assistant"},
                              {"content", nullptr},
                              {"tool_calls",
                               {{{"id", "x1"},
                                 {"type", "function"},
                                 {"function", {{"name", "train_simple_qnn"}, {"arguments", args}}}}}}};
        res.set_content(json{{"choices", {{{"message", msg}}}}}.dump(), "application/json");
    });
    auto cfg = config(4);
    cfg.endpoint = fake.endpoint();
    RunControl run(std::make_shared<RunLog>("h", cfg));
    HttpChatEndpoint ep(cfg.endpoint);
    run_agent_loop(run, ep);
    CHECK(run.log()->status() == RunStatus::agent_stopped);
    REQUIRE(run.log()->iterations().size() == 1);
    CHECK(run.log()->iterations()[0].result);
    // The tool result was sent back with the matching call id.
    const auto &msgs = fake.last_body.at("messages");
    CHECK(msgs.back().at("role") == "tool");
    CHECK(msgs.back().at("tool_call_id") == "x1");
    CHECK(msgs.at(msgs.size() - 2).at("tool_calls").at(0).at("id") == "x1");
}
