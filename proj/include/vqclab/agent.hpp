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
/**
 * @file
 * The circuit design loop: conversation state, chat endpoints, tool
 * dispatch, human steering and the persisted run log.
 */
#pragma once

#include "train_tools.hpp"

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <ctime>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace vqclab {

using nlohmann::json;

inline constexpr const char *kPromptVersion = "vqclab-prompt/1";

// ---------------------------------------------------------------------------
// Messages and schemas
// ---------------------------------------------------------------------------

struct ToolCall {
    std::string id;
    std::string name;
    /// Argument document exactly as the model wrote it.
    std::string arguments;
};

struct Usage {
    std::int64_t prompt_tokens = 0;
    std::int64_t completion_tokens = 0;
};

struct Message {
    std::string role;  // system | user | assistant | tool
    std::string content;
    std::optional<ToolCall> tool_call;
    std::string tool_call_id;  // set on tool messages
    std::optional<Usage> usage;
};

inline json to_json(const Message &m) {
    json j{{"role", m.role}, {"content", m.content}};
    if (m.tool_call) {
        j["tool_call"] = {{"id", m.tool_call->id},
                          {"name", m.tool_call->name},
                          {"arguments", m.tool_call->arguments}};
    }
    if (!m.tool_call_id.empty()) {
        j["tool_call_id"] = m.tool_call_id;
    }
    if (m.usage) {
        j["usage"] = {{"prompt_tokens", m.usage->prompt_tokens},
                      {"completion_tokens", m.usage->completion_tokens}};
    }
    return j;
}

inline Message message_from_json(const json &j) {
    Message m;
    m.role = j.at("role").get<std::string>();
    m.content = j.value("content", std::string{});
    if (j.contains("tool_call")) {
        const auto &t = j.at("tool_call");
        m.tool_call = ToolCall{t.at("id").get<std::string>(),
                               t.at("name").get<std::string>(),
                               t.at("arguments").get<std::string>()};
    }
    m.tool_call_id = j.value("tool_call_id", std::string{});
    if (j.contains("usage")) {
        m.usage = Usage{j.at("usage").value("prompt_tokens", std::int64_t{0}),
                        j.at("usage").value("completion_tokens", std::int64_t{0})};
    }
    return m;
}

struct ToolParameter {
    std::string name;
    std::string type;  // JSON-schema type
    std::string description;
};

struct ToolSchema {
    std::string name;
    std::string docstring;
    std::vector<ToolParameter> parameters;

    /// Function-tool entry in the chat-completions shape.
    [[nodiscard]] json to_function() const {
        json props = json::object();
        json required = json::array();
        for (const auto &p : parameters) {
            json d{{"description", p.description}};
            if (p.type == "circuit") {
                d["type"] = json::array({"object", "string"});
            } else if (p.type == "shape") {
                d["type"] = "array";
                d["items"] = {{"type", "integer"}, {"minimum", 1}};
            } else {
                d["type"] = p.type;
            }
            props[p.name] = d;
            if (p.name != "VQC_weights_shape") {
                required.push_back(p.name);
            }
        }
        return {{"type", "function"},
                {"function",
                 {{"name", name},
                  {"description", docstring},
                  {"parameters",
                   {{"type", "object"},
                    {"properties", props},
                    {"required", required},
                    {"additionalProperties", false}}}}}};
    }
};

namespace agent_detail {

inline const char *kCircuitFormat = R"(Circuit document format (JSON):
  {"n_qubits": N, "weights_shape": [d0, d1, ...],
   "body": [ ...gates and loops... ],
   "measurements": [ ...readouts and loops... ]}
Gate: {"gate": G, "wires": [w] or [w0, w1], "angle": "expr"} or "angles": [a, b, c].
  G is one of H, X, RX, RY, RZ, ROT (three angles, applied as RZ(a), RY(b), RZ(c)),
  CNOT (control, target), CZ. Aliases Hadamard, PauliX, Rot, CX are accepted.
Loop: {"for": "i", "range": [stop] | [start, stop] | [start, stop, step], "body": [...]}.
Readout: {"observable": "PauliX" | "PauliY" | "PauliZ", "wire": w}; each readout is one output.
Expressions are strings or numbers: integers, reals, pi, loop variables, n_qubits,
  inputs[k], weights[i, j, ...], + - * / // % and parentheses.
  Wire and range expressions are integer-valued (/ rounds down there).
  Angles may combine inputs, weights, constants and loop variables with + - * /.
Every inputs[k] must satisfy k < input size; weights must be indexed with one subscript
per weights_shape dimension. A "comment" key is allowed on any object.)";

inline std::string simple_doc() {
    return std::string(R"(Trains a hybrid regressor on the Gaussian-peak task and returns its metrics.
Model: the 21 normalized samples pass through a trainable linear layer to q_enc_size
values, which are squashed to [0, pi] (pi * sigmoid) and become inputs[0..q_enc_size-1]
of your circuit. The circuit's q_out_size expectation values feed a linear layer to one
output followed by a sigmoid. The target is the peak position in [0, 1].
Requirements: the circuit must have exactly q_out_size readouts and may use up to
q_enc_size inputs. Keep n_qubits below 10; 12 is the hard limit.
Returns test_RMSE, val_RMSE_history (one per epoch), train_RMSE_last_batch,
n_gates_in_VQC, n_trainable_params_total, n_trainable_params_VQC and circuit_depth.

)") + kCircuitFormat + R"(

Example with q_enc_size = 9, q_out_size = 9, VQC_weights_shape = [9, 2]:
{"n_qubits": 9, "weights_shape": [9, 2],
 "body": [{"for": "i", "range": ["n_qubits"], "body": [
            {"gate": "RX", "wires": ["i"], "angle": "inputs[i % 9]"},
            {"gate": "RY", "wires": ["i"], "angle": "weights[i, 0]"},
            {"gate": "RZ", "wires": ["i"], "angle": "weights[i, 1]"}]},
          {"for": "i", "range": ["n_qubits"], "body": [
            {"gate": "CNOT", "wires": ["i", "(i + 1) % n_qubits"]}]}],
 "measurements": [{"for": "i", "range": ["n_qubits"], "body": [
            {"observable": "PauliZ", "wire": "i"}]}]})";
}

inline std::string quanv_doc() {
    return std::string(R"(Trains a quanvolutional regressor on the Gaussian-peak task and returns its metrics.
Model: windows of kernel_size consecutive samples (step stride) are scaled by pi and each
window is fed to your circuit as inputs[0..kernel_size-1]. The VQC_output_dim readouts of
all windows form a feature map with VQC_output_dim channels, processed by a residual block
of two 1D convolutions (kernel 3), average pooling and a small dense head with a sigmoid.
Requirements: exactly VQC_output_dim readouts; inputs[k] needs k < kernel_size;
kernel_size <= 21. Using n_qubits = kernel_size is natural but not required.
Returns the same metrics as train_simple_qnn.

)") + kCircuitFormat + R"(

Example with kernel_size = 5, stride = 2, VQC_output_dim = 5, VQC_weights_shape = [1, 5, 3]:
{"n_qubits": 5, "weights_shape": [1, 5, 3],
 "body": [{"for": "i", "range": [5], "body": [
            {"gate": "RY", "wires": ["i"], "angle": "inputs[i]"}]},
          {"for": "l", "range": [1], "body": [
            {"for": "i", "range": ["n_qubits"], "body": [
              {"gate": "ROT", "wires": ["i"],
               "angles": ["weights[l, i, 0]", "weights[l, i, 1]", "weights[l, i, 2]"]}]},
            {"for": "i", "range": ["n_qubits"], "body": [
              {"gate": "CNOT", "wires": ["i", "(i + 1) % n_qubits"]}]}]}],
 "measurements": [{"for": "i", "range": ["n_qubits"], "body": [
            {"observable": "PauliZ", "wire": "i"}]}]})";
}

inline std::string full_doc() {
    return std::string(R"(Trains an almost fully quantum regressor on the Gaussian-peak task and returns its metrics.
Model: all 21 normalized samples, scaled to [0, pi], are available as inputs[0..20]. You
must find an encoding that fits them into at most 12 (preferably fewer than 10) qubits,
for example by re-uploading several values on the same wire. The q_out_size readouts feed
a single linear layer and a sigmoid.
Requirements: exactly q_out_size readouts.
Returns the same metrics as train_simple_qnn.

)") + kCircuitFormat + R"(

Example with q_out_size = 3, VQC_weights_shape = [2, 9, 2] (some weights stay unused):
{"n_qubits": 4, "weights_shape": [2, 9, 2],
 "body": [{"for": "w", "range": [1, 4], "body": [{"gate": "H", "wires": ["w"]}]},
          {"for": "t", "range": [21], "body": [
            {"gate": "RY", "wires": [0], "angle": "inputs[t]"},
            {"for": "l", "range": [2], "body": [
              {"for": "w", "range": ["n_qubits"], "body": [
                {"gate": "RY", "wires": ["w"], "angle": "weights[l, w, 0]"},
                {"gate": "RZ", "wires": ["w"], "angle": "weights[l, w, 1]"}]},
              {"for": "w", "range": ["n_qubits - 1"], "body": [
                {"gate": "CNOT", "wires": ["w", "w + 1"]}]},
              {"gate": "CNOT", "wires": ["n_qubits - 1", 0]}]}]}],
 "measurements": [{"for": "w", "range": [1, 4], "body": [
            {"observable": "PauliZ", "wire": "w"}]}]}
This runs and learns a little, but performs poorly.)";
}

} // namespace agent_detail

inline ToolSchema tool_schema(Architecture a) {
    const ToolParameter circuit{"VQC_circuit", "circuit",
                                "circuit document (object or JSON text)"};
    const ToolParameter shape{"VQC_weights_shape", "shape",
                              "shape of the trainable weight tensor; may be "
                              "omitted when the circuit declares weights_shape"};
    const ToolParameter epochs{"epochs", "integer", "number of training epochs"};
    switch (a) {
    case Architecture::simple:
        return {tool_name(a), agent_detail::simple_doc(),
                {circuit, shape,
                 {"q_enc_size", "integer", "number of circuit inputs"},
                 {"q_out_size", "integer", "number of circuit readouts"},
                 epochs}};
    case Architecture::quanv:
        return {tool_name(a), agent_detail::quanv_doc(),
                {circuit, shape,
                 {"kernel_size", "integer", "window length"},
                 {"stride", "integer", "window step"},
                 {"VQC_output_dim", "integer", "number of circuit readouts"},
                 epochs}};
    case Architecture::full_quantum:
        return {tool_name(a), agent_detail::full_doc(),
                {circuit, shape,
                 {"q_out_size", "integer", "number of circuit readouts"},
                 epochs}};
    }
    return {};
}

inline std::string system_prompt(Architecture a) {
    std::ostringstream s;
    s << "You design variational quantum circuits for a regression task. Each sample "
         "is a noisy Gaussian peak on 21 evenly spaced points in [0, 1], min-max "
         "normalized; the target is the peak position.\n"
         "Work in iterations. In each iteration call the tool "
      << tool_name(a)
      << " with one new circuit, read the metrics it returns and use them to improve "
         "the next design. Lower test_RMSE is better; fewer VQC parameters at equal "
         "error is better.\n"
         "Rules:\n"
         "- Submit circuits only in the JSON circuit format described in the tool "
         "documentation. Nothing else is executed.\n"
         "- The number of readouts must equal the output size you request, and input "
         "indices must stay below the input size.\n"
         "- Use only the listed gates and observables.\n"
         "- Prefer fewer than 10 qubits.\n"
         "- If a tool call returns an error, fix the circuit and call again.\n"
         "- Explain briefly what you change and why before each call.\n"
         "- When you want to stop, write a line starting with DONE: followed by a "
         "short summary.\n"
         "Human messages may arrive between iterations; follow them.\n";
    return s.str();
}

inline std::string default_task(Architecture a, int budget) {
    return "Design circuits for " + std::string(tool_name(a)) + ". You have " +
           std::to_string(budget) +
           " iterations. Start simple and increase complexity step by step.";
}

// ---------------------------------------------------------------------------
// Run configuration and records
// ---------------------------------------------------------------------------

struct EndpointConfig {
    std::string base_url = "http://127.0.0.1:8000/v1";
    std::string model = "default";
    std::string api_key_env = "VQCLAB_API_KEY";
    double temperature = 0.7;
    int max_retries = 3;
    int backoff_ms = 500;
    int timeout_s = 300;
};

struct RunConfig {
    Architecture variant = Architecture::simple;
    int budget = 10;
    std::string prompt;  // empty: default_task
    EndpointConfig endpoint;
    std::uint64_t master_seed = 42;
    int max_repair_attempts = 3;
    /// Milliseconds to wait for steering after each tool result.
    int steering_window_ms = 0;
    /// Pause after every tool result until steering or resume arrives.
    bool wait_for_steering = false;
    /// Messages are dropped oldest-first once their content exceeds this.
    std::size_t context_budget_chars = 400000;
    /// Steering injected by the engine itself after the given iteration.
    std::map<int, std::string> scheduled_steering;
};

inline json to_json(const RunConfig &c) {
    json sched = json::object();
    for (const auto &[k, v] : c.scheduled_steering) {
        sched[std::to_string(k)] = v;
    }
    return {{"variant", architecture_name(c.variant)},
            {"budget", c.budget},
            {"prompt", c.prompt},
            {"endpoint",
             {{"base_url", c.endpoint.base_url},
              {"model", c.endpoint.model},
              {"api_key_env", c.endpoint.api_key_env},
              {"temperature", c.endpoint.temperature}}},
            {"master_seed", c.master_seed},
            {"max_repair_attempts", c.max_repair_attempts},
            {"steering_window_ms", c.steering_window_ms},
            {"wait_for_steering", c.wait_for_steering},
            {"context_budget_chars", c.context_budget_chars},
            {"scheduled_steering", sched}};
}

inline RunConfig run_config_from_json(const json &j) {
    RunConfig c;
    if (j.contains("variant")) {
        const auto v = architecture_from_name(j.at("variant").get<std::string>());
        if (!v) {
            throw std::invalid_argument("unknown variant " + j.at("variant").dump());
        }
        c.variant = *v;
    }
    c.budget = j.value("budget", c.budget);
    c.prompt = j.value("prompt", c.prompt);
    if (j.contains("endpoint")) {
        const auto &e = j.at("endpoint");
        c.endpoint.base_url = e.value("base_url", c.endpoint.base_url);
        c.endpoint.model = e.value("model", c.endpoint.model);
        c.endpoint.api_key_env = e.value("api_key_env", c.endpoint.api_key_env);
        c.endpoint.temperature = e.value("temperature", c.endpoint.temperature);
    }
    c.master_seed = j.value("master_seed", c.master_seed);
    c.max_repair_attempts = j.value("max_repair_attempts", c.max_repair_attempts);
    c.steering_window_ms = j.value("steering_window_ms", c.steering_window_ms);
    c.wait_for_steering = j.value("wait_for_steering", c.wait_for_steering);
    c.context_budget_chars = j.value("context_budget_chars", c.context_budget_chars);
    if (j.contains("scheduled_steering")) {
        for (const auto &[k, v] : j.at("scheduled_steering").items()) {
            c.scheduled_steering[std::stoi(k)] = v.get<std::string>();
        }
    }
    if (c.budget < 1) {
        throw std::invalid_argument("budget must be at least 1");
    }
    if (c.max_repair_attempts < 0) {
        throw std::invalid_argument("max_repair_attempts must be non-negative");
    }
    return c;
}

struct IterationRecord {
    int index = 0;
    std::string rationale;
    std::string tool;
    std::string arguments;
    std::optional<ToolRequest> request;
    std::optional<ToolResult> result;
    std::optional<ToolError> error;
    /// 0 for a first attempt, k for the k-th repair after an error.
    int repair_attempt = 0;
    /// Whether this attempt used up one unit of budget.
    bool counted = false;
    std::string started_at;
    std::string finished_at;
};

inline json to_json(const IterationRecord &r) {
    json j{{"index", r.index},
           {"rationale", r.rationale},
           {"tool", r.tool},
           {"arguments", r.arguments},
           {"repair_attempt", r.repair_attempt},
           {"counted", r.counted},
           {"started_at", r.started_at},
           {"finished_at", r.finished_at}};
    j["request"] = r.request ? to_json(*r.request) : json(nullptr);
    if (r.result) j["result"] = to_json(*r.result);
    if (r.error) j["error"] = to_json(*r.error);
    return j;
}

inline IterationRecord iteration_from_json(const json &j) {
    IterationRecord r;
    r.index = j.at("index").get<int>();
    r.rationale = j.value("rationale", std::string{});
    r.tool = j.value("tool", std::string{});
    r.arguments = j.value("arguments", std::string{});
    r.repair_attempt = j.value("repair_attempt", 0);
    r.counted = j.value("counted", false);
    r.started_at = j.value("started_at", std::string{});
    r.finished_at = j.value("finished_at", std::string{});
    if (j.contains("request") && !j.at("request").is_null()) {
        r.request = tool_request_from_json(j.at("request"));
    }
    if (j.contains("result")) r.result = tool_result_from_json(j.at("result"));
    if (j.contains("error")) r.error = tool_error_from_json(j.at("error"));
    return r;
}

enum class RunStatus { running, waiting_steering, agent_stopped, budget_exhausted, aborted };

inline const char *status_name(RunStatus s) {
    switch (s) {
    case RunStatus::running: return "running";
    case RunStatus::waiting_steering: return "waiting_steering";
    case RunStatus::agent_stopped: return "agent_stopped";
    case RunStatus::budget_exhausted: return "budget_exhausted";
    case RunStatus::aborted: return "aborted";
    }
    return "?";
}

inline std::optional<RunStatus> status_from_name(std::string_view s) {
    for (auto st : {RunStatus::running, RunStatus::waiting_steering,
                    RunStatus::agent_stopped, RunStatus::budget_exhausted,
                    RunStatus::aborted}) {
        if (s == status_name(st)) return st;
    }
    return std::nullopt;
}

inline bool is_terminal(RunStatus s) {
    return s == RunStatus::agent_stopped || s == RunStatus::budget_exhausted ||
           s == RunStatus::aborted;
}

inline std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const auto t = std::chrono::system_clock::to_time_t(now);
    const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                        now.time_since_epoch())
                        .count() %
                    1000;
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[96];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03dZ",
                  tm.tm_year + 1900, tm.tm_mon + 1, tm.tm_mday, tm.tm_hour,
                  tm.tm_min, tm.tm_sec, static_cast<int>(ms));
    return buf;
}

// ---------------------------------------------------------------------------
// RunLog
// ---------------------------------------------------------------------------

/**
 * Append-only event history of one run. One writer (the loop), any number
 * of readers. Events are numbered from 0; `events.jsonl` holds one event
 * per line and `summary.json` is rewritten after each event.
 */
class RunLog {
  public:
    RunLog(std::string id, RunConfig config, std::filesystem::path dir = {})
        : id_(std::move(id)), config_(std::move(config)), dir_(std::move(dir)) {
        if (!dir_.empty()) {
            std::filesystem::create_directories(dir_);
            std::ofstream(dir_ / "events.jsonl", std::ios::trunc);
        }
    }

    /// Rebuilds a log from its directory. A run that was not terminal is
    /// marked aborted.
    static std::shared_ptr<RunLog> load(const std::filesystem::path &dir) {
        std::ifstream in(dir / "events.jsonl");
        if (!in) {
            throw std::runtime_error("no events.jsonl in " + dir.string());
        }
        std::vector<json> events;
        std::string line;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            try {
                events.push_back(json::parse(line));
            } catch (const json::exception &) {
                break;  // torn final line
            }
        }
        if (events.empty() || events.front().value("type", "") != "run_started") {
            throw std::runtime_error("run log in " + dir.string() +
                                     " does not start with run_started");
        }
        const auto &start = events.front().at("data");
        auto log = std::shared_ptr<RunLog>(new RunLog(
            start.at("run_id").get<std::string>(),
            run_config_from_json(start.at("config")), dir, true));
        for (auto &e : events) {
            log->absorb(e);
            log->events_.push_back(std::move(e));
        }
        if (!is_terminal(log->status_)) {
            log->set_status(RunStatus::aborted, "service restarted");
        }
        return log;
    }

    [[nodiscard]] const std::string &id() const { return id_; }
    [[nodiscard]] const RunConfig &config() const { return config_; }
    [[nodiscard]] const std::filesystem::path &dir() const { return dir_; }

    std::size_t append(const std::string &type, json data) {
        std::lock_guard lock(mu_);
        json e{{"seq", events_.size()},
               {"type", type},
               {"time", utc_timestamp()},
               {"data", std::move(data)}};
        absorb(e);
        if (!dir_.empty()) {
            std::ofstream out(dir_ / "events.jsonl", std::ios::app);
            out << e.dump() << '\n';
        }
        events_.push_back(std::move(e));
        write_summary_locked();
        cv_.notify_all();
        return events_.size() - 1;
    }

    void set_status(RunStatus s, const std::string &reason = {}) {
        json d{{"status", status_name(s)}};
        if (!reason.empty()) d["reason"] = reason;
        append("status", std::move(d));
    }

    [[nodiscard]] RunStatus status() const {
        std::lock_guard lock(mu_);
        return status_;
    }

    [[nodiscard]] std::size_t event_count() const {
        std::lock_guard lock(mu_);
        return events_.size();
    }

    [[nodiscard]] std::vector<json> events_since(std::size_t from) const {
        std::lock_guard lock(mu_);
        if (from >= events_.size()) return {};
        return {events_.begin() + static_cast<std::ptrdiff_t>(from), events_.end()};
    }

    /// Blocks until an event with seq >= from exists, the run is terminal,
    /// or the timeout elapses. Returns true if new events are available.
    template <class Rep, class Period>
    bool wait_for_events(std::size_t from,
                         std::chrono::duration<Rep, Period> timeout) const {
        std::unique_lock lock(mu_);
        return cv_.wait_for(lock, timeout, [&] {
            return events_.size() > from || is_terminal(status_);
        }) && events_.size() > from;
    }

    [[nodiscard]] std::vector<Message> messages() const {
        std::lock_guard lock(mu_);
        return messages_;
    }

    [[nodiscard]] std::vector<IterationRecord> iterations() const {
        std::lock_guard lock(mu_);
        return iterations_;
    }

    /// Index of the best successful iteration (lowest test_RMSE).
    [[nodiscard]] std::optional<IterationRecord> best() const {
        std::lock_guard lock(mu_);
        return best_locked();
    }

    [[nodiscard]] json summary() const {
        std::lock_guard lock(mu_);
        return summary_locked();
    }

  private:
    RunLog(std::string id, RunConfig config, std::filesystem::path dir, bool)
        : id_(std::move(id)), config_(std::move(config)), dir_(std::move(dir)) {}

    void absorb(const json &e) {
        const auto type = e.value("type", "");
        const auto &d = e.at("data");
        if (type == "message") {
            messages_.push_back(message_from_json(d));
        } else if (type == "iteration") {
            iterations_.push_back(iteration_from_json(d));
        } else if (type == "status") {
            if (auto s = status_from_name(d.at("status").get<std::string>())) {
                status_ = *s;
            }
        } else if (type == "run_started") {
            created_ = e.value("time", "");
        }
    }

    [[nodiscard]] std::optional<IterationRecord> best_locked() const {
        std::optional<IterationRecord> best;
        for (const auto &r : iterations_) {
            if (r.result && (!best || r.result->test_RMSE < best->result->test_RMSE)) {
                best = r;
            }
        }
        return best;
    }

    [[nodiscard]] json summary_locked() const {
        std::int64_t prompt_tokens = 0;
        std::int64_t completion_tokens = 0;
        for (const auto &m : messages_) {
            if (m.usage) {
                prompt_tokens += m.usage->prompt_tokens;
                completion_tokens += m.usage->completion_tokens;
            }
        }
        int counted = 0;
        for (const auto &r : iterations_) {
            counted += r.counted ? 1 : 0;
        }
        json s{{"run_id", id_},
               {"status", status_name(status_)},
               {"created", created_},
               {"variant", architecture_name(config_.variant)},
               {"budget", config_.budget},
               {"budget_used", counted},
               {"master_seed", config_.master_seed},
               {"prompt_version", kPromptVersion},
               {"iterations", iterations_.size()},
               {"events", events_.size()},
               {"tokens",
                {{"prompt", prompt_tokens}, {"completion", completion_tokens}}}};
        if (auto b = best_locked()) {
            s["best_iteration"] = b->index;
            s["best_test_RMSE"] = b->result->test_RMSE;
        } else {
            s["best_iteration"] = nullptr;
            s["best_test_RMSE"] = nullptr;
        }
        return s;
    }

    void write_summary_locked() const {
        if (dir_.empty()) return;
        const auto tmp = dir_ / "summary.json.tmp";
        {
            std::ofstream out(tmp, std::ios::trunc);
            out << summary_locked().dump(2) << '\n';
        }
        std::error_code ec;
        std::filesystem::rename(tmp, dir_ / "summary.json", ec);
    }

    std::string id_;
    RunConfig config_;
    std::filesystem::path dir_;
    mutable std::mutex mu_;
    mutable std::condition_variable cv_;
    std::vector<json> events_;
    std::vector<Message> messages_;
    std::vector<IterationRecord> iterations_;
    RunStatus status_ = RunStatus::running;
    std::string created_;
};

// ---------------------------------------------------------------------------
// Live run: log plus the cross-thread inputs
// ---------------------------------------------------------------------------

/// Steering and interrupt inputs of a run. Thread-safe.
class RunControl {
  public:
    explicit RunControl(std::shared_ptr<RunLog> log) : log_(std::move(log)) {}

    [[nodiscard]] const std::shared_ptr<RunLog> &log() const { return log_; }

    /// Queues a user message for the next assistant turn. Returns the queue
    /// position token; a repeated idempotency key returns the first token
    /// without queueing again.
    std::size_t enqueue(const std::string &text, const std::string &key = {}) {
        if (text.find_first_not_of(" \t\r\n") == std::string::npos) {
            throw std::invalid_argument("steering text must not be empty");
        }
        std::lock_guard lock(mu_);
        if (is_terminal(log_->status())) {
            throw std::logic_error(std::string("run is ") +
                                   status_name(log_->status()) +
                                   "; it no longer accepts messages");
        }
        if (!key.empty()) {
            if (auto it = keys_.find(key); it != keys_.end()) {
                return it->second;
            }
        }
        const std::size_t token = next_token_++;
        queue_.push_back(text);
        if (!key.empty()) keys_[key] = token;
        cv_.notify_all();
        return token;
    }

    std::vector<std::string> drain() {
        std::lock_guard lock(mu_);
        std::vector<std::string> out(queue_.begin(), queue_.end());
        queue_.clear();
        return out;
    }

    void interrupt() {
        interrupted_.store(true);
        std::lock_guard lock(mu_);
        cv_.notify_all();
    }

    /// Ends a wait_for_steering pause without a message.
    void resume() {
        std::lock_guard lock(mu_);
        resume_ = true;
        cv_.notify_all();
    }

    [[nodiscard]] bool interrupted() const { return interrupted_.load(); }
    [[nodiscard]] const std::atomic<bool> *interrupt_flag() const {
        return &interrupted_;
    }

    /// Waits until a message is queued, resume() or interrupt() is called,
    /// or `timeout` elapses (a negative timeout waits indefinitely).
    void wait(std::chrono::milliseconds timeout) {
        std::unique_lock lock(mu_);
        auto ready = [&] { return !queue_.empty() || resume_ || interrupted_.load(); };
        if (timeout.count() < 0) {
            cv_.wait(lock, ready);
        } else {
            cv_.wait_for(lock, timeout, ready);
        }
        resume_ = false;
    }

  private:
    std::shared_ptr<RunLog> log_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::deque<std::string> queue_;
    std::map<std::string, std::size_t> keys_;
    std::size_t next_token_ = 0;
    bool resume_ = false;
    std::atomic<bool> interrupted_{false};
};

inline std::size_t inject_user_steering(RunControl &run, const std::string &text,
                                        const std::string &idempotency_key = {}) {
    return run.enqueue(text, idempotency_key);
}

// ---------------------------------------------------------------------------
// Chat endpoints
// ---------------------------------------------------------------------------

class EndpointError : public std::runtime_error {
  public:
    enum class Kind { transport, auth, protocol };
    EndpointError(Kind kind, const std::string &msg)
        : std::runtime_error(msg), kind_(kind) {}
    [[nodiscard]] Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

class ChatEndpoint {
  public:
    virtual ~ChatEndpoint() = default;
    /// Returns an assistant message carrying text, a tool call, or both.
    virtual Message complete(const std::vector<Message> &history,
                             const std::vector<ToolSchema> &tools) = 0;
};

/**
 * Deterministic stand-in for a model. Playlist entries:
 *   {"tool": name, "arguments": {...} or "raw text", "text": rationale}
 *   {"text": "..."}                      plain reply (a DONE: line stops the run)
 *   {"action": "retrain_best", "text": ...}
 * retrain_best re-issues the best successful call so far; its epochs come
 * from the last user message that mentions "N epochs", else stay unchanged.
 * When the playlist runs out the endpoint replies "DONE: playlist finished".
 */
class ScriptedEndpoint : public ChatEndpoint {
  public:
    explicit ScriptedEndpoint(json playlist) : playlist_(std::move(playlist)) {
        if (playlist_.is_object() && playlist_.contains("turns")) {
            playlist_ = json(playlist_.at("turns"));
        }
        if (!playlist_.is_array()) {
            throw std::invalid_argument("playlist must be an array of turns");
        }
    }

    Message complete(const std::vector<Message> &history,
                     const std::vector<ToolSchema> &) override {
        Message m;
        m.role = "assistant";
        m.usage = Usage{static_cast<std::int64_t>(history.size()), 0};
        if (next_ >= playlist_.size()) {
            m.content = "DONE: playlist finished";
            return m;
        }
        const json &turn = playlist_.at(next_++);
        m.content = turn.value("text", std::string{});
        if (turn.contains("tool")) {
            const auto &a = turn.at("arguments");
            m.tool_call = ToolCall{call_id(), turn.at("tool").get<std::string>(),
                                   a.is_string() ? a.get<std::string>() : a.dump()};
        } else if (turn.value("action", "") == "retrain_best") {
            m.tool_call = retrain_best(history);
            if (!m.tool_call) {
                m.content = "DONE: nothing to retrain";
            }
        }
        return m;
    }

  private:
    std::string call_id() { return "call_" + std::to_string(++calls_); }

    std::optional<ToolCall> retrain_best(const std::vector<Message> &history) {
        std::map<std::string, const ToolCall *> calls;
        const ToolCall *best = nullptr;
        double best_rmse = 0.0;
        std::optional<int> epochs;
        static const std::regex epochs_re(R"((\d+)\s+epochs?)", std::regex::icase);
        for (const auto &m : history) {
            if (m.role == "assistant" && m.tool_call) {
                calls[m.tool_call->id] = &*m.tool_call;
            } else if (m.role == "tool") {
                const auto it = calls.find(m.tool_call_id);
                const auto r = json::parse(m.content, nullptr, false);
                if (it != calls.end() && r.is_object() && r.contains("test_RMSE")) {
                    const double v = r.at("test_RMSE").get<double>();
                    if (best == nullptr || v < best_rmse) {
                        best = it->second;
                        best_rmse = v;
                    }
                }
            } else if (m.role == "user") {
                std::smatch match;
                if (std::regex_search(m.content, match, epochs_re)) {
                    epochs = std::stoi(match[1]);
                }
            }
        }
        if (best == nullptr) return std::nullopt;
        auto args = json::parse(best->arguments);
        if (epochs) args["epochs"] = *epochs;
        return ToolCall{call_id(), best->name, args.dump()};
    }

    json playlist_;
    std::size_t next_ = 0;
    int calls_ = 0;
};

namespace agent_detail {

struct ParsedUrl {
    std::string scheme_host_port;
    std::string path;
};

inline ParsedUrl split_url(const std::string &url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) {
        throw EndpointError(EndpointError::Kind::transport,
                            "invalid endpoint URL '" + url + "'");
    }
    std::string path = m[2].matched ? m[2].str() : "";
    while (!path.empty() && path.back() == '/') path.pop_back();
    return {m[1].str(), path};
}

inline json wire_message(const Message &m) {
    json j{{"role", m.role}};
    if (m.role == "assistant" && m.tool_call) {
        j["content"] = m.content.empty() ? json(nullptr) : json(m.content);
        j["tool_calls"] = json::array({{{"id", m.tool_call->id},
                                        {"type", "function"},
                                        {"function",
                                         {{"name", m.tool_call->name},
                                          {"arguments", m.tool_call->arguments}}}}});
    } else {
        j["content"] = m.content;
    }
    if (m.role == "tool") {
        j["tool_call_id"] = m.tool_call_id;
    }
    return j;
}

} // namespace agent_detail

/// Chat-completions client. Only the first tool call of a reply is kept.
class HttpChatEndpoint : public ChatEndpoint {
  public:
    explicit HttpChatEndpoint(EndpointConfig cfg) : cfg_(std::move(cfg)) {}

    Message complete(const std::vector<Message> &history,
                     const std::vector<ToolSchema> &tools) override {
        const auto url = agent_detail::split_url(cfg_.base_url);
        json body{{"model", cfg_.model},
                  {"temperature", cfg_.temperature},
                  {"messages", json::array()},
                  {"tools", json::array()}};
        for (const auto &m : history) {
            body["messages"].push_back(agent_detail::wire_message(m));
        }
        for (const auto &t : tools) {
            body["tools"].push_back(t.to_function());
        }
        httplib::Headers headers;
        if (const char *key = std::getenv(cfg_.api_key_env.c_str());
            key != nullptr && *key != '\0') {
            headers.emplace("Authorization", std::string("Bearer ") + key);
        }
        std::string last_error;
        for (int attempt = 0; attempt < std::max(1, cfg_.max_retries); ++attempt) {
            if (attempt > 0) {
                std::this_thread::sleep_for(
                    std::chrono::milliseconds(cfg_.backoff_ms << (attempt - 1)));
            }
            httplib::Client client(url.scheme_host_port);
            client.set_read_timeout(cfg_.timeout_s, 0);
            client.set_connection_timeout(10, 0);
            auto res = client.Post(url.path + "/chat/completions", headers,
                                   body.dump(), "application/json");
            if (!res) {
                last_error = "transport error: " + httplib::to_string(res.error());
                continue;
            }
            if (res->status == 401 || res->status == 403) {
                throw EndpointError(EndpointError::Kind::auth,
                                    "endpoint rejected the credential (HTTP " +
                                        std::to_string(res->status) +
                                        "); check the environment variable " +
                                        cfg_.api_key_env);
            }
            if (res->status == 429 || res->status >= 500) {
                last_error = "endpoint returned HTTP " + std::to_string(res->status);
                continue;
            }
            if (res->status != 200) {
                throw EndpointError(EndpointError::Kind::protocol,
                                    "endpoint returned HTTP " +
                                        std::to_string(res->status));
            }
            return parse_reply(res->body);
        }
        throw EndpointError(EndpointError::Kind::transport,
                            "endpoint unreachable after " +
                                std::to_string(std::max(1, cfg_.max_retries)) +
                                " attempts: " + last_error);
    }

    static Message parse_reply(const std::string &text) {
        const auto doc = json::parse(text, nullptr, false);
        if (doc.is_discarded() || !doc.contains("choices") ||
            !doc.at("choices").is_array() || doc.at("choices").empty()) {
            throw EndpointError(EndpointError::Kind::protocol,
                                "endpoint reply has no choices");
        }
        const auto &msg = doc.at("choices").at(0).value("message", json::object());
        Message m;
        m.role = "assistant";
        if (msg.contains("content") && msg.at("content").is_string()) {
            m.content = msg.at("content").get<std::string>();
        }
        if (msg.contains("tool_calls") && msg.at("tool_calls").is_array() &&
            !msg.at("tool_calls").empty()) {
            const auto &tc = msg.at("tool_calls").at(0);
            const auto &fn = tc.value("function", json::object());
            ToolCall call;
            call.id = tc.value("id", std::string("call_0"));
            call.name = fn.value("name", std::string{});
            const auto &args = fn.value("arguments", json(""));
            call.arguments = args.is_string() ? args.get<std::string>() : args.dump();
            m.tool_call = std::move(call);
        }
        if (m.content.empty() && !m.tool_call) {
            throw EndpointError(EndpointError::Kind::protocol,
                                "endpoint reply has neither text nor a tool call");
        }
        if (doc.contains("usage") && doc.at("usage").is_object()) {
            m.usage = Usage{doc.at("usage").value("prompt_tokens", std::int64_t{0}),
                            doc.at("usage").value("completion_tokens", std::int64_t{0})};
        }
        return m;
    }

  private:
    EndpointConfig cfg_;
};

// ---------------------------------------------------------------------------
// The loop
// ---------------------------------------------------------------------------

namespace agent_detail {

inline bool has_done_line(const std::string &text) {
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        const auto start = line.find_first_not_of(" \t");
        if (start != std::string::npos && line.compare(start, 5, "DONE:") == 0) {
            return true;
        }
    }
    return false;
}

inline std::size_t message_size(const Message &m) {
    return m.content.size() + (m.tool_call ? m.tool_call->arguments.size() : 0);
}

/// Drops the oldest turns after the system prompt and task until the total
/// fits. A tool message is always dropped with its assistant call.
inline std::size_t fit_context(std::vector<Message> &history, std::size_t budget) {
    auto total = [&] {
        std::size_t s = 0;
        for (const auto &m : history) s += message_size(m);
        return s;
    };
    std::size_t dropped = 0;
    const std::size_t keep_head = std::min<std::size_t>(2, history.size());
    while (total() > budget && history.size() > keep_head + 1) {
        auto first = history.begin() + static_cast<std::ptrdiff_t>(keep_head);
        auto last = first + 1;
        if (first->role == "assistant" && first->tool_call && last != history.end() &&
            last->role == "tool") {
            ++last;
        }
        dropped += static_cast<std::size_t>(last - first);
        history.erase(first, last);
    }
    return dropped;
}

} // namespace agent_detail

/**
 * Runs the design loop until the budget is used, the assistant writes a
 * DONE: line, or the run is interrupted. A successful tool execution uses
 * one unit of budget; failed attempts are free until the repair limit is
 * passed, at which point the failure uses one unit and the count resets.
 */
inline void run_agent_loop(RunControl &run, ChatEndpoint &endpoint) {
    auto &log = *run.log();
    const RunConfig &cfg = log.config();
    const auto tools = std::vector<ToolSchema>{tool_schema(cfg.variant)};

    log.append("run_started", {{"run_id", log.id()},
                               {"config", to_json(cfg)},
                               {"master_seed", cfg.master_seed},
                               {"prompt_version", kPromptVersion},
                               {"tools", json::array({tools[0].to_function()})}});
    log.set_status(RunStatus::running);

    std::vector<Message> history;
    auto push = [&](Message m) {
        log.append("message", to_json(m));
        history.push_back(std::move(m));
    };
    push({"system", system_prompt(cfg.variant), std::nullopt, {}, std::nullopt});
    push({"user", cfg.prompt.empty() ? default_task(cfg.variant, cfg.budget) : cfg.prompt,
          std::nullopt, {}, std::nullopt});

    int used = 0;
    int failures = 0;
    int index = 0;
    auto deliver_steering = [&] {
        for (auto &text : run.drain()) {
            log.append("steering", {{"text", text}, {"after_iteration", index}});
            push({"user", std::move(text), std::nullopt, {}, std::nullopt});
        }
    };

    try {
        while (used < cfg.budget) {
            if (run.interrupted()) {
                log.set_status(RunStatus::aborted, "interrupted");
                return;
            }
            deliver_steering();
            auto visible = history;
            if (const auto dropped =
                    agent_detail::fit_context(visible, cfg.context_budget_chars)) {
                log.append("truncation", {{"dropped_messages", dropped},
                                          {"kept_messages", visible.size()}});
            }
            Message reply = endpoint.complete(visible, tools);
            reply.role = "assistant";
            push(reply);

            if (!reply.tool_call) {
                if (agent_detail::has_done_line(reply.content)) {
                    log.set_status(RunStatus::agent_stopped);
                    return;
                }
                push({"user",
                      "Please continue by calling " + std::string(tool_name(cfg.variant)) +
                          ", or write a line starting with DONE: to finish.",
                      std::nullopt, {}, std::nullopt});
                if (++failures > cfg.max_repair_attempts) {
                    ++used;
                    failures = 0;
                }
                continue;
            }

            IterationRecord rec;
            rec.index = ++index;
            rec.rationale = reply.content;
            rec.tool = reply.tool_call->name;
            rec.arguments = reply.tool_call->arguments;
            rec.repair_attempt = failures;
            rec.started_at = utc_timestamp();
            std::string tool_text;
            try {
                const auto args = json::parse(rec.arguments);
                rec.request = request_from_arguments(rec.tool, args);
                if (rec.request->variant != cfg.variant) {
                    throw ToolFailure({ToolError::Phase::validate,
                                       "this run only offers " +
                                           std::string(tool_name(cfg.variant)),
                                       rec.tool});
                }
                const auto outcome = execute_tool_request(*rec.request, cfg.master_seed,
                                                          run.interrupt_flag());
                if (const auto *r = std::get_if<ToolResult>(&outcome)) {
                    rec.result = *r;
                } else {
                    rec.error = std::get<ToolError>(outcome);
                }
            } catch (const json::exception &e) {
                rec.error = ToolError{ToolError::Phase::parse,
                                      std::string("tool arguments are not valid JSON: ") +
                                          e.what(),
                                      {}};
            } catch (const ToolFailure &f) {
                rec.error = f.error;
            }
            rec.finished_at = utc_timestamp();
            if (rec.result) {
                rec.counted = true;
                ++used;
                failures = 0;
                tool_text = to_json(*rec.result).dump();
            } else {
                tool_text = rec.error->to_text();
                if (++failures > cfg.max_repair_attempts) {
                    rec.counted = true;
                    ++used;
                    failures = 0;
                }
            }
            log.append("iteration", to_json(rec));
            push({"tool", tool_text, std::nullopt, reply.tool_call->id, std::nullopt});

            if (run.interrupted()) {
                log.set_status(RunStatus::aborted, "interrupted");
                return;
            }
            if (auto it = cfg.scheduled_steering.find(index);
                it != cfg.scheduled_steering.end()) {
                run.enqueue(it->second);
            }
            if (used >= cfg.budget) {
                break;
            }
            if (cfg.wait_for_steering) {
                log.set_status(RunStatus::waiting_steering);
                run.wait(std::chrono::milliseconds(-1));
                if (!run.interrupted()) log.set_status(RunStatus::running);
            } else if (cfg.steering_window_ms > 0) {
                run.wait(std::chrono::milliseconds(cfg.steering_window_ms));
            }
        }
        log.set_status(RunStatus::budget_exhausted);
    } catch (const EndpointError &e) {
        log.append("error", {{"message", e.what()}});
        log.set_status(RunStatus::aborted, e.what());
    } catch (const std::exception &e) {
        log.append("error", {{"message", e.what()}});
        log.set_status(RunStatus::aborted, e.what());
    }
}

// ---------------------------------------------------------------------------
// Replay and trajectories
// ---------------------------------------------------------------------------

struct ReplayReport {
    std::size_t compared = 0;
    std::vector<std::string> mismatches;
    [[nodiscard]] bool ok() const { return mismatches.empty(); }
};

/// Re-executes every logged tool call with the run's seed and compares
/// all metrics except wall time.
inline ReplayReport verify_replay(const RunLog &log) {
    ReplayReport rep;
    const auto seed = log.config().master_seed;
    for (const auto &rec : log.iterations()) {
        ++rep.compared;
        const auto tag = "iteration " + std::to_string(rec.index) + ": ";
        ToolOutcome fresh;
        try {
            const auto req = request_from_arguments(rec.tool, json::parse(rec.arguments));
            fresh = execute_tool_request(req, seed);
        } catch (const json::exception &e) {
            fresh = ToolError{ToolError::Phase::parse,
                              std::string("tool arguments are not valid JSON: ") +
                                  e.what(),
                              {}};
        } catch (const ToolFailure &f) {
            fresh = f.error;
        }
        if (const auto *r = std::get_if<ToolResult>(&fresh)) {
            if (!rec.result) {
                rep.mismatches.push_back(tag + "logged an error, replay succeeded");
            } else if (!same_metrics(*r, *rec.result)) {
                rep.mismatches.push_back(tag + "metrics differ (" +
                                         to_json(*rec.result).dump() + " vs " +
                                         to_json(*r).dump() + ")");
            }
        } else {
            const auto &e = std::get<ToolError>(fresh);
            if (!rec.error) {
                rep.mismatches.push_back(tag + "logged a result, replay failed: " +
                                         e.to_text());
            } else if (rec.error->phase == ToolError::Phase::validate &&
                       rec.error->message != e.message) {
                rep.mismatches.push_back(tag + "error text differs");
            } else if (rec.error->phase != e.phase) {
                rep.mismatches.push_back(tag + "error phase differs");
            }
        }
    }
    return rep;
}

/// One CSV row per iteration: the RMSE-vs-iteration and RMSE-vs-parameter
/// series, with steering boundaries.
inline std::string trajectory_csv(const RunLog &log) {
    std::set<int> steered_after;
    for (const auto &e : log.events_since(0)) {
        if (e.value("type", "") == "steering") {
            steered_after.insert(e.at("data").value("after_iteration", 0));
        }
    }
    std::ostringstream out;
    out << "iteration,status,test_RMSE,n_trainable_params_VQC,n_gates_in_VQC,"
           "circuit_depth,n_trainable_params_total,epochs,steering_before\n";
    out.precision(17);
    for (const auto &r : log.iterations()) {
        out << r.index << ',' << (r.result ? "ok" : "error") << ',';
        if (r.result) {
            out << r.result->test_RMSE << ',' << r.result->n_trainable_params_VQC
                << ',' << r.result->n_gates_in_VQC << ',' << r.result->circuit_depth
                << ',' << r.result->n_trainable_params_total;
        } else {
            out << ",,,,";
        }
        out << ',' << (r.request ? std::to_string(r.request->epochs) : "") << ','
            << (steered_after.count(r.index - 1) != 0 ? 1 : 0) << '\n';
    }
    return out.str();
}

} // namespace vqclab
