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
 * HTTP service hosting agent runs.
 *
 *   GET  /health                  liveness
 *   GET  /schema                  tool schemas and event types
 *   POST /runs                    {"config": {...}, "playlist": [...]?}
 *   GET  /runs                    run summaries
 *   GET  /runs/{id}               summary, iterations, messages
 *   GET  /runs/{id}/events        server-sent events; id = event seq,
 *                                 resumes after Last-Event-ID or ?from=N
 *   POST /runs/{id}/message       {"text": ...}; Idempotency-Key header
 *   POST /runs/{id}/interrupt
 *   POST /runs/{id}/resume        ends a waiting_steering pause
 *
 * With a bearer token configured every route except /health requires
 * "Authorization: Bearer <token>".
 */
#pragma once

#include "agent.hpp"

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace vqclab {

using EndpointFactory =
    std::function<std::unique_ptr<ChatEndpoint>(const RunConfig &, const json &)>;

/// Scripted endpoint when the request carries a playlist, HTTP otherwise.
inline std::unique_ptr<ChatEndpoint> default_endpoint(const RunConfig &cfg,
                                                      const json &request) {
    if (request.contains("playlist")) {
        return std::make_unique<ScriptedEndpoint>(request.at("playlist"));
    }
    return std::make_unique<HttpChatEndpoint>(cfg.endpoint);
}

struct ServiceOptions {
    std::filesystem::path data_dir = "vqclab-data";
    std::string bearer_token;
    EndpointFactory endpoint_factory = default_endpoint;
    std::chrono::milliseconds keepalive{15000};
};

class Service {
  public:
    explicit Service(ServiceOptions opts) : opts_(std::move(opts)) {
        std::filesystem::create_directories(runs_dir());
        const auto probe = runs_dir() / ".write-probe";
        {
            std::ofstream out(probe);
            if (!out) {
                throw std::runtime_error("data directory " + opts_.data_dir.string() +
                                         " is not writable");
            }
        }
        std::filesystem::remove(probe);
        load_existing();
        routes();
    }

    Service(const Service &) = delete;
    Service &operator=(const Service &) = delete;

    ~Service() { stop(); }

    [[nodiscard]] std::filesystem::path runs_dir() const {
        return opts_.data_dir / "runs";
    }

    /// Starts a run on its own worker thread and returns its id.
    std::string create_run(const RunConfig &cfg, const json &request = json::object()) {
        auto endpoint = opts_.endpoint_factory(cfg, request);
        std::lock_guard lock(mu_);
        const auto id = fresh_id_locked();
        auto log = std::make_shared<RunLog>(id, cfg, runs_dir() / id);
        auto control = std::make_shared<RunControl>(log);
        runs_[id] = control;
        workers_.emplace_back([control, ep = std::shared_ptr<ChatEndpoint>(
                                            std::move(endpoint))] {
            run_agent_loop(*control, *ep);
        });
        return id;
    }

    [[nodiscard]] std::shared_ptr<RunControl> find(const std::string &id) const {
        std::lock_guard lock(mu_);
        const auto it = runs_.find(id);
        return it == runs_.end() ? nullptr : it->second;
    }

    [[nodiscard]] std::vector<std::string> run_ids() const {
        std::lock_guard lock(mu_);
        std::vector<std::string> ids;
        for (const auto &[id, _] : runs_) ids.push_back(id);
        return ids;
    }

    /// Binds and serves until stop(). Returns false if the port is taken.
    bool listen(const std::string &host, int port) {
        return server_.listen(host, port);
    }

    /// Binds to a free port, serves on a background thread, returns the port.
    int start_background(const std::string &host = "127.0.0.1") {
        const int port = server_.bind_to_any_port(host);
        if (port < 0) {
            throw std::runtime_error("could not bind " + host);
        }
        listener_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
        return port;
    }

    /// Interrupts every run, stops the server and joins all threads.
    void stop() {
        if (stopped_.exchange(true)) return;
        {
            std::lock_guard lock(mu_);
            for (auto &[_, run] : runs_) run->interrupt();
        }
        server_.stop();
        if (listener_.joinable()) listener_.join();
        std::vector<std::thread> workers;
        {
            std::lock_guard lock(mu_);
            workers.swap(workers_);
        }
        for (auto &w : workers) {
            if (w.joinable()) w.join();
        }
    }

    httplib::Server &server() { return server_; }

  private:
    void load_existing() {
        for (const auto &entry : std::filesystem::directory_iterator(runs_dir())) {
            if (!entry.is_directory()) continue;
            try {
                auto log = RunLog::load(entry.path());
                runs_[log->id()] = std::make_shared<RunControl>(log);
            } catch (const std::exception &) {
                // Unreadable directories are skipped.
            }
        }
    }

    std::string fresh_id_locked() {
        for (;;) {
            const auto now = std::chrono::system_clock::now().time_since_epoch();
            const auto ms =
                std::chrono::duration_cast<std::chrono::milliseconds>(now).count();
            auto id = "run-" + std::to_string(ms) + "-" + std::to_string(counter_++);
            if (!runs_.contains(id) && !std::filesystem::exists(runs_dir() / id)) {
                return id;
            }
        }
    }

    static void send_json(httplib::Response &res, int status, const json &body) {
        res.status = status;
        res.set_content(body.dump(), "application/json");
    }

    static void send_error(httplib::Response &res, int status, const std::string &msg) {
        send_json(res, status, {{"error", msg}});
    }

    bool authorized(const httplib::Request &req) const {
        if (opts_.bearer_token.empty()) return true;
        return req.get_header_value("Authorization") == "Bearer " + opts_.bearer_token;
    }

    void routes() {
        server_.set_pre_routing_handler(
            [this](const httplib::Request &req, httplib::Response &res) {
                res.set_header("Access-Control-Allow-Origin", "*");
                res.set_header("Access-Control-Allow-Headers",
                               "Authorization, Content-Type, Idempotency-Key, "
                               "Last-Event-ID");
                if (req.method == "OPTIONS") {
                    res.status = 204;
                    return httplib::Server::HandlerResponse::Handled;
                }
                if (req.path != "/health" && !authorized(req)) {
                    send_error(res, 401, "missing or wrong bearer token");
                    return httplib::Server::HandlerResponse::Handled;
                }
                return httplib::Server::HandlerResponse::Unhandled;
            });

        server_.Get("/health", [](const httplib::Request &, httplib::Response &res) {
            send_json(res, 200, {{"status", "ok"}});
        });

        server_.Get("/schema", [](const httplib::Request &, httplib::Response &res) {
            json tools = json::array();
            for (auto a : {Architecture::simple, Architecture::quanv,
                           Architecture::full_quantum}) {
                tools.push_back(tool_schema(a).to_function());
            }
            send_json(res, 200,
                      {{"prompt_version", kPromptVersion},
                       {"tools", tools},
                       {"statuses", {"running", "waiting_steering", "agent_stopped",
                                     "budget_exhausted", "aborted"}},
                       {"event_types", {"run_started", "status", "message", "iteration",
                                        "steering", "truncation", "error"}}});
        });

        server_.Post("/runs", [this](const httplib::Request &req, httplib::Response &res) {
            const auto body = json::parse(req.body, nullptr, false);
            if (body.is_discarded() || !body.is_object()) {
                return send_error(res, 400, "request body must be a JSON object");
            }
            try {
                const auto cfg = run_config_from_json(body.value("config", json::object()));
                const auto id = create_run(cfg, body);
                send_json(res, 201, {{"run_id", id}});
            } catch (const std::exception &e) {
                send_error(res, 400, e.what());
            }
        });

        server_.Get("/runs", [this](const httplib::Request &, httplib::Response &res) {
            json out = json::array();
            for (const auto &id : run_ids()) {
                if (auto run = find(id)) out.push_back(run->log()->summary());
            }
            send_json(res, 200, out);
        });

        server_.Get(R"(/runs/([^/]+))",
                    [this](const httplib::Request &req, httplib::Response &res) {
                        const auto run = find(req.matches[1]);
                        if (!run) return send_error(res, 404, "unknown run");
                        const auto &log = *run->log();
                        json iters = json::array();
                        for (const auto &r : log.iterations()) iters.push_back(to_json(r));
                        json msgs = json::array();
                        for (const auto &m : log.messages()) msgs.push_back(to_json(m));
                        send_json(res, 200,
                                  {{"summary", log.summary()},
                                   {"config", to_json(log.config())},
                                   {"iterations", iters},
                                   {"messages", msgs}});
                    });

        server_.Get(R"(/runs/([^/]+)/events)",
                    [this](const httplib::Request &req, httplib::Response &res) {
                        stream_events(req, res);
                    });

        server_.Post(R"(/runs/([^/]+)/message)",
                     [this](const httplib::Request &req, httplib::Response &res) {
                         const auto run = find(req.matches[1]);
                         if (!run) return send_error(res, 404, "unknown run");
                         const auto body = json::parse(req.body, nullptr, false);
                         if (body.is_discarded() || !body.is_object() ||
                             !body.contains("text") || !body.at("text").is_string()) {
                             return send_error(res, 400,
                                               "body must be {\"text\": \"...\"}");
                         }
                         try {
                             const auto token = inject_user_steering(
                                 *run, body.at("text").get<std::string>(),
                                 req.get_header_value("Idempotency-Key"));
                             send_json(res, 202, {{"queued", token}});
                         } catch (const std::invalid_argument &e) {
                             send_error(res, 400, e.what());
                         } catch (const std::logic_error &e) {
                             send_error(res, 409, e.what());
                         }
                     });

        server_.Post(R"(/runs/([^/]+)/interrupt)",
                     [this](const httplib::Request &req, httplib::Response &res) {
                         const auto run = find(req.matches[1]);
                         if (!run) return send_error(res, 404, "unknown run");
                         run->interrupt();
                         send_json(res, 202, {{"interrupted", true}});
                     });

        server_.Post(R"(/runs/([^/]+)/resume)",
                     [this](const httplib::Request &req, httplib::Response &res) {
                         const auto run = find(req.matches[1]);
                         if (!run) return send_error(res, 404, "unknown run");
                         run->resume();
                         send_json(res, 202, {{"resumed", true}});
                     });
    }

    void stream_events(const httplib::Request &req, httplib::Response &res) {
        const auto run = find(req.matches[1]);
        if (!run) return send_error(res, 404, "unknown run");
        std::size_t from = 0;
        try {
            if (req.has_header("Last-Event-ID")) {
                from = std::stoul(req.get_header_value("Last-Event-ID")) + 1;
            } else if (req.has_param("from")) {
                from = std::stoul(req.get_param_value("from"));
            }
        } catch (const std::exception &) {
            return send_error(res, 400, "bad Last-Event-ID or from");
        }
        auto log = run->log();
        auto cursor = std::make_shared<std::size_t>(from);
        res.set_header("Cache-Control", "no-cache");
        res.set_chunked_content_provider(
            "text/event-stream",
            [this, log, cursor](std::size_t, httplib::DataSink &sink) {
                if (stopped_.load()) {
                    sink.done();
                    return true;
                }
                for (const auto &e : log->events_since(*cursor)) {
                    std::string frame = "id: " + std::to_string(e.at("seq").get<std::size_t>()) +
                                        "\nevent: " + e.at("type").get<std::string>() +
                                        "\ndata: " + e.dump() + "\n\n";
                    if (!sink.write(frame.data(), frame.size())) return false;
                    ++*cursor;
                }
                if (is_terminal(log->status()) && *cursor >= log->event_count()) {
                    sink.done();
                    return true;
                }
                if (!log->wait_for_events(*cursor, opts_.keepalive)) {
                    static constexpr char ping[] = ": keep-alive\n\n";
                    if (!sink.write(ping, sizeof ping - 1)) return false;
                }
                return true;
            });
    }

    ServiceOptions opts_;
    httplib::Server server_;
    mutable std::mutex mu_;
    std::map<std::string, std::shared_ptr<RunControl>> runs_;
    std::vector<std::thread> workers_;
    std::thread listener_;
    std::atomic<bool> stopped_{false};
    std::uint64_t counter_ = 0;
};

} // namespace vqclab
