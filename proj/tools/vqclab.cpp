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

// Command-line front end: gen-data, train, agent, serve, render, trajectory,
// replay.

#include "vqclab/service.hpp"

#include <CLI11.hpp>

#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

namespace {

using namespace vqclab;

std::string read_file(const std::string &path) {
    std::ifstream in(path);
    if (!in) {
        throw std::runtime_error("cannot read " + path);
    }
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::vector<std::size_t> parse_shape(const std::string &text) {
    std::vector<std::size_t> shape;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        shape.push_back(static_cast<std::size_t>(std::stoul(item)));
    }
    return shape;
}

int gen_data(std::uint64_t seed, const std::string &out_dir) {
    std::filesystem::create_directories(out_dir);
    const auto d = generate_splits(seed);
    const std::pair<const char *, const std::vector<Sample> *> splits[] = {
        {"train", &d.train}, {"val", &d.val}, {"test", &d.test}};
    for (const auto &[name, samples] : splits) {
        std::ofstream out(std::filesystem::path(out_dir) / (std::string(name) + ".tsv"));
        out << "# vqclab gaussian-peak split=" << name << " seed=" << seed
            << " rows=" << samples->size()
            << " columns: mu, then the 21 min-max normalized samples at x = j/20\n";
        out << "mu";
        for (std::size_t j = 0; j < kSampleLength; ++j) out << "\tf" << j;
        out << '\n';
        out.precision(17);
        for (const auto &s : *samples) {
            out << s.target;
            for (double v : s.features) out << '\t' << v;
            out << '\n';
        }
    }
    std::cout << "wrote " << out_dir << "/{train,val,test}.tsv (seed " << seed << ")\n";
    return 0;
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"vqclab: agent-driven variational circuit design lab"};
    app.require_subcommand(1);

    std::uint64_t seed = 42;

    auto *gen = app.add_subcommand("gen-data", "write the train/val/test splits as TSV");
    std::string gen_out = "data";
    gen->add_option("--seed", seed, "master seed");
    gen->add_option("--out", gen_out, "output directory");

    auto *train = app.add_subcommand("train", "run one training tool request");
    std::string variant = "simple";
    std::string circuit_path;
    std::string shape_text;
    std::size_t q_enc = 0, q_out = 0, kernel = 0, stride = 0, out_dim = 0;
    int epochs = 1;
    train->add_option("--variant", variant, "simple | quanv | full")
        ->check(CLI::IsMember({"simple", "quanv", "full"}));
    train->add_option("--circuit", circuit_path, "circuit document")
        ->required()
        ->check(CLI::ExistingFile);
    train->add_option("--weights-shape", shape_text, "e.g. 9,5");
    train->add_option("--q-enc", q_enc, "simple: circuit input size");
    train->add_option("--q-out", q_out, "simple/full: readout count");
    train->add_option("--kernel", kernel, "quanv: window length");
    train->add_option("--stride", stride, "quanv: window step");
    train->add_option("--output-dim", out_dim, "quanv: readout count");
    train->add_option("--epochs", epochs, "training epochs")->check(CLI::PositiveNumber);
    train->add_option("--seed", seed, "master seed");

    auto *agent = app.add_subcommand("agent", "run the design loop headless");
    std::string playlist_path;
    std::string data_dir = "vqclab-data";
    std::string endpoint_url;
    std::string model = "default";
    std::string api_key_env = "VQCLAB_API_KEY";
    std::string prompt;
    std::vector<std::string> steer;
    int budget = 10;
    agent->add_option("--variant", variant, "simple | quanv | full")
        ->check(CLI::IsMember({"simple", "quanv", "full"}));
    agent->add_option("--scripted", playlist_path, "scripted playlist instead of a model")
        ->check(CLI::ExistingFile);
    agent->add_option("--endpoint", endpoint_url, "chat-completions base URL");
    agent->add_option("--model", model, "model name sent to the endpoint");
    agent->add_option("--api-key-env", api_key_env, "environment variable with the key");
    agent->add_option("--budget", budget, "iteration budget")->check(CLI::PositiveNumber);
    agent->add_option("--seed", seed, "master seed");
    agent->add_option("--data-dir", data_dir, "run storage root");
    agent->add_option("--prompt", prompt, "initial user prompt");
    agent->add_option("--steer", steer, "scheduled steering as N:text (after iteration N)");

    auto *serve = app.add_subcommand("serve", "host runs over HTTP");
    std::string host = "127.0.0.1";
    int port = 8080;
    std::string token_env;
    serve->add_option("--host", host, "bind address");
    serve->add_option("--port", port, "port");
    serve->add_option("--data-dir", data_dir, "run storage root");
    serve->add_option("--token-env", token_env,
                      "environment variable holding a bearer token");

    auto *render = app.add_subcommand("render", "draw a circuit as ASCII");
    render->add_option("--circuit", circuit_path, "circuit document")
        ->required()
        ->check(CLI::ExistingFile);

    auto *traj = app.add_subcommand("trajectory", "CSV of RMSE vs iteration and VQC size");
    std::string run_dir;
    traj->add_option("--run", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);

    auto *replay = app.add_subcommand("replay", "re-execute a run's tool calls and compare");
    replay->add_option("--run", run_dir, "run directory")->required()->check(CLI::ExistingDirectory);

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            return gen_data(seed, gen_out);
        }
        if (render->parsed()) {
            const auto fc = unroll(parse_circuit(read_file(circuit_path)));
            std::cout << render_ascii(fc);
            const auto st = circuit_stats(fc);
            std::cout << "gates " << st.gate_count << ", depth " << st.depth
                      << ", parameters " << st.vqc_param_count << '\n';
            for (const auto &w : fc.warnings) std::cerr << "warning: " << w << '\n';
            return 0;
        }
        if (train->parsed()) {
            ToolRequest req;
            req.variant = *architecture_from_name(variant);
            req.circuit = read_file(circuit_path);
            if (!shape_text.empty()) req.weights_shape = parse_shape(shape_text);
            auto opt = [](std::size_t v) {
                return v == 0 ? std::nullopt : std::optional<std::size_t>(v);
            };
            req.q_enc_size = opt(q_enc);
            req.q_out_size = opt(q_out);
            req.kernel_size = opt(kernel);
            req.stride = opt(stride);
            req.vqc_output_dim = opt(out_dim);
            req.epochs = epochs;
            const auto outcome = execute_tool_request(req, seed);
            if (const auto *e = std::get_if<ToolError>(&outcome)) {
                std::cerr << e->to_text() << '\n';
                return 2;
            }
            std::cout << to_json(std::get<ToolResult>(outcome)).dump(2) << '\n';
            return 0;
        }
        if (traj->parsed()) {
            std::cout << trajectory_csv(*RunLog::load(run_dir));
            return 0;
        }
        if (replay->parsed()) {
            const auto log = RunLog::load(run_dir);
            const auto rep = verify_replay(*log);
            for (const auto &m : rep.mismatches) std::cout << "MISMATCH " << m << '\n';
            std::cout << "replayed " << rep.compared << " iterations: "
                      << (rep.ok() ? "identical" : "DIFFERENT") << '\n';
            return rep.ok() ? 0 : 1;
        }
        if (agent->parsed()) {
            json cfg_doc{{"variant", variant},
                         {"budget", budget},
                         {"master_seed", seed},
                         {"prompt", prompt}};
            std::unique_ptr<ChatEndpoint> endpoint;
            json playlist;
            if (!playlist_path.empty()) {
                playlist = json::parse(read_file(playlist_path));
                if (playlist.is_object() && playlist.contains("scheduled_steering")) {
                    cfg_doc["scheduled_steering"] = playlist.at("scheduled_steering");
                }
            }
            auto cfg = run_config_from_json(cfg_doc);
            cfg.endpoint.model = model;
            cfg.endpoint.api_key_env = api_key_env;
            if (!endpoint_url.empty()) cfg.endpoint.base_url = endpoint_url;
            for (const auto &s : steer) {
                const auto colon = s.find(':');
                if (colon == std::string::npos) {
                    throw CLI::ValidationError("--steer", "expected N:text");
                }
                cfg.scheduled_steering[std::stoi(s.substr(0, colon))] = s.substr(colon + 1);
            }
            if (!playlist.is_null()) {
                endpoint = std::make_unique<ScriptedEndpoint>(playlist);
            } else {
                endpoint = std::make_unique<HttpChatEndpoint>(cfg.endpoint);
            }
            const auto id = "run-" + std::to_string(std::chrono::duration_cast<std::chrono::milliseconds>(
                                                        std::chrono::system_clock::now().time_since_epoch())
                                                        .count());
            const auto dir = std::filesystem::path(data_dir) / "runs" / id;
            RunControl run(std::make_shared<RunLog>(id, cfg, dir));
            run_agent_loop(run, *endpoint);
            const auto &log = *run.log();
            for (const auto &r : log.iterations()) {
                std::cout << "iteration " << r.index << ": ";
                if (r.result) {
                    std::cout << "test_RMSE " << r.result->test_RMSE << ", VQC params "
                              << r.result->n_trainable_params_VQC << ", gates "
                              << r.result->n_gates_in_VQC << '\n';
                } else {
                    std::cout << "error (" << ToolError::phase_name(r.error->phase)
                              << ")\n";
                }
            }
            std::cout << "run " << id << " finished: " << status_name(log.status())
                      << "\nrun directory: " << dir.string() << '\n';
            return log.status() == RunStatus::aborted ? 1 : 0;
        }
        if (serve->parsed()) {
            ServiceOptions opts;
            opts.data_dir = data_dir;
            if (!token_env.empty()) {
                const char *t = std::getenv(token_env.c_str());
                if (t == nullptr || *t == '\0') {
                    std::cerr << "environment variable " << token_env << " is empty\n";
                    return 1;
                }
                opts.bearer_token = t;
            }
            Service service(opts);
            static Service *active = &service;
            std::signal(SIGINT, [](int) { active->server().stop(); });
            std::signal(SIGTERM, [](int) { active->server().stop(); });
            std::cout << "serving on http://" << host << ':' << port << '\n' << std::flush;
            if (!service.listen(host, port)) {
                std::cerr << "cannot listen on " << host << ':' << port << '\n';
                return 1;
            }
            service.stop();
            return 0;
        }
    } catch (const CircuitError &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
