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
 * The three training tools offered to the designing agent: request and
 * result records, the shared training loop, and error capture.
 */
#pragma once

#include "architectures.hpp"
#include "circuit_ir.hpp"
#include "dataset.hpp"
#include "tensor_nn.hpp"

#include <json.hpp>

#include <atomic>
#include <chrono>
#include <cmath>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace vqclab {

inline constexpr std::size_t kBatchSize = 16;

struct ToolRequest {
    Architecture variant = Architecture::simple;
    /// Circuit document text (JSON).
    std::string circuit;
    std::optional<std::vector<std::size_t>> weights_shape;
    std::optional<std::size_t> q_enc_size;
    std::optional<std::size_t> q_out_size;
    std::optional<std::size_t> kernel_size;
    std::optional<std::size_t> stride;
    std::optional<std::size_t> vqc_output_dim;
    int epochs = 1;
};

struct ToolResult {
    double test_RMSE = 0.0;
    std::vector<double> val_RMSE_history;
    double train_RMSE_last_batch = 0.0;
    std::size_t n_gates_in_VQC = 0;
    std::size_t n_trainable_params_total = 0;
    std::size_t n_trainable_params_VQC = 0;
    std::size_t circuit_depth = 0;
    /// Learning rate used in each epoch.
    std::vector<double> lr_history;
    std::vector<std::string> warnings;
    double wall_time = 0.0;  // seconds; excluded from replay comparison
};

struct ToolError {
    enum class Phase { parse, validate, build, train };
    Phase phase = Phase::validate;
    std::string message;
    std::string construct;

    /// The exact text handed back to the agent.
    [[nodiscard]] std::string to_text() const {
        std::string s = std::string("Error (") + phase_name(phase) + "): " + message;
        if (!construct.empty()) {
            s += "\nOffending construct: " + construct;
        }
        return s;
    }

    static const char *phase_name(Phase p) {
        switch (p) {
        case Phase::parse: return "parse";
        case Phase::validate: return "validate";
        case Phase::build: return "build";
        case Phase::train: return "train";
        }
        return "?";
    }
};

using ToolOutcome = std::variant<ToolResult, ToolError>;

/// Thrown inside the training stages; caught by execute_tool_request.
struct ToolFailure : std::exception {
    ToolError error;
    explicit ToolFailure(ToolError e) : error(std::move(e)) {}
    [[nodiscard]] const char *what() const noexcept override {
        return error.message.c_str();
    }
};

// ---------------------------------------------------------------------------
// JSON
// ---------------------------------------------------------------------------

inline const char *tool_name(Architecture a) {
    switch (a) {
    case Architecture::simple: return "train_simple_qnn";
    case Architecture::quanv: return "train_quanv_nn";
    case Architecture::full_quantum: return "train_full_quantum_qnn";
    }
    return "?";
}

inline std::optional<Architecture> architecture_from_tool(std::string_view name) {
    for (auto a : {Architecture::simple, Architecture::quanv,
                   Architecture::full_quantum}) {
        if (name == tool_name(a)) {
            return a;
        }
    }
    return std::nullopt;
}

inline std::optional<Architecture> architecture_from_name(std::string_view name) {
    if (name == "simple") return Architecture::simple;
    if (name == "quanv") return Architecture::quanv;
    if (name == "full" || name == "full_quantum") return Architecture::full_quantum;
    return std::nullopt;
}

inline nlohmann::json to_json(const ToolResult &r) {
    return {{"test_RMSE", r.test_RMSE},
            {"val_RMSE_history", r.val_RMSE_history},
            {"train_RMSE_last_batch", r.train_RMSE_last_batch},
            {"n_gates_in_VQC", r.n_gates_in_VQC},
            {"n_trainable_params_total", r.n_trainable_params_total},
            {"n_trainable_params_VQC", r.n_trainable_params_VQC},
            {"circuit_depth", r.circuit_depth},
            {"lr_history", r.lr_history},
            {"warnings", r.warnings},
            {"wall_time", r.wall_time}};
}

inline ToolResult tool_result_from_json(const nlohmann::json &j) {
    ToolResult r;
    r.test_RMSE = j.at("test_RMSE").get<double>();
    r.val_RMSE_history = j.at("val_RMSE_history").get<std::vector<double>>();
    r.train_RMSE_last_batch = j.at("train_RMSE_last_batch").get<double>();
    r.n_gates_in_VQC = j.at("n_gates_in_VQC").get<std::size_t>();
    r.n_trainable_params_total = j.at("n_trainable_params_total").get<std::size_t>();
    r.n_trainable_params_VQC = j.at("n_trainable_params_VQC").get<std::size_t>();
    r.circuit_depth = j.value("circuit_depth", std::size_t{0});
    r.lr_history = j.value("lr_history", std::vector<double>{});
    r.warnings = j.value("warnings", std::vector<std::string>{});
    r.wall_time = j.value("wall_time", 0.0);
    return r;
}

/// Metric equality ignoring wall time.
inline bool same_metrics(const ToolResult &a, const ToolResult &b) {
    return a.test_RMSE == b.test_RMSE && a.val_RMSE_history == b.val_RMSE_history &&
           a.train_RMSE_last_batch == b.train_RMSE_last_batch &&
           a.n_gates_in_VQC == b.n_gates_in_VQC &&
           a.n_trainable_params_total == b.n_trainable_params_total &&
           a.n_trainable_params_VQC == b.n_trainable_params_VQC &&
           a.circuit_depth == b.circuit_depth && a.lr_history == b.lr_history;
}

inline nlohmann::json to_json(const ToolError &e) {
    nlohmann::json j{{"phase", ToolError::phase_name(e.phase)},
                     {"message", e.message}};
    if (!e.construct.empty()) {
        j["construct"] = e.construct;
    }
    return j;
}

inline ToolError tool_error_from_json(const nlohmann::json &j) {
    ToolError e;
    const auto p = j.at("phase").get<std::string>();
    e.phase = p == "parse"      ? ToolError::Phase::parse
              : p == "build"    ? ToolError::Phase::build
              : p == "train"    ? ToolError::Phase::train
                                : ToolError::Phase::validate;
    e.message = j.at("message").get<std::string>();
    e.construct = j.value("construct", std::string{});
    return e;
}

/// Tool-call arguments as the agent writes them.
inline nlohmann::json to_arguments(const ToolRequest &r) {
    nlohmann::json j;
    try {
        j["VQC_circuit"] = nlohmann::json::parse(r.circuit);
    } catch (const nlohmann::json::exception &) {
        j["VQC_circuit"] = r.circuit;
    }
    if (r.weights_shape) j["VQC_weights_shape"] = *r.weights_shape;
    if (r.q_enc_size) j["q_enc_size"] = *r.q_enc_size;
    if (r.q_out_size) j["q_out_size"] = *r.q_out_size;
    if (r.kernel_size) j["kernel_size"] = *r.kernel_size;
    if (r.stride) j["stride"] = *r.stride;
    if (r.vqc_output_dim) j["VQC_output_dim"] = *r.vqc_output_dim;
    j["epochs"] = r.epochs;
    return j;
}

inline nlohmann::json to_json(const ToolRequest &r) {
    auto j = to_arguments(r);
    j["variant"] = architecture_name(r.variant);
    return j;
}

namespace tool_detail {

[[noreturn]] inline void bad_argument(const std::string &msg,
                                      const std::string &construct = {}) {
    throw ToolFailure({ToolError::Phase::validate, msg, construct});
}

inline std::optional<std::size_t> count_field(const nlohmann::json &args,
                                              const char *key) {
    if (!args.contains(key) || args.at(key).is_null()) {
        return std::nullopt;
    }
    const auto &v = args.at(key);
    if (!v.is_number_integer() || v.get<std::int64_t>() < 1) {
        bad_argument(std::string("'") + key + "' must be a positive integer, got " +
                         v.dump(),
                     key);
    }
    return v.get<std::size_t>();
}

} // namespace tool_detail

/**
 * Decodes tool-call arguments. Throws ToolFailure (validate) for unknown
 * tools, missing or extra fields, and non-positive counts.
 */
inline ToolRequest request_from_arguments(std::string_view tool,
                                          const nlohmann::json &args) {
    using tool_detail::bad_argument;
    using tool_detail::count_field;
    const auto variant = architecture_from_tool(tool);
    if (!variant) {
        bad_argument("unknown tool '" + std::string(tool) +
                         "'; available tools are train_simple_qnn, "
                         "train_quanv_nn, train_full_quantum_qnn",
                     std::string(tool));
    }
    if (!args.is_object()) {
        bad_argument("tool arguments must be an object");
    }
    std::vector<std::string> allowed{"VQC_circuit", "VQC_weights_shape", "epochs"};
    std::vector<std::string> required{"VQC_circuit", "epochs"};
    switch (*variant) {
    case Architecture::simple:
        allowed.insert(allowed.end(), {"q_enc_size", "q_out_size"});
        required.insert(required.end(), {"q_enc_size", "q_out_size"});
        break;
    case Architecture::quanv:
        allowed.insert(allowed.end(), {"kernel_size", "stride", "VQC_output_dim"});
        required.insert(required.end(), {"kernel_size", "stride", "VQC_output_dim"});
        break;
    case Architecture::full_quantum:
        allowed.insert(allowed.end(), {"q_out_size"});
        required.insert(required.end(), {"q_out_size"});
        break;
    }
    for (const auto &[key, _] : args.items()) {
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            bad_argument("unexpected argument '" + key + "' for " +
                             std::string(tool),
                         key);
        }
    }
    for (const auto &key : required) {
        if (!args.contains(key)) {
            bad_argument("missing argument '" + key + "' for " + std::string(tool),
                         key);
        }
    }
    ToolRequest r;
    r.variant = *variant;
    const auto &c = args.at("VQC_circuit");
    r.circuit = c.is_string() ? c.get<std::string>() : c.dump();
    if (args.contains("VQC_weights_shape") && !args.at("VQC_weights_shape").is_null()) {
        const auto &s = args.at("VQC_weights_shape");
        if (!s.is_array()) {
            bad_argument("'VQC_weights_shape' must be a list of positive integers",
                         s.dump());
        }
        std::vector<std::size_t> shape;
        for (const auto &d : s) {
            if (!d.is_number_integer() || d.get<std::int64_t>() < 1) {
                bad_argument("'VQC_weights_shape' must be a list of positive "
                             "integers",
                             s.dump());
            }
            shape.push_back(d.get<std::size_t>());
        }
        r.weights_shape = std::move(shape);
    }
    r.q_enc_size = count_field(args, "q_enc_size");
    r.q_out_size = count_field(args, "q_out_size");
    r.kernel_size = count_field(args, "kernel_size");
    r.stride = count_field(args, "stride");
    r.vqc_output_dim = count_field(args, "VQC_output_dim");
    const auto epochs = count_field(args, "epochs");
    if (!epochs) {
        bad_argument("missing argument 'epochs'", "epochs");
    }
    if (*epochs > 1000) {
        bad_argument("'epochs' must be at most 1000", "epochs");
    }
    r.epochs = static_cast<int>(*epochs);
    return r;
}

inline ToolRequest tool_request_from_json(const nlohmann::json &j) {
    const auto variant = architecture_from_name(j.at("variant").get<std::string>());
    auto args = j;
    args.erase("variant");
    return request_from_arguments(tool_name(variant.value_or(Architecture::simple)),
                                  args);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/**
 * Trains for `epochs` passes over the shuffled training set in minibatches
 * of 16 with MSE loss and AdamW, records validation RMSE after every epoch
 * and evaluates the test set once at the end. The shuffle of epoch e is
 * seeded from (seed, e).
 */
inline ToolResult run_training(Model &model, const DatasetSplit &data,
                               int epochs, std::uint64_t seed,
                               const std::atomic<bool> *cancel = nullptr,
                               AdamWConfig optim = {}) {
    const auto started = std::chrono::steady_clock::now();
    ToolResult result;
    const auto report = model.param_report();
    result.n_gates_in_VQC = report.n_gates_in_VQC;
    result.n_trainable_params_total = report.n_trainable_params_total;
    result.n_trainable_params_VQC = report.n_trainable_params_VQC;
    result.circuit_depth = report.circuit_depth;
    result.warnings = model.circuit().warnings;

    auto targets_of = [](std::span<const Sample> s) {
        std::vector<double> t;
        t.reserve(s.size());
        for (const auto &x : s) {
            t.push_back(x.target);
        }
        return t;
    };
    const auto val_targets = targets_of(data.val);

    AdamW opt(model.parameters(), optim);
    std::vector<std::size_t> order(data.train.size());
    std::vector<Sample> batch;
    std::vector<double> batch_targets;
    for (int epoch = 0; epoch < epochs; ++epoch) {
        result.lr_history.push_back(learning_rate(opt.config(), epoch));
        std::iota(order.begin(), order.end(), std::size_t{0});
        Rng shuffle(derive_seed(seed, 0x5f, static_cast<std::uint64_t>(epoch)));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[shuffle.below(i)]);
        }
        std::size_t batch_index = 0;
        for (std::size_t start = 0; start < order.size();
             start += kBatchSize, ++batch_index) {
            if (cancel != nullptr && cancel->load()) {
                throw ToolFailure({ToolError::Phase::train,
                                   "tool execution was interrupted", {}});
            }
            const std::size_t end = std::min(order.size(), start + kBatchSize);
            batch.clear();
            batch_targets.clear();
            for (std::size_t k = start; k < end; ++k) {
                batch.push_back(data.train[order[k]]);
                batch_targets.push_back(data.train[order[k]].target);
            }
            Tape tape;
            const Var pred = model.forward(tape, Model::features_of(batch));
            const Var loss = nn::mse_loss(tape, pred, batch_targets);
            const double loss_value = tape.value(loss)[0];
            if (!std::isfinite(loss_value)) {
                throw ToolFailure(
                    {ToolError::Phase::train,
                     "training loss became non-finite at epoch " +
                         std::to_string(epoch + 1) + ", batch " +
                         std::to_string(batch_index + 1),
                     {}});
            }
            opt.zero_grad();
            tape.backward(loss);
            opt.step(epoch);
            result.train_RMSE_last_batch = std::sqrt(loss_value);
        }
        const auto val_pred = model.predict(data.val);
        result.val_RMSE_history.push_back(rmse(val_pred, val_targets));
    }
    const auto test_pred = model.predict(data.test);
    result.test_RMSE = rmse(test_pred, targets_of(data.test));
    if (!std::isfinite(result.test_RMSE)) {
        throw ToolFailure({ToolError::Phase::train, "test RMSE is non-finite", {}});
    }
    result.wall_time = std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - started)
                           .count();
    return result;
}

/// Parses, validates, builds the model from a request (no training).
inline std::unique_ptr<Model> build_from_request(const ToolRequest &req,
                                                 std::uint64_t master_seed) {
    CircuitIR ir;
    try {
        ir = parse_circuit(req.circuit);
    } catch (const CircuitError &e) {
        const auto phase = e.phase() == CircuitError::Phase::parse
                               ? ToolError::Phase::parse
                               : ToolError::Phase::validate;
        throw ToolFailure({phase, e.what(), e.construct()});
    }
    if (req.weights_shape) {
        if (ir.weights_shape && *ir.weights_shape != *req.weights_shape) {
            throw ToolFailure({ToolError::Phase::validate,
                               "VQC_weights_shape " +
                                   Tensor::shape_string(*req.weights_shape) +
                                   " disagrees with the circuit's weights_shape " +
                                   Tensor::shape_string(*ir.weights_shape),
                               "VQC_weights_shape"});
        }
        ir.weights_shape = req.weights_shape;
    }
    if (!ir.weights_shape) {
        throw ToolFailure({ToolError::Phase::validate,
                           "no weights shape given; set VQC_weights_shape",
                           "VQC_weights_shape"});
    }

    ModelConfig config;
    auto need = [](const std::optional<std::size_t> &v, const char *name) {
        if (!v) {
            throw ToolFailure({ToolError::Phase::validate,
                               std::string("missing argument '") + name + "'",
                               name});
        }
        return *v;
    };
    switch (req.variant) {
    case Architecture::simple:
        config = SimpleQNNConfig{need(req.q_enc_size, "q_enc_size"),
                                 need(req.q_out_size, "q_out_size"), ir};
        break;
    case Architecture::quanv:
        config = QuanvConfig{need(req.kernel_size, "kernel_size"),
                             need(req.stride, "stride"),
                             need(req.vqc_output_dim, "VQC_output_dim"), ir};
        break;
    case Architecture::full_quantum:
        config = FullQuantumConfig{need(req.q_out_size, "q_out_size"), ir};
        break;
    }
    try {
        return build_model(config, derive_seed(master_seed, 0x0de1));
    } catch (const CircuitError &e) {
        throw ToolFailure({ToolError::Phase::validate, e.what(), e.construct()});
    } catch (const ModelError &e) {
        throw ToolFailure({ToolError::Phase::validate, e.what(), {}});
    } catch (const std::exception &e) {
        throw ToolFailure({ToolError::Phase::build, e.what(), {}});
    }
}

/**
 * parse -> unroll/validate -> build -> train. The first failing stage
 * short-circuits into a ToolError; nothing escapes as an exception.
 */
inline ToolOutcome execute_tool_request(const ToolRequest &req,
                                        std::uint64_t master_seed,
                                        const std::atomic<bool> *cancel = nullptr) {
    try {
        if (req.epochs < 1) {
            throw ToolFailure({ToolError::Phase::validate,
                               "epochs must be at least 1", "epochs"});
        }
        auto model = build_from_request(req, master_seed);
        const auto data = generate_splits(master_seed);
        try {
            return run_training(*model, data, req.epochs,
                                derive_seed(master_seed, 0x7a1), cancel);
        } catch (const ToolFailure &) {
            throw;
        } catch (const std::exception &e) {
            throw ToolFailure({ToolError::Phase::train, e.what(), {}});
        }
    } catch (const ToolFailure &f) {
        return f.error;
    }
}

} // namespace vqclab
