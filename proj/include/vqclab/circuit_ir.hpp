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
 * Declarative circuit documents: parsing, loop unrolling, validation,
 * statistics and a text diagram.
 *
 * A document is a JSON object
 *
 *   {"n_qubits": 5, "weights_shape": [5],
 *    "body": [{"for": "i", "range": [0, 5],
 *              "body": [{"gate": "RY", "wires": ["i"], "angle": "inputs[i]"}]}],
 *    "measurements": [{"for": "i", "range": ["n_qubits"],
 *                      "body": [{"observable": "PauliZ", "wire": "i"}]}]}
 *
 * Index expressions see the loop variables in scope plus `n_qubits`.
 */
#pragma once

#include "expr.hpp"

#include <json.hpp>

#include <algorithm>
#include <array>
#include <cstdint>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

namespace vqclab {

enum class GateKind { H, X, RX, RY, RZ, ROT, CNOT, CZ };
enum class Observable { X, Y, Z };

inline constexpr int kMaxQubits = 12;
inline constexpr int kRecommendedMaxQubits = 9;
inline constexpr std::size_t kUnrollCap = 100000;

inline std::size_t wire_arity(GateKind k) {
    return (k == GateKind::CNOT || k == GateKind::CZ) ? 2 : 1;
}

inline std::size_t angle_arity(GateKind k) {
    switch (k) {
    case GateKind::RX:
    case GateKind::RY:
    case GateKind::RZ:
        return 1;
    case GateKind::ROT:
        return 3;
    default:
        return 0;
    }
}

inline const char *gate_name(GateKind k) {
    switch (k) {
    case GateKind::H: return "H";
    case GateKind::X: return "X";
    case GateKind::RX: return "RX";
    case GateKind::RY: return "RY";
    case GateKind::RZ: return "RZ";
    case GateKind::ROT: return "ROT";
    case GateKind::CNOT: return "CNOT";
    case GateKind::CZ: return "CZ";
    }
    return "?";
}

inline const char *observable_name(Observable o) {
    switch (o) {
    case Observable::X: return "PauliX";
    case Observable::Y: return "PauliY";
    case Observable::Z: return "PauliZ";
    }
    return "?";
}

/// Accepts the canonical names plus the common PennyLane spellings.
inline std::optional<GateKind> gate_from_name(std::string_view name) {
    static constexpr std::pair<std::string_view, GateKind> table[] = {
        {"H", GateKind::H},       {"Hadamard", GateKind::H},
        {"X", GateKind::X},       {"PauliX", GateKind::X},
        {"RX", GateKind::RX},     {"RY", GateKind::RY},
        {"RZ", GateKind::RZ},     {"ROT", GateKind::ROT},
        {"Rot", GateKind::ROT},   {"CNOT", GateKind::CNOT},
        {"CX", GateKind::CNOT},   {"CZ", GateKind::CZ},
    };
    for (const auto &[n, k] : table) {
        if (n == name) {
            return k;
        }
    }
    return std::nullopt;
}

inline std::optional<Observable> observable_from_name(std::string_view name) {
    if (name == "PauliX" || name == "X") return Observable::X;
    if (name == "PauliY" || name == "Y") return Observable::Y;
    if (name == "PauliZ" || name == "Z") return Observable::Z;
    return std::nullopt;
}

// ---------------------------------------------------------------------------
// Tree form
// ---------------------------------------------------------------------------

struct RangeSpec {
    ExprPtr start;
    ExprPtr stop;
    ExprPtr step;
};

struct GateNode {
    GateKind kind = GateKind::H;
    std::vector<ExprPtr> wires;
    std::vector<ExprPtr> angles;
};

struct BodyItem;

struct LoopNode {
    std::string variable;
    RangeSpec range;
    std::vector<BodyItem> body;
};

struct BodyItem {
    std::variant<GateNode, LoopNode> node;
};

struct MeasureNode {
    Observable observable = Observable::Z;
    ExprPtr wire;
};

struct MeasureItem;

struct MeasureLoop {
    std::string variable;
    RangeSpec range;
    std::vector<MeasureItem> body;
};

struct MeasureItem {
    std::variant<MeasureNode, MeasureLoop> node;
};

struct CircuitIR {
    int n_qubits = 0;
    /// Absent when the shape is supplied alongside the document instead.
    std::optional<std::vector<std::size_t>> weights_shape;
    std::vector<BodyItem> body;
    std::vector<MeasureItem> measurements;
};

// ---------------------------------------------------------------------------
// Flat form
// ---------------------------------------------------------------------------

/// A gate angle after loop substitution: a small straight-line program over
/// inputs and flattened weight indices. Node i only refers to nodes < i; the
/// last node is the result.
struct AngleProgram {
    enum class Op { constant, input, weight, neg, add, sub, mul, div };
    struct Node {
        Op op = Op::constant;
        double value = 0.0;
        std::size_t index = 0;  // input or flat weight index
        std::uint32_t lhs = 0;
        std::uint32_t rhs = 0;

        friend bool operator==(const Node &, const Node &) = default;
    };

    std::vector<Node> nodes;

    friend bool operator==(const AngleProgram &, const AngleProgram &) =
        default;

    [[nodiscard]] double evaluate(std::span<const double> inputs,
                                  std::span<const double> weights) const {
        if (nodes.size() == 1) {
            return leaf(nodes[0], inputs, weights);
        }
        std::vector<double> v(nodes.size());
        forward(inputs, weights, v);
        return v.back();
    }

    /// Adds upstream * d(angle)/d(x) into the input and weight gradients.
    void backpropagate(double upstream, std::span<const double> inputs,
                       std::span<const double> weights,
                       std::span<double> d_inputs,
                       std::span<double> d_weights) const {
        if (nodes.size() == 1) {
            const auto &n = nodes[0];
            if (n.op == Op::input) {
                d_inputs[n.index] += upstream;
            } else if (n.op == Op::weight) {
                d_weights[n.index] += upstream;
            }
            return;
        }
        std::vector<double> v(nodes.size());
        forward(inputs, weights, v);
        std::vector<double> adj(nodes.size(), 0.0);
        adj.back() = upstream;
        for (std::size_t i = nodes.size(); i-- > 0;) {
            const auto &n = nodes[i];
            const double g = adj[i];
            if (g == 0.0) {
                continue;
            }
            switch (n.op) {
            case Op::constant:
                break;
            case Op::input:
                d_inputs[n.index] += g;
                break;
            case Op::weight:
                d_weights[n.index] += g;
                break;
            case Op::neg:
                adj[n.lhs] -= g;
                break;
            case Op::add:
                adj[n.lhs] += g;
                adj[n.rhs] += g;
                break;
            case Op::sub:
                adj[n.lhs] += g;
                adj[n.rhs] -= g;
                break;
            case Op::mul:
                adj[n.lhs] += g * v[n.rhs];
                adj[n.rhs] += g * v[n.lhs];
                break;
            case Op::div:
                adj[n.lhs] += g / v[n.rhs];
                adj[n.rhs] -= g * v[n.lhs] / (v[n.rhs] * v[n.rhs]);
                break;
            }
        }
    }

    [[nodiscard]] bool references_input(std::size_t k) const {
        return std::any_of(nodes.begin(), nodes.end(), [&](const Node &n) {
            return n.op == Op::input && n.index == k;
        });
    }

  private:
    static double leaf(const Node &n, std::span<const double> inputs,
                       std::span<const double> weights) {
        switch (n.op) {
        case Op::input: return inputs[n.index];
        case Op::weight: return weights[n.index];
        default: return n.value;
        }
    }

    void forward(std::span<const double> inputs,
                 std::span<const double> weights,
                 std::span<double> v) const {
        for (std::size_t i = 0; i < nodes.size(); ++i) {
            const auto &n = nodes[i];
            switch (n.op) {
            case Op::constant:
            case Op::input:
            case Op::weight:
                v[i] = leaf(n, inputs, weights);
                break;
            case Op::neg: v[i] = -v[n.lhs]; break;
            case Op::add: v[i] = v[n.lhs] + v[n.rhs]; break;
            case Op::sub: v[i] = v[n.lhs] - v[n.rhs]; break;
            case Op::mul: v[i] = v[n.lhs] * v[n.rhs]; break;
            case Op::div: v[i] = v[n.lhs] / v[n.rhs]; break;
            }
        }
    }
};

struct FlatGate {
    GateKind kind = GateKind::H;
    std::array<int, 2> wires{0, 0};
    std::vector<AngleProgram> angles;

    [[nodiscard]] std::size_t n_wires() const { return wire_arity(kind); }
    friend bool operator==(const FlatGate &, const FlatGate &) = default;
};

struct Measurement {
    Observable observable = Observable::Z;
    int wire = 0;
    friend bool operator==(const Measurement &, const Measurement &) = default;
};

struct FlatCircuit {
    int n_qubits = 0;
    std::vector<std::size_t> weights_shape;
    std::size_t n_inputs = 0;
    std::vector<FlatGate> gates;
    std::vector<Measurement> measurements;
    std::vector<std::string> warnings;

    /// Number of trainable circuit parameters; an empty shape means none.
    [[nodiscard]] std::size_t n_weights() const {
        if (weights_shape.empty()) {
            return 0;
        }
        return std::accumulate(weights_shape.begin(), weights_shape.end(),
                               std::size_t{1}, std::multiplies<>());
    }

    friend bool operator==(const FlatCircuit &a, const FlatCircuit &b) {
        return a.n_qubits == b.n_qubits && a.weights_shape == b.weights_shape &&
               a.n_inputs == b.n_inputs && a.gates == b.gates &&
               a.measurements == b.measurements;
    }
};

struct CircuitStats {
    std::size_t gate_count = 0;
    std::size_t depth = 0;
    std::size_t vqc_param_count = 0;
};

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

namespace ir_detail {

using nlohmann::json;

[[noreturn]] inline void structure_error(const std::string &path,
                                         const std::string &what) {
    throw CircuitError(CircuitError::Phase::parse,
                       "invalid circuit document at " + path + ": " + what,
                       path);
}

inline ExprPtr parse_expr_value(const json &v, const std::string &path) {
    if (v.is_number_integer()) {
        return expr::make_int(v.get<std::int64_t>());
    }
    if (v.is_number_float()) {
        return expr::make_real(v.get<double>());
    }
    if (v.is_string()) {
        try {
            return expr::parse(v.get<std::string>());
        } catch (const CircuitError &e) {
            throw CircuitError(CircuitError::Phase::parse,
                               std::string(e.what()) + " (at " + path + ")",
                               e.construct());
        }
    }
    structure_error(path, "expected a number or an expression string");
}

inline void check_keys(const json &obj, const std::string &path,
                       std::initializer_list<std::string_view> allowed) {
    for (const auto &[key, _] : obj.items()) {
        if (key == "comment") {
            continue;
        }
        if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
            structure_error(path, "unknown key '" + key + "'");
        }
    }
}

inline bool is_comment(const json &obj) {
    return obj.is_object() && obj.size() == 1 && obj.contains("comment");
}

inline RangeSpec parse_range(const json &v, const std::string &path) {
    if (!v.is_array() || v.empty() || v.size() > 3) {
        structure_error(path, "range must be [stop], [start, stop] or "
                              "[start, stop, step]");
    }
    std::vector<ExprPtr> parts;
    for (std::size_t i = 0; i < v.size(); ++i) {
        parts.push_back(
            parse_expr_value(v[i], path + "[" + std::to_string(i) + "]"));
    }
    if (parts.size() == 1) {
        return {expr::make_int(0), parts[0], expr::make_int(1)};
    }
    if (parts.size() == 2) {
        return {parts[0], parts[1], expr::make_int(1)};
    }
    return {parts[0], parts[1], parts[2]};
}

inline std::string loop_variable(const json &obj, const std::string &path) {
    const auto &v = obj.at("for");
    if (!v.is_string() || v.get<std::string>().empty()) {
        structure_error(path, "'for' must name a loop variable");
    }
    const auto name = v.get<std::string>();
    if (!(std::isalpha(static_cast<unsigned char>(name[0])) || name[0] == '_') ||
        !std::all_of(name.begin(), name.end(), [](char c) {
            return std::isalnum(static_cast<unsigned char>(c)) || c == '_';
        })) {
        structure_error(path, "'" + name + "' is not a valid loop variable");
    }
    if (name == "pi" || name == "inputs" || name == "weights" ||
        name == "n_qubits" || name == "mod") {
        structure_error(path, "'" + name + "' is reserved");
    }
    return name;
}

inline std::vector<BodyItem> parse_body(const json &v, const std::string &path);

inline GateNode parse_gate(const json &obj, const std::string &path) {
    check_keys(obj, path, {"gate", "wires", "wire", "angle", "angles"});
    const auto &name_v = obj.at("gate");
    if (!name_v.is_string()) {
        structure_error(path, "'gate' must be a string");
    }
    const auto name = name_v.get<std::string>();
    const auto kind = gate_from_name(name);
    if (!kind) {
        std::string msg = "unknown gate '" + name +
                          "'; allowed gates are H, X, RX, RY, RZ, ROT, "
                          "CNOT, CZ";
        if (name.find("Layers") != std::string::npos ||
            name.find("Embedding") != std::string::npos) {
            msg += " (templates are not available; write the layer out "
                   "with loops)";
        }
        throw CircuitError(CircuitError::Phase::parse,
                           msg + " (at " + path + ")", name);
    }
    GateNode g;
    g.kind = *kind;

    const json *wires = nullptr;
    if (obj.contains("wires")) {
        wires = &obj.at("wires");
    } else if (obj.contains("wire")) {
        wires = &obj.at("wire");
    } else {
        structure_error(path, std::string(gate_name(g.kind)) +
                                  " needs 'wires'");
    }
    if (wires->is_array()) {
        for (std::size_t i = 0; i < wires->size(); ++i) {
            g.wires.push_back(parse_expr_value(
                (*wires)[i], path + ".wires[" + std::to_string(i) + "]"));
        }
    } else {
        g.wires.push_back(parse_expr_value(*wires, path + ".wires"));
    }
    if (g.wires.size() != wire_arity(g.kind)) {
        structure_error(path, std::string(gate_name(g.kind)) + " takes " +
                                  std::to_string(wire_arity(g.kind)) +
                                  " wire(s), got " +
                                  std::to_string(g.wires.size()));
    }

    if (obj.contains("angle") && obj.contains("angles")) {
        structure_error(path, "give either 'angle' or 'angles', not both");
    }
    if (obj.contains("angle")) {
        g.angles.push_back(parse_expr_value(obj.at("angle"), path + ".angle"));
    } else if (obj.contains("angles")) {
        const auto &a = obj.at("angles");
        if (!a.is_array()) {
            structure_error(path, "'angles' must be an array");
        }
        for (std::size_t i = 0; i < a.size(); ++i) {
            g.angles.push_back(parse_expr_value(
                a[i], path + ".angles[" + std::to_string(i) + "]"));
        }
    }
    if (g.angles.size() != angle_arity(g.kind)) {
        structure_error(path, std::string(gate_name(g.kind)) + " takes " +
                                  std::to_string(angle_arity(g.kind)) +
                                  " angle(s), got " +
                                  std::to_string(g.angles.size()));
    }
    return g;
}

inline std::vector<BodyItem> parse_body(const json &v, const std::string &path) {
    if (!v.is_array()) {
        structure_error(path, "expected an array of gates and loops");
    }
    std::vector<BodyItem> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto p = path + "[" + std::to_string(i) + "]";
        const auto &item = v[i];
        if (!item.is_object()) {
            structure_error(p, "expected an object");
        }
        if (is_comment(item)) {
            continue;
        }
        if (item.contains("for")) {
            check_keys(item, p, {"for", "range", "body"});
            if (!item.contains("range") || !item.contains("body")) {
                structure_error(p, "a loop needs 'for', 'range' and 'body'");
            }
            LoopNode loop;
            loop.variable = loop_variable(item, p);
            loop.range = parse_range(item.at("range"), p + ".range");
            loop.body = parse_body(item.at("body"), p + ".body");
            out.push_back({std::move(loop)});
        } else if (item.contains("gate")) {
            out.push_back({parse_gate(item, p)});
        } else {
            structure_error(p, "expected a gate (\"gate\") or a loop (\"for\")");
        }
    }
    return out;
}

inline std::vector<MeasureItem> parse_measurements(const json &v,
                                                   const std::string &path) {
    if (!v.is_array()) {
        structure_error(path, "expected an array of measurements");
    }
    std::vector<MeasureItem> out;
    for (std::size_t i = 0; i < v.size(); ++i) {
        const auto p = path + "[" + std::to_string(i) + "]";
        const auto &item = v[i];
        if (!item.is_object()) {
            structure_error(p, "expected an object");
        }
        if (is_comment(item)) {
            continue;
        }
        if (item.contains("for")) {
            check_keys(item, p, {"for", "range", "body"});
            if (!item.contains("range") || !item.contains("body")) {
                structure_error(p, "a loop needs 'for', 'range' and 'body'");
            }
            MeasureLoop loop;
            loop.variable = loop_variable(item, p);
            loop.range = parse_range(item.at("range"), p + ".range");
            loop.body = parse_measurements(item.at("body"), p + ".body");
            out.push_back({std::move(loop)});
            continue;
        }
        check_keys(item, p, {"observable", "wire", "wires"});
        if (!item.contains("observable") || !item.at("observable").is_string()) {
            structure_error(p, "a measurement needs an 'observable' string");
        }
        const auto name = item.at("observable").get<std::string>();
        const auto obs = observable_from_name(name);
        if (!obs) {
            throw CircuitError(CircuitError::Phase::parse,
                               "unknown observable '" + name +
                                   "'; allowed are PauliX, PauliY, PauliZ (at " +
                                   p + ")",
                               name);
        }
        MeasureNode m;
        m.observable = *obs;
        const json *w = item.contains("wire")    ? &item.at("wire")
                        : item.contains("wires") ? &item.at("wires")
                                                 : nullptr;
        if (w == nullptr) {
            structure_error(p, "a measurement needs a 'wire'");
        }
        if (w->is_array()) {
            if (w->size() != 1) {
                structure_error(p, "single-qubit observables take one wire");
            }
            m.wire = parse_expr_value((*w)[0], p + ".wire");
        } else {
            m.wire = parse_expr_value(*w, p + ".wire");
        }
        out.push_back({std::move(m)});
    }
    return out;
}

inline std::pair<std::size_t, std::size_t> line_column(std::string_view text,
                                                       std::size_t byte) {
    std::size_t line = 1;
    std::size_t col = 1;
    for (std::size_t i = 0; i < byte && i < text.size(); ++i) {
        if (text[i] == '\n') {
            ++line;
            col = 1;
        } else {
            ++col;
        }
    }
    return {line, col};
}

} // namespace ir_detail

/// Builds the tree form from an already-decoded JSON value.
inline CircuitIR circuit_from_json(const nlohmann::json &doc) {
    using namespace ir_detail;
    if (!doc.is_object()) {
        structure_error("$", "the circuit document must be a JSON object");
    }
    check_keys(doc, "$", {"n_qubits", "weights_shape", "body", "measurements",
                          "name"});
    CircuitIR ir;
    if (!doc.contains("n_qubits") || !doc.at("n_qubits").is_number_integer()) {
        structure_error("$.n_qubits", "an integer 'n_qubits' is required");
    }
    const auto nq = doc.at("n_qubits").get<std::int64_t>();
    if (nq < 1 || nq > kMaxQubits) {
        throw CircuitError(CircuitError::Phase::validate,
                           "n_qubits = " + std::to_string(nq) +
                               " is outside the supported range 1.." +
                               std::to_string(kMaxQubits),
                           "$.n_qubits");
    }
    ir.n_qubits = static_cast<int>(nq);
    if (doc.contains("weights_shape")) {
        const auto &s = doc.at("weights_shape");
        if (!s.is_array()) {
            structure_error("$.weights_shape", "expected an array of integers");
        }
        std::vector<std::size_t> shape;
        for (const auto &d : s) {
            if (!d.is_number_integer() || d.get<std::int64_t>() < 1) {
                structure_error("$.weights_shape",
                                "entries must be positive integers");
            }
            shape.push_back(d.get<std::size_t>());
        }
        ir.weights_shape = std::move(shape);
    }
    if (!doc.contains("body")) {
        structure_error("$.body", "'body' is required");
    }
    ir.body = parse_body(doc.at("body"), "$.body");
    if (!doc.contains("measurements")) {
        structure_error("$.measurements", "'measurements' is required");
    }
    ir.measurements = parse_measurements(doc.at("measurements"),
                                         "$.measurements");
    return ir;
}

/// Parses document text. JSON syntax errors report line and column.
inline CircuitIR parse_circuit(std::string_view document) {
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(document);
    } catch (const nlohmann::json::parse_error &e) {
        const auto [line, col] = ir_detail::line_column(
            document, e.byte > 0 ? e.byte - 1 : 0);
        std::string what = e.what();
        if (auto p = what.find("syntax error"); p != std::string::npos) {
            what = what.substr(p);
        }
        throw CircuitError(CircuitError::Phase::parse,
                           "JSON error at line " + std::to_string(line) +
                               ", column " + std::to_string(col) + ": " +
                               what,
                           "line " + std::to_string(line));
    }
    return circuit_from_json(doc);
}

// ---------------------------------------------------------------------------
// Serialization and structural equality
// ---------------------------------------------------------------------------

namespace ir_detail {

inline json range_to_json(const RangeSpec &r) {
    return json::array({expr::to_string(*r.start), expr::to_string(*r.stop),
                        expr::to_string(*r.step)});
}

inline json body_to_json(const std::vector<BodyItem> &body) {
    json out = json::array();
    for (const auto &item : body) {
        if (const auto *g = std::get_if<GateNode>(&item.node)) {
            json j;
            j["gate"] = gate_name(g->kind);
            json wires = json::array();
            for (const auto &w : g->wires) {
                wires.push_back(expr::to_string(*w));
            }
            j["wires"] = wires;
            if (g->angles.size() == 1) {
                j["angle"] = expr::to_string(*g->angles[0]);
            } else if (!g->angles.empty()) {
                json a = json::array();
                for (const auto &e : g->angles) {
                    a.push_back(expr::to_string(*e));
                }
                j["angles"] = a;
            }
            out.push_back(std::move(j));
        } else {
            const auto &l = std::get<LoopNode>(item.node);
            out.push_back({{"for", l.variable},
                           {"range", range_to_json(l.range)},
                           {"body", body_to_json(l.body)}});
        }
    }
    return out;
}

inline json measurements_to_json(const std::vector<MeasureItem> &items) {
    json out = json::array();
    for (const auto &item : items) {
        if (const auto *m = std::get_if<MeasureNode>(&item.node)) {
            out.push_back({{"observable", observable_name(m->observable)},
                           {"wire", expr::to_string(*m->wire)}});
        } else {
            const auto &l = std::get<MeasureLoop>(item.node);
            out.push_back({{"for", l.variable},
                           {"range", range_to_json(l.range)},
                           {"body", measurements_to_json(l.body)}});
        }
    }
    return out;
}

inline bool equal_range(const RangeSpec &a, const RangeSpec &b) {
    return expr::equal(*a.start, *b.start) && expr::equal(*a.stop, *b.stop) &&
           expr::equal(*a.step, *b.step);
}

inline bool equal_exprs(const std::vector<ExprPtr> &a,
                        const std::vector<ExprPtr> &b) {
    return a.size() == b.size() &&
           std::equal(a.begin(), a.end(), b.begin(),
                      [](const ExprPtr &x, const ExprPtr &y) {
                          return expr::equal(*x, *y);
                      });
}

inline bool equal_body(const std::vector<BodyItem> &a,
                       const std::vector<BodyItem> &b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].node.index() != b[i].node.index()) {
            return false;
        }
        if (const auto *g = std::get_if<GateNode>(&a[i].node)) {
            const auto &h = std::get<GateNode>(b[i].node);
            if (g->kind != h.kind || !equal_exprs(g->wires, h.wires) ||
                !equal_exprs(g->angles, h.angles)) {
                return false;
            }
        } else {
            const auto &l = std::get<LoopNode>(a[i].node);
            const auto &m = std::get<LoopNode>(b[i].node);
            if (l.variable != m.variable || !equal_range(l.range, m.range) ||
                !equal_body(l.body, m.body)) {
                return false;
            }
        }
    }
    return true;
}

inline bool equal_measurements(const std::vector<MeasureItem> &a,
                               const std::vector<MeasureItem> &b) {
    if (a.size() != b.size()) {
        return false;
    }
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].node.index() != b[i].node.index()) {
            return false;
        }
        if (const auto *m = std::get_if<MeasureNode>(&a[i].node)) {
            const auto &n = std::get<MeasureNode>(b[i].node);
            if (m->observable != n.observable ||
                !expr::equal(*m->wire, *n.wire)) {
                return false;
            }
        } else {
            const auto &l = std::get<MeasureLoop>(a[i].node);
            const auto &k = std::get<MeasureLoop>(b[i].node);
            if (l.variable != k.variable || !equal_range(l.range, k.range) ||
                !equal_measurements(l.body, k.body)) {
                return false;
            }
        }
    }
    return true;
}

} // namespace ir_detail

inline nlohmann::json to_json(const CircuitIR &ir) {
    nlohmann::json doc;
    doc["n_qubits"] = ir.n_qubits;
    if (ir.weights_shape) {
        doc["weights_shape"] = *ir.weights_shape;
    }
    doc["body"] = ir_detail::body_to_json(ir.body);
    doc["measurements"] = ir_detail::measurements_to_json(ir.measurements);
    return doc;
}

inline std::string serialize_circuit(const CircuitIR &ir) {
    return to_json(ir).dump(2);
}

inline bool structurally_equal(const CircuitIR &a, const CircuitIR &b) {
    return a.n_qubits == b.n_qubits && a.weights_shape == b.weights_shape &&
           ir_detail::equal_body(a.body, b.body) &&
           ir_detail::equal_measurements(a.measurements, b.measurements);
}

// ---------------------------------------------------------------------------
// Unrolling and validation
// ---------------------------------------------------------------------------

namespace ir_detail {

class Unroller {
  public:
    Unroller(const CircuitIR &ir, std::vector<std::size_t> shape,
             std::optional<std::size_t> n_inputs)
        : ir_(ir), shape_(std::move(shape)), n_inputs_(n_inputs) {
        scope_["n_qubits"] = ir.n_qubits;
    }

    FlatCircuit run() {
        FlatCircuit fc;
        fc.n_qubits = ir_.n_qubits;
        fc.weights_shape = shape_;
        unroll_body(ir_.body, "$.body", fc);
        unroll_measurements(ir_.measurements, "$.measurements", fc);
        fc.n_inputs = n_inputs_ ? *n_inputs_ : max_input_ + 1;
        if (!n_inputs_ && !saw_input_) {
            fc.n_inputs = 0;
        }
        if (ir_.n_qubits > kRecommendedMaxQubits) {
            fc.warnings.push_back("n_qubits = " + std::to_string(ir_.n_qubits) +
                                  " is large; fewer than 10 qubits keeps "
                                  "training fast");
        }
        return fc;
    }

  private:
    [[noreturn]] static void invalid(const std::string &path,
                                     const std::string &what,
                                     const std::string &construct) {
        throw CircuitError(CircuitError::Phase::validate,
                           what + " (at " + path + ")", construct);
    }

    std::string where(const std::string &path) const {
        std::string s = path;
        for (const auto &[name, value] : bindings_) {
            s += (s == path ? " with " : ", ") + name + "=" +
                 std::to_string(value);
        }
        return s;
    }

    std::vector<std::int64_t> iterations(const std::string &var,
                                         const RangeSpec &r,
                                         const std::string &path) {
        const auto ctx = "range of loop '" + var + "'";
        const auto start = expr::eval_index(*r.start, scope_, ctx);
        const auto stop = expr::eval_index(*r.stop, scope_, ctx);
        const auto step = expr::eval_index(*r.step, scope_, ctx);
        if (step == 0) {
            invalid(where(path), "loop '" + var + "' has step 0",
                    expr::to_string(*r.step));
        }
        std::int64_t count = 0;
        if (step > 0 && stop > start) {
            count = (stop - start + step - 1) / step;
        } else if (step < 0 && stop < start) {
            count = (start - stop - step - 1) / (-step);
        }
        if (count > static_cast<std::int64_t>(kUnrollCap)) {
            invalid(where(path),
                    "loop '" + var + "' runs " + std::to_string(count) +
                        " iterations, more than the unroll cap of " +
                        std::to_string(kUnrollCap),
                    var);
        }
        std::vector<std::int64_t> values;
        values.reserve(static_cast<std::size_t>(count));
        for (std::int64_t k = 0; k < count; ++k) {
            values.push_back(start + k * step);
        }
        return values;
    }

    void bind(const std::string &var, const std::string &path) {
        if (scope_.count(var)) {
            invalid(where(path), "loop variable '" + var +
                                     "' shadows an enclosing loop variable",
                    var);
        }
    }

    int resolve_wire(const Expr &e, const std::string &path,
                     const std::string &what) {
        const auto w = expr::eval_index(e, scope_, "wire of " + what);
        if (w < 0 || w >= ir_.n_qubits) {
            invalid(where(path),
                    "wire " + std::to_string(w) + " of " + what +
                        " is out of range for n_qubits = " +
                        std::to_string(ir_.n_qubits),
                    expr::to_string(e));
        }
        return static_cast<int>(w);
    }

    void unroll_body(const std::vector<BodyItem> &body, const std::string &path,
                     FlatCircuit &fc) {
        for (std::size_t i = 0; i < body.size(); ++i) {
            const auto p = path + "[" + std::to_string(i) + "]";
            if (const auto *g = std::get_if<GateNode>(&body[i].node)) {
                emit_gate(*g, p, fc);
            } else {
                const auto &loop = std::get<LoopNode>(body[i].node);
                bind(loop.variable, p);
                for (auto v : iterations(loop.variable, loop.range, p)) {
                    scope_[loop.variable] = v;
                    bindings_.emplace_back(loop.variable, v);
                    unroll_body(loop.body, p + ".body", fc);
                    bindings_.pop_back();
                }
                scope_.erase(loop.variable);
            }
        }
    }

    void emit_gate(const GateNode &g, const std::string &path, FlatCircuit &fc) {
        if (fc.gates.size() >= kUnrollCap) {
            invalid(where(path),
                    "circuit exceeds the unroll cap of " +
                        std::to_string(kUnrollCap) + " gates",
                    gate_name(g.kind));
        }
        FlatGate out;
        out.kind = g.kind;
        const std::string what = gate_name(g.kind);
        for (std::size_t k = 0; k < g.wires.size(); ++k) {
            out.wires[k] = resolve_wire(*g.wires[k], path, what);
        }
        if (g.wires.size() == 1) {
            out.wires[1] = out.wires[0];
        } else if (out.wires[0] == out.wires[1]) {
            invalid(where(path),
                    what + " needs two distinct wires, got " +
                        std::to_string(out.wires[0]) + " twice",
                    expr::to_string(*g.wires[0]) + ", " +
                        expr::to_string(*g.wires[1]));
        }
        for (const auto &a : g.angles) {
            out.angles.push_back(compile_angle(*a, path, what));
        }
        fc.gates.push_back(std::move(out));
    }

    void unroll_measurements(const std::vector<MeasureItem> &items,
                             const std::string &path, FlatCircuit &fc) {
        for (std::size_t i = 0; i < items.size(); ++i) {
            const auto p = path + "[" + std::to_string(i) + "]";
            if (const auto *m = std::get_if<MeasureNode>(&items[i].node)) {
                if (fc.measurements.size() >= kUnrollCap) {
                    invalid(where(p), "too many measurements", "measurements");
                }
                fc.measurements.push_back(
                    {m->observable,
                     resolve_wire(*m->wire, p,
                                  observable_name(m->observable))});
            } else {
                const auto &loop = std::get<MeasureLoop>(items[i].node);
                bind(loop.variable, p);
                for (auto v : iterations(loop.variable, loop.range, p)) {
                    scope_[loop.variable] = v;
                    bindings_.emplace_back(loop.variable, v);
                    unroll_measurements(loop.body, p + ".body", fc);
                    bindings_.pop_back();
                }
                scope_.erase(loop.variable);
            }
        }
    }

    static bool is_constant(const Expr &e) {
        if (e.kind == ExprKind::input || e.kind == ExprKind::weight) {
            return false;
        }
        return std::all_of(e.args.begin(), e.args.end(),
                           [](const ExprPtr &a) { return is_constant(*a); });
    }

    double constant_value(const Expr &e, const std::string &path,
                          const std::string &what) {
        switch (e.kind) {
        case ExprKind::integer:
            return static_cast<double>(e.ivalue);
        case ExprKind::real:
            return e.rvalue;
        case ExprKind::pi:
            return std::numbers::pi;
        case ExprKind::variable:
            return static_cast<double>(
                expr::eval_index(e, scope_, "angle of " + what));
        case ExprKind::neg:
            return -constant_value(*e.args[0], path, what);
        default:
            break;
        }
        const double l = constant_value(*e.args[0], path, what);
        const double r = constant_value(*e.args[1], path, what);
        switch (e.kind) {
        case ExprKind::add: return l + r;
        case ExprKind::sub: return l - r;
        case ExprKind::mul: return l * r;
        default:
            break;
        }
        if (r == 0.0) {
            invalid(where(path), "division by zero in angle of " + what,
                    expr::to_string(e));
        }
        if (e.kind == ExprKind::div) {
            return l / r;
        }
        const double q = std::floor(l / r);
        return e.kind == ExprKind::floordiv ? q : l - q * r;
    }

    std::uint32_t emit(AngleProgram &p, AngleProgram::Node n) {
        p.nodes.push_back(n);
        return static_cast<std::uint32_t>(p.nodes.size() - 1);
    }

    std::uint32_t compile_node(const Expr &e, AngleProgram &p,
                               const std::string &path,
                               const std::string &what) {
        using Op = AngleProgram::Op;
        if (is_constant(e)) {
            return emit(p, {Op::constant, constant_value(e, path, what)});
        }
        switch (e.kind) {
        case ExprKind::input: {
            const auto k =
                expr::eval_index(*e.args[0], scope_, "inputs index in " + what);
            if (k < 0 || (n_inputs_ && static_cast<std::size_t>(k) >= *n_inputs_)) {
                invalid(where(path),
                        "inputs[" + std::to_string(k) + "] is out of range" +
                            (n_inputs_ ? " for an input of length " +
                                             std::to_string(*n_inputs_)
                                       : std::string()),
                        expr::to_string(e));
            }
            saw_input_ = true;
            max_input_ = std::max(max_input_, static_cast<std::size_t>(k));
            return emit(p, {Op::input, 0.0, static_cast<std::size_t>(k)});
        }
        case ExprKind::weight: {
            if (e.args.size() != shape_.size()) {
                invalid(where(path),
                        "weights reference '" + expr::to_string(e) + "' has " +
                            std::to_string(e.args.size()) +
                            " index(es) but weights_shape has rank " +
                            std::to_string(shape_.size()),
                        expr::to_string(e));
            }
            std::size_t flat = 0;
            std::string resolved = "weights[";
            for (std::size_t d = 0; d < e.args.size(); ++d) {
                const auto k = expr::eval_index(*e.args[d], scope_,
                                                "weights index in " + what);
                resolved += (d ? ", " : "") + std::to_string(k);
                if (k < 0 || static_cast<std::size_t>(k) >= shape_[d]) {
                    std::string shape_text;
                    for (std::size_t s = 0; s < shape_.size(); ++s) {
                        shape_text += (s ? ", " : "") + std::to_string(shape_[s]);
                    }
                    invalid(where(path),
                            resolved + "...] index " + std::to_string(k) +
                                " in dimension " + std::to_string(d) +
                                " is outside weights_shape [" + shape_text + "]",
                            expr::to_string(e));
                }
                flat = flat * shape_[d] + static_cast<std::size_t>(k);
            }
            return emit(p, {Op::weight, 0.0, flat});
        }
        case ExprKind::neg: {
            const auto a = compile_node(*e.args[0], p, path, what);
            return emit(p, {Op::neg, 0.0, 0, a});
        }
        case ExprKind::add:
        case ExprKind::sub:
        case ExprKind::mul:
        case ExprKind::div: {
            if (e.kind == ExprKind::div && is_constant(*e.args[1]) &&
                constant_value(*e.args[1], path, what) == 0.0) {
                invalid(where(path), "division by zero in angle of " + what,
                        expr::to_string(e));
            }
            const auto l = compile_node(*e.args[0], p, path, what);
            const auto r = compile_node(*e.args[1], p, path, what);
            const Op op = e.kind == ExprKind::add   ? Op::add
                          : e.kind == ExprKind::sub ? Op::sub
                          : e.kind == ExprKind::mul ? Op::mul
                                                    : Op::div;
            return emit(p, {op, 0.0, 0, l, r});
        }
        default:
            invalid(where(path),
                    "operator in '" + expr::to_string(e) +
                        "' is not differentiable; '%' and '//' may only "
                        "combine constants in angles",
                    expr::to_string(e));
        }
    }

    AngleProgram compile_angle(const Expr &e, const std::string &path,
                               const std::string &what) {
        AngleProgram p;
        compile_node(e, p, path, what);
        return p;
    }

    const CircuitIR &ir_;
    std::vector<std::size_t> shape_;
    std::optional<std::size_t> n_inputs_;
    expr::Scope scope_;
    std::vector<std::pair<std::string, std::int64_t>> bindings_;
    std::size_t max_input_ = 0;
    bool saw_input_ = false;
};

inline std::vector<std::size_t> require_shape(const CircuitIR &ir) {
    if (!ir.weights_shape) {
        throw CircuitError(CircuitError::Phase::validate,
                           "weights_shape is missing", "$.weights_shape");
    }
    return *ir.weights_shape;
}

} // namespace ir_detail

/// Expands loops and resolves every index, checking wires, input indices,
/// weight indices and the measurement count against the model's contract.
inline FlatCircuit unroll_and_validate(const CircuitIR &ir, std::size_t n_inputs,
                                       std::size_t q_out) {
    auto fc = ir_detail::Unroller(ir, ir_detail::require_shape(ir), n_inputs)
                  .run();
    if (fc.measurements.size() != q_out) {
        throw CircuitError(CircuitError::Phase::validate,
                           "the circuit has " +
                               std::to_string(fc.measurements.size()) +
                               " measurements but the output size is " +
                               std::to_string(q_out) +
                               "; they must be equal",
                           "$.measurements");
    }
    return fc;
}

/// Unrolls without an external input/output contract; `n_inputs` becomes
/// one past the largest referenced input index.
inline FlatCircuit unroll(const CircuitIR &ir) {
    return ir_detail::Unroller(ir, ir_detail::require_shape(ir), std::nullopt)
        .run();
}

/// Loop-free tree form of a flat circuit, used to check that unrolling is
/// idempotent.
inline CircuitIR to_ir(const FlatCircuit &fc) {
    CircuitIR ir;
    ir.n_qubits = fc.n_qubits;
    ir.weights_shape = fc.weights_shape;
    auto angle_expr = [&](const AngleProgram &p) {
        std::vector<ExprPtr> built;
        for (const auto &n : p.nodes) {
            using Op = AngleProgram::Op;
            switch (n.op) {
            case Op::constant:
                built.push_back(expr::make_real(n.value));
                break;
            case Op::input:
                built.push_back(expr::make_node(
                    ExprKind::input,
                    {expr::make_int(static_cast<std::int64_t>(n.index))}));
                break;
            case Op::weight: {
                std::vector<ExprPtr> idx(fc.weights_shape.size());
                std::size_t rest = n.index;
                for (std::size_t d = fc.weights_shape.size(); d-- > 0;) {
                    idx[d] = expr::make_int(
                        static_cast<std::int64_t>(rest % fc.weights_shape[d]));
                    rest /= fc.weights_shape[d];
                }
                built.push_back(expr::make_node(ExprKind::weight, idx));
                break;
            }
            case Op::neg:
                built.push_back(expr::make_node(ExprKind::neg, {built[n.lhs]}));
                break;
            default: {
                const ExprKind k = n.op == Op::add   ? ExprKind::add
                                   : n.op == Op::sub ? ExprKind::sub
                                   : n.op == Op::mul ? ExprKind::mul
                                                     : ExprKind::div;
                built.push_back(
                    expr::make_node(k, {built[n.lhs], built[n.rhs]}));
            }
            }
        }
        return built.back();
    };
    for (const auto &g : fc.gates) {
        GateNode node;
        node.kind = g.kind;
        for (std::size_t k = 0; k < g.n_wires(); ++k) {
            node.wires.push_back(expr::make_int(g.wires[k]));
        }
        for (const auto &a : g.angles) {
            node.angles.push_back(angle_expr(a));
        }
        ir.body.push_back({std::move(node)});
    }
    for (const auto &m : fc.measurements) {
        ir.measurements.push_back({MeasureNode{m.observable, expr::make_int(m.wire)}});
    }
    return ir;
}

// ---------------------------------------------------------------------------
// Statistics and rendering
// ---------------------------------------------------------------------------

/// Gate count (measurements excluded), depth of the wire-dependency DAG, and
/// the number of trainable circuit parameters.
inline CircuitStats circuit_stats(const FlatCircuit &fc) {
    std::vector<std::size_t> level(static_cast<std::size_t>(fc.n_qubits), 0);
    std::size_t depth = 0;
    for (const auto &g : fc.gates) {
        std::size_t l = 0;
        for (std::size_t k = 0; k < g.n_wires(); ++k) {
            l = std::max(l, level[static_cast<std::size_t>(g.wires[k])]);
        }
        ++l;
        for (std::size_t k = 0; k < g.n_wires(); ++k) {
            level[static_cast<std::size_t>(g.wires[k])] = l;
        }
        depth = std::max(depth, l);
    }
    return {fc.gates.size(), depth, fc.n_weights()};
}

/// One row per wire, gates packed left into columns so that no two gates in
/// a column overlap vertically (a two-qubit gate occupies the wires it
/// spans). Measurements form the final column.
inline std::string render_ascii(const FlatCircuit &fc) {
    const auto nq = static_cast<std::size_t>(fc.n_qubits);
    std::vector<std::vector<std::string>> columns;  // [column][wire]
    std::vector<std::size_t> next_free(nq, 0);
    for (const auto &g : fc.gates) {
        const int lo = std::min(g.wires[0], g.wires[1]);
        const int hi = std::max(g.wires[0], g.wires[1]);
        std::size_t col = 0;
        for (int w = lo; w <= hi; ++w) {
            col = std::max(col, next_free[static_cast<std::size_t>(w)]);
        }
        if (col >= columns.size()) {
            columns.resize(col + 1, std::vector<std::string>(nq));
        }
        auto &cells = columns[col];
        switch (g.kind) {
        case GateKind::CNOT:
            cells[static_cast<std::size_t>(g.wires[0])] = "@";
            cells[static_cast<std::size_t>(g.wires[1])] = "(+)";
            break;
        case GateKind::CZ:
            cells[static_cast<std::size_t>(g.wires[0])] = "@";
            cells[static_cast<std::size_t>(g.wires[1])] = "@";
            break;
        default:
            cells[static_cast<std::size_t>(g.wires[0])] = gate_name(g.kind);
        }
        for (int w = lo + 1; w < hi; ++w) {
            cells[static_cast<std::size_t>(w)] = "|";
        }
        for (int w = lo; w <= hi; ++w) {
            next_free[static_cast<std::size_t>(w)] = col + 1;
        }
    }
    std::vector<std::string> readout(nq);
    for (const auto &m : fc.measurements) {
        auto &cell = readout[static_cast<std::size_t>(m.wire)];
        const char *letter = m.observable == Observable::X   ? "X"
                             : m.observable == Observable::Y ? "Y"
                                                             : "Z";
        cell += cell.empty() ? std::string("<") + letter
                             : std::string(",") + letter;
    }
    for (auto &cell : readout) {
        if (!cell.empty()) {
            cell += ">";
        }
    }

    const std::size_t label_width = std::to_string(nq > 0 ? nq - 1 : 0).size();
    std::ostringstream out;
    for (std::size_t w = 0; w < nq; ++w) {
        std::string row = "q" + std::to_string(w);
        row.append(label_width + 1 - (row.size() - 1), ' ');
        row += ":";
        for (const auto &cells : columns) {
            std::size_t width = 1;
            for (const auto &c : cells) {
                width = std::max(width, c.size());
            }
            std::string cell = cells[w];
            const char fill = '-';
            row += fill;
            row += cell;
            row.append(width - cell.size(), fill);
            row += fill;
        }
        row += "-";
        std::size_t readout_width = 0;
        for (const auto &c : readout) {
            readout_width = std::max(readout_width, c.size());
        }
        if (readout_width > 0) {
            row += readout[w].empty() ? std::string(readout_width, ' ')
                                      : readout[w] + std::string(
                                            readout_width - readout[w].size(),
                                            ' ');
        }
        while (!row.empty() && row.back() == ' ') {
            row.pop_back();
        }
        out << row << '\n';
    }
    return out.str();
}

} // namespace vqclab
