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

#include "vqclab/circuit_ir.hpp"

#include "oracles.hpp"

#include <catch_amalgamated.hpp>

using namespace vqclab;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string sample(const std::string &name) {
    return oracle::read_text(std::string(VQCLAB_SAMPLES_DIR) + "/" + name);
}

CircuitIR doc(const std::string &body, const std::string &meas = R"([{"observable": "PauliZ", "wire": 0}])",
              int n = 2, const std::string &shape = "[2]") {
    return parse_circuit(R"({"n_qubits": )" + std::to_string(n) + R"(, "weights_shape": )" +
                         shape + R"(, "body": )" + body + R"(, "measurements": )" + meas + "}");
}

CircuitError validate_error(const CircuitIR &ir, std::size_t n_in = 2, std::size_t q_out = 1) {
    try {
        unroll_and_validate(ir, n_in, q_out);
    } catch (const CircuitError &e) {
        return e;
    }
    FAIL("expected a validation error");
    return CircuitError(CircuitError::Phase::validate, "");
}

} // namespace

TEST_CASE("sample circuits unroll to the expected sizes", "[ir]") {
    const auto it1 = unroll_and_validate(parse_circuit(sample("iteration1.json")), 5, 5);
    CHECK(it1.gates.size() == 10);
    CHECK(it1.measurements.size() == 5);
    CHECK(circuit_stats(it1).gate_count == 10);
    CHECK(circuit_stats(it1).depth == 2);
    CHECK(circuit_stats(it1).vqc_param_count == 5);

    const auto best = unroll_and_validate(parse_circuit(sample("best_simple.json")), 5, 5);
    CHECK(circuit_stats(best).gate_count == 70);
    CHECK(circuit_stats(best).vqc_param_count == 45);

    const auto rec = unroll(parse_circuit(sample("full_recurrent.json")));
    CHECK(rec.gates.size() == 3 + 21 * (1 + 2 * (8 + 3 + 1)));
    CHECK(rec.n_inputs == 21);
    CHECK(rec.measurements.size() == 3);
}

TEST_CASE("unrolled gates follow loop order with bound indices", "[ir]") {
    const auto fc = unroll(doc(R"([{"for": "i", "range": [2], "body": [
        {"gate": "CNOT", "wires": ["i", "(i + 1) % n_qubits"]},
        {"gate": "RY", "wires": ["i"], "angle": "2 * weights[i] + inputs[1 - i]"}]}])"));
    REQUIRE(fc.gates.size() == 4);
    CHECK(fc.gates[0].kind == GateKind::CNOT);
    CHECK(fc.gates[0].wires == std::array<int, 2>{0, 1});
    CHECK(fc.gates[2].wires == std::array<int, 2>{1, 0});
    const std::vector<double> x{0.25, 0.5};
    const std::vector<double> w{1.0, 2.0};
    CHECK(fc.gates[1].angles[0].evaluate(x, w) == 2.0 + 0.5);
    CHECK(fc.gates[3].angles[0].evaluate(x, w) == 4.0 + 0.25);
}

TEST_CASE("ranges support start, stop and negative steps", "[ir]") {
    const auto fc = unroll(doc(R"([{"for": "i", "range": [1, -1, -1], "body": [
        {"gate": "H", "wires": ["i"]}]}, {"for": "j", "range": [0, 2, 2], "body": [
        {"gate": "X", "wires": ["j"]}]}])"));
    REQUIRE(fc.gates.size() == 3);
    CHECK(fc.gates[0].wires[0] == 1);
    CHECK(fc.gates[1].wires[0] == 0);
    CHECK(fc.gates[2].kind == GateKind::X);
}

TEST_CASE("gate aliases and comments are accepted", "[ir]") {
    const auto fc = unroll(doc(R"([{"comment": "note"},
        {"gate": "Hadamard", "wires": [0], "comment": "x"}, {"gate": "PauliX", "wires": [1]},
        {"gate": "CX", "wires": [0, 1]},
        {"gate": "Rot", "wires": [1], "angles": ["weights[0]", 0.5, "pi / 2"]}])"));
    REQUIRE(fc.gates.size() == 4);
    CHECK(fc.gates[0].kind == GateKind::H);
    CHECK(fc.gates[1].kind == GateKind::X);
    CHECK(fc.gates[2].kind == GateKind::CNOT);
    CHECK(fc.gates[3].kind == GateKind::ROT);
}

TEST_CASE("parse errors name the offending construct", "[ir]") {
    try {
        doc(R"([{"gate": "StronglyEntanglingLayers", "wires": [0]}])");
        FAIL("expected a parse error");
    } catch (const CircuitError &e) {
        CHECK(e.phase() == CircuitError::Phase::parse);
        CHECK(e.construct() == "StronglyEntanglingLayers");
        CHECK_THAT(e.what(), ContainsSubstring("templates are not available"));
        CHECK_THAT(e.what(), ContainsSubstring("$.body[0]"));
    }
    CHECK_THROWS_WITH(parse_circuit("{\"n_qubits\": 2,\n \"body\": [}"),
                      ContainsSubstring("line 2"));
    CHECK_THROWS_WITH(doc(R"([{"gate": "RY", "wires": [0], "angle": "inputs[0"}])"),
                      ContainsSubstring("column"));
    CHECK_THROWS_WITH(doc(R"([{"gate": "RY", "wires": [0], "angel": 1}])"),
                      ContainsSubstring("unknown key 'angel'"));
    CHECK_THROWS_WITH(doc(R"([{"gate": "RY", "wires": [0]}])"), ContainsSubstring("RY takes"));
    CHECK_THROWS_WITH(doc("[]", R"([{"observable": "PauliW", "wire": 0}])"),
                      ContainsSubstring("unknown observable"));
    CHECK_THROWS_WITH(doc(R"([{"for": "pi", "range": [2], "body": []}])"),
                      ContainsSubstring("reserved"));
}

TEST_CASE("validation errors carry the path and loop bindings", "[ir]") {
    auto e = validate_error(doc(R"([{"for": "i", "range": [3], "body": [
        {"gate": "H", "wires": ["i"]}]}])"));
    CHECK(e.phase() == CircuitError::Phase::validate);
    CHECK_THAT(e.what(), ContainsSubstring("out of range for n_qubits = 2"));
    CHECK_THAT(e.what(), ContainsSubstring("i=2"));
    CHECK_THAT(e.what(), ContainsSubstring("$.body[0].body[0]"));

    e = validate_error(doc(R"([{"gate": "CNOT", "wires": [1, 1]}])"));
    CHECK_THAT(e.what(), ContainsSubstring("distinct"));

    e = validate_error(doc(R"([{"gate": "RY", "wires": [0], "angle": "inputs[2]"}])"));
    CHECK_THAT(e.what(), ContainsSubstring("inputs[2] is out of range"));

    e = validate_error(doc(R"([{"gate": "RY", "wires": [0], "angle": "weights[0, 1]"}])"));
    CHECK(e.phase() == CircuitError::Phase::validate);

    e = validate_error(doc(R"([{"gate": "RY", "wires": [0], "angle": "weights[2]"}])"));
    CHECK(e.phase() == CircuitError::Phase::validate);

    e = validate_error(doc(R"([{"gate": "RY", "wires": [0], "angle": "weights[0] % 2"}])"));
    CHECK_THAT(e.what(), ContainsSubstring("not differentiable"));

    e = validate_error(doc(R"([{"for": "i", "range": [0, 2, 0], "body": []}])"));
    CHECK_THAT(e.what(), ContainsSubstring("step"));

    e = validate_error(doc(R"([{"for": "i", "range": [2], "body": [
        {"for": "i", "range": [2], "body": []}]}])"));
    CHECK_THAT(e.what(), ContainsSubstring("shadows"));

    e = validate_error(doc("[]", R"([{"observable": "PauliZ", "wire": 0}])"), 2, 3);
    CHECK_THAT(e.what(), ContainsSubstring("the circuit has 1 measurements but the output size is 3"));
}

TEST_CASE("the unroll cap is enforced", "[ir]") {
    const auto e = validate_error(doc(R"([{"for": "i", "range": [400], "body": [
        {"for": "j", "range": [400], "body": [{"gate": "H", "wires": [0]}]}]}])"));
    CHECK_THAT(e.what(), ContainsSubstring("unroll cap"));
}

TEST_CASE("qubit limits warn above nine and fail above twelve", "[ir]") {
    const auto fc = unroll(doc("[]", R"([{"observable": "PauliZ", "wire": 0}])", 10, "[1]"));
    CHECK_FALSE(fc.warnings.empty());
    CHECK_THROWS_AS(doc("[]", R"([{"observable": "PauliZ", "wire": 0}])", 13, "[1]"),
                    CircuitError);
}

TEST_CASE("serialization round-trips structurally", "[ir]") {
    for (const char *name : {"iteration1.json", "best_simple.json", "quanv_example.json",
                             "full_recurrent.json"}) {
        const auto ir = parse_circuit(sample(name));
        const auto again = parse_circuit(serialize_circuit(ir));
        CHECK(structurally_equal(ir, again));
        CHECK(unroll(ir) == unroll(again));
    }
}

TEST_CASE("unrolling is idempotent", "[ir]") {
    for (const char *name : {"iteration1.json", "best_simple.json", "quanv_example.json",
                             "full_recurrent.json"}) {
        const auto fc = unroll(parse_circuit(sample(name)));
        CHECK(unroll(to_ir(fc)) == fc);
        CHECK(unroll(parse_circuit(serialize_circuit(to_ir(fc)))) == fc);
    }
}

TEST_CASE("iteration-1 circuit renders to the golden diagram", "[ir]") {
    const auto fc = unroll(parse_circuit(sample("iteration1.json")));
    CHECK(render_ascii(fc) == "q0 :-RY--RY--<Z>\n"
                              "q1 :-RY--RY--<Z>\n"
                              "q2 :-RY--RY--<Z>\n"
                              "q3 :-RY--RY--<Z>\n"
                              "q4 :-RY--RY--<Z>\n");
}

TEST_CASE("two-qubit gates span their wires in the rendering", "[ir]") {
    const auto fc = unroll(doc(R"([{"gate": "CNOT", "wires": [0, 2]}, {"gate": "CZ", "wires": [2, 1]}])",
                               R"([{"observable": "PauliX", "wire": 0}, {"observable": "PauliZ", "wire": 0}])",
                               3, "[1]"));
    const auto text = render_ascii(fc);
    CHECK_THAT(text, ContainsSubstring("(+)"));
    CHECK_THAT(text, ContainsSubstring("<X,Z>"));
    CHECK(std::count(text.begin(), text.end(), '\n') == 3);
}

TEST_CASE("depth is the longest wire-dependency chain", "[ir]") {
    const auto fc = unroll(doc(R"([{"gate": "H", "wires": [0]}, {"gate": "H", "wires": [1]},
        {"gate": "CNOT", "wires": [0, 1]}, {"gate": "H", "wires": [2]}, {"gate": "H", "wires": [1]}])",
                               R"([{"observable": "PauliZ", "wire": 0}])", 3, "[1]"));
    CHECK(circuit_stats(fc).depth == 3);
}
