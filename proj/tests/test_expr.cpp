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

#include "vqclab/expr.hpp"

#include <catch_amalgamated.hpp>

using namespace vqclab;
using Catch::Matchers::ContainsSubstring;

namespace {

std::string round_trip(const std::string &text) {
    return expr::to_string(*expr::parse(text));
}

std::int64_t index_of(const std::string &text, expr::Scope scope = {}) {
    return expr::eval_index(*expr::parse(text), scope, "test");
}

} // namespace

TEST_CASE("expression printing keeps only needed parentheses", "[expr]") {
    CHECK(round_trip("1 + 2 * 3") == "1 + 2 * 3");
    CHECK(round_trip("(1 + 2) * 3") == "(1 + 2) * 3");
    CHECK(round_trip("a - (b - c)") == "a - (b - c)");
    CHECK(round_trip("(a - b) - c") == "a - b - c");
    CHECK(round_trip("-(a + b)") == "-(a + b)");
    CHECK(round_trip("weights[l][i]") == "weights[l, i]");
    CHECK(round_trip("inputs[i % 5]") == "inputs[i % 5]");
    CHECK(round_trip("x mod 3") == "x % 3");
    CHECK(round_trip("0.5 * pi") == "0.5 * pi");
    CHECK(round_trip("2.0") == "2.0");
}

TEST_CASE("printed expressions parse back to equal trees", "[expr]") {
    for (const char *t : {"a // b // c", "a / (b * c)", "-a * -b", "(i + 1) % n_qubits",
                          "weights[l, w, 0] * 0.8 + inputs[t] / 3"}) {
        const auto e = expr::parse(t);
        CHECK(expr::equal(*e, *expr::parse(expr::to_string(*e))));
    }
}

TEST_CASE("index arithmetic uses floor semantics", "[expr]") {
    CHECK(index_of("7 / 2") == 3);
    CHECK(index_of("-7 / 2") == -4);
    CHECK(index_of("-7 // 2") == -4);
    CHECK(index_of("-1 % 5") == 4);
    CHECK(index_of("7 % -3") == -2);
    CHECK(index_of("2 + 3 * 4 - 1") == 13);
    CHECK(index_of("(i + 1) % n", {{"i", 8}, {"n", 9}}) == 0);
}

TEST_CASE("index evaluation rejects non-integer constructs", "[expr]") {
    CHECK_THROWS_WITH(index_of("1 / 0"), ContainsSubstring("division by zero"));
    CHECK_THROWS_WITH(index_of("q + 1"), ContainsSubstring("unknown variable 'q'"));
    CHECK_THROWS_WITH(index_of("1.5"), ContainsSubstring("real"));
    CHECK_THROWS_WITH(index_of("pi"), ContainsSubstring("pi"));
    CHECK_THROWS_WITH(index_of("inputs[0]"), ContainsSubstring("inputs or weights"));
}

TEST_CASE("syntax errors carry a column", "[expr]") {
    for (const char *t : {"1 +", "(1 + 2", "foo[1]", "1 $ 2", "inputs[1, 2]", ""}) {
        try {
            expr::parse(t);
            FAIL("expected a parse error for '" << t << "'");
        } catch (const CircuitError &e) {
            CHECK(e.phase() == CircuitError::Phase::parse);
            CHECK_THAT(e.what(), ContainsSubstring("column"));
        }
    }
}
