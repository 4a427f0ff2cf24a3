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
 * Expression grammar shared by wire indices, loop ranges and gate angles.
 *
 *   expr    := term (('+' | '-') term)*
 *   term    := unary (('*' | '/' | '//' | '%' | 'mod') unary)*
 *   unary   := ('-' | '+') unary | primary
 *   primary := number | 'pi' | ident | ident '[' expr (',' expr)* ']'
 *            | '(' expr ')'
 *
 * `inputs[...]` and `weights[...]` are the only subscripted names.
 * `weights[l][i]` is accepted as a spelling of `weights[l, i]`.
 */
#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <numbers>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace vqclab {

/// Raised for every malformed or invalid circuit document. The message is
/// what the designing agent receives, so it must be self-contained.
class CircuitError : public std::runtime_error {
  public:
    enum class Phase { parse, validate };

    CircuitError(Phase phase, const std::string &message,
                 std::string construct = {})
        : std::runtime_error(message), phase_(phase),
          construct_(std::move(construct)) {}

    [[nodiscard]] Phase phase() const noexcept { return phase_; }
    /// The offending piece of the document (expression text, JSON path...).
    [[nodiscard]] const std::string &construct() const noexcept {
        return construct_;
    }

  private:
    Phase phase_;
    std::string construct_;
};

enum class ExprKind {
    integer,
    real,
    pi,
    variable,
    input,
    weight,
    neg,
    add,
    sub,
    mul,
    div,
    floordiv,
    mod
};

struct Expr;
using ExprPtr = std::shared_ptr<const Expr>;

struct Expr {
    ExprKind kind = ExprKind::integer;
    std::int64_t ivalue = 0;
    double rvalue = 0.0;
    std::string name;           // variable name
    std::vector<ExprPtr> args;  // operands or subscripts

    [[nodiscard]] bool is_binary() const noexcept {
        return kind >= ExprKind::add;
    }
};

namespace expr {

inline ExprPtr make_int(std::int64_t v) {
    auto e = std::make_shared<Expr>();
    e->kind = ExprKind::integer;
    e->ivalue = v;
    return e;
}

inline ExprPtr make_real(double v) {
    auto e = std::make_shared<Expr>();
    e->kind = ExprKind::real;
    e->rvalue = v;
    return e;
}

inline ExprPtr make_var(std::string name) {
    auto e = std::make_shared<Expr>();
    e->kind = ExprKind::variable;
    e->name = std::move(name);
    return e;
}

inline ExprPtr make_node(ExprKind kind, std::vector<ExprPtr> args) {
    auto e = std::make_shared<Expr>();
    e->kind = kind;
    e->args = std::move(args);
    return e;
}

namespace detail {

enum class Tok {
    end,
    number,
    ident,
    plus,
    minus,
    star,
    slash,
    dslash,
    percent,
    lparen,
    rparen,
    lbracket,
    rbracket,
    comma
};

struct Token {
    Tok kind = Tok::end;
    std::string_view text;
    std::size_t column = 1;
};

class Parser {
  public:
    explicit Parser(std::string_view src) : src_(src) { advance(); }

    ExprPtr parse() {
        if (tok_.kind == Tok::end) {
            fail("empty expression");
        }
        auto e = parse_sum();
        if (tok_.kind != Tok::end) {
            fail("unexpected '" + std::string(tok_.text) + "'");
        }
        return e;
    }

  private:
    [[noreturn]] void fail(const std::string &what) const {
        throw CircuitError(CircuitError::Phase::parse,
                           "syntax error at column " +
                               std::to_string(tok_.column) + " of '" +
                               std::string(src_) + "': " + what,
                           std::string(src_));
    }

    void advance() {
        while (pos_ < src_.size() &&
               (src_[pos_] == ' ' || src_[pos_] == '\t')) {
            ++pos_;
        }
        tok_.column = pos_ + 1;
        if (pos_ >= src_.size()) {
            tok_ = {Tok::end, {}, pos_ + 1};
            return;
        }
        const std::size_t start = pos_;
        const char c = src_[pos_];
        auto single = [&](Tok k) {
            ++pos_;
            tok_ = {k, src_.substr(start, 1), start + 1};
        };
        if (std::isdigit(static_cast<unsigned char>(c)) ||
            (c == '.' && pos_ + 1 < src_.size() &&
             std::isdigit(static_cast<unsigned char>(src_[pos_ + 1])))) {
            while (pos_ < src_.size() &&
                   (std::isdigit(static_cast<unsigned char>(src_[pos_])) ||
                    src_[pos_] == '.')) {
                ++pos_;
            }
            if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
                std::size_t p = pos_ + 1;
                if (p < src_.size() && (src_[p] == '+' || src_[p] == '-')) {
                    ++p;
                }
                if (p < src_.size() &&
                    std::isdigit(static_cast<unsigned char>(src_[p]))) {
                    pos_ = p;
                    while (pos_ < src_.size() &&
                           std::isdigit(static_cast<unsigned char>(src_[pos_]))) {
                        ++pos_;
                    }
                }
            }
            tok_ = {Tok::number, src_.substr(start, pos_ - start), start + 1};
            return;
        }
        if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
            while (pos_ < src_.size() &&
                   (std::isalnum(static_cast<unsigned char>(src_[pos_])) ||
                    src_[pos_] == '_' || src_[pos_] == '.')) {
                ++pos_;
            }
            tok_ = {Tok::ident, src_.substr(start, pos_ - start), start + 1};
            return;
        }
        switch (c) {
        case '+': return single(Tok::plus);
        case '-': return single(Tok::minus);
        case '*': return single(Tok::star);
        case '%': return single(Tok::percent);
        case '(': return single(Tok::lparen);
        case ')': return single(Tok::rparen);
        case '[': return single(Tok::lbracket);
        case ']': return single(Tok::rbracket);
        case ',': return single(Tok::comma);
        case '/':
            if (pos_ + 1 < src_.size() && src_[pos_ + 1] == '/') {
                pos_ += 2;
                tok_ = {Tok::dslash, src_.substr(start, 2), start + 1};
                return;
            }
            return single(Tok::slash);
        default:
            tok_ = {Tok::end, src_.substr(start, 1), start + 1};
            fail("unexpected character '" + std::string(1, c) + "'");
        }
    }

    void expect(Tok kind, const char *what) {
        if (tok_.kind != kind) {
            fail(std::string("expected ") + what +
                 (tok_.kind == Tok::end
                      ? " but reached end of expression"
                      : " but found '" + std::string(tok_.text) + "'"));
        }
        advance();
    }

    ExprPtr parse_sum() {
        auto lhs = parse_product();
        while (tok_.kind == Tok::plus || tok_.kind == Tok::minus) {
            const auto kind =
                tok_.kind == Tok::plus ? ExprKind::add : ExprKind::sub;
            advance();
            lhs = make_node(kind, {lhs, parse_product()});
        }
        return lhs;
    }

    ExprPtr parse_product() {
        auto lhs = parse_unary();
        for (;;) {
            ExprKind kind;
            if (tok_.kind == Tok::star) {
                kind = ExprKind::mul;
            } else if (tok_.kind == Tok::slash) {
                kind = ExprKind::div;
            } else if (tok_.kind == Tok::dslash) {
                kind = ExprKind::floordiv;
            } else if (tok_.kind == Tok::percent ||
                       (tok_.kind == Tok::ident && tok_.text == "mod")) {
                kind = ExprKind::mod;
            } else {
                return lhs;
            }
            advance();
            lhs = make_node(kind, {lhs, parse_unary()});
        }
    }

    ExprPtr parse_unary() {
        if (tok_.kind == Tok::minus) {
            advance();
            return make_node(ExprKind::neg, {parse_unary()});
        }
        if (tok_.kind == Tok::plus) {
            advance();
            return parse_unary();
        }
        return parse_primary();
    }

    ExprPtr parse_number() {
        const std::string text(tok_.text);
        const bool is_real =
            text.find_first_of(".eE") != std::string::npos;
        if (is_real) {
            double v = 0.0;
            auto [ptr, ec] =
                std::from_chars(text.data(), text.data() + text.size(), v);
            if (ec != std::errc{} || ptr != text.data() + text.size()) {
                fail("malformed number '" + text + "'");
            }
            advance();
            return make_real(v);
        }
        std::int64_t v = 0;
        auto [ptr, ec] =
            std::from_chars(text.data(), text.data() + text.size(), v);
        if (ec != std::errc{} || ptr != text.data() + text.size()) {
            fail("malformed integer '" + text + "'");
        }
        advance();
        return make_int(v);
    }

    ExprPtr parse_primary() {
        switch (tok_.kind) {
        case Tok::number:
            return parse_number();
        case Tok::lparen: {
            advance();
            auto inner = parse_sum();
            expect(Tok::rparen, "')'");
            return inner;
        }
        case Tok::ident:
            return parse_name();
        case Tok::end:
            fail("expression ends where an operand is expected");
        default:
            fail("unexpected '" + std::string(tok_.text) + "'");
        }
    }

    ExprPtr parse_name() {
        const std::string name(tok_.text);
        advance();
        if (name == "pi" || name == "np.pi" || name == "math.pi") {
            return make_node(ExprKind::pi, {});
        }
        if (name == "inputs" || name == "weights") {
            if (tok_.kind != Tok::lbracket) {
                fail("'" + name + "' must be subscripted, e.g. " + name +
                     "[i]");
            }
            std::vector<ExprPtr> subscripts;
            while (tok_.kind == Tok::lbracket) {
                advance();
                subscripts.push_back(parse_sum());
                while (tok_.kind == Tok::comma) {
                    advance();
                    subscripts.push_back(parse_sum());
                }
                expect(Tok::rbracket, "']'");
            }
            if (name == "inputs" && subscripts.size() != 1) {
                fail("'inputs' takes exactly one subscript");
            }
            return make_node(name == "inputs" ? ExprKind::input
                                              : ExprKind::weight,
                             std::move(subscripts));
        }
        if (name == "mod") {
            fail("'mod' is an operator, not an operand");
        }
        if (name.find('.') != std::string::npos) {
            fail("unknown name '" + name + "'");
        }
        if (tok_.kind == Tok::lbracket) {
            fail("only 'inputs' and 'weights' can be subscripted, not '" +
                 name + "'");
        }
        if (tok_.kind == Tok::lparen) {
            fail("function calls are not supported ('" + name + "(...)')");
        }
        return make_var(name);
    }

    std::string_view src_;
    std::size_t pos_ = 0;
    Token tok_;
};

inline int precedence(ExprKind k) {
    switch (k) {
    case ExprKind::add:
    case ExprKind::sub:
        return 1;
    case ExprKind::mul:
    case ExprKind::div:
    case ExprKind::floordiv:
    case ExprKind::mod:
        return 2;
    case ExprKind::neg:
        return 3;
    default:
        return 4;
    }
}

inline const char *op_text(ExprKind k) {
    switch (k) {
    case ExprKind::add: return " + ";
    case ExprKind::sub: return " - ";
    case ExprKind::mul: return " * ";
    case ExprKind::div: return " / ";
    case ExprKind::floordiv: return " // ";
    case ExprKind::mod: return " % ";
    default: return "";
    }
}

} // namespace detail

/// Parses one expression string. Throws CircuitError(parse) with a column.
inline ExprPtr parse(std::string_view text) {
    return detail::Parser(text).parse();
}

/// Shortest text that parses back to a bit-identical double.
inline std::string format_real(double v) {
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    std::string s(buf, ptr);
    if (s.find_first_of(".eEn") == std::string::npos) {
        s += ".0";
    }
    return s;
}

/// Canonical text form; `parse(to_string(e))` is structurally equal to `e`.
inline std::string to_string(const Expr &e) {
    using detail::precedence;
    switch (e.kind) {
    case ExprKind::integer:
        return std::to_string(e.ivalue);
    case ExprKind::real:
        return format_real(e.rvalue);
    case ExprKind::pi:
        return "pi";
    case ExprKind::variable:
        return e.name;
    case ExprKind::input:
    case ExprKind::weight: {
        std::string s = e.kind == ExprKind::input ? "inputs[" : "weights[";
        for (std::size_t i = 0; i < e.args.size(); ++i) {
            if (i) {
                s += ", ";
            }
            s += to_string(*e.args[i]);
        }
        return s + "]";
    }
    case ExprKind::neg: {
        const auto &a = *e.args[0];
        const std::string inner = to_string(a);
        return precedence(a.kind) < precedence(ExprKind::neg)
                   ? "-(" + inner + ")"
                   : "-" + inner;
    }
    default: {
        const auto &l = *e.args[0];
        const auto &r = *e.args[1];
        const int p = precedence(e.kind);
        std::string ls = to_string(l);
        std::string rs = to_string(r);
        if (precedence(l.kind) < p) {
            ls = "(" + ls + ")";
        }
        // left-associative: equal precedence on the right needs parentheses
        if (precedence(r.kind) <= p) {
            rs = "(" + rs + ")";
        }
        return ls + detail::op_text(e.kind) + rs;
    }
    }
}

inline bool equal(const Expr &a, const Expr &b) {
    if (a.kind != b.kind || a.args.size() != b.args.size()) {
        return false;
    }
    switch (a.kind) {
    case ExprKind::integer:
        return a.ivalue == b.ivalue;
    case ExprKind::real:
        return a.rvalue == b.rvalue;
    case ExprKind::variable:
        return a.name == b.name;
    default:
        break;
    }
    for (std::size_t i = 0; i < a.args.size(); ++i) {
        if (!equal(*a.args[i], *b.args[i])) {
            return false;
        }
    }
    return true;
}

/// Loop-variable bindings visible while evaluating index expressions.
using Scope = std::map<std::string, std::int64_t, std::less<>>;

/// Python-style floor division and modulo, which is what `(i + 1) % n`
/// wire arithmetic in ring entanglers expects for negative operands.
inline std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) {
        --q;
    }
    return q;
}

inline std::int64_t floor_mod(std::int64_t a, std::int64_t b) {
    return a - floor_div(a, b) * b;
}

/// Evaluates an integer-valued expression. `context` names the construct
/// in error messages (e.g. "wire of RY").
inline std::int64_t eval_index(const Expr &e, const Scope &scope,
                               std::string_view context) {
    auto fail = [&](const std::string &why) -> std::int64_t {
        throw CircuitError(CircuitError::Phase::validate,
                           std::string(context) + " '" + to_string(e) +
                               "': " + why,
                           to_string(e));
    };
    switch (e.kind) {
    case ExprKind::integer:
        return e.ivalue;
    case ExprKind::variable: {
        auto it = scope.find(e.name);
        if (it == scope.end()) {
            return fail("unknown variable '" + e.name + "'");
        }
        return it->second;
    }
    case ExprKind::neg:
        return -eval_index(*e.args[0], scope, context);
    case ExprKind::add:
    case ExprKind::sub:
    case ExprKind::mul:
    case ExprKind::div:
    case ExprKind::floordiv:
    case ExprKind::mod: {
        const auto l = eval_index(*e.args[0], scope, context);
        const auto r = eval_index(*e.args[1], scope, context);
        switch (e.kind) {
        case ExprKind::add: return l + r;
        case ExprKind::sub: return l - r;
        case ExprKind::mul: return l * r;
        default:
            if (r == 0) {
                return fail("division by zero");
            }
            return e.kind == ExprKind::mod ? floor_mod(l, r) : floor_div(l, r);
        }
    }
    case ExprKind::real:
        return fail("index expressions must be integers, found real literal");
    case ExprKind::pi:
        return fail("index expressions cannot use 'pi'");
    case ExprKind::input:
    case ExprKind::weight:
        return fail("index expressions cannot reference inputs or weights");
    }
    return 0;
}

} // namespace expr
} // namespace vqclab
