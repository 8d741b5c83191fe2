#pragma once

#include <Eigen/Core>
#include <cmath>
#include <charconv>
#include <cstdio>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "nlgmp/errors.hpp"

namespace nlgmp {

/// A small expression language for state-space model components.
///
/// Variables are x1..xn (states) and u1..um (inputs); operators are
/// + - * / ^ and unary minus with the usual precedence (^ binds tightest,
/// then unary minus, then * /, then + -; binaries associate left).
/// Exponents must be integer literals in [0, 8]. Available functions:
/// sin, cos, tan, exp, log, sqrt, tanh, abs.
class Expr {
    struct Node;
    using NodePtr = std::shared_ptr<const Node>;

    enum class Kind { literal, state_var, input_var, negate, binary, call };
    enum class BinOp { add, sub, mul, div, pow };
    enum class Fn { sin, cos, tan, exp, log, sqrt, tanh, abs };

    struct Node {
        Kind kind = Kind::literal;
        double value = 0.0;  // literal
        int index = 0;       // variable, 1-based
        BinOp op = BinOp::add;
        Fn fn = Fn::sin;
        NodePtr lhs, rhs;  // negate/call use lhs only
    };

   public:
    Expr() : root_(std::make_shared<Node>()) {}

    /// Parse `text` against declared dimensions. Throws ParseError with the
    /// byte offset of the first problem.
    static Expr parse(std::string_view text, int n_states, int n_inputs) {
        Parser parser{text, 0, n_states, n_inputs};
        NodePtr root = parser.parse_sum();
        parser.skip_ws();
        if (!parser.at_end()) parser.fail("operator or end of input");
        Expr e;
        e.root_ = std::move(root);
        e.n_states_ = n_states;
        e.n_inputs_ = n_inputs;
        return e;
    }

    /// Evaluate at a concrete state/input point. A non-finite intermediate
    /// result raises EvalError naming the offending subexpression.
    double eval(const Eigen::VectorXd& x, const Eigen::VectorXd& u) const {
        if (x.size() < n_states_ || u.size() < n_inputs_)
            throw DimensionError("eval: vector shorter than declared dimension");
        return eval_node(*root_, x, u);
    }

    std::string str() const { return print_node(*root_, 0); }

    bool same_structure(const Expr& other) const { return nodes_equal(*root_, *other.root_); }

    int state_dim() const { return n_states_; }
    int input_dim() const { return n_inputs_; }

   private:
    NodePtr root_;
    int n_states_ = 0;
    int n_inputs_ = 0;

    // ---- evaluation ----

    static double eval_node(const Node& node, const Eigen::VectorXd& x, const Eigen::VectorXd& u) {
        double result = 0.0;
        switch (node.kind) {
            case Kind::literal:
                result = node.value;
                break;
            case Kind::state_var:
                result = x(node.index - 1);
                break;
            case Kind::input_var:
                result = u(node.index - 1);
                break;
            case Kind::negate:
                result = -eval_node(*node.lhs, x, u);
                break;
            case Kind::binary: {
                const double a = eval_node(*node.lhs, x, u);
                const double b = eval_node(*node.rhs, x, u);
                switch (node.op) {
                    case BinOp::add: result = a + b; break;
                    case BinOp::sub: result = a - b; break;
                    case BinOp::mul: result = a * b; break;
                    case BinOp::div: result = a / b; break;
                    case BinOp::pow: {
                        result = 1.0;
                        for (int k = 0; k < static_cast<int>(b); ++k) result *= a;
                        break;
                    }
                }
                break;
            }
            case Kind::call: {
                const double a = eval_node(*node.lhs, x, u);
                switch (node.fn) {
                    case Fn::sin: result = std::sin(a); break;
                    case Fn::cos: result = std::cos(a); break;
                    case Fn::tan: result = std::tan(a); break;
                    case Fn::exp: result = std::exp(a); break;
                    case Fn::log: result = std::log(a); break;
                    case Fn::sqrt: result = std::sqrt(a); break;
                    case Fn::tanh: result = std::tanh(a); break;
                    case Fn::abs: result = std::abs(a); break;
                }
                break;
            }
        }
        if (!std::isfinite(result))
            throw EvalError("non-finite value in subexpression '" + print_node(node, 0) + "'");
        return result;
    }

    // ---- printing ----

    static int precedence(const Node& node) {
        switch (node.kind) {
            case Kind::binary:
                switch (node.op) {
                    case BinOp::add:
                    case BinOp::sub: return 1;
                    case BinOp::mul:
                    case BinOp::div: return 2;
                    case BinOp::pow: return 4;
                }
                return 1;
            case Kind::negate: return 3;
            default: return 5;
        }
    }

    static std::string format_literal(double value) {
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", value);
        return buf;
    }

    static std::string print_node(const Node& node, int min_prec) {
        std::string out;
        switch (node.kind) {
            case Kind::literal:
                out = format_literal(node.value);
                break;
            case Kind::state_var:
                out = "x" + std::to_string(node.index);
                break;
            case Kind::input_var:
                out = "u" + std::to_string(node.index);
                break;
            case Kind::negate:
                out = "-" + print_node(*node.lhs, precedence(node) + 1);
                break;
            case Kind::binary: {
                const int prec = precedence(node);
                const char* symbol = node.op == BinOp::add   ? " + "
                                     : node.op == BinOp::sub ? " - "
                                     : node.op == BinOp::mul ? "*"
                                     : node.op == BinOp::div ? "/"
                                                             : "^";
                out = print_node(*node.lhs, prec) + symbol + print_node(*node.rhs, prec + 1);
                break;
            }
            case Kind::call: {
                const char* names[] = {"sin", "cos", "tan", "exp", "log", "sqrt", "tanh", "abs"};
                out = std::string(names[static_cast<int>(node.fn)]) + "(" +
                      print_node(*node.lhs, 0) + ")";
                break;
            }
        }
        if (precedence(node) < min_prec) return "(" + out + ")";
        return out;
    }

    static bool nodes_equal(const Node& a, const Node& b) {
        if (a.kind != b.kind) return false;
        switch (a.kind) {
            case Kind::literal: return a.value == b.value;
            case Kind::state_var:
            case Kind::input_var: return a.index == b.index;
            case Kind::negate: return nodes_equal(*a.lhs, *b.lhs);
            case Kind::binary:
                return a.op == b.op && nodes_equal(*a.lhs, *b.lhs) && nodes_equal(*a.rhs, *b.rhs);
            case Kind::call: return a.fn == b.fn && nodes_equal(*a.lhs, *b.lhs);
        }
        return false;
    }

    // ---- parsing ----

    struct Parser {
        std::string_view text;
        std::size_t pos;
        int n_states;
        int n_inputs;

        void skip_ws() {
            while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t' ||
                                         text[pos] == '\n' || text[pos] == '\r'))
                ++pos;
        }
        bool at_end() const { return pos >= text.size(); }
        char peek() const { return pos < text.size() ? text[pos] : '\0'; }
        bool consume(char c) {
            if (peek() == c) {
                ++pos;
                return true;
            }
            return false;
        }
        [[noreturn]] void fail(const std::string& expected) const {
            throw ParseError("syntax error: expected " + expected, pos);
        }

        NodePtr parse_sum() {
            skip_ws();
            NodePtr lhs = parse_product();
            for (;;) {
                skip_ws();
                if (consume('+'))
                    lhs = make_binary(BinOp::add, lhs, parse_product());
                else if (consume('-'))
                    lhs = make_binary(BinOp::sub, lhs, parse_product());
                else
                    return lhs;
            }
        }

        NodePtr parse_product() {
            skip_ws();
            NodePtr lhs = parse_unary();
            for (;;) {
                skip_ws();
                if (consume('*'))
                    lhs = make_binary(BinOp::mul, lhs, parse_unary());
                else if (consume('/'))
                    lhs = make_binary(BinOp::div, lhs, parse_unary());
                else
                    return lhs;
            }
        }

        NodePtr parse_unary() {
            skip_ws();
            if (consume('-')) {
                auto node = std::make_shared<Node>();
                node->kind = Kind::negate;
                node->lhs = parse_unary();
                return node;
            }
            return parse_power();
        }

        NodePtr parse_power() {
            NodePtr lhs = parse_primary();
            for (;;) {
                skip_ws();
                if (!consume('^')) return lhs;
                skip_ws();
                const std::size_t exponent_pos = pos;
                NodePtr rhs = parse_primary();
                if (rhs->kind != Kind::literal || rhs->value != std::floor(rhs->value) ||
                    rhs->value < 0.0 || rhs->value > 8.0)
                    throw ParseError("exponent must be an integer literal in [0, 8]",
                                     exponent_pos);
                lhs = make_binary(BinOp::pow, lhs, rhs);
            }
        }

        NodePtr parse_primary() {
            skip_ws();
            if (at_end()) fail("a number, variable, function call, or '('");
            const char c = peek();
            if (consume('(')) {
                NodePtr inner = parse_sum();
                skip_ws();
                if (!consume(')')) fail("')'");
                return inner;
            }
            if ((c >= '0' && c <= '9') || c == '.') return parse_number();
            if ((c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z')) return parse_identifier();
            fail("a number, variable, function call, or '('");
        }

        NodePtr parse_number() {
            const std::size_t start = pos;
            while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') ++pos;
            if (pos < text.size() && text[pos] == '.') {
                ++pos;
                while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') ++pos;
            }
            if (pos < text.size() && (text[pos] == 'e' || text[pos] == 'E')) {
                std::size_t mark = pos++;
                if (pos < text.size() && (text[pos] == '+' || text[pos] == '-')) ++pos;
                if (pos >= text.size() || text[pos] < '0' || text[pos] > '9')
                    pos = mark;  // "2e" is the literal 2 followed by junk
                else
                    while (pos < text.size() && text[pos] >= '0' && text[pos] <= '9') ++pos;
            }
            double value = 0.0;
            const auto result = std::from_chars(text.data() + start, text.data() + pos, value);
            if (result.ec != std::errc() || result.ptr != text.data() + pos)
                throw ParseError("malformed number literal", start);
            auto node = std::make_shared<Node>();
            node->kind = Kind::literal;
            node->value = value;
            return node;
        }

        NodePtr parse_identifier() {
            const std::size_t start = pos;
            while (pos < text.size() && ((text[pos] >= 'a' && text[pos] <= 'z') ||
                                         (text[pos] >= 'A' && text[pos] <= 'Z') ||
                                         (text[pos] >= '0' && text[pos] <= '9')))
                ++pos;
            const std::string_view name = text.substr(start, pos - start);

            if (name.size() >= 2 && (name[0] == 'x' || name[0] == 'u')) {
                bool all_digits = true;
                for (std::size_t i = 1; i < name.size(); ++i)
                    if (name[i] < '0' || name[i] > '9') all_digits = false;
                if (all_digits) {
                    int index = 0;
                    std::from_chars(name.data() + 1, name.data() + name.size(), index);
                    const int limit = name[0] == 'x' ? n_states : n_inputs;
                    if (index < 1 || index > limit)
                        throw ParseError("variable '" + std::string(name) +
                                             "' is out of range (declared dimension " +
                                             std::to_string(limit) + ")",
                                         start);
                    auto node = std::make_shared<Node>();
                    node->kind = name[0] == 'x' ? Kind::state_var : Kind::input_var;
                    node->index = index;
                    return node;
                }
            }

            static constexpr std::string_view fn_names[] = {"sin", "cos",  "tan",  "exp",
                                                            "log", "sqrt", "tanh", "abs"};
            for (std::size_t i = 0; i < std::size(fn_names); ++i) {
                if (name == fn_names[i]) {
                    skip_ws();
                    if (!consume('(')) fail("'(' after function name");
                    NodePtr arg = parse_sum();
                    skip_ws();
                    if (!consume(')')) fail("')'");
                    auto node = std::make_shared<Node>();
                    node->kind = Kind::call;
                    node->fn = static_cast<Fn>(i);
                    node->lhs = arg;
                    return node;
                }
            }
            throw ParseError("unknown function or variable '" + std::string(name) + "'", start);
        }

        static NodePtr make_binary(BinOp op, NodePtr lhs, NodePtr rhs) {
            auto node = std::make_shared<Node>();
            node->kind = Kind::binary;
            node->op = op;
            node->lhs = std::move(lhs);
            node->rhs = std::move(rhs);
            return node;
        }
    };
};

}  // namespace nlgmp
