#include "decisim/exprlang.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <unordered_set>

namespace decisim::expr {

namespace {

constexpr std::size_t kMaxNesting = 200;

bool is_lower(char c) { return c >= 'a' && c <= 'z'; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }
bool is_ident_tail(char c) { return is_lower(c) || is_digit(c) || c == '_'; }
bool is_space(char c) { return c == ' ' || c == '\t' || c == '\n' || c == '\r'; }

enum class Tok { Number, Ident, Plus, Minus, Star, Slash, LParen, RParen, Comma, End };

struct Token {
    Tok type;
    std::size_t pos;
    std::string_view text;
    double number = 0.0;
};

std::string describe(Tok t) {
    switch (t) {
        case Tok::Number: return "number";
        case Tok::Ident: return "identifier";
        case Tok::Plus: return "'+'";
        case Tok::Minus: return "'-'";
        case Tok::Star: return "'*'";
        case Tok::Slash: return "'/'";
        case Tok::LParen: return "'('";
        case Tok::RParen: return "')'";
        case Tok::Comma: return "','";
        case Tok::End: return "end of input";
    }
    return "?";
}

class Lexer {
public:
    explicit Lexer(std::string_view src) : src_(src) {}

    Token next() {
        while (pos_ < src_.size() && is_space(src_[pos_])) ++pos_;
        const std::size_t start = pos_;
        if (pos_ >= src_.size()) return {Tok::End, start, {}};
        const char c = src_[pos_];
        if (is_digit(c) || c == '.') return lex_number();
        if (is_lower(c)) {
            while (pos_ < src_.size() && is_ident_tail(src_[pos_])) ++pos_;
            return {Tok::Ident, start, src_.substr(start, pos_ - start)};
        }
        ++pos_;
        switch (c) {
            case '+': return {Tok::Plus, start, src_.substr(start, 1)};
            case '-': return {Tok::Minus, start, src_.substr(start, 1)};
            case '*': return {Tok::Star, start, src_.substr(start, 1)};
            case '/': return {Tok::Slash, start, src_.substr(start, 1)};
            case '(': return {Tok::LParen, start, src_.substr(start, 1)};
            case ')': return {Tok::RParen, start, src_.substr(start, 1)};
            case ',': return {Tok::Comma, start, src_.substr(start, 1)};
            default: break;
        }
        throw ParseError(ParseError::Kind::Syntax, start, "unexpected character at offset " + std::to_string(start));
    }

private:
    Token lex_number() {
        const std::size_t start = pos_;
        std::size_t int_digits = 0;
        while (pos_ < src_.size() && is_digit(src_[pos_])) ++pos_, ++int_digits;
        if (pos_ < src_.size() && src_[pos_] == '.') {
            ++pos_;
            std::size_t frac_digits = 0;
            while (pos_ < src_.size() && is_digit(src_[pos_])) ++pos_, ++frac_digits;
            if (int_digits == 0 && frac_digits == 0)
                throw ParseError(ParseError::Kind::Syntax, start, "malformed number", {"digit"});
        }
        if (pos_ < src_.size() && (src_[pos_] == 'e' || src_[pos_] == 'E')) {
            std::size_t save = pos_;
            ++pos_;
            if (pos_ < src_.size() && (src_[pos_] == '+' || src_[pos_] == '-')) ++pos_;
            std::size_t exp_digits = 0;
            while (pos_ < src_.size() && is_digit(src_[pos_])) ++pos_, ++exp_digits;
            if (exp_digits == 0) {
                throw ParseError(ParseError::Kind::Syntax, save, "malformed exponent", {"digit"});
            }
        }
        const std::string_view text = src_.substr(start, pos_ - start);
        double value = 0.0;
        auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
        if (ec != std::errc{} || ptr != text.data() + text.size() || !std::isfinite(value))
            throw ParseError(ParseError::Kind::Syntax, start, "number out of range");
        return {Tok::Number, start, text, value};
    }

    std::string_view src_;
    std::size_t pos_ = 0;
};

class Parser {
public:
    explicit Parser(std::string_view src) : lexer_(src) { advance(); }

    NodePtr parse_all() {
        NodePtr root = parse_expr();
        if (cur_.type != Tok::End) fail({"operator", describe(Tok::End)});
        return root;
    }

private:
    void advance() { cur_ = lexer_.next(); }

    [[noreturn]] void fail(std::vector<std::string> expected) {
        std::string msg = "syntax error at offset " + std::to_string(cur_.pos) + ": expected ";
        for (std::size_t i = 0; i < expected.size(); ++i) {
            if (i) msg += i + 1 == expected.size() ? " or " : ", ";
            msg += expected[i];
        }
        msg += ", found " + describe(cur_.type);
        throw ParseError(ParseError::Kind::Syntax, cur_.pos, std::move(msg), std::move(expected));
    }

    void expect(Tok t) {
        if (cur_.type != t) fail({describe(t)});
        advance();
    }

    struct DepthGuard {
        explicit DepthGuard(Parser& p) : p(p) {
            if (++p.depth_ > kMaxNesting)
                throw ParseError(ParseError::Kind::Syntax, p.cur_.pos, "expression nested too deeply");
        }
        ~DepthGuard() { --p.depth_; }
        Parser& p;
    };

    NodePtr parse_expr() {
        DepthGuard guard(*this);
        NodePtr left = parse_term();
        while (cur_.type == Tok::Plus || cur_.type == Tok::Minus) {
            const auto op = cur_.type == Tok::Plus ? BinaryOperator::Add : BinaryOperator::Subtract;
            const std::size_t pos = cur_.pos;
            advance();
            left = binary(op, left, parse_term(), pos);
        }
        return left;
    }

    NodePtr parse_term() {
        NodePtr left = parse_unary();
        while (cur_.type == Tok::Star || cur_.type == Tok::Slash) {
            const auto op = cur_.type == Tok::Star ? BinaryOperator::Multiply : BinaryOperator::Divide;
            const std::size_t pos = cur_.pos;
            advance();
            NodePtr right = parse_unary();
            if (op == BinaryOperator::Divide) {
                if (const auto* lit = std::get_if<NumberLiteral>(&right->kind); lit && lit->value == 0.0)
                    throw ParseError(ParseError::Kind::DivisionByLiteralZero, right->position,
                                     "division by literal zero at offset " + std::to_string(right->position));
            }
            left = binary(op, left, right, pos);
        }
        return left;
    }

    NodePtr parse_unary() {
        if (cur_.type == Tok::Minus) {
            DepthGuard guard(*this);
            const std::size_t pos = cur_.pos;
            advance();
            return negate(parse_unary(), pos);
        }
        return parse_primary();
    }

    NodePtr parse_primary() {
        const Token tok = cur_;
        switch (tok.type) {
            case Tok::Number:
                advance();
                return number(tok.number, tok.pos);
            case Tok::Ident: {
                advance();
                if (cur_.type != Tok::LParen) return ident(std::string(tok.text), tok.pos);
                return parse_call(tok);
            }
            case Tok::LParen: {
                advance();
                NodePtr inner = parse_expr();
                expect(Tok::RParen);
                return inner;
            }
            default:
                fail({describe(Tok::Number), describe(Tok::Ident), describe(Tok::LParen), describe(Tok::Minus)});
        }
    }

    NodePtr parse_call(const Token& name) {
        Function fn;
        std::size_t arity;
        if (name.text == "max") {
            fn = Function::Max, arity = 2;
        } else if (name.text == "min") {
            fn = Function::Min, arity = 2;
        } else if (name.text == "abs") {
            fn = Function::Abs, arity = 1;
        } else {
            throw ParseError(ParseError::Kind::UnknownFunction, name.pos,
                             "unknown function '" + std::string(name.text) + "'");
        }
        expect(Tok::LParen);
        std::vector<NodePtr> args;
        args.push_back(parse_expr());
        while (cur_.type == Tok::Comma) {
            advance();
            args.push_back(parse_expr());
        }
        if (cur_.type != Tok::RParen) fail({describe(Tok::Comma), describe(Tok::RParen)});
        if (args.size() != arity) {
            throw ParseError(ParseError::Kind::Arity, name.pos,
                             std::string(name.text) + " takes " + std::to_string(arity) + " argument(s), got " +
                                 std::to_string(args.size()));
        }
        advance();
        return call(fn, std::move(args), name.pos);
    }

    Lexer lexer_;
    Token cur_{Tok::End, 0, {}};
    std::size_t depth_ = 0;
};

// Precedence levels for printing: sums < products < unary < atoms.
int precedence(const Node& n) {
    if (const auto* b = std::get_if<BinaryOp>(&n.kind)) {
        return (b->op == BinaryOperator::Add || b->op == BinaryOperator::Subtract) ? 1 : 2;
    }
    if (std::holds_alternative<UnaryNeg>(n.kind)) return 3;
    return 4;
}

void print(const Node& n, std::string& out);

void print_child(const Node& child, bool parens, std::string& out) {
    if (parens) out += '(';
    print(child, out);
    if (parens) out += ')';
}

void print(const Node& n, std::string& out) {
    std::visit(
        [&](const auto& k) {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, NumberLiteral>) {
                std::array<char, 32> buf{};
                auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), k.value);
                const std::string_view text(buf.data(), static_cast<std::size_t>(ptr - buf.data()));
                // Negative literals never come out of the parser; keep them reparseable.
                if (k.value < 0 || std::signbit(k.value)) {
                    out += '(';
                    out += text;
                    out += ')';
                } else {
                    out += text;
                }
            } else if constexpr (std::is_same_v<T, Identifier>) {
                out += k.name;
            } else if constexpr (std::is_same_v<T, BinaryOp>) {
                const int p = precedence(n);
                print_child(*k.left, precedence(*k.left) < p, out);
                out += ' ';
                out += operator_symbol(k.op);
                out += ' ';
                print_child(*k.right, precedence(*k.right) <= p, out);
            } else if constexpr (std::is_same_v<T, UnaryNeg>) {
                out += '-';
                print_child(*k.child, precedence(*k.child) < 3, out);
            } else {
                out += function_name(k.fn);
                out += '(';
                for (std::size_t i = 0; i < k.args.size(); ++i) {
                    if (i) out += ", ";
                    print(*k.args[i], out);
                }
                out += ')';
            }
        },
        n.kind);
}

double check_finite(double v, std::size_t pos) {
    if (!std::isfinite(v)) {
        throw EvalError(EvalError::Kind::NonFiniteResult, pos,
                        "non-finite intermediate result at offset " + std::to_string(pos));
    }
    return v;
}

double divide(double num, double den, std::size_t pos) {
    if (den == 0.0) {
        throw EvalError(EvalError::Kind::DivisionByZero, pos, "division by zero at offset " + std::to_string(pos));
    }
    return num / den;
}

double eval_node(const Node& n, const EvalScope& scope) {
    return std::visit(
        [&](const auto& k) -> double {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, NumberLiteral>) {
                return k.value;
            } else if constexpr (std::is_same_v<T, Identifier>) {
                if (k.name == kMonths) return scope.months;
                if (k.name == kYears) return scope.months / 12.0;
                auto it = scope.values.find(k.name);
                if (it == scope.values.end()) {
                    throw EvalError(EvalError::Kind::UnboundIdentifier, n.position,
                                    "unbound identifier '" + k.name + "'");
                }
                return it->second;
            } else if constexpr (std::is_same_v<T, BinaryOp>) {
                const double a = eval_node(*k.left, scope);
                const double b = eval_node(*k.right, scope);
                switch (k.op) {
                    case BinaryOperator::Add: return check_finite(a + b, n.position);
                    case BinaryOperator::Subtract: return check_finite(a - b, n.position);
                    case BinaryOperator::Multiply: return check_finite(a * b, n.position);
                    case BinaryOperator::Divide: return check_finite(divide(a, b, n.position), n.position);
                }
                return 0.0;
            } else if constexpr (std::is_same_v<T, UnaryNeg>) {
                return -eval_node(*k.child, scope);
            } else {
                const double a = eval_node(*k.args[0], scope);
                switch (k.fn) {
                    case Function::Max: return std::max(a, eval_node(*k.args[1], scope));
                    case Function::Min: return std::min(a, eval_node(*k.args[1], scope));
                    case Function::Abs: return std::fabs(a);
                }
                return 0.0;
            }
        },
        n.kind);
}

void collect_identifiers(const Node& n, std::vector<std::string>& out, std::unordered_set<std::string>& seen) {
    std::visit(
        [&](const auto& k) {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, Identifier>) {
                if (!is_builtin(k.name) && seen.insert(k.name).second) out.push_back(k.name);
            } else if constexpr (std::is_same_v<T, BinaryOp>) {
                collect_identifiers(*k.left, out, seen);
                collect_identifiers(*k.right, out, seen);
            } else if constexpr (std::is_same_v<T, UnaryNeg>) {
                collect_identifiers(*k.child, out, seen);
            } else if constexpr (std::is_same_v<T, Call>) {
                for (const auto& a : k.args) collect_identifiers(*a, out, seen);
            }
        },
        n.kind);
}

}  // namespace

bool is_builtin(std::string_view name) { return name == kMonths || name == kYears; }

bool is_identifier(std::string_view name) {
    if (name.empty() || !is_lower(name.front())) return false;
    return std::all_of(name.begin(), name.end(), is_ident_tail);
}

char operator_symbol(BinaryOperator op) {
    switch (op) {
        case BinaryOperator::Add: return '+';
        case BinaryOperator::Subtract: return '-';
        case BinaryOperator::Multiply: return '*';
        case BinaryOperator::Divide: return '/';
    }
    return '?';
}

std::string_view function_name(Function fn) {
    switch (fn) {
        case Function::Max: return "max";
        case Function::Min: return "min";
        case Function::Abs: return "abs";
    }
    return "?";
}

NodePtr number(double value, std::size_t position) {
    return std::make_shared<const Node>(Node{NumberLiteral{value}, position});
}
NodePtr ident(std::string name, std::size_t position) {
    return std::make_shared<const Node>(Node{Identifier{std::move(name)}, position});
}
NodePtr binary(BinaryOperator op, NodePtr left, NodePtr right, std::size_t position) {
    return std::make_shared<const Node>(Node{BinaryOp{op, std::move(left), std::move(right)}, position});
}
NodePtr negate(NodePtr child, std::size_t position) {
    return std::make_shared<const Node>(Node{UnaryNeg{std::move(child)}, position});
}
NodePtr call(Function fn, std::vector<NodePtr> args, std::size_t position) {
    return std::make_shared<const Node>(Node{Call{fn, std::move(args)}, position});
}

bool structurally_equal(const Node& a, const Node& b) {
    if (a.kind.index() != b.kind.index()) return false;
    return std::visit(
        [&](const auto& ka) -> bool {
            using T = std::decay_t<decltype(ka)>;
            const auto& kb = std::get<T>(b.kind);
            if constexpr (std::is_same_v<T, NumberLiteral>) {
                return ka.value == kb.value;
            } else if constexpr (std::is_same_v<T, Identifier>) {
                return ka.name == kb.name;
            } else if constexpr (std::is_same_v<T, BinaryOp>) {
                return ka.op == kb.op && structurally_equal(*ka.left, *kb.left) &&
                       structurally_equal(*ka.right, *kb.right);
            } else if constexpr (std::is_same_v<T, UnaryNeg>) {
                return structurally_equal(*ka.child, *kb.child);
            } else {
                if (ka.fn != kb.fn || ka.args.size() != kb.args.size()) return false;
                for (std::size_t i = 0; i < ka.args.size(); ++i)
                    if (!structurally_equal(*ka.args[i], *kb.args[i])) return false;
                return true;
            }
        },
        a.kind);
}

ParseError::ParseError(Kind kind, std::size_t position, std::string message, std::vector<std::string> expected)
    : std::runtime_error(std::move(message)), kind_(kind), position_(position), expected_(std::move(expected)) {}

EvalError::EvalError(Kind kind, std::size_t position, std::string message)
    : std::runtime_error(std::move(message)), kind_(kind), position_(position) {}

ObjectiveExpr::ObjectiveExpr(NodePtr root) : root_(std::move(root)) {}

std::vector<std::string> ObjectiveExpr::identifiers() const {
    std::vector<std::string> out;
    if (!root_) return out;
    std::unordered_set<std::string> seen;
    collect_identifiers(*root_, out, seen);
    return out;
}

std::string ObjectiveExpr::to_source() const {
    std::string out;
    if (root_) print(*root_, out);
    return out;
}

bool operator==(const ObjectiveExpr& a, const ObjectiveExpr& b) {
    if (!a.root_ || !b.root_) return a.root_ == b.root_;
    return structurally_equal(*a.root_, *b.root_);
}

ObjectiveExpr parse(std::string_view source) { return ObjectiveExpr(Parser(source).parse_all()); }

double eval(const ObjectiveExpr& expr, const EvalScope& scope) {
    if (expr.empty()) throw std::invalid_argument("eval of empty expression");
    return check_finite(eval_node(expr.root(), scope), expr.root().position);
}

Program::Program(const ObjectiveExpr& expr, std::span<const std::string> slots) {
    if (expr.empty()) throw std::invalid_argument("compile of empty expression");
    emit(expr.root(), slots);
    std::size_t depth = 0;
    for (const Instr& in : code_) {
        switch (in.op) {
            case Op::Push:
            case Op::Load:
            case Op::Months:
            case Op::Years: max_depth_ = std::max(max_depth_, ++depth); break;
            case Op::Add:
            case Op::Sub:
            case Op::Mul:
            case Op::Div:
            case Op::Max:
            case Op::Min: --depth; break;
            case Op::Neg:
            case Op::Abs: break;
        }
    }
}

void Program::emit(const Node& node, std::span<const std::string> slots) {
    std::visit(
        [&](const auto& k) {
            using T = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<T, NumberLiteral>) {
                literals_.push_back(k.value);
                code_.push_back({Op::Push, literals_.size() - 1, node.position});
            } else if constexpr (std::is_same_v<T, Identifier>) {
                if (k.name == kMonths) {
                    code_.push_back({Op::Months, 0, node.position});
                } else if (k.name == kYears) {
                    code_.push_back({Op::Years, 0, node.position});
                } else {
                    auto it = std::find(slots.begin(), slots.end(), k.name);
                    if (it == slots.end()) {
                        throw EvalError(EvalError::Kind::UnboundIdentifier, node.position,
                                        "unbound identifier '" + k.name + "'");
                    }
                    code_.push_back({Op::Load, static_cast<std::size_t>(it - slots.begin()), node.position});
                }
            } else if constexpr (std::is_same_v<T, BinaryOp>) {
                emit(*k.left, slots);
                emit(*k.right, slots);
                static constexpr std::array ops{Op::Add, Op::Sub, Op::Mul, Op::Div};
                code_.push_back({ops[static_cast<std::size_t>(k.op)], 0, node.position});
            } else if constexpr (std::is_same_v<T, UnaryNeg>) {
                emit(*k.child, slots);
                code_.push_back({Op::Neg, 0, node.position});
            } else {
                for (const auto& a : k.args) emit(*a, slots);
                static constexpr std::array ops{Op::Max, Op::Min, Op::Abs};
                code_.push_back({ops[static_cast<std::size_t>(k.fn)], 0, node.position});
            }
        },
        node.kind);
}

double Program::run(std::span<const double> values, double months) const {
    std::array<double, 64> small{};
    std::vector<double> big;
    double* stack = small.data();
    if (max_depth_ > small.size()) {
        big.resize(max_depth_);
        stack = big.data();
    }
    std::size_t top = 0;
    for (const Instr& in : code_) {
        switch (in.op) {
            case Op::Push: stack[top++] = literals_[in.operand]; break;
            case Op::Load: stack[top++] = values[in.operand]; break;
            case Op::Months: stack[top++] = months; break;
            case Op::Years: stack[top++] = months / 12.0; break;
            case Op::Add: --top, stack[top - 1] = check_finite(stack[top - 1] + stack[top], in.position); break;
            case Op::Sub: --top, stack[top - 1] = check_finite(stack[top - 1] - stack[top], in.position); break;
            case Op::Mul: --top, stack[top - 1] = check_finite(stack[top - 1] * stack[top], in.position); break;
            case Op::Div:
                --top, stack[top - 1] = check_finite(divide(stack[top - 1], stack[top], in.position), in.position);
                break;
            case Op::Neg: stack[top - 1] = -stack[top - 1]; break;
            case Op::Max: --top, stack[top - 1] = std::max(stack[top - 1], stack[top]); break;
            case Op::Min: --top, stack[top - 1] = std::min(stack[top - 1], stack[top]); break;
            case Op::Abs: stack[top - 1] = std::fabs(stack[top - 1]); break;
        }
    }
    return check_finite(stack[0], code_.back().position);
}

}  // namespace decisim::expr
