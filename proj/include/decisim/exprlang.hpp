#pragma once

// Objective-expression language: parser, printer, evaluators.
//
//   expr    := term { ("+" | "-") term }
//   term    := unary { ("*" | "/") unary }
//   unary   := "-" unary | primary
//   primary := number | ident | ident "(" expr { "," expr } ")" | "(" expr ")"
//   number  := digit { digit } [ "." { digit } ] [ ("e" | "E") [ "+" | "-" ] digit { digit } ]
//   ident   := [a-z] { [a-z0-9_] }
//
// Functions: max(a, b), min(a, b), abs(a). Builtins: `months`, `years` (= months / 12).

#include <cstddef>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <unordered_map>
#include <variant>
#include <vector>

namespace decisim::expr {

inline constexpr std::string_view kMonths = "months";
inline constexpr std::string_view kYears = "years";

bool is_builtin(std::string_view name);
bool is_identifier(std::string_view name);

enum class BinaryOperator { Add, Subtract, Multiply, Divide };
enum class Function { Max, Min, Abs };

char operator_symbol(BinaryOperator op);
std::string_view function_name(Function fn);

struct Node;
using NodePtr = std::shared_ptr<const Node>;

struct NumberLiteral {
    double value;
};
struct Identifier {
    std::string name;
};
struct BinaryOp {
    BinaryOperator op;
    NodePtr left;
    NodePtr right;
};
struct UnaryNeg {
    NodePtr child;
};
struct Call {
    Function fn;
    std::vector<NodePtr> args;
};

struct Node {
    std::variant<NumberLiteral, Identifier, BinaryOp, UnaryNeg, Call> kind;
    std::size_t position = 0;  // byte offset of the node's leading token
};

// Node constructors for building trees by hand.
NodePtr number(double value, std::size_t position = 0);
NodePtr ident(std::string name, std::size_t position = 0);
NodePtr binary(BinaryOperator op, NodePtr left, NodePtr right, std::size_t position = 0);
NodePtr negate(NodePtr child, std::size_t position = 0);
NodePtr call(Function fn, std::vector<NodePtr> args, std::size_t position = 0);

/// Structural equality; positions are ignored.
bool structurally_equal(const Node& a, const Node& b);

class ParseError : public std::runtime_error {
public:
    enum class Kind { Syntax, UnknownFunction, Arity, DivisionByLiteralZero };

    ParseError(Kind kind, std::size_t position, std::string message,
               std::vector<std::string> expected = {});

    Kind kind() const noexcept { return kind_; }
    std::size_t position() const noexcept { return position_; }
    const std::vector<std::string>& expected() const noexcept { return expected_; }

private:
    Kind kind_;
    std::size_t position_;
    std::vector<std::string> expected_;
};

class EvalError : public std::runtime_error {
public:
    enum class Kind { UnboundIdentifier, DivisionByZero, NonFiniteResult };

    EvalError(Kind kind, std::size_t position, std::string message);

    Kind kind() const noexcept { return kind_; }
    std::size_t position() const noexcept { return position_; }

private:
    Kind kind_;
    std::size_t position_;
};

/// Immutable parsed objective. Cheap to copy; safe to evaluate concurrently.
class ObjectiveExpr {
public:
    ObjectiveExpr() = default;
    explicit ObjectiveExpr(NodePtr root);

    const Node& root() const { return *root_; }
    const NodePtr& root_ptr() const { return root_; }
    bool empty() const { return root_ == nullptr; }

    /// Non-builtin identifiers in first-occurrence order, deduplicated.
    std::vector<std::string> identifiers() const;

    /// Canonical source with the minimum parentheses needed to reparse to the same tree.
    std::string to_source() const;

    friend bool operator==(const ObjectiveExpr& a, const ObjectiveExpr& b);

private:
    NodePtr root_;
};

ObjectiveExpr parse(std::string_view source);

struct EvalScope {
    std::unordered_map<std::string, double> values;
    double months = 0.0;
};

double eval(const ObjectiveExpr& expr, const EvalScope& scope);

/// Flattened stack program with identifiers resolved to slot indices. This is
/// what the simulation loop runs; `eval` above is the tree-walking form.
class Program {
public:
    /// `slots` names the value layout passed to run(); every non-builtin
    /// identifier of `expr` must appear in it.
    Program(const ObjectiveExpr& expr, std::span<const std::string> slots);

    /// Evaluates with `values[i]` bound to slots[i]. Throws EvalError.
    double run(std::span<const double> values, double months) const;

private:
    enum class Op : unsigned char { Push, Load, Months, Years, Add, Sub, Mul, Div, Neg, Max, Min, Abs };
    struct Instr {
        Op op;
        std::size_t operand;  // literal index or slot index
        std::size_t position;
    };
    void emit(const Node& node, std::span<const std::string> slots);

    std::vector<Instr> code_;
    std::vector<double> literals_;
    std::size_t max_depth_ = 0;
};

}  // namespace decisim::expr
