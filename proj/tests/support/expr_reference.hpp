#pragma once

// Reference evaluator and random tree generator shared by the expression tests.

#include <cmath>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "decisim/exprlang.hpp"

namespace decisim::testing {

using namespace decisim::expr;
using Op = BinaryOperator;

// Reference evaluator written against the node types only.
inline double reference(const Node& n, const std::unordered_map<std::string, double>& env, double months) {
    if (const auto* k = std::get_if<NumberLiteral>(&n.kind)) return k->value;
    if (const auto* k = std::get_if<Identifier>(&n.kind)) {
        if (k->name == "months") return months;
        if (k->name == "years") return months / 12.0;
        return env.at(k->name);
    }
    if (const auto* k = std::get_if<UnaryNeg>(&n.kind)) return -reference(*k->child, env, months);
    if (const auto* k = std::get_if<Call>(&n.kind)) {
        const double a = reference(*k->args[0], env, months);
        if (k->fn == Function::Abs) return std::fabs(a);
        const double b = reference(*k->args[1], env, months);
        return k->fn == Function::Max ? std::max(a, b) : std::min(a, b);
    }
    const auto& b = std::get<BinaryOp>(n.kind);
    const double l = reference(*b.left, env, months);
    const double r = reference(*b.right, env, months);
    double v = 0;
    switch (b.op) {
        case Op::Add: v = l + r; break;
        case Op::Subtract: v = l - r; break;
        case Op::Multiply: v = l * r; break;
        case Op::Divide:
            if (r == 0.0) throw std::domain_error("div0");
            v = l / r;
            break;
    }
    if (!std::isfinite(v)) throw std::domain_error("nonfinite");
    return v;
}

inline const std::vector<std::string> kNames = {"a", "b", "rate", "x1", "down_payment", "months", "years"};

struct Generator {
    std::mt19937_64 rng;

    int pick(int n) { return std::uniform_int_distribution<int>(0, n - 1)(rng); }

    NodePtr literal(bool nonzero) {
        static const double pool[] = {0, 1, 2, 3, 0.5, 0.125, 12, 100, 1500, 0.15, 3000, 1e6, 2.5e-3};
        double v;
        do v = pool[pick(13)];
        while (nonzero && v == 0);
        return number(v);
    }

    NodePtr tree(int depth, bool nonzero_literal = false) {
        const int choice = depth <= 0 ? pick(2) : pick(8);
        switch (choice) {
            case 0: return literal(nonzero_literal);
            case 1: return ident(kNames[pick(static_cast<int>(kNames.size()))]);
            case 2: return negate(tree(depth - 1));
            case 3: {
                const Function fn = static_cast<Function>(pick(3));
                std::vector<NodePtr> args{tree(depth - 1)};
                if (fn != Function::Abs) args.push_back(tree(depth - 1));
                return call(fn, std::move(args));
            }
            default: {
                const Op op = static_cast<Op>(pick(4));
                auto left = tree(depth - 1);
                auto right = tree(depth - 1, op == Op::Divide);
                return binary(op, std::move(left), std::move(right));
            }
        }
    }
};

}  // namespace decisim::testing
