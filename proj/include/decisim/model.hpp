#pragma once

// Decision-problem domain types and validation.

#include <cstdint>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "decisim/exprlang.hpp"

namespace decisim {

struct Fixed {
    double value = 0.0;
};
struct Uniform {
    double lo = 0.0;
    double hi = 0.0;
};
/// Normal(mean, stddev) truncated to [lo, hi].
struct Normal {
    double mean = 0.0;
    double stddev = 1.0;
    double lo = 0.0;
    double hi = 0.0;
};
struct Triangular {
    double lo = 0.0;
    double mode = 0.0;
    double hi = 0.0;
};

using Distribution = std::variant<Fixed, Uniform, Normal, Triangular>;

bool is_fixed(const Distribution& d);
double distribution_mean(const Distribution& d);
double distribution_variance(const Distribution& d);

/// Uniform(point - spread, point + spread): the reading of a "point ± spread" statement.
Distribution plus_minus(double point, double spread);

/// Moves every location parameter so that the distribution's mean becomes `target_mean`.
Distribution recentered(const Distribution& d, double target_mean);

struct UserSupplied {
    friend bool operator==(const UserSupplied&, const UserSupplied&) = default;
};
struct WarehousePrior {
    std::string record_id;
    friend bool operator==(const WarehousePrior&, const WarehousePrior&) = default;
};
using Provenance = std::variant<UserSupplied, WarehousePrior>;

struct ParameterSpec {
    std::string name;
    std::string unit;
    Distribution distribution;
    Provenance provenance = UserSupplied{};
};

struct Alternative {
    std::string name;
    int term_months = 1;
    std::map<std::string, ParameterSpec> bindings;
};

enum class Direction { Minimize, Maximize };

struct DecisionProblem {
    std::string title;
    std::vector<Alternative> alternatives;
    expr::ObjectiveExpr objective;
    Direction direction = Direction::Minimize;
    int comparison_horizon_months = 1;
    std::int64_t sample_count = 100'000;
    std::uint64_t seed = 0;
};

struct Violation {
    std::string code;
    std::string path;
    std::string message;

    friend bool operator==(const Violation&, const Violation&) = default;
};

using ValidationReport = std::vector<Violation>;

ValidationReport validate_problem(const DecisionProblem& problem);

/// Distribution-level checks only; `path` prefixes each violation path.
ValidationReport validate_distribution(const Distribution& dist, const std::string& path = "dist");

/// Unbound objective identifiers, keyed by alternative name (every alternative
/// has an entry, possibly empty). Order follows first occurrence in the objective.
std::map<std::string, std::vector<std::string>> free_variables(const DecisionProblem& problem);

}  // namespace decisim
