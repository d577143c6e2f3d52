#pragma once

// Problem-spec document codec.
//
// {
//   "title": "...", "direction": "minimize" | "maximize",
//   "comparison_horizon_months": 72, "sample_count": 100000, "seed": 42,
//   "objective": "<expression>",
//   "alternatives": [
//     {"name": "buy", "term_months": 60,
//      "bindings": {"down_payment": {"unit": "USD", "dist": {"type": "fixed", "value": 3000},
//                                    "provenance": "user" | {"prior": "<record id>"}}}}
//   ]
// }
//
// Distribution objects: {"type": "fixed", "value"}, {"type": "uniform", "lo", "hi"},
// {"type": "normal", "mean", "stddev", "lo", "hi"}, {"type": "triangular", "lo", "mode", "hi"},
// and the shorthand {"type": "plus_minus", "value", "spread"} which reads as a uniform.
// Unknown keys are rejected at every level.

#include <filesystem>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "decisim/model.hpp"

namespace decisim {

using Json = nlohmann::ordered_json;

class FormatError : public std::runtime_error {
public:
    FormatError(std::string path, const std::string& message)
        : std::runtime_error(path.empty() ? message : path + ": " + message), path_(std::move(path)) {}
    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

Json distribution_to_json(const Distribution& d);
Distribution distribution_from_json(const Json& j, const std::string& path = "dist");

Json problem_to_json(const DecisionProblem& problem);
DecisionProblem problem_from_json(const Json& j);

DecisionProblem load_problem(const std::filesystem::path& file);

std::string to_string(Direction d);

// Helpers shared by the other document readers.
namespace json_util {
void reject_unknown_keys(const Json& obj, std::initializer_list<const char*> allowed, const std::string& path);
const Json& require(const Json& obj, const char* key, const std::string& path);
double require_number(const Json& obj, const char* key, const std::string& path);
std::string require_string(const Json& obj, const char* key, const std::string& path);
std::int64_t require_integer(const Json& obj, const char* key, const std::string& path);
std::uint64_t require_unsigned(const Json& obj, const char* key, const std::string& path);
std::string join(const std::string& path, const std::string& key);
}  // namespace json_util

}  // namespace decisim
