#pragma once

// Turns simulated scenarios into a recommendation.

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "decisim/model.hpp"
#include "decisim/problem_json.hpp"
#include "decisim/simengine.hpp"

namespace decisim {

inline constexpr double kDefaultMinConfidence = 0.8;
inline constexpr const char* kReportSchema = "decisim.report/v1";

struct AlternativeOutcome {
    std::string name;
    SampleStats stats;          // stats.mean is the expected objective
    std::int64_t best_count = 0;
    double best_probability = 0.0;
};

struct Contribution {
    std::string parameter;
    double fraction = 0.0;   // in [0, 1]
    double variance = 0.0;   // variance with only this parameter random
};

struct SensitivityRow {
    std::string alternative;
    double variance = 0.0;   // variance of the full objective
    bool zero_variance = false;
    std::vector<Contribution> contributions;
};

struct Recommendation {
    std::string alternative;
    double confidence = 0.0;
    std::vector<std::string> caveats;
};

struct Narrative {
    std::string recommendation;
    double confidence = 0.0;
    bool low_confidence = false;
    std::string runner_up;          // empty when there is only one alternative
    double expected_margin = 0.0;   // |expected(recommendation) - expected(runner_up)|
    std::vector<std::string> caveats;
};

struct ComparisonReport {
    std::string recommendation;
    Direction direction = Direction::Minimize;
    std::int64_t sample_count = 0;
    std::uint64_t seed = 0;
    int horizon_months = 0;
    std::vector<AlternativeOutcome> alternatives;
    // wins[a][b]: scenarios where a is strictly better than b; ties[a][b] = ties[b][a].
    std::vector<std::vector<std::int64_t>> wins;
    std::vector<std::vector<std::int64_t>> ties;
    std::vector<SensitivityRow> sensitivity;
    Narrative narrative;

    std::size_t index_of(const std::string& name) const;
    double expected(const std::string& name) const;
    double win_probability(const std::string& a, const std::string& b) const;
    double tie_mass(const std::string& a, const std::string& b) const;
    double best_probability(const std::string& name) const;
};

class UnpairedMatrix : public std::invalid_argument {
public:
    UnpairedMatrix() : std::invalid_argument("compare requires a paired scenario matrix") {}
};

/// Win counts, best-probabilities, and the recommendation. Ties in expected value
/// go to the lower stddev, then the lexicographically first name; scenarios where
/// several alternatives tie for best are credited by the same order.
ComparisonReport compare(const ScenarioMatrix& matrix, Direction direction);

/// First-order contributions by freeze-at-mean re-simulation on the same substreams.
std::vector<SensitivityRow> sensitivity(const DecisionProblem& problem, const ScenarioMatrix& base,
                                        const SimulationOptions& options = {});

Recommendation recommend(const ComparisonReport& report, double min_confidence = kDefaultMinConfidence);

struct AnalysisOptions {
    SimulationOptions simulation;
    bool with_sensitivity = true;
    double min_confidence = kDefaultMinConfidence;
};

/// simulate + compare + sensitivity + narrative.
ComparisonReport analyze(const DecisionProblem& problem, const AnalysisOptions& options = {});

Json report_to_json(const ComparisonReport& report);

/// Serialized report; the byte form compared by replay checks.
std::string report_to_string(const ComparisonReport& report);

}  // namespace decisim
