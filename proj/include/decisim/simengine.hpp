#pragma once

// Seeded Monte Carlo simulation over a DecisionProblem.

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "decisim/model.hpp"
#include "decisim/random.hpp"

namespace decisim {

/// Draws one value from `dist`, consuming at most one word of `stream`.
/// Every continuous family is sampled by inverse CDF.
double sample_parameter(const Distribution& dist, RandomStream& stream);

struct ScenarioMatrix {
    std::vector<std::string> alternatives;
    std::vector<std::vector<double>> values;  // values[alternative][scenario]
    std::uint64_t seed = 0;
    std::int64_t sample_count = 0;
    bool paired = true;

    friend bool operator==(const ScenarioMatrix&, const ScenarioMatrix&) = default;
};

struct HistogramBin {
    std::int64_t count = 0;
    double lo = 0.0;
    double hi = 0.0;
};

struct SampleStats {
    double mean = 0.0;
    double stddev = 0.0;  // population (divide by N)
    double min = 0.0;
    double max = 0.0;
    double p5 = 0.0, p25 = 0.0, p50 = 0.0, p75 = 0.0, p95 = 0.0;
    std::vector<HistogramBin> histogram;
};

class PreconditionError : public std::runtime_error {
public:
    explicit PreconditionError(ValidationReport violations);
    const ValidationReport& violations() const noexcept { return violations_; }

private:
    ValidationReport violations_;
};

class EvaluationFailed : public std::runtime_error {
public:
    EvaluationFailed(std::string alternative, std::int64_t scenario, const expr::EvalError& cause);
    const std::string& alternative() const noexcept { return alternative_; }
    std::int64_t scenario() const noexcept { return scenario_; }
    expr::EvalError::Kind cause() const noexcept { return cause_; }

private:
    std::string alternative_;
    std::int64_t scenario_;
    expr::EvalError::Kind cause_;
};

struct SimulationOptions {
    unsigned workers = 0;  // 0 = hardware concurrency
};

ScenarioMatrix simulate(const DecisionProblem& problem, const SimulationOptions& options = {});

/// One alternative's column. When `only_random` is set, that parameter is drawn
/// from its usual substream and every other parameter is held at its mean.
std::vector<double> simulate_column(const DecisionProblem& problem, std::size_t alternative,
                                    const std::optional<std::string>& only_random = std::nullopt,
                                    const SimulationOptions& options = {});

/// Objective of one alternative with every parameter at its distribution mean.
double evaluate_at_means(const DecisionProblem& problem, std::size_t alternative, int months);

SampleStats summarize_column(std::span<const double> samples);
std::vector<SampleStats> summarize(const ScenarioMatrix& matrix);

/// Nearest-rank percentile of an ascending-sorted, non-empty sample:
/// element at rank ceil(percent * n / 100), computed in integers.
double nearest_rank(std::span<const double> sorted, int percent);

/// Bin count used by summarize: ceil(sqrt(n)) clamped to [10, 200].
std::size_t histogram_bin_count(std::int64_t n);

/// One column per alternative, header row of alternative names, full-precision values.
void write_csv(const ScenarioMatrix& matrix, std::ostream& out);

}  // namespace decisim
