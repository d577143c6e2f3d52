#include "decisim/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace decisim {

namespace {

bool better(double a, double b, Direction d) { return d == Direction::Minimize ? a < b : a > b; }

double population_variance(std::span<const double> xs) {
    double sum = 0.0;
    for (double v : xs) sum += v;
    const double mean = sum / static_cast<double>(xs.size());
    double ss = 0.0;
    for (double v : xs) ss += (v - mean) * (v - mean);
    return ss / static_cast<double>(xs.size());
}

Json stats_to_json(const SampleStats& s) {
    Json hist = Json::array();
    for (const auto& b : s.histogram) hist.push_back({{"lo", b.lo}, {"hi", b.hi}, {"count", b.count}});
    return {{"mean", s.mean},
            {"stddev", s.stddev},
            {"min", s.min},
            {"max", s.max},
            {"percentiles", {{"p5", s.p5}, {"p25", s.p25}, {"p50", s.p50}, {"p75", s.p75}, {"p95", s.p95}}},
            {"histogram", std::move(hist)}};
}

}  // namespace

std::size_t ComparisonReport::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < alternatives.size(); ++i)
        if (alternatives[i].name == name) return i;
    throw std::out_of_range("no alternative named '" + name + "'");
}

double ComparisonReport::expected(const std::string& name) const { return alternatives[index_of(name)].stats.mean; }

double ComparisonReport::win_probability(const std::string& a, const std::string& b) const {
    return static_cast<double>(wins[index_of(a)][index_of(b)]) / static_cast<double>(sample_count);
}

double ComparisonReport::tie_mass(const std::string& a, const std::string& b) const {
    return static_cast<double>(ties[index_of(a)][index_of(b)]) / static_cast<double>(sample_count);
}

double ComparisonReport::best_probability(const std::string& name) const {
    return alternatives[index_of(name)].best_probability;
}

ComparisonReport compare(const ScenarioMatrix& matrix, Direction direction) {
    if (!matrix.paired) throw UnpairedMatrix();
    const std::size_t k = matrix.values.size();
    const auto n = static_cast<std::size_t>(matrix.sample_count);
    if (k == 0 || n == 0) throw std::invalid_argument("compare of empty matrix");
    for (const auto& col : matrix.values)
        if (col.size() != n) throw std::invalid_argument("matrix column length differs from sample_count");

    ComparisonReport r;
    r.direction = direction;
    r.sample_count = matrix.sample_count;
    r.seed = matrix.seed;
    for (std::size_t a = 0; a < k; ++a) {
        r.alternatives.push_back({matrix.alternatives[a], summarize_column(matrix.values[a]), 0, 0.0});
    }

    // Deterministic preference used to break exact ties.
    std::vector<std::size_t> preference(k);
    std::iota(preference.begin(), preference.end(), 0);
    std::sort(preference.begin(), preference.end(), [&](std::size_t x, std::size_t y) {
        const auto& sx = r.alternatives[x];
        const auto& sy = r.alternatives[y];
        if (sx.stats.stddev != sy.stats.stddev) return sx.stats.stddev < sy.stats.stddev;
        return sx.name < sy.name;
    });

    r.wins.assign(k, std::vector<std::int64_t>(k, 0));
    r.ties.assign(k, std::vector<std::int64_t>(k, 0));
    for (std::size_t a = 0; a < k; ++a) {
        for (std::size_t b = a + 1; b < k; ++b) {
            std::int64_t wa = 0, wb = 0, t = 0;
            const auto& xa = matrix.values[a];
            const auto& xb = matrix.values[b];
            for (std::size_t i = 0; i < n; ++i) {
                if (better(xa[i], xb[i], direction)) ++wa;
                else if (better(xb[i], xa[i], direction)) ++wb;
                else ++t;
            }
            r.wins[a][b] = wa;
            r.wins[b][a] = wb;
            r.ties[a][b] = r.ties[b][a] = t;
        }
    }

    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = preference[0];
        for (std::size_t p = 1; p < k; ++p) {
            const std::size_t c = preference[p];
            if (better(matrix.values[c][i], matrix.values[best][i], direction)) best = c;
        }
        ++r.alternatives[best].best_count;
    }
    for (auto& alt : r.alternatives)
        alt.best_probability = static_cast<double>(alt.best_count) / static_cast<double>(n);

    std::size_t rec = preference[0];
    for (std::size_t p = 1; p < k; ++p) {
        const std::size_t c = preference[p];
        if (better(r.alternatives[c].stats.mean, r.alternatives[rec].stats.mean, direction)) rec = c;
    }
    r.recommendation = r.alternatives[rec].name;
    return r;
}

std::vector<SensitivityRow> sensitivity(const DecisionProblem& problem, const ScenarioMatrix& base,
                                        const SimulationOptions& options) {
    if (base.values.size() != problem.alternatives.size() || base.sample_count != problem.sample_count ||
        base.seed != problem.seed) {
        throw std::invalid_argument("base matrix was not produced from this problem");
    }
    const auto parameters = problem.objective.identifiers();
    std::vector<SensitivityRow> rows;
    for (std::size_t a = 0; a < problem.alternatives.size(); ++a) {
        const Alternative& alt = problem.alternatives[a];
        SensitivityRow row;
        row.alternative = alt.name;
        row.variance = population_variance(base.values[a]);
        row.zero_variance = !(row.variance > 0.0);
        for (const auto& name : parameters) {
            Contribution c{name, 0.0, 0.0};
            if (!row.zero_variance && !is_fixed(alt.bindings.at(name).distribution)) {
                const auto column = simulate_column(problem, a, name, options);
                c.variance = population_variance(column);
                // Non-additive objectives can push a single-factor variance past the total.
                c.fraction = std::clamp(c.variance / row.variance, 0.0, 1.0);
            }
            row.contributions.push_back(std::move(c));
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

Recommendation recommend(const ComparisonReport& report, double min_confidence) {
    Recommendation rec;
    rec.alternative = report.recommendation;
    rec.confidence = report.best_probability(report.recommendation);
    if (rec.confidence < min_confidence) rec.caveats.emplace_back("low_confidence");
    for (const auto& alt : report.alternatives) {
        if (alt.best_probability > rec.confidence) {
            rec.caveats.emplace_back("other_alternative_more_often_best");
            break;
        }
    }
    return rec;
}

ComparisonReport analyze(const DecisionProblem& problem, const AnalysisOptions& options) {
    const ScenarioMatrix matrix = simulate(problem, options.simulation);
    ComparisonReport report = compare(matrix, problem.direction);
    report.horizon_months = problem.comparison_horizon_months;
    if (options.with_sensitivity) report.sensitivity = sensitivity(problem, matrix, options.simulation);

    const Recommendation rec = recommend(report, options.min_confidence);
    Narrative& n = report.narrative;
    n.recommendation = rec.alternative;
    n.confidence = rec.confidence;
    n.caveats = rec.caveats;
    n.low_confidence = std::find(rec.caveats.begin(), rec.caveats.end(), "low_confidence") != rec.caveats.end();
    // Runner-up: best expected value among the others.
    const std::size_t best = report.index_of(report.recommendation);
    std::optional<std::size_t> runner;
    for (std::size_t i = 0; i < report.alternatives.size(); ++i) {
        if (i == best) continue;
        if (!runner || better(report.alternatives[i].stats.mean, report.alternatives[*runner].stats.mean,
                              problem.direction))
            runner = i;
    }
    if (runner) {
        n.runner_up = report.alternatives[*runner].name;
        n.expected_margin = std::fabs(report.alternatives[best].stats.mean - report.alternatives[*runner].stats.mean);
    }
    return report;
}

Json report_to_json(const ComparisonReport& r) {
    Json alternatives = Json::array();
    for (const auto& a : r.alternatives) {
        alternatives.push_back({{"name", a.name},
                                {"expected", a.stats.mean},
                                {"best_probability", a.best_probability},
                                {"best_count", a.best_count},
                                {"stats", stats_to_json(a.stats)}});
    }
    Json win_matrix = Json::array();
    for (std::size_t a = 0; a < r.alternatives.size(); ++a) {
        for (std::size_t b = 0; b < r.alternatives.size(); ++b) {
            if (a == b) continue;
            const double n = static_cast<double>(r.sample_count);
            win_matrix.push_back({{"a", r.alternatives[a].name},
                                  {"b", r.alternatives[b].name},
                                  {"wins", r.wins[a][b]},
                                  {"ties", r.ties[a][b]},
                                  {"probability", static_cast<double>(r.wins[a][b]) / n},
                                  {"tie_mass", static_cast<double>(r.ties[a][b]) / n}});
        }
    }
    Json sens = Json::array();
    for (const auto& row : r.sensitivity) {
        Json contributions = Json::array();
        for (const auto& c : row.contributions)
            contributions.push_back({{"parameter", c.parameter}, {"fraction", c.fraction}, {"variance", c.variance}});
        sens.push_back({{"alternative", row.alternative},
                        {"variance", row.variance},
                        {"zero_variance", row.zero_variance},
                        {"contributions", std::move(contributions)}});
    }
    const Narrative& n = r.narrative;
    return {{"schema", kReportSchema},
            {"recommendation", r.recommendation},
            {"direction", to_string(r.direction)},
            {"horizon_months", r.horizon_months},
            {"sample_count", r.sample_count},
            {"seed", r.seed},
            {"alternatives", std::move(alternatives)},
            {"win_matrix", std::move(win_matrix)},
            {"sensitivity", std::move(sens)},
            {"narrative",
             {{"recommendation", n.recommendation},
              {"confidence", n.confidence},
              {"low_confidence", n.low_confidence},
              {"runner_up", n.runner_up},
              {"expected_margin", n.expected_margin},
              {"caveats", n.caveats}}}};
}

std::string report_to_string(const ComparisonReport& report) { return report_to_json(report).dump(2); }

}  // namespace decisim
