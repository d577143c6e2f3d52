#include "decisim/model.hpp"

#include <cmath>
#include <set>

#include "decisim/normal.hpp"

namespace decisim {

namespace {

struct TruncatedMoments {
    double mean;
    double variance;
};

// Window far in one tail: the density is close to an exponential with rate |alpha|.
TruncatedMoments far_tail_moments(double a, double b) {
    const double w = b - a;
    const double e = std::exp(-a * w);
    const double mean = 1.0 / a - w * e / (1.0 - e);
    const double var = 1.0 / (a * a) - w * w * e / ((1.0 - e) * (1.0 - e));
    return {a + mean, var};
}

TruncatedMoments truncated_normal_moments(const Normal& n) {
    const double alpha = (n.lo - n.mean) / n.stddev;
    const double beta = (n.hi - n.mean) / n.stddev;
    if (alpha >= 0.0 && normal::sf(alpha) < 1e-290) {
        const auto t = far_tail_moments(alpha, beta);
        return {n.mean + n.stddev * t.mean, n.stddev * n.stddev * t.variance};
    }
    if (beta <= 0.0 && normal::cdf(beta) < 1e-290) {
        const auto t = far_tail_moments(-beta, -alpha);
        return {n.mean - n.stddev * t.mean, n.stddev * n.stddev * t.variance};
    }
    // Mass of the truncation window; computed from the tail nearest the window.
    const double z = (alpha > 0.0) ? normal::sf(alpha) - normal::sf(beta) : normal::cdf(beta) - normal::cdf(alpha);
    const double pa = normal::pdf(alpha);
    const double pb = normal::pdf(beta);
    const double ratio = (pa - pb) / z;
    const double ta = std::isfinite(alpha) ? alpha * pa : 0.0;
    const double tb = std::isfinite(beta) ? beta * pb : 0.0;
    return {n.mean + n.stddev * ratio, n.stddev * n.stddev * (1.0 + (ta - tb) / z - ratio * ratio)};
}

void check_finite(double v, const std::string& path, ValidationReport& out) {
    if (!std::isfinite(v)) out.push_back({"non_finite_value", path, "value must be finite"});
}

void append_distribution_violations(const Distribution& dist, const std::string& path, ValidationReport& out) {
    std::visit(
        [&](const auto& d) {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Fixed>) {
                check_finite(d.value, path + ".value", out);
            } else if constexpr (std::is_same_v<T, Uniform>) {
                check_finite(d.lo, path + ".lo", out);
                check_finite(d.hi, path + ".hi", out);
                if (!(d.lo < d.hi)) out.push_back({"degenerate_interval", path, "uniform requires lo < hi"});
            } else if constexpr (std::is_same_v<T, Normal>) {
                check_finite(d.mean, path + ".mean", out);
                check_finite(d.stddev, path + ".stddev", out);
                check_finite(d.lo, path + ".lo", out);
                check_finite(d.hi, path + ".hi", out);
                if (!(d.stddev > 0.0)) out.push_back({"nonpositive_stddev", path, "normal requires stddev > 0"});
                if (!(d.lo < d.hi)) out.push_back({"degenerate_interval", path, "normal requires lo < hi"});
            } else {
                check_finite(d.lo, path + ".lo", out);
                check_finite(d.mode, path + ".mode", out);
                check_finite(d.hi, path + ".hi", out);
                if (!(d.lo < d.hi)) out.push_back({"degenerate_interval", path, "triangular requires lo < hi"});
                if (!(d.lo <= d.mode && d.mode <= d.hi))
                    out.push_back({"mode_out_of_range", path, "triangular requires lo <= mode <= hi"});
            }
        },
        dist);
}

}  // namespace

bool is_fixed(const Distribution& d) { return std::holds_alternative<Fixed>(d); }

double distribution_mean(const Distribution& dist) {
    return std::visit(
        [](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Fixed>) return d.value;
            else if constexpr (std::is_same_v<T, Uniform>) return 0.5 * (d.lo + d.hi);
            else if constexpr (std::is_same_v<T, Normal>) return truncated_normal_moments(d).mean;
            else return (d.lo + d.mode + d.hi) / 3.0;
        },
        dist);
}

double distribution_variance(const Distribution& dist) {
    return std::visit(
        [](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Fixed>) {
                return 0.0;
            } else if constexpr (std::is_same_v<T, Uniform>) {
                const double w = d.hi - d.lo;
                return w * w / 12.0;
            } else if constexpr (std::is_same_v<T, Normal>) {
                return truncated_normal_moments(d).variance;
            } else {
                const double a = d.lo, c = d.mode, b = d.hi;
                return (a * a + b * b + c * c - a * b - a * c - b * c) / 18.0;
            }
        },
        dist);
}

Distribution plus_minus(double point, double spread) {
    if (spread == 0.0) return Fixed{point};
    return Uniform{point - std::fabs(spread), point + std::fabs(spread)};
}

Distribution recentered(const Distribution& dist, double target_mean) {
    const double shift = target_mean - distribution_mean(dist);
    return std::visit(
        [&](const auto& d) -> Distribution {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Fixed>) return Fixed{target_mean};
            else if constexpr (std::is_same_v<T, Uniform>) return Uniform{d.lo + shift, d.hi + shift};
            else if constexpr (std::is_same_v<T, Normal>)
                return Normal{d.mean + shift, d.stddev, d.lo + shift, d.hi + shift};
            else return Triangular{d.lo + shift, d.mode + shift, d.hi + shift};
        },
        dist);
}

ValidationReport validate_problem(const DecisionProblem& problem) {
    ValidationReport out;
    if (problem.alternatives.size() < 2) {
        out.push_back({"too_few_alternatives", "alternatives",
                       "need at least 2 alternatives, got " + std::to_string(problem.alternatives.size())});
    }
    if (problem.objective.empty()) out.push_back({"missing_objective", "objective", "objective is empty"});
    if (problem.comparison_horizon_months < 1)
        out.push_back({"invalid_horizon", "comparison_horizon_months", "must be >= 1"});
    if (problem.sample_count < 1) out.push_back({"invalid_sample_count", "sample_count", "must be >= 1"});

    const auto referenced = problem.objective.identifiers();
    std::set<std::string> names;
    for (std::size_t i = 0; i < problem.alternatives.size(); ++i) {
        const Alternative& alt = problem.alternatives[i];
        const std::string path = "alternatives[" + std::to_string(i) + "]";
        if (!expr::is_identifier(alt.name))
            out.push_back({"invalid_identifier", path + ".name", "'" + alt.name + "' is not a valid identifier"});
        if (!names.insert(alt.name).second)
            out.push_back({"duplicate_alternative", path + ".name", "duplicate alternative '" + alt.name + "'"});
        if (alt.term_months < 1) {
            out.push_back({"invalid_term_months", path + ".term_months", "must be >= 1"});
        } else if (problem.comparison_horizon_months >= 1 && problem.comparison_horizon_months < alt.term_months) {
            out.push_back({"horizon_shorter_than_term", path + ".term_months",
                           "comparison horizon " + std::to_string(problem.comparison_horizon_months) +
                               " is shorter than term " + std::to_string(alt.term_months)});
        }
        for (const auto& [key, spec] : alt.bindings) {
            const std::string ppath = path + ".bindings." + key;
            if (!expr::is_identifier(key)) {
                out.push_back({"invalid_identifier", ppath, "'" + key + "' is not a valid identifier"});
            } else if (expr::is_builtin(key)) {
                out.push_back({"reserved_identifier", ppath, "'" + key + "' is a builtin and cannot be bound"});
            }
            if (spec.name != key)
                out.push_back({"binding_name_mismatch", ppath, "binding key differs from parameter name"});
            append_distribution_violations(spec.distribution, ppath + ".dist", out);
        }
        for (const auto& id : referenced) {
            if (!alt.bindings.contains(id))
                out.push_back({"unbound_variable", path + ".bindings." + id, "objective uses unbound '" + id + "'"});
        }
    }
    return out;
}

ValidationReport validate_distribution(const Distribution& dist, const std::string& path) {
    ValidationReport out;
    append_distribution_violations(dist, path, out);
    return out;
}

std::map<std::string, std::vector<std::string>> free_variables(const DecisionProblem& problem) {
    std::map<std::string, std::vector<std::string>> out;
    const auto referenced = problem.objective.identifiers();
    for (const Alternative& alt : problem.alternatives) {
        auto& missing = out[alt.name];
        for (const auto& id : referenced)
            if (!alt.bindings.contains(id)) missing.push_back(id);
    }
    return out;
}

}  // namespace decisim
