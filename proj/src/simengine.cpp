#include "decisim/simengine.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <exception>
#include <ostream>
#include <thread>

#include "decisim/normal.hpp"

namespace decisim {

namespace {

// Standard normal restricted to [a, b] with a >= 0, by inverse survival function.
double upper_window(double a, double b, double u) {
    const double sa = normal::sf(a);
    const double sb = normal::sf(b);
    if (sa < 1e-290) {
        // Mass underflows: on a window this far out the density is exp(-x^2/2) to within
        // a factor 1/a of the Rayleigh tail, whose inverse is closed form.
        const double span = std::isfinite(b) ? 0.5 * (b * b - a * a) : INFINITY;
        return std::sqrt(a * a - 2.0 * std::log1p(-u * -std::expm1(-span)));
    }
    if (!(sa > sb)) return a + u * (b - a);
    return -normal::quantile(sa - u * (sa - sb));
}

double sample_truncated_normal(const Normal& n, double u) {
    const double alpha = (n.lo - n.mean) / n.stddev;
    const double beta = (n.hi - n.mean) / n.stddev;
    double z;
    if (alpha >= 0.0) {
        z = upper_window(alpha, beta, u);
    } else if (beta <= 0.0) {
        z = -upper_window(-beta, -alpha, u);
    } else {
        const double ca = normal::cdf(alpha);
        const double cb = normal::cdf(beta);
        z = normal::quantile(ca + u * (cb - ca));
    }
    if (!std::isfinite(z)) return n.lo + u * (n.hi - n.lo);
    return std::clamp(n.mean + n.stddev * z, n.lo, n.hi);
}

double sample_triangular(const Triangular& t, double u) {
    const double width = t.hi - t.lo;
    const double split = (t.mode - t.lo) / width;
    double x;
    if (u < split) {
        x = t.lo + std::sqrt(u * width * (t.mode - t.lo));
    } else {
        x = t.hi - std::sqrt((1.0 - u) * width * (t.hi - t.mode));
    }
    return std::clamp(x, t.lo, t.hi);
}

struct ColumnPlan {
    std::vector<std::string> names;           // objective identifiers, the program's slot layout
    std::vector<const Distribution*> dists;   // nullptr when frozen
    std::vector<double> frozen;               // value used when dists[k] is null
};

ColumnPlan plan_column(const DecisionProblem& problem, const Alternative& alt,
                       const std::optional<std::string>& only_random) {
    ColumnPlan plan;
    plan.names = problem.objective.identifiers();
    for (const auto& name : plan.names) {
        const ParameterSpec& spec = alt.bindings.at(name);
        const bool random = !is_fixed(spec.distribution) && (!only_random || *only_random == name);
        plan.dists.push_back(random ? &spec.distribution : nullptr);
        plan.frozen.push_back(random ? 0.0 : distribution_mean(spec.distribution));
    }
    return plan;
}

unsigned resolve_workers(const SimulationOptions& options, std::int64_t n) {
    unsigned w = options.workers ? options.workers : std::max(1u, std::thread::hardware_concurrency());
    // Small runs are not worth a thread each.
    const auto cap = static_cast<unsigned>(std::max<std::int64_t>(1, n / 4096));
    return std::max(1u, std::min(w, cap));
}

void run_column(const DecisionProblem& problem, const Alternative& alt, const ColumnPlan& plan,
                std::span<double> out, const SimulationOptions& options) {
    const expr::Program program(problem.objective, plan.names);
    const auto n = static_cast<std::int64_t>(out.size());
    const double months = problem.comparison_horizon_months;

    auto shard = [&](std::int64_t begin, std::int64_t end) {
        std::vector<double> values(plan.frozen);
        for (std::int64_t i = begin; i < end; ++i) {
            for (std::size_t k = 0; k < plan.names.size(); ++k) {
                if (!plan.dists[k]) continue;
                RandomStream stream = substream(problem.seed, plan.names[k], static_cast<std::uint64_t>(i));
                values[k] = sample_parameter(*plan.dists[k], stream);
            }
            try {
                out[static_cast<std::size_t>(i)] = program.run(values, months);
            } catch (const expr::EvalError& e) {
                throw EvaluationFailed(alt.name, i, e);
            }
        }
    };

    const unsigned workers = resolve_workers(options, n);
    if (workers == 1) {
        shard(0, n);
        return;
    }
    std::vector<std::exception_ptr> errors(workers);
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (unsigned w = 0; w < workers; ++w) {
        const std::int64_t begin = n * w / workers;
        const std::int64_t end = n * (w + 1) / workers;
        threads.emplace_back([&, w, begin, end] {
            try {
                shard(begin, end);
            } catch (...) {
                errors[w] = std::current_exception();
            }
        });
    }
    for (auto& t : threads) t.join();
    // Shards are in scenario order, so the first recorded error is the lowest failing scenario.
    for (const auto& e : errors)
        if (e) std::rethrow_exception(e);
}

void require_valid(const DecisionProblem& problem) {
    auto violations = validate_problem(problem);
    if (!violations.empty()) throw PreconditionError(std::move(violations));
}

}  // namespace

PreconditionError::PreconditionError(ValidationReport violations)
    : std::runtime_error("problem is invalid: " + (violations.empty() ? std::string("?") : violations.front().code +
                                                                                              " at " +
                                                                                              violations.front().path)),
      violations_(std::move(violations)) {}

EvaluationFailed::EvaluationFailed(std::string alternative, std::int64_t scenario, const expr::EvalError& cause)
    : std::runtime_error("evaluation failed for alternative '" + alternative + "' in scenario " +
                         std::to_string(scenario) + ": " + cause.what()),
      alternative_(std::move(alternative)),
      scenario_(scenario),
      cause_(cause.kind()) {}

double sample_parameter(const Distribution& dist, RandomStream& stream) {
    return std::visit(
        [&](const auto& d) -> double {
            using T = std::decay_t<decltype(d)>;
            if constexpr (std::is_same_v<T, Fixed>) {
                return d.value;
            } else if constexpr (std::is_same_v<T, Uniform>) {
                return std::min(d.lo + stream.next_open01() * (d.hi - d.lo), d.hi);
            } else if constexpr (std::is_same_v<T, Normal>) {
                return sample_truncated_normal(d, stream.next_open01());
            } else {
                return sample_triangular(d, stream.next_open01());
            }
        },
        dist);
}

ScenarioMatrix simulate(const DecisionProblem& problem, const SimulationOptions& options) {
    require_valid(problem);
    ScenarioMatrix m;
    m.seed = problem.seed;
    m.sample_count = problem.sample_count;
    m.paired = true;
    for (std::size_t a = 0; a < problem.alternatives.size(); ++a) {
        m.alternatives.push_back(problem.alternatives[a].name);
        m.values.push_back(simulate_column(problem, a, std::nullopt, options));
    }
    return m;
}

std::vector<double> simulate_column(const DecisionProblem& problem, std::size_t alternative,
                                    const std::optional<std::string>& only_random,
                                    const SimulationOptions& options) {
    require_valid(problem);
    const Alternative& alt = problem.alternatives.at(alternative);
    const ColumnPlan plan = plan_column(problem, alt, only_random);
    std::vector<double> out(static_cast<std::size_t>(problem.sample_count));
    run_column(problem, alt, plan, out, options);
    return out;
}

double evaluate_at_means(const DecisionProblem& problem, std::size_t alternative, int months) {
    const Alternative& alt = problem.alternatives.at(alternative);
    expr::EvalScope scope;
    scope.months = months;
    for (const auto& [name, spec] : alt.bindings) scope.values.emplace(name, distribution_mean(spec.distribution));
    return expr::eval(problem.objective, scope);
}

double nearest_rank(std::span<const double> sorted, int percent) {
    const auto n = static_cast<std::int64_t>(sorted.size());
    std::int64_t rank = (static_cast<std::int64_t>(percent) * n + 99) / 100;
    rank = std::clamp<std::int64_t>(rank, 1, n);
    return sorted[static_cast<std::size_t>(rank - 1)];
}

std::size_t histogram_bin_count(std::int64_t n) {
    auto root = static_cast<std::int64_t>(std::sqrt(static_cast<double>(n)));
    while (root * root < n) ++root;
    while (root > 0 && (root - 1) * (root - 1) >= n) --root;
    return static_cast<std::size_t>(std::clamp<std::int64_t>(root, 10, 200));
}

SampleStats summarize_column(std::span<const double> samples) {
    if (samples.empty()) throw std::invalid_argument("summarize of empty sample");
    SampleStats s;
    const auto n = static_cast<double>(samples.size());
    double sum = 0.0;
    for (double v : samples) sum += v;
    s.mean = sum / n;
    double ss = 0.0;
    for (double v : samples) ss += (v - s.mean) * (v - s.mean);
    s.stddev = std::sqrt(ss / n);

    std::vector<double> sorted(samples.begin(), samples.end());
    std::sort(sorted.begin(), sorted.end());
    s.min = sorted.front();
    s.max = sorted.back();
    s.p5 = nearest_rank(sorted, 5);
    s.p25 = nearest_rank(sorted, 25);
    s.p50 = nearest_rank(sorted, 50);
    s.p75 = nearest_rank(sorted, 75);
    s.p95 = nearest_rank(sorted, 95);
    if (s.min == s.max) {
        s.mean = s.min;
        s.stddev = 0.0;
    }

    const std::size_t bins = histogram_bin_count(static_cast<std::int64_t>(samples.size()));
    const double width = (s.max - s.min) / static_cast<double>(bins);
    s.histogram.resize(bins);
    for (std::size_t b = 0; b < bins; ++b) {
        s.histogram[b].lo = s.min + width * static_cast<double>(b);
        s.histogram[b].hi = b + 1 == bins ? s.max : s.min + width * static_cast<double>(b + 1);
    }
    for (double v : sorted) {
        std::size_t b = 0;
        if (width > 0.0) b = std::min(bins - 1, static_cast<std::size_t>((v - s.min) / width));
        ++s.histogram[b].count;
    }
    return s;
}

std::vector<SampleStats> summarize(const ScenarioMatrix& matrix) {
    std::vector<SampleStats> out;
    out.reserve(matrix.values.size());
    for (const auto& column : matrix.values) out.push_back(summarize_column(column));
    return out;
}

void write_csv(const ScenarioMatrix& matrix, std::ostream& out) {
    for (std::size_t a = 0; a < matrix.alternatives.size(); ++a) {
        if (a) out << ',';
        out << matrix.alternatives[a];
    }
    out << '\n';
    char buf[32];
    for (std::int64_t i = 0; i < matrix.sample_count; ++i) {
        for (std::size_t a = 0; a < matrix.values.size(); ++a) {
            if (a) out << ',';
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, matrix.values[a][static_cast<std::size_t>(i)]);
            out.write(buf, ptr - buf);
        }
        out << '\n';
    }
}

}  // namespace decisim
