// decisim: batch front end for problem files, the warehouse, and the HTTP service.

#include <csignal>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "decisim/optimizer.hpp"
#include "decisim/problem_json.hpp"
#include "decisim/replay.hpp"
#include "decisim/service.hpp"
#include "decisim/simengine.hpp"
#include "decisim/warehouse.hpp"

using namespace decisim;

namespace {

constexpr int kExitIo = 1;
constexpr int kExitInvalid = 2;

struct Failure {
    int code;
    std::string message;
};

std::string fixed2(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f", v);
    return buf;
}

std::string pct(double p) { return fixed2(100.0 * p) + "%"; }

DecisionProblem load_or_fail(const std::string& file) {
    try {
        return load_problem(file);
    } catch (const FormatError& e) {
        throw Failure{kExitIo, file + ": " + e.what()};
    } catch (const std::exception& e) {
        throw Failure{kExitIo, e.what()};
    }
}

void require_valid(const DecisionProblem& problem) {
    const auto violations = validate_problem(problem);
    if (violations.empty()) return;
    for (const auto& v : violations) std::cerr << v.code << " at " << v.path << ": " << v.message << '\n';
    throw Failure{kExitInvalid, ""};
}

void print_sensitivity(const ComparisonReport& report, std::ostream& out) {
    for (const auto& row : report.sensitivity) {
        out << "sensitivity " << row.alternative << " (variance " << fixed2(row.variance)
            << (row.zero_variance ? ", constant" : "") << ")\n";
        for (const auto& c : row.contributions)
            out << "  " << c.parameter << std::string(c.parameter.size() < 22 ? 22 - c.parameter.size() : 1, ' ')
                << fixed2(c.fraction) << '\n';
    }
}

void print_text(const DecisionProblem& problem, const ComparisonReport& report, std::ostream& out) {
    out << problem.title << '\n';
    out << "horizon " << report.horizon_months << " months, " << report.sample_count << " scenarios, seed "
        << report.seed << ", " << to_string(report.direction) << "\n\n";

    std::size_t width = 11;
    for (const auto& a : report.alternatives) width = std::max(width, a.name.size() + 2);
    auto col = [](const std::string& s, std::size_t w) { return std::string(w > s.size() ? w - s.size() : 1, ' ') + s; };

    out << std::string("alternative") + std::string(width - 11, ' ');
    for (const char* h : {"expected", "stddev", "p5", "p50", "p95", "P(best)"}) out << col(h, 12);
    out << '\n';
    for (const auto& a : report.alternatives) {
        out << a.name << std::string(width - a.name.size(), ' ');
        for (double v : {a.stats.mean, a.stats.stddev, a.stats.p5, a.stats.p50, a.stats.p95})
            out << col(fixed2(v), 12);
        out << col(pct(a.best_probability), 12) << '\n';
    }
    out << '\n';
    for (const auto& a : report.alternatives)
        for (const auto& b : report.alternatives)
            if (a.name != b.name)
                out << "P(" << a.name << " beats " << b.name << ") = " << pct(report.win_probability(a.name, b.name))
                    << '\n';
    out << '\n';
    const Narrative& n = report.narrative;
    out << "recommendation: " << n.recommendation << " (confidence " << pct(n.confidence) << ")\n";
    if (!n.runner_up.empty()) out << "expected margin over " << n.runner_up << ": " << fixed2(n.expected_margin) << '\n';
    for (const auto& c : n.caveats) out << "caveat: " << c << '\n';
    if (!report.sensitivity.empty()) {
        out << '\n';
        print_sensitivity(report, out);
    }
}

std::filesystem::path store_path(const std::string& flag) {
    if (!flag.empty()) return flag;
    if (const char* env = std::getenv("DECISIM_STORE"); env && *env) return env;
    throw Failure{kExitIo, "no store given: pass --store or set DECISIM_STORE"};
}

std::unique_ptr<Warehouse> open_store(const std::filesystem::path& path, Warehouse::Mode mode) {
    try {
        return std::make_unique<Warehouse>(path, mode);
    } catch (const std::exception& e) {
        throw Failure{kExitIo, e.what()};
    }
}

int serve(const std::string& host, int port, const std::string& templates, const std::string& store_flag,
          const std::string& llm_endpoint, const std::string& llm_model, unsigned workers) {
    std::unique_ptr<Warehouse> store;
    std::string store_arg = store_flag;
    if (store_arg.empty())
        if (const char* env = std::getenv("DECISIM_STORE"); env && *env) store_arg = env;
    if (!store_arg.empty()) store = open_store(store_arg, Warehouse::Mode::ReadWrite);

    ServiceConfig config;
    config.template_dir = templates;
    config.store = store.get();
    config.workers = workers;
    config.log = &std::cout;
    if (!llm_endpoint.empty()) {
        dialog::LlmConfig llm;
        llm.endpoint = llm_endpoint;
        if (!llm_model.empty()) llm.model = llm_model;
        config.llm = llm;
    }

    // Signals are taken synchronously on a helper thread so stop() runs outside a handler.
    sigset_t signals;
    sigemptyset(&signals);
    sigaddset(&signals, SIGINT);
    sigaddset(&signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &signals, nullptr);

    Service service(std::move(config));
    int bound;
    try {
        bound = service.bind(host, port);
    } catch (const std::exception& e) {
        throw Failure{kExitIo, e.what()};
    }
    if (bound < 0) throw Failure{kExitIo, "cannot bind " + host};
    std::cerr << "listening on http://" << host << ':' << bound << '\n';

    std::thread waiter([&] {
        int sig = 0;
        sigwait(&signals, &sig);
        service.stop();
    });
    service.serve();
    // serve() also returns on listen failure; wake the waiter either way.
    pthread_kill(waiter.native_handle(), SIGTERM);
    waiter.join();
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Monte Carlo decision analysis"};
    app.require_subcommand(1);

    std::string problem_file;
    std::optional<std::uint64_t> seed;
    std::optional<std::int64_t> samples;
    std::string format = "text";
    unsigned workers = 0;

    auto* run = app.add_subcommand("run", "simulate a problem file and print the comparison report");
    run->add_option("problem", problem_file, "problem JSON file")->required();
    run->add_option("--seed", seed, "override the problem seed");
    run->add_option("--samples", samples, "override the scenario count")->check(CLI::PositiveNumber);
    run->add_option("--format", format, "text, json, or csv")->check(CLI::IsMember({"text", "json", "csv"}));
    run->add_option("--workers", workers, "simulation threads (0 = all cores)");

    auto* validate = app.add_subcommand("validate", "check a problem file");
    validate->add_option("problem", problem_file, "problem JSON file")->required();

    std::string sens_format = "text";
    auto* sens = app.add_subcommand("sensitivity", "first-order variance contributions per alternative");
    sens->add_option("problem", problem_file, "problem JSON file")->required();
    sens->add_option("--seed", seed, "override the problem seed");
    sens->add_option("--samples", samples, "override the scenario count")->check(CLI::PositiveNumber);
    sens->add_option("--format", sens_format, "text or json")->check(CLI::IsMember({"text", "json"}));
    sens->add_option("--workers", workers, "simulation threads (0 = all cores)");

    std::string store_flag;
    std::string io_file;
    auto* wh = app.add_subcommand("warehouse", "priors and session log");
    wh->require_subcommand(1);
    wh->add_option("--store", store_flag, "store file (default $DECISIM_STORE)");
    auto* wh_import = wh->add_subcommand("import", "append rows from a JSON-lines file");
    wh_import->add_option("file", io_file, "JSON-lines input")->required();
    auto* wh_export = wh->add_subcommand("export", "write all rows as JSON lines ('-' for stdout)");
    wh_export->add_option("file", io_file, "JSON-lines output")->required();
    auto* wh_verify = wh->add_subcommand("verify", "re-simulate every stored session and compare reports");

    std::string host = "127.0.0.1";
    int port = 8080;
    std::string templates = DECISIM_DEFAULT_TEMPLATES;
    std::string llm_endpoint;
    std::string llm_model;
    if (const char* env = std::getenv("DECISIM_LLM_ENDPOINT")) llm_endpoint = env;
    auto* srv = app.add_subcommand("serve", "run the HTTP API");
    srv->add_option("--host", host, "bind address");
    srv->add_option("--port", port, "port (0 picks a free one)");
    srv->add_option("--templates", templates, "template directory");
    srv->add_option("--store", store_flag, "store file (default $DECISIM_STORE)");
    srv->add_option("--llm-endpoint", llm_endpoint, "chat-completion URL (default $DECISIM_LLM_ENDPOINT)");
    srv->add_option("--llm-model", llm_model, "model name for the LLM backend");
    srv->add_option("--workers", workers, "simulation threads (0 = all cores)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        // Help and version exit 0; bad arguments count as invalid input.
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitInvalid;
    }

    try {
        if (*run || *sens) {
            DecisionProblem problem = load_or_fail(problem_file);
            if (seed) problem.seed = *seed;
            if (samples) problem.sample_count = *samples;
            require_valid(problem);
            SimulationOptions sim{workers};

            if (*run && format == "csv") {
                write_csv(simulate(problem, sim), std::cout);
                return 0;
            }
            AnalysisOptions options;
            options.simulation = sim;
            const ComparisonReport report = analyze(problem, options);
            if (*run) {
                if (format == "json") std::cout << report_to_string(report) << '\n';
                else print_text(problem, report, std::cout);
            } else if (sens_format == "json") {
                std::cout << report_to_json(report)["sensitivity"].dump(2) << '\n';
            } else {
                print_sensitivity(report, std::cout);
            }
            return 0;
        }
        if (*validate) {
            const DecisionProblem problem = load_or_fail(problem_file);
            const auto violations = validate_problem(problem);
            for (const auto& v : violations) std::cout << v.code << " at " << v.path << ": " << v.message << '\n';
            if (violations.empty()) std::cout << "ok\n";
            return violations.empty() ? 0 : kExitInvalid;
        }
        if (*wh) {
            const auto path = store_path(store_flag);
            if (*wh_import) {
                std::ifstream in(io_file);
                if (!in) throw Failure{kExitIo, "cannot open " + io_file};
                auto store = open_store(path, Warehouse::Mode::ReadWrite);
                std::size_t n;
                try {
                    n = store->import_jsonl(in);
                } catch (const std::exception& e) {
                    throw Failure{kExitIo, io_file + ": " + e.what()};
                }
                std::cerr << "imported " << n << " rows\n";
            } else if (*wh_export) {
                auto store = open_store(path, Warehouse::Mode::ReadOnly);
                if (io_file == "-") {
                    store->export_jsonl(std::cout);
                } else {
                    std::ofstream out(io_file);
                    if (!out) throw Failure{kExitIo, "cannot write " + io_file};
                    store->export_jsonl(out);
                    if (!out.flush()) throw Failure{kExitIo, "write failed: " + io_file};
                }
            } else if (*wh_verify) {
                auto store = open_store(path, Warehouse::Mode::ReadOnly);
                std::size_t bad = 0;
                const auto sessions = store->sessions();
                for (const auto& s : sessions) {
                    const bool ok = replay_matches(s);
                    bad += !ok;
                    std::cout << (ok ? "ok       " : "MISMATCH ") << s.id << '\n';
                }
                std::cout << sessions.size() - bad << '/' << sessions.size() << " sessions replay identically\n";
                return bad == 0 ? 0 : kExitInvalid;
            }
            return 0;
        }
        if (*srv) return serve(host, port, templates, store_flag, llm_endpoint, llm_model, workers);
    } catch (const Failure& f) {
        if (!f.message.empty()) std::cerr << "decisim: " << f.message << '\n';
        return f.code;
    } catch (const PreconditionError& e) {
        std::cerr << "decisim: " << e.what() << '\n';
        return kExitInvalid;
    } catch (const std::exception& e) {
        std::cerr << "decisim: " << e.what() << '\n';
        return kExitIo;
    }
    return 0;
}
