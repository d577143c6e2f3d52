#include <doctest.h>

#include <atomic>
#include <fstream>
#include <sstream>
#include <thread>

#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include "decisim/replay.hpp"
#include "decisim/warehouse.hpp"
#include "support/scratch.hpp"

using namespace decisim;
namespace fs = std::filesystem;

namespace {

fs::path fresh_path(const std::string& tag) {
    static int counter = 0;
    const fs::path& dir = testing::scratch_dir("wh");
    const fs::path p = dir / (tag + "-" + std::to_string(counter++) + ".store");
    fs::remove(p);
    return p;
}

PriorRecord prior(std::string id, std::set<std::string> tags, std::string param, Distribution d,
                  std::string created = "2024-01-01T00:00:00Z") {
    return {std::move(id), std::move(tags), std::move(param), d, "test", std::move(created)};
}

DecisionProblem small_problem(std::uint64_t seed) {
    DecisionProblem p;
    p.title = "small";
    p.objective = expr::parse("a * months + b");
    p.comparison_horizon_months = 12;
    p.sample_count = 2000;
    p.seed = seed;
    for (const char* name : {"x", "y"}) {
        Alternative alt{name, 12, {}};
        alt.bindings["a"] = {"a", "USD/month", Uniform{1, 2}, UserSupplied{}};
        alt.bindings["b"] = {"b", "USD", name[0] == 'x' ? Distribution{Fixed{3}} : Distribution{Normal{0, 5, -10, 10}},
                             WarehousePrior{"b-prior"}};
        p.alternatives.push_back(alt);
    }
    return p;
}

SessionRecord session(const std::string& id, std::uint64_t seed = 1) {
    const auto p = small_problem(seed);
    return make_session_record(id, p, analyze(p), {{"user", "hello", "2024-01-01T00:00:00Z"}});
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("prior ranking") {
    Warehouse w(fresh_path("rank"));
    w.put_prior(prior("maint", {"vehicle", "maintenance"}, "maintenance_annual", Uniform{400, 600}));
    w.put_prior(prior("maint-generic", {"vehicle"}, "maintenance_annual", Uniform{300, 700}, "2025-01-01T00:00:00Z"));
    w.put_prior(prior("old", {"home"}, "maintenance_annual", Uniform{1, 2}, "2020-01-01T00:00:00Z"));
    w.put_prior(prior("new", {"home"}, "maintenance_annual", Uniform{1, 3}, "2023-01-01T00:00:00Z"));
    w.put_prior(prior("pay", {"vehicle", "maintenance"}, "monthly_payment", Uniform{350, 450}));

    auto hits = w.query_priors({"vehicle", "maintenance"}, "maintenance_annual");
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].id == "maint");
    CHECK(hits[1].id == "maint-generic");

    CHECK(w.query_priors({"aviation"}, "maintenance_annual").empty());
    CHECK(w.query_priors({}, "maintenance_annual").empty());

    hits = w.query_priors({"home"}, "maintenance_annual");
    REQUIRE(hits.size() == 2);
    CHECK(hits[0].id == "new");
    CHECK(hits[1].id == "old");

    for (int i = 0; i < 3; ++i) {
        const auto again = w.query_priors({"vehicle", "maintenance", "home"}, "maintenance_annual");
        std::vector<std::string> ids;
        for (const auto& h : again) ids.push_back(h.id);
        CHECK(ids == std::vector<std::string>{"maint", "maint-generic", "new", "old"});
    }
}

TEST_CASE("put_prior replaces by id and rejects invalid rows") {
    const auto path = fresh_path("upsert");
    {
        Warehouse w(path);
        w.put_prior(prior("p", {"vehicle"}, "x", Uniform{0, 1}));
        w.put_prior(prior("p", {"boat"}, "x", Uniform{0, 2}));
        CHECK(w.query_priors({"vehicle"}, "x").empty());
        CHECK(w.query_priors({"boat"}, "x").size() == 1);
        CHECK_THROWS(w.put_prior(prior("bad", {}, "x", Uniform{0, 1})));
        CHECK_THROWS(w.put_prior(prior("bad", {"t"}, "x", Uniform{1, 1})));
        CHECK_THROWS(w.put_prior(prior("bad", {"t"}, "Not-An-Id", Uniform{0, 1})));
    }
    Warehouse w(path);
    CHECK(w.recovered_tail_entries() == 0);
    REQUIRE(w.priors().size() == 1);
    CHECK(std::get<Uniform>(w.priors()[0].distribution).hi == 2);
}

TEST_CASE("sessions persist with feedback") {
    const auto path = fresh_path("sessions");
    {
        Warehouse w(path);
        CHECK(w.record_session(session("s1")) == "s1");
        CHECK_THROWS_AS(w.record_session(session("s1")), DuplicateId);
        CHECK_THROWS_AS(w.attach_feedback("nope", {5, "x"}), UnknownId);
        CHECK_THROWS(w.attach_feedback("s1", {9, "x"}));
        const auto updated = w.attach_feedback("s1", {std::nullopt, "The process was smooth and informative."});
        REQUIRE(updated.feedback);
        CHECK_FALSE(updated.feedback->rating);
    }
    Warehouse w(path);
    const auto s = w.find_session("s1");
    REQUIRE(s);
    REQUIRE(s->feedback);
    CHECK_FALSE(s->feedback->rating.has_value());
    CHECK(s->feedback->text == "The process was smooth and informative.");
    CHECK(s->transcript.size() == 1);
    CHECK(s->seed == 1);
    CHECK(s->sample_count == 2000);
    CHECK(s->objective == "a * months + b");
    CHECK_FALSE(slurp(path).find("\"rating\"") != std::string::npos);
}

TEST_CASE("stored sessions replay to identical reports after reopening") {
    const auto path = fresh_path("replay");
    {
        Warehouse w(path);
        for (std::uint64_t seed = 0; seed < 5; ++seed) w.record_session(session("r" + std::to_string(seed), seed));
    }
    Warehouse w(path, Warehouse::Mode::ReadOnly);
    REQUIRE(w.sessions().size() == 5);
    for (const auto& s : w.sessions()) {
        CHECK(replay_matches(s));
        CHECK(report_to_string(replay(s)) == s.report.dump(2));
    }
    auto tampered = w.sessions().front();
    tampered.seed += 1;
    CHECK_FALSE(replay_matches(tampered));
}

TEST_CASE("a torn or corrupt tail is cut back to the last valid entry") {
    const auto path = fresh_path("torn");
    {
        Warehouse w(path);
        w.put_prior(prior("a", {"t"}, "x", Uniform{0, 1}));
        w.put_prior(prior("b", {"t"}, "x", Uniform{0, 2}));
    }
    const auto intact = slurp(path);
    {
        std::ofstream out(path, std::ios::app | std::ios::binary);
        out << "0badc0de {\"op\":\"put_prior\",\"row\":{\"id\":\"c\"";  // no newline: torn write
    }
    {
        Warehouse w(path);
        CHECK(w.recovered_tail_entries() == 1);
        CHECK(w.priors().size() == 2);
        CHECK(slurp(path) == intact);
        w.put_prior(prior("d", {"t"}, "x", Uniform{0, 3}));
    }
    {
        Warehouse w(path);
        CHECK(w.recovered_tail_entries() == 0);
        CHECK(w.priors().size() == 3);
    }

    // Flip one payload byte of the last entry: its checksum no longer matches.
    auto bytes = slurp(path);
    bytes[bytes.size() - 5] ^= 0x01;
    {
        std::ofstream out(path, std::ios::trunc | std::ios::binary);
        out << bytes;
    }
    Warehouse w(path);
    CHECK(w.recovered_tail_entries() == 1);
    CHECK(w.priors().size() == 2);
}

TEST_CASE("modes and locking") {
    const auto path = fresh_path("modes");
    CHECK_THROWS_AS((Warehouse{path, Warehouse::Mode::ReadOnly}), StoreUnavailable);
    {
        Warehouse writer(path);
        CHECK_THROWS_AS(Warehouse{path}, StoreUnavailable);
        writer.put_prior(prior("a", {"t"}, "x", Uniform{0, 1}));
        Warehouse reader(path, Warehouse::Mode::ReadOnly);
        CHECK(reader.priors().size() == 1);
        CHECK_THROWS_AS(reader.put_prior(prior("b", {"t"}, "x", Uniform{0, 1})), StoreUnavailable);
    }
    Warehouse again(path);
    CHECK(again.priors().size() == 1);

    const auto junk = fresh_path("junk");
    {
        std::ofstream out(junk);
        out << "not a store\n";
    }
    CHECK_THROWS_AS(Warehouse{junk}, StoreUnavailable);
}

TEST_CASE("export and import round trip") {
    const auto src = fresh_path("export");
    std::string dump;
    {
        Warehouse w(src);
        w.put_prior(prior("m", {"vehicle", "maintenance"}, "maintenance_annual", Uniform{400, 600}));
        w.record_session(session("e1"));
        w.attach_feedback("e1", {4, "ok"});
        std::ostringstream out;
        w.export_jsonl(out);
        dump = out.str();
    }
    CHECK(std::count(dump.begin(), dump.end(), '\n') == 2);

    const auto dst = fresh_path("import");
    Warehouse w(dst);
    std::istringstream in(dump);
    CHECK(w.import_jsonl(in) == 2);
    std::istringstream again(dump);
    CHECK(w.import_jsonl(again) == 1);  // the session is already present
    std::ostringstream out;
    w.export_jsonl(out);
    CHECK(out.str() == dump);
    CHECK(w.find_session("e1")->feedback->rating == 4);

    std::istringstream bad("{\"kind\":\"table\",\"row\":{}}\n");
    CHECK_THROWS(w.import_jsonl(bad));
}

TEST_CASE("starter priors import cleanly") {
    Warehouse w(fresh_path("starter"));
    std::ifstream in(std::string(DECISIM_DATA_DIR) + "/priors/starter_priors.jsonl");
    REQUIRE(in);
    CHECK(w.import_jsonl(in) == 4);
    const auto hits = w.query_priors({"vehicle", "maintenance"}, "maintenance_annual");
    REQUIRE(hits.size() == 1);
    CHECK(std::get<Uniform>(hits[0].distribution).lo == 400);
    CHECK(std::get<Uniform>(hits[0].distribution).hi == 600);
}

TEST_CASE("acknowledged sessions survive a killed writer") {
    const auto path = fresh_path("crash");
    int fds[2];
    REQUIRE(::pipe(fds) == 0);
    const pid_t child = ::fork();
    REQUIRE(child >= 0);
    if (child == 0) {
        ::close(fds[0]);
        Warehouse w(path);
        for (int i = 0;; ++i) {
            SessionRecord r;
            r.id = "c" + std::to_string(i);
            r.problem = {{"n", i}};
            r.report = {{"i", i}};
            r.objective = "x";
            r.seed = static_cast<std::uint64_t>(i);
            r.sample_count = 1;
            w.record_session(r);
            const std::string ack = r.id + "\n";
            if (::write(fds[1], ack.data(), ack.size()) < 0) ::_exit(1);
        }
    }
    ::close(fds[1]);
    std::vector<std::string> acked;
    std::string buf;
    char c;
    while (acked.size() < 40 && ::read(fds[0], &c, 1) == 1) {
        if (c == '\n') {
            acked.push_back(buf);
            buf.clear();
        } else {
            buf += c;
        }
    }
    ::kill(child, SIGKILL);
    int status = 0;
    ::waitpid(child, &status, 0);
    ::close(fds[0]);
    CHECK(WIFSIGNALED(status));

    Warehouse w(path);
    REQUIRE(acked.size() == 40);
    for (const auto& id : acked) CHECK(w.find_session(id).has_value());
    CHECK(w.sessions().size() >= acked.size());
}

TEST_CASE("readers see consistent snapshots during writes") {
    Warehouse w(fresh_path("readers"));
    std::atomic<bool> done{false};
    std::atomic<int> bad{0};
    std::vector<std::thread> readers;
    for (int t = 0; t < 3; ++t) {
        readers.emplace_back([&] {
            std::size_t last = 0;
            while (!done) {
                const auto n = w.query_priors({"t"}, "x").size();
                if (n < last) ++bad;
                last = n;
            }
        });
    }
    for (int i = 0; i < 200; ++i) w.put_prior(prior("p" + std::to_string(i), {"t"}, "x", Uniform{0, 1}));
    done = true;
    for (auto& r : readers) r.join();
    CHECK(bad == 0);
    CHECK(w.query_priors({"t"}, "x").size() == 200);
}
