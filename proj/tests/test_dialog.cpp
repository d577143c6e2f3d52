#include <doctest.h>

#include <cstdlib>
#include <deque>
#include <functional>
#include <mutex>
#include <thread>

#include <httplib.h>
#include <unistd.h>

#include "decisim/dialog.hpp"
#include "support/scratch.hpp"

using namespace decisim;
using namespace decisim::dialog;
namespace fs = std::filesystem;

namespace {

const std::vector<std::string> kTranscript = {
    "I'm trying to decide if I should buy or lease a car. Can you help me figure out the best option?",
    "I drive about 15,000 miles a year. My budget for monthly payments is around $400. I prefer a new car with good "
    "fuel efficiency.",
    "If I buy, I plan to keep the car for about 5 years. I can make a down payment of $3,000, and I estimate annual "
    "maintenance costs at $500. For leasing, I’m considering a 3-year term with an allowance of 12,000 miles per "
    "year, and the overage charge is 15 cents per mile.",
};

const std::map<std::string, double> kExpected = {
    {"annual_miles", 15000},   {"monthly_budget", 400},  {"ownership_months", 60},    {"down_payment", 3000},
    {"maintenance_annual", 500}, {"lease_term_months", 36}, {"mileage_allowance", 12000}, {"overage_rate", 0.15},
};

// One utterance per slot, each matched by exactly one template rule.
const std::vector<std::pair<std::string, std::string>> kPhrases = {
    {"annual_miles", "I drive 15,000 miles a year."},
    {"monthly_budget", "My budget is $400."},
    {"ownership_months", "I would keep it 5 years."},
    {"down_payment", "$3,000 down."},
    {"maintenance_annual", "$500 maintenance."},
    {"lease_term_months", "A 36-month term."},
    {"mileage_allowance", "An allowance of 12,000 miles."},
    {"overage_rate", "Overage is 15 cents."},
};
const std::string kNoise = "I prefer a new car with good fuel efficiency.";

std::shared_ptr<const SlotSchema> car_schema() {
    static const auto schema = std::make_shared<const SlotSchema>(
        load_template_by_id(fs::path(DECISIM_DATA_DIR) / "templates", "two_option_cost_comparison"));
    return schema;
}

DialogState run(const std::vector<std::string>& utterances, AgentBackend& backend) {
    DialogState s = start_session(car_schema(), "test", backend);
    for (const auto& u : utterances) s = advance(std::move(s), u, backend).state;
    return s;
}

fs::path fresh_store() {
    static int counter = 0;
    const fs::path& dir = testing::scratch_dir("dialog");
    const fs::path p = dir / ("s" + std::to_string(counter++) + ".store");
    fs::remove(p);
    return p;
}

void load_starter_priors(Warehouse& w) {
    std::ifstream in(std::string(DECISIM_DATA_DIR) + "/priors/starter_priors.jsonl");
    REQUIRE(in);
    w.import_jsonl(in);
}

// Independent restatement of the invariants a state must satisfy after any step.
void check_invariants(const DialogState& s) {
    std::vector<std::string> expect_pending;
    for (const Slot& slot : s.schema->slots)
        if (slot.required && !s.filled.contains(slot.name)) expect_pending.push_back(slot.name);
    CHECK(s.pending == expect_pending);
    if (s.phase != Phase::Closed) CHECK((s.phase == Phase::ReadyToSimulate) == s.pending.empty());
    for (const auto& [name, f] : s.filled) CHECK(s.schema->find_slot(name) != nullptr);
}

class MockLlm {
public:
    MockLlm() {
        server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
            std::lock_guard lock(mutex_);
            requests_.push_back(req.body);
            auth_ = req.get_header_value("Authorization");
            if (replies_.empty()) {
                res.status = 200;
                res.set_content(R"({"choices":[{"message":{"content":"{}"}}]})", "application/json");
                return;
            }
            auto [status, content] = replies_.front();
            replies_.pop_front();
            res.status = status;
            res.set_content(Json{{"choices", {{{"message", {{"content", content}}}}}}}.dump(), "application/json");
        });
        port_ = server_.bind_to_any_port("127.0.0.1");
        thread_ = std::thread([this] { server_.listen_after_bind(); });
        server_.wait_until_ready();
    }
    ~MockLlm() {
        server_.stop();
        thread_.join();
    }

    void reply(int status, std::string content) {
        std::lock_guard lock(mutex_);
        replies_.emplace_back(status, std::move(content));
    }
    std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1/chat/completions"; }
    std::vector<std::string> requests() {
        std::lock_guard lock(mutex_);
        return requests_;
    }
    std::string auth() {
        std::lock_guard lock(mutex_);
        return auth_;
    }

private:
    httplib::Server server_;
    int port_ = 0;
    std::thread thread_;
    std::mutex mutex_;
    std::deque<std::pair<int, std::string>> replies_;
    std::vector<std::string> requests_;
    std::string auth_;
};

std::unique_ptr<AgentBackend> make_llm(const std::string& endpoint) {
    ::setenv("DECISIM_LLM_API_KEY", "test-key", 1);
    LlmConfig config;
    config.endpoint = endpoint;
    config.timeout = std::chrono::seconds(5);
    return llm_backend(config);
}

}  // namespace

TEST_CASE("quantity normalization") {
    CHECK(normalize_quantity(SlotKind::Money, "$3,000") == 3000);
    CHECK(normalize_quantity(SlotKind::Money, "$ 1,234.50") == 1234.5);
    CHECK(normalize_quantity(SlotKind::Rate, "15 cents") == doctest::Approx(0.15));
    CHECK(normalize_quantity(SlotKind::Rate, "$0.25") == 0.25);
    CHECK(normalize_quantity(SlotKind::Months, "5 years") == 60);
    CHECK(normalize_quantity(SlotKind::Months, "3-year") == 36);
    CHECK(normalize_quantity(SlotKind::Months, "36 months") == 36);
    CHECK(normalize_quantity(SlotKind::Miles, "15k") == 15000);
    CHECK(normalize_quantity(SlotKind::Miles, "12,000") == 12000);
    CHECK_FALSE(normalize_quantity(SlotKind::Money, "about five"));
    CHECK_FALSE(normalize_quantity(SlotKind::Money, "5 years"));
    CHECK_FALSE(normalize_quantity(SlotKind::Money, "."));

    CHECK(format_quantity(SlotKind::Money, 3000) == "$3,000");
    CHECK(format_quantity(SlotKind::Miles, 15000) == "15,000 miles");
    CHECK(format_quantity(SlotKind::Rate, 0.15) == "$0.15");
    CHECK(format_quantity(SlotKind::Months, 60) == "60 months");
}

TEST_CASE("comparison horizon") {
    CHECK(comparison_horizon({{60, false}, {36, true}}) == 72);
    CHECK(comparison_horizon({{60, false}, {60, true}}) == 60);
    CHECK(comparison_horizon({{36, true}, {24, true}}) == 72);
    CHECK(comparison_horizon({{12, false}, {5, false}}) == 12);
}

TEST_CASE("the car transcript fills every slot through the scripted backend") {
    auto backend = scripted_backend();
    DialogState s = start_session(car_schema(), "t", *backend);
    REQUIRE(s.transcript.size() == 1);
    CHECK(s.transcript[0].speaker == "agent");
    CHECK(s.phase == Phase::Collecting);

    s = advance(std::move(s), kTranscript[0], *backend).state;
    CHECK(s.filled.empty());

    auto step = advance(std::move(s), kTranscript[1], *backend);
    s = std::move(step.state);
    CHECK(s.filled.size() == 2);
    CHECK(s.filled.at("annual_miles").value == 15000);
    CHECK(s.filled.at("monthly_budget").value == 400);
    CHECK(s.pending.front() == "ownership_months");
    check_invariants(s);

    step = advance(std::move(s), kTranscript[2], *backend);
    s = std::move(step.state);
    CHECK(s.phase == Phase::ReadyToSimulate);
    CHECK(s.pending.empty());
    REQUIRE(s.filled.size() == kExpected.size());
    for (const auto& [slot, value] : kExpected) CHECK(s.filled.at(slot).value == doctest::Approx(value));
    CHECK(s.transcript.size() == 7);
    CHECK(step.reply.find("everything I need") != std::string::npos);
}

TEST_CASE("a combined utterance fills three slots") {
    auto backend = scripted_backend();
    const auto s = run({"$3,000 down, keep it 5 years, $500 maintenance"}, *backend);
    CHECK(s.filled.size() == 3);
    CHECK(s.filled.at("down_payment").value == 3000);
    CHECK(s.filled.at("ownership_months").value == 60);
    CHECK(s.filled.at("maintenance_annual").value == 500);
}

TEST_CASE("a lone quantity answers the open question") {
    auto backend = scripted_backend();
    const auto s = run({"I drive 15,000 miles a year."}, *backend);
    REQUIRE(s.pending.front() == "monthly_budget");
    const auto candidates = backend->extract(s, "around $400");
    REQUIRE(candidates.size() == 1);
    CHECK(candidates[0].slot == "monthly_budget");
    CHECK(candidates[0].value == 400);
    CHECK(candidates[0].confidence == 1.0);
}

TEST_CASE("an utterance without quantities only extends the transcript") {
    auto backend = scripted_backend();
    const auto before = run({kTranscript[1]}, *backend);
    const auto step = advance(before, kNoise, *backend);
    CHECK(step.state.filled.size() == before.filled.size());
    CHECK(step.state.pending == before.pending);
    CHECK(step.state.phase == before.phase);
    CHECK(step.state.transcript.size() == before.transcript.size() + 2);
    CHECK(step.reply == car_schema()->find_slot(before.pending.front())->prompt);
}

TEST_CASE("low confidence asks for confirmation") {
    auto backend = scripted_backend({{"annual_miles", R"((\d[\d,]*)\s*miles)", 0.5}});
    auto step = advance(start_session(car_schema(), "c", *backend), "maybe 15,000 miles", *backend);
    CHECK_FALSE(step.state.filled.contains("annual_miles"));
    REQUIRE(step.state.confirming);
    CHECK(step.reply.find("confirm") != std::string::npos);

    auto yes = advance(step.state, "yes", *backend);
    CHECK(yes.state.filled.at("annual_miles").value == 15000);
    CHECK_FALSE(yes.state.confirming);

    auto no = advance(step.state, "no", *backend);
    CHECK_FALSE(no.state.filled.contains("annual_miles"));
    CHECK_FALSE(no.state.confirming);

    // A lone number inside a long sentence is not trusted outright.
    auto lone = scripted_backend();
    const auto s = start_session(car_schema(), "l", *lone);
    const auto c = lone->extract(s, "well I am not really sure but probably something like 14000 or so");
    REQUIRE(c.size() == 1);
    CHECK(c[0].confidence < kAutoFillConfidence);
}

TEST_CASE("conflicting values ask for clarification") {
    auto backend = scripted_backend();
    const auto s = run({"I drive 15,000 miles a year."}, *backend);
    const auto step = advance(s, "My budget is $400. Maybe $450 a month.", *backend);
    CHECK_FALSE(step.state.filled.contains("monthly_budget"));
    CHECK(step.reply.find("more than one value") != std::string::npos);
    check_invariants(step.state);
}

TEST_CASE("slot completeness holds over every short script") {
    auto backend = scripted_backend();
    std::vector<std::string> alphabet;
    for (const auto& [slot, phrase] : kPhrases) alphabet.push_back(phrase);
    alphabet.push_back(kNoise);

    std::function<void(const DialogState&, int)> explore = [&](const DialogState& s, int depth) {
        check_invariants(s);
        if (s.pending.empty()) {
            CHECK_NOTHROW(build_problem(s, nullptr));
        } else {
            try {
                build_problem(s, nullptr);
                FAIL("incomplete state built a problem");
            } catch (const IncompleteSlots& e) {
                CHECK(e.missing() == s.pending);
            }
        }
        if (depth == 0) return;
        for (const auto& u : alphabet) {
            const auto next = advance(s, u, *backend).state;
            CHECK(next.transcript.size() == s.transcript.size() + 2);
            CHECK(std::equal(s.transcript.begin(), s.transcript.end(), next.transcript.begin()));
            CHECK(next.filled.size() >= s.filled.size());
            explore(next, depth - 1);
        }
    };
    explore(start_session(car_schema(), "m", *backend), 3);

    // Every subset of answers, given in any rotation, completes exactly when it covers all slots.
    for (unsigned mask = 0; mask < (1u << kPhrases.size()); ++mask) {
        std::vector<std::string> script;
        for (std::size_t i = 0; i < kPhrases.size(); ++i)
            if (mask & (1u << i)) script.push_back(kPhrases[(i + mask) % kPhrases.size()].second);
        std::sort(script.begin(), script.end());
        script.erase(std::unique(script.begin(), script.end()), script.end());
        const auto s = run(script, *backend);
        check_invariants(s);
        CHECK((s.phase == Phase::ReadyToSimulate) == (script.size() == kPhrases.size()));
    }
}

TEST_CASE("built problem from the transcript") {
    auto backend = scripted_backend();
    const auto s = run(kTranscript, *backend);

    const auto plain = build_problem(s, nullptr);
    CHECK(plain.comparison_horizon_months == 72);
    CHECK(plain.sample_count == 100000);
    CHECK(plain.seed == 42);
    REQUIRE(plain.alternatives.size() == 2);
    CHECK(plain.alternatives[0].name == "buy");
    CHECK(plain.alternatives[0].term_months == 60);
    CHECK(plain.alternatives[1].term_months == 36);
    for (const auto& alt : plain.alternatives)
        for (const auto& [name, spec] : alt.bindings) CHECK(is_fixed(spec.distribution));
    CHECK(std::get<Fixed>(plain.alternatives[1].bindings.at("payment_months").distribution).value == 72);
    CHECK(validate_problem(plain).empty());

    Warehouse store(fresh_store());
    load_starter_priors(store);
    const auto p = build_problem(s, &store);
    const auto& maint = p.alternatives[0].bindings.at("maintenance_annual");
    REQUIRE(std::holds_alternative<Uniform>(maint.distribution));
    CHECK(std::get<Uniform>(maint.distribution).lo == 400);
    CHECK(std::get<Uniform>(maint.distribution).hi == 600);
    REQUIRE(std::holds_alternative<WarehousePrior>(maint.provenance));
    CHECK(std::get<WarehousePrior>(maint.provenance).record_id == "vehicle-maintenance-annual");
    CHECK(std::holds_alternative<UserSupplied>(p.alternatives[0].bindings.at("down_payment").provenance));
    const auto& overage = p.alternatives[1].bindings.at("overage_rate").distribution;
    CHECK(distribution_mean(overage) == doctest::Approx(0.15));
}

TEST_CASE("truncated transcripts are incomplete") {
    auto backend = scripted_backend();
    const auto two = run({kTranscript[0], kTranscript[1]}, *backend);
    CHECK_THROWS_AS(build_problem(two, nullptr), IncompleteSlots);

    const std::string buy_half = kTranscript[2].substr(0, kTranscript[2].find("For leasing"));
    const auto s = run({kTranscript[0], kTranscript[1], buy_half}, *backend);
    CHECK(s.phase == Phase::Collecting);
    CHECK(s.pending == std::vector<std::string>{"lease_term_months", "mileage_allowance", "overage_rate"});
    try {
        build_problem(s, nullptr);
        FAIL("expected IncompleteSlots");
    } catch (const IncompleteSlots& e) {
        CHECK(e.missing() == s.pending);
    }
}

TEST_CASE("closed sessions reject input") {
    auto backend = scripted_backend();
    auto s = run(kTranscript, *backend);
    close_session(s);
    CHECK_THROWS_AS(advance(s, "hello", *backend), SessionClosed);
    CHECK_THROWS_AS(fill_slot(s, "annual_miles", 1, "1"), SessionClosed);
    CHECK_THROWS_AS(fill_slot(s, "no_such_slot", 1, "1"), std::invalid_argument);
}

TEST_CASE("optional slots fall back to priors, defaults, or fail") {
    Json t = {
        {"template_id", "tiny"},
        {"title", "tiny"},
        {"objective", "a * months + b"},
        {"slots",
         {{{"name", "a"}, {"prompt", "a?"}, {"kind", "money"}},
          {{"name", "b"}, {"prompt", "b?"}, {"kind", "money"}, {"required", false}, {"prior_tags", {"tiny"}}}}},
        {"alternatives",
         {{{"name", "x"}, {"term", {{"value", 12}}}, {"bindings", {{"a", {{"slot", "a"}}}, {"b", {{"slot", "b"}}}}}},
          {{"name", "y"}, {"term", {{"value", 12}}}, {"bindings", {{"a", {{"slot", "a"}}}, {"b", {{"value", 7}}}}}}}},
    };
    auto schema = std::make_shared<const SlotSchema>(template_from_json(t));
    auto backend = scripted_backend();
    DialogState s = start_session(schema, "o", *backend);
    fill_slot(s, "a", 2, "2");
    CHECK(s.phase == Phase::ReadyToSimulate);
    try {
        build_problem(s, nullptr);
        FAIL("expected PriorUnavailable");
    } catch (const PriorUnavailable& e) {
        CHECK(e.parameter() == "b");
    }

    Warehouse store(fresh_store());
    store.put_prior({"tiny-b", {"tiny"}, "b", Uniform{1, 3}, "test", "2024-01-01T00:00:00Z"});
    const auto p = build_problem(s, &store);
    CHECK(std::get<Uniform>(p.alternatives[0].bindings.at("b").distribution).hi == 3);
    CHECK(std::get<Fixed>(p.alternatives[1].bindings.at("b").distribution).value == 7);

    t["slots"][1]["default"] = 5;
    DialogState d = start_session(std::make_shared<const SlotSchema>(template_from_json(t)), "d", *backend);
    fill_slot(d, "a", 2, "2");
    CHECK(std::get<Fixed>(build_problem(d, nullptr).alternatives[0].bindings.at("b").distribution).value == 5);

    Json bad = t;
    bad["alternatives"][1]["bindings"].erase("a");
    CHECK_THROWS_AS(template_from_json(bad), TemplateError);
    bad = t;
    bad["extraction_rules"] = {{{"slot", "zzz"}, {"pattern", "x"}}};
    CHECK_THROWS_AS(template_from_json(bad), TemplateError);
    bad = t;
    bad["extraction_rules"] = {{{"slot", "a"}, {"pattern", "("}}};
    CHECK_THROWS_AS(template_from_json(bad), TemplateError);
}

TEST_CASE("llm replies: JSON fills, prose degrades, outages apologize") {
    MockLlm mock;
    auto backend = make_llm(mock.endpoint());
    auto s = start_session(car_schema(), "llm", *backend);

    mock.reply(200, R"({"annual_miles": 15000, "not_a_slot": 3})");
    auto step = advance(s, "I drive about 15,000 miles a year.", *backend);
    CHECK(step.state.filled.at("annual_miles").value == 15000);
    CHECK(step.state.filled.size() == 1);
    CHECK(mock.auth() == "Bearer test-key");
    const Json sent = Json::parse(mock.requests().back());
    CHECK(sent["model"] == "gpt-4");
    const Json user = Json::parse(sent["messages"][1]["content"].get<std::string>());
    CHECK(user["utterance"] == "I drive about 15,000 miles a year.");
    CHECK(user["pending_slots"].size() == 8);

    mock.reply(200, "Sure! It sounds like your budget is about four hundred dollars.");
    const auto prose = advance(step.state, "budget four hundred", *backend);
    CHECK(prose.state.filled.size() == 1);
    CHECK(prose.reply == car_schema()->find_slot("monthly_budget")->prompt);

    mock.reply(503, "");
    const auto outage = advance(step.state, "$400 a month", *backend);
    CHECK(outage.state.filled.size() == 1);
    CHECK(outage.reply.find("Sorry") == 0);
    CHECK(outage.state.transcript.size() == step.state.transcript.size() + 2);

    auto dead = make_llm("http://127.0.0.1:1/v1/chat/completions");
    const auto unreachable = advance(step.state, "$400 a month", *dead);
    CHECK(unreachable.reply.find("Sorry") == 0);
    CHECK(unreachable.state.phase == Phase::Collecting);

    CHECK(parse_llm_extraction(*car_schema(), "[1,2]").empty());
    const auto hedged = parse_llm_extraction(*car_schema(), R"({"overage_rate":{"value":0.15,"confidence":0.4}})");
    REQUIRE(hedged.size() == 1);
    CHECK(hedged[0].confidence == 0.4);

    ::unsetenv("DECISIM_LLM_API_KEY");
    LlmConfig config;
    config.endpoint = mock.endpoint();
    CHECK_THROWS_AS(llm_backend(config), std::invalid_argument);
}

TEST_CASE("built problems do not depend on the backend") {
    auto scripted = scripted_backend();
    const auto a = run(kTranscript, *scripted);

    MockLlm mock;
    Json first, second;
    for (const auto& [slot, value] : kExpected)
        (slot == "annual_miles" || slot == "monthly_budget" ? first : second)[slot] = value;
    mock.reply(200, "{}");
    mock.reply(200, first.dump());
    mock.reply(200, second.dump());
    auto llm = make_llm(mock.endpoint());
    const auto b = run(kTranscript, *llm);
    REQUIRE(b.phase == Phase::ReadyToSimulate);

    // Same values poured in directly, in reverse order.
    DialogState c = start_session(car_schema(), "direct", *scripted);
    for (auto it = kExpected.rbegin(); it != kExpected.rend(); ++it) fill_slot(c, it->first, it->second, "");

    Warehouse store(fresh_store());
    load_starter_priors(store);
    for (const Warehouse* priors : {static_cast<const Warehouse*>(nullptr), static_cast<const Warehouse*>(&store)}) {
        const auto ja = problem_to_json(build_problem(a, priors)).dump();
        CHECK(problem_to_json(build_problem(b, priors)).dump() == ja);
        CHECK(problem_to_json(build_problem(c, priors)).dump() == ja);
    }
}
