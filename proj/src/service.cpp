#include "decisim/service.hpp"

#include <condition_variable>
#include <random>

#include <httplib.h>

#include "decisim/replay.hpp"

namespace decisim {

namespace {

constexpr const char* kJson = "application/json";

void send_json(httplib::Response& res, int status, const Json& body) {
    res.status = status;
    res.set_content(body.dump(), kJson);
}

void send_error(httplib::Response& res, int status, const std::string& code, const std::string& message,
                Json extra = Json::object()) {
    Json body = {{"error", code}, {"message", message}};
    for (auto& [k, v] : extra.items()) body[k] = v;
    send_json(res, status, body);
}

void bad_request(httplib::Response& res, Json fields) {
    send_json(res, 400, {{"error", "bad_request"}, {"fields", std::move(fields)}});
}

/// Parses the request body as a JSON object; an empty body counts as {}.
std::optional<Json> parse_body(const httplib::Request& req, httplib::Response& res) {
    if (req.body.empty()) return Json::object();
    try {
        Json j = Json::parse(req.body);
        if (!j.is_object()) {
            bad_request(res, {{"body", "expected a JSON object"}});
            return std::nullopt;
        }
        return j;
    } catch (const Json::parse_error& e) {
        bad_request(res, {{"body", std::string("malformed JSON: ") + e.what()}});
        return std::nullopt;
    }
}

/// Rejects keys outside `allowed`; returns false after writing a 400.
bool check_keys(const Json& body, std::initializer_list<const char*> allowed, httplib::Response& res) {
    Json fields = Json::object();
    for (const auto& [key, value] : body.items()) {
        bool ok = false;
        for (const char* a : allowed) ok = ok || key == a;
        if (!ok) fields[key] = "unknown field";
    }
    if (fields.empty()) return true;
    bad_request(res, std::move(fields));
    return false;
}

Json filled_slots_json(const dialog::DialogState& state) {
    Json j = Json::object();
    for (const auto& slot : state.schema->slots) {
        auto it = state.filled.find(slot.name);
        if (it != state.filled.end()) j[slot.name] = it->second.value;
    }
    return j;
}

// First-come first-served mutual exclusion.
class TicketLock {
public:
    class Guard {
    public:
        explicit Guard(TicketLock& lock) : lock_(lock) {
            std::unique_lock l(lock_.m_);
            const std::uint64_t ticket = lock_.next_++;
            lock_.cv_.wait(l, [&] { return lock_.serving_ == ticket; });
        }
        ~Guard() {
            {
                std::lock_guard l(lock_.m_);
                ++lock_.serving_;
            }
            lock_.cv_.notify_all();
        }
        Guard(const Guard&) = delete;
        Guard& operator=(const Guard&) = delete;

    private:
        TicketLock& lock_;
    };

private:
    std::mutex m_;
    std::condition_variable cv_;
    std::uint64_t next_ = 0;
    std::uint64_t serving_ = 0;
};

}  // namespace

struct Service::LiveSession {
    std::string id;
    std::string created_at;
    dialog::DialogState state;
    std::unique_ptr<dialog::AgentBackend> backend;
    std::optional<std::string> last_report;
    std::optional<std::string> last_record_id;
    int runs = 0;
    TicketLock order;
};

std::string random_session_id() {
    static thread_local std::random_device rd;
    std::uniform_int_distribution<std::uint32_t> dist;
    char buf[33];
    for (int i = 0; i < 4; ++i) std::snprintf(buf + 8 * i, 9, "%08x", dist(rd));
    return std::string(buf, 32);
}

Service::Service(ServiceConfig config) : config_(std::move(config)), server_(std::make_unique<httplib::Server>()) {
    server_->set_read_timeout(config_.request_timeout);
    server_->set_write_timeout(config_.request_timeout);
    install_routes();
}

Service::~Service() { stop(); }

int Service::bind(const std::string& host, int port) {
    if (port == 0) return server_->bind_to_any_port(host);
    if (!server_->bind_to_port(host, port)) throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
    return port;
}

void Service::serve() { server_->listen_after_bind(); }

void Service::stop() {
    if (server_ && server_->is_running()) server_->stop();
}

void Service::wait_until_ready() const { server_->wait_until_ready(); }

std::shared_ptr<Service::LiveSession> Service::find(const std::string& id) const {
    std::shared_lock lock(sessions_mutex_);
    auto it = sessions_.find(id);
    return it == sessions_.end() ? nullptr : it->second;
}

void Service::log_request(const std::string& method, const std::string& path, int status) const {
    if (!config_.log) return;
    const Json line = {{"ts", utc_timestamp()}, {"method", method}, {"path", path}, {"status", status}};
    std::lock_guard lock(log_mutex_);
    *config_.log << line.dump() << '\n' << std::flush;
}

void Service::install_routes() {
    httplib::Server& srv = *server_;

    srv.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
        log_request(req.method, req.path, res.status);
    });
    srv.set_post_routing_handler([this](const httplib::Request&, httplib::Response& res) {
        if (!config_.cors_origin.empty()) {
            res.set_header("Access-Control-Allow-Origin", config_.cors_origin);
            res.set_header("Access-Control-Allow-Headers", "Content-Type");
            res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        }
    });
    srv.Options(R"(.*)", [](const httplib::Request&, httplib::Response& res) { res.status = 204; });
    srv.set_exception_handler([](const httplib::Request&, httplib::Response& res, std::exception_ptr ep) {
        std::string what = "internal error";
        try {
            std::rethrow_exception(ep);
        } catch (const std::exception& e) {
            what = e.what();
        } catch (...) {
        }
        send_error(res, 500, "internal", what);
    });

    auto health = [](const httplib::Request&, httplib::Response& res) { send_json(res, 200, {{"status", "ok"}}); };
    srv.Get("/healthz", health);
    srv.Get("/v1/healthz", health);

    srv.Post("/v1/sessions", [this](const httplib::Request& req, httplib::Response& res) {
        auto body = parse_body(req, res);
        if (!body || !check_keys(*body, {"template_id", "backend"}, res)) return;
        if (!body->contains("template_id") || !(*body)["template_id"].is_string())
            return bad_request(res, {{"template_id", "required string"}});
        const std::string template_id = (*body)["template_id"];
        const std::string backend_name = body->value("backend", std::string("scripted"));

        std::shared_ptr<const dialog::SlotSchema> schema;
        {
            std::lock_guard lock(templates_mutex_);
            auto it = templates_.find(template_id);
            if (it == templates_.end()) {
                try {
                    auto loaded = std::make_shared<const dialog::SlotSchema>(
                        dialog::load_template_by_id(config_.template_dir, template_id));
                    it = templates_.emplace(template_id, std::move(loaded)).first;
                } catch (const dialog::TemplateError& e) {
                    return bad_request(res, {{"template_id", e.what()}});
                }
            }
            schema = it->second;
        }

        std::unique_ptr<dialog::AgentBackend> backend;
        if (backend_name == "scripted") {
            backend = dialog::scripted_backend();
        } else if (backend_name == "llm") {
            if (!config_.llm) return bad_request(res, {{"backend", "llm backend is not configured"}});
            try {
                backend = dialog::llm_backend(*config_.llm);
            } catch (const std::invalid_argument& e) {
                return bad_request(res, {{"backend", e.what()}});
            }
        } else {
            return bad_request(res, {{"backend", "expected \"scripted\" or \"llm\""}});
        }

        auto session = std::make_shared<LiveSession>();
        session->id = random_session_id();
        session->created_at = utc_timestamp();
        session->backend = std::move(backend);
        session->state = dialog::start_session(schema, session->id, *session->backend);
        {
            std::unique_lock lock(sessions_mutex_);
            sessions_.emplace(session->id, session);
        }
        send_json(res, 201,
                  {{"session_id", session->id},
                   {"first_question", session->state.transcript.back().text},
                   {"phase", dialog::to_string(session->state.phase)},
                   {"pending_slots", session->state.pending}});
    });

    srv.Post(R"(/v1/sessions/([0-9a-f]+)/messages)", [this](const httplib::Request& req, httplib::Response& res) {
        auto session = find(req.matches[1]);
        if (!session) return send_error(res, 404, "unknown_session", "no such session");
        auto body = parse_body(req, res);
        if (!body || !check_keys(*body, {"text"}, res)) return;
        if (!body->contains("text") || !(*body)["text"].is_string())
            return bad_request(res, {{"text", "required string"}});

        TicketLock::Guard guard(session->order);
        if (session->state.phase == dialog::Phase::Closed)
            return send_error(res, 409, "session_closed", "session is closed");
        auto result = dialog::advance(std::move(session->state), (*body)["text"].get<std::string>(), *session->backend);
        session->state = std::move(result.state);
        send_json(res, 200,
                  {{"agent_reply", result.reply},
                   {"phase", dialog::to_string(session->state.phase)},
                   {"filled_slots", filled_slots_json(session->state)},
                   {"pending_slots", session->state.pending}});
    });

    // Shared by /simulate and /whatif: problem from the session plus request overrides.
    auto prepare = [this](LiveSession& session, const Json& body, httplib::Response& res) -> std::optional<DecisionProblem> {
        if (session.state.phase == dialog::Phase::Closed) {
            send_error(res, 409, "session_closed", "session is closed");
            return std::nullopt;
        }
        DecisionProblem problem;
        try {
            problem = dialog::build_problem(session.state, config_.store);
        } catch (const dialog::IncompleteSlots& e) {
            send_error(res, 409, "incomplete_slots", e.what(), {{"missing", e.missing()}});
            return std::nullopt;
        } catch (const dialog::PriorUnavailable& e) {
            send_error(res, 409, "prior_unavailable", e.what(), {{"parameter", e.parameter()}});
            return std::nullopt;
        }
        Json fields = Json::object();
        if (body.contains("sample_count")) {
            const Json& n = body["sample_count"];
            if (!n.is_number_integer() || n.get<std::int64_t>() < 1) fields["sample_count"] = "expected a positive integer";
            else if (n.get<std::int64_t>() > config_.max_samples)
                fields["sample_count"] = "exceeds the limit of " + std::to_string(config_.max_samples);
            else problem.sample_count = n.get<std::int64_t>();
        }
        if (body.contains("seed")) {
            const Json& s = body["seed"];
            if (!s.is_number_unsigned() && !(s.is_number_integer() && s.get<std::int64_t>() >= 0))
                fields["seed"] = "expected a non-negative integer";
            else problem.seed = s.get<std::uint64_t>();
        }
        if (problem.sample_count > config_.max_samples) problem.sample_count = config_.max_samples;
        if (body.contains("overrides")) {
            const Json& overrides = body["overrides"];
            if (!overrides.is_object()) {
                fields["overrides"] = "expected an object of parameter -> number or distribution";
            } else {
                for (const auto& [param, value] : overrides.items()) {
                    Distribution dist;
                    try {
                        dist = value.is_number() ? Distribution{Fixed{value.get<double>()}}
                                                 : distribution_from_json(value, "overrides." + param);
                    } catch (const FormatError& e) {
                        fields["overrides." + param] = e.what();
                        continue;
                    }
                    if (const auto v = validate_distribution(dist); !v.empty()) {
                        fields["overrides." + param] = v.front().code;
                        continue;
                    }
                    bool bound = false;
                    for (auto& alt : problem.alternatives) {
                        auto it = alt.bindings.find(param);
                        if (it == alt.bindings.end()) continue;
                        it->second.distribution = dist;
                        it->second.provenance = UserSupplied{};
                        bound = true;
                    }
                    if (!bound) fields["overrides." + param] = "no alternative binds this parameter";
                }
            }
        }
        if (!fields.empty()) {
            bad_request(res, std::move(fields));
            return std::nullopt;
        }
        return problem;
    };

    srv.Post(R"(/v1/sessions/([0-9a-f]+)/simulate)", [this, prepare](const httplib::Request& req,
                                                                      httplib::Response& res) {
        auto session = find(req.matches[1]);
        if (!session) return send_error(res, 404, "unknown_session", "no such session");
        auto body = parse_body(req, res);
        if (!body || !check_keys(*body, {"sample_count", "seed"}, res)) return;

        TicketLock::Guard guard(session->order);
        auto problem = prepare(*session, *body, res);
        if (!problem) return;
        AnalysisOptions options;
        options.simulation.workers = config_.workers;
        const ComparisonReport report = analyze(*problem, options);
        std::string payload = report_to_string(report);

        if (config_.store) {
            const std::string record_id = session->id + "-" + std::to_string(++session->runs);
            config_.store->record_session(
                make_session_record(record_id, *problem, report, session->state.transcript));
            session->last_record_id = record_id;
        }
        session->state.phase = dialog::Phase::Simulated;
        session->last_report = payload;
        res.status = 200;
        res.set_content(std::move(payload), kJson);
    });

    srv.Post(R"(/v1/sessions/([0-9a-f]+)/whatif)", [this, prepare](const httplib::Request& req,
                                                                    httplib::Response& res) {
        auto session = find(req.matches[1]);
        if (!session) return send_error(res, 404, "unknown_session", "no such session");
        auto body = parse_body(req, res);
        if (!body || !check_keys(*body, {"overrides", "sample_count", "seed"}, res)) return;
        if (!body->contains("overrides")) return bad_request(res, {{"overrides", "required object"}});

        TicketLock::Guard guard(session->order);
        auto problem = prepare(*session, *body, res);
        if (!problem) return;
        AnalysisOptions options;
        options.simulation.workers = config_.workers;
        res.status = 200;
        res.set_content(report_to_string(analyze(*problem, options)), kJson);
    });

    srv.Post(R"(/v1/sessions/([0-9a-f]+)/feedback)", [this](const httplib::Request& req, httplib::Response& res) {
        auto session = find(req.matches[1]);
        if (!session) return send_error(res, 404, "unknown_session", "no such session");
        auto body = parse_body(req, res);
        if (!body || !check_keys(*body, {"rating", "text"}, res)) return;

        Feedback feedback;
        Json fields = Json::object();
        if (body->contains("rating") && !(*body)["rating"].is_null()) {
            const Json& r = (*body)["rating"];
            if (!r.is_number_integer() || r.get<int>() < 1 || r.get<int>() > 5) fields["rating"] = "expected 1..5";
            else feedback.rating = r.get<int>();
        }
        if (!body->contains("text") || !(*body)["text"].is_string()) fields["text"] = "required string";
        else feedback.text = (*body)["text"];
        if (!fields.empty()) return bad_request(res, std::move(fields));

        TicketLock::Guard guard(session->order);
        if (session->state.phase == dialog::Phase::Closed)
            return send_error(res, 409, "session_closed", "session is closed");
        if (session->state.phase != dialog::Phase::Simulated || !session->last_report)
            return send_error(res, 409, "not_simulated", "feedback is accepted after a simulation");
        if (config_.store && session->last_record_id) config_.store->attach_feedback(*session->last_record_id, feedback);
        dialog::close_session(session->state);
        res.status = 204;
    });
}

}  // namespace decisim
