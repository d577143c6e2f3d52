#pragma once

// HTTP API for live decision sessions. Routes (all JSON, under /v1):
//
//   POST /v1/sessions                    {template_id, backend?}      -> 201 {session_id, first_question, phase, pending_slots}
//   POST /v1/sessions/{id}/messages      {text}                       -> 200 {agent_reply, phase, filled_slots, pending_slots}
//   POST /v1/sessions/{id}/simulate      {sample_count?, seed?}       -> 200 report | 409 incomplete_slots
//   POST /v1/sessions/{id}/whatif        {overrides, sample_count?, seed?} -> 200 report (session untouched)
//   POST /v1/sessions/{id}/feedback      {rating?, text}              -> 204
//   GET  /v1/healthz, /healthz                                        -> 200

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <ostream>
#include <shared_mutex>
#include <string>

#include "decisim/dialog.hpp"
#include "decisim/optimizer.hpp"
#include "decisim/warehouse.hpp"

namespace httplib {
class Server;
}

namespace decisim {

struct ServiceConfig {
    std::filesystem::path template_dir;
    Warehouse* store = nullptr;  // priors + session log; optional
    std::optional<dialog::LlmConfig> llm;
    std::string cors_origin = "*";
    std::int64_t max_samples = 2'000'000;
    std::chrono::seconds request_timeout{120};
    unsigned workers = 0;
    std::ostream* log = nullptr;  // one JSON line per request when set
};

class Service {
public:
    explicit Service(ServiceConfig config);
    ~Service();

    Service(const Service&) = delete;
    Service& operator=(const Service&) = delete;

    /// Binds to `port` (0 picks a free one) and returns the bound port.
    int bind(const std::string& host, int port);
    /// Blocks serving requests until stop().
    void serve();
    void stop();
    void wait_until_ready() const;

private:
    struct LiveSession;

    void install_routes();
    std::shared_ptr<LiveSession> find(const std::string& id) const;
    void log_request(const std::string& method, const std::string& path, int status) const;

    ServiceConfig config_;
    std::unique_ptr<httplib::Server> server_;
    mutable std::shared_mutex sessions_mutex_;
    std::map<std::string, std::shared_ptr<LiveSession>> sessions_;
    std::map<std::string, std::shared_ptr<const dialog::SlotSchema>> templates_;
    mutable std::mutex templates_mutex_;
    mutable std::mutex log_mutex_;
};

/// 128 random bits as 32 lowercase hex digits.
std::string random_session_id();

}  // namespace decisim
