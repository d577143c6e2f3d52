#include <cstdlib>
#include <regex>

#include <httplib.h>

#include "decisim/dialog.hpp"

namespace decisim::dialog {

namespace {

struct Endpoint {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

Endpoint split_url(const std::string& url) {
    static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re)) throw std::invalid_argument("LLM endpoint must be an http(s) URL: " + url);
    return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

std::string system_prompt(const SlotSchema& schema) {
    std::string p =
        "You extract numeric answers for a decision-analysis questionnaire (" + schema.title +
        "). Reply with one JSON object and nothing else. Keys are slot names, values are numbers. "
        "Only use the slot names listed below and omit anything the user did not state. "
        "Normalize units: money in dollars, durations in months, distances in miles, rates in dollars per unit. "
        "If you are unsure, use {\"slot\": {\"value\": number, \"confidence\": number between 0 and 1}}.\nSlots:\n";
    for (const Slot& s : schema.slots) p += "- " + s.name + " (" + std::string(to_string(s.kind)) + "): " + s.prompt + "\n";
    return p;
}

class LlmBackend final : public AgentBackend {
public:
    LlmBackend(LlmConfig config, std::string api_key)
        : config_(std::move(config)), endpoint_(split_url(config_.endpoint)), api_key_(std::move(api_key)) {}

    std::string name() const override { return "llm"; }

    std::string next_question(const DialogState& state) override {
        if (state.pending.empty()) return "I have everything I need to run the simulation.";
        return state.schema->find_slot(state.pending.front())->prompt;
    }

    std::vector<Candidate> extract(const DialogState& state, std::string_view utterance) override {
        httplib::Client client(endpoint_.origin);
        client.set_connection_timeout(config_.timeout);
        client.set_read_timeout(config_.timeout);
        client.set_write_timeout(config_.timeout);
        const httplib::Headers headers{{"Authorization", "Bearer " + api_key_}};
        const std::string body = llm_request_body(config_, state, utterance).dump();
        auto res = client.Post(endpoint_.path, headers, body, "application/json");
        if (!res) throw BackendUnreachable("LLM endpoint unreachable: " + httplib::to_string(res.error()));
        if (res->status >= 500) throw BackendUnreachable("LLM endpoint returned " + std::to_string(res->status));
        if (res->status != 200) return {};

        Json reply;
        try {
            reply = Json::parse(res->body);
            const Json& content = reply.at("choices").at(0).at("message").at("content");
            if (!content.is_string()) return {};
            return parse_llm_extraction(*state.schema, content.get<std::string>());
        } catch (const Json::exception&) {
            return {};
        }
    }

private:
    LlmConfig config_;
    Endpoint endpoint_;
    std::string api_key_;
};

}  // namespace

Json llm_request_body(const LlmConfig& config, const DialogState& state, std::string_view utterance) {
    Json slots = Json::array();
    for (const Slot& s : state.schema->slots) slots.push_back({{"name", s.name}, {"kind", to_string(s.kind)}});
    const Json user = {{"pending_slots", state.pending}, {"slots", std::move(slots)}, {"utterance", utterance}};
    return {{"model", config.model},
            {"temperature", 0},
            {"response_format", {{"type", "json_object"}}},
            {"messages",
             Json::array({{{"role", "system"}, {"content", system_prompt(*state.schema)}},
                          {{"role", "user"}, {"content", user.dump()}}})}};
}

std::vector<Candidate> parse_llm_extraction(const SlotSchema& schema, std::string_view content) {
    Json obj;
    try {
        obj = Json::parse(content);
    } catch (const Json::parse_error&) {
        return {};
    }
    if (!obj.is_object()) return {};
    std::vector<Candidate> out;
    for (const auto& [key, value] : obj.items()) {
        if (!schema.find_slot(key)) continue;
        if (value.is_number()) {
            out.push_back({key, value.get<double>(), value.dump(), 1.0});
        } else if (value.is_object() && value.contains("value") && value["value"].is_number()) {
            double confidence = 1.0;
            if (value.contains("confidence") && value["confidence"].is_number())
                confidence = std::clamp(value["confidence"].get<double>(), 0.0, 1.0);
            out.push_back({key, value["value"].get<double>(), value["value"].dump(), confidence});
        }
    }
    return out;
}

std::unique_ptr<AgentBackend> llm_backend(const LlmConfig& config) {
    if (config.endpoint.empty()) throw std::invalid_argument("LLM backend needs an endpoint URL");
    const char* key = std::getenv(config.api_key_env.c_str());
    if (!key || !*key) throw std::invalid_argument("LLM backend needs an API key in $" + config.api_key_env);
    return std::make_unique<LlmBackend>(config, key);
}

}  // namespace decisim::dialog
