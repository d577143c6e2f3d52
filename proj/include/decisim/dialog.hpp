#pragma once

// Slot-filling conversation that collects a complete DecisionProblem.

#include <chrono>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "decisim/model.hpp"
#include "decisim/problem_json.hpp"
#include "decisim/warehouse.hpp"

namespace decisim::dialog {

inline constexpr double kAutoFillConfidence = 0.9;

enum class SlotKind { Money, Count, Rate, Months, Miles };

std::string_view to_string(SlotKind kind);
SlotKind slot_kind_from_string(std::string_view s);

struct Slot {
    std::string name;
    std::string label;    // short noun phrase used in replies
    std::string prompt;   // question asked when the slot is at the head of pending
    SlotKind kind = SlotKind::Count;
    bool required = true;
    std::set<std::string> prior_tags;
    std::optional<double> default_value;
    std::vector<std::string> maps_to;  // "<alternative>.<parameter>" paths, derived from the skeleton
};

struct FromSlot {
    std::string slot;
};
struct Constant {
    double value;
};
struct HorizonMonths {};
using BindingSource = std::variant<FromSlot, Constant, HorizonMonths>;

struct BindingTemplate {
    std::string unit;
    BindingSource source;
};

struct AlternativeSkeleton {
    std::string name;
    std::variant<FromSlot, Constant> term;
    bool recurring = false;  // contract renews: the horizon is rounded up to whole terms
    std::map<std::string, BindingTemplate> bindings;
};

struct ExtractionRule {
    std::string slot;
    std::string pattern;  // ECMAScript regex, case-insensitive; capture group 1 is the quantity
    double confidence = 1.0;
};

struct SlotSchema {
    std::string template_id;
    std::string title;
    std::string greeting;
    std::string objective;
    Direction direction = Direction::Minimize;
    std::int64_t default_sample_count = 100'000;
    std::uint64_t default_seed = 42;
    std::vector<Slot> slots;
    std::vector<AlternativeSkeleton> alternatives;
    std::vector<ExtractionRule> extraction_rules;

    const Slot* find_slot(std::string_view name) const;
};

class TemplateError : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

SlotSchema template_from_json(const Json& j);
SlotSchema load_template(const std::filesystem::path& file);
/// Loads `<dir>/<template_id>.json`.
SlotSchema load_template_by_id(const std::filesystem::path& dir, const std::string& template_id);

/// "$3,000" -> 3000, "15 cents" -> 0.15, "5 years" -> 60 (Months kind), "15k" -> 15000.
std::optional<double> normalize_quantity(SlotKind kind, std::string_view text);

/// Human rendering of a slot value ("$3,000", "60 months", "15,000 miles").
std::string format_quantity(SlotKind kind, double value);

enum class Phase { Collecting, ReadyToSimulate, Simulated, Closed };
std::string_view to_string(Phase phase);

struct FilledSlot {
    double value = 0.0;
    std::string raw;
};

struct PendingConfirmation {
    std::string slot;
    double value = 0.0;
    std::string raw;
};

struct DialogState {
    std::string session_id;
    std::shared_ptr<const SlotSchema> schema;
    std::map<std::string, FilledSlot> filled;
    std::vector<std::string> pending;  // unfilled required slots, schema order
    std::vector<TranscriptEntry> transcript;
    Phase phase = Phase::Collecting;
    std::optional<PendingConfirmation> confirming;
};

struct Candidate {
    std::string slot;
    double value = 0.0;
    std::string raw;
    double confidence = 0.0;
};

class BackendUnreachable : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

class AgentBackend {
public:
    virtual ~AgentBackend() = default;
    virtual std::string name() const = 0;
    virtual std::string next_question(const DialogState& state) = 0;
    /// Candidate fills. Never names a slot outside state.schema.
    virtual std::vector<Candidate> extract(const DialogState& state, std::string_view utterance) = 0;
};

/// Rule-based reference backend. An empty script uses the schema's own extraction rules.
std::unique_ptr<AgentBackend> scripted_backend(std::vector<ExtractionRule> script = {});

struct LlmConfig {
    std::string endpoint;  // full URL of a chat-completions style endpoint
    std::string model = "gpt-4";
    std::string api_key_env = "DECISIM_LLM_API_KEY";
    std::chrono::seconds timeout{20};
};

/// Throws std::invalid_argument if the endpoint is empty or the key variable is unset.
std::unique_ptr<AgentBackend> llm_backend(const LlmConfig& config);

/// Parses the content of a chat-completion reply into candidates; malformed content yields none.
std::vector<Candidate> parse_llm_extraction(const SlotSchema& schema, std::string_view content);

/// Request body sent by the LLM backend for one utterance.
Json llm_request_body(const LlmConfig& config, const DialogState& state, std::string_view utterance);

class SessionClosed : public std::runtime_error {
public:
    SessionClosed() : std::runtime_error("session is closed") {}
};

class IncompleteSlots : public std::runtime_error {
public:
    explicit IncompleteSlots(std::vector<std::string> missing);
    const std::vector<std::string>& missing() const noexcept { return missing_; }

private:
    std::vector<std::string> missing_;
};

class PriorUnavailable : public std::runtime_error {
public:
    explicit PriorUnavailable(std::string parameter)
        : std::runtime_error("no value or prior available for '" + parameter + "'"), parameter_(std::move(parameter)) {}
    const std::string& parameter() const noexcept { return parameter_; }

private:
    std::string parameter_;
};

/// Fresh state whose transcript holds the greeting and first question.
DialogState start_session(std::shared_ptr<const SlotSchema> schema, std::string session_id, AgentBackend& backend);

struct AdvanceResult {
    DialogState state;
    std::string reply;
};

/// Throws SessionClosed once the phase is Closed.
AdvanceResult advance(DialogState state, std::string_view utterance, AgentBackend& backend);

/// Fills one slot directly; used by advance and by fill-sequence replays.
void fill_slot(DialogState& state, const std::string& slot, double value, std::string raw);

void close_session(DialogState& state);

/// Requires an empty pending list (throws IncompleteSlots). `priors` may be null.
DecisionProblem build_problem(const DialogState& state, const Warehouse* priors);

/// Comparison horizon: the longest term, rounded up to whole terms of every recurring alternative.
int comparison_horizon(const std::vector<std::pair<int, bool>>& terms_and_recurring);

}  // namespace decisim::dialog
