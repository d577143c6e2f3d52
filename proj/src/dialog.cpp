#include "decisim/dialog.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>

namespace decisim::dialog {

using namespace json_util;

namespace {

const std::regex& quantity_pattern() {
    static const std::regex re(
        R"((\$\s?\d[\d,]*(?:\.\d+)?|\d[\d,]*(?:\.\d+)?(?:\s*k\b)?(?:[\s-]*(?:cents?|years?|months?|miles?|dollars?))?))",
        std::regex::ECMAScript | std::regex::icase);
    return re;
}

const std::regex& yes_pattern() {
    static const std::regex re(R"(^\s*(yes|yep|yeah|correct|right|sure|y|that's right|that is right)\b)",
                               std::regex::ECMAScript | std::regex::icase);
    return re;
}

const std::regex& no_pattern() {
    static const std::regex re(R"(^\s*(no|nope|n|wrong|incorrect|not quite)\b)",
                               std::regex::ECMAScript | std::regex::icase);
    return re;
}

std::string lower(std::string_view s) {
    std::string out(s);
    std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

std::size_t word_count(std::string_view s) {
    std::istringstream in{std::string(s)};
    std::size_t n = 0;
    for (std::string w; in >> w;) ++n;
    return n;
}

std::string group_thousands(double value, int decimals) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, std::fabs(value));
    std::string s(buf);
    const std::size_t dot = s.find('.');
    std::string int_part = s.substr(0, dot);
    const std::string frac = dot == std::string::npos ? "" : s.substr(dot);
    for (int i = static_cast<int>(int_part.size()) - 3; i > 0; i -= 3) int_part.insert(static_cast<std::size_t>(i), ",");
    return (value < 0 ? "-" : "") + int_part + frac;
}

std::string format_number(double value) {
    const bool whole = std::fabs(value - std::round(value)) < 1e-9;
    return group_thousands(value, whole ? 0 : 2);
}

void recompute_pending(DialogState& state) {
    state.pending.clear();
    for (const Slot& slot : state.schema->slots)
        if (slot.required && !state.filled.contains(slot.name)) state.pending.push_back(slot.name);
    if (state.phase == Phase::Closed) return;
    if (!state.pending.empty()) state.phase = Phase::Collecting;
    else if (state.phase == Phase::Collecting) state.phase = Phase::ReadyToSimulate;
}

void say(DialogState& state, std::string speaker, std::string text) {
    state.transcript.push_back({std::move(speaker), std::move(text), utc_timestamp()});
}

class ScriptedBackend final : public AgentBackend {
public:
    explicit ScriptedBackend(std::vector<ExtractionRule> script) : script_(std::move(script)) {}

    std::string name() const override { return "scripted"; }

    std::string next_question(const DialogState& state) override {
        if (state.pending.empty()) return "I have everything I need to run the simulation.";
        return state.schema->find_slot(state.pending.front())->prompt;
    }

    std::vector<Candidate> extract(const DialogState& state, std::string_view utterance) override {
        const auto& rules = script_.empty() ? state.schema->extraction_rules : script_;
        const std::string text(utterance);
        std::vector<Candidate> out;
        for (const ExtractionRule& rule : rules) {
            const Slot* slot = state.schema->find_slot(rule.slot);
            if (!slot) continue;
            const std::regex& re = compiled(rule.pattern);
            for (auto it = std::sregex_iterator(text.begin(), text.end(), re); it != std::sregex_iterator(); ++it) {
                const std::string raw = (*it).size() > 1 && (*it)[1].matched ? (*it)[1].str() : (*it)[0].str();
                if (auto value = normalize_quantity(slot->kind, raw))
                    out.push_back({slot->name, *value, raw, rule.confidence});
            }
        }
        if (!out.empty() || state.pending.empty()) return out;

        // No anchored rule fired: treat a lone quantity as the answer to the open question.
        const Slot* head = state.schema->find_slot(state.pending.front());
        std::vector<std::string> quantities;
        for (auto it = std::sregex_iterator(text.begin(), text.end(), quantity_pattern()); it != std::sregex_iterator();
             ++it)
            quantities.push_back((*it)[1].str());
        if (quantities.size() != 1) return out;
        if (auto value = normalize_quantity(head->kind, quantities.front())) {
            const double confidence = word_count(utterance) <= 6 ? 1.0 : 0.6;
            out.push_back({head->name, *value, quantities.front(), confidence});
        }
        return out;
    }

private:
    const std::regex& compiled(const std::string& pattern) {
        auto it = cache_.find(pattern);
        if (it == cache_.end())
            it = cache_.emplace(pattern, std::regex(pattern, std::regex::ECMAScript | std::regex::icase)).first;
        return it->second;
    }

    std::vector<ExtractionRule> script_;
    std::map<std::string, std::regex> cache_;
};

Distribution slot_distribution(const Slot& slot, const std::string& parameter, const std::optional<double>& value,
                               const Warehouse* priors, Provenance& provenance) {
    std::vector<PriorRecord> hits;
    if (priors && !slot.prior_tags.empty()) hits = priors->query_priors(slot.prior_tags, parameter);
    if (!hits.empty()) {
        provenance = WarehousePrior{hits.front().id};
        return value ? recentered(hits.front().distribution, *value) : hits.front().distribution;
    }
    provenance = UserSupplied{};
    if (value) return Fixed{*value};
    if (slot.default_value) return Fixed{*slot.default_value};
    throw PriorUnavailable(parameter);
}

std::optional<double> slot_value(const DialogState& state, const Slot& slot) {
    auto it = state.filled.find(slot.name);
    if (it != state.filled.end()) return it->second.value;
    return std::nullopt;
}

}  // namespace

std::string_view to_string(SlotKind kind) {
    switch (kind) {
        case SlotKind::Money: return "money";
        case SlotKind::Count: return "count";
        case SlotKind::Rate: return "rate";
        case SlotKind::Months: return "months";
        case SlotKind::Miles: return "miles";
    }
    return "count";
}

SlotKind slot_kind_from_string(std::string_view s) {
    if (s == "money") return SlotKind::Money;
    if (s == "count") return SlotKind::Count;
    if (s == "rate") return SlotKind::Rate;
    if (s == "months") return SlotKind::Months;
    if (s == "miles") return SlotKind::Miles;
    throw FormatError("kind", "unknown slot kind '" + std::string(s) + "'");
}

std::string_view to_string(Phase phase) {
    switch (phase) {
        case Phase::Collecting: return "collecting";
        case Phase::ReadyToSimulate: return "ready_to_simulate";
        case Phase::Simulated: return "simulated";
        case Phase::Closed: return "closed";
    }
    return "collecting";
}

const Slot* SlotSchema::find_slot(std::string_view name) const {
    for (const Slot& s : slots)
        if (s.name == name) return &s;
    return nullptr;
}

SlotSchema template_from_json(const Json& j) {
    reject_unknown_keys(j,
                        {"template_id", "title", "greeting", "objective", "direction", "defaults", "slots",
                         "alternatives", "extraction_rules"},
                        "");
    SlotSchema s;
    s.template_id = require_string(j, "template_id", "");
    s.title = require_string(j, "title", "");
    s.greeting = j.contains("greeting") ? require_string(j, "greeting", "") : std::string{};
    s.objective = require_string(j, "objective", "");
    const std::string dir = j.contains("direction") ? require_string(j, "direction", "") : "minimize";
    if (dir != "minimize" && dir != "maximize") throw FormatError("direction", "expected minimize or maximize");
    s.direction = dir == "minimize" ? Direction::Minimize : Direction::Maximize;
    if (j.contains("defaults")) {
        const Json& d = j["defaults"];
        reject_unknown_keys(d, {"sample_count", "seed"}, "defaults");
        if (d.contains("sample_count")) s.default_sample_count = require_integer(d, "sample_count", "defaults");
        if (d.contains("seed")) s.default_seed = require_unsigned(d, "seed", "defaults");
    }

    const Json& slots = require(j, "slots", "");
    for (std::size_t i = 0; i < slots.size(); ++i) {
        const Json& sj = slots[i];
        const std::string path = "slots[" + std::to_string(i) + "]";
        reject_unknown_keys(sj, {"name", "label", "prompt", "kind", "required", "prior_tags", "default"}, path);
        Slot slot;
        slot.name = require_string(sj, "name", path);
        slot.label = sj.contains("label") ? require_string(sj, "label", path) : slot.name;
        slot.prompt = require_string(sj, "prompt", path);
        slot.kind = slot_kind_from_string(require_string(sj, "kind", path));
        slot.required = sj.value("required", true);
        if (sj.contains("prior_tags")) {
            for (const auto& t : sj["prior_tags"]) slot.prior_tags.insert(t.get<std::string>());
        }
        if (sj.contains("default")) slot.default_value = require_number(sj, "default", path);
        if (s.find_slot(slot.name)) throw TemplateError("duplicate slot '" + slot.name + "'");
        s.slots.push_back(std::move(slot));
    }

    const Json& alts = require(j, "alternatives", "");
    for (std::size_t i = 0; i < alts.size(); ++i) {
        const Json& aj = alts[i];
        const std::string path = "alternatives[" + std::to_string(i) + "]";
        reject_unknown_keys(aj, {"name", "term", "recurring", "bindings"}, path);
        AlternativeSkeleton alt;
        alt.name = require_string(aj, "name", path);
        const Json& term = require(aj, "term", path);
        reject_unknown_keys(term, {"slot", "value"}, join(path, "term"));
        if (term.contains("slot")) alt.term = FromSlot{require_string(term, "slot", join(path, "term"))};
        else alt.term = Constant{require_number(term, "value", join(path, "term"))};
        alt.recurring = aj.value("recurring", false);
        for (const auto& [param, bj] : require(aj, "bindings", path).items()) {
            const std::string bpath = join(path, "bindings." + param);
            reject_unknown_keys(bj, {"unit", "slot", "value", "horizon"}, bpath);
            BindingTemplate b;
            b.unit = bj.contains("unit") ? require_string(bj, "unit", bpath) : std::string{};
            if (bj.contains("slot")) b.source = FromSlot{require_string(bj, "slot", bpath)};
            else if (bj.contains("value")) b.source = Constant{require_number(bj, "value", bpath)};
            else if (bj.value("horizon", false)) b.source = HorizonMonths{};
            else throw FormatError(bpath, "binding needs one of slot, value, horizon");
            alt.bindings.emplace(param, std::move(b));
        }
        s.alternatives.push_back(std::move(alt));
    }

    if (j.contains("extraction_rules")) {
        for (const auto& rj : j["extraction_rules"]) {
            reject_unknown_keys(rj, {"slot", "pattern", "confidence"}, "extraction_rules");
            ExtractionRule rule{require_string(rj, "slot", "extraction_rules"),
                                require_string(rj, "pattern", "extraction_rules"), rj.value("confidence", 1.0)};
            try {
                std::regex probe(rule.pattern, std::regex::ECMAScript | std::regex::icase);
            } catch (const std::regex_error& e) {
                throw TemplateError("bad extraction pattern for '" + rule.slot + "': " + e.what());
            }
            if (!s.find_slot(rule.slot)) throw TemplateError("extraction rule for unknown slot '" + rule.slot + "'");
            s.extraction_rules.push_back(std::move(rule));
        }
    }

    // Every objective identifier must be bound by every alternative, and slot
    // references must resolve. Required slots then cover all free variables.
    expr::ObjectiveExpr objective;
    try {
        objective = expr::parse(s.objective);
    } catch (const expr::ParseError& e) {
        throw TemplateError(std::string("template objective: ") + e.what());
    }
    if (s.alternatives.size() < 2) throw TemplateError("template needs at least 2 alternatives");
    for (auto& alt : s.alternatives) {
        for (const auto& id : objective.identifiers())
            if (!alt.bindings.contains(id))
                throw TemplateError("alternative '" + alt.name + "' leaves '" + id + "' unbound");
        if (const auto* t = std::get_if<FromSlot>(&alt.term)) {
            const Slot* slot = s.find_slot(t->slot);
            if (!slot || !slot->required)
                throw TemplateError("term of '" + alt.name + "' must come from a required slot");
        }
        for (const auto& [param, b] : alt.bindings) {
            if (const auto* f = std::get_if<FromSlot>(&b.source)) {
                auto it = std::find_if(s.slots.begin(), s.slots.end(), [&](const Slot& x) { return x.name == f->slot; });
                if (it == s.slots.end())
                    throw TemplateError("binding '" + alt.name + "." + param + "' names unknown slot '" + f->slot + "'");
                it->maps_to.push_back(alt.name + "." + param);
            }
        }
    }
    return s;
}

SlotSchema load_template(const std::filesystem::path& file) {
    std::ifstream in(file);
    if (!in) throw TemplateError("cannot open template " + file.string());
    try {
        return template_from_json(Json::parse(in));
    } catch (const Json::exception& e) {
        throw TemplateError(file.string() + ": " + e.what());
    } catch (const FormatError& e) {
        throw TemplateError(file.string() + ": " + e.what());
    }
}

SlotSchema load_template_by_id(const std::filesystem::path& dir, const std::string& template_id) {
    if (!expr::is_identifier(template_id)) throw TemplateError("invalid template id '" + template_id + "'");
    return load_template(dir / (template_id + ".json"));
}

std::optional<double> normalize_quantity(SlotKind kind, std::string_view text) {
    const std::string s = lower(text);
    std::string digits;
    std::size_t i = 0;
    while (i < s.size() && !(std::isdigit(static_cast<unsigned char>(s[i])) || s[i] == '.')) ++i;
    for (; i < s.size(); ++i) {
        const char c = s[i];
        if (std::isdigit(static_cast<unsigned char>(c)) || c == '.') digits += c;
        else if (c != ',') break;
    }
    if (digits.empty() || digits == ".") return std::nullopt;
    double value;
    try {
        std::size_t used = 0;
        value = std::stod(digits, &used);
        if (used != digits.size()) return std::nullopt;
    } catch (const std::exception&) {
        return std::nullopt;
    }
    const std::string rest = s.substr(i);
    auto has = [&](const char* word) { return rest.find(word) != std::string::npos; };
    if (!rest.empty() && rest.find_first_not_of(" ") != std::string::npos &&
        rest[rest.find_first_not_of(" ")] == 'k')
        value *= 1000.0;
    if (has("cent")) value /= 100.0;
    if (kind == SlotKind::Months && has("year")) value *= 12.0;
    if (kind != SlotKind::Months && (has("year") || has("month"))) {
        // A duration unit on a non-duration slot means the rule matched the wrong quantity.
        return std::nullopt;
    }
    if (!std::isfinite(value)) return std::nullopt;
    return value;
}

std::string format_quantity(SlotKind kind, double value) {
    switch (kind) {
        case SlotKind::Money: return "$" + format_number(value);
        case SlotKind::Rate: return "$" + group_thousands(value, 2);
        case SlotKind::Months: return format_number(value) + " months";
        case SlotKind::Miles: return format_number(value) + " miles";
        case SlotKind::Count: return format_number(value);
    }
    return format_number(value);
}

IncompleteSlots::IncompleteSlots(std::vector<std::string> missing)
    : std::runtime_error([&] {
          std::string msg = "required slots are not filled:";
          for (const auto& m : missing) msg += " " + m;
          return msg;
      }()),
      missing_(std::move(missing)) {}

std::unique_ptr<AgentBackend> scripted_backend(std::vector<ExtractionRule> script) {
    return std::make_unique<ScriptedBackend>(std::move(script));
}

DialogState start_session(std::shared_ptr<const SlotSchema> schema, std::string session_id, AgentBackend& backend) {
    DialogState state;
    state.session_id = std::move(session_id);
    state.schema = std::move(schema);
    recompute_pending(state);
    std::string opening = state.schema->greeting;
    const std::string question = backend.next_question(state);
    if (!opening.empty() && !question.empty()) opening += " ";
    say(state, "agent", opening + question);
    return state;
}

void fill_slot(DialogState& state, const std::string& slot_name, double value, std::string raw) {
    if (!state.schema->find_slot(slot_name)) throw std::invalid_argument("unknown slot '" + slot_name + "'");
    if (state.phase == Phase::Closed) throw SessionClosed();
    auto it = state.filled.find(slot_name);
    const bool changed = it == state.filled.end() || it->second.value != value;
    state.filled[slot_name] = FilledSlot{value, std::move(raw)};
    if (changed && state.phase == Phase::Simulated) state.phase = Phase::ReadyToSimulate;
    recompute_pending(state);
}

void close_session(DialogState& state) { state.phase = Phase::Closed; }

AdvanceResult advance(DialogState state, std::string_view utterance, AgentBackend& backend) {
    if (state.phase == Phase::Closed) throw SessionClosed();
    say(state, "user", std::string(utterance));
    const SlotSchema& schema = *state.schema;

    std::vector<std::string> notes;
    if (state.confirming) {
        const std::string text(utterance);
        const PendingConfirmation pc = *state.confirming;
        state.confirming.reset();
        if (std::regex_search(text, yes_pattern())) {
            fill_slot(state, pc.slot, pc.value, pc.raw);
            notes.push_back("Thanks, I noted " + schema.find_slot(pc.slot)->label + " as " +
                            format_quantity(schema.find_slot(pc.slot)->kind, pc.value) + ".");
        } else if (std::regex_search(text, no_pattern())) {
            notes.emplace_back("OK, I won't use that value.");
        }
    }

    std::vector<Candidate> candidates;
    try {
        candidates = backend.extract(state, utterance);
    } catch (const BackendUnreachable&) {
        std::string reply = "Sorry, I couldn't reach the assistant service just now. Could you repeat that in a moment?";
        say(state, "agent", reply);
        return {std::move(state), std::move(reply)};
    }

    std::vector<std::string> filled_notes;
    std::string clarification;
    std::optional<PendingConfirmation> confirm;
    for (const Slot& slot : schema.slots) {
        std::vector<const Candidate*> mine;
        for (const auto& c : candidates)
            if (c.slot == slot.name) mine.push_back(&c);
        if (mine.empty()) continue;
        std::vector<double> distinct;
        for (const auto* c : mine)
            if (std::find(distinct.begin(), distinct.end(), c->value) == distinct.end()) distinct.push_back(c->value);
        if (distinct.size() > 1) {
            if (clarification.empty()) {
                clarification = "I heard more than one value for " + slot.label + ":";
                for (std::size_t k = 0; k < distinct.size(); ++k)
                    clarification += (k ? " or " : " ") + format_quantity(slot.kind, distinct[k]);
                clarification += ". Which one is right?";
            }
            continue;
        }
        const Candidate* best = *std::max_element(
            mine.begin(), mine.end(), [](const Candidate* a, const Candidate* b) { return a->confidence < b->confidence; });
        if (best->confidence >= kAutoFillConfidence) {
            fill_slot(state, slot.name, best->value, best->raw);
            filled_notes.push_back(slot.label + " " + format_quantity(slot.kind, best->value));
        } else if (!confirm) {
            confirm = PendingConfirmation{slot.name, best->value, best->raw};
        }
    }

    std::string reply;
    for (const auto& n : notes) reply += n + " ";
    if (!filled_notes.empty()) {
        reply += "Got it:";
        for (std::size_t k = 0; k < filled_notes.size(); ++k) reply += (k ? "; " : " ") + filled_notes[k];
        reply += ". ";
    }
    if (!clarification.empty()) {
        reply += clarification;
    } else if (confirm) {
        const Slot* slot = schema.find_slot(confirm->slot);
        reply += "Just to confirm, is " + slot->label + " " + format_quantity(slot->kind, confirm->value) + "? (yes/no)";
        state.confirming = std::move(confirm);
    } else if (state.pending.empty()) {
        reply += "Thanks, I have everything I need to run the simulation.";
    } else {
        reply += backend.next_question(state);
    }
    say(state, "agent", reply);
    return {std::move(state), std::move(reply)};
}

int comparison_horizon(const std::vector<std::pair<int, bool>>& terms) {
    int longest = 1;
    for (const auto& [t, recurring] : terms) longest = std::max(longest, t);
    long horizon = longest;
    for (int round = 0; round < 16; ++round) {
        long next = horizon;
        for (const auto& [t, recurring] : terms)
            if (recurring && t > 0) next = (next + t - 1) / t * t;
        if (next == horizon) return static_cast<int>(horizon);
        horizon = next;
        if (horizon > 1200) break;
    }
    return longest;
}

DecisionProblem build_problem(const DialogState& state, const Warehouse* priors) {
    if (!state.pending.empty()) throw IncompleteSlots(state.pending);
    const SlotSchema& schema = *state.schema;

    std::vector<std::pair<int, bool>> terms;
    for (const auto& alt : schema.alternatives) {
        double term;
        if (const auto* f = std::get_if<FromSlot>(&alt.term)) term = state.filled.at(f->slot).value;
        else term = std::get<Constant>(alt.term).value;
        terms.emplace_back(std::max(1, static_cast<int>(std::lround(term))), alt.recurring);
    }

    DecisionProblem p;
    p.title = schema.title;
    p.objective = expr::parse(schema.objective);
    p.direction = schema.direction;
    p.sample_count = schema.default_sample_count;
    p.seed = schema.default_seed;
    p.comparison_horizon_months = comparison_horizon(terms);

    for (std::size_t a = 0; a < schema.alternatives.size(); ++a) {
        const AlternativeSkeleton& skel = schema.alternatives[a];
        Alternative alt;
        alt.name = skel.name;
        alt.term_months = terms[a].first;
        for (const auto& [param, b] : skel.bindings) {
            ParameterSpec spec;
            spec.name = param;
            spec.unit = b.unit;
            if (const auto* f = std::get_if<FromSlot>(&b.source)) {
                const Slot& slot = *schema.find_slot(f->slot);
                spec.distribution = slot_distribution(slot, param, slot_value(state, slot), priors, spec.provenance);
            } else if (const auto* c = std::get_if<Constant>(&b.source)) {
                spec.distribution = Fixed{c->value};
            } else {
                spec.distribution = Fixed{static_cast<double>(p.comparison_horizon_months)};
            }
            alt.bindings.emplace(param, std::move(spec));
        }
        p.alternatives.push_back(std::move(alt));
    }

    if (auto violations = validate_problem(p); !violations.empty()) {
        throw TemplateError("template produced an invalid problem: " + violations.front().code + " at " +
                            violations.front().path);
    }
    return p;
}

}  // namespace decisim::dialog
