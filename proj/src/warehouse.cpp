#include "decisim/warehouse.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <sys/stat.h>
#include <unistd.h>
#include <zlib.h>

#include <algorithm>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <ctime>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>

namespace decisim {

using namespace json_util;

namespace {

const std::string kHeader = "decisim-store " + std::to_string(kStoreVersion);

std::uint32_t checksum(std::string_view payload) {
    return static_cast<std::uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
}

std::string hex8(std::uint32_t v) {
    char buf[9];
    std::snprintf(buf, sizeof buf, "%08x", v);
    return buf;
}

std::string errno_message(const std::string& what) { return what + ": " + std::strerror(errno); }

void write_all(int fd, std::string_view data) {
    while (!data.empty()) {
        const ssize_t n = ::write(fd, data.data(), data.size());
        if (n < 0) {
            if (errno == EINTR) continue;
            throw StoreUnavailable(errno_message("write failed"));
        }
        data.remove_prefix(static_cast<std::size_t>(n));
    }
}

Json feedback_to_json(const Feedback& f) {
    Json j = {{"text", f.text}};
    if (f.rating) j["rating"] = *f.rating;
    return j;
}

Feedback feedback_from_json(const Json& j, const std::string& path) {
    reject_unknown_keys(j, {"rating", "text"}, path);
    Feedback f;
    f.text = j.contains("text") ? require_string(j, "text", path) : std::string{};
    if (j.contains("rating") && !j["rating"].is_null()) f.rating = static_cast<int>(require_integer(j, "rating", path));
    return f;
}

void validate_feedback(const Feedback& f) {
    if (f.rating && (*f.rating < 1 || *f.rating > 5)) throw std::invalid_argument("rating must be between 1 and 5");
}

}  // namespace

std::string utc_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

Json prior_to_json(const PriorRecord& p) {
    return {{"id", p.id},
            {"context_tags", p.context_tags},
            {"parameter_name", p.parameter_name},
            {"distribution", distribution_to_json(p.distribution)},
            {"source", p.source},
            {"created_at", p.created_at}};
}

PriorRecord prior_from_json(const Json& j) {
    const std::string path = "prior";
    reject_unknown_keys(j, {"id", "context_tags", "parameter_name", "distribution", "source", "created_at"}, path);
    PriorRecord p;
    p.id = require_string(j, "id", path);
    const Json& tags = require(j, "context_tags", path);
    if (!tags.is_array()) throw FormatError(join(path, "context_tags"), "expected an array of strings");
    for (const auto& t : tags) {
        if (!t.is_string()) throw FormatError(join(path, "context_tags"), "expected an array of strings");
        p.context_tags.insert(t.get<std::string>());
    }
    if (p.context_tags.empty()) throw FormatError(join(path, "context_tags"), "must not be empty");
    p.parameter_name = require_string(j, "parameter_name", path);
    p.distribution = distribution_from_json(require(j, "distribution", path), join(path, "distribution"));
    p.source = j.contains("source") ? require_string(j, "source", path) : std::string{};
    p.created_at = j.contains("created_at") ? require_string(j, "created_at", path) : std::string{};

    if (!expr::is_identifier(p.parameter_name))
        throw FormatError(join(path, "parameter_name"), "'" + p.parameter_name + "' is not a valid identifier");
    if (const auto violations = validate_distribution(p.distribution); !violations.empty())
        throw FormatError(join(path, "distribution"), violations.front().code + ": " + violations.front().message);
    return p;
}

Json session_to_json(const SessionRecord& s) {
    Json transcript = Json::array();
    for (const auto& t : s.transcript)
        transcript.push_back({{"speaker", t.speaker}, {"text", t.text}, {"timestamp", t.timestamp}});
    Json j = {{"id", s.id},
              {"problem", s.problem},
              {"objective", s.objective},
              {"config", {{"seed", s.seed}, {"sample_count", s.sample_count}}},
              {"report", s.report},
              {"transcript", std::move(transcript)}};
    j["feedback"] = s.feedback ? feedback_to_json(*s.feedback) : Json(nullptr);
    return j;
}

SessionRecord session_from_json(const Json& j) {
    const std::string path = "session";
    reject_unknown_keys(j, {"id", "problem", "objective", "config", "report", "transcript", "feedback"}, path);
    SessionRecord s;
    s.id = require_string(j, "id", path);
    s.problem = require(j, "problem", path);
    s.objective = require_string(j, "objective", path);
    const Json& config = require(j, "config", path);
    reject_unknown_keys(config, {"seed", "sample_count"}, join(path, "config"));
    s.seed = require_unsigned(config, "seed", join(path, "config"));
    s.sample_count = require_integer(config, "sample_count", join(path, "config"));
    s.report = require(j, "report", path);
    if (j.contains("transcript")) {
        for (const auto& t : j["transcript"]) {
            reject_unknown_keys(t, {"speaker", "text", "timestamp"}, join(path, "transcript"));
            s.transcript.push_back({require_string(t, "speaker", path), require_string(t, "text", path),
                                    t.contains("timestamp") ? require_string(t, "timestamp", path) : std::string{}});
        }
    }
    if (j.contains("feedback") && !j["feedback"].is_null())
        s.feedback = feedback_from_json(j["feedback"], join(path, "feedback"));
    return s;
}

Warehouse::Warehouse(std::filesystem::path path, Mode mode)
    : path_(std::move(path)), mode_(mode), state_(std::make_shared<const State>()) {
    if (mode_ == Mode::ReadWrite) {
        fd_ = ::open(path_.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
        if (fd_ < 0) throw StoreUnavailable(errno_message("cannot open store " + path_.string()));
        if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
            ::close(fd_);
            throw StoreUnavailable("store " + path_.string() + " is locked by another writer");
        }
    } else if (!std::filesystem::exists(path_)) {
        throw StoreUnavailable("store " + path_.string() + " does not exist");
    }
    try {
        load();
    } catch (...) {
        if (fd_ >= 0) ::close(fd_);
        throw;
    }
}

Warehouse::~Warehouse() {
    if (fd_ >= 0) ::close(fd_);
}

void Warehouse::load() {
    std::ifstream in(path_, std::ios::binary);
    if (!in) throw StoreUnavailable("cannot read store " + path_.string());
    std::string content((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (content.empty()) {
        if (mode_ == Mode::ReadWrite) {
            write_all(fd_, kHeader + "\n");
            ::fsync(fd_);
        }
        return;
    }
    const std::size_t header_end = content.find('\n');
    if (header_end == std::string::npos || content.compare(0, header_end, kHeader) != 0) {
        throw StoreUnavailable("store " + path_.string() + " has an unrecognized header");
    }

    auto state = std::make_shared<State>();
    std::size_t pos = header_end + 1;
    std::size_t good_end = pos;
    while (pos < content.size()) {
        const std::size_t eol = content.find('\n', pos);
        if (eol == std::string::npos) break;  // torn final write
        const std::string_view line(content.data() + pos, eol - pos);
        if (line.size() < 10 || line[8] != ' ') break;
        const std::string_view payload = line.substr(9);
        if (hex8(checksum(payload)) != line.substr(0, 8)) break;
        try {
            apply(*state, Json::parse(payload));
        } catch (const std::exception&) {
            break;
        }
        pos = eol + 1;
        good_end = pos;
    }
    if (good_end < content.size()) {
        dropped_ = static_cast<std::size_t>(std::count(content.begin() + static_cast<std::ptrdiff_t>(good_end),
                                                       content.end(), '\n')) +
                   (content.back() == '\n' ? 0 : 1);
        if (mode_ == Mode::ReadWrite) {
            if (::ftruncate(fd_, static_cast<off_t>(good_end)) != 0)
                throw StoreUnavailable(errno_message("cannot truncate damaged tail"));
            ::fsync(fd_);
        }
    }
    state_ = std::move(state);
}

void Warehouse::apply(State& state, const Json& entry) const {
    const std::string op = entry.at("op").get<std::string>();
    if (op == "put_prior") {
        auto prior = std::make_shared<const PriorRecord>(prior_from_json(entry.at("row")));
        if (auto old = state.priors.find(prior->id); old != state.priors.end()) {
            for (const auto& tag : old->second->context_tags) state.tag_index[tag].erase(prior->id);
        }
        for (const auto& tag : prior->context_tags) state.tag_index[tag].insert(prior->id);
        state.priors[prior->id] = std::move(prior);
    } else if (op == "put_session") {
        auto session = std::make_shared<const SessionRecord>(session_from_json(entry.at("row")));
        state.sessions[session->id] = std::move(session);
    } else if (op == "feedback") {
        const std::string id = entry.at("id").get<std::string>();
        auto it = state.sessions.find(id);
        if (it == state.sessions.end()) throw UnknownId(id);
        auto updated = std::make_shared<SessionRecord>(*it->second);
        updated->feedback = feedback_from_json(entry.at("feedback"), "feedback");
        it->second = std::move(updated);
    } else {
        throw FormatError("op", "unknown store operation '" + op + "'");
    }
}

void Warehouse::append(const Json& entry) {
    if (mode_ != Mode::ReadWrite) throw StoreUnavailable("store is open read-only");
    const std::string payload = entry.dump();
    const off_t before = ::lseek(fd_, 0, SEEK_END);
    try {
        write_all(fd_, hex8(checksum(payload)) + " " + payload + "\n");
        if (::fsync(fd_) != 0) throw StoreUnavailable(errno_message("fsync failed"));
    } catch (...) {
        // Leave no partial line behind for later appends to be stranded after.
        if (before >= 0 && ::ftruncate(fd_, before) == 0) ::fsync(fd_);
        throw;
    }
}

std::shared_ptr<const Warehouse::State> Warehouse::snapshot() const {
    std::lock_guard lock(snapshot_mutex_);
    return state_;
}

std::vector<PriorRecord> Warehouse::query_priors(const std::set<std::string>& tags,
                                                 const std::string& parameter_name) const {
    const auto state = snapshot();
    std::map<std::string, std::size_t> overlap;
    for (const auto& tag : tags) {
        auto it = state->tag_index.find(tag);
        if (it == state->tag_index.end()) continue;
        for (const auto& id : it->second) ++overlap[id];
    }
    std::vector<std::pair<std::size_t, const PriorRecord*>> hits;
    for (const auto& [id, count] : overlap) {
        const PriorRecord& p = *state->priors.at(id);
        if (p.parameter_name == parameter_name) hits.emplace_back(count, &p);
    }
    std::sort(hits.begin(), hits.end(), [](const auto& x, const auto& y) {
        if (x.first != y.first) return x.first > y.first;
        if (x.second->created_at != y.second->created_at) return x.second->created_at > y.second->created_at;
        return x.second->id < y.second->id;
    });
    std::vector<PriorRecord> out;
    for (const auto& [count, p] : hits) out.push_back(*p);
    return out;
}

void Warehouse::put_prior(const PriorRecord& prior) {
    std::lock_guard writer(writer_mutex_);
    const Json entry = {{"op", "put_prior"}, {"row", prior_to_json(prior)}};
    auto next = std::make_shared<State>(*snapshot());
    apply(*next, entry);  // validates before anything reaches disk
    append(entry);
    std::lock_guard lock(snapshot_mutex_);
    state_ = std::move(next);
}

std::string Warehouse::record_session(const SessionRecord& record) {
    std::lock_guard writer(writer_mutex_);
    if (record.id.empty()) throw std::invalid_argument("session record needs an id");
    if (record.feedback) validate_feedback(*record.feedback);
    auto current = snapshot();
    if (current->sessions.contains(record.id)) throw DuplicateId("session '" + record.id + "' already exists");
    const Json entry = {{"op", "put_session"}, {"row", session_to_json(record)}};
    auto next = std::make_shared<State>(*current);
    apply(*next, entry);
    append(entry);
    std::lock_guard lock(snapshot_mutex_);
    state_ = std::move(next);
    return record.id;
}

SessionRecord Warehouse::attach_feedback(const std::string& id, const Feedback& feedback) {
    std::lock_guard writer(writer_mutex_);
    validate_feedback(feedback);
    auto current = snapshot();
    if (!current->sessions.contains(id)) throw UnknownId("no session '" + id + "'");
    const Json entry = {{"op", "feedback"}, {"id", id}, {"feedback", feedback_to_json(feedback)}};
    auto next = std::make_shared<State>(*current);
    apply(*next, entry);
    append(entry);
    SessionRecord updated = *next->sessions.at(id);
    std::lock_guard lock(snapshot_mutex_);
    state_ = std::move(next);
    return updated;
}

std::optional<SessionRecord> Warehouse::find_session(const std::string& id) const {
    const auto state = snapshot();
    auto it = state->sessions.find(id);
    if (it == state->sessions.end()) return std::nullopt;
    return *it->second;
}

std::vector<PriorRecord> Warehouse::priors() const {
    const auto state = snapshot();
    std::vector<PriorRecord> out;
    for (const auto& [id, p] : state->priors) out.push_back(*p);
    return out;
}

std::vector<SessionRecord> Warehouse::sessions() const {
    const auto state = snapshot();
    std::vector<SessionRecord> out;
    for (const auto& [id, s] : state->sessions) out.push_back(*s);
    return out;
}

void Warehouse::export_jsonl(std::ostream& out) const {
    const auto state = snapshot();
    for (const auto& [id, p] : state->priors) out << Json{{"kind", "prior"}, {"row", prior_to_json(*p)}}.dump() << '\n';
    for (const auto& [id, s] : state->sessions)
        out << Json{{"kind", "session"}, {"row", session_to_json(*s)}}.dump() << '\n';
}

std::size_t Warehouse::import_jsonl(std::istream& in) {
    std::size_t imported = 0;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::parse_error& e) {
            throw FormatError("line " + std::to_string(line_no), e.what());
        }
        const std::string where = "line " + std::to_string(line_no);
        reject_unknown_keys(j, {"kind", "row"}, where);
        const std::string kind = require_string(j, "kind", where);
        if (kind == "prior") {
            put_prior(prior_from_json(require(j, "row", where)));
            ++imported;
        } else if (kind == "session") {
            SessionRecord s = session_from_json(require(j, "row", where));
            if (find_session(s.id)) continue;
            record_session(s);
            ++imported;
        } else {
            throw FormatError(where + ".kind", "expected \"prior\" or \"session\"");
        }
    }
    return imported;
}

}  // namespace decisim
