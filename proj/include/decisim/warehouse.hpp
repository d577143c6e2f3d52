#pragma once

// Context-aware prior store and session/feedback log.
//
// One file, append-only. Line 1 is the header "decisim-store <version>"; every
// following line is "<crc32 as 8 hex digits> <compact JSON entry>\n" where the
// entry is one of
//   {"op":"put_prior","row":{PriorRecord}}
//   {"op":"put_session","row":{SessionRecord}}
//   {"op":"feedback","id":"...","feedback":{"rating":n?,"text":"..."}}
// The in-memory tables and tag index are rebuilt by replaying the log at open.
// A torn or corrupt tail is cut off at the last valid entry.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "decisim/model.hpp"
#include "decisim/problem_json.hpp"

namespace decisim {

inline constexpr int kStoreVersion = 1;

struct PriorRecord {
    std::string id;
    std::set<std::string> context_tags;
    std::string parameter_name;
    Distribution distribution;
    std::string source;
    std::string created_at;  // ISO-8601 UTC, e.g. 2024-05-01T00:00:00Z
};

struct TranscriptEntry {
    std::string speaker;  // "user" | "agent"
    std::string text;
    std::string timestamp;

    friend bool operator==(const TranscriptEntry&, const TranscriptEntry&) = default;
};

struct Feedback {
    std::optional<int> rating;  // 1..5
    std::string text;
};

struct SessionRecord {
    std::string id;
    Json problem;            // problem-spec document
    std::string objective;   // objective source text
    std::uint64_t seed = 0;
    std::int64_t sample_count = 0;
    Json report;             // ComparisonReport document
    std::vector<TranscriptEntry> transcript;
    std::optional<Feedback> feedback;
};

class StoreUnavailable : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class DuplicateId : public std::runtime_error {
    using std::runtime_error::runtime_error;
};
class UnknownId : public std::runtime_error {
    using std::runtime_error::runtime_error;
};

Json prior_to_json(const PriorRecord& p);
PriorRecord prior_from_json(const Json& j);
Json session_to_json(const SessionRecord& s);
SessionRecord session_from_json(const Json& j);

std::string utc_timestamp();

class Warehouse {
public:
    enum class Mode { ReadWrite, ReadOnly };

    /// Opens (creating in ReadWrite mode) the store at `path`. ReadWrite takes an
    /// exclusive advisory lock, so at most one writer process exists per file.
    explicit Warehouse(std::filesystem::path path, Mode mode = Mode::ReadWrite);
    ~Warehouse();

    Warehouse(const Warehouse&) = delete;
    Warehouse& operator=(const Warehouse&) = delete;

    const std::filesystem::path& path() const noexcept { return path_; }

    /// Records for `parameter_name` sharing at least one tag with `tags`, ranked by
    /// overlap size desc, then created_at desc, then id asc.
    std::vector<PriorRecord> query_priors(const std::set<std::string>& tags, const std::string& parameter_name) const;

    /// Inserts or replaces a prior by id.
    void put_prior(const PriorRecord& prior);

    /// Durable before return. Throws DuplicateId.
    std::string record_session(const SessionRecord& record);
    /// Throws UnknownId.
    SessionRecord attach_feedback(const std::string& id, const Feedback& feedback);

    std::optional<SessionRecord> find_session(const std::string& id) const;
    std::vector<PriorRecord> priors() const;
    std::vector<SessionRecord> sessions() const;

    /// JSON lines: {"kind":"prior","row":{...}} and {"kind":"session","row":{...}}.
    void export_jsonl(std::ostream& out) const;
    /// Returns the number of rows imported. Sessions whose id already exists are skipped.
    std::size_t import_jsonl(std::istream& in);

    /// Entries dropped from a damaged tail during open.
    std::size_t recovered_tail_entries() const noexcept { return dropped_; }

private:
    struct State {
        std::map<std::string, std::shared_ptr<const PriorRecord>> priors;
        std::map<std::string, std::shared_ptr<const SessionRecord>> sessions;
        std::map<std::string, std::set<std::string>> tag_index;  // tag -> prior ids
    };

    std::shared_ptr<const State> snapshot() const;
    void apply(State& state, const Json& entry) const;
    void append(const Json& entry);
    void load();

    std::filesystem::path path_;
    Mode mode_;
    int fd_ = -1;
    std::size_t dropped_ = 0;

    mutable std::mutex snapshot_mutex_;  // guards the pointer swap only
    std::shared_ptr<const State> state_;
    std::mutex writer_mutex_;
};

}  // namespace decisim
