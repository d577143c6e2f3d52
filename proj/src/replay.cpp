#include "decisim/replay.hpp"

namespace decisim {

SessionRecord make_session_record(std::string id, const DecisionProblem& problem, const ComparisonReport& report,
                                  std::vector<TranscriptEntry> transcript) {
    SessionRecord r;
    r.id = std::move(id);
    r.problem = problem_to_json(problem);
    r.objective = problem.objective.to_source();
    r.seed = problem.seed;
    r.sample_count = problem.sample_count;
    r.report = report_to_json(report);
    r.transcript = std::move(transcript);
    return r;
}

ComparisonReport replay(const SessionRecord& record) {
    DecisionProblem problem = problem_from_json(record.problem);
    problem.seed = record.seed;
    problem.sample_count = record.sample_count;
    return analyze(problem);
}

bool replay_matches(const SessionRecord& record) {
    return report_to_string(replay(record)) == record.report.dump(2);
}

}  // namespace decisim
