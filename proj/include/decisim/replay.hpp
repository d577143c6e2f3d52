#pragma once

#include <string>

#include "decisim/optimizer.hpp"
#include "decisim/warehouse.hpp"

namespace decisim {

/// Builds the session record for an analyzed problem.
SessionRecord make_session_record(std::string id, const DecisionProblem& problem, const ComparisonReport& report,
                                  std::vector<TranscriptEntry> transcript = {});

/// Re-runs the stored snapshot under the stored seed and sample count.
ComparisonReport replay(const SessionRecord& record);

/// True when the replayed report serializes to exactly the stored bytes.
bool replay_matches(const SessionRecord& record);

}  // namespace decisim
