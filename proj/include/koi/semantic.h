#pragma once

#include <string>
#include <vector>

#include "koi/common.h"
#include "koi/keystates.h"
#include "koi/trajectory.h"

namespace koi {

inline constexpr int kDefaultQueryStride = 10;

struct SubgoalList {
  std::string task_description;
  std::vector<std::string> subgoals;

  int size() const { return static_cast<int>(subgoals.size()); }
  void validate() const;
};

// Frames sampled every `stride` steps, plus the final frame.
struct QuerySet {
  std::vector<int> indices;
  std::vector<Frame> frames;

  // The final sampled index is always the last demo state.
  int demo_len() const { return indices.empty() ? 0 : indices.back() + 1; }
};

// Annotator replied with indices that are out of order, out of range or
// off the sampling grid.
class TemporalConsistencyError : public InvariantError {
 public:
  using InvariantError::InvariantError;
};

// Transport-level failure talking to an annotator.
class AnnotatorError : public Error {
 public:
  using Error::Error;
};

class Annotator {
 public:
  virtual ~Annotator() = default;

  virtual std::vector<std::string> decompose(const std::string& task) = 0;
  // One call covering every subgoal. Returns one index per subgoal.
  virtual std::vector<int> select_keys(const QuerySet& query,
                                       const SubgoalList& subgoals) = 0;
};

// Replays ground-truth subgoal events from the environment.
class ScriptedAnnotator : public Annotator {
 public:
  ScriptedAnnotator(std::vector<std::string> schema,
                    std::vector<SubgoalEvent> events);
  // Uses the events recorded in the demo's metadata.
  ScriptedAnnotator(std::vector<std::string> schema, const Trajectory& demo);

  std::vector<std::string> decompose(const std::string& task) override;
  std::vector<int> select_keys(const QuerySet& query,
                               const SubgoalList& subgoals) override;

 private:
  std::vector<std::string> schema_;
  std::vector<SubgoalEvent> events_;
};

QuerySet sample_observations(const Trajectory& demo,
                             int stride = kDefaultQueryStride);

SubgoalList decompose_task(const std::string& task, Annotator& annotator);

// Throws TemporalConsistencyError naming the first offending entry.
SemanticIndexSet validate_monotone(const std::vector<int>& indices,
                                   int demo_len);

// Rejected replies (bad format, wrong count, non-monotone, off-grid) are
// retried up to `max_retries` times; transport errors propagate at once.
SemanticIndexSet annotate_semantic(const QuerySet& query,
                                   const SubgoalList& subgoals,
                                   Annotator& annotator, int max_retries = 2);

}  // namespace koi
