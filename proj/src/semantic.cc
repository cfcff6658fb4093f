#include "koi/semantic.h"

#include <algorithm>
#include <string>

namespace koi {

void SubgoalList::validate() const {
  if (subgoals.empty()) throw InvariantError("subgoal list is empty");
  for (std::size_t i = 0; i < subgoals.size(); ++i)
    if (subgoals[i].empty())
      throw InvariantError("subgoal " + std::to_string(i) + " is empty");
}

QuerySet sample_observations(const Trajectory& demo, int stride) {
  if (stride < 1) throw InvariantError("query stride must be >= 1");
  if (!demo.has_frames())
    throw InvariantError("demo has no frames to sample");
  QuerySet q;
  const int n = demo.size();
  for (int i = 0; i < n; i += stride) q.indices.push_back(i);
  if (q.indices.back() != n - 1) q.indices.push_back(n - 1);
  q.frames.reserve(q.indices.size());
  for (int i : q.indices) q.frames.push_back(*demo[i].frame);
  return q;
}

SubgoalList decompose_task(const std::string& task, Annotator& annotator) {
  if (task.empty()) throw InvariantError("task description is empty");
  SubgoalList list{task, annotator.decompose(task)};
  list.validate();
  return list;
}

SemanticIndexSet validate_monotone(const std::vector<int>& indices,
                                   int demo_len) {
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] < 0 || indices[i] >= demo_len)
      throw TemporalConsistencyError(
          "key index " + std::to_string(indices[i]) + " at position " +
          std::to_string(i) + " outside [0, " + std::to_string(demo_len) + ")");
    if (i > 0 && indices[i] <= indices[i - 1])
      throw TemporalConsistencyError(
          "key indices not strictly increasing at positions " +
          std::to_string(i - 1) + ", " + std::to_string(i) + " (" +
          std::to_string(indices[i - 1]) + " then " +
          std::to_string(indices[i]) + ")");
  }
  return {indices};
}

namespace {

SemanticIndexSet check_reply(const std::vector<int>& reply,
                             const QuerySet& query, int k) {
  if (static_cast<int>(reply.size()) != k)
    throw TemporalConsistencyError("annotator returned " +
                                   std::to_string(reply.size()) +
                                   " indices for " + std::to_string(k) +
                                   " subgoals");
  SemanticIndexSet set = validate_monotone(reply, query.demo_len());
  for (int i : reply)
    if (!std::binary_search(query.indices.begin(), query.indices.end(), i))
      throw TemporalConsistencyError("key index " + std::to_string(i) +
                                     " is not a sampled index");
  return set;
}

}  // namespace

SemanticIndexSet annotate_semantic(const QuerySet& query,
                                   const SubgoalList& subgoals,
                                   Annotator& annotator, int max_retries) {
  if (query.indices.empty()) throw InvariantError("query set is empty");
  subgoals.validate();
  for (int attempt = 0;; ++attempt) {
    try {
      return check_reply(annotator.select_keys(query, subgoals), query,
                         subgoals.size());
    } catch (const TemporalConsistencyError&) {
      if (attempt >= max_retries) throw;
    } catch (const FormatError&) {
      if (attempt >= max_retries) throw;
    }
  }
}

ScriptedAnnotator::ScriptedAnnotator(std::vector<std::string> schema,
                                     std::vector<SubgoalEvent> events)
    : schema_(std::move(schema)), events_(std::move(events)) {}

ScriptedAnnotator::ScriptedAnnotator(std::vector<std::string> schema,
                                     const Trajectory& demo)
    : ScriptedAnnotator(std::move(schema), demo.meta().events) {}

std::vector<std::string> ScriptedAnnotator::decompose(const std::string&) {
  return schema_;
}

std::vector<int> ScriptedAnnotator::select_keys(const QuerySet& query,
                                                const SubgoalList& subgoals) {
  std::vector<int> out;
  std::size_t next_event = 0;
  for (const std::string& label : subgoals.subgoals) {
    auto it = std::find_if(events_.begin() + next_event, events_.end(),
                           [&](const SubgoalEvent& e) { return e.label == label; });
    if (it == events_.end())
      throw AnnotatorError("no recorded event for subgoal '" + label + "'");
    next_event = static_cast<std::size_t>(it - events_.begin()) + 1;
    auto q = std::lower_bound(query.indices.begin(), query.indices.end(),
                              it->index);
    if (q == query.indices.end())
      throw AnnotatorError("event '" + label + "' lies past the query set");
    out.push_back(*q);
  }
  return out;
}

}  // namespace koi
