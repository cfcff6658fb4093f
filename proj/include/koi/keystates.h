#pragma once

#include <vector>

namespace koi {

// Time steps of semantic key states, strictly increasing within
// [0, demo_len). The last entry marks task completion.
struct SemanticIndexSet {
  std::vector<int> indices;
};

// One motion key state per non-empty open interval between consecutive
// semantic key states.
struct MotionIndexSet {
  std::vector<int> indices;
};

struct KeyStateSet {
  SemanticIndexSet semantic;
  MotionIndexSet motion;
};

}  // namespace koi
