#pragma once

#include "koi/common.h"
#include "koi/keystates.h"

namespace koi {

// Mixture weights and widths (in time steps) for the expert-side marginal.
struct KeyWeightParams {
  double a_semantic = 0.15;       // every semantic key but the last
  double a_semantic_last = 0.35;  // the task-completion key
  double a_motion = 0.05;
  double sigma_semantic = 10.0;
  double sigma_motion = 25.0;

  // Throws InvariantError unless all fields are positive and
  // sigma_semantic < sigma_motion.
  void validate() const;
};

struct ImportanceDistribution {
  Vector nu;
};

// nu(j) proportional to
//   sum_i A^s_i N(j; I^s_i, sigma_s^2) + sum_i A^m N(j; I^m_i, sigma_m^2)
// at integer j in [0, demo_len), renormalized to sum to one.
ImportanceDistribution build_importance(const SemanticIndexSet& semantic,
                                        const MotionIndexSet& motion,
                                        const KeyWeightParams& params,
                                        int demo_len);

ImportanceDistribution uniform_importance(int demo_len);

}  // namespace koi
