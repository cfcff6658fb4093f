#include "koi/importance.h"

#include <cmath>
#include <numbers>
#include <string>

namespace koi {
namespace {

double normal_pdf(double x, double mean, double sigma) {
  double z = (x - mean) / sigma;
  return std::exp(-0.5 * z * z) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

void check_keys(const std::vector<int>& keys, int demo_len, const char* what) {
  for (int k : keys)
    if (k < 0 || k >= demo_len)
      throw InvariantError(std::string(what) + " key index " +
                           std::to_string(k) + " outside [0, " +
                           std::to_string(demo_len) + ")");
}

}  // namespace

void KeyWeightParams::validate() const {
  if (!(a_semantic > 0 && a_semantic_last > 0 && a_motion > 0 &&
        sigma_semantic > 0 && sigma_motion > 0))
    throw InvariantError("key weights and widths must be positive");
  if (!(sigma_semantic < sigma_motion))
    throw InvariantError("semantic width must be smaller than motion width");
}

ImportanceDistribution build_importance(const SemanticIndexSet& semantic,
                                        const MotionIndexSet& motion,
                                        const KeyWeightParams& params,
                                        int demo_len) {
  params.validate();
  if (demo_len < 1) throw InvariantError("demo length must be positive");
  if (semantic.indices.empty() && motion.indices.empty())
    throw InvariantError("importance needs at least one key state");
  check_keys(semantic.indices, demo_len, "semantic");
  check_keys(motion.indices, demo_len, "motion");

  Vector nu = Vector::Zero(demo_len);
  const std::size_t k = semantic.indices.size();
  for (std::size_t i = 0; i < k; ++i) {
    double weight = i + 1 == k ? params.a_semantic_last : params.a_semantic;
    for (int j = 0; j < demo_len; ++j)
      nu[j] += weight * normal_pdf(j, semantic.indices[i], params.sigma_semantic);
  }
  for (int m : motion.indices)
    for (int j = 0; j < demo_len; ++j)
      nu[j] += params.a_motion * normal_pdf(j, m, params.sigma_motion);

  double total = nu.sum();
  if (!(total > 0.0) || !std::isfinite(total))
    throw InvariantError("importance mixture has no mass on the demo grid");
  return {nu / total};
}

ImportanceDistribution uniform_importance(int demo_len) {
  if (demo_len < 1) throw InvariantError("demo length must be positive");
  return {Vector::Constant(demo_len, 1.0 / demo_len)};
}

}  // namespace koi
