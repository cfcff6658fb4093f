#pragma once

#include "koi/common.h"

namespace koi {

// c_ij = 1 - cos(expl_i, demo_j); every entry lies in [0, 2].
struct CostMatrix {
  Matrix entries;

  Eigen::Index rows() const { return entries.rows(); }
  Eigen::Index cols() const { return entries.cols(); }
};

// Coupling between exploration states (rows) and demonstration states
// (columns). `epsilon` is the entropy-regularization strength used to
// produce it, 0 for exact plans.
struct TransportPlan {
  Matrix entries;
  Vector mu;
  Vector nu;
  double epsilon = 0.0;
  int iterations = 0;
  // max(|row sums - mu|, |col sums - nu|) achieved on return.
  double marginal_violation = 0.0;
  bool converged = false;
};

struct RewardSeries {
  Vector values;
  double scale = 1.0;
};

struct SinkhornOptions {
  double epsilon = 0.05;
  int max_iters = 1000;
  double tol = 1e-6;
};

// Rows of `expl` and `demo` are feature vectors.
CostMatrix cosine_cost_matrix(const Matrix& expl, const Matrix& demo);

// Entropic OT solved with log-domain Sinkhorn updates of the dual
// potentials. Stops once the largest marginal violation drops below
// `tol` or after `max_iters` sweeps; on non-convergence the plan is still
// returned with `converged == false`.
TransportPlan sinkhorn(const CostMatrix& cost, const Vector& mu,
                       const Vector& nu, const SinkhornOptions& options = {});

// Exact unregularized OT by the transportation simplex method. Intended as
// a test oracle; rejects instances with more than 400 cells.
TransportPlan exact_ot_oracle(const CostMatrix& cost, const Vector& mu,
                              const Vector& nu);

// sum_ij plan_ij * cost_ij
double transport_cost(const TransportPlan& plan, const CostMatrix& cost);

// values[i] = -scale * sum_j plan_ij * cost_ij
RewardSeries per_state_rewards(const TransportPlan& plan,
                               const CostMatrix& cost, double scale);

// Throws InvariantError unless `p` is a nonnegative vector summing to one.
void check_distribution(const Vector& p, const char* name,
                        double tol = 1e-9);

}  // namespace koi
