#include "koi/ot.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <queue>
#include <string>
#include <vector>

namespace koi {
namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_problem(const CostMatrix& cost, const Vector& mu,
                   const Vector& nu) {
  if (cost.rows() != mu.size() || cost.cols() != nu.size())
    throw DimensionError("cost is " + std::to_string(cost.rows()) + "x" +
                         std::to_string(cost.cols()) + " but marginals have " +
                         std::to_string(mu.size()) + " and " +
                         std::to_string(nu.size()) + " entries");
  if (cost.rows() == 0 || cost.cols() == 0)
    throw DimensionError("empty transport problem");
  if (!cost.entries.allFinite())
    throw InvariantError("cost matrix has non-finite entries");
  check_distribution(mu, "mu");
  check_distribution(nu, "nu");
}

double max_violation(const Matrix& plan, const Vector& mu, const Vector& nu) {
  double row = (plan.rowwise().sum() - mu).cwiseAbs().maxCoeff();
  double col = (plan.colwise().sum().transpose() - nu).cwiseAbs().maxCoeff();
  return std::max(row, col);
}

// Stable log(sum(exp(x))) that tolerates -inf entries.
template <typename Vec>
double log_sum_exp(const Vec& x) {
  double m = x.maxCoeff();
  if (m == kNegInf) return kNegInf;
  return m + std::log((x.array() - m).exp().sum());
}

}  // namespace

void check_distribution(const Vector& p, const char* name, double tol) {
  if (p.size() == 0) throw InvariantError(std::string(name) + " is empty");
  for (Eigen::Index k = 0; k < p.size(); ++k) {
    if (!std::isfinite(p[k]) || p[k] < 0.0)
      throw InvariantError(std::string(name) + "[" + std::to_string(k) +
                           "] is negative or non-finite");
  }
  double s = p.sum();
  if (std::abs(s - 1.0) > tol)
    throw InvariantError(std::string(name) + " sums to " + std::to_string(s) +
                         ", expected 1");
}

CostMatrix cosine_cost_matrix(const Matrix& expl, const Matrix& demo) {
  if (expl.cols() != demo.cols())
    throw DimensionError("feature dimensions differ: " +
                         std::to_string(expl.cols()) + " vs " +
                         std::to_string(demo.cols()));
  auto normalized = [](const Matrix& m, const char* side) {
    Vector norms = m.rowwise().norm();
    for (Eigen::Index i = 0; i < norms.size(); ++i) {
      if (!(norms[i] > 0.0) || !std::isfinite(norms[i]))
        throw InvariantError(std::string(side) + " feature vector " +
                             std::to_string(i) +
                             " has zero or non-finite norm");
    }
    return Matrix(norms.cwiseInverse().asDiagonal() * m);
  };
  Matrix a = normalized(expl, "exploration");
  Matrix b = normalized(demo, "demonstration");
  CostMatrix cost{Matrix::Ones(a.rows(), b.rows()) - a * b.transpose()};
  // Rounding can push 1 - cos just outside [0, 2].
  cost.entries = cost.entries.cwiseMax(0.0).cwiseMin(2.0);
  return cost;
}

TransportPlan sinkhorn(const CostMatrix& cost, const Vector& mu,
                       const Vector& nu, const SinkhornOptions& options) {
  check_problem(cost, mu, nu);
  if (!(options.epsilon > 0.0))
    throw InvariantError("epsilon must be positive");
  if (options.max_iters < 1) throw InvariantError("max_iters must be >= 1");
  if (!(options.tol > 0.0)) throw InvariantError("tol must be positive");

  const double eps = options.epsilon;
  const Eigen::Index n = cost.rows(), m = cost.cols();
  const Matrix& c = cost.entries;

  Vector log_mu = mu.array().log();
  Vector log_nu = nu.array().log();
  Vector f = Vector::Zero(n);
  Vector g = Vector::Zero(m);

  auto plan_from = [&](const Vector& fv, const Vector& gv) {
    Matrix p(n, m);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < m; ++j)
        p(i, j) = (fv[i] == kNegInf || gv[j] == kNegInf)
                      ? 0.0
                      : std::exp((fv[i] + gv[j] - c(i, j)) / eps);
    return p;
  };

  TransportPlan plan;
  plan.mu = mu;
  plan.nu = nu;
  plan.epsilon = eps;

  Vector scratch_row(m), scratch_col(n);
  for (int it = 1; it <= options.max_iters; ++it) {
    // f_i = eps log mu_i - eps LSE_j((g_j - c_ij) / eps)
    for (Eigen::Index i = 0; i < n; ++i) {
      if (log_mu[i] == kNegInf) {
        f[i] = kNegInf;
        continue;
      }
      for (Eigen::Index j = 0; j < m; ++j)
        scratch_row[j] = (g[j] - c(i, j)) / eps;
      f[i] = eps * (log_mu[i] - log_sum_exp(scratch_row));
    }
    for (Eigen::Index j = 0; j < m; ++j) {
      if (log_nu[j] == kNegInf) {
        g[j] = kNegInf;
        continue;
      }
      for (Eigen::Index i = 0; i < n; ++i)
        scratch_col[i] = (f[i] - c(i, j)) / eps;
      g[j] = eps * (log_nu[j] - log_sum_exp(scratch_col));
    }
    plan.iterations = it;

    // Columns match exactly after the g-update; only rows can be off.
    double row_violation = 0.0;
    for (Eigen::Index i = 0; i < n; ++i) {
      double s = 0.0;
      if (f[i] != kNegInf)
        for (Eigen::Index j = 0; j < m; ++j)
          if (g[j] != kNegInf) s += std::exp((f[i] + g[j] - c(i, j)) / eps);
      row_violation = std::max(row_violation, std::abs(s - mu[i]));
    }
    if (row_violation < options.tol) {
      plan.converged = true;
      break;
    }
  }
  plan.entries = plan_from(f, g);
  plan.marginal_violation = max_violation(plan.entries, mu, nu);
  plan.converged = plan.marginal_violation < options.tol;
  return plan;
}

TransportPlan exact_ot_oracle(const CostMatrix& cost, const Vector& mu,
                              const Vector& nu) {
  check_problem(cost, mu, nu);
  const int n = static_cast<int>(cost.rows());
  const int m = static_cast<int>(cost.cols());
  if (n * m > 400)
    throw DimensionError("exact oracle limited to 400 cells, got " +
                         std::to_string(n * m));
  const Matrix& c = cost.entries;
  constexpr double kTol = 1e-12;

  // Northwest-corner start: exactly n + m - 1 basic cells forming a
  // spanning tree over row nodes [0, n) and column nodes [n, n + m).
  Matrix x = Matrix::Zero(n, m);
  std::vector<std::vector<bool>> basic(n, std::vector<bool>(m, false));
  {
    Vector supply = mu, demand = nu;
    int i = 0, j = 0;
    while (i < n && j < m) {
      double q = std::min(supply[i], demand[j]);
      x(i, j) = q;
      basic[i][j] = true;
      supply[i] -= q;
      demand[j] -= q;
      if (i == n - 1) {
        ++j;
      } else if (j == m - 1) {
        ++i;
      } else if (supply[i] <= demand[j]) {
        ++i;
      } else {
        ++j;
      }
    }
  }

  const int nodes = n + m;
  auto adjacency = [&] {
    std::vector<std::vector<int>> adj(nodes);
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < m; ++j)
        if (basic[i][j]) {
          adj[i].push_back(n + j);
          adj[n + j].push_back(i);
        }
    return adj;
  };

  int iterations = 0;
  const int max_pivots = 100000;
  for (; iterations < max_pivots; ++iterations) {
    auto adj = adjacency();

    // Potentials with u_0 = 0 and u_i + v_j = c_ij on basic cells.
    std::vector<double> pot(nodes, 0.0);
    std::vector<bool> seen(nodes, false);
    std::queue<int> q;
    q.push(0);
    seen[0] = true;
    while (!q.empty()) {
      int a = q.front();
      q.pop();
      for (int b : adj[a]) {
        if (seen[b]) continue;
        seen[b] = true;
        int i = a < n ? a : b;
        int j = (a < n ? b : a) - n;
        pot[b] = c(i, j) - pot[a];
        q.push(b);
      }
    }

    // Bland's rule: first cell with a negative reduced cost enters.
    int enter_i = -1, enter_j = -1;
    for (int i = 0; i < n && enter_i < 0; ++i)
      for (int j = 0; j < m; ++j)
        if (!basic[i][j] && c(i, j) - pot[i] - pot[n + j] < -kTol) {
          enter_i = i;
          enter_j = j;
          break;
        }
    if (enter_i < 0) break;

    // Tree path from column node back to the row node closes the cycle.
    std::vector<int> parent(nodes, -1);
    std::vector<bool> visited(nodes, false);
    q = {};
    q.push(enter_i);
    visited[enter_i] = true;
    while (!q.empty()) {
      int a = q.front();
      q.pop();
      if (a == n + enter_j) break;
      for (int b : adj[a])
        if (!visited[b]) {
          visited[b] = true;
          parent[b] = a;
          q.push(b);
        }
    }
    // Walk column -> ... -> row, collecting cells. The first cell on the
    // path (adjacent to the entering column) gets a minus sign.
    std::vector<std::pair<int, int>> path;
    for (int b = n + enter_j; b != enter_i; b = parent[b]) {
      int a = parent[b];
      int i = a < n ? a : b;
      int j = (a < n ? b : a) - n;
      path.emplace_back(i, j);
    }
    double theta = 0.0;
    int leave = -1;
    for (std::size_t k = 0; k < path.size(); k += 2) {
      auto [i, j] = path[k];
      double v = x(i, j);
      bool better = leave < 0 || v < theta - kTol;
      bool tie_lower_index =
          leave >= 0 && std::abs(v - theta) <= kTol &&
          i * m + j < path[leave].first * m + path[leave].second;
      if (better || tie_lower_index) {
        theta = v;
        leave = static_cast<int>(k);
      }
    }
    x(enter_i, enter_j) += theta;
    for (std::size_t k = 0; k < path.size(); ++k) {
      auto [i, j] = path[k];
      x(i, j) += (k % 2 == 0) ? -theta : theta;
    }
    auto [li, lj] = path[leave];
    x(li, lj) = 0.0;
    basic[li][lj] = false;
    basic[enter_i][enter_j] = true;
  }

  TransportPlan plan;
  plan.entries = x.cwiseMax(0.0);
  plan.mu = mu;
  plan.nu = nu;
  plan.epsilon = 0.0;
  plan.iterations = iterations;
  plan.marginal_violation = max_violation(plan.entries, mu, nu);
  plan.converged = iterations < max_pivots;
  return plan;
}

double transport_cost(const TransportPlan& plan, const CostMatrix& cost) {
  if (plan.entries.rows() != cost.rows() || plan.entries.cols() != cost.cols())
    throw DimensionError("plan and cost shapes differ");
  return plan.entries.cwiseProduct(cost.entries).sum();
}

RewardSeries per_state_rewards(const TransportPlan& plan,
                               const CostMatrix& cost, double scale) {
  if (plan.entries.rows() != cost.rows() || plan.entries.cols() != cost.cols())
    throw DimensionError("plan and cost shapes differ");
  if (!(scale > 0.0)) throw InvariantError("reward scale must be positive");
  RewardSeries r;
  r.scale = scale;
  r.values = -scale * plan.entries.cwiseProduct(cost.entries).rowwise().sum();
  return r;
}

}  // namespace koi
