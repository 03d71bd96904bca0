#pragma once

// Independent reference computations used only by the tests. Each one takes
// a different computational route from the library code it checks.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <random>
#include <vector>

namespace oracle {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

/// Stationary vector of a column-stochastic P by a direct linear solve of
/// (P - I) mu = 0 with one row replaced by sum(mu) = 1.
inline Vector stationary_direct(const Matrix& P) {
  const Eigen::Index n = P.rows();
  Matrix A = P - Matrix::Identity(n, n);
  A.row(n - 1).setOnes();
  Vector b = Vector::Zero(n);
  b(n - 1) = 1.0;
  return A.fullPivLu().solve(b);
}

/// NNLS by enumerating every passive set and keeping the best feasible
/// unconstrained least-squares solution on it. Exponential; tiny inputs only.
inline Vector nnls_enumerate(const Matrix& A, const Vector& b) {
  const int n = static_cast<int>(A.cols());
  Vector best = Vector::Zero(n);
  double best_res = (b).squaredNorm();
  for (std::uint32_t mask = 1; mask < (1u << n); ++mask) {
    std::vector<int> idx;
    for (int j = 0; j < n; ++j)
      if (mask & (1u << j)) idx.push_back(j);
    Matrix sub(A.rows(), static_cast<Eigen::Index>(idx.size()));
    for (std::size_t k = 0; k < idx.size(); ++k) sub.col(static_cast<Eigen::Index>(k)) = A.col(idx[k]);
    Vector z = sub.completeOrthogonalDecomposition().solve(b);
    if ((z.array() < -1e-12).any()) continue;
    Vector x = Vector::Zero(n);
    for (std::size_t k = 0; k < idx.size(); ++k) x(idx[k]) = std::max(0.0, z(static_cast<Eigen::Index>(k)));
    const double res = (A * x - b).squaredNorm();
    if (res < best_res - 1e-14) {
      best_res = res;
      best = x;
    }
  }
  return best;
}

/// max c^T x s.t. A x <= b, x >= 0 by enumerating every vertex of the
/// feasible polytope (intersections of n tight constraints). Tiny inputs only.
/// Returns nullopt when infeasible.
inline std::optional<double> lp_max_by_vertices(const Vector& c, const Matrix& A, const Vector& b) {
  const int n = static_cast<int>(c.size());
  const int m = static_cast<int>(A.rows());
  Matrix G(m + n, n);
  Vector h(m + n);
  G.topRows(m) = A;
  h.head(m) = b;
  G.bottomRows(n) = -Matrix::Identity(n, n);
  h.tail(n).setZero();
  const int rows = m + n;
  std::optional<double> best;
  std::vector<int> pick(static_cast<std::size_t>(n));
  std::function<void(int, int)> rec = [&](int start, int depth) {
    if (depth == n) {
      Matrix T(n, n);
      Vector t(n);
      for (int k = 0; k < n; ++k) {
        T.row(k) = G.row(pick[static_cast<std::size_t>(k)]);
        t(k) = h(pick[static_cast<std::size_t>(k)]);
      }
      Eigen::FullPivLU<Matrix> lu(T);
      if (lu.rank() < n) return;
      Vector x = lu.solve(t);
      if (((G * x - h).array() > 1e-9).any()) return;
      const double v = c.dot(x);
      if (!best || v > *best) best = v;
      return;
    }
    for (int i = start; i < rows; ++i) {
      pick[static_cast<std::size_t>(depth)] = i;
      rec(i + 1, depth + 1);
    }
  };
  rec(0, 0);
  return best;
}

/// Central finite-difference gradient of a scalar function.
inline Vector fd_gradient(const std::function<double(const Vector&)>& f, const Vector& x,
                          double h = 1e-6) {
  Vector g(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Vector xp = x, xm = x;
    xp(i) += h;
    xm(i) -= h;
    g(i) = (f(xp) - f(xm)) / (2 * h);
  }
  return g;
}

struct MonteCarloEstimate {
  double mean;
  double standard_error;
};

/// Long-run reward average of a simulated trajectory. The standard error uses
/// non-overlapping batch means to account for autocorrelation.
/// kernel row s*A+a is P(.|s,a); policy and reward are |S| x |A|.
inline MonteCarloEstimate simulate_average_reward(const Matrix& kernel, const Matrix& policy,
                                                  const Matrix& reward, long steps,
                                                  std::uint64_t seed, int batches = 100) {
  const int S = static_cast<int>(policy.rows());
  const int A = static_cast<int>(policy.cols());
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  auto draw = [&](const auto& row, int n) {
    double x = u(rng), acc = 0.0;
    for (int k = 0; k < n; ++k) {
      acc += row(k);
      if (x < acc) return k;
    }
    return n - 1;
  };
  int s = 0;
  const long per_batch = steps / batches;
  std::vector<double> means;
  double total = 0.0;
  for (int bt = 0; bt < batches; ++bt) {
    double acc = 0.0;
    for (long t = 0; t < per_batch; ++t) {
      const int a = draw(policy.row(s), A);
      acc += reward(s, a);
      s = draw(kernel.row(s * A + a), S);
    }
    means.push_back(acc / static_cast<double>(per_batch));
    total += acc;
  }
  const double mean = total / static_cast<double>(per_batch * batches);
  double var = 0.0;
  for (double m : means) var += (m - mean) * (m - mean);
  var /= static_cast<double>(batches - 1);
  return {mean, std::sqrt(var / static_cast<double>(batches))};
}

}  // namespace oracle
