#pragma once

// Dense linear-algebra and optimization kernels shared by every module.
// Everything here is desk scale: dense storage, small dimensions.

#include <Eigen/Dense>

#include <functional>
#include <limits>
#include <vector>

namespace rlconn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// ---------------------------------------------------------------------------
// SVD and friends

struct Svd {
  Matrix U;         // m x k, orthonormal columns
  Vector singular;  // k, descending
  Matrix V;         // n x k, orthonormal columns
};

/// Thin singular value decomposition M = U diag(s) V^T, k = min(m, n).
Svd svd(const Matrix& M);

/// Number of singular values above rel_tol * sigma_max.
int numerical_rank(const Matrix& M, double rel_tol = 1e-10);

/// Smallest singular value (min(m, n)-th); 0 for empty matrices.
double min_singular_value(const Matrix& M);

/// Moore-Penrose pseudo-inverse, singular values below rel_tol * sigma_max
/// treated as zero.
Matrix pinv(const Matrix& M, double rel_tol = 1e-10);

/// Orthonormal basis (as columns) of ker(M) = {x : M x = 0}.
Matrix null_space(const Matrix& M, double rel_tol = 1e-10);

// ---------------------------------------------------------------------------
// Nonnegative least squares (Lawson-Hanson active set)

struct NnlsResult {
  Vector x;
  double residual_norm = 0.0;
  int iterations = 0;
};

/// argmin_{x >= 0} ||A x - b||_2. Throws IterationCap when the outer loop
/// exceeds max_iter (default 3 * cols + 10).
NnlsResult nnls(const Matrix& A, const Vector& b, int max_iter = 0);

// ---------------------------------------------------------------------------
// Linear programming

/// minimize c^T x  s.t.  A_ub x <= b_ub,  A_eq x = b_eq,  lower <= x <= upper.
/// Empty lower/upper mean x >= 0 with no upper bound. Infinite entries are
/// allowed in lower/upper.
struct LpProblem {
  Vector c;
  Matrix A_ub;
  Vector b_ub;
  Matrix A_eq;
  Vector b_eq;
  Vector lower;
  Vector upper;

  int num_vars() const { return static_cast<int>(c.size()); }
};

struct LpResult {
  double optimum = 0.0;
  Vector x;
  // Lagrange multipliers in the sign convention of the Lagrangian
  // L = c^T x - y_ub^T (b_ub - A_ub x) ... i.e. dual_ub <= 0 at optimum,
  // dual_eq free, with c = A_ub^T dual_ub + A_eq^T dual_eq + (bound duals).
  Vector dual_ub;
  Vector dual_eq;
  int iterations = 0;
};

/// Dense two-phase simplex with Bland's anti-cycling rule.
/// Throws Infeasible, Unbounded, or Cycling (iteration cap).
LpResult lp_solve(const LpProblem& problem);

// ---------------------------------------------------------------------------
// Projections and saddle points

using Projection = std::function<Vector(const Vector&)>;

struct DykstraResult {
  Vector x;
  int iterations = 0;
  double last_change = 0.0;
};

/// Dykstra's alternating projection onto the intersection of closed convex
/// sets, each given by its exact projection operator.
DykstraResult dykstra(const Vector& z, const std::vector<Projection>& projections,
                      double tol = 1e-13, int max_iter = 100000);

struct ExtragradientOptions {
  double step = 0.0;           // 0 selects 0.9 / ||A||_2
  int max_iter = 100000;
  int check_every = 50;
  double target_gap = 1e-4;
};

/// Exact duality gap of an iterate pair; supplied by the caller since only
/// the caller knows how to solve the two best-response problems.
using GapOracle = std::function<double(const Vector& x, const Vector& y)>;

struct SaddleResult {
  Vector x;
  Vector y;
  double value = 0.0;  // x^T A y at the returned pair
  double gap = kInf;   // last evaluated duality gap
  int iterations = 0;
  bool converged = false;
};

/// Projected extragradient for max_{x in X} min_{y in Y} x^T A y.
/// Without a gap oracle the fixed-point residual is reported as the gap.
SaddleResult extragradient_saddle(const Matrix& coupling, const Projection& project_x,
                                  const Projection& project_y, Vector x0, Vector y0,
                                  const ExtragradientOptions& options = {},
                                  const GapOracle& gap = {});

/// Euclidean projection onto the probability simplex.
Vector project_simplex(const Vector& v);

}  // namespace rlconn
