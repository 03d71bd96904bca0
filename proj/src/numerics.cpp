#include "rlconn/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "rlconn/errors.hpp"

namespace rlconn {

// ---------------------------------------------------------------------------
// SVD

Svd svd(const Matrix& M) {
  Svd out;
  if (M.rows() == 0 || M.cols() == 0) {
    out.U = Matrix(M.rows(), 0);
    out.singular = Vector(0);
    out.V = Matrix(M.cols(), 0);
    return out;
  }
  Eigen::JacobiSVD<Matrix> dec(M, Eigen::ComputeThinU | Eigen::ComputeThinV);
  out.U = dec.matrixU();
  out.singular = dec.singularValues();
  out.V = dec.matrixV();
  if (!out.singular.allFinite() || !out.U.allFinite() || !out.V.allFinite()) {
    throw NonConvergence("svd produced non-finite factors");
  }
  return out;
}

int numerical_rank(const Matrix& M, double rel_tol) {
  if (M.size() == 0) return 0;
  const Vector s = svd(M).singular;
  if (s(0) == 0.0) return 0;
  const double cut = rel_tol * s(0);
  return static_cast<int>((s.array() > cut).count());
}

double min_singular_value(const Matrix& M) {
  if (M.size() == 0) return 0.0;
  const Vector s = svd(M).singular;
  return s(s.size() - 1);
}

Matrix pinv(const Matrix& M, double rel_tol) {
  Matrix out = Matrix::Zero(M.cols(), M.rows());
  if (M.size() == 0) return out;
  const Svd d = svd(M);
  if (d.singular(0) == 0.0) return out;
  const double cut = rel_tol * d.singular(0);
  for (Eigen::Index i = 0; i < d.singular.size(); ++i) {
    if (d.singular(i) > cut) {
      out.noalias() += (d.V.col(i) / d.singular(i)) * d.U.col(i).transpose();
    }
  }
  return out;
}

Matrix null_space(const Matrix& M, double rel_tol) {
  const Eigen::Index n = M.cols();
  if (M.rows() == 0) return Matrix::Identity(n, n);
  Eigen::JacobiSVD<Matrix> dec(M, Eigen::ComputeFullV);
  const Vector& s = dec.singularValues();
  const double cut = s.size() > 0 ? rel_tol * s(0) : 0.0;
  Eigen::Index rank = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (s(i) > cut && s(i) > 0.0) ++rank;
  }
  return dec.matrixV().rightCols(n - rank);
}

// ---------------------------------------------------------------------------
// NNLS

namespace {

Vector solve_on_support(const Matrix& A, const Vector& b, const std::vector<int>& support) {
  Matrix As(A.rows(), static_cast<Eigen::Index>(support.size()));
  for (std::size_t k = 0; k < support.size(); ++k) As.col(k) = A.col(support[k]);
  return As.colPivHouseholderQr().solve(b);
}

}  // namespace

NnlsResult nnls(const Matrix& A, const Vector& b, int max_iter) {
  const int n = static_cast<int>(A.cols());
  if (A.rows() != b.size()) throw ShapeMismatch("nnls: rows of A differ from size of b");
  if (max_iter <= 0) max_iter = 3 * n + 10;

  NnlsResult res;
  res.x = Vector::Zero(n);
  if (n == 0) {
    res.residual_norm = b.norm();
    return res;
  }

  const double tol = 10.0 * std::numeric_limits<double>::epsilon() *
                     std::max(1.0, A.cwiseAbs().maxCoeff()) *
                     static_cast<double>(std::max(A.rows(), A.cols())) *
                     std::max(1.0, b.cwiseAbs().maxCoeff());

  std::vector<bool> passive(n, false);
  // Variables whose admission failed on round-off; cleared whenever x moves.
  std::vector<bool> blocked(n, false);
  Vector x = Vector::Zero(n);
  Vector w = A.transpose() * b;

  int outer = 0;
  while (true) {
    int j_best = -1;
    double w_best = tol;
    for (int j = 0; j < n; ++j) {
      if (!passive[j] && !blocked[j] && w(j) > w_best) {
        w_best = w(j);
        j_best = j;
      }
    }
    if (j_best < 0) break;
    if (++outer > max_iter) throw IterationCap("nnls outer loop exceeded " + std::to_string(max_iter));
    passive[j_best] = true;

    bool moved = false;
    for (int inner = 0;; ++inner) {
      std::vector<int> support;
      for (int j = 0; j < n; ++j)
        if (passive[j]) support.push_back(j);
      Vector s = Vector::Zero(n);
      if (!support.empty()) {
        const Vector s_p = solve_on_support(A, b, support);
        for (std::size_t k = 0; k < support.size(); ++k) s(support[k]) = s_p(k);
      }
      bool feasible = true;
      for (int j : support)
        if (s(j) <= tol) feasible = false;
      if (feasible) {
        moved = moved || (s - x).cwiseAbs().maxCoeff() > 0.0;
        x = s;
        break;
      }
      if (inner > 3 * n + 10) throw IterationCap("nnls inner loop did not settle");
      double step = 1.0;
      for (int j : support) {
        if (s(j) <= tol) {
          const double denom = x(j) - s(j);
          step = std::min(step, denom > 0.0 ? x(j) / denom : 0.0);
        }
      }
      const Vector x_new = x + step * (s - x);
      moved = moved || (x_new - x).cwiseAbs().maxCoeff() > 0.0;
      x = x_new;
      for (int j : support) {
        if (x(j) <= tol) {
          x(j) = 0.0;
          passive[j] = false;
        }
      }
    }
    if (moved) {
      std::fill(blocked.begin(), blocked.end(), false);
    } else if (!passive[j_best]) {
      blocked[j_best] = true;
    }
    w = A.transpose() * (b - A * x);
  }

  res.x = x;
  res.residual_norm = (A * x - b).norm();
  res.iterations = outer;
  return res;
}

// ---------------------------------------------------------------------------
// LP: dense two-phase tableau simplex with Bland's rule

namespace {

constexpr double kPivotTol = 1e-11;
constexpr double kCostTol = 1e-11;

struct Tableau {
  // rows 0..m-1 are constraints, row m is the reduced-cost row.
  // last column holds the right-hand side.
  Matrix t;
  std::vector<int> basis;
  int m = 0;
  int ncols = 0;  // structural + slack + artificial columns

  void pivot(int row, int col) {
    t.row(row) /= t(row, col);
    for (int i = 0; i <= m; ++i) {
      if (i == row) continue;
      const double f = t(i, col);
      if (f != 0.0) t.row(i) -= f * t.row(row);
    }
    basis[row] = col;
  }

  void set_costs(const Vector& cost) {
    t.row(m).setZero();
    t.row(m).head(ncols) = cost.transpose();
    for (int i = 0; i < m; ++i) {
      const double cb = cost(basis[i]);
      if (cb != 0.0) t.row(m) -= cb * t.row(i);
    }
  }

  // Returns number of pivots; throws Unbounded / Cycling.
  int optimize(const std::vector<bool>& allowed, int cap) {
    int iters = 0;
    while (true) {
      int enter = -1;
      for (int j = 0; j < ncols; ++j) {
        if (allowed[j] && t(m, j) < -kCostTol) {
          enter = j;
          break;
        }
      }
      if (enter < 0) return iters;
      int leave = -1;
      double best = kInf;
      for (int i = 0; i < m; ++i) {
        const double a = t(i, enter);
        if (a > kPivotTol) {
          const double ratio = std::max(0.0, t(i, ncols)) / a;
          if (ratio < best - 1e-14 ||
              (std::abs(ratio - best) <= 1e-14 && leave >= 0 && basis[i] < basis[leave])) {
            best = ratio;
            leave = i;
          }
        }
      }
      if (leave < 0) throw Unbounded("lp_solve: objective unbounded below");
      pivot(leave, enter);
      if (++iters > cap) throw Cycling("lp_solve: iteration cap reached");
    }
  }
};

}  // namespace

LpResult lp_solve(const LpProblem& p) {
  const int n = p.num_vars();
  const int m_ub = static_cast<int>(p.b_ub.size());
  const int m_eq = static_cast<int>(p.b_eq.size());
  if (p.A_ub.rows() != m_ub || (m_ub > 0 && p.A_ub.cols() != n))
    throw ShapeMismatch("lp_solve: A_ub shape");
  if (p.A_eq.rows() != m_eq || (m_eq > 0 && p.A_eq.cols() != n))
    throw ShapeMismatch("lp_solve: A_eq shape");

  Vector lo = p.lower.size() == n ? p.lower : Vector::Zero(n);
  Vector hi = p.upper.size() == n ? p.upper : Vector::Constant(n, kInf);

  // x = offset + T u with u >= 0.
  std::vector<std::pair<int, double>> cols;  // (original var, sign) per u column
  Vector offset = Vector::Zero(n);
  std::vector<std::pair<int, double>> bound_rows;  // (u column, capacity)
  for (int j = 0; j < n; ++j) {
    if (std::isfinite(lo(j))) {
      offset(j) = lo(j);
      cols.push_back({j, 1.0});
      if (std::isfinite(hi(j))) {
        if (hi(j) < lo(j)) throw Infeasible("lp_solve: empty variable bounds");
        bound_rows.push_back({static_cast<int>(cols.size()) - 1, hi(j) - lo(j)});
      }
    } else if (std::isfinite(hi(j))) {
      offset(j) = hi(j);
      cols.push_back({j, -1.0});
    } else {
      cols.push_back({j, 1.0});
      cols.push_back({j, -1.0});
    }
  }
  const int nu = static_cast<int>(cols.size());
  Matrix T = Matrix::Zero(n, nu);
  for (int k = 0; k < nu; ++k) T(cols[k].first, k) = cols[k].second;

  const int m_bd = static_cast<int>(bound_rows.size());
  const int m_ineq = m_ub + m_bd;
  const int m = m_ineq + m_eq;

  Matrix A = Matrix::Zero(m, nu + m_ineq);
  Vector b(m);
  if (m_ub > 0) {
    A.block(0, 0, m_ub, nu) = p.A_ub * T;
    b.head(m_ub) = p.b_ub - p.A_ub * offset;
  }
  for (int k = 0; k < m_bd; ++k) {
    A(m_ub + k, bound_rows[k].first) = 1.0;
    b(m_ub + k) = bound_rows[k].second;
  }
  for (int i = 0; i < m_ineq; ++i) A(i, nu + i) = 1.0;
  if (m_eq > 0) {
    A.block(m_ineq, 0, m_eq, nu) = p.A_eq * T;
    b.tail(m_eq) = p.b_eq - p.A_eq * offset;
  }
  Vector c_std = Vector::Zero(nu + m_ineq);
  c_std.head(nu) = T.transpose() * p.c;

  // Row scaling and sign normalization; remember the factor per row.
  Vector row_factor = Vector::Ones(m);
  for (int i = 0; i < m; ++i) {
    const double s = A.row(i).cwiseAbs().maxCoeff();
    if (s > 0.0) {
      A.row(i) /= s;
      b(i) /= s;
      row_factor(i) /= s;
    }
    if (b(i) < 0.0) {
      A.row(i) *= -1.0;
      b(i) = -b(i);
      row_factor(i) = -row_factor(i);
    }
  }

  const int nstd = nu + m_ineq;
  // Slack columns usable as an initial basis have coefficient +1 after scaling.
  std::vector<int> art_row;
  Tableau tab;
  tab.m = m;
  tab.basis.assign(m, -1);
  for (int i = 0; i < m_ineq; ++i) {
    if (A(i, nu + i) > 0.0) tab.basis[i] = nu + i;
  }
  for (int i = 0; i < m; ++i)
    if (tab.basis[i] < 0) art_row.push_back(i);
  const int nart = static_cast<int>(art_row.size());
  tab.ncols = nstd + nart;
  tab.t = Matrix::Zero(m + 1, tab.ncols + 1);
  tab.t.block(0, 0, m, nstd) = A;
  tab.t.block(0, tab.ncols, m, 1) = b;
  for (int k = 0; k < nart; ++k) {
    tab.t(art_row[k], nstd + k) = 1.0;
    tab.basis[art_row[k]] = nstd + k;
  }
  // Slack basis columns scaled to +1 so the tableau stays canonical.
  for (int i = 0; i < m; ++i) {
    const int bc = tab.basis[i];
    if (bc < nstd) tab.t.row(i) /= tab.t(i, bc);
  }

  const int cap = 200 * (m + tab.ncols) + 2000;
  int iterations = 0;
  std::vector<bool> allowed(tab.ncols, true);

  if (nart > 0) {
    Vector c1 = Vector::Zero(tab.ncols);
    c1.tail(nart).setOnes();
    tab.set_costs(c1);
    iterations += tab.optimize(allowed, cap);
    const double infeas = -tab.t(m, tab.ncols);
    if (infeas > 1e-9 * std::max(1.0, b.cwiseAbs().maxCoeff())) {
      throw Infeasible("lp_solve: phase one ended with infeasibility " + std::to_string(infeas));
    }
    // Drive artificial variables out of the basis; drop redundant rows.
    std::vector<int> keep;
    for (int i = 0; i < m; ++i) {
      if (tab.basis[i] >= nstd) {
        int col = -1;
        double best = 1e-9;
        for (int j = 0; j < nstd; ++j) {
          if (std::abs(tab.t(i, j)) > best) {
            best = std::abs(tab.t(i, j));
            col = j;
          }
        }
        if (col >= 0) {
          tab.pivot(i, col);
          keep.push_back(i);
        }
      } else {
        keep.push_back(i);
      }
    }
    if (static_cast<int>(keep.size()) < m) {
      Matrix t2(static_cast<Eigen::Index>(keep.size()) + 1, tab.ncols + 1);
      std::vector<int> basis2;
      for (std::size_t k = 0; k < keep.size(); ++k) {
        t2.row(k) = tab.t.row(keep[k]);
        basis2.push_back(tab.basis[keep[k]]);
      }
      t2.row(keep.size()) = tab.t.row(m);
      tab.t = t2;
      tab.basis = basis2;
      tab.m = static_cast<int>(keep.size());
    }
    for (int k = 0; k < nart; ++k) allowed[nstd + k] = false;
  }

  Vector c2 = Vector::Zero(tab.ncols);
  c2.head(nstd) = c_std;
  tab.set_costs(c2);
  iterations += tab.optimize(allowed, cap);

  // Recompute the basic solution and duals from the original standardized
  // data to shed tableau round-off.
  const int mb = tab.m;
  Matrix B(m, mb);
  Vector cB(mb);
  for (int k = 0; k < mb; ++k) {
    const int col = tab.basis[k];
    B.col(k) = A.col(col);
    cB(k) = c_std(col);
  }
  Vector xB = B.colPivHouseholderQr().solve(b);
  Vector u_full = Vector::Zero(nstd);
  for (int k = 0; k < mb; ++k) u_full(tab.basis[k]) = std::max(0.0, xB(k));

  // Duals: B^T y = cB (least squares handles removed redundant rows).
  Vector y = B.transpose().colPivHouseholderQr().solve(cB);

  LpResult res;
  res.iterations = iterations;
  res.x = offset + T * u_full.head(nu);
  res.optimum = p.c.dot(res.x);
  Vector y_orig = y.cwiseProduct(row_factor);
  res.dual_ub = y_orig.head(m_ub);
  res.dual_eq = y_orig.tail(m_eq);
  return res;
}

// ---------------------------------------------------------------------------
// Dykstra

DykstraResult dykstra(const Vector& z, const std::vector<Projection>& projections, double tol,
                      int max_iter) {
  DykstraResult res;
  const std::size_t k = projections.size();
  Vector x = z;
  std::vector<Vector> inc(k, Vector::Zero(z.size()));
  for (int it = 1; it <= max_iter; ++it) {
    const Vector x_prev = x;
    double inc_change = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
      const Vector y = projections[i](x + inc[i]);
      const Vector new_inc = x + inc[i] - y;
      inc_change = std::max(inc_change, (new_inc - inc[i]).cwiseAbs().maxCoeff());
      inc[i] = new_inc;
      x = y;
    }
    res.iterations = it;
    res.last_change = (x - x_prev).cwiseAbs().maxCoeff();
    if (res.last_change <= tol && inc_change <= tol) break;
  }
  res.x = x;
  return res;
}

// ---------------------------------------------------------------------------
// Extragradient

SaddleResult extragradient_saddle(const Matrix& A, const Projection& project_x,
                                  const Projection& project_y, Vector x0, Vector y0,
                                  const ExtragradientOptions& options, const GapOracle& gap) {
  if (A.rows() != x0.size() || A.cols() != y0.size())
    throw ShapeMismatch("extragradient_saddle: coupling does not match iterate sizes");
  double eta = options.step;
  if (eta <= 0.0) {
    const double L = A.size() > 0 ? svd(A).singular(0) : 0.0;
    eta = L > 0.0 ? 0.9 / L : 1.0;
  }
  SaddleResult res;
  Vector x = project_x(x0);
  Vector y = project_y(y0);
  for (int k = 1; k <= options.max_iter; ++k) {
    const Vector xh = project_x(x + eta * (A * y));
    const Vector yh = project_y(y - eta * (A.transpose() * x));
    const Vector xn = project_x(x + eta * (A * yh));
    const Vector yn = project_y(y - eta * (A.transpose() * xh));
    const double move = ((xn - x).norm() + (yn - y).norm()) / eta;
    x = xn;
    y = yn;
    res.iterations = k;
    if (k % options.check_every == 0 || k == options.max_iter) {
      res.gap = gap ? gap(x, y) : move;
      if (res.gap <= options.target_gap) {
        res.converged = true;
        break;
      }
    }
  }
  res.x = x;
  res.y = y;
  res.value = x.dot(A * y);
  return res;
}

Vector project_simplex(const Vector& v) {
  const Eigen::Index n = v.size();
  std::vector<double> u(v.data(), v.data() + n);
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double theta = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    cumsum += u[i];
    const double t = (cumsum - 1.0) / static_cast<double>(i + 1);
    if (u[i] - t > 0.0) theta = t;
  }
  return (v.array() - theta).max(0.0).matrix();
}

}  // namespace rlconn
