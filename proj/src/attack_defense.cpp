#include "rlconn/attack_defense.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "rlconn/errors.hpp"
#include "rlconn/serialize.hpp"

namespace rlconn {

Vector flatten(const Matrix& table) {
  Vector v(table.size());
  for (Eigen::Index s = 0; s < table.rows(); ++s)
    for (Eigen::Index a = 0; a < table.cols(); ++a) v(s * table.cols() + a) = table(s, a);
  return v;
}

Matrix unflatten(const Vector& v, int n_states, int n_actions) {
  if (v.size() != static_cast<Eigen::Index>(n_states) * n_actions)
    throw ShapeMismatch("flattened table has the wrong length");
  Matrix t(n_states, n_actions);
  for (int s = 0; s < n_states; ++s)
    for (int a = 0; a < n_actions; ++a) t(s, a) = v(s * n_actions + a);
  return t;
}

void AttackSpec::validate(int n_states, int n_actions) const {
  if (static_cast<int>(target.size()) != n_states) throw InvalidInput("target needs one action per state");
  for (int a : target)
    if (a < 0 || a >= n_actions) throw InvalidInput("target action out of range");
  if (!(margin >= 0.0) || !std::isfinite(margin)) throw InvalidInput("margin must be finite and nonnegative");
  if (!(reward_bound > 0.0)) throw InvalidInput("reward bound must be positive");
}

Policy AttackSpec::target_policy(int n_actions) const { return Policy::deterministic(target, n_actions); }

AttackGeometry attack_geometry(const Mdp& mdp, const AttackSpec& spec, std::size_t cap) {
  spec.validate(mdp.n_states(), mdp.n_actions());
  const auto selections = enumerate_action_selections(mdp.n_states(), mdp.n_actions(), cap);
  AttackGeometry geo;
  const Vector target = flatten(occupancy(mdp, spec.target_policy(mdp.n_actions())).table);
  std::vector<Vector> cols;
  for (const auto& sel : selections) {
    const Vector occ = flatten(occupancy(mdp, Policy::deterministic(sel, mdp.n_actions())).table);
    geo.occupancies.push_back(occ);
    if (sel == spec.target) continue;
    geo.competitors.push_back(sel);
    cols.push_back(target - occ);
  }
  geo.gradients.resize(target.size(), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < cols.size(); ++i) geo.gradients.col(static_cast<Eigen::Index>(i)) = cols[i];
  return geo;
}

namespace {

KktResiduals kkt_residuals(const Matrix& G, const Vector& r, const Vector& r_dag, const Vector& lambda,
                           double margin) {
  KktResiduals k;
  if (G.cols() == 0) {
    k.stationarity = (r_dag - r).cwiseAbs().maxCoeff();
    return k;
  }
  const Vector slack = G.transpose() * r_dag - Vector::Constant(G.cols(), margin);
  k.stationarity = ((r_dag - r) - G * lambda).cwiseAbs().maxCoeff();
  k.primal = std::max(0.0, -slack.minCoeff());
  k.dual = std::max(0.0, -lambda.minCoeff());
  k.complementarity = lambda.cwiseProduct(slack).cwiseAbs().maxCoeff();
  return k;
}

double kkt_max(const KktResiduals& k) {
  return std::max({k.stationarity, k.primal, k.dual, k.complementarity});
}

/// Least-distance program min ||x|| s.t. E^T x >= f through one NNLS solve;
/// returns multipliers lambda >= 0 with x = E lambda.
Vector least_distance_multipliers(const Matrix& E, const Vector& f) {
  const Eigen::Index n = E.rows(), k = E.cols();
  Matrix stacked(n + 1, k);
  stacked.topRows(n) = E;
  stacked.row(n) = f.transpose();
  Vector e = Vector::Zero(n + 1);
  e(n) = 1.0;
  const NnlsResult sol = nnls(stacked, e);
  const double denom = 1.0 - f.dot(sol.x);
  if (denom <= 1e-12) throw Infeasible("margin constraints admit no reward");
  return sol.x / denom;
}

}  // namespace

AttackResult attack(const Mdp& mdp, const RewardTable& reward, const AttackSpec& spec, std::size_t cap) {
  if (reward.rows() != mdp.n_states() || reward.cols() != mdp.n_actions())
    throw ShapeMismatch("reward table does not match the MDP");
  const AttackGeometry geo = attack_geometry(mdp, spec, cap);
  const Matrix& G = geo.gradients;
  const Vector r = flatten(reward);
  const Eigen::Index k = G.cols();
  AttackResult res;
  res.multipliers = Vector::Zero(k);
  Vector r_dag = r;
  const Vector eps = Vector::Constant(k, spec.margin);

  if (k > 0 && (G.transpose() * r - eps).minCoeff() < 0.0) {
    Vector lambda = least_distance_multipliers(G, eps - G.transpose() * r);
    Vector cand = r + G * lambda;
    // Polish on the support: re-solve the active equalities exactly.
    std::vector<Eigen::Index> support;
    for (Eigen::Index i = 0; i < k; ++i)
      if (lambda(i) > 0.0) support.push_back(i);
    if (!support.empty()) {
      Matrix Gs(G.rows(), static_cast<Eigen::Index>(support.size()));
      Vector fs(Gs.cols());
      for (std::size_t j = 0; j < support.size(); ++j) {
        Gs.col(static_cast<Eigen::Index>(j)) = G.col(support[j]);
        fs(static_cast<Eigen::Index>(j)) = spec.margin - G.col(support[j]).dot(r);
      }
      const Vector ls = pinv(Gs.transpose() * Gs, 1e-12) * fs;
      if (ls.minCoeff() >= 0.0) {
        Vector polished = Vector::Zero(k);
        for (std::size_t j = 0; j < support.size(); ++j) polished(support[j]) = ls(static_cast<Eigen::Index>(j));
        const Vector cand2 = r + G * polished;
        if (kkt_max(kkt_residuals(G, r, cand2, polished, spec.margin)) <
            kkt_max(kkt_residuals(G, r, cand, lambda, spec.margin))) {
          lambda = polished;
          cand = cand2;
        }
      }
    }
    res.multipliers = lambda;
    r_dag = cand;
  }
  res.reward = unflatten(r_dag, mdp.n_states(), mdp.n_actions());
  res.kkt = kkt_residuals(G, r, r_dag, res.multipliers, spec.margin);
  res.min_margin = k > 0 ? (G.transpose() * r_dag).minCoeff() : std::numeric_limits<double>::infinity();
  for (Eigen::Index i = 0; i < k; ++i)
    if (G.col(i).dot(r_dag) - spec.margin <= kActivityTol) res.active.push_back(static_cast<std::size_t>(i));
  return res;
}

AttackResult attack(const Mdp& mdp, const AttackSpec& spec, std::size_t cap) {
  return attack(mdp, mdp.reward(), spec, cap);
}

RewardRegion region_from_anchor(const Mdp& mdp, const AttackSpec& spec, const RewardTable& anchor,
                                std::size_t cap) {
  const AttackResult again = attack(mdp, anchor, spec, cap);
  const double moved = (again.reward - anchor).cwiseAbs().maxCoeff();
  if (moved > 1e-8) throw AnchorInvalid("attacking the anchor moves it by " + format_double(moved));
  const AttackGeometry geo = attack_geometry(mdp, spec, cap);
  RewardRegion region;
  region.anchor = anchor;
  region.reward_bound = spec.reward_bound;
  region.n_states = mdp.n_states();
  region.n_actions = mdp.n_actions();
  const Vector a = flatten(anchor);
  std::vector<Eigen::Index> active;
  for (Eigen::Index i = 0; i < geo.gradients.cols(); ++i)
    if (geo.gradients.col(i).dot(a) - spec.margin <= kActivityTol) active.push_back(i);
  region.generators.resize(a.size(), static_cast<Eigen::Index>(active.size()));
  for (std::size_t j = 0; j < active.size(); ++j) {
    region.generators.col(static_cast<Eigen::Index>(j)) = geo.gradients.col(active[j]);
    region.active_competitors.push_back(geo.competitors[static_cast<std::size_t>(active[j])]);
  }
  return region;
}

bool region_membership(const RewardRegion& region, const RewardTable& reward, double tol) {
  if (reward.rows() != region.anchor.rows() || reward.cols() != region.anchor.cols())
    throw ShapeMismatch("reward table does not match the region");
  if (reward.minCoeff() < -1e-12 || reward.maxCoeff() > region.reward_bound + 1e-12) return false;
  const Vector d = flatten(region.anchor - reward);
  if (region.generators.cols() == 0) return d.norm() <= tol;
  return nnls(region.generators, d).residual_norm <= tol;
}

namespace {

LpResult solve_or_fail(const LpProblem& p, const char* what) {
  try {
    return lp_solve(p);
  } catch (const Infeasible& e) {
    throw LpFailure(std::string(what) + ": " + e.what());
  } catch (const Unbounded& e) {
    throw LpFailure(std::string(what) + ": " + e.what());
  } catch (const Cycling& e) {
    throw LpFailure(std::string(what) + ": " + e.what());
  }
}

/// Rows G lambda <= anchor and -G lambda <= U - anchor keep anchor - G lambda in the box.
void box_rows(const RewardRegion& region, Matrix& A, Vector& b, Eigen::Index col_offset, Eigen::Index cols) {
  const Vector a = flatten(region.anchor);
  const Eigen::Index n = a.size(), k = region.generators.cols();
  A = Matrix::Zero(2 * n, cols);
  b.resize(2 * n);
  A.block(0, col_offset, n, k) = region.generators;
  A.block(n, col_offset, n, k) = -region.generators;
  b.head(n) = a;
  b.tail(n) = Vector::Constant(n, region.reward_bound) - a;
}

/// Occupancy polytope as equalities: flow balance (one redundant row
/// dropped) and total mass one.
void occupancy_equalities(const Mdp& mdp, Matrix& A, Vector& b) {
  const int S = mdp.n_states(), nA = mdp.n_actions();
  A = Matrix::Zero(S, S * nA);
  b = Vector::Zero(S);
  for (int t = 0; t + 1 < S; ++t)
    for (int s = 0; s < S; ++s)
      for (int a = 0; a < nA; ++a) A(t, s * nA + a) = (s == t ? 1.0 : 0.0) - mdp.prob(s, a, t);
  A.row(S - 1).setOnes();
  b(S - 1) = 1.0;
}

void require_nonempty(const RewardRegion& region) {
  if (region.generators.cols() == 0) {
    if (!region_membership(region, region.anchor)) throw LpFailure("region is empty: anchor outside the box");
    return;
  }
  LpProblem p;
  p.c = Vector::Zero(region.generators.cols());
  box_rows(region, p.A_ub, p.b_ub, 0, p.c.size());
  solve_or_fail(p, "region is empty");
}

}  // namespace

InnerMin region_min(const RewardRegion& region, const OccupancyMeasure& occ) {
  const Vector mu = flatten(occ.table);
  const Vector a = flatten(region.anchor);
  if (mu.size() != a.size()) throw ShapeMismatch("occupancy does not match the region");
  const Eigen::Index k = region.generators.cols();
  if (k == 0) {
    require_nonempty(region);
    return {mu.dot(a), region.anchor};
  }
  // min mu^T (a - G lambda)  <=>  min -(G^T mu)^T lambda
  LpProblem p;
  p.c = -(region.generators.transpose() * mu);
  box_rows(region, p.A_ub, p.b_ub, 0, k);
  const LpResult sol = solve_or_fail(p, "inner minimization");
  const Vector r = a - region.generators * sol.x;
  return {mu.dot(r), unflatten(r, region.n_states, region.n_actions)};
}

MaxminResult maxmin_value(const Mdp& mdp, const RewardRegion& region, const MaxminOptions& options) {
  require_nonempty(region);
  const Vector a = flatten(region.anchor);
  const Eigen::Index n = a.size(), k = region.generators.cols();
  const Matrix& G = region.generators;
  const double U = region.reward_bound;

  // The inner LP over lambda replaced by its dual (y, z >= 0):
  //   max  mu^T a - a^T y - (U - a)^T z
  //   s.t. G^T (mu - y + z) <= 0,  mu in the occupancy polytope.
  LpProblem p;
  p.c = Vector::Zero(3 * n);
  p.c.segment(0, n) = -a;
  p.c.segment(n, n) = a;
  p.c.segment(2 * n, n) = Vector::Constant(n, U) - a;
  p.A_ub = Matrix::Zero(k, 3 * n);
  p.A_ub.block(0, 0, k, n) = G.transpose();
  p.A_ub.block(0, n, k, n) = -G.transpose();
  p.A_ub.block(0, 2 * n, k, n) = G.transpose();
  p.b_ub = Vector::Zero(k);
  Matrix Aeq;
  Vector beq;
  occupancy_equalities(mdp, Aeq, beq);
  p.A_eq = Matrix::Zero(Aeq.rows(), 3 * n);
  p.A_eq.leftCols(n) = Aeq;
  p.b_eq = beq;
  const LpResult sol = solve_or_fail(p, "max-min program");

  MaxminResult res;
  Vector mu = sol.x.head(n).cwiseMax(0.0);
  mu /= mu.sum();
  res.occupancy = OccupancyMeasure{unflatten(mu, mdp.n_states(), mdp.n_actions())};
  res.policy = policy_from_occupancy(res.occupancy);
  const InnerMin inner = region_min(region, res.occupancy);
  res.value = -sol.optimum;
  res.witness = inner.witness;
  res.iterative_value = std::numeric_limits<double>::quiet_NaN();
  res.iterative_gap = std::numeric_limits<double>::quiet_NaN();
  if (!options.cross_check) return res;

  // Extragradient on max_{mu in M} min_{r in C} mu^T r with exact
  // best-response gaps.
  const Matrix Aeq_pinv = pinv(Aeq);
  const Projection onto_affine = [&](const Vector& v) -> Vector { return v - Aeq_pinv * (Aeq * v - beq); };
  const Projection onto_orthant = [](const Vector& v) -> Vector { return v.cwiseMax(0.0); };
  const Projection project_mu = [&](const Vector& v) -> Vector {
    return dykstra(v, {onto_affine, onto_orthant}, 1e-14, 20000).x;
  };
  const Projection onto_cone = [&](const Vector& v) -> Vector {
    if (k == 0) return a;
    return a - G * nnls(G, a - v).x;
  };
  const Projection onto_box = [U](const Vector& v) -> Vector { return v.cwiseMax(0.0).cwiseMin(U); };
  const Projection project_r = [&](const Vector& v) -> Vector {
    return dykstra(v, {onto_cone, onto_box}, 1e-14, 20000).x;
  };
  std::vector<Vector> vertices;
  for (const auto& sel : enumerate_action_selections(mdp.n_states(), mdp.n_actions()))
    vertices.push_back(flatten(occupancy(mdp, Policy::deterministic(sel, mdp.n_actions())).table));
  const GapOracle gap = [&](const Vector& m, const Vector& r) {
    double best = -std::numeric_limits<double>::infinity();
    for (const auto& v : vertices) best = std::max(best, v.dot(r));
    const Vector mc = m.cwiseMax(0.0);
    return best - region_min(region, OccupancyMeasure{unflatten(mc / mc.sum(), mdp.n_states(), mdp.n_actions())}).value;
  };
  ExtragradientOptions eg;
  eg.max_iter = options.max_iter;
  eg.target_gap = 0.1 * options.tolerance;
  eg.check_every = 25;
  const Vector mu0 = flatten(occupancy(mdp, Policy::uniform(mdp.n_states(), mdp.n_actions())).table);
  const SaddleResult saddle =
      extragradient_saddle(Matrix::Identity(n, n), project_mu, project_r, mu0, a, eg, gap);
  res.iterative_value = saddle.value;
  res.iterative_gap = saddle.gap;
  res.iterations = saddle.iterations;
  if (!saddle.converged || std::abs(saddle.value - res.value) > options.tolerance)
    throw CrossCheckMismatch("linear program gives " + format_double(res.value) + ", extragradient " +
                             format_double(saddle.value) + " with gap " + format_double(saddle.gap));
  return res;
}

MinmaxResult minmax_value(const Mdp& mdp, const RewardRegion& region, std::size_t cap) {
  require_nonempty(region);
  const auto selections = enumerate_action_selections(mdp.n_states(), mdp.n_actions(), cap);
  const Vector a = flatten(region.anchor);
  const Eigen::Index k = region.generators.cols();
  std::vector<Vector> occs;
  for (const auto& sel : selections)
    occs.push_back(flatten(occupancy(mdp, Policy::deterministic(sel, mdp.n_actions())).table));

  // variables (t, lambda): min t  s.t.  occ_i^T (a - G lambda) <= t, box rows
  LpProblem p;
  p.c = Vector::Zero(1 + k);
  p.c(0) = 1.0;
  Matrix box;
  Vector box_b;
  box_rows(region, box, box_b, 1, 1 + k);
  const auto m = static_cast<Eigen::Index>(occs.size());
  p.A_ub = Matrix::Zero(m + box.rows(), 1 + k);
  p.b_ub.resize(m + box.rows());
  for (Eigen::Index i = 0; i < m; ++i) {
    p.A_ub(i, 0) = -1.0;
    if (k > 0) p.A_ub.block(i, 1, 1, k) = -(occs[static_cast<std::size_t>(i)].transpose() * region.generators);
    p.b_ub(i) = -occs[static_cast<std::size_t>(i)].dot(a);
  }
  p.A_ub.bottomRows(box.rows()) = box;
  p.b_ub.tail(box.rows()) = box_b;
  p.lower = Vector::Zero(1 + k);
  p.lower(0) = -kInf;
  const LpResult sol = solve_or_fail(p, "min-max program");

  MinmaxResult res;
  const Vector r = k > 0 ? Vector(a - region.generators * sol.x.tail(k)) : a;
  res.witness = unflatten(r, region.n_states, region.n_actions);
  double best = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < occs.size(); ++i) {
    const double v = occs[i].dot(r);
    if (v > best) best = v, res.best_response = selections[i];
  }
  res.value = sol.optimum;
  return res;
}

MinimaxReport minimax_gap(const Mdp& mdp, const AttackSpec& spec, const MaxminOptions& options) {
  MinimaxReport rep;
  rep.attack = attack(mdp, spec);
  rep.region = region_from_anchor(mdp, spec, rep.attack.reward);
  rep.maxmin = maxmin_value(mdp, rep.region, options);
  rep.minmax = minmax_value(mdp, rep.region);
  rep.gap = rep.minmax.value - rep.maxmin.value;
  return rep;
}

NnMinimaxReport nn_minimax_gap(const Mdp& mdp, const NetArchitecture& arch, const Matrix& X,
                               const AttackSpec& spec, std::uint64_t seed, double floor,
                               const MaxminOptions& options) {
  if (!check_assumptions(arch, X, mdp.n_actions()).passed())
    throw InvalidInput("network or feature assumptions fail");
  if (numerical_rank(X) != X.rows()) throw RankDeficient("feature table lacks rank |S|");
  NnMinimaxReport rep;
  rep.tabular = minimax_gap(mdp, spec, options);
  const Theta draw = random_theta(arch, seed);
  const std::vector<Layer> rest(draw.layers.begin() + 1, draw.layers.end());
  rep.theta = realize_policy(arch, X, rest, smooth_policy(rep.tabular.maxmin.policy, floor));
  const Policy pi = forward(arch, rep.theta, X).policy;
  rep.nn_maxmin = region_min(rep.tabular.region, occupancy(mdp, pi)).value;
  rep.floor_loss = rep.tabular.maxmin.value - rep.nn_maxmin;
  rep.nn_gap = rep.tabular.minmax.value - rep.nn_maxmin;
  Theta zero = draw;
  for (auto& l : zero.layers) {
    l.W.setZero();
    l.b.setZero();
  }
  rep.baseline = region_min(rep.tabular.region, occupancy(mdp, forward(arch, zero, X).policy)).value;
  return rep;
}

Json to_json(const AttackResult& result) {
  Json j;
  j["r_dagger"] = matrix_to_json(result.reward);
  j["active_set"] = result.active;
  j["multipliers"] = vector_to_json(result.multipliers);
  j["min_margin"] = result.min_margin;
  j["kkt_residuals"] = {{"stationarity", result.kkt.stationarity},
                        {"primal", result.kkt.primal},
                        {"dual", result.kkt.dual},
                        {"complementarity", result.kkt.complementarity}};
  return j;
}

Json to_json(const MinimaxReport& report) {
  Json j;
  j["attack"] = to_json(report.attack);
  Json gens = Json::array();
  for (Eigen::Index i = 0; i < report.region.generators.cols(); ++i)
    gens.push_back(matrix_to_json(unflatten(report.region.generators.col(i), report.region.n_states,
                                            report.region.n_actions)));
  j["region"] = {{"generators", gens}, {"active_competitors", report.region.active_competitors},
                 {"reward_bound", report.region.reward_bound}};
  j["maxmin"] = report.maxmin.value;
  j["minmax"] = report.minmax.value;
  j["gap"] = report.gap;
  j["equilibrium_policy"] = to_json(report.maxmin.policy);
  j["witness"] = matrix_to_json(report.maxmin.witness);
  j["cross_check"] = {{"extragradient_value", report.maxmin.iterative_value},
                      {"duality_gap", report.maxmin.iterative_gap},
                      {"iterations", report.maxmin.iterations}};
  return j;
}

}  // namespace rlconn
